#include "chainstation/lie.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>

namespace chainstation {

namespace {
constexpr double kSmallAngle = 1e-7;  // Taylor-branch threshold, radians
constexpr double kNearPi = 1e-5;      // axis-extraction fallback window
}  // namespace

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Rotation Rotation::orthonormalized() const {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      mat_, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    flip(2, 2) = -1.0;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return Rotation(r);
}

double Rotation::orthonormalityError() const {
  return (mat_ * mat_.transpose() - Eigen::Matrix3d::Identity())
      .cwiseAbs()
      .maxCoeff();
}

Pose Pose::retract(const Eigen::Matrix<double, 6, 1>& delta) const {
  const Eigen::Vector3d omega = delta.head<3>();
  const Eigen::Vector3d v = delta.tail<3>();
  return Pose(rotation * expMap(omega), translation + rotation * v);
}

Rotation expMap(const Eigen::Vector3d& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Eigen::Matrix3d k = skew(omega);
  double a;  // sin(theta)/theta
  double b;  // (1-cos(theta))/theta^2
  if (theta < kSmallAngle) {
    a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0;
    b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Rotation(Eigen::Matrix3d::Identity() + a * k + b * k * k);
}

Eigen::Vector3d logMap(const Rotation& r, LogBranch* branchOut) {
  const Eigen::Matrix3d& m = r.matrix();
  const Eigen::Vector3d vee(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0),
                            m(1, 0) - m(0, 1));
  // sin and cos straight from the matrix; atan2 keeps the angle
  // well-conditioned over the whole range, unlike acos of the trace.
  const double s = 0.5 * vee.norm();
  const double c = std::min(1.0, std::max(-1.0, (m.trace() - 1.0) * 0.5));
  const double theta = std::atan2(s, c);

  if (theta < kSmallAngle) {
    if (branchOut) *branchOut = LogBranch::SmallAngle;
    // log(R) ~ vee/2 * (1 + theta^2/6) for small angles
    return 0.5 * vee * (1.0 + theta * theta / 6.0);
  }
  if (theta > M_PI - kNearPi) {
    if (branchOut) *branchOut = LogBranch::NearPi;
    // The skew part degenerates; recover the axis from the symmetric part
    // via aa^T = ((R + R^T)/2 - cos I) / (1 - cos), well conditioned here.
    const Eigen::Matrix3d outer =
        (0.5 * (m + m.transpose()) - c * Eigen::Matrix3d::Identity()) /
        (1.0 - c);
    int i = 0;
    outer.diagonal().maxCoeff(&i);
    Eigen::Vector3d axis = outer.col(i);
    const double norm = axis.norm();
    if (norm < 1e-300) {
      axis = Eigen::Vector3d::UnitX();
    } else {
      axis /= norm;
    }
    // Resolve the sign from the skew part when it is not fully degenerate.
    if (vee.norm() > 1e-14 && axis.dot(vee) < 0.0) axis = -axis;
    return theta * axis;
  }
  if (branchOut) *branchOut = LogBranch::Generic;
  return (theta / (2.0 * s)) * vee;
}

Eigen::Vector3d logMap(const Rotation& r) { return logMap(r, nullptr); }

Eigen::Vector3d boxminus(const Rotation& r1, const Rotation& r2) {
  return logMap(Rotation(r1.transposed() * r2.matrix()));
}

Rotation axisRotation(Axis axis, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  switch (axis) {
    case Axis::X:
      m(1, 1) = c;
      m(1, 2) = -s;
      m(2, 1) = s;
      m(2, 2) = c;
      break;
    case Axis::Y:
      m(0, 0) = c;
      m(0, 2) = s;
      m(2, 0) = -s;
      m(2, 2) = c;
      break;
    case Axis::Z:
      m(0, 0) = c;
      m(0, 1) = -s;
      m(1, 0) = s;
      m(1, 1) = c;
      break;
  }
  return Rotation(m);
}

Eigen::Vector3d rpyFromRotation(const Rotation& r) {
  const Eigen::Matrix3d& m = r.matrix();
  const double pitch = std::asin(std::min(1.0, std::max(-1.0, -m(2, 0))));
  double roll;
  double yaw;
  if (std::abs(m(2, 0)) < 1.0 - 1e-12) {
    roll = std::atan2(m(2, 1), m(2, 2));
    yaw = std::atan2(m(1, 0), m(0, 0));
  } else {
    // Gimbal lock: pitch = +-pi/2, split is arbitrary; put it all in roll.
    roll = std::atan2(-m(1, 2), m(1, 1));
    yaw = 0.0;
  }
  return Eigen::Vector3d(roll, pitch, yaw);
}

Rotation rotationFromRpy(const Eigen::Vector3d& rpy) {
  return axisRotation(Axis::Z, rpy.z()) * axisRotation(Axis::Y, rpy.y()) *
         axisRotation(Axis::X, rpy.x());
}

Pose kabschAlign(std::span<const Eigen::Vector3d> source,
                 std::span<const Eigen::Vector3d> target) {
  if (source.size() != target.size()) {
    throw ArgumentError("kabschAlign: point set sizes differ (" +
                        std::to_string(source.size()) + " vs " +
                        std::to_string(target.size()) + ")");
  }
  if (source.size() < 3) {
    throw DegenerateGeometryError(
        "kabschAlign: need at least 3 point pairs, got " +
        std::to_string(source.size()));
  }
  const double n = static_cast<double>(source.size());
  Eigen::Vector3d srcMean = Eigen::Vector3d::Zero();
  Eigen::Vector3d tgtMean = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < source.size(); ++i) {
    srcMean += source[i];
    tgtMean += target[i];
  }
  srcMean /= n;
  tgtMean /= n;

  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (size_t i = 0; i < source.size(); ++i) {
    h += (source[i] - srcMean) * (target[i] - tgtMean).transpose();
  }

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (sv(0) <= 0.0 || sv(1) <= 1e-9 * sv(0)) {
    throw DegenerateGeometryError(
        "kabschAlign: degenerate (collinear or coincident) configuration, "
        "singular values " +
        std::to_string(sv(0)) + ", " + std::to_string(sv(1)) + ", " +
        std::to_string(sv(2)));
  }
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) {
    d(2, 2) = -1.0;  // reflection fix via the smallest singular value
  }
  const Eigen::Matrix3d rot = svd.matrixV() * d * svd.matrixU().transpose();
  return Pose(Rotation(rot), tgtMean - rot * srcMean);
}

}  // namespace chainstation
