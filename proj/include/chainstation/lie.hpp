#pragma once

#include <Eigen/Core>
#include <span>
#include <stdexcept>
#include <string>

namespace chainstation {

/// Base class for all errors thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Thrown when a point configuration is too degenerate for alignment.
class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Which branch a logarithm-map evaluation took. Exposed for diagnostics.
enum class LogBranch { SmallAngle, Generic, NearPi };

/// A rotation stored as an orthonormal 3x3 matrix with det +1.
class Rotation {
 public:
  Rotation() : mat_(Eigen::Matrix3d::Identity()) {}
  explicit Rotation(const Eigen::Matrix3d& m) : mat_(m) {}

  static Rotation identity() { return Rotation(); }

  const Eigen::Matrix3d& matrix() const { return mat_; }

  Rotation operator*(const Rotation& other) const {
    return Rotation(mat_ * other.mat_);
  }
  Eigen::Vector3d operator*(const Eigen::Vector3d& v) const { return mat_ * v; }

  Rotation inverse() const { return Rotation(mat_.transpose()); }
  Eigen::Matrix3d transposed() const { return mat_.transpose(); }

  /// Project back onto SO(3) (polar projection via SVD). Use after long
  /// composition chains; single products stay orthonormal to ~1e-15.
  Rotation orthonormalized() const;

  /// Max deviation from orthonormality, ||R*R^T - I||_inf.
  double orthonormalityError() const;

  bool isApprox(const Rotation& other, double tol = 1e-12) const {
    return (mat_ - other.mat_).cwiseAbs().maxCoeff() <= tol;
  }

 private:
  Eigen::Matrix3d mat_;
};

/// Rigid transform T_{parent,child}: p_parent = R * p_child + t.
struct Pose {
  Rotation rotation;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Pose() = default;
  Pose(const Rotation& r, const Eigen::Vector3d& t) : rotation(r), translation(t) {}

  static Pose identity() { return Pose(); }

  Pose operator*(const Pose& other) const {
    return Pose(rotation * other.rotation,
                translation + rotation * other.translation);
  }

  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }

  Pose inverse() const {
    Rotation rinv = rotation.inverse();
    return Pose(rinv, -(rinv * translation));
  }

  /// Right-perturbation retraction with tangent [omega; v]:
  /// R <- R exp(omega), t <- t + R v.
  Pose retract(const Eigen::Matrix<double, 6, 1>& delta) const;

  bool isApprox(const Pose& other, double tol = 1e-12) const {
    return rotation.isApprox(other.rotation, tol) &&
           (translation - other.translation).cwiseAbs().maxCoeff() <= tol;
  }
};

enum class Axis { X = 0, Y = 1, Z = 2 };

Eigen::Matrix3d skew(const Eigen::Vector3d& v);

/// Rodrigues formula; exp(0) = I, ||omega|| is the rotation angle.
Rotation expMap(const Eigen::Vector3d& omega);

/// Inverse of expMap for rotation angle < pi; angle == pi falls back to
/// axis extraction from the symmetric part.
Eigen::Vector3d logMap(const Rotation& r);
Eigen::Vector3d logMap(const Rotation& r, LogBranch* branchOut);

/// R1 boxminus R2 = log(R1^T R2).
Eigen::Vector3d boxminus(const Rotation& r1, const Rotation& r2);

/// Elementary rotation about a coordinate axis.
Rotation axisRotation(Axis axis, double angle);

/// Roll/pitch/yaw (x-y-z intrinsic) angles of R = Rz(yaw) Ry(pitch) Rx(roll).
Eigen::Vector3d rpyFromRotation(const Rotation& r);
Rotation rotationFromRpy(const Eigen::Vector3d& rpy);

/// Rigid transform minimizing sum ||target_i - T(source_i)||^2 (unweighted
/// Kabsch with SVD reflection fix). Requires >= 3 non-collinear pairs.
Pose kabschAlign(std::span<const Eigen::Vector3d> source,
                 std::span<const Eigen::Vector3d> target);

}  // namespace chainstation
