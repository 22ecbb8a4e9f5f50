#include "chainstation/factors.hpp"

#include <cmath>
#include <string>

namespace chainstation {

Eigen::VectorXd DeflectionCoeffs::toSolverSpace() const {
  Eigen::VectorXd s(6);
  s << std::sqrt(std::max(roll(0), 0.0)), std::sqrt(std::max(roll(1), 0.0)),
      std::sqrt(std::max(roll(2), 0.0)), std::sqrt(std::max(pitch(0), 0.0)),
      std::sqrt(std::max(pitch(1), 0.0)), std::sqrt(std::max(pitch(2), 0.0));
  return s;
}

DeflectionCoeffs DeflectionCoeffs::fromSolverSpace(const Eigen::VectorXd& s) {
  if (s.size() != 6) {
    throw ArgumentError("DeflectionCoeffs: solver-space vector must have 6 "
                        "components, got " +
                        std::to_string(s.size()));
  }
  DeflectionCoeffs c;
  c.roll = s.head<3>().cwiseProduct(s.head<3>());
  c.pitch = s.tail<3>().cwiseProduct(s.tail<3>());
  return c;
}

double deflectionDisplacement(double tau, double overlap,
                              const Eigen::Vector3d& alpha,
                              DeflectionConvention convention) {
  if (overlap <= 0.0) {
    throw ArgumentError("deflectionDisplacement: overlap must be > 0, got " +
                        std::to_string(overlap));
  }
  const double backlash = alpha(1) / (2.0 * overlap) * std::atan(alpha(2) * tau);
  if (convention == DeflectionConvention::Literal) {
    if (tau == 0.0) {
      throw SingularityError(
          "deflectionDisplacement: literal convention a0/(l*tau) is singular "
          "at tau = 0");
    }
    return backlash + alpha(0) / (overlap * tau);
  }
  return backlash + alpha(0) / overlap * tau;
}

Rotation deflectionModelRotation(const TorqueEstimate& tau, double overlap,
                                 const DeflectionCoeffs& alpha,
                                 DeflectionConvention convention) {
  const double dRoll =
      deflectionDisplacement(tau.tauX, overlap, alpha.roll, convention);
  const double dPitch =
      deflectionDisplacement(tau.tauY, overlap, alpha.pitch, convention);
  return axisRotation(Axis::X, dRoll) * axisRotation(Axis::Y, dPitch);
}

Eigen::Vector3d deflectionResidual(const Pose& tJoint,
                                   const DeflectionCoeffs& alpha,
                                   const TorqueEstimate& tau, double overlap,
                                   DeflectionConvention convention) {
  return boxminus(tJoint.rotation,
                  deflectionModelRotation(tau, overlap, alpha, convention));
}

Eigen::Vector2d deflectionPriorResidualAxis(const Eigen::Vector3d& alphaLower,
                                            const Eigen::Vector3d& alphaUpper,
                                            const Eigen::Vector3d& betaLower,
                                            const Eigen::Vector3d& betaUpper) {
  return Eigen::Vector2d(
      alphaLower(0) * betaUpper(0) - alphaUpper(0) * betaLower(0),
      (alphaLower(1) - betaLower(1)) - (alphaUpper(1) - betaUpper(1)));
}

Eigen::Vector3d predictAccelerometer(const Eigen::Vector3d& gBase,
                                     const Eigen::Vector3d& bias,
                                     std::span<const Pose> chainToSensor) {
  const Pose sensor = chainTransform(chainToSensor, Pose::identity());
  return sensor.rotation.transposed() * gBase + bias;
}

Eigen::Vector3d accelerometerResidual(const Eigen::Vector3d& gBase,
                                      const Eigen::Vector3d& bias,
                                      std::span<const Pose> chainToSensor,
                                      const Eigen::Vector3d& measurement) {
  return measurement - predictAccelerometer(gBase, bias, chainToSensor);
}

Eigen::Vector3d gravAlignResidual(const Pose& worldTBase,
                                  const Eigen::Vector3d& gBase) {
  return kGravityWorld - worldTBase.rotation * gBase;
}

Eigen::VectorXd posePriorResidual(const Pose& t, const PosePriorSpec& spec) {
  const Pose rel = spec.reference.inverse() * t;
  Eigen::VectorXd dofValues(6);
  dofValues.head<3>() = rpyFromRotation(rel.rotation);
  dofValues.tail<3>() = rel.translation;

  Eigen::VectorXd r = Eigen::VectorXd::Zero(6);
  for (int i = 0; i < 6; ++i) {
    const DofSpec& d = spec.dofs[static_cast<std::size_t>(i)];
    switch (d.mode) {
      case DofSpec::Mode::Free:
        break;
      case DofSpec::Mode::Fixed:
        r(i) = dofValues(i);
        break;
      case DofSpec::Mode::Bounded: {
        const double over = std::abs(dofValues(i)) - d.halfWidth;
        if (over > 0.0) {
          r(i) = (dofValues(i) > 0.0 ? over : -over);
        }
        break;
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

VectorPriorFactor::VectorPriorFactor(Key key, const Eigen::VectorXd& mu,
                                     NoiseModel noise, std::string group)
    : Factor({key}, std::move(noise), std::move(group)), mu_(mu) {
  if (dim() != mu_.size()) {
    throw ArgumentError("VectorPriorFactor: noise dim does not match mu");
  }
}

Eigen::VectorXd VectorPriorFactor::evaluate(const Values& v) const {
  return v.atVector(keys()[0]) - mu_;
}

std::optional<Eigen::MatrixXd> VectorPriorFactor::analyticJacobian(
    std::size_t, const Values&) const {
  return Eigen::MatrixXd::Identity(dim(), dim());
}

VectorBandPriorFactor::VectorBandPriorFactor(Key key,
                                             const Eigen::VectorXd& center,
                                             const Eigen::VectorXd& halfWidths,
                                             NoiseModel noise, std::string group)
    : Factor({key}, std::move(noise), std::move(group)),
      center_(center),
      halfWidths_(halfWidths) {
  if (center_.size() != halfWidths_.size() || dim() != center_.size()) {
    throw ArgumentError("VectorBandPriorFactor: dimension mismatch");
  }
  if ((halfWidths_.array() < 0.0).any()) {
    throw ArgumentError("VectorBandPriorFactor: half-widths must be >= 0");
  }
}

Eigen::VectorXd VectorBandPriorFactor::evaluate(const Values& v) const {
  const Eigen::VectorXd x = v.atVector(keys()[0]);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(x.size());
  for (int i = 0; i < x.size(); ++i) {
    const double dev = x(i) - center_(i);
    const double over = std::abs(dev) - halfWidths_(i);
    if (over > 0.0) r(i) = (dev > 0.0 ? over : -over);
  }
  return r;
}

namespace {

NoiseModel posePriorNoise(const PosePriorSpec& spec) {
  Eigen::VectorXd sigmas(6);
  for (int i = 0; i < 6; ++i) {
    const DofSpec& d = spec.dofs[static_cast<std::size_t>(i)];
    if (d.mode != DofSpec::Mode::Free && d.sigma <= 0.0) {
      throw ConfigError("PosePriorFactor: sigma must be > 0 for non-free DOF " +
                        std::to_string(i));
    }
    if (d.mode == DofSpec::Mode::Bounded && d.halfWidth < 0.0) {
      throw ConfigError("PosePriorFactor: negative half-width on DOF " +
                        std::to_string(i));
    }
    sigmas(i) = d.mode == DofSpec::Mode::Free ? 1.0 : d.sigma;
  }
  return NoiseModel::sigmas(sigmas);
}

}  // namespace

PosePriorFactor::PosePriorFactor(Key key, PosePriorSpec spec, std::string group)
    : Factor({key}, posePriorNoise(spec), std::move(group)), spec_(std::move(spec)) {}

Eigen::VectorXd PosePriorFactor::evaluate(const Values& v) const {
  return posePriorResidual(v.atPose(keys()[0]), spec_);
}

DeflectionFactor::DeflectionFactor(Key poseKey, Key coeffKey, TorqueEstimate tau,
                                   double overlap,
                                   DeflectionConvention convention,
                                   NoiseModel noise)
    : Factor({poseKey, coeffKey}, std::move(noise), "deflection"),
      tau_(tau),
      overlap_(overlap),
      convention_(convention) {}

Eigen::VectorXd DeflectionFactor::evaluate(const Values& v) const {
  const Pose& joint = v.atPose(keys()[0]);
  const DeflectionCoeffs alpha =
      DeflectionCoeffs::fromSolverSpace(v.atVector(keys()[1]));
  return deflectionResidual(joint, alpha, tau_, overlap_, convention_);
}

DeflectionPriorFactor::DeflectionPriorFactor(Key coeffLowerKey, Key coeffUpperKey,
                                             const DeflectionCoeffs& betaLower,
                                             const DeflectionCoeffs& betaUpper,
                                             NoiseModel noise)
    : Factor({coeffLowerKey, coeffUpperKey}, std::move(noise), "deflection-prior"),
      betaLower_(betaLower),
      betaUpper_(betaUpper) {}

Eigen::VectorXd DeflectionPriorFactor::evaluate(const Values& v) const {
  const DeflectionCoeffs aL =
      DeflectionCoeffs::fromSolverSpace(v.atVector(keys()[0]));
  const DeflectionCoeffs aU =
      DeflectionCoeffs::fromSolverSpace(v.atVector(keys()[1]));
  Eigen::VectorXd r(4);
  r.head<2>() =
      deflectionPriorResidualAxis(aL.roll, aU.roll, betaLower_.roll, betaUpper_.roll);
  r.tail<2>() = deflectionPriorResidualAxis(aL.pitch, aU.pitch, betaLower_.pitch,
                                            betaUpper_.pitch);
  return r;
}

std::optional<Eigen::MatrixXd> DeflectionPriorFactor::analyticJacobian(
    std::size_t keyIdx, const Values& v) const {
  const Eigen::VectorXd s = v.atVector(keys()[keyIdx]);
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(4, 6);
  const bool lower = keyIdx == 0;
  // d(alpha_i)/d(s_i) = 2 s_i; residual rows per axis:
  //   row0 = aL0 bU0 - aU0 bL0, row1 = (aL1 - bL1) - (aU1 - bU1)
  const double bRoll0 = lower ? betaUpper_.roll(0) : betaLower_.roll(0);
  const double bPitch0 = lower ? betaUpper_.pitch(0) : betaLower_.pitch(0);
  const double sign = lower ? 1.0 : -1.0;
  j(0, 0) = sign * 2.0 * s(0) * bRoll0;
  j(1, 1) = sign * 2.0 * s(1);
  j(2, 3) = sign * 2.0 * s(3) * bPitch0;
  j(3, 4) = sign * 2.0 * s(4);
  return j;
}

PositionFactor::PositionFactor(Key worldKey, std::vector<Key> chainKeys,
                               std::vector<Key> armKeys, const RobotModel& model,
                               Eigen::VectorXd armAngles,
                               Eigen::Vector3d measurement, NoiseModel noise)
    : Factor(
          [&] {
            std::vector<Key> ks{worldKey};
            ks.insert(ks.end(), chainKeys.begin(), chainKeys.end());
            ks.insert(ks.end(), armKeys.begin(), armKeys.end());
            return ks;
          }(),
          std::move(noise), "position"),
      model_(&model),
      chainCount_(chainKeys.size()),
      armAngles_(std::move(armAngles)),
      measurement_(std::move(measurement)) {
  if (armKeys.size() != model.arm.size()) {
    throw ArgumentError("PositionFactor: arm key count mismatch");
  }
}

Eigen::Vector3d PositionFactor::predictedInBase(const Values& v) const {
  std::vector<Pose> chain;
  chain.reserve(chainCount_);
  for (std::size_t i = 0; i < chainCount_; ++i) {
    chain.push_back(v.atPose(keys()[1 + i]));
  }
  std::vector<Pose> armCalib;
  armCalib.reserve(model_->arm.size());
  for (std::size_t i = 0; i < model_->arm.size(); ++i) {
    armCalib.push_back(v.atPose(keys()[1 + chainCount_ + i]));
  }
  return chainTransform(chain,
                        armForwardKinematics(*model_, armAngles_, armCalib)) *
         model_->reflectorOffset;
}

Eigen::VectorXd PositionFactor::evaluate(const Values& v) const {
  const Pose& world = v.atPose(keys()[0]);
  return measurement_ - world * predictedInBase(v);
}

std::optional<Eigen::MatrixXd> PositionFactor::analyticJacobian(
    std::size_t keyIdx, const Values& v) const {
  if (keyIdx != 0) return std::nullopt;
  const Pose& world = v.atPose(keys()[0]);
  const Eigen::Matrix3d r = world.rotation.matrix();
  Eigen::MatrixXd j(3, 6);
  j.leftCols<3>() = r * skew(predictedInBase(v));
  j.rightCols<3>() = -r;
  return j;
}

AccelerometerFactor::AccelerometerFactor(Key gKey, Key biasKey,
                                         std::vector<Key> chainKeys, Pose mount,
                                         Eigen::Vector3d measurement,
                                         NoiseModel noise, std::string group)
    : Factor(
          [&] {
            std::vector<Key> ks{gKey, biasKey};
            ks.insert(ks.end(), chainKeys.begin(), chainKeys.end());
            return ks;
          }(),
          std::move(noise), std::move(group)),
      mount_(std::move(mount)),
      measurement_(std::move(measurement)) {}

Rotation AccelerometerFactor::chainRotation(const Values& v) const {
  Pose t;
  for (std::size_t i = 2; i < keys().size(); ++i) {
    t = t * v.atPose(keys()[i]);
  }
  return (t * mount_).rotation;
}

Eigen::VectorXd AccelerometerFactor::evaluate(const Values& v) const {
  std::vector<Pose> chain;
  chain.reserve(keys().size() - 1);
  for (std::size_t i = 2; i < keys().size(); ++i) {
    chain.push_back(v.atPose(keys()[i]));
  }
  chain.push_back(mount_);
  return accelerometerResidual(v.atVector3(keys()[0]), v.atVector3(keys()[1]),
                               chain, measurement_);
}

std::optional<Eigen::MatrixXd> AccelerometerFactor::analyticJacobian(
    std::size_t keyIdx, const Values& v) const {
  if (keyIdx == 0) return Eigen::MatrixXd(-chainRotation(v).transposed());
  if (keyIdx == 1) return Eigen::MatrixXd(-Eigen::Matrix3d::Identity());
  return std::nullopt;
}

GravAlignFactor::GravAlignFactor(Key worldKey, Key gKey, NoiseModel noise)
    : Factor({worldKey, gKey}, std::move(noise), "grav-align") {}

Eigen::VectorXd GravAlignFactor::evaluate(const Values& v) const {
  return gravAlignResidual(v.atPose(keys()[0]), v.atVector3(keys()[1]));
}

std::optional<Eigen::MatrixXd> GravAlignFactor::analyticJacobian(
    std::size_t keyIdx, const Values& v) const {
  const Eigen::Matrix3d r = v.atPose(keys()[0]).rotation.matrix();
  if (keyIdx == 0) {
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(3, 6);
    j.leftCols<3>() = r * skew(v.atVector3(keys()[1]));
    return j;
  }
  return Eigen::MatrixXd(-r);
}

}  // namespace chainstation
