#pragma once

#include <Eigen/Core>
#include <array>
#include <optional>
#include <span>
#include <vector>

#include "chainstation/graph.hpp"
#include "chainstation/lie.hpp"
#include "chainstation/robot.hpp"

namespace chainstation {

/// Specific-force vector of a resting, world-aligned accelerometer.
inline const Eigen::Vector3d kGravityWorld(0.0, 0.0, kGravity);

class SingularityError : public Error {
 public:
  using Error::Error;
};

/// How the compliance term of the joint displacement model is evaluated.
/// LinearCompliance uses (a0/l)*tau; Literal uses a0/(l*tau), which is
/// singular at tau = 0 and kept only for comparison.
enum class DeflectionConvention { LinearCompliance, Literal };

/// Deflection coefficients of one column joint, (a0, a1, a2) per axis:
/// a0 spring compliance, a1 backlash magnitude, a2 backlash steepness.
struct DeflectionCoeffs {
  Eigen::Vector3d roll = Eigen::Vector3d::Zero();
  Eigen::Vector3d pitch = Eigen::Vector3d::Zero();

  /// Solver-space vector s with alpha = s^2 elementwise, layout
  /// [roll0, roll1, roll2, pitch0, pitch1, pitch2].
  Eigen::VectorXd toSolverSpace() const;
  static DeflectionCoeffs fromSolverSpace(const Eigen::VectorXd& s);
};

/// Angular displacement of one joint axis:
/// d = (a1 / 2l) atan(a2 tau) + compliance term per the convention.
double deflectionDisplacement(double tau, double overlap,
                              const Eigen::Vector3d& alpha,
                              DeflectionConvention convention =
                                  DeflectionConvention::LinearCompliance);

/// Modeled joint rotation R_x(d(tau_x, l, a_roll)) R_y(d(tau_y, l, a_pitch)).
Rotation deflectionModelRotation(const TorqueEstimate& tau, double overlap,
                                 const DeflectionCoeffs& alpha,
                                 DeflectionConvention convention =
                                     DeflectionConvention::LinearCompliance);

/// rot(T_joint) boxminus modeled rotation.
Eigen::Vector3d deflectionResidual(const Pose& tJoint,
                                   const DeflectionCoeffs& alpha,
                                   const TorqueEstimate& tau, double overlap,
                                   DeflectionConvention convention =
                                       DeflectionConvention::LinearCompliance);

/// Per-axis drift constraint between the two column joints around the
/// calibration coefficients beta:
///   [ a_l0 b_u0 - a_u0 b_l0;  (a_l1 - b_l1) - (a_u1 - b_u1) ].
/// Its null space is a common multiplicative factor on a0 and a common
/// additive shift on a1.
Eigen::Vector2d deflectionPriorResidualAxis(const Eigen::Vector3d& alphaLower,
                                            const Eigen::Vector3d& alphaUpper,
                                            const Eigen::Vector3d& betaLower,
                                            const Eigen::Vector3d& betaUpper);

/// Predicted sensor reading R_chain^T g_base + bias, with R_chain the
/// base-to-sensor rotation (maps g_base into the sensor frame).
Eigen::Vector3d predictAccelerometer(const Eigen::Vector3d& gBase,
                                     const Eigen::Vector3d& bias,
                                     std::span<const Pose> chainToSensor);

/// Measured minus predicted sensor reading.
Eigen::Vector3d accelerometerResidual(const Eigen::Vector3d& gBase,
                                      const Eigen::Vector3d& bias,
                                      std::span<const Pose> chainToSensor,
                                      const Eigen::Vector3d& measurement);

/// g_world - rot(T_world,base) g_base.
Eigen::Vector3d gravAlignResidual(const Pose& worldTBase,
                                  const Eigen::Vector3d& gBase);

/// Per-DOF prior mode for pose priors.
struct DofSpec {
  enum class Mode { Free, Fixed, Bounded };
  Mode mode = Mode::Free;
  double halfWidth = 0.0;  // Bounded only
  double sigma = 1.0;

  static DofSpec free() { return {}; }
  static DofSpec fixed(double sigma) { return {Mode::Fixed, 0.0, sigma}; }
  static DofSpec bounded(double halfWidth, double sigma) {
    return {Mode::Bounded, halfWidth, sigma};
  }
};

/// Prior region for a pose, relative to a reference pose. DOF order is
/// [roll, pitch, yaw, x, y, z] of reference^-1 * T.
struct PosePriorSpec {
  Pose reference;
  std::array<DofSpec, 6> dofs;
};

/// Fixed DOFs contribute (value - target), bounded DOFs a one-sided
/// overshoot outside the band, free DOFs nothing.
Eigen::VectorXd posePriorResidual(const Pose& t, const PosePriorSpec& spec);

// ---------------------------------------------------------------------------
// Factor implementations
// ---------------------------------------------------------------------------

/// r = x - mu on a vector variable.
class VectorPriorFactor : public Factor {
 public:
  VectorPriorFactor(Key key, const Eigen::VectorXd& mu, NoiseModel noise,
                    std::string group = "prior");
  Eigen::VectorXd evaluate(const Values& v) const override;
  std::optional<Eigen::MatrixXd> analyticJacobian(std::size_t keyIdx,
                                                  const Values& v) const override;

 private:
  Eigen::VectorXd mu_;
};

/// Zero inside the band |x - center| <= halfWidth, one-sided overshoot
/// outside. Used for the accelerometer bias bands.
class VectorBandPriorFactor : public Factor {
 public:
  VectorBandPriorFactor(Key key, const Eigen::VectorXd& center,
                        const Eigen::VectorXd& halfWidths, NoiseModel noise,
                        std::string group = "band-prior");
  Eigen::VectorXd evaluate(const Values& v) const override;

 private:
  Eigen::VectorXd center_;
  Eigen::VectorXd halfWidths_;
};

class PosePriorFactor : public Factor {
 public:
  PosePriorFactor(Key key, PosePriorSpec spec, std::string group);
  Eigen::VectorXd evaluate(const Values& v) const override;
  const PosePriorSpec& spec() const { return spec_; }

 private:
  PosePriorSpec spec_;
};

/// Hard constraint tying one column-joint pose rotation to the deflection
/// model evaluated at the record's torques and overlap. The coefficient key
/// holds the solver-space vector s with alpha = s^2.
class DeflectionFactor : public Factor {
 public:
  DeflectionFactor(Key poseKey, Key coeffKey, TorqueEstimate tau, double overlap,
                   DeflectionConvention convention, NoiseModel noise);
  Eigen::VectorXd evaluate(const Values& v) const override;

 private:
  TorqueEstimate tau_;
  double overlap_;
  DeflectionConvention convention_;
};

/// Hard drift constraint between lower and upper joint coefficients, both
/// axes stacked: [roll rows; pitch rows].
class DeflectionPriorFactor : public Factor {
 public:
  DeflectionPriorFactor(Key coeffLowerKey, Key coeffUpperKey,
                        const DeflectionCoeffs& betaLower,
                        const DeflectionCoeffs& betaUpper, NoiseModel noise);
  Eigen::VectorXd evaluate(const Values& v) const override;
  std::optional<Eigen::MatrixXd> analyticJacobian(std::size_t keyIdx,
                                                  const Values& v) const override;

 private:
  DeflectionCoeffs betaLower_;
  DeflectionCoeffs betaUpper_;
};

/// Total-station residual: measurement - predicted world reflector position
/// through the chain and the arm forward kinematics.
class PositionFactor : public Factor {
 public:
  PositionFactor(Key worldKey, std::vector<Key> chainKeys,
                 std::vector<Key> armKeys, const RobotModel& model,
                 Eigen::VectorXd armAngles, Eigen::Vector3d measurement,
                 NoiseModel noise);
  Eigen::VectorXd evaluate(const Values& v) const override;
  std::optional<Eigen::MatrixXd> analyticJacobian(std::size_t keyIdx,
                                                  const Values& v) const override;

 private:
  Eigen::Vector3d predictedInBase(const Values& v) const;
  const RobotModel* model_;
  std::size_t chainCount_;
  Eigen::VectorXd armAngles_;
  Eigen::Vector3d measurement_;
};

/// Accelerometer residual through the chain up to the sensor mount.
class AccelerometerFactor : public Factor {
 public:
  AccelerometerFactor(Key gKey, Key biasKey, std::vector<Key> chainKeys,
                      Pose mount, Eigen::Vector3d measurement, NoiseModel noise,
                      std::string group);
  Eigen::VectorXd evaluate(const Values& v) const override;
  std::optional<Eigen::MatrixXd> analyticJacobian(std::size_t keyIdx,
                                                  const Values& v) const override;

 private:
  Rotation chainRotation(const Values& v) const;
  Pose mount_;
  Eigen::Vector3d measurement_;
};

/// Ties g_base to the gravity-aligned world frame.
class GravAlignFactor : public Factor {
 public:
  GravAlignFactor(Key worldKey, Key gKey, NoiseModel noise);
  Eigen::VectorXd evaluate(const Values& v) const override;
  std::optional<Eigen::MatrixXd> analyticJacobian(std::size_t keyIdx,
                                                  const Values& v) const override;
};

}  // namespace chainstation
