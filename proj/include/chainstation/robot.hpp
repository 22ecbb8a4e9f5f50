#pragma once

#include <Eigen/Core>
#include <array>
#include <span>
#include <vector>

#include "chainstation/lie.hpp"

namespace chainstation {

inline constexpr double kGravity = 9.807;  // m/s^2

struct ArmJoint {
  Pose offset;  // fixed transform preceding the joint rotation
  Axis axis = Axis::Z;
};

struct MassPoint {
  double kg = 0.0;
  Eigen::Vector3d com = Eigen::Vector3d::Zero();  // in the owning frame
};

struct LumpedMasses {
  MassPoint seg1;                   // in seg1 frame
  MassPoint seg2;                   // in seg2 frame
  std::vector<MassPoint> armLinks;  // one per joint, in the post-joint frame
  MassPoint payload;                // in end-effector frame
};

/// Fixed geometry of the chain: tracked base, telescoping two-segment
/// column (both segments extend by the same amount), serial arm with a
/// reflector at the end effector, and two accelerometer mounts.
struct RobotModel {
  std::string name = "default";

  Pose nominalBaseCol;                 // T_base,col at zero load
  Eigen::Vector3d colSeg1Offset;       // T_col,seg1 translation at extension 0
  Eigen::Vector3d seg1Seg2Offset;      // T_seg1,seg2 translation at extension 0
  double extensionMax = 0.0;           // per-segment extension range [0, max]

  // Segment overlap law l = max(l0 - c * extension, lmin).
  double overlapAtZero = 0.0;
  double overlapSlope = 0.0;
  double overlapMin = 0.0;

  std::vector<ArmJoint> arm;
  Eigen::Vector3d reflectorOffset;     // in end-effector frame

  Pose mountColAccelBase;              // T_col,accbase
  Pose mountSeg2AccelColumn;           // T_seg2,acccolumn

  LumpedMasses masses;

  std::vector<Pose> nominalArmTransforms() const {
    std::vector<Pose> out;
    out.reserve(arm.size());
    for (const auto& j : arm) out.push_back(j.offset);
    return out;
  }
};

struct JointConfiguration {
  double extension = 0.0;       // meters, per segment
  Eigen::VectorXd armAngles;    // radians, one per arm joint
};

/// Gravity torque about a column joint, expressed about its x and y axes.
struct TorqueEstimate {
  double tauX = 0.0;  // N*m
  double tauY = 0.0;
};

/// End-effector pose in the seg2 frame: product over joints of
/// (offset * rotation about the joint axis).
Pose armForwardKinematics(const RobotModel& model, const Eigen::VectorXd& q,
                          std::span<const Pose> armCalib);

/// Reflector position in the seg2 frame.
Eigen::Vector3d armReflectorPosition(const RobotModel& model,
                                     const Eigen::VectorXd& q,
                                     std::span<const Pose> armCalib);

/// Left-to-right product of the chain states times the tail transform.
Pose chainTransform(std::span<const Pose> chainStates, const Pose& tail);

/// Engaged overlap between column segments at the given extension.
double segmentOverlap(const RobotModel& model, double extension);

/// Nominal (zero-load) column joint transforms at the given extension.
Pose colSeg1Nominal(const RobotModel& model, double extension);
Pose seg1Seg2Nominal(const RobotModel& model, double extension);

/// Gravity torques about the lower (col->seg1) and upper (seg1->seg2)
/// column joints from the lumped masses at the nominal configuration:
/// tau = sum over outboard masses of r x (m g), g = [0,0,-9.807] m/s^2.
std::array<TorqueEstimate, 2> jointTorques(const RobotModel& model,
                                           const JointConfiguration& cfg,
                                           std::span<const Pose> armCalib);

/// Gravity torque about the base frame origin (ground contact) from all
/// lumped masses; drives the environment tilt models of the simulator.
TorqueEstimate baseContactTorque(const RobotModel& model,
                                 const JointConfiguration& cfg,
                                 std::span<const Pose> armCalib);

/// Reflector position in the base frame under the rigid (undeflected) model.
Eigen::Vector3d rigidReflectorPosition(const RobotModel& model,
                                       const JointConfiguration& cfg,
                                       std::span<const Pose> armCalib);

/// World-frame reflector position through given chain states and arm calib.
Eigen::Vector3d reflectorWorldPosition(const Pose& worldTBase,
                                       std::span<const Pose> chainStates,
                                       const RobotModel& model,
                                       const Eigen::VectorXd& q,
                                       std::span<const Pose> armCalib);

/// Compact built-in model: 2-segment column plus a 3R arm. Used as the
/// default in configs, the simulator, and tests.
RobotModel defaultRobotModel();

}  // namespace chainstation
