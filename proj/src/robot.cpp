#include "chainstation/robot.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <string>

namespace chainstation {

namespace {

void checkArmSizes(const RobotModel& model, const Eigen::VectorXd& q,
                   std::span<const Pose> armCalib) {
  if (static_cast<std::size_t>(q.size()) != model.arm.size() ||
      armCalib.size() != model.arm.size()) {
    throw ArgumentError(
        "arm kinematics: joint count mismatch (model " +
        std::to_string(model.arm.size()) + ", angles " +
        std::to_string(q.size()) + ", calib " +
        std::to_string(armCalib.size()) + ")");
  }
}

}  // namespace

Pose armForwardKinematics(const RobotModel& model, const Eigen::VectorXd& q,
                          std::span<const Pose> armCalib) {
  checkArmSizes(model, q, armCalib);
  Pose t;
  for (std::size_t i = 0; i < model.arm.size(); ++i) {
    t = t * armCalib[i] *
        Pose(axisRotation(model.arm[i].axis, q(static_cast<int>(i))),
             Eigen::Vector3d::Zero());
  }
  return t;
}

Eigen::Vector3d armReflectorPosition(const RobotModel& model,
                                     const Eigen::VectorXd& q,
                                     std::span<const Pose> armCalib) {
  return armForwardKinematics(model, q, armCalib) * model.reflectorOffset;
}

Pose chainTransform(std::span<const Pose> chainStates, const Pose& tail) {
  Pose t;
  for (const Pose& p : chainStates) t = t * p;
  return t * tail;
}

double segmentOverlap(const RobotModel& model, double extension) {
  if (extension < 0.0 || extension > model.extensionMax) {
    throw ArgumentError("segmentOverlap: extension " +
                        std::to_string(extension) + " outside [0, " +
                        std::to_string(model.extensionMax) + "]");
  }
  return std::max(model.overlapAtZero - model.overlapSlope * extension,
                  model.overlapMin);
}

Pose colSeg1Nominal(const RobotModel& model, double extension) {
  return Pose(Rotation::identity(),
              model.colSeg1Offset + Eigen::Vector3d(0, 0, extension));
}

Pose seg1Seg2Nominal(const RobotModel& model, double extension) {
  return Pose(Rotation::identity(),
              model.seg1Seg2Offset + Eigen::Vector3d(0, 0, extension));
}

namespace {

struct WeightedPoint {
  Eigen::Vector3d pos;
  double kg;
};

/// Lumped-mass positions at the nominal configuration, split into masses
/// outboard of the lower joint only (seg1) and outboard of both (the rest).
struct MassLayout {
  std::vector<WeightedPoint> seg1Masses;
  std::vector<WeightedPoint> seg2Masses;
  Pose tSeg1;
  Pose tSeg2;
};

MassLayout nominalMassLayout(const RobotModel& model,
                             const JointConfiguration& cfg,
                             std::span<const Pose> armCalib) {
  MassLayout out;
  out.tSeg1 = model.nominalBaseCol * colSeg1Nominal(model, cfg.extension);
  out.tSeg2 = out.tSeg1 * seg1Seg2Nominal(model, cfg.extension);
  out.seg1Masses.push_back(
      {out.tSeg1 * model.masses.seg1.com, model.masses.seg1.kg});
  out.seg2Masses.push_back(
      {out.tSeg2 * model.masses.seg2.com, model.masses.seg2.kg});

  Pose link = out.tSeg2;
  for (std::size_t i = 0; i < model.arm.size(); ++i) {
    link = link * armCalib[i] *
           Pose(axisRotation(model.arm[i].axis, cfg.armAngles(static_cast<int>(i))),
                Eigen::Vector3d::Zero());
    if (i < model.masses.armLinks.size()) {
      out.seg2Masses.push_back(
          {link * model.masses.armLinks[i].com, model.masses.armLinks[i].kg});
    }
  }
  out.seg2Masses.push_back(
      {link * model.masses.payload.com, model.masses.payload.kg});
  return out;
}

TorqueEstimate torqueAbout(const Pose& joint,
                           std::span<const WeightedPoint> masses) {
  const Eigen::Vector3d g(0.0, 0.0, -kGravity);
  Eigen::Vector3d tau = Eigen::Vector3d::Zero();
  for (const WeightedPoint& w : masses) {
    tau += (w.pos - joint.translation).cross(w.kg * g);
  }
  TorqueEstimate est;
  est.tauX = tau.dot(joint.rotation.matrix().col(0));
  est.tauY = tau.dot(joint.rotation.matrix().col(1));
  return est;
}

}  // namespace

std::array<TorqueEstimate, 2> jointTorques(const RobotModel& model,
                                           const JointConfiguration& cfg,
                                           std::span<const Pose> armCalib) {
  checkArmSizes(model, cfg.armAngles, armCalib);
  const MassLayout layout = nominalMassLayout(model, cfg, armCalib);

  // Joint axes: the orientation of the parent frame at the pivot (the child
  // frame origin). Lower joint pivots at the seg1 origin with col axes,
  // upper at the seg2 origin with seg1 axes (identical at nominal).
  std::vector<WeightedPoint> lowerMasses = layout.seg1Masses;
  lowerMasses.insert(lowerMasses.end(), layout.seg2Masses.begin(),
                     layout.seg2Masses.end());
  const Pose lowerJoint(model.nominalBaseCol.rotation, layout.tSeg1.translation);
  const Pose upperJoint(layout.tSeg1.rotation, layout.tSeg2.translation);

  return {torqueAbout(lowerJoint, lowerMasses),
          torqueAbout(upperJoint, layout.seg2Masses)};
}

TorqueEstimate baseContactTorque(const RobotModel& model,
                                 const JointConfiguration& cfg,
                                 std::span<const Pose> armCalib) {
  checkArmSizes(model, cfg.armAngles, armCalib);
  const MassLayout layout = nominalMassLayout(model, cfg, armCalib);
  std::vector<WeightedPoint> all = layout.seg1Masses;
  all.insert(all.end(), layout.seg2Masses.begin(), layout.seg2Masses.end());
  return torqueAbout(Pose::identity(), all);
}

Eigen::Vector3d rigidReflectorPosition(const RobotModel& model,
                                       const JointConfiguration& cfg,
                                       std::span<const Pose> armCalib) {
  const std::array<Pose, 3> chain = {model.nominalBaseCol,
                                     colSeg1Nominal(model, cfg.extension),
                                     seg1Seg2Nominal(model, cfg.extension)};
  return chainTransform(chain, armForwardKinematics(model, cfg.armAngles,
                                                    armCalib)) *
         model.reflectorOffset;
}

Eigen::Vector3d reflectorWorldPosition(const Pose& worldTBase,
                                       std::span<const Pose> chainStates,
                                       const RobotModel& model,
                                       const Eigen::VectorXd& q,
                                       std::span<const Pose> armCalib) {
  return worldTBase *
         (chainTransform(chainStates, armForwardKinematics(model, q, armCalib)) *
          model.reflectorOffset);
}

RobotModel defaultRobotModel() {
  RobotModel m;
  m.name = "column-arm-v1";

  m.nominalBaseCol = Pose(Rotation::identity(), Eigen::Vector3d(0, 0, 0.35));
  m.colSeg1Offset = Eigen::Vector3d(0, 0, 0.55);
  m.seg1Seg2Offset = Eigen::Vector3d(0, 0, 0.55);
  m.extensionMax = 0.80;

  m.overlapAtZero = 0.50;
  m.overlapSlope = 0.55;
  m.overlapMin = 0.10;

  m.arm = {
      {Pose(Rotation::identity(), Eigen::Vector3d(0.10, 0.00, 0.15)), Axis::Z},
      {Pose(Rotation::identity(), Eigen::Vector3d(0.25, 0.00, 0.10)), Axis::Y},
      {Pose(Rotation::identity(), Eigen::Vector3d(0.45, 0.00, 0.00)), Axis::Y},
  };
  m.reflectorOffset = Eigen::Vector3d(0.30, 0.05, 0.08);

  m.mountColAccelBase =
      Pose(Rotation::identity(), Eigen::Vector3d(0.12, -0.10, 0.05));
  m.mountSeg2AccelColumn =
      Pose(Rotation::identity(), Eigen::Vector3d(-0.05, 0.08, 0.45));

  m.masses.seg1 = {55.0, Eigen::Vector3d(0.02, 0.00, 0.30)};
  m.masses.seg2 = {45.0, Eigen::Vector3d(0.03, 0.01, 0.30)};
  m.masses.armLinks = {
      {12.0, Eigen::Vector3d(0.05, 0.00, 0.10)},
      {10.0, Eigen::Vector3d(0.20, 0.00, 0.05)},
      {8.0, Eigen::Vector3d(0.15, 0.02, 0.00)},
  };
  m.masses.payload = {25.0, Eigen::Vector3d(0.25, 0.03, 0.05)};
  return m;
}

}  // namespace chainstation
