#include "chainstation/sim.hpp"

#include <Eigen/Geometry>
#include <cmath>

namespace chainstation {

namespace {

double linspaceAt(double lo, double hi, int count, int i) {
  if (count <= 1) return 0.5 * (lo + hi);
  return lo + (hi - lo) * static_cast<double>(i) / (count - 1);
}

}  // namespace

std::vector<JointConfiguration> evaluationConfigurations(const GridSpec& grid) {
  std::vector<JointConfiguration> out;
  std::vector<double> q2Layers;
  if (grid.upLayer) q2Layers.push_back(grid.q2Up);
  if (grid.downLayer) q2Layers.push_back(grid.q2Down);
  for (double ext : grid.extensions) {
    for (double q2 : q2Layers) {
      for (int iy = 0; iy < grid.armGridY; ++iy) {
        for (int ix = 0; ix < grid.armGridX; ++ix) {
          JointConfiguration cfg;
          cfg.extension = ext;
          cfg.armAngles = Eigen::Vector3d(
              linspaceAt(grid.q0Min, grid.q0Max, grid.armGridX, ix),
              linspaceAt(grid.q1Min, grid.q1Max, grid.armGridY, iy), q2);
          out.push_back(cfg);
        }
      }
    }
  }
  return out;
}

std::vector<JointConfiguration> stationingConfigurations(const GridSpec& grid) {
  std::vector<JointConfiguration> out;
  for (int i = 0; i < grid.stationingCount; ++i) {
    JointConfiguration cfg;
    cfg.extension = grid.stationingExtension;
    cfg.armAngles =
        Eigen::Vector3d(linspaceAt(-1.5, 1.5, grid.stationingCount, i),
                        (i % 2 == 0) ? 0.30 : 0.70, grid.q2Up);
    out.push_back(cfg);
  }
  return out;
}

DeflectionCoeffs currentAlpha(const DeflectionCoeffs& calib, double scale,
                              double shift, const DeflectionCoeffs& offFamily) {
  DeflectionCoeffs out;
  out.roll = Eigen::Vector3d(scale * calib.roll(0), calib.roll(1) + shift,
                             calib.roll(2)) +
             offFamily.roll;
  out.pitch = Eigen::Vector3d(scale * calib.pitch(0), calib.pitch(1) + shift,
                              calib.pitch(2)) +
              offFamily.pitch;
  return out;
}

std::vector<Pose> scenarioArmTransforms(const ScenarioSpec& spec,
                                        const RobotModel& model) {
  std::vector<Pose> out = model.nominalArmTransforms();
  if (spec.armPerturbTrans == 0.0 && spec.armPerturbRotDeg == 0.0) return out;

  std::mt19937_64 rng(spec.armSeed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  auto unitVec = [&] {
    Eigen::Vector3d v;
    do {
      v = Eigen::Vector3d(uni(rng), uni(rng), uni(rng));
    } while (v.norm() < 1e-3);
    return Eigen::Vector3d(v.normalized());
  };
  auto axisVec = [](Axis a) {
    Eigen::Vector3d v = Eigen::Vector3d::Zero();
    v(static_cast<int>(a)) = 1.0;
    return v;
  };

  const double rotRad = spec.armPerturbRotDeg * M_PI / 180.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Eigen::Vector3d jointAxis = axisVec(model.arm[i].axis);

    // Translation orthogonal to the joint axis: a shift along the axis is
    // not observable from reflector positions (it trades with the next
    // link) and would break exact-recovery checks.
    Eigen::Vector3d dt = unitVec();
    dt -= dt.dot(jointAxis) * jointAxis;
    if (dt.norm() < 1e-6) dt = jointAxis.unitOrthogonal();
    dt = dt.normalized() * spec.armPerturbTrans;

    Eigen::Vector3d rotAxis = unitVec();
    if (i == 0) {
      // Keep the mount rotation orthogonal to its axis; the about-axis
      // component is only weakly separable from the world yaw.
      rotAxis -= rotAxis.dot(jointAxis) * jointAxis;
      if (rotAxis.norm() < 1e-6) rotAxis = jointAxis.unitOrthogonal();
    }
    rotAxis.normalize();

    out[i] = Pose(out[i].rotation * expMap(rotAxis * rotRad),
                  out[i].translation + dt);
  }
  return out;
}

std::pair<double, double> environmentTilt(const EnvironmentModel& env,
                                          const RobotModel& model,
                                          const JointConfiguration& cfg) {
  switch (env.kind) {
    case EnvironmentKind::Flat:
      return {0.0, 0.0};
    case EnvironmentKind::ConstantTilt:
      return {env.roll, env.pitch};
    case EnvironmentKind::LoadDependentTilt: {
      const TorqueEstimate tau =
          baseContactTorque(model, cfg, model.nominalArmTransforms());
      return {env.roll + env.rollCompliance * tau.tauX,
              env.pitch + env.pitchCompliance * tau.tauY};
    }
    case EnvironmentKind::Seesaw: {
      const TorqueEstimate tau =
          baseContactTorque(model, cfg, model.nominalArmTransforms());
      const double roll =
          tau.tauX > env.seesawThreshold ? env.seesawAngle : -env.seesawAngle;
      return {env.roll + roll, env.pitch};
    }
  }
  return {0.0, 0.0};
}

SimulatedPoint simulatePoint(const ScenarioSpec& spec, const RobotModel& model,
                             const JointConfiguration& cfg, RecordTag tag,
                             int id, std::span<const Pose> armTruth,
                             const DeflectionCoeffs& alphaLower,
                             const DeflectionCoeffs& alphaUpper,
                             std::mt19937_64& rng) {
  SimulatedPoint out;
  out.record.id = id;
  out.record.tag = tag;
  out.record.joints = cfg;
  out.truth.id = id;

  const std::vector<Pose> cadArm = model.nominalArmTransforms();
  const auto torques = jointTorques(model, cfg, cadArm);
  const double overlap = segmentOverlap(model, cfg.extension);

  const auto [roll, pitch] = environmentTilt(spec.environment, model, cfg);
  out.truth.tiltRoll = roll;
  out.truth.tiltPitch = pitch;

  const Pose baseCol(
      model.nominalBaseCol.rotation *
          (axisRotation(Axis::X, roll) * axisRotation(Axis::Y, pitch)),
      model.nominalBaseCol.translation);
  const Pose lower(
      deflectionModelRotation(torques[0], overlap, alphaLower, spec.convention),
      colSeg1Nominal(model, cfg.extension).translation);
  const Pose upper(
      deflectionModelRotation(torques[1], overlap, alphaUpper, spec.convention),
      seg1Seg2Nominal(model, cfg.extension).translation);

  const Eigen::Vector3d gBase =
      spec.worldTBase.rotation.transposed() * kGravityWorld;

  const std::vector<Pose> baseChain = {baseCol, model.mountColAccelBase};
  const std::vector<Pose> columnChain = {baseCol, lower, upper,
                                         model.mountSeg2AccelColumn};
  out.record.accelBase = predictAccelerometer(gBase, spec.biasBase, baseChain);
  out.record.accelColumn =
      predictAccelerometer(gBase, spec.biasColumn, columnChain);

  const std::array<Pose, 3> chain = {baseCol, lower, upper};
  out.truth.truePosition = reflectorWorldPosition(spec.worldTBase, chain, model,
                                                  cfg.armAngles, armTruth);

  Eigen::Vector3d measuredPosition = out.truth.truePosition;
  if (spec.noise) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::Vector3d accelSigma =
        spec.accelNoiseDensity * std::sqrt(1.0 / (2.0 * spec.accelAveragingSec));
    for (int i = 0; i < 3; ++i) {
      out.record.accelBase(i) += accelSigma(i) * normal(rng);
    }
    for (int i = 0; i < 3; ++i) {
      out.record.accelColumn(i) += accelSigma(i) * normal(rng);
    }
    for (int i = 0; i < 3; ++i) {
      measuredPosition(i) += spec.positionNoiseSigma * normal(rng);
    }
  }
  if (tag != RecordTag::Evaluation) {
    out.record.totalStationPosition = measuredPosition;
  }
  return out;
}

SimulatedDataset generateDataset(const ScenarioSpec& spec,
                                 const RobotModel& model, std::uint64_t seed) {
  SimulatedDataset out;
  std::mt19937_64 rng(seed);

  const std::vector<Pose> armTruth = scenarioArmTransforms(spec, model);
  const bool calibration = spec.kind == DatasetKind::Calibration;
  const double scale = calibration ? 1.0 : spec.complianceScale;
  const double shift = calibration ? 0.0 : spec.backlashShift;
  const DeflectionCoeffs zero;
  const DeflectionCoeffs alphaLower =
      currentAlpha(spec.alphaLowerCalib, scale, shift,
                   calibration ? zero : spec.offFamilyLower);
  const DeflectionCoeffs alphaUpper =
      currentAlpha(spec.alphaUpperCalib, scale, shift,
                   calibration ? zero : spec.offFamilyUpper);

  out.truth.seed = seed;
  out.truth.worldTBase = spec.worldTBase;
  out.truth.gBase = spec.worldTBase.rotation.transposed() * kGravityWorld;
  out.truth.biasBase = spec.biasBase;
  out.truth.biasColumn = spec.biasColumn;
  out.truth.alphaCalibLower = spec.alphaLowerCalib;
  out.truth.alphaCalibUpper = spec.alphaUpperCalib;
  out.truth.alphaCurrentLower = alphaLower;
  out.truth.alphaCurrentUpper = alphaUpper;
  out.truth.armTransforms = armTruth;

  int id = 0;
  auto emit = [&](const JointConfiguration& cfg, RecordTag tag) {
    SimulatedPoint p = simulatePoint(spec, model, cfg, tag, id++, armTruth,
                                     alphaLower, alphaUpper, rng);
    out.records.push_back(std::move(p.record));
    out.truth.records.push_back(p.truth);
  };

  if (calibration) {
    for (const auto& cfg : evaluationConfigurations(spec.grid)) {
      emit(cfg, RecordTag::Calibration);
    }
  } else {
    for (const auto& cfg : stationingConfigurations(spec.grid)) {
      emit(cfg, RecordTag::Stationing);
    }
    for (const auto& cfg : evaluationConfigurations(spec.grid)) {
      emit(cfg, RecordTag::Evaluation);
    }
  }
  return out;
}

}  // namespace chainstation
