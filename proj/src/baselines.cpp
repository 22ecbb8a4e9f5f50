#include "chainstation/baselines.hpp"

#include <cmath>

#include "chainstation/factors.hpp"

namespace chainstation {

namespace {

/// Deflected reflector position in the base frame under the linear spring
/// model, with an externally supplied base tilt.
Eigen::Vector3d springModelPoint(const MeasurementRecord& rec,
                                 const VjmParams& params,
                                 const RobotModel& model, double tiltRoll,
                                 double tiltPitch) {
  const std::vector<Pose> cadArm = model.nominalArmTransforms();
  const auto torques = jointTorques(model, rec.joints, cadArm);
  const double overlap = segmentOverlap(model, rec.joints.extension);

  auto springRotation = [&](const TorqueEstimate& tau,
                            const Eigen::Vector2d& compliance) {
    const Eigen::Vector3d alphaRoll(compliance(0), 0.0, 0.0);
    const Eigen::Vector3d alphaPitch(compliance(1), 0.0, 0.0);
    return axisRotation(Axis::X,
                        deflectionDisplacement(tau.tauX, overlap, alphaRoll)) *
           axisRotation(Axis::Y,
                        deflectionDisplacement(tau.tauY, overlap, alphaPitch));
  };

  const Pose baseCol(model.nominalBaseCol.rotation *
                         (axisRotation(Axis::X, tiltRoll) *
                          axisRotation(Axis::Y, tiltPitch)),
                     model.nominalBaseCol.translation);
  const std::array<Pose, 3> chain = {
      baseCol,
      Pose(springRotation(torques[0], params.complianceLower),
           colSeg1Nominal(model, rec.joints.extension).translation),
      Pose(springRotation(torques[1], params.complianceUpper),
           seg1Seg2Nominal(model, rec.joints.extension).translation)};
  return chainTransform(chain,
                        armForwardKinematics(model, rec.joints.armAngles,
                                             params.armTransforms)) *
         model.reflectorOffset;
}

}  // namespace

VjmCalibrationResult vjmCalibrate(std::span<const MeasurementRecord> records,
                                  const RobotModel& model,
                                  const EstimatorConfig& config) {
  for (const auto& rec : records) {
    if (!rec.totalStationPosition) {
      throw CalibrationError("vjmCalibrate: record " + std::to_string(rec.id) +
                             " is missing its total-station position");
    }
  }

  FactorGraph graph;
  Values init = initializeStates(records, model, config, std::nullopt,
                                 GraphMode::Calibration);

  const double hs = 1.0 / config.noise.hardWeight;
  const std::vector<Pose> cadArm = model.nominalArmTransforms();
  std::vector<Key> armKeys;
  for (std::size_t i = 0; i < model.arm.size(); ++i) {
    armKeys.push_back(keys::armTransform(static_cast<std::uint32_t>(i)));
  }

  for (const auto& rec : records) {
    const Key cBase = keys::chainPose(0, rec.id);
    const Key cLower = keys::chainPose(1, rec.id);
    const Key cUpper = keys::chainPose(2, rec.id);
    const auto torques = jointTorques(model, rec.joints, cadArm);
    const double overlap = segmentOverlap(model, rec.joints.extension);

    graph.add(std::make_shared<DeflectionFactor>(
        cLower, keys::coeffs(0), torques[0], overlap, config.convention,
        NoiseModel::hard(3, config.noise.hardWeight)));
    graph.add(std::make_shared<DeflectionFactor>(
        cUpper, keys::coeffs(1), torques[1], overlap, config.convention,
        NoiseModel::hard(3, config.noise.hardWeight)));

    {
      PosePriorSpec spec;
      spec.reference = colSeg1Nominal(model, rec.joints.extension);
      spec.dofs = {DofSpec::free(),       DofSpec::free(),
                   DofSpec::free(),       DofSpec::fixed(hs),
                   DofSpec::fixed(hs),    DofSpec::fixed(hs)};
      graph.add(std::make_shared<PosePriorFactor>(cLower, spec,
                                                  "chain-translation"));
      spec.reference = seg1Seg2Nominal(model, rec.joints.extension);
      graph.add(std::make_shared<PosePriorFactor>(cUpper, spec,
                                                  "chain-translation"));
    }
    {
      // Rigid base: no tilt freedom in the virtual joint method.
      PosePriorSpec spec;
      spec.reference = model.nominalBaseCol;
      const DofSpec fixed = DofSpec::fixed(hs);
      spec.dofs = {fixed, fixed, fixed, fixed, fixed, fixed};
      graph.add(std::make_shared<PosePriorFactor>(cBase, spec, "base-rigid"));
    }
    graph.add(std::make_shared<PositionFactor>(
        keys::world(), std::vector<Key>{cBase, cLower, cUpper}, armKeys, model,
        rec.joints.armAngles, *rec.totalStationPosition,
        NoiseModel::isotropic(3, config.noise.positionSigma)));
  }

  // Springs are linear: pin the backlash components a1, a2 of both joints
  // at zero; the a0 components stay effectively free.
  {
    Eigen::VectorXd sigmas(6);
    sigmas << 1e6, hs, hs, 1e6, hs, hs;
    for (int joint = 0; joint < 2; ++joint) {
      graph.add(std::make_shared<VectorPriorFactor>(
          keys::coeffs(static_cast<std::uint32_t>(joint)),
          Eigen::VectorXd::Zero(6), NoiseModel::sigmas(sigmas),
          "vjm-linear-only"));
    }
  }

  for (std::size_t i = 0; i < model.arm.size(); ++i) {
    const Key ak = keys::armTransform(static_cast<std::uint32_t>(i));
    PosePriorSpec region;
    region.reference = cadArm[i];
    const DofSpec rot = DofSpec::bounded(config.priors.armRotHalfWidth,
                                         config.priors.armBandSigma);
    const DofSpec trans = DofSpec::bounded(config.priors.armTransHalfWidth,
                                           config.priors.armBandSigma);
    region.dofs = {rot, rot, rot, trans, trans, trans};
    graph.add(std::make_shared<PosePriorFactor>(ak, region, "arm-region"));

    PosePriorSpec center;
    center.reference = cadArm[i];
    const DofSpec rotC = DofSpec::fixed(config.priors.armCenterRotSigma);
    const DofSpec transC = DofSpec::fixed(config.priors.armCenterTransSigma);
    center.dofs = {rotC, rotC, rotC, transC, transC, transC};
    graph.add(std::make_shared<PosePriorFactor>(ak, center, "arm-center"));
  }

  Values solution;
  VjmCalibrationResult result;
  try {
    std::tie(solution, result.report) = optimizeLm(graph, init, config.solver);
  } catch (const SolveError& e) {
    throw CalibrationError(std::string("vjmCalibrate: ") + e.what());
  }

  const DeflectionCoeffs lower =
      DeflectionCoeffs::fromSolverSpace(solution.atVector(keys::coeffs(0)));
  const DeflectionCoeffs upper =
      DeflectionCoeffs::fromSolverSpace(solution.atVector(keys::coeffs(1)));
  result.params.complianceLower = Eigen::Vector2d(lower.roll(0), lower.pitch(0));
  result.params.complianceUpper = Eigen::Vector2d(upper.roll(0), upper.pitch(0));
  for (std::size_t i = 0; i < model.arm.size(); ++i) {
    result.params.armTransforms.push_back(
        solution.atPose(keys::armTransform(static_cast<std::uint32_t>(i))));
  }
  return result;
}

std::pair<double, double> tiltFromAccelerometer(const Eigen::Vector3d& reading,
                                                const Rotation& mountRotation) {
  // reading = (R_tilt R_mount)^T g  =>  R_mount reading = R_tilt^T g; for
  // R_tilt = Rx(roll) Ry(pitch) this inverts exactly at zero bias.
  const Eigen::Vector3d v = mountRotation * reading;
  const double roll = std::atan2(v.y(), std::sqrt(v.x() * v.x() + v.z() * v.z()));
  const double pitch = std::atan2(-v.x(), v.z());
  return {roll, pitch};
}

Eigen::Vector3d baselinePredict(BaselineMethod method,
                                std::span<const MeasurementRecord> stationingRecords,
                                const MeasurementRecord& evaluationRecord,
                                const VjmParams& params, const RobotModel& model,
                                const EstimatorConfig& config) {
  if (static_cast<int>(stationingRecords.size()) < config.minStationingPoints) {
    throw StationingError("baselinePredict: need >= " +
                          std::to_string(config.minStationingPoints) +
                          " stationing records, got " +
                          std::to_string(stationingRecords.size()));
  }

  double meanRoll = 0.0;
  double meanPitch = 0.0;
  std::vector<std::pair<double, double>> tilts(stationingRecords.size(), {0, 0});
  double evalRoll = 0.0;
  double evalPitch = 0.0;
  if (method == BaselineMethod::VjmBt) {
    const Rotation mountRot = model.mountColAccelBase.rotation;
    for (std::size_t i = 0; i < stationingRecords.size(); ++i) {
      tilts[i] = tiltFromAccelerometer(stationingRecords[i].accelBase, mountRot);
      meanRoll += tilts[i].first;
      meanPitch += tilts[i].second;
    }
    meanRoll /= static_cast<double>(stationingRecords.size());
    meanPitch /= static_cast<double>(stationingRecords.size());
    std::tie(evalRoll, evalPitch) =
        tiltFromAccelerometer(evaluationRecord.accelBase, mountRot);
  }

  std::vector<Eigen::Vector3d> source;
  std::vector<Eigen::Vector3d> target;
  for (std::size_t i = 0; i < stationingRecords.size(); ++i) {
    const auto& rec = stationingRecords[i];
    if (!rec.totalStationPosition) {
      throw StationingError("baselinePredict: stationing record " +
                            std::to_string(rec.id) +
                            " is missing its total-station position");
    }
    source.push_back(springModelPoint(rec, params, model,
                                      tilts[i].first - meanRoll,
                                      tilts[i].second - meanPitch));
    target.push_back(*rec.totalStationPosition);
  }
  const Pose world = kabschAlign(source, target);
  return world * springModelPoint(evaluationRecord, params, model,
                                  evalRoll - meanRoll, evalPitch - meanPitch);
}

}  // namespace chainstation
