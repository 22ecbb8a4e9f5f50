#include "chainstation/stationing.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace chainstation {

std::string tagName(RecordTag tag) {
  switch (tag) {
    case RecordTag::Calibration:
      return "calibration";
    case RecordTag::Stationing:
      return "stationing";
    case RecordTag::Evaluation:
      return "evaluation";
  }
  return "?";
}

namespace {

double hardSigma(const EstimatorConfig& config) {
  return 1.0 / config.noise.hardWeight;
}

PosePriorSpec chainTranslationSpec(const Pose& nominal, double sigma) {
  PosePriorSpec spec;
  spec.reference = nominal;
  spec.dofs = {DofSpec::free(),        DofSpec::free(),
               DofSpec::free(),        DofSpec::fixed(sigma),
               DofSpec::fixed(sigma),  DofSpec::fixed(sigma)};
  return spec;
}

PosePriorSpec baseColSpec(const Pose& nominal, const EstimatorConfig& config) {
  const double hs = hardSigma(config);
  PosePriorSpec spec;
  spec.reference = nominal;
  spec.dofs = {
      DofSpec::bounded(config.priors.baseTiltHalfWidth, config.priors.baseTiltSigma),
      DofSpec::bounded(config.priors.baseTiltHalfWidth, config.priors.baseTiltSigma),
      DofSpec::fixed(hs), DofSpec::fixed(hs), DofSpec::fixed(hs),
      DofSpec::fixed(hs)};
  return spec;
}

NoiseModel deflectionPriorNoise(const CalibrationSet& calib,
                                const EstimatorConfig& config) {
  const double rel = config.priors.deflectionPriorRelSigma;
  // Natural scale of each row so hardness is relative, not absolute.
  const double rollProd =
      std::max(calib.betaLower.roll(0) * calib.betaUpper.roll(0), 1e-14);
  const double pitchProd =
      std::max(calib.betaLower.pitch(0) * calib.betaUpper.pitch(0), 1e-14);
  const double rollShift =
      std::max(0.5 * (calib.betaLower.roll(1) + calib.betaUpper.roll(1)), 1e-6);
  const double pitchShift =
      std::max(0.5 * (calib.betaLower.pitch(1) + calib.betaUpper.pitch(1)), 1e-6);
  Eigen::VectorXd s(4);
  s << rel * rollProd, rel * rollShift, rel * pitchProd, rel * pitchShift;
  return NoiseModel::hardSigmas(s);
}

void validateRecords(std::span<const MeasurementRecord> records,
                     const std::optional<CalibrationSet>& calib, GraphMode mode,
                     const RobotModel& model) {
  if (mode == GraphMode::Stationing && !calib) {
    throw BuildError("buildGraph: stationing mode requires a calibration set");
  }
  if (calib && calib->armTransforms.size() != model.arm.size()) {
    throw BuildError("buildGraph: calibration set has " +
                     std::to_string(calib->armTransforms.size()) +
                     " arm transforms, model has " +
                     std::to_string(model.arm.size()));
  }
  std::set<int> ids;
  for (const auto& rec : records) {
    if (!ids.insert(rec.id).second) {
      throw BuildError("buildGraph: duplicate record id " +
                       std::to_string(rec.id));
    }
    if (mode == GraphMode::Calibration && rec.tag != RecordTag::Calibration) {
      throw BuildError("buildGraph: record " + std::to_string(rec.id) +
                       " tagged " + tagName(rec.tag) + " in calibration mode");
    }
    if (mode == GraphMode::Stationing && rec.tag == RecordTag::Calibration) {
      throw BuildError("buildGraph: record " + std::to_string(rec.id) +
                       " tagged calibration in stationing mode");
    }
    const bool needsPosition = rec.tag != RecordTag::Evaluation;
    if (needsPosition && !rec.totalStationPosition) {
      throw BuildError("buildGraph: record " + std::to_string(rec.id) +
                       " tagged " + tagName(rec.tag) +
                       " is missing its total-station position");
    }
    if (static_cast<std::size_t>(rec.joints.armAngles.size()) !=
        model.arm.size()) {
      throw BuildError("buildGraph: record " + std::to_string(rec.id) +
                       " arm angle count mismatch");
    }
  }
}

}  // namespace

Values initializeStates(std::span<const MeasurementRecord> records,
                        const RobotModel& model, const EstimatorConfig& config,
                        const std::optional<CalibrationSet>& calib,
                        GraphMode mode) {
  const std::vector<Pose> armInit =
      (mode == GraphMode::Stationing && calib) ? calib->armTransforms
                                               : model.nominalArmTransforms();

  std::vector<Eigen::Vector3d> source;
  std::vector<Eigen::Vector3d> target;
  for (const auto& rec : records) {
    if (!rec.totalStationPosition) continue;
    source.push_back(rigidReflectorPosition(model, rec.joints, armInit));
    target.push_back(*rec.totalStationPosition);
  }
  if (source.size() < 3) {
    throw DegenerateGeometryError(
        "initializeStates: need >= 3 externally measured points for the world "
        "pose, got " +
        std::to_string(source.size()));
  }
  Pose world;
  try {
    world = kabschAlign(source, target);
  } catch (const DegenerateGeometryError& e) {
    throw DegenerateGeometryError(std::string("initializeStates: ") + e.what());
  }

  Values values;
  values.insert(keys::world(), world);
  values.insert(keys::gravity(), Eigen::Vector3d::Zero().eval());
  values.insert(keys::biasBase(), Eigen::Vector3d::Zero().eval());
  values.insert(keys::biasColumn(), Eigen::Vector3d::Zero().eval());

  if (mode == GraphMode::Stationing && calib) {
    values.insert(keys::coeffs(0), calib->betaLower.toSolverSpace());
    values.insert(keys::coeffs(1), calib->betaUpper.toSolverSpace());
  } else {
    values.insert(keys::coeffs(0),
                  Eigen::VectorXd::Constant(6, config.coeffInitS).eval());
    values.insert(keys::coeffs(1),
                  Eigen::VectorXd::Constant(6, config.coeffInitS).eval());
  }
  for (std::size_t i = 0; i < model.arm.size(); ++i) {
    values.insert(keys::armTransform(static_cast<std::uint32_t>(i)), armInit[i]);
  }
  for (const auto& rec : records) {
    values.insert(keys::chainPose(0, rec.id), model.nominalBaseCol);
    values.insert(keys::chainPose(1, rec.id),
                  colSeg1Nominal(model, rec.joints.extension));
    values.insert(keys::chainPose(2, rec.id),
                  seg1Seg2Nominal(model, rec.joints.extension));
  }
  return values;
}

BuiltGraph buildGraph(std::span<const MeasurementRecord> records,
                      const std::optional<CalibrationSet>& calib, GraphMode mode,
                      const RobotModel& model, const EstimatorConfig& config,
                      const AblationSpec& ablation) {
  validateRecords(records, calib, mode, model);

  BuiltGraph built;
  built.init = initializeStates(records, model, config, calib, mode);
  FactorGraph& graph = built.graph;

  const double hs = hardSigma(config);
  const std::vector<Pose> cadArm = model.nominalArmTransforms();
  std::vector<Key> armKeys;
  for (std::size_t i = 0; i < model.arm.size(); ++i) {
    armKeys.push_back(keys::armTransform(static_cast<std::uint32_t>(i)));
  }

  for (const auto& rec : records) {
    const Key cBase = keys::chainPose(0, rec.id);
    const Key cLower = keys::chainPose(1, rec.id);
    const Key cUpper = keys::chainPose(2, rec.id);

    // Torques are factor inputs, not functions of the optimized state; they
    // come from the rigid CAD model shared with the simulator.
    const auto torques = jointTorques(model, rec.joints, cadArm);
    const double overlap = segmentOverlap(model, rec.joints.extension);

    graph.add(std::make_shared<DeflectionFactor>(
        cLower, keys::coeffs(0), torques[0], overlap, config.convention,
        NoiseModel::hard(3, config.noise.hardWeight)));
    graph.add(std::make_shared<DeflectionFactor>(
        cUpper, keys::coeffs(1), torques[1], overlap, config.convention,
        NoiseModel::hard(3, config.noise.hardWeight)));

    graph.add(std::make_shared<PosePriorFactor>(
        cLower,
        chainTranslationSpec(colSeg1Nominal(model, rec.joints.extension), hs),
        "chain-translation"));
    graph.add(std::make_shared<PosePriorFactor>(
        cUpper,
        chainTranslationSpec(seg1Seg2Nominal(model, rec.joints.extension), hs),
        "chain-translation"));

    graph.add(std::make_shared<PosePriorFactor>(
        cBase, baseColSpec(model.nominalBaseCol, config), "base-col-prior"));

    if (!ablation.dropBaseAccel) {
      graph.add(std::make_shared<AccelerometerFactor>(
          keys::gravity(), keys::biasBase(), std::vector<Key>{cBase},
          model.mountColAccelBase, rec.accelBase,
          NoiseModel::sigmas(config.noise.accelSigma()), "accel-base"));
    }
    if (!ablation.dropColumnAccel) {
      graph.add(std::make_shared<AccelerometerFactor>(
          keys::gravity(), keys::biasColumn(),
          std::vector<Key>{cBase, cLower, cUpper}, model.mountSeg2AccelColumn,
          rec.accelColumn, NoiseModel::sigmas(config.noise.accelSigma()),
          "accel-column"));
    }
    if (rec.totalStationPosition) {
      graph.add(std::make_shared<PositionFactor>(
          keys::world(), std::vector<Key>{cBase, cLower, cUpper}, armKeys,
          model, rec.joints.armAngles, *rec.totalStationPosition,
          NoiseModel::isotropic(3, config.noise.positionSigma)));
    }
  }

  graph.add(std::make_shared<GravAlignFactor>(
      keys::world(), keys::gravity(),
      NoiseModel::isotropic(3, config.noise.gravAlignSigma)));

  {
    PosePriorSpec worldSpec;
    worldSpec.reference = Pose::identity();
    worldSpec.dofs = {DofSpec::bounded(config.priors.worldTiltHalfWidth,
                                       config.priors.worldTiltSigma),
                      DofSpec::bounded(config.priors.worldTiltHalfWidth,
                                       config.priors.worldTiltSigma),
                      DofSpec::free(), DofSpec::free(), DofSpec::free(),
                      DofSpec::free()};
    graph.add(std::make_shared<PosePriorFactor>(keys::world(), worldSpec,
                                                "world-prior"));
  }

  const Eigen::VectorXd biasHalf =
      Eigen::VectorXd::Constant(3, config.priors.biasHalfWidth);
  graph.add(std::make_shared<VectorBandPriorFactor>(
      keys::biasBase(), Eigen::VectorXd::Zero(3), biasHalf,
      NoiseModel::isotropic(3, config.priors.biasSigma), "bias-band"));
  graph.add(std::make_shared<VectorBandPriorFactor>(
      keys::biasColumn(), Eigen::VectorXd::Zero(3), biasHalf,
      NoiseModel::isotropic(3, config.priors.biasSigma), "bias-band"));

  for (std::size_t i = 0; i < model.arm.size(); ++i) {
    const Key ak = keys::armTransform(static_cast<std::uint32_t>(i));
    if (mode == GraphMode::Calibration) {
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
    } else {
      PosePriorSpec freeze;
      freeze.reference = calib->armTransforms[i];
      const DofSpec fixed = DofSpec::fixed(hs);
      freeze.dofs = {fixed, fixed, fixed, fixed, fixed, fixed};
      graph.add(std::make_shared<PosePriorFactor>(ak, freeze, "arm-freeze"));
    }
  }

  if (mode == GraphMode::Stationing) {
    graph.add(std::make_shared<DeflectionPriorFactor>(
        keys::coeffs(0), keys::coeffs(1), calib->betaLower, calib->betaUpper,
        deflectionPriorNoise(*calib, config)));
  }

  return built;
}

CalibrationResult calibrate(std::span<const MeasurementRecord> records,
                            const RobotModel& model,
                            const EstimatorConfig& config) {
  BuiltGraph built =
      buildGraph(records, std::nullopt, GraphMode::Calibration, model, config);
  Values solution;
  ConvergenceReport report;
  try {
    std::tie(solution, report) =
        optimizeLm(built.graph, built.init, config.solver);
  } catch (const SolveError& e) {
    throw CalibrationError(std::string("calibrate: ") + e.what());
  }

  CalibrationResult result;
  result.report = std::move(report);
  for (std::size_t i = 0; i < model.arm.size(); ++i) {
    result.calibration.armTransforms.push_back(
        solution.atPose(keys::armTransform(static_cast<std::uint32_t>(i))));
  }
  result.calibration.betaLower =
      DeflectionCoeffs::fromSolverSpace(solution.atVector(keys::coeffs(0)));
  result.calibration.betaUpper =
      DeflectionCoeffs::fromSolverSpace(solution.atVector(keys::coeffs(1)));
  return result;
}

Eigen::Vector3d predictReflectorWorld(const Values& values,
                                      const RobotModel& model,
                                      const MeasurementRecord& record) {
  const std::array<Pose, 3> chain = {values.atPose(keys::chainPose(0, record.id)),
                                     values.atPose(keys::chainPose(1, record.id)),
                                     values.atPose(keys::chainPose(2, record.id))};
  std::vector<Pose> armCalib;
  for (std::size_t i = 0; i < model.arm.size(); ++i) {
    armCalib.push_back(
        values.atPose(keys::armTransform(static_cast<std::uint32_t>(i))));
  }
  return values.atPose(keys::world()) *
         (chainTransform(chain, armForwardKinematics(model, record.joints.armAngles,
                                                     armCalib)) *
          model.reflectorOffset);
}

StationingSolution stationAndEvaluate(
    std::span<const MeasurementRecord> stationingRecords,
    const MeasurementRecord& evaluationRecord, const CalibrationSet& calib,
    const RobotModel& model, const EstimatorConfig& config,
    const AblationSpec& ablation) {
  if (static_cast<int>(stationingRecords.size()) < config.minStationingPoints) {
    throw StationingError("stationAndEvaluate: need >= " +
                          std::to_string(config.minStationingPoints) +
                          " stationing records, got " +
                          std::to_string(stationingRecords.size()));
  }
  for (const auto& rec : stationingRecords) {
    if (rec.tag != RecordTag::Stationing) {
      throw StationingError("stationAndEvaluate: record " +
                            std::to_string(rec.id) + " is tagged " +
                            tagName(rec.tag) + ", expected stationing");
    }
  }
  if (evaluationRecord.tag != RecordTag::Evaluation) {
    throw StationingError("stationAndEvaluate: evaluation record " +
                          std::to_string(evaluationRecord.id) + " is tagged " +
                          tagName(evaluationRecord.tag));
  }

  std::vector<MeasurementRecord> records(stationingRecords.begin(),
                                         stationingRecords.end());
  records.push_back(evaluationRecord);

  BuiltGraph built = buildGraph(records, calib, GraphMode::Stationing, model,
                                config, ablation);
  Values solution;
  ConvergenceReport report;
  try {
    std::tie(solution, report) =
        optimizeLm(built.graph, built.init, config.solver);
  } catch (const SolveError& e) {
    throw StationingError(std::string("stationAndEvaluate: ") + e.what());
  }

  StationingSolution out;
  out.worldTBase = solution.atPose(keys::world());
  out.accel.gBase = solution.atVector3(keys::gravity());
  out.accel.biasBase = solution.atVector3(keys::biasBase());
  out.accel.biasColumn = solution.atVector3(keys::biasColumn());
  out.alphaLower =
      DeflectionCoeffs::fromSolverSpace(solution.atVector(keys::coeffs(0)));
  out.alphaUpper =
      DeflectionCoeffs::fromSolverSpace(solution.atVector(keys::coeffs(1)));
  for (const auto& rec : records) {
    out.chainStates.push_back({solution.atPose(keys::chainPose(0, rec.id)),
                               solution.atPose(keys::chainPose(1, rec.id)),
                               solution.atPose(keys::chainPose(2, rec.id))});
  }
  out.predictedPosition = predictReflectorWorld(solution, model, evaluationRecord);
  out.report = std::move(report);
  return out;
}

}  // namespace chainstation
