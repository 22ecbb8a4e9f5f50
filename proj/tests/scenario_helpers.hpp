#pragma once

// Shared synthetic scenarios for the integration tests and the acceptance
// suite: one canonical set of ground-truth coefficients, environments and
// grids so every test exercises the same physical regime.

#include "chainstation/factors.hpp"
#include "chainstation/robot.hpp"
#include "chainstation/sim.hpp"
#include "chainstation/stationing.hpp"

namespace chainstation::testing {

inline DeflectionCoeffs canonicalAlphaLower() {
  DeflectionCoeffs c;
  c.roll = Eigen::Vector3d(5.0e-6, 1.2e-3, 2.0e-2);
  c.pitch = Eigen::Vector3d(6.0e-6, 1.0e-3, 1.5e-2);
  return c;
}

inline DeflectionCoeffs canonicalAlphaUpper() {
  DeflectionCoeffs c;
  c.roll = Eigen::Vector3d(4.0e-6, 0.9e-3, 2.0e-2);
  c.pitch = Eigen::Vector3d(5.0e-6, 0.8e-3, 1.8e-2);
  return c;
}

inline GridSpec smallGrid() {
  GridSpec g;
  g.extensions = {0.15, 0.55};
  g.armGridX = 3;
  g.armGridY = 3;
  g.stationingExtension = 0.15;
  return g;
}

/// Rigid robot in a flat world: no deflection, no tilt, no bias, no noise.
inline ScenarioSpec rigidScenario() {
  ScenarioSpec s;
  s.name = "rigid";
  s.grid = smallGrid();
  s.worldTBase = Pose(rotationFromRpy(Eigen::Vector3d(0.0, 0.0, 0.3)),
                      Eigen::Vector3d(4.0, 1.5, 0.2));
  return s;
}

/// Deflecting robot with biases on a flat floor (the calibration regime).
inline ScenarioSpec flatScenario() {
  ScenarioSpec s = rigidScenario();
  s.name = "flat";
  s.alphaLowerCalib = canonicalAlphaLower();
  s.alphaUpperCalib = canonicalAlphaUpper();
  s.biasBase = Eigen::Vector3d(0.010, -0.015, 0.020);
  s.biasColumn = Eigen::Vector3d(-0.020, 0.010, 0.015);
  s.worldTBase = Pose(rotationFromRpy(Eigen::Vector3d(0.010, -0.008, 0.40)),
                      Eigen::Vector3d(5.0, 2.0, 0.30));
  return s;
}

inline ScenarioSpec calibrationScenario() {
  ScenarioSpec s = flatScenario();
  s.name = "flat-calibration";
  s.kind = DatasetKind::Calibration;
  s.grid.armGridX = 4;
  s.grid.armGridY = 3;
  s.grid.extensions = {0.10, 0.35, 0.60};
  return s;
}

/// Load-dependent base tilt plus drift of the deflection coefficients along
/// the temperature/wear null space (the headline disturbance regime).
inline ScenarioSpec tiltDriftScenario() {
  ScenarioSpec s = flatScenario();
  s.name = "tilt-drift";
  s.environment.kind = EnvironmentKind::LoadDependentTilt;
  s.environment.rollCompliance = 3.5e-5;
  s.environment.pitchCompliance = 2.5e-5;
  s.complianceScale = 1.25;
  s.backlashShift = 4.0e-4;
  return s;
}

/// Calibration set equal to the scenario ground truth (bypasses calibrate()
/// where the test only cares about the stationing stage).
inline CalibrationSet truthCalibration(const ScenarioSpec& spec,
                                       const RobotModel& model) {
  CalibrationSet c;
  c.armTransforms = scenarioArmTransforms(spec, model);
  c.betaLower = spec.alphaLowerCalib;
  c.betaUpper = spec.alphaUpperCalib;
  return c;
}

/// Ground-truth Values for a simulated dataset: the estimator's own model
/// evaluated at the generating state, used for zero-residual checks.
inline Values truthValues(std::span<const MeasurementRecord> records,
                          const GroundTruth& truth, const RobotModel& model) {
  Values v;
  v.insert(keys::world(), truth.worldTBase);
  v.insert(keys::gravity(), truth.gBase);
  v.insert(keys::biasBase(), truth.biasBase);
  v.insert(keys::biasColumn(), truth.biasColumn);
  v.insert(keys::coeffs(0), truth.alphaCurrentLower.toSolverSpace());
  v.insert(keys::coeffs(1), truth.alphaCurrentUpper.toSolverSpace());
  for (std::size_t i = 0; i < truth.armTransforms.size(); ++i) {
    v.insert(keys::armTransform(static_cast<std::uint32_t>(i)),
             truth.armTransforms[i]);
  }
  std::map<int, const TruthRecord*> byId;
  for (const auto& r : truth.records) byId[r.id] = &r;
  const std::vector<Pose> cadArm = model.nominalArmTransforms();
  for (const auto& rec : records) {
    const TruthRecord& tr = *byId.at(rec.id);
    const auto torques = jointTorques(model, rec.joints, cadArm);
    const double overlap = segmentOverlap(model, rec.joints.extension);
    v.insert(keys::chainPose(0, rec.id),
             Pose(model.nominalBaseCol.rotation *
                      (axisRotation(Axis::X, tr.tiltRoll) *
                       axisRotation(Axis::Y, tr.tiltPitch)),
                  model.nominalBaseCol.translation));
    v.insert(keys::chainPose(1, rec.id),
             Pose(deflectionModelRotation(torques[0], overlap,
                                          truth.alphaCurrentLower),
                  colSeg1Nominal(model, rec.joints.extension).translation));
    v.insert(keys::chainPose(2, rec.id),
             Pose(deflectionModelRotation(torques[1], overlap,
                                          truth.alphaCurrentUpper),
                  seg1Seg2Nominal(model, rec.joints.extension).translation));
  }
  return v;
}

inline std::vector<MeasurementRecord> recordsWithTag(
    std::span<const MeasurementRecord> records, RecordTag tag) {
  std::vector<MeasurementRecord> out;
  for (const auto& r : records) {
    if (r.tag == tag) out.push_back(r);
  }
  return out;
}

inline std::map<int, Eigen::Vector3d> truthPositionsById(
    const GroundTruth& truth) {
  std::map<int, Eigen::Vector3d> out;
  for (const auto& r : truth.records) out[r.id] = r.truePosition;
  return out;
}

}  // namespace chainstation::testing
