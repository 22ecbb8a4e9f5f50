#pragma once

#include <Eigen/Core>
#include <array>
#include <optional>
#include <span>
#include <vector>

#include "chainstation/factors.hpp"
#include "chainstation/graph.hpp"
#include "chainstation/robot.hpp"

namespace chainstation {

class BuildError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

class StationingError : public Error {
 public:
  using Error::Error;
};

enum class RecordTag { Calibration, Stationing, Evaluation };

std::string tagName(RecordTag tag);

/// One recorded point: joint configuration, the two time-averaged
/// accelerometer readings, and the total-station fix when available.
struct MeasurementRecord {
  int id = 0;
  RecordTag tag = RecordTag::Calibration;
  JointConfiguration joints;
  Eigen::Vector3d accelBase = Eigen::Vector3d::Zero();
  Eigen::Vector3d accelColumn = Eigen::Vector3d::Zero();
  std::optional<Eigen::Vector3d> totalStationPosition;
};

/// Output of the calibration procedure: arm transforms and the deflection
/// coefficients beta per column joint.
struct CalibrationSet {
  std::vector<Pose> armTransforms;
  DeflectionCoeffs betaLower;
  DeflectionCoeffs betaUpper;
};

struct AccelState {
  Eigen::Vector3d gBase = Eigen::Vector3d::Zero();
  Eigen::Vector3d biasBase = Eigen::Vector3d::Zero();
  Eigen::Vector3d biasColumn = Eigen::Vector3d::Zero();
};

enum class GraphMode { Calibration, Stationing };

/// Accelerometer factors to drop, for the ablation study.
struct AblationSpec {
  bool dropBaseAccel = false;
  bool dropColumnAccel = false;
};

struct NoiseConfig {
  double positionSigma = 1e-3;  // meters
  Eigen::Vector3d accelDensity =
      Eigen::Vector3d(9.645e-5, 9.759e-5, 1.387e-4);  // (m/s^2)/sqrt(Hz)
  double accelAveragingSec = 10.0;
  double gravAlignSigma = 1e-4;  // m/s^2
  double hardWeight = 1e6;

  /// Per-axis sigma of a time-averaged reading: density * sqrt(1/(2 T)).
  Eigen::Vector3d accelSigma() const {
    return accelDensity * std::sqrt(1.0 / (2.0 * accelAveragingSec));
  }
};

struct PriorConfig {
  double worldTiltHalfWidth = 0.35;  // rad, prevents upside-down solutions
  double worldTiltSigma = 0.01;
  double baseTiltHalfWidth = 0.06;   // rad, expected rubber-track region
  double baseTiltSigma = 0.005;
  double biasHalfWidth = 0.05;       // m/s^2
  double biasSigma = 0.01;
  double armTransHalfWidth = 0.005;  // m, calibration search region
  double armRotHalfWidth = 0.02;     // rad
  double armBandSigma = 1e-4;
  double armCenterTransSigma = 0.05;  // weak pull to CAD, pins unidentifiable
  double armCenterRotSigma = 0.2;     // directions during calibration
  double deflectionPriorRelSigma = 1e-4;
};

struct EstimatorConfig {
  NoiseConfig noise;
  PriorConfig priors;
  SolverSettings solver;
  DeflectionConvention convention = DeflectionConvention::LinearCompliance;
  double coeffInitS = 1e-3;  // solver-space init, alpha = 1e-6
  int minStationingPoints = 3;
};

namespace keys {
inline Key world() { return Key('w', 0); }
inline Key gravity() { return Key('g', 0); }
inline Key biasBase() { return Key('b', 0); }
inline Key biasColumn() { return Key('b', 1); }
inline Key coeffs(std::uint32_t joint) { return Key('s', joint); }
inline Key armTransform(std::uint32_t i) { return Key('a', i); }
inline Key chainPose(std::uint32_t link, int recordId) {
  return Key('c', link, recordId);
}
}  // namespace keys

struct BuiltGraph {
  FactorGraph graph;
  Values init;
};

/// World pose from Kabsch over the externally measured points (rigid-model
/// predictions -> total-station fixes), chain states from the rigid model,
/// gravity alignment and biases zero, coefficients per mode.
Values initializeStates(std::span<const MeasurementRecord> records,
                        const RobotModel& model, const EstimatorConfig& config,
                        const std::optional<CalibrationSet>& calib,
                        GraphMode mode);

BuiltGraph buildGraph(std::span<const MeasurementRecord> records,
                      const std::optional<CalibrationSet>& calib, GraphMode mode,
                      const RobotModel& model, const EstimatorConfig& config,
                      const AblationSpec& ablation = {});

struct CalibrationResult {
  CalibrationSet calibration;
  ConvergenceReport report;
};

CalibrationResult calibrate(std::span<const MeasurementRecord> records,
                            const RobotModel& model,
                            const EstimatorConfig& config);

struct StationingSolution {
  Pose worldTBase;
  AccelState accel;
  std::vector<std::array<Pose, 3>> chainStates;  // one per input record
  DeflectionCoeffs alphaLower;
  DeflectionCoeffs alphaUpper;
  Eigen::Vector3d predictedPosition;  // world-frame reflector at the
                                      // evaluation configuration
  ConvergenceReport report;
};

/// One fresh optimization per evaluation record: stationing records plus the
/// single evaluation record, solved jointly.
StationingSolution stationAndEvaluate(
    std::span<const MeasurementRecord> stationingRecords,
    const MeasurementRecord& evaluationRecord, const CalibrationSet& calib,
    const RobotModel& model, const EstimatorConfig& config,
    const AblationSpec& ablation = {});

/// World-frame reflector position implied by the given values for a record.
Eigen::Vector3d predictReflectorWorld(const Values& values,
                                      const RobotModel& model,
                                      const MeasurementRecord& record);

}  // namespace chainstation
