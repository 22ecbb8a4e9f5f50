#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <vector>

#include "chainstation/factors.hpp"
#include "chainstation/robot.hpp"
#include "chainstation/stationing.hpp"

namespace chainstation {

/// Base-environment interaction producing the per-record base tilt.
enum class EnvironmentKind { Flat, ConstantTilt, LoadDependentTilt, Seesaw };

struct EnvironmentModel {
  EnvironmentKind kind = EnvironmentKind::Flat;
  double roll = 0.0;   // rad; ConstantTilt, and Seesaw pitch offset below
  double pitch = 0.0;
  double rollCompliance = 0.0;   // rad per N*m about base x; LoadDependentTilt
  double pitchCompliance = 0.0;  // rad per N*m about base y
  double seesawAngle = 0.0;      // rad; roll flips sign with the load side
  double seesawThreshold = 0.0;  // N*m on the base x torque
};

/// Joint-configuration waypoints: per column height, an arm grid with an
/// upward and a downward end-effector layer, plus stationing configurations
/// at one height.
struct GridSpec {
  std::vector<double> extensions = {0.10, 0.30, 0.50, 0.70};
  int armGridX = 8;
  int armGridY = 7;
  bool upLayer = true;
  bool downLayer = true;
  double q0Min = -2.2;
  double q0Max = 2.2;
  double q1Min = 0.15;
  double q1Max = 0.90;
  double q2Up = -1.60;
  double q2Down = 0.90;
  double stationingExtension = 0.10;
  int stationingCount = 4;
};

std::vector<JointConfiguration> evaluationConfigurations(const GridSpec& grid);
std::vector<JointConfiguration> stationingConfigurations(const GridSpec& grid);

enum class DatasetKind { Calibration, Stationing };

/// Ground-truth scenario: deflection coefficients, their drift between
/// calibration and stationing time, the environment, sensor biases, noise,
/// and the waypoint grid.
struct ScenarioSpec {
  std::string name = "scenario";
  DatasetKind kind = DatasetKind::Stationing;
  double temperatureC = 21.0;

  DeflectionCoeffs alphaLowerCalib;
  DeflectionCoeffs alphaUpperCalib;
  double complianceScale = 1.0;  // a0 *= scale at stationing time
  double backlashShift = 0.0;    // a1 += shift at stationing time
  DeflectionCoeffs offFamilyLower;  // additive, outside the drift null space
  DeflectionCoeffs offFamilyUpper;

  EnvironmentModel environment;
  Eigen::Vector3d biasBase = Eigen::Vector3d::Zero();
  Eigen::Vector3d biasColumn = Eigen::Vector3d::Zero();

  bool noise = false;
  Eigen::Vector3d accelNoiseDensity =
      Eigen::Vector3d(9.645e-5, 9.759e-5, 1.387e-4);  // (m/s^2)/sqrt(Hz)
  double accelAveragingSec = 10.0;
  double positionNoiseSigma = 0.5e-3;  // meters

  GridSpec grid;
  Pose worldTBase;  // true robot pose in the total-station frame

  // Identifiable perturbation of the arm transforms away from CAD; drawn
  // from armSeed so calibration and stationing datasets share one robot.
  double armPerturbTrans = 0.0;    // meters
  double armPerturbRotDeg = 0.0;   // degrees
  std::uint64_t armSeed = 1000003;

  DeflectionConvention convention = DeflectionConvention::LinearCompliance;
};

/// Coefficients in effect when this dataset is recorded: the calibration
/// values under the drift (compliance scale, backlash shift) plus any
/// off-family perturbation. Calibration datasets use scale 1 / shift 0.
DeflectionCoeffs currentAlpha(const DeflectionCoeffs& calib, double scale,
                              double shift, const DeflectionCoeffs& offFamily);

/// True arm transforms for the scenario (CAD plus the seeded perturbation,
/// translations kept orthogonal to each joint axis).
std::vector<Pose> scenarioArmTransforms(const ScenarioSpec& spec,
                                        const RobotModel& model);

struct TruthRecord {
  int id = 0;
  double tiltRoll = 0.0;
  double tiltPitch = 0.0;
  Eigen::Vector3d truePosition = Eigen::Vector3d::Zero();
};

struct GroundTruth {
  std::uint64_t seed = 0;
  Pose worldTBase;
  Eigen::Vector3d gBase = Eigen::Vector3d::Zero();
  Eigen::Vector3d biasBase = Eigen::Vector3d::Zero();
  Eigen::Vector3d biasColumn = Eigen::Vector3d::Zero();
  DeflectionCoeffs alphaCalibLower, alphaCalibUpper;
  DeflectionCoeffs alphaCurrentLower, alphaCurrentUpper;
  std::vector<Pose> armTransforms;
  std::vector<TruthRecord> records;
};

struct SimulatedDataset {
  std::vector<MeasurementRecord> records;
  GroundTruth truth;
};

/// Base tilt (roll, pitch) produced by the environment at a configuration.
std::pair<double, double> environmentTilt(const EnvironmentModel& env,
                                          const RobotModel& model,
                                          const JointConfiguration& cfg);

/// Forward-simulates one record: torques and overlap, model deflection
/// rotations, environment tilt, accelerometer readings and the reflector
/// position, with optional sensor noise.
struct SimulatedPoint {
  MeasurementRecord record;
  TruthRecord truth;
};
SimulatedPoint simulatePoint(const ScenarioSpec& spec, const RobotModel& model,
                             const JointConfiguration& cfg, RecordTag tag,
                             int id, std::span<const Pose> armTruth,
                             const DeflectionCoeffs& alphaLower,
                             const DeflectionCoeffs& alphaUpper,
                             std::mt19937_64& rng);

/// Deterministic given (spec, model, seed). Evaluation records carry no
/// total-station position; their true positions live in the ground truth.
SimulatedDataset generateDataset(const ScenarioSpec& spec,
                                 const RobotModel& model, std::uint64_t seed);

}  // namespace chainstation
