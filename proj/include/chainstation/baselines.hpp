#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

#include "chainstation/robot.hpp"
#include "chainstation/stationing.hpp"

namespace chainstation {

/// Virtual-joint-method parameters: one linear spring compliance per column
/// joint and axis (the springs sit at the same joints as the full model),
/// plus the arm transforms, calibrated once and kept fixed.
struct VjmParams {
  Eigen::Vector2d complianceLower = Eigen::Vector2d::Zero();  // (roll, pitch)
  Eigen::Vector2d complianceUpper = Eigen::Vector2d::Zero();
  std::vector<Pose> armTransforms;
};

struct VjmCalibrationResult {
  VjmParams params;
  ConvergenceReport report;
};

/// Least-squares fit of the linear compliances and arm transforms on a
/// calibration dataset: position factors and linear-spring deflection
/// factors only, rigid base, no accelerometers.
VjmCalibrationResult vjmCalibrate(std::span<const MeasurementRecord> records,
                                  const RobotModel& model,
                                  const EstimatorConfig& config);

enum class BaselineMethod { Vjm, VjmBt };

/// Base tilt angles (roll, pitch) read directly from a base accelerometer
/// sample, assuming zero bias; mount rotation is removed first.
std::pair<double, double> tiltFromAccelerometer(const Eigen::Vector3d& reading,
                                                const Rotation& mountRotation);

/// Classical stationing with the spring model: the world pose comes from a
/// Kabsch fit of the model-predicted stationing points to their measured
/// positions, then the evaluation point is extrapolated model-only. VjmBt
/// additionally tilts the base per record by the accelerometer tilt
/// relative to the mean over the stationing records.
Eigen::Vector3d baselinePredict(BaselineMethod method,
                                std::span<const MeasurementRecord> stationingRecords,
                                const MeasurementRecord& evaluationRecord,
                                const VjmParams& params, const RobotModel& model,
                                const EstimatorConfig& config);

}  // namespace chainstation
