#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chainstation/baselines.hpp"
#include "chainstation/robot.hpp"
#include "chainstation/sim.hpp"
#include "chainstation/stationing.hpp"

namespace chainstation {

class IoError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

struct DatasetMeta {
  std::string name;
  double temperatureC = 21.0;
  std::string notes;
};

struct DatasetFile {
  int schemaVersion = 1;
  DatasetMeta meta;
  std::string robotModelRef;
  std::vector<MeasurementRecord> records;
};

// --- serialization -----------------------------------------------------

std::string serializeDataset(const DatasetFile& file);
DatasetFile parseDataset(const std::string& text);
void saveDataset(const std::string& path, const DatasetFile& file);
DatasetFile loadDataset(const std::string& path);

std::string serializeTruth(const GroundTruth& truth);
GroundTruth parseTruth(const std::string& text);
void saveTruth(const std::string& path, const GroundTruth& truth);
GroundTruth loadTruth(const std::string& path);

std::string serializeCalibration(const CalibrationSet& calib,
                                 const ConvergenceReport* report = nullptr);
CalibrationSet parseCalibration(const std::string& text);
void saveCalibration(const std::string& path, const CalibrationSet& calib,
                     const ConvergenceReport* report = nullptr);
CalibrationSet loadCalibration(const std::string& path);

std::string serializeVjmParams(const VjmParams& params);
VjmParams parseVjmParams(const std::string& text);
void saveVjmParams(const std::string& path, const VjmParams& params);
VjmParams loadVjmParams(const std::string& path);

/// Whole-file atomic write (temp file + rename).
void atomicWriteFile(const std::string& path, const std::string& content);
std::string readFile(const std::string& path);

// --- metrics ------------------------------------------------------------

struct PredictionEntry {
  int id = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double extension = 0.0;
  double solveMs = 0.0;
};

struct TruthPositionEntry {
  int id = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
};

struct RecordError {
  int id = 0;
  double extension = 0.0;
  double exMm = 0.0, eyMm = 0.0, ezMm = 0.0;
  double xyMm = 0.0, zMm = 0.0;
};

struct XyHistogram {
  double binWidthMm = 0.5;
  std::vector<int> counts;  // bins [0, w), [w, 2w), ...
};

struct HeightGroupMetrics {
  double extension = 0.0;
  int count = 0;
  double r95XyMm = 0.0, maxXyMm = 0.0, r95ZMm = 0.0, maxZMm = 0.0;
  XyHistogram histogram;
};

struct ErrorReport {
  std::string method;
  std::string dataset;
  std::vector<RecordError> records;
  int count = 0;
  double r95XyMm = 0.0, maxXyMm = 0.0, r95ZMm = 0.0, maxZMm = 0.0;
  std::vector<HeightGroupMetrics> perHeight;
  struct Timing {
    bool present = false;
    double meanSolveMs = 0.0;
    double maxSolveMs = 0.0;
  } timing;
};

/// Type-7 quantile: linear interpolation between closest order statistics.
double percentile(std::vector<double> values, double p);

/// Table cell "R95xy(maxxy)|R95z(maxz)" with one decimal, millimeters.
std::string renderCell(double r95Xy, double maxXy, double r95Z, double maxZ);

/// Errors in millimeters, aggregates and per-column-height histograms.
/// Prediction and truth ids must match one-to-one.
ErrorReport computeMetrics(std::span<const PredictionEntry> predictions,
                           std::span<const TruthPositionEntry> truth,
                           const std::string& method,
                           const std::string& dataset);

std::string serializeReport(const ErrorReport& report, bool includeTiming);
std::string renderReportTable(std::span<const ErrorReport> reports);
std::string renderErrorsCsv(const ErrorReport& report);
std::string renderHistogramsCsv(std::span<const ErrorReport> reports);

// --- configuration ------------------------------------------------------

struct AppPaths {
  std::string dataset = "dataset.json";
  std::string truth;  // defaults to dataset path with .truth.json
  std::string calibrationDataset = "calibration_dataset.json";
  std::string calibration = "calibration.json";
  std::string vjmCalibration = "vjm_calibration.json";
  std::string outDir = "out";
};

struct AppConfig {
  int schemaVersion = 1;
  RobotModel robot;
  EstimatorConfig estimator;
  ScenarioSpec scenario;
  AppPaths paths;
  bool reportIncludeTiming = false;
  int threads = 0;  // 0 = hardware concurrency
};

AppConfig defaultConfig();
AppConfig parseConfig(const std::string& text);
AppConfig loadConfig(const std::string& path);
std::string serializeConfig(const AppConfig& config);

// --- pipeline -----------------------------------------------------------

struct SimulateOutputs {
  std::string datasetPath;
  std::string truthPath;
};
/// Writes <name>.json and <name>.truth.json under outDir.
SimulateOutputs runSimulate(const AppConfig& config, std::uint64_t seed,
                            const std::string& outDir);

struct CalibrateOutputs {
  std::string calibrationPath;
  std::string vjmCalibrationPath;
  CalibrationResult fg;
  VjmCalibrationResult vjm;
};
/// Calibrates both the full model and the VJM baseline on the calibration
/// dataset and writes the two calibration files under outDir.
CalibrateOutputs runCalibrate(const AppConfig& config, const std::string& outDir);

struct EvaluateOptions {
  std::string method = "fg";  // fg | vjm | vjm-bt
  AblationSpec ablation;
  std::string label;  // row label override (used by ablate)
};

/// Predictions for every evaluation record of the dataset (parallel pool,
/// one independent solve per record for the fg method).
std::vector<PredictionEntry> predictDataset(const AppConfig& config,
                                            const DatasetFile& dataset,
                                            const EvaluateOptions& options);

/// station: predictions only (predictions.csv / predictions.json).
void runStation(const AppConfig& config, const EvaluateOptions& options,
                const std::string& outDir);

/// evaluate: predictions compared against the truth sidecar; writes
/// errors.csv, report.json, report.txt, histograms.csv.
ErrorReport runEvaluate(const AppConfig& config, const EvaluateOptions& options,
                        const std::string& outDir);

/// ablate: evaluate with accelerometer factors disabled; drop is one of
/// none|base|column|both or empty for all four rows.
std::vector<ErrorReport> runAblate(const AppConfig& config,
                                   const std::string& drop,
                                   const std::string& outDir);

}  // namespace chainstation
