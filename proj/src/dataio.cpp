#include "chainstation/dataio.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace chainstation {

using Json = nlohmann::ordered_json;

namespace {

// --- generic json helpers -------------------------------------------------

const Json& field(const Json& j, const char* name, const std::string& ctx) {
  auto it = j.find(name);
  if (it == j.end()) {
    throw ValidationError(ctx + ": missing field '" + name + "'");
  }
  return *it;
}

double numberField(const Json& j, const char* name, const std::string& ctx) {
  const Json& f = field(j, name, ctx);
  if (!f.is_number()) {
    throw ValidationError(ctx + ": field '" + name + "' must be a number");
  }
  const double v = f.get<double>();
  if (!std::isfinite(v)) {
    throw ValidationError(ctx + ": field '" + name + "' is not finite");
  }
  return v;
}

Json vec3ToJson(const Eigen::Vector3d& v) { return Json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3FromJson(const Json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != 3) {
    throw ValidationError(ctx + ": expected a 3-element array");
  }
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) {
      throw ValidationError(ctx + ": component " + std::to_string(i) +
                            " is not a number");
    }
    v(i) = j[static_cast<std::size_t>(i)].get<double>();
  }
  if (!v.allFinite()) {
    throw ValidationError(ctx + ": non-finite vector");
  }
  return v;
}

Json vecToJson(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd vecFromJson(const Json& j, const std::string& ctx) {
  if (!j.is_array()) throw ValidationError(ctx + ": expected an array");
  Eigen::VectorXd v(static_cast<int>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) {
      throw ValidationError(ctx + ": component " + std::to_string(i) +
                            " is not a number");
    }
    v(static_cast<int>(i)) = j[i].get<double>();
  }
  if (!v.allFinite()) throw ValidationError(ctx + ": non-finite vector");
  return v;
}

Json poseToJson(const Pose& p) {
  const Eigen::Matrix3d& r = p.rotation.matrix();
  Json rows = Json::array();
  for (int i = 0; i < 3; ++i) {
    rows.push_back(Json::array({r(i, 0), r(i, 1), r(i, 2)}));
  }
  Json j;
  j["rotation"] = rows;
  j["translation"] = vec3ToJson(p.translation);
  return j;
}

Pose poseFromJson(const Json& j, const std::string& ctx) {
  const Json& rows = field(j, "rotation", ctx);
  if (!rows.is_array() || rows.size() != 3) {
    throw ValidationError(ctx + ": rotation must be a 3x3 array");
  }
  Eigen::Matrix3d m;
  for (int i = 0; i < 3; ++i) {
    const Json& row = rows[static_cast<std::size_t>(i)];
    if (!row.is_array() || row.size() != 3) {
      throw ValidationError(ctx + ": rotation must be a 3x3 array");
    }
    for (int c = 0; c < 3; ++c) {
      m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  if (!m.allFinite()) throw ValidationError(ctx + ": non-finite rotation");
  Rotation r(m);
  if (r.orthonormalityError() > 1e-6 || m.determinant() < 0.0) {
    throw ValidationError(ctx + ": rotation is not orthonormal with det +1");
  }
  if (r.orthonormalityError() > 1e-12) r = r.orthonormalized();
  return Pose(r, vec3FromJson(field(j, "translation", ctx), ctx + ".translation"));
}

Json coeffsToJson(const DeflectionCoeffs& c) {
  Json j;
  j["roll"] = vec3ToJson(c.roll);
  j["pitch"] = vec3ToJson(c.pitch);
  return j;
}

DeflectionCoeffs coeffsFromJson(const Json& j, const std::string& ctx) {
  DeflectionCoeffs c;
  c.roll = vec3FromJson(field(j, "roll", ctx), ctx + ".roll");
  c.pitch = vec3FromJson(field(j, "pitch", ctx), ctx + ".pitch");
  return c;
}

void checkSchemaVersion(const Json& j, const std::string& ctx) {
  const Json& v = field(j, "schema_version", ctx);
  if (!v.is_number_integer() || v.get<int>() != 1) {
    throw ValidationError(ctx + ": unsupported schema_version (expected 1)");
  }
}

std::string tagToString(RecordTag tag) { return tagName(tag); }

RecordTag tagFromString(const std::string& s, const std::string& ctx) {
  if (s == "calibration") return RecordTag::Calibration;
  if (s == "stationing") return RecordTag::Stationing;
  if (s == "evaluation") return RecordTag::Evaluation;
  throw ValidationError(ctx + ": unknown tag '" + s + "'");
}

Json parseJsonText(const std::string& text, const std::string& ctx) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(ctx + ": parse error at byte " + std::to_string(e.byte) +
                  ": " + e.what());
  }
}

std::string dumpJson(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace

// --- dataset ---------------------------------------------------------------

std::string serializeDataset(const DatasetFile& file) {
  Json j;
  j["schema_version"] = file.schemaVersion;
  j["meta"] = {{"name", file.meta.name},
               {"temperature_c", file.meta.temperatureC},
               {"notes", file.meta.notes}};
  j["robot_model"] = file.robotModelRef;
  Json records = Json::array();
  for (const auto& rec : file.records) {
    Json r;
    r["id"] = rec.id;
    r["tag"] = tagToString(rec.tag);
    r["joints"] = {{"extension", rec.joints.extension},
                   {"arm_angles", vecToJson(rec.joints.armAngles)}};
    r["accel_base"] = vec3ToJson(rec.accelBase);
    r["accel_column"] = vec3ToJson(rec.accelColumn);
    if (rec.totalStationPosition) {
      r["total_station_position"] = vec3ToJson(*rec.totalStationPosition);
    } else {
      r["total_station_position"] = nullptr;
    }
    records.push_back(std::move(r));
  }
  j["records"] = std::move(records);
  return dumpJson(j);
}

DatasetFile parseDataset(const std::string& text) {
  const Json j = parseJsonText(text, "dataset");
  checkSchemaVersion(j, "dataset");
  DatasetFile file;
  file.schemaVersion = 1;
  const Json& meta = field(j, "meta", "dataset");
  file.meta.name = field(meta, "name", "dataset.meta").get<std::string>();
  file.meta.temperatureC = numberField(meta, "temperature_c", "dataset.meta");
  file.meta.notes = meta.value("notes", std::string());
  file.robotModelRef = field(j, "robot_model", "dataset").get<std::string>();

  const Json& records = field(j, "records", "dataset");
  if (!records.is_array()) {
    throw ValidationError("dataset: records must be an array");
  }
  std::set<int> ids;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string ctx = "dataset.records[" + std::to_string(i) + "]";
    const Json& r = records[i];
    MeasurementRecord rec;
    rec.id = static_cast<int>(numberField(r, "id", ctx));
    if (!ids.insert(rec.id).second) {
      throw ValidationError(ctx + ": duplicate record id " +
                            std::to_string(rec.id));
    }
    rec.tag = tagFromString(field(r, "tag", ctx).get<std::string>(), ctx);
    const Json& joints = field(r, "joints", ctx);
    rec.joints.extension = numberField(joints, "extension", ctx + ".joints");
    rec.joints.armAngles =
        vecFromJson(field(joints, "arm_angles", ctx + ".joints"),
                    ctx + ".joints.arm_angles");
    rec.accelBase = vec3FromJson(field(r, "accel_base", ctx), ctx + ".accel_base");
    rec.accelColumn =
        vec3FromJson(field(r, "accel_column", ctx), ctx + ".accel_column");
    const Json& pos = field(r, "total_station_position", ctx);
    if (!pos.is_null()) {
      rec.totalStationPosition =
          vec3FromJson(pos, ctx + ".total_station_position");
    }
    if (rec.tag != RecordTag::Evaluation && !rec.totalStationPosition) {
      throw ValidationError(ctx + ": tag '" + tagToString(rec.tag) +
                            "' requires total_station_position");
    }
    file.records.push_back(std::move(rec));
  }
  return file;
}

void saveDataset(const std::string& path, const DatasetFile& file) {
  atomicWriteFile(path, serializeDataset(file));
}

DatasetFile loadDataset(const std::string& path) {
  return parseDataset(readFile(path));
}

// --- ground truth ------------------------------------------------------

std::string serializeTruth(const GroundTruth& truth) {
  Json j;
  j["schema_version"] = 1;
  j["seed"] = truth.seed;
  j["world_t_base"] = poseToJson(truth.worldTBase);
  j["g_base"] = vec3ToJson(truth.gBase);
  j["bias_base"] = vec3ToJson(truth.biasBase);
  j["bias_column"] = vec3ToJson(truth.biasColumn);
  j["alpha_calibration"] = {{"lower", coeffsToJson(truth.alphaCalibLower)},
                            {"upper", coeffsToJson(truth.alphaCalibUpper)}};
  j["alpha_current"] = {{"lower", coeffsToJson(truth.alphaCurrentLower)},
                        {"upper", coeffsToJson(truth.alphaCurrentUpper)}};
  Json arms = Json::array();
  for (const auto& p : truth.armTransforms) arms.push_back(poseToJson(p));
  j["arm_transforms"] = std::move(arms);
  Json records = Json::array();
  for (const auto& r : truth.records) {
    records.push_back({{"id", r.id},
                       {"tilt_roll", r.tiltRoll},
                       {"tilt_pitch", r.tiltPitch},
                       {"true_position", vec3ToJson(r.truePosition)}});
  }
  j["records"] = std::move(records);
  return dumpJson(j);
}

GroundTruth parseTruth(const std::string& text) {
  const Json j = parseJsonText(text, "truth");
  checkSchemaVersion(j, "truth");
  GroundTruth t;
  t.seed = field(j, "seed", "truth").get<std::uint64_t>();
  t.worldTBase = poseFromJson(field(j, "world_t_base", "truth"), "truth.world_t_base");
  t.gBase = vec3FromJson(field(j, "g_base", "truth"), "truth.g_base");
  t.biasBase = vec3FromJson(field(j, "bias_base", "truth"), "truth.bias_base");
  t.biasColumn =
      vec3FromJson(field(j, "bias_column", "truth"), "truth.bias_column");
  const Json& ac = field(j, "alpha_calibration", "truth");
  t.alphaCalibLower = coeffsFromJson(field(ac, "lower", "truth"), "truth.alpha_calibration.lower");
  t.alphaCalibUpper = coeffsFromJson(field(ac, "upper", "truth"), "truth.alpha_calibration.upper");
  const Json& cur = field(j, "alpha_current", "truth");
  t.alphaCurrentLower = coeffsFromJson(field(cur, "lower", "truth"), "truth.alpha_current.lower");
  t.alphaCurrentUpper = coeffsFromJson(field(cur, "upper", "truth"), "truth.alpha_current.upper");
  for (const auto& p : field(j, "arm_transforms", "truth")) {
    t.armTransforms.push_back(poseFromJson(p, "truth.arm_transforms"));
  }
  for (const auto& r : field(j, "records", "truth")) {
    TruthRecord tr;
    tr.id = static_cast<int>(numberField(r, "id", "truth.records"));
    tr.tiltRoll = numberField(r, "tilt_roll", "truth.records");
    tr.tiltPitch = numberField(r, "tilt_pitch", "truth.records");
    tr.truePosition = vec3FromJson(field(r, "true_position", "truth.records"),
                                   "truth.records.true_position");
    t.records.push_back(tr);
  }
  return t;
}

void saveTruth(const std::string& path, const GroundTruth& truth) {
  atomicWriteFile(path, serializeTruth(truth));
}

GroundTruth loadTruth(const std::string& path) {
  return parseTruth(readFile(path));
}

// --- calibration ---------------------------------------------------------

std::string serializeCalibration(const CalibrationSet& calib,
                                 const ConvergenceReport* report) {
  Json j;
  j["schema_version"] = 1;
  Json arms = Json::array();
  for (const auto& p : calib.armTransforms) arms.push_back(poseToJson(p));
  j["arm_transforms"] = std::move(arms);
  j["beta"] = {{"lower", coeffsToJson(calib.betaLower)},
               {"upper", coeffsToJson(calib.betaUpper)}};
  if (report) {
    j["report"] = {{"status", report->status},
                   {"iterations", report->iterations},
                   {"accepted_steps", report->acceptedSteps},
                   {"initial_error", report->initialError},
                   {"final_error", report->finalError}};
  }
  return dumpJson(j);
}

CalibrationSet parseCalibration(const std::string& text) {
  const Json j = parseJsonText(text, "calibration");
  checkSchemaVersion(j, "calibration");
  CalibrationSet c;
  for (const auto& p : field(j, "arm_transforms", "calibration")) {
    c.armTransforms.push_back(poseFromJson(p, "calibration.arm_transforms"));
  }
  const Json& beta = field(j, "beta", "calibration");
  c.betaLower = coeffsFromJson(field(beta, "lower", "calibration.beta"),
                               "calibration.beta.lower");
  c.betaUpper = coeffsFromJson(field(beta, "upper", "calibration.beta"),
                               "calibration.beta.upper");
  return c;
}

void saveCalibration(const std::string& path, const CalibrationSet& calib,
                     const ConvergenceReport* report) {
  atomicWriteFile(path, serializeCalibration(calib, report));
}

CalibrationSet loadCalibration(const std::string& path) {
  return parseCalibration(readFile(path));
}

std::string serializeVjmParams(const VjmParams& params) {
  Json j;
  j["schema_version"] = 1;
  j["compliance"] = {
      {"lower", Json::array({params.complianceLower(0), params.complianceLower(1)})},
      {"upper", Json::array({params.complianceUpper(0), params.complianceUpper(1)})}};
  Json arms = Json::array();
  for (const auto& p : params.armTransforms) arms.push_back(poseToJson(p));
  j["arm_transforms"] = std::move(arms);
  return dumpJson(j);
}

VjmParams parseVjmParams(const std::string& text) {
  const Json j = parseJsonText(text, "vjm");
  checkSchemaVersion(j, "vjm");
  VjmParams p;
  const Json& comp = field(j, "compliance", "vjm");
  const Json& lo = field(comp, "lower", "vjm.compliance");
  const Json& up = field(comp, "upper", "vjm.compliance");
  p.complianceLower = Eigen::Vector2d(lo[0].get<double>(), lo[1].get<double>());
  p.complianceUpper = Eigen::Vector2d(up[0].get<double>(), up[1].get<double>());
  for (const auto& a : field(j, "arm_transforms", "vjm")) {
    p.armTransforms.push_back(poseFromJson(a, "vjm.arm_transforms"));
  }
  return p;
}

void saveVjmParams(const std::string& path, const VjmParams& params) {
  atomicWriteFile(path, serializeVjmParams(params));
}

VjmParams loadVjmParams(const std::string& path) {
  return parseVjmParams(readFile(path));
}

// --- file helpers ----------------------------------------------------------

void atomicWriteFile(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoError("cannot open '" + tmp.string() + "' for writing");
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
      throw IoError("write failed for '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    throw IoError("rename '" + tmp.string() + "' -> '" + target.string() +
                  "' failed: " + ec.message());
  }
}

std::string readFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open '" + path + "' for reading");
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// --- metrics -----------------------------------------------------------

double percentile(std::vector<double> values, double p) {
  if (values.empty()) {
    throw ArgumentError("percentile: empty sample");
  }
  if (p < 0.0 || p > 1.0) {
    throw ArgumentError("percentile: p outside [0, 1]");
  }
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  const double frac = h - static_cast<double>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

std::string renderCell(double r95Xy, double maxXy, double r95Z, double maxZ) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.1f(%.1f)|%.1f(%.1f)", r95Xy, maxXy, r95Z,
                maxZ);
  return std::string(buf);
}

namespace {

XyHistogram makeHistogram(const std::vector<double>& xyMm, double binWidth) {
  XyHistogram h;
  h.binWidthMm = binWidth;
  if (xyMm.empty()) return h;
  const double maxV = *std::max_element(xyMm.begin(), xyMm.end());
  const int bins = std::max(1, static_cast<int>(std::ceil(maxV / binWidth)) +
                                   (std::fmod(maxV, binWidth) == 0.0 ? 1 : 0));
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : xyMm) {
    int b = static_cast<int>(std::floor(v / binWidth));
    b = std::min(b, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

}  // namespace

ErrorReport computeMetrics(std::span<const PredictionEntry> predictions,
                           std::span<const TruthPositionEntry> truth,
                           const std::string& method,
                           const std::string& dataset) {
  std::map<int, Eigen::Vector3d> truthById;
  for (const auto& t : truth) truthById[t.id] = t.position;

  ErrorReport report;
  report.method = method;
  report.dataset = dataset;

  std::vector<double> xy;
  std::vector<double> z;
  std::map<long long, std::vector<std::size_t>> byHeight;  // micrometer key
  double sumMs = 0.0;
  for (const auto& p : predictions) {
    auto it = truthById.find(p.id);
    if (it == truthById.end()) {
      throw ArgumentError("computeMetrics: no truth entry for prediction id " +
                          std::to_string(p.id));
    }
    const Eigen::Vector3d e = (p.position - it->second) * 1000.0;  // mm
    RecordError re;
    re.id = p.id;
    re.extension = p.extension;
    re.exMm = e.x();
    re.eyMm = e.y();
    re.ezMm = e.z();
    re.xyMm = std::hypot(e.x(), e.y());
    re.zMm = std::abs(e.z());
    xy.push_back(re.xyMm);
    z.push_back(re.zMm);
    byHeight[static_cast<long long>(std::llround(p.extension * 1e6))].push_back(
        report.records.size());
    report.records.push_back(re);
    sumMs += p.solveMs;
    report.timing.maxSolveMs = std::max(report.timing.maxSolveMs, p.solveMs);
  }
  if (report.records.empty()) {
    throw ArgumentError("computeMetrics: no predictions");
  }
  report.count = static_cast<int>(report.records.size());
  report.r95XyMm = percentile(xy, 0.95);
  report.maxXyMm = *std::max_element(xy.begin(), xy.end());
  report.r95ZMm = percentile(z, 0.95);
  report.maxZMm = *std::max_element(z.begin(), z.end());
  report.timing.present = true;
  report.timing.meanSolveMs = sumMs / report.count;

  for (const auto& [key, idxs] : byHeight) {
    HeightGroupMetrics g;
    g.extension = static_cast<double>(key) / 1e6;
    g.count = static_cast<int>(idxs.size());
    std::vector<double> gxy, gz;
    for (std::size_t i : idxs) {
      gxy.push_back(report.records[i].xyMm);
      gz.push_back(report.records[i].zMm);
    }
    g.r95XyMm = percentile(gxy, 0.95);
    g.maxXyMm = *std::max_element(gxy.begin(), gxy.end());
    g.r95ZMm = percentile(gz, 0.95);
    g.maxZMm = *std::max_element(gz.begin(), gz.end());
    g.histogram = makeHistogram(gxy, 0.5);
    report.perHeight.push_back(std::move(g));
  }
  return report;
}

std::string serializeReport(const ErrorReport& report, bool includeTiming) {
  Json j;
  j["schema_version"] = 1;
  j["method"] = report.method;
  j["dataset"] = report.dataset;
  j["overall"] = {{"count", report.count},
                  {"r95_xy_mm", report.r95XyMm},
                  {"max_xy_mm", report.maxXyMm},
                  {"r95_z_mm", report.r95ZMm},
                  {"max_z_mm", report.maxZMm},
                  {"cell", renderCell(report.r95XyMm, report.maxXyMm,
                                      report.r95ZMm, report.maxZMm)}};
  Json heights = Json::array();
  for (const auto& g : report.perHeight) {
    Json counts = Json::array();
    for (int c : g.histogram.counts) counts.push_back(c);
    heights.push_back({{"extension_m", g.extension},
                       {"count", g.count},
                       {"r95_xy_mm", g.r95XyMm},
                       {"max_xy_mm", g.maxXyMm},
                       {"r95_z_mm", g.r95ZMm},
                       {"max_z_mm", g.maxZMm},
                       {"cell", renderCell(g.r95XyMm, g.maxXyMm, g.r95ZMm,
                                           g.maxZMm)},
                       {"histogram_xy",
                        {{"bin_width_mm", g.histogram.binWidthMm},
                         {"counts", std::move(counts)}}}});
  }
  j["per_height"] = std::move(heights);
  Json records = Json::array();
  for (const auto& r : report.records) {
    records.push_back({{"id", r.id},
                       {"extension_m", r.extension},
                       {"ex_mm", r.exMm},
                       {"ey_mm", r.eyMm},
                       {"ez_mm", r.ezMm},
                       {"xy_mm", r.xyMm},
                       {"z_mm", r.zMm}});
  }
  j["records"] = std::move(records);
  if (includeTiming && report.timing.present) {
    j["timing"] = {{"mean_solve_ms", report.timing.meanSolveMs},
                   {"max_solve_ms", report.timing.maxSolveMs}};
  }
  return dumpJson(j);
}

std::string renderReportTable(std::span<const ErrorReport> reports) {
  std::ostringstream os;
  os << "R95_xy(max_xy)|R95_z(max_z), millimeters\n";
  for (const auto& r : reports) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-24s %s  (n=%d)\n", r.method.c_str(),
                  renderCell(r.r95XyMm, r.maxXyMm, r.r95ZMm, r.maxZMm).c_str(),
                  r.count);
    os << line;
    for (const auto& g : r.perHeight) {
      std::snprintf(line, sizeof(line), "  height %.2f m           %s  (n=%d)\n",
                    g.extension,
                    renderCell(g.r95XyMm, g.maxXyMm, g.r95ZMm, g.maxZMm).c_str(),
                    g.count);
      os << line;
    }
  }
  return os.str();
}

std::string renderErrorsCsv(const ErrorReport& report) {
  std::ostringstream os;
  os << "id,extension_m,ex_mm,ey_mm,ez_mm,xy_mm,z_mm\n";
  for (const auto& r : report.records) {
    char line[200];
    std::snprintf(line, sizeof(line), "%d,%.6f,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  r.id, r.extension, r.exMm, r.eyMm, r.ezMm, r.xyMm, r.zMm);
    os << line;
  }
  return os.str();
}

std::string renderHistogramsCsv(std::span<const ErrorReport> reports) {
  std::ostringstream os;
  os << "method,extension_m,bin_lo_mm,bin_hi_mm,count\n";
  for (const auto& r : reports) {
    for (const auto& g : r.perHeight) {
      for (std::size_t b = 0; b < g.histogram.counts.size(); ++b) {
        char line[160];
        std::snprintf(line, sizeof(line), "%s,%.6f,%.2f,%.2f,%d\n",
                      r.method.c_str(), g.extension,
                      static_cast<double>(b) * g.histogram.binWidthMm,
                      static_cast<double>(b + 1) * g.histogram.binWidthMm,
                      g.histogram.counts[b]);
        os << line;
      }
    }
  }
  return os.str();
}

// --- config -----------------------------------------------------------

namespace {

Json massPointToJson(const MassPoint& m) {
  return Json{{"kg", m.kg}, {"com", vec3ToJson(m.com)}};
}

MassPoint massPointFromJson(const Json& j, const std::string& ctx) {
  MassPoint m;
  m.kg = numberField(j, "kg", ctx);
  if (m.kg < 0.0) throw ValidationError(ctx + ": mass must be >= 0");
  m.com = vec3FromJson(field(j, "com", ctx), ctx + ".com");
  return m;
}

std::string axisToString(Axis a) {
  switch (a) {
    case Axis::X: return "x";
    case Axis::Y: return "y";
    case Axis::Z: return "z";
  }
  return "?";
}

Axis axisFromString(const std::string& s, const std::string& ctx) {
  if (s == "x") return Axis::X;
  if (s == "y") return Axis::Y;
  if (s == "z") return Axis::Z;
  throw ValidationError(ctx + ": unknown axis '" + s + "'");
}

Json robotToJson(const RobotModel& m) {
  Json j;
  j["name"] = m.name;
  j["nominal_base_col"] = poseToJson(m.nominalBaseCol);
  j["col_seg1_offset"] = vec3ToJson(m.colSeg1Offset);
  j["seg1_seg2_offset"] = vec3ToJson(m.seg1Seg2Offset);
  j["extension_max"] = m.extensionMax;
  j["overlap"] = {{"at_zero", m.overlapAtZero},
                  {"slope", m.overlapSlope},
                  {"min", m.overlapMin}};
  Json arm = Json::array();
  for (const auto& joint : m.arm) {
    arm.push_back({{"offset", poseToJson(joint.offset)},
                   {"axis", axisToString(joint.axis)}});
  }
  j["arm"] = std::move(arm);
  j["reflector_offset"] = vec3ToJson(m.reflectorOffset);
  j["mount_col_accel_base"] = poseToJson(m.mountColAccelBase);
  j["mount_seg2_accel_column"] = poseToJson(m.mountSeg2AccelColumn);
  Json links = Json::array();
  for (const auto& l : m.masses.armLinks) links.push_back(massPointToJson(l));
  j["masses"] = {{"seg1", massPointToJson(m.masses.seg1)},
                 {"seg2", massPointToJson(m.masses.seg2)},
                 {"arm_links", std::move(links)},
                 {"payload", massPointToJson(m.masses.payload)}};
  return j;
}

RobotModel robotFromJson(const Json& j) {
  RobotModel m;
  const std::string ctx = "config.robot";
  m.name = field(j, "name", ctx).get<std::string>();
  m.nominalBaseCol = poseFromJson(field(j, "nominal_base_col", ctx), ctx);
  m.colSeg1Offset = vec3FromJson(field(j, "col_seg1_offset", ctx), ctx);
  m.seg1Seg2Offset = vec3FromJson(field(j, "seg1_seg2_offset", ctx), ctx);
  m.extensionMax = numberField(j, "extension_max", ctx);
  const Json& ov = field(j, "overlap", ctx);
  m.overlapAtZero = numberField(ov, "at_zero", ctx + ".overlap");
  m.overlapSlope = numberField(ov, "slope", ctx + ".overlap");
  m.overlapMin = numberField(ov, "min", ctx + ".overlap");
  if (m.overlapMin <= 0.0) {
    throw ValidationError(ctx + ": overlap.min must be > 0");
  }
  for (const auto& joint : field(j, "arm", ctx)) {
    ArmJoint aj;
    aj.offset = poseFromJson(field(joint, "offset", ctx + ".arm"), ctx + ".arm");
    aj.axis = axisFromString(field(joint, "axis", ctx + ".arm").get<std::string>(),
                             ctx + ".arm");
    m.arm.push_back(aj);
  }
  if (m.arm.empty()) throw ValidationError(ctx + ": arm needs >= 1 joint");
  m.reflectorOffset = vec3FromJson(field(j, "reflector_offset", ctx), ctx);
  m.mountColAccelBase = poseFromJson(field(j, "mount_col_accel_base", ctx), ctx);
  m.mountSeg2AccelColumn =
      poseFromJson(field(j, "mount_seg2_accel_column", ctx), ctx);
  const Json& masses = field(j, "masses", ctx);
  m.masses.seg1 = massPointFromJson(field(masses, "seg1", ctx), ctx + ".masses.seg1");
  m.masses.seg2 = massPointFromJson(field(masses, "seg2", ctx), ctx + ".masses.seg2");
  for (const auto& l : field(masses, "arm_links", ctx)) {
    m.masses.armLinks.push_back(massPointFromJson(l, ctx + ".masses.arm_links"));
  }
  m.masses.payload =
      massPointFromJson(field(masses, "payload", ctx), ctx + ".masses.payload");
  return m;
}

Json estimatorToJson(const EstimatorConfig& e) {
  Json j;
  j["noise"] = {{"position_sigma", e.noise.positionSigma},
                {"accel_density", vec3ToJson(e.noise.accelDensity)},
                {"accel_averaging_sec", e.noise.accelAveragingSec},
                {"grav_align_sigma", e.noise.gravAlignSigma},
                {"hard_weight", e.noise.hardWeight}};
  j["priors"] = {{"world_tilt_half_width", e.priors.worldTiltHalfWidth},
                 {"world_tilt_sigma", e.priors.worldTiltSigma},
                 {"base_tilt_half_width", e.priors.baseTiltHalfWidth},
                 {"base_tilt_sigma", e.priors.baseTiltSigma},
                 {"bias_half_width", e.priors.biasHalfWidth},
                 {"bias_sigma", e.priors.biasSigma},
                 {"arm_trans_half_width", e.priors.armTransHalfWidth},
                 {"arm_rot_half_width", e.priors.armRotHalfWidth},
                 {"arm_band_sigma", e.priors.armBandSigma},
                 {"arm_center_trans_sigma", e.priors.armCenterTransSigma},
                 {"arm_center_rot_sigma", e.priors.armCenterRotSigma},
                 {"deflection_prior_rel_sigma", e.priors.deflectionPriorRelSigma}};
  const char* solverKind =
      e.solver.linearSolver == LinearSolverKind::Dense
          ? "dense"
          : (e.solver.linearSolver == LinearSolverKind::Sparse ? "sparse"
                                                               : "auto");
  j["solver"] = {{"max_iterations", e.solver.maxIterations},
                 {"lambda_init", e.solver.lambdaInit},
                 {"lambda_max", e.solver.lambdaMax},
                 {"relative_error_tol", e.solver.relativeErrorTol},
                 {"step_norm_tol", e.solver.stepNormTol},
                 {"fd_step", e.solver.fdStep},
                 {"linear_solver", solverKind},
                 {"sparse_threshold_dim", e.solver.sparseThresholdDim}};
  j["convention"] = e.convention == DeflectionConvention::Literal
                        ? "literal"
                        : "linear-compliance";
  j["coeff_init_s"] = e.coeffInitS;
  j["min_stationing_points"] = e.minStationingPoints;
  return j;
}

EstimatorConfig estimatorFromJson(const Json& j) {
  EstimatorConfig e;
  if (j.contains("noise")) {
    const Json& n = j["noise"];
    e.noise.positionSigma = n.value("position_sigma", e.noise.positionSigma);
    if (n.contains("accel_density")) {
      e.noise.accelDensity =
          vec3FromJson(n["accel_density"], "config.estimator.noise.accel_density");
    }
    e.noise.accelAveragingSec =
        n.value("accel_averaging_sec", e.noise.accelAveragingSec);
    e.noise.gravAlignSigma = n.value("grav_align_sigma", e.noise.gravAlignSigma);
    e.noise.hardWeight = n.value("hard_weight", e.noise.hardWeight);
  }
  if (j.contains("priors")) {
    const Json& p = j["priors"];
    e.priors.worldTiltHalfWidth =
        p.value("world_tilt_half_width", e.priors.worldTiltHalfWidth);
    e.priors.worldTiltSigma = p.value("world_tilt_sigma", e.priors.worldTiltSigma);
    e.priors.baseTiltHalfWidth =
        p.value("base_tilt_half_width", e.priors.baseTiltHalfWidth);
    e.priors.baseTiltSigma = p.value("base_tilt_sigma", e.priors.baseTiltSigma);
    e.priors.biasHalfWidth = p.value("bias_half_width", e.priors.biasHalfWidth);
    e.priors.biasSigma = p.value("bias_sigma", e.priors.biasSigma);
    e.priors.armTransHalfWidth =
        p.value("arm_trans_half_width", e.priors.armTransHalfWidth);
    e.priors.armRotHalfWidth =
        p.value("arm_rot_half_width", e.priors.armRotHalfWidth);
    e.priors.armBandSigma = p.value("arm_band_sigma", e.priors.armBandSigma);
    e.priors.armCenterTransSigma =
        p.value("arm_center_trans_sigma", e.priors.armCenterTransSigma);
    e.priors.armCenterRotSigma =
        p.value("arm_center_rot_sigma", e.priors.armCenterRotSigma);
    e.priors.deflectionPriorRelSigma =
        p.value("deflection_prior_rel_sigma", e.priors.deflectionPriorRelSigma);
  }
  if (j.contains("solver")) {
    const Json& s = j["solver"];
    e.solver.maxIterations = s.value("max_iterations", e.solver.maxIterations);
    e.solver.lambdaInit = s.value("lambda_init", e.solver.lambdaInit);
    e.solver.lambdaMax = s.value("lambda_max", e.solver.lambdaMax);
    e.solver.relativeErrorTol =
        s.value("relative_error_tol", e.solver.relativeErrorTol);
    e.solver.stepNormTol = s.value("step_norm_tol", e.solver.stepNormTol);
    e.solver.fdStep = s.value("fd_step", e.solver.fdStep);
    const std::string kind = s.value("linear_solver", std::string("auto"));
    if (kind == "dense") {
      e.solver.linearSolver = LinearSolverKind::Dense;
    } else if (kind == "sparse") {
      e.solver.linearSolver = LinearSolverKind::Sparse;
    } else if (kind == "auto") {
      e.solver.linearSolver = LinearSolverKind::Auto;
    } else {
      throw ValidationError("config.estimator.solver.linear_solver: unknown '" +
                            kind + "'");
    }
    e.solver.sparseThresholdDim =
        s.value("sparse_threshold_dim", e.solver.sparseThresholdDim);
  }
  const std::string conv = j.value("convention", std::string("linear-compliance"));
  if (conv == "literal") {
    e.convention = DeflectionConvention::Literal;
  } else if (conv == "linear-compliance") {
    e.convention = DeflectionConvention::LinearCompliance;
  } else {
    throw ValidationError("config.estimator.convention: unknown '" + conv + "'");
  }
  e.coeffInitS = j.value("coeff_init_s", e.coeffInitS);
  e.minStationingPoints = j.value("min_stationing_points", e.minStationingPoints);
  return e;
}

std::string environmentKindToString(EnvironmentKind k) {
  switch (k) {
    case EnvironmentKind::Flat: return "flat";
    case EnvironmentKind::ConstantTilt: return "constant-tilt";
    case EnvironmentKind::LoadDependentTilt: return "load-dependent-tilt";
    case EnvironmentKind::Seesaw: return "seesaw";
  }
  return "?";
}

EnvironmentKind environmentKindFromString(const std::string& s,
                                          const std::string& ctx) {
  if (s == "flat") return EnvironmentKind::Flat;
  if (s == "constant-tilt") return EnvironmentKind::ConstantTilt;
  if (s == "load-dependent-tilt") return EnvironmentKind::LoadDependentTilt;
  if (s == "seesaw") return EnvironmentKind::Seesaw;
  throw ValidationError(ctx + ": unknown environment kind '" + s + "'");
}

Json scenarioToJson(const ScenarioSpec& s) {
  Json j;
  j["name"] = s.name;
  j["kind"] = s.kind == DatasetKind::Calibration ? "calibration" : "stationing";
  j["temperature_c"] = s.temperatureC;
  j["alpha"] = {{"lower", coeffsToJson(s.alphaLowerCalib)},
                {"upper", coeffsToJson(s.alphaUpperCalib)}};
  j["drift"] = {{"compliance_scale", s.complianceScale},
                {"backlash_shift", s.backlashShift}};
  j["off_family"] = {{"lower", coeffsToJson(s.offFamilyLower)},
                     {"upper", coeffsToJson(s.offFamilyUpper)}};
  j["environment"] = {{"kind", environmentKindToString(s.environment.kind)},
                      {"roll", s.environment.roll},
                      {"pitch", s.environment.pitch},
                      {"roll_compliance", s.environment.rollCompliance},
                      {"pitch_compliance", s.environment.pitchCompliance},
                      {"seesaw_angle", s.environment.seesawAngle},
                      {"seesaw_threshold", s.environment.seesawThreshold}};
  j["bias_base"] = vec3ToJson(s.biasBase);
  j["bias_column"] = vec3ToJson(s.biasColumn);
  j["noise"] = {{"enabled", s.noise},
                {"accel_density", vec3ToJson(s.accelNoiseDensity)},
                {"accel_averaging_sec", s.accelAveragingSec},
                {"position_sigma", s.positionNoiseSigma}};
  Json exts = Json::array();
  for (double e : s.grid.extensions) exts.push_back(e);
  j["grid"] = {{"extensions", std::move(exts)},
               {"arm_grid_x", s.grid.armGridX},
               {"arm_grid_y", s.grid.armGridY},
               {"up_layer", s.grid.upLayer},
               {"down_layer", s.grid.downLayer},
               {"q0_min", s.grid.q0Min},
               {"q0_max", s.grid.q0Max},
               {"q1_min", s.grid.q1Min},
               {"q1_max", s.grid.q1Max},
               {"q2_up", s.grid.q2Up},
               {"q2_down", s.grid.q2Down},
               {"stationing_extension", s.grid.stationingExtension},
               {"stationing_count", s.grid.stationingCount}};
  j["world_t_base"] = poseToJson(s.worldTBase);
  j["arm_perturb"] = {{"trans", s.armPerturbTrans},
                      {"rot_deg", s.armPerturbRotDeg},
                      {"seed", s.armSeed}};
  j["convention"] = s.convention == DeflectionConvention::Literal
                        ? "literal"
                        : "linear-compliance";
  return j;
}

ScenarioSpec scenarioFromJson(const Json& j) {
  ScenarioSpec s;
  const std::string ctx = "config.scenario";
  s.name = j.value("name", s.name);
  const std::string kind = j.value("kind", std::string("stationing"));
  if (kind == "calibration") {
    s.kind = DatasetKind::Calibration;
  } else if (kind == "stationing") {
    s.kind = DatasetKind::Stationing;
  } else {
    throw ValidationError(ctx + ": unknown kind '" + kind + "'");
  }
  s.temperatureC = j.value("temperature_c", s.temperatureC);
  if (j.contains("alpha")) {
    s.alphaLowerCalib = coeffsFromJson(field(j["alpha"], "lower", ctx), ctx);
    s.alphaUpperCalib = coeffsFromJson(field(j["alpha"], "upper", ctx), ctx);
  }
  if (j.contains("drift")) {
    s.complianceScale = j["drift"].value("compliance_scale", s.complianceScale);
    s.backlashShift = j["drift"].value("backlash_shift", s.backlashShift);
  }
  if (j.contains("off_family")) {
    s.offFamilyLower = coeffsFromJson(field(j["off_family"], "lower", ctx), ctx);
    s.offFamilyUpper = coeffsFromJson(field(j["off_family"], "upper", ctx), ctx);
  }
  if (j.contains("environment")) {
    const Json& env = j["environment"];
    s.environment.kind = environmentKindFromString(
        env.value("kind", std::string("flat")), ctx + ".environment");
    s.environment.roll = env.value("roll", 0.0);
    s.environment.pitch = env.value("pitch", 0.0);
    s.environment.rollCompliance = env.value("roll_compliance", 0.0);
    s.environment.pitchCompliance = env.value("pitch_compliance", 0.0);
    s.environment.seesawAngle = env.value("seesaw_angle", 0.0);
    s.environment.seesawThreshold = env.value("seesaw_threshold", 0.0);
  }
  if (j.contains("bias_base")) {
    s.biasBase = vec3FromJson(j["bias_base"], ctx + ".bias_base");
  }
  if (j.contains("bias_column")) {
    s.biasColumn = vec3FromJson(j["bias_column"], ctx + ".bias_column");
  }
  if (j.contains("noise")) {
    const Json& n = j["noise"];
    s.noise = n.value("enabled", s.noise);
    if (n.contains("accel_density")) {
      s.accelNoiseDensity =
          vec3FromJson(n["accel_density"], ctx + ".noise.accel_density");
    }
    s.accelAveragingSec = n.value("accel_averaging_sec", s.accelAveragingSec);
    s.positionNoiseSigma = n.value("position_sigma", s.positionNoiseSigma);
  }
  if (j.contains("grid")) {
    const Json& g = j["grid"];
    if (g.contains("extensions")) {
      s.grid.extensions.clear();
      for (const auto& e : g["extensions"]) {
        s.grid.extensions.push_back(e.get<double>());
      }
    }
    s.grid.armGridX = g.value("arm_grid_x", s.grid.armGridX);
    s.grid.armGridY = g.value("arm_grid_y", s.grid.armGridY);
    s.grid.upLayer = g.value("up_layer", s.grid.upLayer);
    s.grid.downLayer = g.value("down_layer", s.grid.downLayer);
    s.grid.q0Min = g.value("q0_min", s.grid.q0Min);
    s.grid.q0Max = g.value("q0_max", s.grid.q0Max);
    s.grid.q1Min = g.value("q1_min", s.grid.q1Min);
    s.grid.q1Max = g.value("q1_max", s.grid.q1Max);
    s.grid.q2Up = g.value("q2_up", s.grid.q2Up);
    s.grid.q2Down = g.value("q2_down", s.grid.q2Down);
    s.grid.stationingExtension =
        g.value("stationing_extension", s.grid.stationingExtension);
    s.grid.stationingCount = g.value("stationing_count", s.grid.stationingCount);
  }
  if (j.contains("world_t_base")) {
    s.worldTBase = poseFromJson(j["world_t_base"], ctx + ".world_t_base");
  }
  if (j.contains("arm_perturb")) {
    const Json& a = j["arm_perturb"];
    s.armPerturbTrans = a.value("trans", s.armPerturbTrans);
    s.armPerturbRotDeg = a.value("rot_deg", s.armPerturbRotDeg);
    s.armSeed = a.value("seed", s.armSeed);
  }
  const std::string conv = j.value("convention", std::string("linear-compliance"));
  s.convention = conv == "literal" ? DeflectionConvention::Literal
                                   : DeflectionConvention::LinearCompliance;
  return s;
}

}  // namespace

AppConfig defaultConfig() {
  AppConfig c;
  c.robot = defaultRobotModel();

  ScenarioSpec& s = c.scenario;
  s.name = "demo";
  s.alphaLowerCalib.roll = Eigen::Vector3d(5.0e-6, 1.2e-3, 2.0e-2);
  s.alphaLowerCalib.pitch = Eigen::Vector3d(6.0e-6, 1.0e-3, 1.5e-2);
  s.alphaUpperCalib.roll = Eigen::Vector3d(4.0e-6, 0.9e-3, 2.0e-2);
  s.alphaUpperCalib.pitch = Eigen::Vector3d(5.0e-6, 0.8e-3, 1.8e-2);
  s.complianceScale = 1.25;
  s.backlashShift = 4.0e-4;
  s.environment.kind = EnvironmentKind::LoadDependentTilt;
  s.environment.rollCompliance = 3.5e-5;
  s.environment.pitchCompliance = 2.5e-5;
  s.biasBase = Eigen::Vector3d(0.010, -0.015, 0.020);
  s.biasColumn = Eigen::Vector3d(-0.020, 0.010, 0.015);
  s.worldTBase = Pose(rotationFromRpy(Eigen::Vector3d(0.010, -0.008, 0.40)),
                      Eigen::Vector3d(5.0, 2.0, 0.30));
  s.armPerturbTrans = 1.5e-3;
  s.armPerturbRotDeg = 0.15;
  return c;
}

AppConfig parseConfig(const std::string& text) {
  const Json j = parseJsonText(text, "config");
  checkSchemaVersion(j, "config");
  AppConfig c = defaultConfig();
  if (j.contains("robot")) {
    c.robot = robotFromJson(j["robot"]);
  }
  if (j.contains("estimator")) {
    c.estimator = estimatorFromJson(j["estimator"]);
  }
  if (j.contains("scenario")) {
    c.scenario = scenarioFromJson(j["scenario"]);
  }
  if (j.contains("paths")) {
    const Json& p = j["paths"];
    c.paths.dataset = p.value("dataset", c.paths.dataset);
    c.paths.truth = p.value("truth", c.paths.truth);
    c.paths.calibrationDataset =
        p.value("calibration_dataset", c.paths.calibrationDataset);
    c.paths.calibration = p.value("calibration", c.paths.calibration);
    c.paths.vjmCalibration = p.value("vjm_calibration", c.paths.vjmCalibration);
    c.paths.outDir = p.value("out_dir", c.paths.outDir);
  }
  if (j.contains("report")) {
    c.reportIncludeTiming = j["report"].value("include_timing", false);
  }
  c.threads = j.value("threads", 0);
  return c;
}

AppConfig loadConfig(const std::string& path) {
  try {
    return parseConfig(readFile(path));
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("config '") + path + "': " + e.what());
  } catch (const IoError& e) {
    throw ConfigError(std::string("config '") + path + "': " + e.what());
  }
}

std::string serializeConfig(const AppConfig& config) {
  Json j;
  j["schema_version"] = 1;
  j["robot"] = robotToJson(config.robot);
  j["estimator"] = estimatorToJson(config.estimator);
  j["scenario"] = scenarioToJson(config.scenario);
  j["paths"] = {{"dataset", config.paths.dataset},
                {"truth", config.paths.truth},
                {"calibration_dataset", config.paths.calibrationDataset},
                {"calibration", config.paths.calibration},
                {"vjm_calibration", config.paths.vjmCalibration},
                {"out_dir", config.paths.outDir}};
  j["report"] = {{"include_timing", config.reportIncludeTiming}};
  j["threads"] = config.threads;
  return dumpJson(j);
}

// --- pipeline ----------------------------------------------------------

namespace {

void parallelFor(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 0) {
    threads = static_cast<int>(std::thread::hardware_concurrency());
  }
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex errMutex;
  std::exception_ptr firstError;
  auto worker = [&] {
    while (true) {
      const int i = next.fetch_add(1);
      if (i >= n) break;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(errMutex);
        if (!firstError) firstError = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (firstError) std::rethrow_exception(firstError);
}

std::string joinPath(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

std::string truthPathFor(const AppConfig& config) {
  if (!config.paths.truth.empty()) return config.paths.truth;
  std::string p = config.paths.dataset;
  const std::string suffix = ".json";
  if (p.size() > suffix.size() &&
      p.compare(p.size() - suffix.size(), suffix.size(), suffix) == 0) {
    return p.substr(0, p.size() - suffix.size()) + ".truth.json";
  }
  return p + ".truth.json";
}

}  // namespace

SimulateOutputs runSimulate(const AppConfig& config, std::uint64_t seed,
                            const std::string& outDir) {
  const SimulatedDataset sim =
      generateDataset(config.scenario, config.robot, seed);
  DatasetFile file;
  file.meta.name = config.scenario.name;
  file.meta.temperatureC = config.scenario.temperatureC;
  file.robotModelRef = config.robot.name;
  file.records = sim.records;

  SimulateOutputs out;
  out.datasetPath = joinPath(outDir, "dataset.json");
  out.truthPath = joinPath(outDir, "dataset.truth.json");
  saveDataset(out.datasetPath, file);
  saveTruth(out.truthPath, sim.truth);
  return out;
}

CalibrateOutputs runCalibrate(const AppConfig& config, const std::string& outDir) {
  const DatasetFile dataset = loadDataset(config.paths.calibrationDataset);
  CalibrateOutputs out;
  out.fg = calibrate(dataset.records, config.robot, config.estimator);
  out.vjm = vjmCalibrate(dataset.records, config.robot, config.estimator);
  out.calibrationPath = joinPath(outDir, "calibration.json");
  out.vjmCalibrationPath = joinPath(outDir, "vjm_calibration.json");
  saveCalibration(out.calibrationPath, out.fg.calibration, &out.fg.report);
  saveVjmParams(out.vjmCalibrationPath, out.vjm.params);
  return out;
}

std::vector<PredictionEntry> predictDataset(const AppConfig& config,
                                            const DatasetFile& dataset,
                                            const EvaluateOptions& options) {
  std::vector<MeasurementRecord> stationing;
  std::vector<MeasurementRecord> evals;
  for (const auto& rec : dataset.records) {
    if (rec.tag == RecordTag::Stationing) stationing.push_back(rec);
    if (rec.tag == RecordTag::Evaluation) evals.push_back(rec);
  }
  if (evals.empty()) {
    throw ValidationError("predictDataset: dataset has no evaluation records");
  }

  std::vector<PredictionEntry> predictions(evals.size());
  if (options.method == "fg") {
    const CalibrationSet calib = loadCalibration(config.paths.calibration);
    parallelFor(
        static_cast<int>(evals.size()), config.threads, [&](int i) {
          const auto t0 = std::chrono::steady_clock::now();
          const StationingSolution sol =
              stationAndEvaluate(stationing, evals[static_cast<std::size_t>(i)],
                                 calib, config.robot, config.estimator,
                                 options.ablation);
          const auto t1 = std::chrono::steady_clock::now();
          PredictionEntry& p = predictions[static_cast<std::size_t>(i)];
          p.id = evals[static_cast<std::size_t>(i)].id;
          p.position = sol.predictedPosition;
          p.extension = evals[static_cast<std::size_t>(i)].joints.extension;
          p.solveMs =
              std::chrono::duration<double, std::milli>(t1 - t0).count();
        });
  } else if (options.method == "vjm" || options.method == "vjm-bt") {
    const VjmParams params = loadVjmParams(config.paths.vjmCalibration);
    const BaselineMethod method = options.method == "vjm"
                                      ? BaselineMethod::Vjm
                                      : BaselineMethod::VjmBt;
    parallelFor(
        static_cast<int>(evals.size()), config.threads, [&](int i) {
          const auto t0 = std::chrono::steady_clock::now();
          const Eigen::Vector3d pos =
              baselinePredict(method, stationing,
                              evals[static_cast<std::size_t>(i)], params,
                              config.robot, config.estimator);
          const auto t1 = std::chrono::steady_clock::now();
          PredictionEntry& p = predictions[static_cast<std::size_t>(i)];
          p.id = evals[static_cast<std::size_t>(i)].id;
          p.position = pos;
          p.extension = evals[static_cast<std::size_t>(i)].joints.extension;
          p.solveMs =
              std::chrono::duration<double, std::milli>(t1 - t0).count();
        });
  } else {
    throw ConfigError("predictDataset: unknown method '" + options.method +
                      "' (want fg|vjm|vjm-bt)");
  }
  return predictions;
}

void runStation(const AppConfig& config, const EvaluateOptions& options,
                const std::string& outDir) {
  const DatasetFile dataset = loadDataset(config.paths.dataset);
  const std::vector<PredictionEntry> predictions =
      predictDataset(config, dataset, options);

  Json j;
  j["schema_version"] = 1;
  j["method"] = options.method;
  j["dataset"] = dataset.meta.name;
  Json arr = Json::array();
  for (const auto& p : predictions) {
    arr.push_back({{"id", p.id},
                   {"extension_m", p.extension},
                   {"position", vec3ToJson(p.position)}});
  }
  j["predictions"] = std::move(arr);
  atomicWriteFile(joinPath(outDir, "predictions.json"), dumpJson(j));

  std::ostringstream csv;
  csv << "id,extension_m,x_m,y_m,z_m\n";
  for (const auto& p : predictions) {
    char line[200];
    std::snprintf(line, sizeof(line), "%d,%.6f,%.9f,%.9f,%.9f\n", p.id,
                  p.extension, p.position.x(), p.position.y(), p.position.z());
    csv << line;
  }
  atomicWriteFile(joinPath(outDir, "predictions.csv"), csv.str());
}

namespace {

std::vector<TruthPositionEntry> truthEntriesFor(const GroundTruth& truth) {
  std::vector<TruthPositionEntry> out;
  for (const auto& r : truth.records) {
    out.push_back({r.id, r.truePosition});
  }
  return out;
}

}  // namespace

ErrorReport runEvaluate(const AppConfig& config, const EvaluateOptions& options,
                        const std::string& outDir) {
  const DatasetFile dataset = loadDataset(config.paths.dataset);
  const GroundTruth truth = loadTruth(truthPathFor(config));
  const std::vector<PredictionEntry> predictions =
      predictDataset(config, dataset, options);
  const std::vector<TruthPositionEntry> truthEntries = truthEntriesFor(truth);

  const std::string label =
      options.label.empty() ? options.method : options.label;
  const ErrorReport report =
      computeMetrics(predictions, truthEntries, label, dataset.meta.name);

  atomicWriteFile(joinPath(outDir, "report.json"),
                  serializeReport(report, config.reportIncludeTiming));
  const std::array<ErrorReport, 1> reports = {report};
  atomicWriteFile(joinPath(outDir, "report.txt"), renderReportTable(reports));
  atomicWriteFile(joinPath(outDir, "errors.csv"), renderErrorsCsv(report));
  atomicWriteFile(joinPath(outDir, "histograms.csv"),
                  renderHistogramsCsv(reports));
  return report;
}

std::vector<ErrorReport> runAblate(const AppConfig& config,
                                   const std::string& drop,
                                   const std::string& outDir) {
  struct Variant {
    std::string name;
    AblationSpec ablation;
  };
  const std::vector<Variant> all = {{"none", {false, false}},
                                    {"base", {true, false}},
                                    {"column", {false, true}},
                                    {"both", {true, true}}};
  std::vector<Variant> selected;
  if (drop.empty()) {
    selected = all;
  } else {
    bool found = false;
    for (const auto& v : all) {
      if (v.name == drop) {
        selected.push_back(v);
        found = true;
      }
    }
    if (!found) {
      throw ConfigError("ablate: unknown drop '" + drop +
                        "' (want none|base|column|both)");
    }
  }

  const DatasetFile dataset = loadDataset(config.paths.dataset);
  const GroundTruth truth = loadTruth(truthPathFor(config));
  const std::vector<TruthPositionEntry> truthEntries = truthEntriesFor(truth);

  std::vector<ErrorReport> reports;
  for (const auto& v : selected) {
    EvaluateOptions options;
    options.method = "fg";
    options.ablation = v.ablation;
    const std::vector<PredictionEntry> predictions =
        predictDataset(config, dataset, options);
    ErrorReport report = computeMetrics(predictions, truthEntries,
                                        "fg-drop-" + v.name, dataset.meta.name);
    atomicWriteFile(joinPath(outDir, "errors_" + v.name + ".csv"),
                    renderErrorsCsv(report));
    reports.push_back(std::move(report));
  }

  Json j;
  j["schema_version"] = 1;
  Json rows = Json::array();
  for (const auto& r : reports) {
    rows.push_back(parseJsonText(
        serializeReport(r, config.reportIncludeTiming), "report"));
  }
  j["rows"] = std::move(rows);
  atomicWriteFile(joinPath(outDir, "report.json"), dumpJson(j));
  atomicWriteFile(joinPath(outDir, "report.txt"), renderReportTable(reports));
  atomicWriteFile(joinPath(outDir, "histograms.csv"),
                  renderHistogramsCsv(reports));
  return reports;
}

}  // namespace chainstation
