#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <string>

#include "chainstation/dataio.hpp"

namespace {

void printErrorJson(const std::string& type, const std::string& message) {
  // Structured error on stderr; keep it one line for machine consumption.
  std::string escaped;
  for (char c : message) {
    if (c == '"' || c == '\\') escaped += '\\';
    if (c == '\n') {
      escaped += "\\n";
      continue;
    }
    escaped += c;
  }
  std::cerr << "{\"error\":{\"type\":\"" << type << "\",\"message\":\""
            << escaped << "\"}}" << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "chainstation: calibration, stationing and evaluation for a tracked "
      "base + telescoping column + arm kinematic chain"};
  app.require_subcommand(1);

  std::string configPath;
  std::string outDir;
  std::string method = "fg";
  std::string drop;
  std::uint64_t seed = 1;

  auto addCommon = [&](CLI::App* cmd) {
    cmd->add_option("--config", configPath, "Config JSON path")->required();
    cmd->add_option("--out", outDir, "Output directory (default from config)");
  };

  CLI::App* simulate =
      app.add_subcommand("simulate", "Generate a synthetic dataset + truth sidecar");
  addCommon(simulate);
  simulate->add_option("--seed", seed, "RNG seed");

  CLI::App* calibrateCmd =
      app.add_subcommand("calibrate", "Calibrate the model and the VJM baseline");
  addCommon(calibrateCmd);

  CLI::App* station =
      app.add_subcommand("station", "Predict evaluation points (no ground truth)");
  addCommon(station);
  station->add_option("--method", method, "fg|vjm|vjm-bt")
      ->check(CLI::IsMember({"fg", "vjm", "vjm-bt"}));

  CLI::App* evaluate =
      app.add_subcommand("evaluate", "Predict and score against the truth sidecar");
  addCommon(evaluate);
  evaluate->add_option("--method", method, "fg|vjm|vjm-bt")
      ->check(CLI::IsMember({"fg", "vjm", "vjm-bt"}));

  CLI::App* ablate =
      app.add_subcommand("ablate", "Evaluate with accelerometer factors dropped");
  addCommon(ablate);
  ablate->add_option("--drop", drop, "none|base|column|both (default: all rows)")
      ->check(CLI::IsMember({"none", "base", "column", "both"}));

  CLI11_PARSE(app, argc, argv);

  try {
    const chainstation::AppConfig config = chainstation::loadConfig(configPath);
    const std::string out = outDir.empty() ? config.paths.outDir : outDir;

    if (simulate->parsed()) {
      const auto artifacts = chainstation::runSimulate(config, seed, out);
      std::cout << "wrote " << artifacts.datasetPath << "\n"
                << "wrote " << artifacts.truthPath << "\n";
    } else if (calibrateCmd->parsed()) {
      const auto artifacts = chainstation::runCalibrate(config, out);
      std::cout << "wrote " << artifacts.calibrationPath << " ("
                << artifacts.fg.report.status << ", "
                << artifacts.fg.report.iterations << " iterations, error "
                << artifacts.fg.report.finalError << ")\n"
                << "wrote " << artifacts.vjmCalibrationPath << "\n";
    } else if (station->parsed()) {
      chainstation::EvaluateOptions options;
      options.method = method;
      chainstation::runStation(config, options, out);
      std::cout << "wrote " << out << "/predictions.json\n";
    } else if (evaluate->parsed()) {
      chainstation::EvaluateOptions options;
      options.method = method;
      const auto report = chainstation::runEvaluate(config, options, out);
      const std::array<chainstation::ErrorReport, 1> reports = {report};
      std::cout << chainstation::renderReportTable(reports);
    } else if (ablate->parsed()) {
      const auto reports = chainstation::runAblate(config, drop, out);
      std::cout << chainstation::renderReportTable(reports);
    }
  } catch (const chainstation::ConfigError& e) {
    printErrorJson("config", e.what());
    return 1;
  } catch (const chainstation::ValidationError& e) {
    printErrorJson("validation", e.what());
    return 1;
  } catch (const chainstation::IoError& e) {
    printErrorJson("io", e.what());
    return 1;
  } catch (const chainstation::CalibrationError& e) {
    printErrorJson("calibration", e.what());
    return 1;
  } catch (const chainstation::StationingError& e) {
    printErrorJson("stationing", e.what());
    return 1;
  } catch (const chainstation::DegenerateGeometryError& e) {
    printErrorJson("degenerate-geometry", e.what());
    return 1;
  } catch (const chainstation::SolveError& e) {
    printErrorJson("solve", e.what());
    return 1;
  } catch (const chainstation::Error& e) {
    printErrorJson("error", e.what());
    return 1;
  } catch (const std::exception& e) {
    printErrorJson("internal", e.what());
    return 1;
  }
  return 0;
}
