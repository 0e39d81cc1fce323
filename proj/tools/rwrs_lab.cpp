// Copyright 2026 The rwrs-lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// rwrs_lab: run, validate, constants, report.
// Exit codes: 0 all tests pass, 1 some experiment test failed, 2 usage or config error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "rwrs/experiment.hpp"

namespace {

constexpr int kPass = 0;
constexpr int kFail = 1;
constexpr int kUsage = 2;

void print_tests(const rwrs::Json& report) {
  for (const auto& t : report["tests"]) {
    const bool info = t.value("informational", false);
    std::printf("%-4s %-55s value=%-12.6g threshold=%.6g%s\n", t["pass"].get<bool>() ? "PASS" : "FAIL",
                t["name"].get<std::string>().c_str(), t["value"].get<double>(), t["threshold"].get<double>(),
                info ? " (informational)" : "");
  }
}

int print_report(const std::filesystem::path& dir) {
  const rwrs::Json report = rwrs::load_json_file((dir / "report.json").string());
  std::printf("experiment %s\n", report["experiment"].get<std::string>().c_str());
  print_tests(report);
  return report["passed"].get<bool>() ? kPass : kFail;
}

int execute(const rwrs::ExperimentConfig& cfg, std::string out, unsigned threads) {
  if (out.empty()) out = cfg.output;
  if (out.empty()) throw rwrs::ConfigError({"output directory required (--out or \"output\")"});
  const rwrs::RunManifest m = rwrs::run(cfg, out, threads);
  std::printf("wrote %zu files to %s in %.1f s\n", m.files.size(), out.c_str(), m.wall_time_seconds);
  return print_report(out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random walk in random scenery laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  unsigned threads = rwrs::default_threads();
  std::optional<rwrs::Seed> seed;

  auto* run = app.add_subcommand("run", "Run the experiment described by a config");
  run->add_option("--config", config_path, "Config file (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory (overrides the config)");
  run->add_option("--threads", threads, "Worker threads (speed only)")->check(CLI::PositiveNumber);
  run->add_option("--seed", seed, "Master seed (overrides the config)");

  auto* validate = app.add_subcommand("validate", "Check a config without simulating");
  validate->add_option("--config", config_path, "Config file (JSON)")->required();
  validate->add_option("--seed", seed, "Master seed (overrides the config)");

  auto* constants = app.add_subcommand("constants", "Compute the limit-law constants");
  constants->add_option("--config", config_path, "Optional config supplying base and scenery");
  constants->add_option("--out", out_dir, "Output directory")->required();
  constants->add_option("--threads", threads, "Worker threads (speed only)")->check(CLI::PositiveNumber);
  constants->add_option("--seed", seed, "Master seed");

  auto* report = app.add_subcommand("report", "Summarize report.json of a finished run");
  report->add_option("--out", out_dir, "Output directory of the run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kUsage;
  }

  try {
    if (*validate) {
      const auto diag = rwrs::validate_config(rwrs::load_json_file(config_path), seed);
      for (const auto& line : diag) std::printf("%s\n", line.c_str());
      return diag.empty() ? kPass : kUsage;
    }
    if (*run) return execute(rwrs::parse_config(rwrs::load_json_file(config_path), seed), out_dir, threads);
    if (*constants) {
      rwrs::Json j = config_path.empty() ? rwrs::Json{{"version", 1}, {"seed", 1}} : rwrs::load_json_file(config_path);
      j["experiment"] = "constants";
      return execute(rwrs::parse_config(j, seed), out_dir, threads);
    }
    if (*report) return print_report(out_dir);
  } catch (const rwrs::ConfigError& e) {
    for (const auto& line : e.diagnostics()) std::fprintf(stderr, "config error: %s\n", line.c_str());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kUsage;
}
