// Copyright 2026 The aoisched Authors
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

// Command-line front end: one subcommand per experiment mode.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "aoisched/experiment.hpp"

namespace {

namespace ex = aoisched::experiment;
namespace fs = std::filesystem;

struct CommonFlags {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

int report_error(const std::optional<fs::path>& out_dir, const nlohmann::json& report, int code) {
  std::cerr << report.dump(2) << "\n";
  if (out_dir) {
    try {
      aoisched::io::atomic_write(*out_dir / "error.json", report.dump(2) + "\n");
    } catch (const std::exception&) {
    }
  }
  return code;
}

int run_mode(ex::Mode mode, const CommonFlags& flags, const CLI::App& sub) {
  std::optional<fs::path> out_dir;
  if (!flags.out.empty()) out_dir = fs::path(flags.out);
  try {
    ex::ExperimentConfig cfg = ex::parse_config(flags.config, mode);
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    if (sub.count("--seed")) seed = flags.seed;
    if (sub.count("--threads")) threads = flags.threads;
    ex::apply_overrides(cfg, seed, threads, out_dir);
    out_dir = cfg.out_dir;
    const ex::RunReport report = ex::run(cfg);
    std::cout << report.manifest.at("results").dump(2) << "\n";
    return report.exit_code;
  } catch (const ex::ConfigError& e) {
    return report_error(out_dir, ex::error_report("config", "invalid configuration", e.errors()),
                        ex::kExitConfig);
  } catch (const std::exception& e) {
    return report_error(out_dir, ex::error_report("runtime", e.what()), ex::kExitFailure);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scheduling experiments for two-age status-update sources"};
  app.set_version_flag("--version", std::string(ex::kToolName) + " " + ex::kToolVersion);
  app.require_subcommand(1);

  CommonFlags flags;
  int exit_code = 0;
  for (ex::Mode mode : ex::kModes) {
    CLI::App* sub = app.add_subcommand(ex::mode_name(mode));
    sub->add_option("--config", flags.config, "JSON experiment config")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", flags.out, "output directory (overrides the config)");
    sub->add_option("--seed", flags.seed, "random seed (overrides the config)");
    sub->add_option("--threads", flags.threads, "worker threads, 0 = all cores");
    sub->callback([mode, &flags, sub, &exit_code] { exit_code = run_mode(mode, flags, *sub); });
  }

  CLI11_PARSE(app, argc, argv);
  return exit_code;
}
