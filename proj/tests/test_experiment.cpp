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

#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "aoisched/experiment.hpp"

namespace aoisched::experiment {
namespace {

const char* kReferenceArm = R"({"lambda": [0.75, 0.95, 0.65], "cost": [5, 5.5, 6], "A": 50})";
const char* kClasses = R"([{"name": "high", "lambda": [0.95, 0.98, 0.90], "cost": [7, 7, 7], "A": 3},
                           {"name": "low", "lambda": [0.60, 0.80, 0.55], "cost": [5, 5, 5], "A": 3}])";

class Scratch : public ::testing::Test {
 protected:
  void SetUp() override {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("aoisched-test-" + io::hex64((std::uint64_t{rd()} << 32) ^ rd()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  ExperimentConfig config(const std::string& text, const std::string& out = "out") {
    ExperimentConfig cfg = parse_config_json(json::parse(text));
    cfg.out_dir = dir_ / out;
    return cfg;
  }

  fs::path dir_;
};

std::vector<std::string> errors_of(const std::string& text) {
  try {
    parse_config_json(json::parse(text));
  } catch (const ConfigError& e) {
    return e.errors();
  }
  return {};
}

bool mentions(const std::vector<std::string>& errs, const std::string& needle) {
  for (const auto& e : errs)
    if (e.find(needle) != std::string::npos) return true;
  return false;
}

TEST(ParseConfig, MinimalSingleSourceConfig) {
  const auto cfg = parse_config_json(
      json::parse(std::string(R"({"mode": "solve-single", "gamma": 0.85, "arm": )") + kReferenceArm + "}"));
  EXPECT_EQ(cfg.mode, Mode::SolveSingle);
  ASSERT_EQ(cfg.classes.size(), 1u);
  EXPECT_EQ(cfg.classes[0].params.trunc_A, 50);
  EXPECT_TRUE(sense_joint_condition_holds(Discount(cfg.gamma), cfg.classes[0].params));
}

TEST(ParseConfig, RejectsProbabilityOrdering) {
  const auto errs = errors_of(
      R"({"mode": "solve-single", "gamma": 0.85, "arm": {"lambda": [0.6, 0.95, 0.7], "cost": [5, 5.5, 6], "A": 10}})");
  ASSERT_FALSE(errs.empty());
  EXPECT_TRUE(mentions(errs, "lambda2 <= lambda0 <= lambda1"));
}

TEST(ParseConfig, RejectsTooManyActiveArms) {
  const auto errs = errors_of(std::string(R"({"mode": "simulate", "gamma": 0.5, "N": [4, 2], "M": 2, "classes": )") +
                              kClasses + "}");
  EXPECT_TRUE(mentions(errs, "M=2 must be smaller than N=2"));
}

TEST(ParseConfig, CollectsAllErrors) {
  const auto errs = errors_of(R"({"mode": "solve-single", "gamma": 1.5, "colour": "red", "tol": -1})");
  EXPECT_TRUE(mentions(errs, "gamma"));
  EXPECT_TRUE(mentions(errs, "colour: unknown field"));
  EXPECT_TRUE(mentions(errs, "arm: required field is missing"));
  EXPECT_TRUE(mentions(errs, "tol"));
  EXPECT_GE(errs.size(), 4u);
}

TEST(ParseConfig, RejectsUnknownMode) {
  EXPECT_TRUE(mentions(errors_of(R"({"mode": "plot"})"), "unknown mode"));
}

TEST(ParseConfig, ModeMustMatchCommand) {
  const json j = json::parse(std::string(R"({"mode": "verify", "gamma": 0.5, "arm": )") + kReferenceArm + "}");
  EXPECT_THROW(parse_config_json(j, Mode::SolveSingle), ConfigError);
  EXPECT_EQ(parse_config_json(j, Mode::Verify).mode, Mode::Verify);
  json no_mode = j;
  no_mode.erase("mode");
  EXPECT_EQ(parse_config_json(no_mode, Mode::SolveSingle).mode, Mode::SolveSingle);
}

TEST(ParseConfig, ActiveRatioRoundsAndFloorsAtOne) {
  const auto cfg = parse_config_json(json::parse(
      std::string(R"({"mode": "simulate", "gamma": 0.9, "N": [4, 10], "M_ratio": 0.2, "classes": )") + kClasses + "}"));
  EXPECT_EQ(cfg.active_for(0), 1);
  EXPECT_EQ(cfg.active_for(1), 2);
  const auto arms = cfg.fleet(4);
  EXPECT_EQ(arms[0].params.lambda[0], 0.95);
  EXPECT_EQ(arms[1].params.lambda[0], 0.60);
  EXPECT_EQ(arms[2].params.lambda[0], 0.95);
}

TEST_F(Scratch, MissingAndMalformedFiles) {
  EXPECT_THROW(parse_config(dir_ / "absent.json"), ConfigError);
  EXPECT_THROW(parse_config(write("bad.json", "{ not json")), ConfigError);
}

TEST_F(Scratch, RequireCacheNeedsExistingDirectory) {
  const std::string text = std::string(R"({"mode": "whittle", "gamma": 0.5, "require_cache": true, "cache_dir": ")") +
                           (dir_ / "nope").string() + R"(", "classes": )" + kClasses + "}";
  EXPECT_TRUE(mentions(errors_of(text), "does not exist"));
}

TEST_F(Scratch, TruncationTableRun) {
  auto cfg = config(R"({"mode": "truncation-table", "gammas": [0.5, 0.7, 0.85, 0.9, 0.95],
                        "eps_hat": [1, 0.5, 0.1, 0.05, 0.01, 0.005, 0.001]})");
  const RunReport r = run(cfg);
  EXPECT_EQ(r.exit_code, 0);
  std::istringstream csv(io::read_file(cfg.out_dir / "truncation_table.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "gamma,eps_hat,A");
  std::vector<int> levels;
  while (std::getline(csv, line)) levels.push_back(std::stoi(line.substr(line.rfind(',') + 1)));
  const std::vector<int> expected{1,  2,  5,  6,  8,  9,  11, 4,  6,   10,  12,  17,  19,  23,  12,  16,  26, 31,
                                  41, 45, 55, 22, 29, 44, 51, 66, 73,  88,  59,  72,  104, 117, 149, 162, 194};
  EXPECT_EQ(levels, expected);
}

TEST_F(Scratch, SolveSingleArtifactsAndDigests) {
  auto cfg = config(std::string(R"({"mode": "solve-single", "gamma": 0.85, "arm": )") + kReferenceArm + "}");
  const RunReport r = run(cfg);
  EXPECT_EQ(r.exit_code, 0);
  for (const char* f : {"values.csv", "policy.csv", "thresholds.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(cfg.out_dir / f)) << f;
  const json manifest = json::parse(io::read_file(cfg.out_dir / "manifest.json"));
  EXPECT_EQ(manifest.at("version"), kToolVersion);
  EXPECT_EQ(manifest.at("config").at("gamma"), 0.85);
  ASSERT_EQ(manifest.at("outputs").size(), 3u);
  for (const auto& o : manifest.at("outputs"))
    EXPECT_EQ(o.at("digest"), io::file_digest(cfg.out_dir / o.at("file").get<std::string>()));
  EXPECT_TRUE(manifest.at("results").at("sense_joint_condition_holds").get<bool>());
  const json th = json::parse(io::read_file(cfg.out_dir / "thresholds.json"));
  EXPECT_EQ(th.at("rows").size(), 50u);
  EXPECT_EQ(th.at("unbounded_sentinel"), 51);
  std::istringstream values(io::read_file(cfg.out_dir / "values.csv"));
  std::string header, first;
  std::getline(values, header);
  std::getline(values, first);
  EXPECT_EQ(header, "monitor_age,bs_age,value");
  // Nine significant digits.
  const std::string v = first.substr(first.rfind(',') + 1);
  EXPECT_EQ(v.size() - (v.find('.') != std::string::npos ? 1 : 0), 9u);
}

TEST_F(Scratch, RerunIsByteIdentical) {
  const std::string text = std::string(R"({"mode": "simulate", "gamma": 0.5, "N": [3], "M": 1, "reps": 300,
                                           "K_max": 40, "seed": 9, "classes": )") + kClasses + "}";
  auto a = config(text, "a");
  auto b = config(text, "b");
  run(a);
  set_threads(2);
  b.threads = 2;
  run(b);
  set_threads(1);
  EXPECT_EQ(io::read_file(a.out_dir / "sim_results.csv"), io::read_file(b.out_dir / "sim_results.csv"));
  std::istringstream csv(io::read_file(a.out_dir / "sim_results.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 4);
}

TEST_F(Scratch, VerifyModeReportsChecks) {
  auto cfg = config(std::string(R"({"mode": "verify", "gamma": 0.85, "arm": )") + kReferenceArm + "}");
  const RunReport r = run(cfg);
  EXPECT_EQ(r.exit_code, kExitOk);
  const json rep = json::parse(io::read_file(cfg.out_dir / "verification.json"));
  EXPECT_TRUE(rep.at("all_passed").get<bool>());
  EXPECT_EQ(rep.at("checks").size(), 11u);
}

TEST_F(Scratch, ExactDpModeWritesGaps) {
  auto cfg = config(std::string(R"({"mode": "exact-dp", "gamma": 0.5, "N": 3, "M": 1, "reps": 2000,
                                    "classes": )") + kClasses + "}");
  const RunReport r = run(cfg);
  EXPECT_EQ(r.exit_code, 0);
  const std::string csv = io::read_file(cfg.out_dir / "exact_dp.csv");
  EXPECT_EQ(csv.rfind("policy,method,J,gap_percent,ci99_half_width,reps\njoint-dp,", 0), 0u);
  for (const char* p : {"\nwip,exact-evaluation,", "\nawip,exact-evaluation,", "\ngreedy,exact-evaluation,",
                        "\nrandom,monte-carlo,"})
    EXPECT_NE(csv.find(p), std::string::npos) << p;
  for (const auto& row : r.manifest.at("results").at("policies"))
    if (row.at("method") == "exact-evaluation") {
      EXPECT_GE(row.at("gap_percent").get<double>(), -1e-6);
    }
}

TEST_F(Scratch, IndexCacheIsReusedAndKeyed) {
  const std::string text = std::string(R"({"mode": "awip", "gamma": 0.5, "compare_exact": true, "cache_dir": ")") +
                           (dir_ / "cache").string() + R"(", "classes": )" + kClasses + "}";
  auto first = config(text, "first");
  const RunReport r1 = run(first);
  EXPECT_EQ(r1.manifest.at("cache").at("built"), 4);
  auto second = config(text, "second");
  const RunReport r2 = run(second);
  EXPECT_EQ(r2.manifest.at("cache").at("built"), 0);
  EXPECT_EQ(r2.manifest.at("cache").at("hits"), 4);
  EXPECT_EQ(io::read_file(first.out_dir / "index.csv"), io::read_file(second.out_dir / "index.csv"));
  for (const auto& e : fs::directory_iterator(dir_ / "cache"))
    EXPECT_EQ(e.path().string().find(".tmp-"), std::string::npos);

  const ArmParams p{{0.6, 0.8, 0.55}, {5, 5, 5}, 3};
  BisectionOptions opt;
  const std::string d1 = cache_digest(p, Discount(0.5), opt, IndexKind::Exact);
  opt.eps = 1e-5;
  EXPECT_NE(d1, cache_digest(p, Discount(0.5), opt, IndexKind::Exact));
  EXPECT_NE(d1, cache_digest(p, Discount(0.6), BisectionOptions{}, IndexKind::Exact));
  EXPECT_NE(d1, cache_digest(p, Discount(0.5), BisectionOptions{}, IndexKind::Approximate));
}

TEST_F(Scratch, CacheEntryWithForeignKeyIsRebuilt) {
  const ArmParams p{{0.6, 0.8, 0.55}, {5, 5, 5}, 3};
  IndexTableCache cache(dir_, false);
  const std::string key = cache_key_text(p, Discount(0.5), BisectionOptions{}, IndexKind::Exact);
  io::atomic_write(cache.path_for(key), json{{"key", "something else"}, {"table", json::object()}}.dump());
  const auto t = cache.get(p, Discount(0.5), BisectionOptions{}, IndexKind::Exact);
  EXPECT_EQ(cache.built(), 1);
  EXPECT_EQ(cache.hits(), 0);
  EXPECT_EQ(json::parse(io::read_file(cache.path_for(key))).at("key"), key);
  IndexTableCache strict(dir_ / "empty", true);
  EXPECT_THROW(strict.get(p, Discount(0.6), BisectionOptions{}, IndexKind::Exact), std::runtime_error);
}

TEST(Formatting, NineSignificantDigits) {
  EXPECT_EQ(io::format_number(1.0 / 3.0), "0.333333333");
  EXPECT_EQ(io::format_number(123456789.123), "123456789");
  EXPECT_EQ(io::format_number(-0.0), "0");
  EXPECT_EQ(io::format_number(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_TRUE(io::json_number(std::nan("")).is_null());
}

TEST(Digest, KnownVectors) {
  EXPECT_EQ(io::fnv1a64(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(io::fnv1a64("a"), 0xaf63dc4c8601ec8cull);
}

TEST(IndexTableJson, RoundTripIsLossless) {
  const ArmParams p{{0.95, 0.98, 0.90}, {7, 7, 7}, 5};
  const IndexTable t = approx_index_table(p, Discount(0.5));
  const IndexTable back = io::index_table_from_json(json::parse(io::index_table_to_json(t).dump()));
  EXPECT_EQ(back.index.raw(), t.index.raw());
  EXPECT_EQ(back.interpolated.raw(), t.interpolated.raw());
  EXPECT_EQ(back.active_action.raw(), t.active_action.raw());
  EXPECT_EQ(back.kind, IndexKind::Approximate);
}

}  // namespace
}  // namespace aoisched::experiment
