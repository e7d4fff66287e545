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

// Experiment configuration, index-table cache and the per-mode pipelines
// behind the command-line tool.

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aoisched/io.hpp"
#include "aoisched/mdp_core.hpp"
#include "aoisched/rmab.hpp"
#include "aoisched/single_source.hpp"
#include "aoisched/whittle.hpp"

namespace aoisched::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kToolName = "aoisched";
inline constexpr const char* kToolVersion = "0.1.0";

enum class Mode { SolveSingle, TruncationTable, Whittle, Awip, Simulate, ExactDp, Verify };

inline constexpr std::array<Mode, 7> kModes = {Mode::SolveSingle, Mode::TruncationTable,
                                               Mode::Whittle,     Mode::Awip,
                                               Mode::Simulate,    Mode::ExactDp,
                                               Mode::Verify};

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::SolveSingle: return "solve-single";
    case Mode::TruncationTable: return "truncation-table";
    case Mode::Whittle: return "whittle";
    case Mode::Awip: return "awip";
    case Mode::Simulate: return "simulate";
    case Mode::ExactDp: return "exact-dp";
    case Mode::Verify: return "verify";
  }
  return "?";
}

inline std::optional<Mode> mode_from_name(const std::string& s) {
  for (Mode m : kModes)
    if (s == mode_name(m)) return m;
  return std::nullopt;
}

/// Every schema violation found in a config, as "field: reason" entries.
class ConfigError : public InvalidArgument {
 public:
  explicit ConfigError(std::vector<std::string> errors)
      : InvalidArgument(join(errors)), errors_(std::move(errors)) {}
  [[nodiscard]] const std::vector<std::string>& errors() const { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& errors) {
    std::string msg = "invalid config:";
    for (const auto& e : errors) msg += "\n  " + e;
    return msg;
  }
  std::vector<std::string> errors_;
};

struct ArmClass {
  std::string name;
  ArmParams params;
};

struct ExperimentConfig {
  Mode mode = Mode::SolveSingle;
  /// Config as read, with command-line overrides applied; echoed in the manifest.
  json echo;

  double gamma = 0.5;
  std::vector<ArmClass> classes;
  double tol = 1e-9;
  BisectionOptions bisection;

  std::vector<double> gammas;
  std::vector<double> eps_hats;

  double check_tolerance = 1e-8;
  int margin = 2;

  bool compare_exact = false;

  std::vector<int> fleet_sizes;
  std::vector<int> max_active;
  std::optional<double> active_ratio;
  std::vector<PolicyKind> policies;
  int replications = 10000;
  int horizon = 200;
  std::uint64_t seed = 1;
  TieBreak tie_break = TieBreak::SmallerId;
  ActivationRule rule = ActivationRule::Exactly;

  std::optional<fs::path> cache_dir;
  bool require_cache = false;
  unsigned threads = 1;
  fs::path out_dir = "out";

  /// M for the i-th entry of the fleet-size sweep.
  [[nodiscard]] int active_for(std::size_t i) const {
    if (active_ratio) {
      const long m = std::lround(*active_ratio * fleet_sizes.at(i));
      return static_cast<int>(std::max(1L, m));
    }
    return max_active.size() == 1 ? max_active.front() : max_active.at(i);
  }

  /// Arm i takes class i mod K, so a fleet is split evenly across classes.
  [[nodiscard]] std::vector<ArmSpec> fleet(int n) const {
    std::vector<ArmSpec> arms;
    for (int i = 0; i < n; ++i)
      arms.push_back({i, classes[static_cast<std::size_t>(i) % classes.size()].params, nullptr});
    return arms;
  }
};

namespace detail {

class Parser {
 public:
  explicit Parser(const json& root) : root_(root) {}

  std::vector<std::string> errors;

  void fail(const std::string& field, const std::string& why) { errors.push_back(field + ": " + why); }

  bool has(const char* key) const { return root_.contains(key); }

  void allow(std::initializer_list<const char*> keys) {
    for (const char* k : keys) known_.insert(k);
  }

  void reject_unknown() {
    for (const auto& [k, _] : root_.items())
      if (!known_.count(k)) fail(k, "unknown field");
  }

  template <typename T>
  std::optional<T> get(const char* key, bool required) {
    known_.insert(key);
    if (!root_.contains(key)) {
      if (required) fail(key, "required field is missing");
      return std::nullopt;
    }
    return convert<T>(root_.at(key), key);
  }

  template <typename T>
  std::optional<T> convert(const json& j, const std::string& field) {
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!j.is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!j.is_number_integer() && !j.is_number_unsigned())
          throw std::invalid_argument("expected an integer");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!j.is_boolean()) throw std::invalid_argument("expected true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!j.is_string()) throw std::invalid_argument("expected a string");
      }
      return j.get<T>();
    } catch (const std::exception& e) {
      fail(field, e.what());
      return std::nullopt;
    }
  }

  /// Accepts either a scalar or a non-empty list.
  template <typename T>
  std::vector<T> list(const char* key, bool required) {
    known_.insert(key);
    std::vector<T> out;
    if (!root_.contains(key)) {
      if (required) fail(key, "required field is missing");
      return out;
    }
    const json& j = root_.at(key);
    if (!j.is_array()) {
      if (auto v = convert<T>(j, key)) out.push_back(*v);
      return out;
    }
    if (j.empty()) fail(key, "list must not be empty");
    for (std::size_t i = 0; i < j.size(); ++i)
      if (auto v = convert<T>(j[i], std::string(key) + "[" + std::to_string(i) + "]"))
        out.push_back(*v);
    return out;
  }

  std::optional<ArmClass> arm(const json& j, const std::string& field, const std::string& fallback) {
    if (!j.is_object()) {
      fail(field, "expected an object with lambda, cost and A");
      return std::nullopt;
    }
    ArmClass c;
    c.name = fallback;
    bool ok = true;
    for (const auto& [k, _] : j.items())
      if (k != "lambda" && k != "cost" && k != "A" && k != "name") {
        fail(field + "." + k, "unknown field");
        ok = false;
      }
    auto triple = [&](const char* key, std::array<double, 3>& dst) {
      if (!j.contains(key)) {
        fail(field + "." + key, "required field is missing");
        ok = false;
        return;
      }
      const json& v = j.at(key);
      if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() ||
          !v[2].is_number()) {
        fail(field + "." + key, "expected three numbers");
        ok = false;
        return;
      }
      for (int u = 0; u < 3; ++u) dst[u] = v[u].get<double>();
    };
    triple("lambda", c.params.lambda);
    triple("cost", c.params.cost);
    if (!j.contains("A")) {
      fail(field + ".A", "required field is missing");
      ok = false;
    } else if (!j.at("A").is_number_integer()) {
      fail(field + ".A", "expected an integer");
      ok = false;
    } else {
      c.params.trunc_A = j.at("A").get<int>();
    }
    if (j.contains("name")) {
      if (j.at("name").is_string())
        c.name = j.at("name").get<std::string>();
      else
        fail(field + ".name", "expected a string");
    }
    if (!ok) return std::nullopt;
    for (const auto& e : c.params.validation_errors()) {
      fail(field, e);
      ok = false;
    }
    if (!ok) return std::nullopt;
    return c;
  }

 private:
  const json& root_;
  std::set<std::string> known_;
};

inline bool open_unit(double x) { return x > 0.0 && x < 1.0; }

}  // namespace detail

/// Validates a parsed JSON document. Throws ConfigError listing every problem.
inline ExperimentConfig parse_config_json(const json& root,
                                          std::optional<Mode> mode_override = std::nullopt) {
  if (!root.is_object()) throw ConfigError({"<root>: expected a JSON object"});
  detail::Parser ps(root);
  ExperimentConfig cfg;
  cfg.echo = root;

  auto mode_text = ps.get<std::string>("mode", !mode_override.has_value());
  if (mode_text) {
    if (auto m = mode_from_name(*mode_text))
      cfg.mode = *m;
    else
      ps.fail("mode", "unknown mode '" + *mode_text + "'");
    if (mode_override && mode_from_name(*mode_text) && *mode_override != cfg.mode)
      ps.fail("mode", std::string("config declares '") + *mode_text + "' but the command is '" +
                          mode_name(*mode_override) + "'");
  }
  if (mode_override) cfg.mode = *mode_override;
  cfg.echo["mode"] = mode_name(cfg.mode);
  const Mode mode = cfg.mode;
  const bool single = mode == Mode::SolveSingle || mode == Mode::Verify;
  const bool index_mode = mode == Mode::Whittle || mode == Mode::Awip;
  const bool fleet_mode = mode == Mode::Simulate || mode == Mode::ExactDp;

  ps.allow({"description"});
  if (auto out = ps.get<std::string>("out", false)) cfg.out_dir = *out;
  if (auto t = ps.get<int>("threads", false)) {
    if (*t < 0)
      ps.fail("threads", "must be >= 0");
    else
      cfg.threads = static_cast<unsigned>(*t);
  }

  if (mode != Mode::TruncationTable) {
    if (auto g = ps.get<double>("gamma", true)) {
      cfg.gamma = *g;
      if (!detail::open_unit(*g)) ps.fail("gamma", "must lie in (0,1)");
    }
  }

  // Arm definitions.
  ps.allow({"arm", "classes"});
  if (single || index_mode || fleet_mode) {
    const bool has_arm = ps.has("arm");
    const bool has_classes = ps.has("classes");
    if (single && has_classes) ps.fail("classes", "this mode takes a single 'arm'");
    if (fleet_mode && has_arm) ps.fail("arm", "this mode takes a list of 'classes'");
    if (has_arm && has_classes) ps.fail("arm", "give either 'arm' or 'classes', not both");
    if (has_arm && !fleet_mode) {
      if (auto c = ps.arm(root.at("arm"), "arm", "arm")) cfg.classes.push_back(*c);
    } else if (has_classes && !single) {
      const json& list = root.at("classes");
      if (!list.is_array() || list.empty()) {
        ps.fail("classes", "expected a non-empty list of arm objects");
      } else {
        for (std::size_t i = 0; i < list.size(); ++i)
          if (auto c = ps.arm(list[i], "classes[" + std::to_string(i) + "]",
                              "class" + std::to_string(i)))
            cfg.classes.push_back(*c);
      }
    } else if (!has_arm && !has_classes) {
      ps.fail(fleet_mode ? "classes" : "arm", "required field is missing");
    }
  }

  if (auto t = ps.get<double>("tol", false)) {
    cfg.tol = *t;
    if (!(*t > 0.0)) ps.fail("tol", "must be positive");
  }

  if (index_mode || fleet_mode) {
    if (auto e = ps.get<double>("eps", false)) {
      cfg.bisection.eps = *e;
      if (!(*e > 0.0)) ps.fail("eps", "must be positive");
    }
    if (auto k = ps.get<int>("k_max", false)) {
      cfg.bisection.k_max = *k;
      if (*k < 1) ps.fail("k_max", "must be >= 1");
    }
    if (auto d = ps.get<double>("dp_tol", false)) cfg.bisection.dp_tol = *d;
    if (auto x = ps.get<int>("max_expansions", false)) {
      cfg.bisection.max_expansions = *x;
      if (*x < 0) ps.fail("max_expansions", "must be >= 0");
    }
    if (auto dir = ps.get<std::string>("cache_dir", false)) cfg.cache_dir = fs::path(*dir);
    if (auto r = ps.get<bool>("require_cache", false)) cfg.require_cache = *r;
    if (cfg.require_cache) {
      if (!cfg.cache_dir)
        ps.fail("require_cache", "needs cache_dir");
      else if (!fs::is_directory(*cfg.cache_dir))
        ps.fail("cache_dir", "directory '" + cfg.cache_dir->string() + "' does not exist");
    }
  }

  if (mode == Mode::Awip)
    if (auto c = ps.get<bool>("compare_exact", false)) cfg.compare_exact = *c;

  if (mode == Mode::TruncationTable) {
    cfg.gammas = ps.list<double>("gammas", true);
    cfg.eps_hats = ps.list<double>("eps_hat", true);
    for (double g : cfg.gammas)
      if (!detail::open_unit(g)) ps.fail("gammas", "every discount factor must lie in (0,1)");
    for (double e : cfg.eps_hats)
      if (!(e > 0.0)) ps.fail("eps_hat", "every accuracy target must be positive");
  }

  if (mode == Mode::Verify) {
    if (auto t = ps.get<double>("check_tolerance", false)) {
      cfg.check_tolerance = *t;
      if (!(*t >= 0.0)) ps.fail("check_tolerance", "must be nonnegative");
    }
    if (auto m = ps.get<int>("margin", false)) {
      cfg.margin = *m;
      if (*m < 0) ps.fail("margin", "must be >= 0");
    }
  }

  if (fleet_mode) {
    cfg.fleet_sizes = ps.list<int>("N", true);
    if (mode == Mode::ExactDp && cfg.fleet_sizes.size() > 1)
      ps.fail("N", "exact-dp solves one fleet size");
    for (int n : cfg.fleet_sizes)
      if (n < 1) ps.fail("N", "fleet sizes must be >= 1");
    const bool has_m = ps.has("M");
    const bool has_ratio = ps.has("M_ratio");
    ps.allow({"M", "M_ratio"});
    if (has_m && has_ratio) ps.fail("M", "give either M or M_ratio, not both");
    if (!has_m && !has_ratio) ps.fail("M", "required field is missing");
    if (has_m && !has_ratio) {
      cfg.max_active = ps.list<int>("M", true);
      if (cfg.max_active.size() != 1 && cfg.max_active.size() != cfg.fleet_sizes.size())
        ps.fail("M", "must be a single value or one value per entry of N");
    }
    if (has_ratio && !has_m) {
      if (auto r = ps.get<double>("M_ratio", true)) {
        cfg.active_ratio = *r;
        if (!detail::open_unit(*r)) ps.fail("M_ratio", "must lie in (0,1)");
      }
    }
    const bool m_ok = cfg.active_ratio || cfg.max_active.size() == 1 ||
                      cfg.max_active.size() == cfg.fleet_sizes.size();
    if (m_ok && (cfg.active_ratio || !cfg.max_active.empty())) {
      for (std::size_t i = 0; i < cfg.fleet_sizes.size(); ++i) {
        const int m = cfg.active_for(i);
        const int n = cfg.fleet_sizes[i];
        if (m < 1) ps.fail("M", "must be >= 1");
        if (m >= n)
          ps.fail("M", "M=" + std::to_string(m) + " must be smaller than N=" + std::to_string(n));
      }
    }

    const auto names = ps.list<std::string>("policies", false);
    for (const auto& p : names) {
      try {
        const PolicyKind k = policy_from_name(p);
        if (k == PolicyKind::Fixed)
          ps.fail("policies", "'fixed' is not a fleet scheduling policy");
        else
          cfg.policies.push_back(k);
      } catch (const InvalidArgument&) {
        ps.fail("policies", "unknown policy '" + p + "'");
      }
    }
    if (names.empty())
      cfg.policies = {PolicyKind::Wip, PolicyKind::Awip, PolicyKind::Greedy, PolicyKind::Random};

    if (mode == Mode::ExactDp) cfg.replications = 100000;
    if (auto r = ps.get<int>("reps", false)) {
      cfg.replications = *r;
      if (*r < 1) ps.fail("reps", "must be >= 1");
    }
    if (auto k = ps.get<int>("K_max", false)) {
      cfg.horizon = *k;
      if (*k < 1) ps.fail("K_max", "must be >= 1");
    }
    if (auto s = ps.get<std::uint64_t>("seed", false)) cfg.seed = *s;
    if (auto t = ps.get<std::string>("tie_break", false)) {
      try {
        cfg.tie_break = tie_break_from_name(*t);
      } catch (const InvalidArgument& e) {
        ps.fail("tie_break", e.what());
      }
    }
    if (mode == Mode::ExactDp) {
      if (auto r = ps.get<std::string>("activation", false)) {
        if (*r == "exactly")
          cfg.rule = ActivationRule::Exactly;
        else if (*r == "at-most")
          cfg.rule = ActivationRule::AtMost;
        else
          ps.fail("activation", "expected 'exactly' or 'at-most'");
      }
    }
  }

  ps.reject_unknown();
  if (!ps.errors.empty()) throw ConfigError(ps.errors);
  return cfg;
}

/// Reads and validates a JSON config file.
inline ExperimentConfig parse_config(const fs::path& path,
                                     std::optional<Mode> mode_override = std::nullopt) {
  if (!fs::exists(path)) throw ConfigError({"config: file '" + path.string() + "' does not exist"});
  json root;
  try {
    root = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError({"config: malformed JSON (" + std::string(e.what()) + ")"});
  }
  return parse_config_json(root, mode_override);
}

/// Applies command-line overrides and records them in the echo.
inline void apply_overrides(ExperimentConfig& cfg, std::optional<std::uint64_t> seed,
                            std::optional<unsigned> threads, std::optional<fs::path> out) {
  if (seed) {
    cfg.seed = *seed;
    cfg.echo["seed"] = *seed;
  }
  if (threads) {
    cfg.threads = *threads;
    cfg.echo["threads"] = *threads;
  }
  if (out) {
    cfg.out_dir = *out;
    cfg.echo["out"] = out->string();
  }
}

/// Canonical description of everything an index table depends on.
inline std::string cache_key_text(const ArmParams& p, Discount gamma, const BisectionOptions& opt,
                                  IndexKind kind) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%s/%s index kind=%s lambda=%.17g,%.17g,%.17g cost=%.17g,%.17g,%.17g A=%d "
                "gamma=%.17g eps=%.17g k_max=%d dp_tol=%.17g max_expansions=%d",
                kToolName, kToolVersion, kind_name(kind), p.lambda[0], p.lambda[1], p.lambda[2],
                p.cost[0], p.cost[1], p.cost[2], p.trunc_A, gamma.value(), opt.eps, opt.k_max,
                opt.effective_dp_tol(), opt.max_expansions);
  return buf;
}

inline std::string cache_digest(const ArmParams& p, Discount gamma, const BisectionOptions& opt,
                                IndexKind kind) {
  return io::hex64(io::fnv1a64(cache_key_text(p, gamma, opt, kind)));
}

/// Index tables memoized in memory and optionally on disk. Disk entries are
/// named by the key digest, store the full key, and are published by atomic
/// rename.
class IndexTableCache {
 public:
  IndexTableCache() = default;
  IndexTableCache(std::optional<fs::path> dir, bool require) : dir_(std::move(dir)), require_(require) {}

  std::shared_ptr<const IndexTable> get(const ArmParams& p, Discount gamma,
                                        const BisectionOptions& opt, IndexKind kind) {
    const std::string key = cache_key_text(p, gamma, opt, kind);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    std::shared_ptr<const IndexTable> table;
    if (dir_) table = load(key);
    if (!table) {
      if (require_)
        throw std::runtime_error("cache entry " + path_for(key).string() +
                                 " is missing and require_cache is set");
      auto built = std::make_shared<IndexTable>(kind == IndexKind::Exact
                                                    ? exact_index_table(p, gamma, opt)
                                                    : approx_index_table(p, gamma, opt));
      ++built_;
      build_seconds_ += built->seconds;
      if (dir_) {
        json doc{{"key", key}, {"table", io::index_table_to_json(*built)}};
        io::atomic_write(path_for(key), doc.dump());
      }
      table = std::move(built);
    }
    memo_.emplace(key, table);
    return table;
  }

  [[nodiscard]] int hits() const { return hits_; }
  [[nodiscard]] int built() const { return built_; }
  [[nodiscard]] double build_seconds() const { return build_seconds_; }

  [[nodiscard]] fs::path path_for(const std::string& key) const {
    return *dir_ / ("index-" + io::hex64(io::fnv1a64(key)) + ".json");
  }

 private:
  std::shared_ptr<const IndexTable> load(const std::string& key) {
    const fs::path path = path_for(key);
    if (!fs::exists(path)) return nullptr;
    try {
      const json doc = json::parse(io::read_file(path));
      if (doc.at("key").get<std::string>() != key) return nullptr;
      ++hits_;
      return std::make_shared<const IndexTable>(io::index_table_from_json(doc.at("table")));
    } catch (const std::exception&) {
      return nullptr;  // unreadable entries are rebuilt and overwritten
    }
  }

  std::optional<fs::path> dir_;
  bool require_ = false;
  std::map<std::string, std::shared_ptr<const IndexTable>> memo_;
  int hits_ = 0;
  int built_ = 0;
  double build_seconds_ = 0.0;
};

struct RunReport {
  int exit_code = 0;
  json manifest;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitChecksFailed = 3;

namespace detail {

class Run {
 public:
  explicit Run(const ExperimentConfig& cfg)
      : cfg_(cfg), cache_(cfg.cache_dir, cfg.require_cache) {}

  RunReport execute() {
    set_threads(cfg_.threads);
    fs::create_directories(cfg_.out_dir);
    int code = kExitOk;
    switch (cfg_.mode) {
      case Mode::SolveSingle: solve_single(); break;
      case Mode::TruncationTable: truncation_table(); break;
      case Mode::Whittle: index_tables(IndexKind::Exact); break;
      case Mode::Awip: index_tables(IndexKind::Approximate); break;
      case Mode::Simulate: simulate_sweep(); break;
      case Mode::ExactDp: exact_dp(); break;
      case Mode::Verify: code = verify(); break;
    }
    return {code, finish(code)};
  }

 private:
  using Clock = std::chrono::steady_clock;

  template <typename Fn>
  auto timed(const std::string& phase, Fn&& fn) {
    const auto t0 = Clock::now();
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      timings_[phase] += aoisched::detail::seconds_since(t0);
    } else {
      auto r = fn();
      timings_[phase] += aoisched::detail::seconds_since(t0);
      return r;
    }
  }

  void emit(const std::string& file, const std::string& content) {
    io::atomic_write(cfg_.out_dir / file, content);
    outputs_.push_back(file);
  }

  Discount gamma() const { return Discount(cfg_.gamma); }
  const ArmParams& arm() const { return cfg_.classes.front().params; }

  void write_single(const SingleSourceSolution& sol) {
    emit("values.csv", io::values_csv(sol.values));
    emit("policy.csv", io::policy_csv(sol.policy));
    json th;
    try {
      th = io::thresholds_json(extract_thresholds(sol.policy), sol.policy.trunc());
    } catch (const StructureViolation& e) {
      th = {{"trunc_A", sol.policy.trunc()},
            {"structure_violation",
             {{"bs_age", e.row()}, {"monitor_age", e.position()}, {"message", e.what()}}}};
      results_["threshold_structure"] = false;
    }
    emit("thresholds.json", th.dump(2) + "\n");
  }

  void single_summary(const SingleSourceSolution& sol) {
    results_["iterations"] = sol.iterations;
    results_["value_at_origin"] = io::json_number(sol.values.at(1, 1));
    results_["sense_joint_discount_limit"] = io::json_number(sense_joint_discount_limit(arm()));
    results_["sense_joint_condition_holds"] = sense_joint_condition_holds(gamma(), arm());
    results_["truncation_error_bound"] =
        io::json_number(truncation_error_bound(gamma(), arm().trunc_A));
    if (!results_.contains("threshold_structure")) results_["threshold_structure"] = true;
  }

  void solve_single() {
    arm().validate();
    const auto sol = timed("value_iteration", [&] { return value_iteration(arm(), gamma(), cfg_.tol); });
    write_single(sol);
    single_summary(sol);
  }

  int verify() {
    const auto sol = timed("value_iteration", [&] { return value_iteration(arm(), gamma(), cfg_.tol); });
    write_single(sol);
    single_summary(sol);
    const auto report = timed("verify", [&] {
      return verify_structure(sol.values, sol.policy, arm(), gamma(), cfg_.check_tolerance,
                              cfg_.margin);
    });
    emit("verification.json", io::report_json(report).dump(2) + "\n");
    results_["all_checks_passed"] = report.all_passed();
    return report.all_passed() ? kExitOk : kExitChecksFailed;
  }

  void truncation_table() {
    io::CsvWriter w({"gamma", "eps_hat", "A"});
    timed("truncation_table", [&] {
      for (double g : cfg_.gammas)
        for (double e : cfg_.eps_hats) w.add(g, e, truncation_level(Discount(g), e));
    });
    emit("truncation_table.csv", w.str());
  }

  std::shared_ptr<const IndexTable> table(const ArmParams& p, IndexKind kind) {
    return cache_.get(p, gamma(), cfg_.bisection, kind);
  }

  void index_tables(IndexKind kind) {
    io::CsvWriter w(io::index_csv_header());
    json meta = json::array();
    double seconds = 0.0;
    double exact_seconds = 0.0;
    double max_error = 0.0;
    for (const auto& c : cfg_.classes) {
      const auto t = timed("index_" + c.name, [&] { return table(c.params, kind); });
      io::append_index_rows(w, c.name, *t);
      json m = io::index_meta_json(*t);
      m["class"] = c.name;
      seconds += t->seconds;
      if (kind == IndexKind::Approximate && cfg_.compare_exact) {
        const auto ex = timed("exact_index_" + c.name, [&] { return table(c.params, IndexKind::Exact); });
        double err = 0.0;
        for (std::size_t i = 0; i < ex->index.size(); ++i)
          err = std::max(err, std::abs(ex->index.raw()[i] - t->index.raw()[i]));
        m["max_abs_error_vs_exact"] = io::json_number(err);
        m["exact_seconds"] = io::json_number(ex->seconds);
        exact_seconds += ex->seconds;
        max_error = std::max(max_error, err);
      }
      meta.push_back(std::move(m));
    }
    emit("index.csv", w.str());
    results_["tables"] = std::move(meta);
    results_["offline_seconds"] = io::json_number(seconds);
    if (kind == IndexKind::Approximate && cfg_.compare_exact) {
      results_["exact_offline_seconds"] = io::json_number(exact_seconds);
      results_["speedup_vs_exact"] = io::json_number(seconds > 0.0 ? exact_seconds / seconds : 0.0);
      results_["max_abs_error_vs_exact"] = io::json_number(max_error);
    }
  }

  std::vector<std::shared_ptr<const IndexTable>> fleet_tables(const std::vector<ArmSpec>& arms,
                                                              IndexKind kind) {
    std::vector<std::shared_ptr<const IndexTable>> out;
    for (const auto& a : arms)
      out.push_back(timed(std::string("index_") + kind_name(kind), [&] { return table(a.params, kind); }));
    return out;
  }

  std::unique_ptr<Scheduler> scheduler(PolicyKind kind, const std::vector<ArmSpec>& arms,
                                       std::size_t m) {
    switch (kind) {
      case PolicyKind::Wip:
        return std::make_unique<IndexScheduler>("wip", fleet_tables(arms, IndexKind::Exact), m,
                                                cfg_.tie_break);
      case PolicyKind::Awip:
        return std::make_unique<IndexScheduler>("awip", fleet_tables(arms, IndexKind::Approximate),
                                                m, cfg_.tie_break);
      case PolicyKind::Greedy:
        return std::make_unique<GreedyScheduler>(local(arms), m, cfg_.tie_break);
      case PolicyKind::Random: return std::make_unique<RandomScheduler>(local(arms), m);
      case PolicyKind::Fixed: break;
    }
    throw InvalidArgument("unsupported fleet policy");
  }

  std::shared_ptr<const LocalPolicies> local(const std::vector<ArmSpec>& arms) {
    return timed("local_policies", [&] { return LocalPolicies::solve(arms, gamma(), cfg_.tol); });
  }

  static int max_trunc(const std::vector<ArmSpec>& arms) {
    int a = 0;
    for (const auto& arm : arms) a = std::max(a, arm.params.trunc_A);
    return a;
  }

  void simulate_sweep() {
    io::CsvWriter w({"policy", "N", "M", "gamma", "trunc_A", "K_max", "reps", "seed", "mean_J",
                     "ci99_half_width", "std_dev"});
    json rows = json::array();
    for (std::size_t i = 0; i < cfg_.fleet_sizes.size(); ++i) {
      const int n = cfg_.fleet_sizes[i];
      const int m = cfg_.active_for(i);
      const auto arms = cfg_.fleet(n);
      for (PolicyKind kind : cfg_.policies) {
        const auto sched = scheduler(kind, arms, static_cast<std::size_t>(m));
        SimConfig sc;
        sc.gamma = gamma();
        sc.horizon = cfg_.horizon;
        sc.replications = cfg_.replications;
        sc.max_active = m;
        sc.seed = cfg_.seed;
        sc.policy = kind;
        const auto r = timed("simulate_" + std::string(policy_name(kind)) + "_N" + std::to_string(n),
                             [&] { return simulate(arms, sc, *sched); });
        w.add(policy_name(kind), n, m, cfg_.gamma, max_trunc(arms), cfg_.horizon,
              cfg_.replications, cfg_.seed, r.mean_J, r.ci_half_width_99, r.std_dev);
        rows.push_back({{"policy", policy_name(kind)},
                        {"N", n},
                        {"M", m},
                        {"mean_J", io::json_number(r.mean_J)},
                        {"ci99_half_width", io::json_number(r.ci_half_width_99)},
                        {"horizon_tail_bound", io::json_number(r.horizon_tail_bound)}});
      }
    }
    emit("sim_results.csv", w.str());
    results_["simulations"] = std::move(rows);
  }

  void exact_dp() {
    const int n = cfg_.fleet_sizes.front();
    const auto m = static_cast<std::size_t>(cfg_.active_for(0));
    const auto arms = cfg_.fleet(n);
    JointDpOptions opt;
    opt.tol = cfg_.tol;
    opt.rule = cfg_.rule;
    const auto dp = timed("joint_dp", [&] { return exact_joint_dp(arms, m, gamma(), opt); });
    io::CsvWriter w({"policy", "method", "J", "gap_percent", "ci99_half_width", "reps"});
    w.add("joint-dp", "value-iteration", dp.J, 0.0, 0.0, 0);
    json rows = json::array();
    for (PolicyKind kind : cfg_.policies) {
      const auto sched = scheduler(kind, arms, m);
      double j = 0.0;
      double ci = 0.0;
      int reps = 0;
      std::string method = "exact-evaluation";
      if (sched->deterministic()) {
        j = timed(std::string("evaluate_") + policy_name(kind), [&] {
              return evaluate_policy_exact(arms, m, gamma(), *sched, cfg_.tol, opt.budget);
            }).J;
      } else {
        SimConfig sc;
        sc.gamma = gamma();
        sc.horizon = cfg_.horizon;
        sc.replications = cfg_.replications;
        sc.max_active = static_cast<int>(m);
        sc.seed = cfg_.seed;
        sc.policy = kind;
        const auto r = timed(std::string("simulate_") + policy_name(kind),
                             [&] { return simulate(arms, sc, *sched); });
        j = r.mean_J;
        ci = r.ci_half_width_99;
        reps = cfg_.replications;
        method = "monte-carlo";
      }
      const double gap = gap_percent(j, dp.J);
      w.add(policy_name(kind), method, j, gap, ci, reps);
      rows.push_back({{"policy", policy_name(kind)},
                      {"method", method},
                      {"J", io::json_number(j)},
                      {"gap_percent", io::json_number(gap)}});
    }
    emit("exact_dp.csv", w.str());
    results_["J_DP"] = io::json_number(dp.J);
    results_["joint_iterations"] = dp.iterations;
    results_["joint_states"] = dp.states;
    results_["joint_actions"] = dp.joint_actions;
    results_["policies"] = std::move(rows);
  }

  json finish(int code) {
    json timings = json::object();
    for (const auto& [phase, sec] : timings_) timings[phase] = io::json_number(sec);
    json files = json::array();
    for (const auto& f : outputs_) {
      const fs::path p = cfg_.out_dir / f;
      files.push_back({{"file", f}, {"bytes", fs::file_size(p)}, {"digest", io::file_digest(p)}});
    }
    json manifest{{"tool", kToolName},
                  {"version", kToolVersion},
                  {"mode", mode_name(cfg_.mode)},
                  {"config", cfg_.echo},
                  {"seed", cfg_.seed},
                  {"threads", cfg_.threads},
                  {"exit_code", code},
                  {"timings_seconds", std::move(timings)},
                  {"results", results_},
                  {"outputs", std::move(files)}};
    if (cfg_.cache_dir)
      manifest["cache"] = {{"dir", cfg_.cache_dir->string()},
                           {"hits", cache_.hits()},
                           {"built", cache_.built()}};
    io::atomic_write(cfg_.out_dir / "manifest.json", manifest.dump(2) + "\n");
    return manifest;
  }

  const ExperimentConfig& cfg_;
  IndexTableCache cache_;
  std::map<std::string, double> timings_;
  json results_ = json::object();
  std::vector<std::string> outputs_;
};

}  // namespace detail

/// Executes the configured pipeline and writes its artifacts and manifest
/// into cfg.out_dir. Module errors propagate to the caller.
inline RunReport run(const ExperimentConfig& cfg) { return detail::Run(cfg).execute(); }

/// Machine-readable description of a failed invocation.
inline json error_report(const std::string& kind, const std::string& message,
                         const std::vector<std::string>& details = {}) {
  return {{"tool", kToolName}, {"version", kToolVersion}, {"error", kind},
          {"message", message}, {"details", details}};
}

}  // namespace aoisched::experiment
