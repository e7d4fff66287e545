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

// Multi-arm scheduling: index, greedy and random schedulers, Monte Carlo
// estimation of the normalized discounted cost, and exact dynamic
// programming on the joint state space of small fleets.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aoisched/mdp_core.hpp"
#include "aoisched/parallel.hpp"
#include "aoisched/single_source.hpp"
#include "aoisched/whittle.hpp"

namespace aoisched {

struct ArmSpec {
  int arm_id = 0;
  ArmParams params;
  std::shared_ptr<const IndexTable> index_table;
};

using FleetState = std::vector<AoiState>;
using JointAction = std::vector<Action>;

using Rng = std::mt19937_64;

/// Independent generator for one replication, derived from (seed, stream).
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x9e3779b9u};
  return Rng(seq);
}

/// How many arms must be active per slot.
enum class ActivationRule {
  Exactly,  ///< exactly M arms are addressed every slot
  AtMost,   ///< any number of arms up to M
};

/// Which arm wins when two priorities are equal.
enum class TieBreak { SmallerId, LargerId };

inline const char* tie_break_name(TieBreak t) {
  return t == TieBreak::SmallerId ? "smaller-id" : "larger-id";
}

inline TieBreak tie_break_from_name(const std::string& s) {
  if (s == "smaller-id") return TieBreak::SmallerId;
  if (s == "larger-id") return TieBreak::LargerId;
  throw InvalidArgument("unknown tie break '" + s + "'");
}

namespace detail {

/// Arm ids of the `m` largest keys.
template <typename Key>
std::vector<std::size_t> top_m(std::span<const Key> keys, std::size_t m,
                               TieBreak tie = TieBreak::SmallerId) {
  std::vector<std::size_t> order(keys.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  m = std::min(m, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (keys[a] != keys[b]) return keys[a] > keys[b];
                      return tie == TieBreak::SmallerId ? a < b : a > b;
                    });
  order.resize(m);
  return order;
}

}  // namespace detail

/// Activates the M arms with the largest index; each takes the active action
/// cached in its table, the rest idle.
inline JointAction schedule_index(std::span<const AoiState> fleet,
                                  std::span<const IndexTable* const> tables, std::size_t m,
                                  TieBreak tie = TieBreak::SmallerId) {
  if (tables.size() != fleet.size()) throw InvalidArgument("one index table per arm required");
  std::vector<double> keys(fleet.size());
  for (std::size_t i = 0; i < fleet.size(); ++i) {
    if (!tables[i]) throw InvalidArgument("arm " + std::to_string(i) + " has no index table");
    if (!fleet[i].valid(tables[i]->trunc_A))
      throw InvalidArgument("arm " + std::to_string(i) + " state has no index table entry");
    keys[i] = tables[i]->index[fleet[i]];
  }
  JointAction out(fleet.size(), Action::Idle);
  for (std::size_t i : detail::top_m<double>(keys, m, tie))
    out[i] = tables[i]->active_action[fleet[i]];
  return out;
}

/// Activates the M arms with the largest monitor age; active arms follow
/// their single-source optimal policy.
inline JointAction schedule_greedy(std::span<const AoiState> fleet,
                                   std::span<const PolicyTable* const> local, std::size_t m,
                                   TieBreak tie = TieBreak::SmallerId) {
  if (local.size() != fleet.size()) throw InvalidArgument("one local policy per arm required");
  std::vector<int> keys(fleet.size());
  for (std::size_t i = 0; i < fleet.size(); ++i) keys[i] = fleet[i].monitor_age;
  JointAction out(fleet.size(), Action::Idle);
  for (std::size_t i : detail::top_m<int>(keys, m, tie)) out[i] = (*local[i])[fleet[i]];
  return out;
}

/// Activates a uniformly random M-subset drawn from `rng`.
inline JointAction schedule_random(std::span<const AoiState> fleet,
                                   std::span<const PolicyTable* const> local, std::size_t m,
                                   Rng& rng) {
  if (local.size() != fleet.size()) throw InvalidArgument("one local policy per arm required");
  const std::size_t n = fleet.size();
  JointAction out(n, Action::Idle);
  if (m >= n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = (*local[i])[fleet[i]];
    return out;
  }
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  for (std::size_t k = 0; k < m; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, n - 1);
    std::swap(ids[k], ids[pick(rng)]);
  }
  for (std::size_t k = 0; k < m; ++k) out[ids[k]] = (*local[ids[k]])[fleet[ids[k]]];
  return out;
}

/// Common interface used by the simulator and the exact evaluator.
class Scheduler {
 public:
  virtual ~Scheduler() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual bool deterministic() const { return true; }
  virtual JointAction schedule(std::span<const AoiState> fleet, Rng& rng) const = 0;
};

class IndexScheduler final : public Scheduler {
 public:
  IndexScheduler(std::string name, std::vector<std::shared_ptr<const IndexTable>> tables,
                 std::size_t m, TieBreak tie = TieBreak::SmallerId)
      : name_(std::move(name)), tables_(std::move(tables)), m_(m), tie_(tie) {
    for (const auto& t : tables_) raw_.push_back(t.get());
  }
  [[nodiscard]] std::string name() const override { return name_; }
  JointAction schedule(std::span<const AoiState> fleet, Rng&) const override {
    return schedule_index(fleet, raw_, m_, tie_);
  }

 private:
  std::string name_;
  std::vector<std::shared_ptr<const IndexTable>> tables_;
  std::vector<const IndexTable*> raw_;
  std::size_t m_;
  TieBreak tie_;
};

/// Shared storage for per-arm single-source policies used by the baselines.
class LocalPolicies {
 public:
  explicit LocalPolicies(std::vector<PolicyTable> policies) : policies_(std::move(policies)) {
    for (const auto& p : policies_) raw_.push_back(&p);
  }
  LocalPolicies(const LocalPolicies&) = delete;
  LocalPolicies& operator=(const LocalPolicies&) = delete;
  [[nodiscard]] std::span<const PolicyTable* const> view() const { return raw_; }

  static std::shared_ptr<const LocalPolicies> solve(const std::vector<ArmSpec>& arms,
                                                    Discount gamma, double tol = 1e-9) {
    std::vector<PolicyTable> out;
    for (const auto& arm : arms) out.push_back(value_iteration(arm.params, gamma, tol).policy);
    return std::make_shared<const LocalPolicies>(std::move(out));
  }

 private:
  std::vector<PolicyTable> policies_;
  std::vector<const PolicyTable*> raw_;
};

class GreedyScheduler final : public Scheduler {
 public:
  GreedyScheduler(std::shared_ptr<const LocalPolicies> local, std::size_t m,
                  TieBreak tie = TieBreak::SmallerId)
      : local_(std::move(local)), m_(m), tie_(tie) {}
  [[nodiscard]] std::string name() const override { return "greedy"; }
  JointAction schedule(std::span<const AoiState> fleet, Rng&) const override {
    return schedule_greedy(fleet, local_->view(), m_, tie_);
  }

 private:
  std::shared_ptr<const LocalPolicies> local_;
  std::size_t m_;
  TieBreak tie_;
};

class RandomScheduler final : public Scheduler {
 public:
  RandomScheduler(std::shared_ptr<const LocalPolicies> local, std::size_t m)
      : local_(std::move(local)), m_(m) {}
  [[nodiscard]] std::string name() const override { return "random"; }
  [[nodiscard]] bool deterministic() const override { return false; }
  JointAction schedule(std::span<const AoiState> fleet, Rng& rng) const override {
    return schedule_random(fleet, local_->view(), m_, rng);
  }

 private:
  std::shared_ptr<const LocalPolicies> local_;
  std::size_t m_;
};

/// Same action for every arm in every slot.
class FixedScheduler final : public Scheduler {
 public:
  explicit FixedScheduler(Action u) : action_(u) {}
  [[nodiscard]] std::string name() const override { return "fixed"; }
  JointAction schedule(std::span<const AoiState> fleet, Rng&) const override {
    return JointAction(fleet.size(), action_);
  }

 private:
  Action action_;
};

enum class PolicyKind { Wip, Awip, Greedy, Random, Fixed };

inline const char* policy_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::Wip: return "wip";
    case PolicyKind::Awip: return "awip";
    case PolicyKind::Greedy: return "greedy";
    case PolicyKind::Random: return "random";
    case PolicyKind::Fixed: return "fixed";
  }
  return "?";
}

inline PolicyKind policy_from_name(const std::string& s) {
  for (PolicyKind k : {PolicyKind::Wip, PolicyKind::Awip, PolicyKind::Greedy, PolicyKind::Random,
                       PolicyKind::Fixed})
    if (s == policy_name(k)) return k;
  throw InvalidArgument("unknown policy '" + s + "'");
}

struct SimConfig {
  Discount gamma{0.5};
  int horizon = 200;
  int replications = 10000;
  int max_active = 1;
  std::uint64_t seed = 1;
  PolicyKind policy = PolicyKind::Wip;

  [[nodiscard]] std::vector<std::string> validation_errors(std::size_t arms) const {
    std::vector<std::string> errs;
    if (horizon < 1) errs.push_back("horizon K_max must be >= 1");
    if (replications < 1) errs.push_back("replications must be >= 1");
    if (max_active < 1) errs.push_back("M must be >= 1");
    if (static_cast<std::size_t>(max_active) >= arms)
      errs.push_back("M must be smaller than the number of arms N");
    return errs;
  }
};

struct SimResult {
  std::string policy;
  double mean_J = 0.0;
  double ci_half_width_99 = 0.0;
  double std_dev = 0.0;
  int replications = 0;
  int arms = 0;
  int max_active_seen = 0;
  /// Upper bound on the per-replication cost dropped by stopping at K_max.
  double horizon_tail_bound = 0.0;
};

inline constexpr double kZ99 = 2.576;

/// Monte Carlo estimate of (1-gamma)/N * E[sum_k gamma^k sum_i g_i] over the
/// configured horizon. All arms start at (1,1).
inline SimResult simulate(const std::vector<ArmSpec>& arms, const SimConfig& cfg,
                          const Scheduler& scheduler, bool allow_full_activation = false) {
  if (arms.empty()) throw InvalidArgument("simulation needs at least one arm");
  auto errs = cfg.validation_errors(arms.size());
  if (allow_full_activation)
    std::erase_if(errs, [](const std::string& e) { return e.rfind("M must be smaller", 0) == 0; });
  if (!errs.empty()) {
    std::string msg = "invalid simulation config:";
    for (const auto& e : errs) msg += " " + e + ";";
    throw InvalidArgument(msg);
  }
  for (std::size_t i = 0; i < arms.size(); ++i) {
    arms[i].params.validate();
    for (std::size_t j = 0; j < i; ++j)
      if (arms[i].arm_id == arms[j].arm_id) throw InvalidArgument("duplicate arm_id");
  }

  const std::size_t n = arms.size();
  const double g = cfg.gamma.value();
  std::vector<double> per_rep(static_cast<std::size_t>(cfg.replications));
  std::vector<int> max_active(per_rep.size(), 0);
  parallel_for(per_rep.size(), [&](std::size_t rep) {
    Rng rng = make_stream(cfg.seed, rep);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    FleetState fleet(n, AoiState{1, 1});
    double total = 0.0;
    double discount = 1.0;
    int seen = 0;
    for (int k = 0; k < cfg.horizon; ++k) {
      const JointAction act = scheduler.schedule(fleet, rng);
      int active = 0;
      double slot = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (act[i] != Action::Idle) ++active;
        slot += stage_cost(fleet[i], act[i], arms[i].params);
      }
      if (active > cfg.max_active)
        throw std::logic_error(scheduler.name() + " activated " + std::to_string(active) +
                               " arms with M=" + std::to_string(cfg.max_active));
      seen = std::max(seen, active);
      total += discount * slot;
      discount *= g;
      for (std::size_t i = 0; i < n; ++i) {
        Outcome o = Outcome::Fail;
        if (act[i] != Action::Idle && unit(rng) < success_prob(act[i], arms[i].params))
          o = Outcome::Success;
        fleet[i] = transition(fleet[i], act[i], o, arms[i].params.trunc_A);
      }
    }
    per_rep[rep] = (1.0 - g) * total / static_cast<double>(n);
    max_active[rep] = seen;
  });

  SimResult r;
  r.policy = scheduler.name();
  r.replications = cfg.replications;
  r.arms = static_cast<int>(n);
  double sum = 0.0;
  for (double x : per_rep) sum += x;
  r.mean_J = sum / static_cast<double>(per_rep.size());
  if (per_rep.size() > 1) {
    double ss = 0.0;
    for (double x : per_rep) ss += (x - r.mean_J) * (x - r.mean_J);
    r.std_dev = std::sqrt(ss / static_cast<double>(per_rep.size() - 1));
  }
  r.ci_half_width_99 = kZ99 * r.std_dev / std::sqrt(static_cast<double>(per_rep.size()));
  r.max_active_seen = *std::max_element(max_active.begin(), max_active.end());
  double a_max = 0.0;
  double c_max = 0.0;
  for (const auto& arm : arms) {
    a_max = std::max(a_max, static_cast<double>(arm.params.trunc_A));
    c_max = std::max(c_max, arm.params.cost[2]);
  }
  r.horizon_tail_bound = std::pow(g, cfg.horizon) * (a_max + c_max) / (1.0 - g);
  return r;
}

/// Raised when a joint problem exceeds the configured size guard.
class BudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct JointBudget {
  int max_arms = 4;
  int max_trunc = 15;
  std::size_t max_bytes = std::size_t{2} << 30;
};

/// Mixed-radix layout of the product of per-arm triangles, with per-arm
/// precomputed successors and stage costs.
class JointSpace {
 public:
  JointSpace(const std::vector<ArmSpec>& arms, const JointBudget& budget) {
    if (arms.empty()) throw InvalidArgument("joint space needs at least one arm");
    if (arms.size() > 8) throw BudgetExceeded("joint space supports at most 8 arms");
    if (static_cast<int>(arms.size()) > budget.max_arms)
      throw BudgetExceeded("joint DP limited to " + std::to_string(budget.max_arms) + " arms");
    std::size_t total = 1;
    for (const auto& arm : arms) {
      arm.params.validate();
      if (arm.params.trunc_A > budget.max_trunc)
        throw BudgetExceeded("joint DP limited to truncation " + std::to_string(budget.max_trunc));
      Arm a;
      a.params = arm.params;
      a.states = reachable_states(arm.params.trunc_A);
      a.stride = total;
      const int t = arm.params.trunc_A;
      for (const auto& s : a.states) {
        a.aged.push_back(state_index(aged(s, t)));
        for (int u = 0; u < 3; ++u)
          a.success[u].push_back(state_index(success_state(s, static_cast<Action>(u), t)));
        for (int u = 0; u < 4; ++u) a.cost[u].push_back(stage_cost(s, static_cast<Action>(u), a.params));
      }
      total *= a.states.size();
      arms_.push_back(std::move(a));
    }
    size_ = total;
    // Two value arrays plus one action code per joint state.
    const std::size_t bytes = size_ * (2 * sizeof(double) + sizeof(std::uint16_t));
    if (bytes > budget.max_bytes)
      throw BudgetExceeded("joint DP needs " + std::to_string(bytes >> 20) + " MiB, budget is " +
                           std::to_string(budget.max_bytes >> 20) + " MiB");
  }

  [[nodiscard]] std::size_t size() const { return size_; }
  [[nodiscard]] std::size_t arms() const { return arms_.size(); }

  [[nodiscard]] std::size_t local(std::size_t joint, std::size_t arm) const {
    return (joint / arms_[arm].stride) % arms_[arm].states.size();
  }
  [[nodiscard]] FleetState decode(std::size_t joint) const {
    FleetState out(arms_.size());
    for (std::size_t i = 0; i < arms_.size(); ++i) out[i] = arms_[i].states[local(joint, i)];
    return out;
  }
  [[nodiscard]] std::size_t encode(std::span<const AoiState> fleet) const {
    std::size_t idx = 0;
    for (std::size_t i = 0; i < arms_.size(); ++i) idx += state_index(fleet[i]) * arms_[i].stride;
    return idx;
  }

  /// Expected next value and stage cost of a joint action at a joint state.
  /// `locals` holds the per-arm local indices of `joint`.
  [[nodiscard]] double q_value(const std::vector<double>& v, std::span<const std::size_t> locals,
                               std::span<const Action> act, double gamma) const {
    double cost = 0.0;
    std::size_t base = 0;
    std::ptrdiff_t jump[8];
    double lam[8];
    int k = 0;
    if (arms_.size() > 8) throw BudgetExceeded("joint transitions support at most 8 arms");
    for (std::size_t i = 0; i < arms_.size(); ++i) {
      const Arm& a = arms_[i];
      const std::size_t l = locals[i];
      const int u = to_int(act[i]);
      cost += a.cost[u][l];
      base += a.aged[l] * a.stride;
      if (act[i] != Action::Idle) {
        jump[k] = (static_cast<std::ptrdiff_t>(a.success[u][l]) -
                   static_cast<std::ptrdiff_t>(a.aged[l])) *
                  static_cast<std::ptrdiff_t>(a.stride);
        lam[k] = a.params.lambda[u];
        ++k;
      }
    }
    double expect = 0.0;
    const unsigned subsets = 1u << k;
    for (unsigned mask = 0; mask < subsets; ++mask) {
      double prob = 1.0;
      std::ptrdiff_t offset = 0;
      for (int j = 0; j < k; ++j) {
        if (mask & (1u << j)) {
          prob *= lam[j];
          offset += jump[j];
        } else {
          prob *= 1.0 - lam[j];
        }
      }
      expect += prob * v[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(base) + offset)];
    }
    return cost + gamma * expect;
  }

  /// Per-state values shared by every joint action: the all-aged successor
  /// and each single-arm success successor.
  struct StateCache {
    std::size_t base = 0;
    double idle_cost = 0.0;
    double v_base = 0.0;
    std::array<std::array<double, 3>, 8> extra_cost{};
    std::array<std::array<std::ptrdiff_t, 3>, 8> jump{};
    std::array<std::array<double, 3>, 8> v_single{};
  };

  void prepare(std::size_t joint, const std::vector<double>& v, StateCache& c) const {
    c.base = 0;
    c.idle_cost = 0.0;
    for (std::size_t i = 0; i < arms_.size(); ++i) {
      const Arm& a = arms_[i];
      const std::size_t l = joint % a.states.size();
      joint /= a.states.size();
      c.base += a.aged[l] * a.stride;
      c.idle_cost += a.cost[3][l];
      for (int u = 0; u < 3; ++u) {
        c.extra_cost[i][u] = a.cost[u][l] - a.cost[3][l];
        c.jump[i][u] = (static_cast<std::ptrdiff_t>(a.success[u][l]) -
                        static_cast<std::ptrdiff_t>(a.aged[l])) *
                       static_cast<std::ptrdiff_t>(a.stride);
      }
    }
    c.v_base = v[c.base];
    for (std::size_t i = 0; i < arms_.size(); ++i)
      for (int u = 0; u < 3; ++u)
        c.v_single[i][u] = v[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(c.base) + c.jump[i][u])];
  }

  /// Active (arm, action) pairs of a joint action.
  struct CompiledAction {
    int count = 0;
    std::array<std::uint8_t, 8> arm{};
    std::array<std::uint8_t, 8> action{};
    std::array<double, 8> lambda{};
  };

  [[nodiscard]] CompiledAction compile(std::span<const Action> act) const {
    CompiledAction ca;
    for (std::size_t i = 0; i < act.size(); ++i)
      if (act[i] != Action::Idle) {
        ca.arm[static_cast<std::size_t>(ca.count)] = static_cast<std::uint8_t>(i);
        ca.action[static_cast<std::size_t>(ca.count)] = static_cast<std::uint8_t>(to_int(act[i]));
        ca.lambda[static_cast<std::size_t>(ca.count)] = arms_[i].params.lambda[to_int(act[i])];
        ++ca.count;
      }
    return ca;
  }

  [[nodiscard]] double q_cached(const std::vector<double>& v, const StateCache& c,
                                const CompiledAction& ca, double gamma) const {
    double cost = c.idle_cost;
    for (int j = 0; j < ca.count; ++j) cost += c.extra_cost[ca.arm[j]][ca.action[j]];
    switch (ca.count) {
      case 0: return cost + gamma * c.v_base;
      case 1: {
        const double v1 = c.v_single[ca.arm[0]][ca.action[0]];
        return cost + gamma * (c.v_base + ca.lambda[0] * (v1 - c.v_base));
      }
      case 2: {
        const double va = c.v_single[ca.arm[0]][ca.action[0]];
        const double vb = c.v_single[ca.arm[1]][ca.action[1]];
        const std::ptrdiff_t off = c.jump[ca.arm[0]][ca.action[0]] + c.jump[ca.arm[1]][ca.action[1]];
        const double vab = v[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(c.base) + off)];
        const double la = ca.lambda[0];
        const double lb = ca.lambda[1];
        const double e = c.v_base + la * (va - c.v_base) + lb * (vb - c.v_base) +
                         la * lb * (vab - va - vb + c.v_base);
        return cost + gamma * e;
      }
      default: break;
    }
    double expect = 0.0;
    const unsigned subsets = 1u << ca.count;
    for (unsigned mask = 0; mask < subsets; ++mask) {
      double prob = 1.0;
      std::ptrdiff_t offset = 0;
      for (int j = 0; j < ca.count; ++j) {
        if (mask & (1u << j)) {
          prob *= ca.lambda[j];
          offset += c.jump[ca.arm[j]][ca.action[j]];
        } else {
          prob *= 1.0 - ca.lambda[j];
        }
      }
      expect += prob * v[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(c.base) + offset)];
    }
    return cost + gamma * expect;
  }

  void locals_of(std::size_t joint, std::span<std::size_t> out) const {
    for (std::size_t i = 0; i < arms_.size(); ++i) {
      out[i] = joint % arms_[i].states.size();
      joint /= arms_[i].states.size();
    }
  }

 private:
  struct Arm {
    ArmParams params;
    std::vector<AoiState> states;
    std::size_t stride = 1;
    std::vector<std::size_t> aged;
    std::array<std::vector<std::size_t>, 3> success;
    std::array<std::vector<double>, 4> cost;
  };
  std::vector<Arm> arms_;
  std::size_t size_ = 0;
};

/// Every joint action admissible under the activation rule, in a fixed order.
inline std::vector<JointAction> feasible_joint_actions(std::size_t arms, std::size_t m,
                                                       ActivationRule rule) {
  std::vector<JointAction> out;
  JointAction cur(arms, Action::Idle);
  auto rec = [&](auto&& self, std::size_t i, std::size_t active) -> void {
    if (i == arms) {
      if (rule == ActivationRule::AtMost ? active <= m : active == std::min(m, arms))
        out.push_back(cur);
      return;
    }
    for (int u = 0; u < 4; ++u) {
      const bool is_active = u != 3;
      if (is_active && active >= m) continue;
      cur[i] = static_cast<Action>(u);
      self(self, i + 1, active + (is_active ? 1 : 0));
    }
    cur[i] = Action::Idle;
  };
  rec(rec, 0, 0);
  return out;
}

/// Optimal joint policy produced by exact_joint_dp.
class JointPolicy final : public Scheduler {
 public:
  JointPolicy(std::shared_ptr<const JointSpace> space, std::vector<JointAction> actions,
              std::vector<std::uint16_t> choice)
      : space_(std::move(space)), actions_(std::move(actions)), choice_(std::move(choice)) {}
  [[nodiscard]] std::string name() const override { return "joint-dp"; }
  JointAction schedule(std::span<const AoiState> fleet, Rng&) const override {
    return actions_[choice_[space_->encode(fleet)]];
  }

 private:
  std::shared_ptr<const JointSpace> space_;
  std::vector<JointAction> actions_;
  std::vector<std::uint16_t> choice_;
};

struct JointDpResult {
  /// (1-gamma) V(all (1,1)) / N.
  double J = 0.0;
  long iterations = 0;
  std::size_t states = 0;
  std::size_t joint_actions = 0;
  std::shared_ptr<const JointPolicy> policy;
};

struct JointDpOptions {
  double tol = 1e-9;
  long max_iterations = 100000;
  ActivationRule rule = ActivationRule::Exactly;
  JointBudget budget;
};

/// Value iteration on the product space with M-constrained joint actions.
inline JointDpResult exact_joint_dp(const std::vector<ArmSpec>& arms, std::size_t m,
                                    Discount gamma, const JointDpOptions& opt = {}) {
  if (m < 1 || m > arms.size()) throw InvalidArgument("M must lie in [1, N]");
  auto space = std::make_shared<const JointSpace>(arms, opt.budget);
  const auto actions = feasible_joint_actions(arms.size(), m, opt.rule);
  std::vector<JointSpace::CompiledAction> compiled;
  for (const auto& a : actions) compiled.push_back(space->compile(a));
  const std::size_t n = space->size();
  const double g = gamma.value();
  const double stop = stopping_threshold(opt.tol, gamma);
  std::vector<double> v(n, 0.0);
  std::vector<double> next(n, 0.0);
  std::vector<std::uint16_t> choice(n, 0);
  JointDpResult res;
  res.states = n;
  res.joint_actions = actions.size();
  auto sweep = [&](bool record) {
    double change = 0.0;
    std::mutex mu;
    parallel_chunks(n, [&](std::size_t begin, std::size_t end) {
      JointSpace::StateCache cache;
      double local_change = 0.0;
      for (std::size_t x = begin; x < end; ++x) {
        space->prepare(x, v, cache);
        double best = std::numeric_limits<double>::infinity();
        std::uint16_t arg = 0;
        for (std::size_t k = 0; k < compiled.size(); ++k) {
          const double q = space->q_cached(v, cache, compiled[k], g);
          if (q < best) {
            best = q;
            arg = static_cast<std::uint16_t>(k);
          }
        }
        next[x] = best;
        if (record) choice[x] = arg;
        local_change = std::max(local_change, std::abs(best - v[x]));
      }
      std::lock_guard lock(mu);
      change = std::max(change, local_change);
    });
    return change;
  };
  for (long it = 1;; ++it) {
    if (it > opt.max_iterations)
      throw ConvergenceError("joint value iteration did not converge");
    const double change = sweep(false);
    std::swap(v, next);
    if (change <= stop) {
      res.iterations = it;
      break;
    }
  }
  sweep(true);
  const FleetState start(arms.size(), AoiState{1, 1});
  res.J = (1.0 - g) * v[space->encode(start)] / static_cast<double>(arms.size());
  res.policy = std::make_shared<const JointPolicy>(space, actions, std::move(choice));
  return res;
}

struct PolicyEvaluation {
  double J = 0.0;
  long iterations = 0;
};

/// Exact discounted cost of a deterministic stationary scheduler on the
/// joint chain, normalized like J.
inline PolicyEvaluation evaluate_policy_exact(const std::vector<ArmSpec>& arms, std::size_t m,
                                              Discount gamma, const Scheduler& scheduler,
                                              double tol = 1e-9, const JointBudget& budget = {},
                                              long max_iterations = 100000) {
  if (!scheduler.deterministic())
    throw InvalidArgument("exact evaluation needs a deterministic scheduler; '" +
                          scheduler.name() + "' is randomized");
  const JointSpace space(arms, budget);
  const std::size_t n = space.size();
  const std::size_t na = arms.size();
  if (na > 8) throw BudgetExceeded("exact evaluation supports at most 8 arms");
  // Two bits per arm.
  std::vector<std::uint16_t> code(n);
  parallel_chunks(n, [&](std::size_t begin, std::size_t end) {
    Rng unused(0);
    for (std::size_t x = begin; x < end; ++x) {
      const FleetState fleet = space.decode(x);
      const JointAction act = scheduler.schedule(fleet, unused);
      std::size_t active = 0;
      std::uint16_t c = 0;
      for (std::size_t i = 0; i < na; ++i) {
        active += act[i] != Action::Idle;
        c = static_cast<std::uint16_t>(c | (to_int(act[i]) << (2 * i)));
      }
      if (active > m)
        throw std::logic_error(scheduler.name() + " violates the activation constraint");
      code[x] = c;
    }
  });
  const double g = gamma.value();
  const double stop = stopping_threshold(tol, gamma);
  std::vector<double> v(n, 0.0);
  std::vector<double> next(n, 0.0);
  PolicyEvaluation out;
  for (long it = 1;; ++it) {
    if (it > max_iterations) throw ConvergenceError("policy evaluation did not converge");
    double change = 0.0;
    std::mutex mu;
    parallel_chunks(n, [&](std::size_t begin, std::size_t end) {
      std::vector<std::size_t> locals(na);
      JointAction act(na);
      double local_change = 0.0;
      for (std::size_t x = begin; x < end; ++x) {
        space.locals_of(x, locals);
        for (std::size_t i = 0; i < na; ++i) act[i] = static_cast<Action>((code[x] >> (2 * i)) & 3);
        next[x] = space.q_value(v, locals, act, g);
        local_change = std::max(local_change, std::abs(next[x] - v[x]));
      }
      std::lock_guard lock(mu);
      change = std::max(change, local_change);
    });
    std::swap(v, next);
    if (change <= stop) {
      out.iterations = it;
      break;
    }
  }
  const FleetState start(na, AoiState{1, 1});
  out.J = (1.0 - g) * v[space.encode(start)] / static_cast<double>(na);
  return out;
}

/// Gap of a policy cost relative to the joint optimum, in percent.
inline double gap_percent(double j, double j_opt) { return 100.0 * (j - j_opt) / j_opt; }

}  // namespace aoisched
