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

// Relaxed single-arm problem with an idle subsidy and the exact (bisection)
// and interpolated Whittle index tables built on it.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aoisched/mdp_core.hpp"
#include "aoisched/parallel.hpp"
#include "aoisched/single_source.hpp"

namespace aoisched {

/// Reward per slot of passivity in the relaxed problem.
struct Subsidy {
  double w = 0.0;
  explicit Subsidy(double value) : w(value) {
    if (!std::isfinite(value)) throw InvalidArgument("subsidy must be finite");
  }
};

/// Raised when bisection cannot bracket a state's index.
class BracketError : public std::runtime_error {
 public:
  /// `below` is true when the state stayed passive at every lower subsidy
  /// tried, false when it stayed active at every upper subsidy.
  BracketError(const std::string& what, bool below, double last_tried)
      : std::runtime_error(what), below_(below), last_tried_(last_tried) {}
  [[nodiscard]] bool below() const { return below_; }
  [[nodiscard]] double last_tried() const { return last_tried_; }

 private:
  bool below_;
  double last_tried_;
};

/// Comparison slack for the passive test: Δ_u3 >= -kPassiveTolerance is passive.
inline constexpr double kPassiveTolerance = 1e-8;

inline double relaxed_q(const ValueTable& v, AoiState s, Action u, const ArmParams& p,
                        Discount gamma, double w) {
  const double q = q_value(v, s, u, p, gamma);
  return u == Action::Idle ? q - w : q;
}

struct RelaxedSolution {
  ValueTable values;
  PolicyTable policy;  ///< actions in {0,1,2,3}; ties go to the lowest action number
  double subsidy = 0.0;
  long iterations = 0;
};

namespace detail {

inline void relaxed_sweep(const ValueTable& v, ValueTable& out, PolicyTable* policy,
                          const ArmParams& p, Discount gamma, double w) {
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const AoiState s = state_at(i);
    double best = relaxed_q(v, s, Action::Sense, p, gamma, w);
    Action arg = Action::Sense;
    for (Action u : {Action::Comm, Action::Joint, Action::Idle}) {
      const double q = relaxed_q(v, s, u, p, gamma, w);
      if (q < best) {
        best = q;
        arg = u;
      }
    }
    out.raw()[i] = best;
    if (policy) policy->raw()[i] = arg;
  }
}

}  // namespace detail

/// Value iteration for the four-action relaxed problem. `warm_start`, when
/// given, replaces the all-zero initial table; the stopping rule guarantees
/// sup-norm error <= tol from any start.
inline RelaxedSolution relaxed_value_iteration(const ArmParams& p, Discount gamma, Subsidy w,
                                               double tol, long max_iterations = 1'000'000,
                                               const ValueTable* warm_start = nullptr) {
  if (!(tol > 0.0)) throw InvalidArgument("tolerance must be positive");
  if (warm_start && warm_start->trunc() != p.trunc_A)
    throw InvalidArgument("warm start truncation does not match parameters");
  const double stop = stopping_threshold(tol, gamma);
  ValueTable v = warm_start ? *warm_start : ValueTable(p.trunc_A, 0.0);
  ValueTable next(p.trunc_A, 0.0);
  for (long it = 1; it <= max_iterations; ++it) {
    detail::relaxed_sweep(v, next, nullptr, p, gamma, w.w);
    const double change = sup_distance(next, v);
    std::swap(v, next);
    if (change <= stop) {
      RelaxedSolution sol{std::move(v), PolicyTable(p.trunc_A, Action::Sense), w.w, it};
      detail::relaxed_sweep(sol.values, next, &sol.policy, p, gamma, w.w);
      return sol;
    }
  }
  throw ConvergenceError("relaxed value iteration did not converge within " +
                         std::to_string(max_iterations) + " iterations");
}

/// Δ_u3 = Q_u - Q_idle for u in {sense, comm, joint}.
inline std::array<double, 3> active_idle_differences(const ValueTable& v, AoiState s,
                                                     const ArmParams& p, Discount gamma,
                                                     double w) {
  const int a = v.trunc();
  const double g = gamma.value();
  const double v_aged = v[aged(s, a)];
  std::array<double, 3> d{};
  for (Action u : kActiveActions) {
    const int k = to_int(u);
    d[k] = p.cost[k] + w - g * p.lambda[k] * (v_aged - v[success_state(s, u, a)]);
  }
  return d;
}

/// max_u [γλ_u V(s+1) - γλ_u V(s'_u) - c_u]: the subsidy at which idling ties
/// with the best active action for the given value table.
inline double whittle_update(const ValueTable& v, AoiState s, const ArmParams& p, Discount gamma) {
  const auto d = active_idle_differences(v, s, p, gamma, 0.0);
  return -std::min({d[0], d[1], d[2]});
}

inline bool is_passive(const ValueTable& v, AoiState s, const ArmParams& p, Discount gamma,
                       double w, double slack = kPassiveTolerance) {
  const auto d = active_idle_differences(v, s, p, gamma, w);
  return d[0] >= -slack && d[1] >= -slack && d[2] >= -slack;
}

/// Best active action (lowest number on ties) under a relaxed value table.
inline Action best_active_action(const ValueTable& v, AoiState s, const ArmParams& p,
                                 Discount gamma) {
  Action arg = Action::Sense;
  double best = q_value(v, s, Action::Sense, p, gamma);
  for (Action u : {Action::Comm, Action::Joint}) {
    const double q = q_value(v, s, u, p, gamma);
    if (q < best) {
      best = q;
      arg = u;
    }
  }
  return arg;
}

struct PassiveSet {
  TriangularTable<std::uint8_t> membership;
  double at_subsidy = 0.0;

  [[nodiscard]] bool contains(AoiState s) const { return membership[s] != 0; }
  [[nodiscard]] std::size_t count() const {
    std::size_t n = 0;
    for (auto m : membership.raw()) n += m;
    return n;
  }
  /// True when every member of this set is also a member of `other`.
  [[nodiscard]] bool subset_of(const PassiveSet& other) const {
    for (std::size_t i = 0; i < membership.size(); ++i)
      if (membership.raw()[i] && !other.membership.raw()[i]) return false;
    return true;
  }
};

inline PassiveSet passive_set_from(const ValueTable& v, const ArmParams& p, Discount gamma,
                                   double w) {
  PassiveSet ps{TriangularTable<std::uint8_t>(v.trunc(), 0), w};
  for (std::size_t i = 0; i < v.size(); ++i)
    ps.membership.raw()[i] = is_passive(v, state_at(i), p, gamma, w) ? 1 : 0;
  return ps;
}

inline PassiveSet passive_set(const ArmParams& p, Discount gamma, Subsidy w, double tol) {
  const RelaxedSolution sol = relaxed_value_iteration(p, gamma, w, tol);
  return passive_set_from(sol.values, p, gamma, w.w);
}

/// Closed-form sufficient condition for indexability: gamma <= 1/(1+lambda1).
inline bool indexable_sufficient(const ArmParams& p, Discount gamma) {
  return gamma.value() <= 1.0 / (1.0 + p.lambda[1]);
}

struct BisectionOptions {
  double eps = 1e-6;
  int k_max = 200;
  /// Relaxed-DP tolerance; <= 0 selects eps / 10.
  double dp_tol = 0.0;
  int max_expansions = 40;

  [[nodiscard]] double effective_dp_tol() const { return dp_tol > 0.0 ? dp_tol : eps / 10.0; }
};

inline std::pair<double, double> initial_bracket(const ArmParams& p, Discount gamma) {
  const double r = p.cost[2] + static_cast<double>(p.trunc_A) / (1.0 - gamma.value());
  return {-r, r};
}

struct BisectionResult {
  double index = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  int iterations = 0;
  int expansions = 0;
  long dp_solves = 0;
  bool bracketed = true;
  Action active_action = Action::Sense;
};

/// Bisection on the subsidy for one state. Throws BracketError when the
/// bracket cannot be established after the configured number of doublings.
inline BisectionResult whittle_index_bisection(const ArmParams& p, Discount gamma, AoiState s,
                                               const BisectionOptions& opt = {}) {
  p.validate();
  if (!s.valid(p.trunc_A)) throw InvalidArgument("state outside the truncated triangle");
  if (!(opt.eps > 0.0)) throw InvalidArgument("eps must be positive");
  const double tol = opt.effective_dp_tol();
  BisectionResult res;
  auto [lo, hi] = initial_bracket(p, gamma);
  ValueTable warm(p.trunc_A, 0.0);
  auto passive_at = [&](double w) {
    RelaxedSolution sol = relaxed_value_iteration(p, gamma, Subsidy(w), tol, 1'000'000, &warm);
    ++res.dp_solves;
    warm = std::move(sol.values);
    return is_passive(warm, s, p, gamma, w);
  };
  int expansions = 0;
  while (passive_at(lo)) {
    if (++expansions > opt.max_expansions)
      throw BracketError("state (" + std::to_string(s.monitor_age) + "," +
                         std::to_string(s.bs_age) + ") is passive at every tried lower subsidy",
                         true, lo);
    lo *= 2.0;
  }
  while (!passive_at(hi)) {
    if (++expansions > opt.max_expansions)
      throw BracketError("state (" + std::to_string(s.monitor_age) + "," +
                         std::to_string(s.bs_age) + ") is active at every tried upper subsidy",
                         false, hi);
    hi *= 2.0;
  }
  res.expansions = expansions;
  for (int k = 1; k <= opt.k_max; ++k) {
    const double mid = 0.5 * (lo + hi);
    if (passive_at(mid))
      hi = mid;
    else
      lo = mid;
    res.iterations = k;
    if (std::abs(hi - lo) < opt.eps) break;
  }
  res.lower = lo;
  res.upper = hi;
  res.index = 0.5 * (lo + hi);
  RelaxedSolution at_index =
      relaxed_value_iteration(p, gamma, Subsidy(res.index), tol, 1'000'000, &warm);
  ++res.dp_solves;
  res.active_action = best_active_action(at_index.values, s, p, gamma);
  return res;
}

enum class IndexKind { Exact, Approximate };

inline const char* kind_name(IndexKind k) { return k == IndexKind::Exact ? "exact" : "approximate"; }

/// Per-state index table with its build diagnostics.
struct IndexTable {
  IndexKind kind = IndexKind::Exact;
  int trunc_A = 0;
  TriangularTable<double> index;
  /// Active action taken when the arm is scheduled.
  PolicyTable active_action;
  /// Interpolated subsidy used for the one-step update; equals `index` on
  /// bisection states.
  TriangularTable<double> interpolated;
  TriangularTable<std::uint8_t> bisected;
  std::vector<AoiState> bracket_failures;
  /// Interior states left at the interpolated value because an anchor of
  /// their row failed to bracket.
  long update_fallbacks = 0;
  bool indexable = false;
  double eps = 0.0;
  int k_max = 0;
  int max_iterations = 0;
  int max_expansions = 0;
  long dp_solves = 0;
  double seconds = 0.0;

  [[nodiscard]] double operator[](AoiState s) const { return index[s]; }
};

namespace detail {

inline IndexTable make_table(IndexKind kind, const ArmParams& p, Discount gamma,
                             const BisectionOptions& opt) {
  IndexTable t;
  t.kind = kind;
  t.trunc_A = p.trunc_A;
  t.index = TriangularTable<double>(p.trunc_A, 0.0);
  t.active_action = PolicyTable(p.trunc_A, Action::Sense);
  t.interpolated = TriangularTable<double>(p.trunc_A, 0.0);
  t.bisected = TriangularTable<std::uint8_t>(p.trunc_A, 0);
  t.indexable = indexable_sufficient(p, gamma);
  t.eps = opt.eps;
  t.k_max = opt.k_max;
  return t;
}

struct SlotResult {
  BisectionResult bisection;
  bool failed = false;
  double fallback = 0.0;
};

/// Bisects every listed state; failures fall back to the widest tried
/// bracket end and are flagged.
inline std::vector<SlotResult> bisect_states(const std::vector<AoiState>& states,
                                             const ArmParams& p, Discount gamma,
                                             const BisectionOptions& opt) {
  std::vector<SlotResult> out(states.size());
  parallel_for(states.size(), [&](std::size_t i) {
    try {
      out[i].bisection = whittle_index_bisection(p, gamma, states[i], opt);
    } catch (const BracketError& e) {
      out[i].failed = true;
      out[i].fallback = e.last_tried();
      out[i].bisection.index = out[i].fallback;
      out[i].bisection.bracketed = false;
    }
  });
  return out;
}

inline void store(IndexTable& t, AoiState s, const SlotResult& r) {
  t.index[s] = r.bisection.index;
  t.interpolated[s] = r.bisection.index;
  t.active_action[s] = r.bisection.active_action;
  t.bisected[s] = 1;
  t.max_iterations = std::max(t.max_iterations, r.bisection.iterations);
  t.max_expansions = std::max(t.max_expansions, r.bisection.expansions);
  t.dp_solves += r.bisection.dp_solves;
  if (r.failed) t.bracket_failures.push_back(s);
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Bisection at every state of the truncated triangle.
inline IndexTable exact_index_table(const ArmParams& p, Discount gamma,
                                    const BisectionOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  IndexTable t = detail::make_table(IndexKind::Exact, p, gamma, opt);
  const auto states = reachable_states(p.trunc_A);
  const auto results = detail::bisect_states(states, p, gamma, opt);
  for (std::size_t i = 0; i < states.size(); ++i) detail::store(t, states[i], results[i]);
  t.seconds = detail::seconds_since(t0);
  return t;
}

/// Diagonal and right-boundary states carry the bisection indices.
inline std::vector<AoiState> anchor_states(int trunc) {
  std::vector<AoiState> out;
  for (int a = 1; a <= trunc; ++a) out.push_back({a, a});
  for (int b = 1; b < trunc; ++b) out.push_back({trunc, b});
  return out;
}

/// Bisection on anchor states, linear interpolation along each row, then one
/// relaxed solve per interior state at the interpolated subsidy.
inline IndexTable approx_index_table(const ArmParams& p, Discount gamma,
                                     const BisectionOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  IndexTable t = detail::make_table(IndexKind::Approximate, p, gamma, opt);
  const int a_max = p.trunc_A;
  const auto anchors = anchor_states(a_max);
  const auto results = detail::bisect_states(anchors, p, gamma, opt);
  for (std::size_t i = 0; i < anchors.size(); ++i) detail::store(t, anchors[i], results[i]);

  auto failed = [&](AoiState s) {
    for (const auto& f : t.bracket_failures)
      if (f == s) return true;
    return false;
  };
  const double tol = opt.effective_dp_tol();
  // Rows are independent; within a row each solve warm-starts from the
  // previous one, so results do not depend on the thread count.
  std::vector<long> row_solves(static_cast<std::size_t>(a_max), 0);
  parallel_for(static_cast<std::size_t>(a_max > 1 ? a_max - 1 : 0), [&](std::size_t row) {
    const int b = static_cast<int>(row) + 1;
    const double left = t.index.at(b, b);
    const double right = t.index.at(a_max, b);
    const bool skip_update = failed({b, b}) || failed({a_max, b});
    ValueTable warm(a_max, 0.0);
    for (int a = b + 1; a < a_max; ++a) {
      const AoiState s{a, b};
      const double weight = static_cast<double>(a - b) / static_cast<double>(a_max - b);
      const double hat = left + weight * (right - left);
      RelaxedSolution sol =
          relaxed_value_iteration(p, gamma, Subsidy(hat), tol, 1'000'000, &warm);
      const double value = skip_update ? hat : whittle_update(sol.values, s, p, gamma);
      // The scheduled action minimizes Q_u at the state's own index.
      RelaxedSolution at_index =
          relaxed_value_iteration(p, gamma, Subsidy(value), tol, 1'000'000, &sol.values);
      row_solves[row] += 2;
      t.interpolated[s] = hat;
      t.index[s] = value;
      t.active_action[s] = best_active_action(at_index.values, s, p, gamma);
      warm = std::move(at_index.values);
    }
  });
  for (int b = 1; b < a_max; ++b) {
    if (failed({b, b}) || failed({a_max, b})) t.update_fallbacks += std::max(0, a_max - b - 1);
    t.dp_solves += row_solves[static_cast<std::size_t>(b - 1)];
  }
  t.seconds = detail::seconds_since(t0);
  return t;
}

/// Curvature-based a-priori bound on the one-update approximation error.
struct CurvatureBound {
  /// Largest absolute second difference of the exact index per row; empty
  /// for rows with fewer than three states.
  std::vector<std::optional<double>> row_curvature;
  TriangularTable<double> bound;
};

inline CurvatureBound curvature_error_bound(const IndexTable& exact, Discount gamma,
                                            const ArmParams& p) {
  const int a_max = exact.trunc_A;
  if (a_max != p.trunc_A) throw InvalidArgument("index table truncation does not match parameters");
  const double g = gamma.value();
  const double factor = g * p.lambda_max() / (1.0 - g);
  CurvatureBound out{std::vector<std::optional<double>>(static_cast<std::size_t>(a_max)),
                     TriangularTable<double>(a_max, 0.0)};
  for (int b = 1; b <= a_max; ++b) {
    if (a_max - b + 1 < 3) continue;
    double h = 0.0;
    for (int a = b; a + 2 <= a_max; ++a) {
      const double second = exact.index.at(a + 2, b) - 2.0 * exact.index.at(a + 1, b) +
                            exact.index.at(a, b);
      h = std::max(h, std::abs(second));
    }
    out.row_curvature[static_cast<std::size_t>(b - 1)] = h;
    for (int a = b; a <= a_max; ++a)
      out.bound.at(a, b) = factor * h * static_cast<double>(a - b) * static_cast<double>(a_max - a);
  }
  return out;
}

}  // namespace aoisched
