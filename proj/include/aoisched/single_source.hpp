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

// Single-source discounted MDP: value iteration on the truncated triangle,
// threshold extraction and numerical checks of the structural properties of
// the optimal value function.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aoisched/mdp_core.hpp"
#include "aoisched/parallel.hpp"

namespace aoisched {

using ValueTable = TriangularTable<double>;
using PolicyTable = TriangularTable<Action>;

/// Raised by extract_thresholds when a row is not ordered sense -> joint -> comm.
class StructureViolation : public std::runtime_error {
 public:
  StructureViolation(int row, int position, const std::string& what)
      : std::runtime_error(what), row_(row), position_(position) {}
  [[nodiscard]] int row() const { return row_; }
  [[nodiscard]] int position() const { return position_; }

 private:
  int row_;
  int position_;
};

/// Expected continuation value of an active action, before discounting.
inline double expected_next_value(const ValueTable& v, AoiState s, Action u, const ArmParams& p) {
  const int a = v.trunc();
  if (u == Action::Idle) return v[aged(s, a)];
  const double lam = p.lambda[to_int(u)];
  return lam * v[success_state(s, u, a)] + (1.0 - lam) * v[aged(s, a)];
}

inline double q_value(const ValueTable& v, AoiState s, Action u, const ArmParams& p,
                      Discount gamma) {
  return stage_cost(s, u, p) + gamma.value() * expected_next_value(v, s, u, p);
}

struct ActionDifferences {
  double d01 = 0.0;  ///< Q_sense - Q_comm
  double d02 = 0.0;  ///< Q_sense - Q_joint
  double d21 = 0.0;  ///< Q_joint - Q_comm
};

/// Closed-form action differences; successors are read through clipping.
inline ActionDifferences action_differences(const ValueTable& v, AoiState s, const ArmParams& p,
                                            Discount gamma) {
  const int a = v.trunc();
  const double g = gamma.value();
  const auto& l = p.lambda;
  const auto& c = p.cost;
  const double v_sensed = v[clip({s.monitor_age + 1, 1}, a)];
  const double v_delivered = v[clip({s.bs_age + 1, s.bs_age + 1}, a)];
  const double v_joint = v[clip({s.bs_age + 1, 1}, a)];
  const double v_aged = v[aged(s, a)];
  ActionDifferences d;
  d.d01 = (c[0] - c[1]) + g * l[0] * v_sensed - g * l[1] * v_delivered + g * (l[1] - l[0]) * v_aged;
  d.d02 = (c[0] - c[2]) + g * l[0] * v_sensed - g * l[2] * v_joint + g * (l[2] - l[0]) * v_aged;
  d.d21 = (c[2] - c[1]) + g * l[2] * v_joint - g * l[1] * v_delivered + g * (l[1] - l[2]) * v_aged;
  return d;
}

/// Sense when it beats both alternatives, comm when it strictly beats sense
/// and weakly beats joint, joint otherwise.
inline Action classify(double q0, double q1, double q2) {
  const double d01 = q0 - q1;
  const double d02 = q0 - q2;
  const double d21 = q2 - q1;
  if (d01 <= 0.0 && d02 <= 0.0) return Action::Sense;
  if (d01 > 0.0 && d21 >= 0.0) return Action::Comm;
  return Action::Joint;
}

struct Backup {
  ValueTable values;
  PolicyTable policy;
};

namespace detail {
inline constexpr std::size_t kParallelSweepMin = 1 << 14;
}

/// One application of the Bellman operator (Jacobi sweep).
inline Backup bellman_backup(const ValueTable& v, const ArmParams& p, Discount gamma) {
  if (v.trunc() != p.trunc_A)
    throw InvalidArgument("value table truncation " + std::to_string(v.trunc()) +
                          " does not match parameters A=" + std::to_string(p.trunc_A));
  Backup out{ValueTable(v.trunc()), PolicyTable(v.trunc(), Action::Sense)};
  auto sweep = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const AoiState s = state_at(i);
      const double q0 = q_value(v, s, Action::Sense, p, gamma);
      const double q1 = q_value(v, s, Action::Comm, p, gamma);
      const double q2 = q_value(v, s, Action::Joint, p, gamma);
      const Action u = classify(q0, q1, q2);
      out.policy.raw()[i] = u;
      out.values.raw()[i] = u == Action::Sense ? q0 : (u == Action::Comm ? q1 : q2);
    }
  };
  if (v.size() >= detail::kParallelSweepMin)
    parallel_chunks(v.size(), sweep);
  else
    sweep(0, v.size());
  return out;
}

inline double sup_distance(const ValueTable& a, const ValueTable& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.raw()[i] - b.raw()[i]));
  return d;
}

/// Sup-norm change between successive iterates that certifies the final
/// iterate is within `tol` of the fixed point.
inline double stopping_threshold(double tol, Discount gamma) {
  return tol * (1.0 - gamma.value()) / (2.0 * gamma.value());
}

struct SingleSourceSolution {
  ValueTable values;
  PolicyTable policy;
  long iterations = 0;
};

inline SingleSourceSolution value_iteration(const ArmParams& p, Discount gamma, double tol,
                                            long max_iterations = 1'000'000) {
  p.validate();
  if (!(tol > 0.0)) throw InvalidArgument("tolerance must be positive");
  const double stop = stopping_threshold(tol, gamma);
  ValueTable v(p.trunc_A, 0.0);
  for (long it = 1; it <= max_iterations; ++it) {
    Backup next = bellman_backup(v, p, gamma);
    const double change = sup_distance(next.values, v);
    v = std::move(next.values);
    if (change <= stop) {
      // Policy greedy with respect to the returned values.
      Backup greedy = bellman_backup(v, p, gamma);
      return {std::move(v), std::move(greedy.policy), it};
    }
  }
  throw ConvergenceError("value iteration did not converge within " +
                         std::to_string(max_iterations) + " iterations");
}

/// Per-row switching points. kInfinite marks a threshold that is not reached
/// inside the truncated row.
struct ThresholdRow {
  static constexpr int kInfinite = std::numeric_limits<int>::max();
  int bs_age = 1;
  int tau1 = kInfinite;
  int tau2 = kInfinite;
};

inline std::vector<ThresholdRow> extract_thresholds(const PolicyTable& policy) {
  const int a = policy.trunc();
  std::vector<ThresholdRow> rows;
  rows.reserve(static_cast<std::size_t>(a));
  // Phase rank along a row: sense=0, joint=1, comm=2; it may never decrease.
  auto rank = [](Action u) {
    switch (u) {
      case Action::Sense: return 0;
      case Action::Joint: return 1;
      case Action::Comm: return 2;
      case Action::Idle: break;
    }
    return -1;
  };
  for (int b = 1; b <= a; ++b) {
    int phase = 0;
    int last_sense = b - 1;
    int last_sense_or_joint = b - 1;
    for (int m = b; m <= a; ++m) {
      const Action u = policy.at(m, b);
      const int r = rank(u);
      if (r < 0)
        throw StructureViolation(b, m, "structure violation: idle action in row bs_age=" +
                                           std::to_string(b) + " at monitor_age=" +
                                           std::to_string(m));
      if (r < phase)
        throw StructureViolation(b, m,
                                 "structure violation: row bs_age=" + std::to_string(b) +
                                     " switches back to " + action_name(u) +
                                     " at monitor_age=" + std::to_string(m));
      phase = r;
      if (u == Action::Sense) last_sense = m;
      if (u != Action::Comm) last_sense_or_joint = m;
    }
    ThresholdRow row;
    row.bs_age = b;
    row.tau1 = last_sense == a ? ThresholdRow::kInfinite : last_sense;
    row.tau2 = last_sense_or_joint == a ? ThresholdRow::kInfinite : last_sense_or_joint;
    rows.push_back(row);
  }
  return rows;
}

/// Outcome of one structural check over the truncated triangle. Instances
/// anchored at monitor_age > A - margin are boundary instances: they are
/// counted but do not decide `passed`.
struct CheckResult {
  std::string id;
  std::string description;
  bool applicable = true;
  std::string note;
  int margin = 2;
  long interior_checked = 0;
  long interior_violations = 0;
  long boundary_checked = 0;
  long boundary_violations = 0;
  double worst_interior_excess = 0.0;
  std::optional<AoiState> first_violation;

  [[nodiscard]] bool passed() const { return !applicable || interior_violations == 0; }
};

struct VerificationReport {
  double tolerance = 1e-8;
  int boundary_margin = 2;
  bool sense_joint_condition = false;
  std::vector<CheckResult> checks;

  [[nodiscard]] bool all_passed() const {
    for (const auto& c : checks)
      if (!c.passed()) return false;
    return true;
  }
  [[nodiscard]] const CheckResult* find(const std::string& id) const {
    for (const auto& c : checks)
      if (c.id == id) return &c;
    return nullptr;
  }
};

namespace detail {

class CheckRecorder {
 public:
  CheckRecorder(std::string id, std::string description, int trunc, int margin)
      : trunc_(trunc), margin_(margin) {
    result_.id = std::move(id);
    result_.description = std::move(description);
    result_.margin = margin;
  }

  /// `excess` > 0 means the inequality is violated by that amount.
  void record(AoiState anchor, double excess) {
    const bool interior = anchor.monitor_age <= trunc_ - margin_;
    const bool bad = excess > 0.0;
    if (interior) {
      ++result_.interior_checked;
      if (bad) {
        ++result_.interior_violations;
        result_.worst_interior_excess = std::max(result_.worst_interior_excess, excess);
        if (!result_.first_violation) result_.first_violation = anchor;
      }
    } else {
      ++result_.boundary_checked;
      if (bad) ++result_.boundary_violations;
    }
  }

  CheckResult take() { return std::move(result_); }
  CheckResult& result() { return result_; }

 private:
  int trunc_;
  int margin_;
  CheckResult result_;
};

}  // namespace detail

/// Distance from the truncation boundary beyond which clipping no longer
/// moves horizontal increments by more than `tolerance`. Along the comm-failure
/// chain the boundary distortion shrinks by gamma*(1-lambda1) per step.
inline int horizontal_increment_margin(const ArmParams& p, Discount gamma, double tolerance) {
  const double g = gamma.value();
  const double decay = g * (1.0 - p.lambda[1]);
  const double scale = 1.0 / (1.0 - g + g * p.lambda[1]);
  if (scale <= tolerance) return 0;
  return static_cast<int>(std::ceil(std::log(tolerance / scale) / std::log(decay)));
}

/// Evaluates the structural properties of a converged value function and its
/// greedy policy. Failures are report entries, never exceptions.
inline VerificationReport verify_structure(const ValueTable& v, const PolicyTable& policy,
                                           const ArmParams& p, Discount gamma,
                                           double tolerance = 1e-8, int boundary_margin = 2) {
  if (v.trunc() != p.trunc_A || policy.trunc() != p.trunc_A)
    throw InvalidArgument("table truncation does not match parameters");
  const int a = p.trunc_A;
  const double g = gamma.value();
  const double tau = tolerance;
  VerificationReport report;
  report.tolerance = tolerance;
  report.boundary_margin = boundary_margin;
  report.sense_joint_condition = sense_joint_condition_holds(gamma, p);
  using detail::CheckRecorder;
  auto rec = [&](const char* id, const char* what) {
    return CheckRecorder(id, what, a, boundary_margin);
  };

  CheckRecorder monotone = rec("i", "value nondecreasing in both ages");
  CheckRecorder concave = rec("ii", "value discretely concave in monitor age per row");
  const int h_margin = std::max(boundary_margin, horizontal_increment_margin(p, gamma, tolerance));
  CheckRecorder horizontal("iii", "horizontal increment >= 1/(1-gamma+gamma*lambda1)", a,
                           h_margin);
  CheckRecorder local = rec("iv", "one-step increments <= 1/(1-gamma)");
  CheckRecorder diagonal = rec("v", "sense optimal on the diagonal");
  CheckRecorder diag_gap = rec("vi", "diagonal minus horizontal increment < 1/(gamma*lambda0)");
  CheckRecorder vertical = rec("vii", "vertical increment <= next diagonal increment");
  CheckRecorder rowwise = rec("viii", "action differences nondecreasing in monitor age");
  CheckRecorder columnwise = rec("ix", "sense differences nonincreasing in bs age");
  CheckRecorder tau_mono = rec("x", "lower threshold nondecreasing in bs age");
  CheckRecorder ordered = rec("order", "rows ordered sense -> joint -> comm");

  const double h_lower = 1.0 / (1.0 - g + g * p.lambda[1]);
  const double l_upper = 1.0 / (1.0 - g);
  const double gap_upper = 1.0 / (g * p.lambda[0]);

  for (int m = 1; m <= a; ++m) {
    for (int b = 1; b <= m; ++b) {
      const AoiState s{m, b};
      const double here = v[s];
      if (m + 1 <= a) {
        const double right = v.at(m + 1, b);
        monotone.record(s, here - right - tau);
        horizontal.record(s, h_lower - (right - here) - tau);
        local.record(s, (right - here) - l_upper - tau);
        const double diag = v.at(m + 1, b + 1);
        local.record(s, (diag - here) - l_upper - tau);
      }
      if (b + 1 <= m) {
        const double up = v.at(m, b + 1);
        monotone.record(s, here - up - tau);
        local.record(s, (up - here) - l_upper - tau);
      }
      if (m + 2 <= a) concave.record(s, v.at(m + 2, b) - 2.0 * v.at(m + 1, b) + here - tau);
      if (m == b) diagonal.record(s, policy[s] == Action::Sense ? -1.0 : 1.0);
      if (m == b && b + 2 <= a) {
        const double inc_h = v.at(b + 2, 1) - v.at(b + 1, 1);
        const double inc_d = v.at(b + 1, b + 1) - here;
        diag_gap.record(s, (inc_d - inc_h) - gap_upper - tau);
      }
      // C(m,b) uses V(m+1, b+2) and needs m >= b+1.
      if (m >= b + 1 && m + 1 <= a) {
        const double c_inc = v.at(m + 1, b + 2) - v.at(m + 1, b + 1);
        const double b_inc = v.at(b + 2, b + 2) - v.at(b + 1, b + 1);
        vertical.record(s, c_inc - b_inc - tau);
      }
      const ActionDifferences d = action_differences(v, s, p, gamma);
      if (m + 1 <= a) {
        const ActionDifferences dr = action_differences(v, {m + 1, b}, p, gamma);
        const double worst = std::max({d.d01 - dr.d01, d.d02 - dr.d02, d.d21 - dr.d21});
        rowwise.record(s, worst - tau);
      }
      if (b + 1 <= m) {
        const ActionDifferences du = action_differences(v, {m, b + 1}, p, gamma);
        columnwise.record(s, std::max(du.d01 - d.d01, du.d02 - d.d02) - tau);
      }
    }
  }

  std::vector<ThresholdRow> rows;
  try {
    rows = extract_thresholds(policy);
    for (int b = 1; b <= a; ++b) ordered.record({b, b}, -1.0);
  } catch (const StructureViolation& e) {
    ordered.record({e.position(), e.row()}, 1.0);
    ordered.result().note = e.what();
  }
  if (!rows.empty()) {
    for (int b = 1; b + 1 <= a; ++b) {
      const auto& lo = rows[static_cast<std::size_t>(b - 1)];
      const auto& hi = rows[static_cast<std::size_t>(b)];
      tau_mono.record({b, b}, lo.tau1 > hi.tau1 ? 1.0 : -1.0);
    }
  } else {
    tau_mono.result().applicable = false;
    tau_mono.result().note = "thresholds unavailable: row order violated";
  }

  CheckResult row_result = rowwise.take();
  if (!report.sense_joint_condition) {
    row_result.applicable = false;
    row_result.note = "discount condition not satisfied: gamma exceeds " +
                      std::to_string(sense_joint_discount_limit(p));
  }

  report.checks.push_back(monotone.take());
  report.checks.push_back(concave.take());
  report.checks.push_back(horizontal.take());
  report.checks.push_back(local.take());
  report.checks.push_back(diagonal.take());
  report.checks.push_back(diag_gap.take());
  report.checks.push_back(vertical.take());
  report.checks.push_back(std::move(row_result));
  report.checks.push_back(columnwise.take());
  report.checks.push_back(tau_mono.take());
  report.checks.push_back(ordered.take());
  return report;
}

/// Smallest truncation level whose per-slot truncation error is at most
/// eps_hat: ceil(log(eps_hat (1-gamma)) / log(gamma)), floored at 1.
inline int truncation_level(Discount gamma, double eps_hat) {
  if (!(eps_hat > 0.0)) throw InvalidArgument("eps_hat must be positive");
  const double g = gamma.value();
  const double x = std::log(eps_hat * (1.0 - g)) / std::log(g);
  // Guard against ratios that land a few ulps above an exact integer.
  const double guarded = x - 64.0 * std::numeric_limits<double>::epsilon() * std::abs(x);
  const double level = std::ceil(guarded);
  return level < 1.0 ? 1 : static_cast<int>(level);
}

/// Upper bound on V_inf(1,1) - V_A(1,1).
inline double truncation_error_bound(Discount gamma, int trunc) {
  if (trunc < 1) throw InvalidArgument("truncation level must be >= 1");
  const double g = gamma.value();
  return std::pow(g, trunc) / ((1.0 - g) * (1.0 - g));
}

}  // namespace aoisched
