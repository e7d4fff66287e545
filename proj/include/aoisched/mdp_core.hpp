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

// States, actions, parameters and the transition kernel of the two-age
// (monitor age, base-station age) status-update model.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace aoisched {

/// Raised when a value violates a documented precondition or invariant.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an iterative solver exceeds its iteration cap.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Action : int { Sense = 0, Comm = 1, Joint = 2, Idle = 3 };

inline constexpr std::array<Action, 3> kActiveActions = {Action::Sense, Action::Comm,
                                                         Action::Joint};

inline constexpr int to_int(Action u) { return static_cast<int>(u); }

inline Action action_from_int(int u) {
  if (u < 0 || u > 3) throw InvalidArgument("action out of range: " + std::to_string(u));
  return static_cast<Action>(u);
}

inline const char* action_name(Action u) {
  switch (u) {
    case Action::Sense: return "sense";
    case Action::Comm: return "comm";
    case Action::Joint: return "joint";
    case Action::Idle: return "idle";
  }
  return "?";
}

enum class Outcome : bool { Fail = false, Success = true };

/// Pair of ages. Reachable states satisfy 1 <= bs_age <= monitor_age.
struct AoiState {
  int monitor_age = 1;
  int bs_age = 1;

  friend constexpr bool operator==(const AoiState&, const AoiState&) = default;

  [[nodiscard]] constexpr bool valid() const { return 1 <= bs_age && bs_age <= monitor_age; }
  [[nodiscard]] constexpr bool valid(int trunc) const { return valid() && monitor_age <= trunc; }
};

/// Discount factor, strictly inside (0, 1).
class Discount {
 public:
  constexpr Discount() = default;
  explicit Discount(double gamma) : gamma_(gamma) {
    if (!(gamma > 0.0 && gamma < 1.0))
      throw InvalidArgument("discount factor must lie in (0,1), got " + std::to_string(gamma));
  }
  [[nodiscard]] constexpr double value() const { return gamma_; }
  constexpr operator double() const { return gamma_; }  // NOLINT(google-explicit-constructor)

 private:
  double gamma_ = 0.5;
};

/// Per-arm success probabilities, action costs and truncation level.
struct ArmParams {
  std::array<double, 3> lambda{0.75, 0.95, 0.65};
  std::array<double, 3> cost{5.0, 5.5, 6.0};
  int trunc_A = 50;

  [[nodiscard]] double lambda_max() const { return *std::max_element(lambda.begin(), lambda.end()); }

  /// Returns every violated invariant; empty when the parameters are valid.
  [[nodiscard]] std::vector<std::string> validation_errors() const {
    std::vector<std::string> errs;
    for (int u = 0; u < 3; ++u) {
      if (!(lambda[u] > 0.0 && lambda[u] < 1.0))
        errs.push_back("lambda" + std::to_string(u) + " must lie in (0,1)");
      if (!(cost[u] >= 0.0) || !std::isfinite(cost[u]))
        errs.push_back("c" + std::to_string(u) + " must be finite and nonnegative");
    }
    if (!(lambda[2] <= lambda[0] && lambda[0] <= lambda[1]))
      errs.push_back("success probabilities must satisfy lambda2 <= lambda0 <= lambda1");
    if (!(cost[0] <= cost[1] && cost[1] <= cost[2]))
      errs.push_back("costs must satisfy c0 <= c1 <= c2");
    if (trunc_A < 1) errs.push_back("truncation level A must be >= 1");
    return errs;
  }

  void validate() const {
    auto errs = validation_errors();
    if (errs.empty()) return;
    std::string msg = "invalid arm parameters:";
    for (const auto& e : errs) msg += " " + e + ";";
    throw InvalidArgument(msg);
  }
};

inline double success_prob(Action u, const ArmParams& p) {
  if (u == Action::Idle) throw InvalidArgument("idle action has no success event");
  return p.lambda[to_int(u)];
}

inline constexpr AoiState clip(AoiState s, int trunc) {
  return {std::min(s.monitor_age, trunc), std::min(s.bs_age, trunc)};
}

/// Both ages advance by one slot; used for failures and for idling.
inline constexpr AoiState aged(AoiState s, int trunc) {
  return clip({s.monitor_age + 1, s.bs_age + 1}, trunc);
}

/// Post-slot state after a successful active action.
inline constexpr AoiState success_state(AoiState s, Action u, int trunc) {
  switch (u) {
    case Action::Sense: return clip({s.monitor_age + 1, 1}, trunc);
    case Action::Comm: return clip({s.bs_age + 1, s.bs_age + 1}, trunc);
    case Action::Joint: return clip({s.bs_age + 1, 1}, trunc);
    case Action::Idle: break;
  }
  return aged(s, trunc);
}

inline constexpr AoiState transition(AoiState s, Action u, Outcome outcome, int trunc) {
  if (u == Action::Idle || outcome == Outcome::Fail) return aged(s, trunc);
  return success_state(s, u, trunc);
}

inline double stage_cost(AoiState s, Action u, const ArmParams& p) {
  const double age = static_cast<double>(s.monitor_age);
  return u == Action::Idle ? age : age + p.cost[to_int(u)];
}

/// Dense row-major triangular layout: idx(m,b) = (m-1)m/2 + (b-1).
inline constexpr std::size_t triangle_size(int trunc) {
  return static_cast<std::size_t>(trunc) * static_cast<std::size_t>(trunc + 1) / 2;
}

inline constexpr std::size_t state_index(AoiState s) {
  const auto m = static_cast<std::size_t>(s.monitor_age);
  return (m - 1) * m / 2 + static_cast<std::size_t>(s.bs_age - 1);
}

inline AoiState state_at(std::size_t idx) {
  // Row m starts at (m-1)m/2.
  auto m = static_cast<std::size_t>((std::sqrt(8.0 * static_cast<double>(idx) + 1.0) + 1.0) / 2.0);
  while ((m - 1) * m / 2 > idx) --m;
  while (m * (m + 1) / 2 <= idx) ++m;
  return {static_cast<int>(m), static_cast<int>(idx - (m - 1) * m / 2 + 1)};
}

/// Every state of the truncated triangle in index order.
inline std::vector<AoiState> reachable_states(int trunc) {
  if (trunc < 1) throw InvalidArgument("truncation level must be >= 1");
  std::vector<AoiState> out;
  out.reserve(triangle_size(trunc));
  for (int m = 1; m <= trunc; ++m)
    for (int b = 1; b <= m; ++b) out.push_back({m, b});
  return out;
}

/// Upper limit on the discount factor used by the row-monotonicity argument
/// for the sense-vs-joint comparison.
inline double sense_joint_discount_limit(const ArmParams& p) {
  const auto& l = p.lambda;
  return l[2] / (l[0] * l[1] + l[2] * (1.0 - l[1]));
}

inline bool sense_joint_condition_holds(Discount gamma, const ArmParams& p) {
  return gamma.value() <= sense_joint_discount_limit(p);
}

/// Fixed-size table indexed by triangular state.
template <typename T>
class TriangularTable {
 public:
  TriangularTable() = default;
  explicit TriangularTable(int trunc, T init = T{})
      : trunc_(trunc), data_(triangle_size(trunc), init) {
    if (trunc < 1) throw InvalidArgument("truncation level must be >= 1");
  }

  [[nodiscard]] int trunc() const { return trunc_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }

  T& operator[](AoiState s) { return data_[state_index(s)]; }
  const T& operator[](AoiState s) const { return data_[state_index(s)]; }
  T& at(int m, int b) { return (*this)[AoiState{m, b}]; }
  const T& at(int m, int b) const { return (*this)[AoiState{m, b}]; }

  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

 private:
  int trunc_ = 0;
  std::vector<T> data_;
};

}  // namespace aoisched
