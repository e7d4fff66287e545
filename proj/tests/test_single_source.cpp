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

#include <random>

#include "aoisched/single_source.hpp"
#include "oracles.hpp"

namespace aoisched {
namespace {

const ArmParams kReference{{0.75, 0.95, 0.65}, {5.0, 5.5, 6.0}, 50};

oracle::Arm to_oracle(const ArmParams& p) { return {p.lambda, p.cost, p.trunc_A}; }

ArmParams random_params(std::mt19937_64& rng, int trunc) {
  std::uniform_real_distribution<double> unit(0.05, 0.95);
  std::array<double, 3> l{unit(rng), unit(rng), unit(rng)};
  std::sort(l.begin(), l.end());
  std::uniform_real_distribution<double> cost(0.0, 8.0);
  std::array<double, 3> c{cost(rng), cost(rng), cost(rng)};
  std::sort(c.begin(), c.end());
  // lambda2 <= lambda0 <= lambda1
  return {{l[1], l[2], l[0]}, c, trunc};
}

TEST(ValueIteration, MatchesBackwardInductionOnRandomSmallModels) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> disc(0.2, 0.95);
  std::uniform_int_distribution<int> trunc(1, 5);
  for (int trial = 0; trial < 20; ++trial) {
    const ArmParams p = random_params(rng, trunc(rng));
    const double g = disc(rng);
    const auto sol = value_iteration(p, Discount(g), 1e-9);
    const auto ref = oracle::finite_horizon(to_oracle(p), g, oracle::horizon_for(to_oracle(p), g, 1e-10));
    for (const AoiState s : reachable_states(p.trunc_A))
      ASSERT_NEAR(sol.values[s], ref.at({s.monitor_age, s.bs_age}), 1e-6) << "trial " << trial;
  }
}

TEST(ValueIteration, MatchesBackwardInductionOnReferenceModel) {
  const double g = 0.85;
  const auto sol = value_iteration(kReference, Discount(g), 1e-9);
  const auto ref = oracle::finite_horizon(to_oracle(kReference), g,
                                          oracle::horizon_for(to_oracle(kReference), g, 1e-10));
  for (const AoiState s : reachable_states(50))
    ASSERT_NEAR(sol.values[s], ref.at({s.monitor_age, s.bs_age}), 1e-6);
}

TEST(ValueIteration, SingleStateClosedForm) {
  ArmParams p = kReference;
  p.trunc_A = 1;
  const auto sol = value_iteration(p, Discount(0.85), 1e-12);
  EXPECT_NEAR(sol.values.at(1, 1), (1.0 + 5.0) / 0.15, 1e-9);
  EXPECT_EQ(sol.policy.at(1, 1), Action::Sense);
}

TEST(ValueIteration, ConvergenceCapIsEnforced) {
  EXPECT_THROW(value_iteration(kReference, Discount(0.99), 1e-12, 5), ConvergenceError);
  EXPECT_THROW(value_iteration(kReference, Discount(0.5), 0.0), InvalidArgument);
}

TEST(BellmanBackup, IsGammaContraction) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> val(-50.0, 50.0);
  ArmParams p = kReference;
  p.trunc_A = 15;
  for (double g : {0.3, 0.7, 0.95}) {
    for (int trial = 0; trial < 10; ++trial) {
      ValueTable a(15), b(15);
      for (auto& x : a.raw()) x = val(rng);
      for (auto& x : b.raw()) x = val(rng);
      const double before = sup_distance(a, b);
      const double after =
          sup_distance(bellman_backup(a, p, Discount(g)).values, bellman_backup(b, p, Discount(g)).values);
      EXPECT_LE(after, g * before + 1e-12);
    }
  }
}

TEST(BellmanBackup, RejectsMismatchedTable) {
  EXPECT_THROW(bellman_backup(ValueTable(10), kReference, Discount(0.5)), InvalidArgument);
}

TEST(ValueIteration, ReportedErrorWithinTolerance) {
  // Error against a much tighter solve stays under the requested tolerance.
  const auto loose = value_iteration(kReference, Discount(0.85), 1e-4);
  const auto tight = value_iteration(kReference, Discount(0.85), 1e-12);
  EXPECT_LE(sup_distance(loose.values, tight.values), 1e-4);
}

TEST(ActionDifferences, AgreeWithQValues) {
  const auto sol = value_iteration(kReference, Discount(0.85), 1e-9);
  for (const AoiState s : reachable_states(50)) {
    const double q0 = q_value(sol.values, s, Action::Sense, kReference, Discount(0.85));
    const double q1 = q_value(sol.values, s, Action::Comm, kReference, Discount(0.85));
    const double q2 = q_value(sol.values, s, Action::Joint, kReference, Discount(0.85));
    const auto d = action_differences(sol.values, s, kReference, Discount(0.85));
    ASSERT_NEAR(d.d01, q0 - q1, 1e-9);
    ASSERT_NEAR(d.d02, q0 - q2, 1e-9);
    ASSERT_NEAR(d.d21, q2 - q1, 1e-9);
  }
}

TEST(Classify, TieRules) {
  EXPECT_EQ(classify(1.0, 1.0, 1.0), Action::Sense);
  EXPECT_EQ(classify(2.0, 1.0, 1.0), Action::Comm);
  EXPECT_EQ(classify(2.0, 1.0, 0.5), Action::Joint);
  EXPECT_EQ(classify(1.0, 2.0, 0.5), Action::Joint);
  EXPECT_EQ(classify(0.5, 1.0, 0.9), Action::Sense);
}

TEST(Thresholds, ReferenceModelHasOrderedRegions) {
  const auto sol = value_iteration(kReference, Discount(0.85), 1e-9);
  const auto rows = extract_thresholds(sol.policy);
  ASSERT_EQ(rows.size(), 50u);
  bool any_sense = false, any_joint = false, any_comm = false;
  for (const AoiState s : reachable_states(50)) {
    const Action u = sol.policy[s];
    any_sense |= u == Action::Sense;
    any_joint |= u == Action::Joint;
    any_comm |= u == Action::Comm;
    if (s.monitor_age == s.bs_age) {
      EXPECT_EQ(u, Action::Sense);
    }
  }
  EXPECT_TRUE(any_sense && any_joint && any_comm);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LE(rows[i - 1].tau1, rows[i].tau1);
  for (const auto& r : rows) EXPECT_LE(r.tau1, r.tau2);
}

TEST(Thresholds, RejectsNonMonotoneRow) {
  PolicyTable pol(5, Action::Sense);
  pol.at(3, 1) = Action::Comm;
  pol.at(4, 1) = Action::Sense;
  try {
    extract_thresholds(pol);
    FAIL() << "expected a structure violation";
  } catch (const StructureViolation& e) {
    EXPECT_EQ(e.row(), 1);
    EXPECT_EQ(e.position(), 4);
  }
}

TEST(Thresholds, AllSenseRowIsUnbounded) {
  PolicyTable pol(4, Action::Sense);
  const auto rows = extract_thresholds(pol);
  for (const auto& r : rows) {
    EXPECT_EQ(r.tau1, ThresholdRow::kInfinite);
    EXPECT_EQ(r.tau2, ThresholdRow::kInfinite);
  }
}

TEST(Thresholds, CommFromStartOfRow) {
  PolicyTable pol(4, Action::Comm);
  pol.at(1, 1) = Action::Sense;
  const auto rows = extract_thresholds(pol);
  EXPECT_EQ(rows[0].tau1, 1);
  EXPECT_EQ(rows[0].tau2, 1);
  EXPECT_EQ(rows[1].tau1, 1);  // row bs_age=2 has no sense state
  EXPECT_EQ(rows[1].tau2, 1);
}

TEST(VerifyStructure, ReferenceModelPassesInterior) {
  const auto sol = value_iteration(kReference, Discount(0.85), 1e-10);
  const auto report = verify_structure(sol.values, sol.policy, kReference, Discount(0.85), 1e-8);
  EXPECT_TRUE(report.sense_joint_condition);
  for (const auto& c : report.checks) {
    EXPECT_TRUE(c.applicable) << c.id;
    EXPECT_TRUE(c.passed()) << c.id << ": " << c.interior_violations << " violations";
    EXPECT_GT(c.interior_checked, 0) << c.id;
  }
}

TEST(VerifyStructure, CorruptedValueFailsMonotonicity) {
  auto sol = value_iteration(kReference, Discount(0.85), 1e-10);
  sol.values.at(20, 5) = sol.values.at(19, 5) - 1.0;
  const auto report = verify_structure(sol.values, sol.policy, kReference, Discount(0.85), 1e-8);
  const CheckResult* mono = report.find("i");
  ASSERT_NE(mono, nullptr);
  EXPECT_FALSE(mono->passed());
  ASSERT_TRUE(mono->first_violation.has_value());
  EXPECT_FALSE(report.all_passed());
}

TEST(VerifyStructure, RowCheckNotApplicableWhenDiscountConditionFails) {
  ArmParams p = kReference;
  p.trunc_A = 30;
  const auto sol = value_iteration(p, Discount(0.95), 1e-9);
  const auto report = verify_structure(sol.values, sol.policy, p, Discount(0.95), 1e-8);
  EXPECT_FALSE(report.sense_joint_condition);
  const CheckResult* row = report.find("viii");
  ASSERT_NE(row, nullptr);
  EXPECT_FALSE(row->applicable);
  EXPECT_FALSE(row->note.empty());
}

TEST(VerifyStructure, BoundaryInstancesAreReportedSeparately) {
  const auto sol = value_iteration(kReference, Discount(0.85), 1e-10);
  const auto report = verify_structure(sol.values, sol.policy, kReference, Discount(0.85), 1e-8);
  const CheckResult* h = report.find("iii");
  ASSERT_NE(h, nullptr);
  EXPECT_GT(h->boundary_checked, 0);
  EXPECT_GE(h->margin, 2);
}

TEST(TruncationLevel, ReferenceGrid) {
  const std::array<double, 7> eps{1, 0.5, 0.1, 0.05, 0.01, 0.005, 0.001};
  const std::array<std::pair<double, std::array<int, 7>>, 5> grid{{
      {0.50, {1, 2, 5, 6, 8, 9, 11}},
      {0.70, {4, 6, 10, 12, 17, 19, 23}},
      {0.85, {12, 16, 26, 31, 41, 45, 55}},
      {0.90, {22, 29, 44, 51, 66, 73, 88}},
      {0.95, {59, 72, 104, 117, 149, 162, 194}},
  }};
  for (const auto& [g, levels] : grid)
    for (std::size_t j = 0; j < eps.size(); ++j)
      EXPECT_EQ(truncation_level(Discount(g), eps[j]), levels[j]) << "gamma=" << g << " eps=" << eps[j];
}

TEST(TruncationLevel, RejectsNonPositiveAccuracy) {
  EXPECT_THROW(truncation_level(Discount(0.5), 0.0), InvalidArgument);
  EXPECT_THROW(truncation_level(Discount(0.5), -1.0), InvalidArgument);
  EXPECT_EQ(truncation_level(Discount(0.5), 100.0), 1);
}

TEST(TruncationBound, HoldsEmpirically) {
  for (int a : {10, 20, 30}) {
    ArmParams lo = kReference, hi = kReference;
    lo.trunc_A = a;
    hi.trunc_A = a + 20;
    const double v_lo = value_iteration(lo, Discount(0.85), 1e-11).values.at(1, 1);
    const double v_hi = value_iteration(hi, Discount(0.85), 1e-11).values.at(1, 1);
    EXPECT_GE(v_hi - v_lo, -1e-9);
    EXPECT_LE(v_hi - v_lo, truncation_error_bound(Discount(0.85), a));
  }
}

TEST(HorizontalMargin, GrowsWithTighterTolerance) {
  const int loose = horizontal_increment_margin(kReference, Discount(0.85), 1e-4);
  const int tight = horizontal_increment_margin(kReference, Discount(0.85), 1e-10);
  EXPECT_LE(loose, tight);
  EXPECT_GE(tight, 2);
}

}  // namespace
}  // namespace aoisched
