// Copyright 2026 The qatlab Authors.
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

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "qatlab/precision_alloc.hpp"
#include "support/oracles.hpp"

using namespace qatlab;

namespace {

const std::vector<int> kSet{2, 3, 4};

struct Quiet {
  ScopedWarningSink sink{[](std::string_view) {}};
};

std::vector<int> floors_of(const std::vector<double>& b_prime, const std::vector<int>& b_set) {
  std::vector<int> out;
  for (double v : b_prime) {
    int c = b_set.front();
    for (int b : b_set)
      if (b <= v) c = b;
    out.push_back(c);
  }
  return out;
}

}  // namespace

TEST(Sensitivity, SquaredGradientSums) {
  Tensor<double> w({1}, {1.0}, true);
  Tensor<double> z({2}, {1.0, 2.0}, true);
  const auto p = score_sensitivity<double>({w, z}, {"w", "z"}, 1, 1, [&](std::size_t) {
    return add(scale(w, 3.0), scale(sum(z), 0.0));
  });
  EXPECT_DOUBLE_EQ(p.scores[0], 9.0);
  EXPECT_EQ(p.scores[1], 0.0);
  EXPECT_EQ(p.n_batches, 1u);
  EXPECT_EQ(w[0], 1.0);  // parameters untouched
}

TEST(Sensitivity, DoublingGradientsQuadruplesScores) {
  std::mt19937_64 rng(3);
  auto w = Tensor<double>::randn({4}, rng, 1.0, true);
  auto v = Tensor<double>::randn({3}, rng, 1.0, true);
  auto run = [&](double c) {
    return score_sensitivity<double>({w, v}, {"w", "v"}, 3, 3, [&](std::size_t b) {
      const double k = static_cast<double>(b + 1);
      return scale(add(sum(square(w)), scale(sum(v), k)), c);
    });
  };
  const auto before = w.values();
  const auto p1 = run(1.0), p2 = run(2.0);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_NEAR(p2.scores[l], 4.0 * p1.scores[l], 1e-12 * p2.scores[l]);
  EXPECT_EQ(w.values(), before);
}

TEST(Sensitivity, FewerBatchesThanRequested) {
  int warnings = 0;
  ScopedWarningSink sink([&](std::string_view) { ++warnings; });
  Tensor<double> w({1}, {2.0}, true);
  const auto p = score_sensitivity<double>({w}, {"w"}, 8, 3, [&](std::size_t) { return sum(w); });
  EXPECT_EQ(p.n_batches, 3u);
  EXPECT_DOUBLE_EQ(p.scores[0], 3.0);
  EXPECT_EQ(warnings, 1);
}

TEST(AllocateContinuous, LogProportionalExamples) {
  const double e = std::numbers::e;
  const std::vector<double> s1{e - 1, e - 1};
  const auto b1 = allocate_continuous(s1, 6.0);
  EXPECT_DOUBLE_EQ(b1[0], 3.0);
  EXPECT_DOUBLE_EQ(b1[1], 3.0);
  const std::vector<double> s2{e - 1, e - 1, e * e - 1};
  const auto b2 = allocate_continuous(s2, 12.0);
  EXPECT_DOUBLE_EQ(b2[0], 3.0);
  EXPECT_DOUBLE_EQ(b2[1], 3.0);
  EXPECT_DOUBLE_EQ(b2[2], 6.0);
}

TEST(AllocateContinuous, UniformForEqualOrZeroScores) {
  const std::vector<double> eq{5.0, 5.0, 5.0, 5.0};
  for (double b : allocate_continuous(eq, 10.0)) EXPECT_DOUBLE_EQ(b, 2.5);
  int warnings = 0;
  ScopedWarningSink sink([&](std::string_view) { ++warnings; });
  const std::vector<double> zero{0.0, 0.0};
  for (double b : allocate_continuous(zero, 6.0)) EXPECT_EQ(b, 3.0);
  EXPECT_EQ(warnings, 1);
}

TEST(AllocateContinuous, SumsToBudget) {
  std::mt19937_64 rng(9);
  std::exponential_distribution<double> ex(0.1);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> s(1 + i % 16);
    for (auto& v : s) v = ex(rng);
    const double total = 3.0 * static_cast<double>(s.size());
    const auto b = allocate_continuous(s, total);
    EXPECT_NEAR(std::accumulate(b.begin(), b.end(), 0.0), total, 1e-9 * total);
  }
}

TEST(AllocateContinuous, ScaleUpPreservesOrdering) {
  std::mt19937_64 rng(10);
  std::exponential_distribution<double> ex(1.0);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> s(2 + i % 8);
    for (auto& v : s) v = ex(rng);
    const double c = 1.0 + 50.0 * std::uniform_real_distribution<double>(0, 1)(rng);
    std::vector<double> sc;
    for (double v : s) sc.push_back(c * v);
    const auto b = allocate_continuous(s, 3.0 * static_cast<double>(s.size()));
    const auto bc = allocate_continuous(sc, 3.0 * static_cast<double>(s.size()));
    for (std::size_t x = 0; x < s.size(); ++x)
      for (std::size_t y = 0; y < s.size(); ++y)
        if (b[x] < b[y]) EXPECT_LE(bc[x], bc[y]);
  }
}

TEST(Discretize, HandExample) {
  const std::vector<double> bp{2.7, 3.4, 2.9};
  const auto a = discretize_greedy(bp, kSet, 3.0);
  EXPECT_EQ(a.bits, (std::vector<int>{3, 3, 3}));
  EXPECT_EQ(a.upgrade_order, (std::vector<std::size_t>{2, 0}));
  EXPECT_EQ(a.budget_gap, 0);
}

TEST(Discretize, IntegralInputUnchanged) {
  const std::vector<double> bp{2, 4, 3};
  const auto a = discretize_greedy(bp, kSet, 3.0);
  EXPECT_EQ(a.bits, (std::vector<int>{2, 4, 3}));
  EXPECT_TRUE(a.upgrade_order.empty());
  EXPECT_TRUE(a.downgrade_order.empty());
}

TEST(Discretize, TieGoesToLowestIndex) {
  const std::vector<double> bp{2.5, 2.5};
  const auto a = discretize_greedy(bp, kSet, 2.5);
  EXPECT_EQ(a.bits, (std::vector<int>{3, 2}));
}

TEST(Discretize, SpecAllocateExampleEndToEnd) {
  const double e = std::numbers::e;
  const std::vector<double> s{e - 1, e - 1, e * e - 1};
  const auto bp = allocate_continuous(s, 12.0);
  const auto a = discretize_greedy(bp, kSet, 4.0);
  EXPECT_EQ(a.bits, (std::vector<int>{4, 4, 4}));
  EXPECT_EQ(a.b_prime, bp);
}

TEST(Discretize, RejectsOutOfRangeAverage) {
  const std::vector<double> bp{3, 3};
  EXPECT_THROW(discretize_greedy(bp, kSet, 1.5), ValidationError);
  EXPECT_THROW(discretize_greedy(bp, kSet, 4.5), ValidationError);
  const std::vector<int> unsorted{3, 2};
  EXPECT_THROW(discretize_greedy(bp, unsorted, 2.5), ValidationError);
}

TEST(Discretize, ShortfallIsReported) {
  Quiet q;
  // Floors {4, 2, 2}; three upgrades are needed but layer 0 is already at the top.
  const std::vector<double> bp{9.0, 1.0, 1.0};
  const auto a = discretize_greedy(bp, kSet, 11.0 / 3.0);
  EXPECT_EQ(a.bits, (std::vector<int>{4, 3, 3}));
  EXPECT_EQ(a.unfulfilled_steps, 1);
  EXPECT_EQ(a.budget_gap, 1);
}

TEST(Discretize, OverBudgetAfterClampTriggersDowngrade) {
  Quiet q;
  // Clamping 0.5 and 0.5 up to 2 overshoots the budget of 7 by one.
  const std::vector<double> bp{0.5, 0.5, 6.0};
  const auto a = discretize_greedy(bp, kSet, 7.0 / 3.0);
  EXPECT_EQ(a.bits, (std::vector<int>{2, 2, 3}));
  EXPECT_EQ(a.downgrade_order, (std::vector<std::size_t>{2}));
  EXPECT_EQ(a.budget_gap, 0);

  // Two bits over with a single layer above the minimum: one step is unfulfilled.
  const auto b = discretize_greedy(std::vector<double>{0.5, 0.5, 5.0}, kSet, 2.0);
  EXPECT_EQ(b.bits, (std::vector<int>{2, 2, 3}));
  EXPECT_EQ(b.unfulfilled_steps, -1);
  EXPECT_EQ(b.budget_gap, -1);
}

TEST(Discretize, BudgetExactOnRandomProfiles) {
  Quiet q;
  std::mt19937_64 rng(1234);
  std::lognormal_distribution<double> ln(0.0, 2.0);
  std::uniform_int_distribution<int> len(1, 16);
  std::uniform_real_distribution<double> avg(2.0, 4.0);
  int exact = 0, shortfall = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> s(static_cast<std::size_t>(len(rng)));
    for (auto& v : s) v = ln(rng);
    const double b_avg = avg(rng);
    const auto bp = allocate_continuous(s, static_cast<double>(s.size()) * b_avg);
    const auto a = discretize_greedy(bp, kSet, b_avg);
    for (int b : a.bits) ASSERT_TRUE(b >= 2 && b <= 4);
    const long target = std::lround(static_cast<double>(s.size()) * b_avg);
    ASSERT_EQ(a.budget_gap, target - a.total_bits());
    // Steps the greedy pass cannot perform are exactly the reported shortfall.
    const auto fl = floors_of(bp, kSet);
    const long floor_sum = std::accumulate(fl.begin(), fl.end(), 0L);
    const long rem = target - floor_sum;
    const long eligible = rem >= 0 ? std::count_if(fl.begin(), fl.end(), [](int b) { return b < 4; })
                                   : std::count_if(fl.begin(), fl.end(), [](int b) { return b > 2; });
    if (std::labs(rem) <= eligible) {
      ASSERT_EQ(a.total_bits(), target) << "profile " << i;
      ++exact;
    } else {
      ASSERT_NE(a.budget_gap, 0);
      ASSERT_EQ(std::labs(a.unfulfilled_steps), std::labs(rem) - eligible);
      ++shortfall;
    }
  }
  EXPECT_GT(exact, 0);
  EXPECT_GT(shortfall, 0);
}

TEST(Discretize, GreedyMatchesExhaustiveOracle) {
  Quiet q;
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> len(1, 6);
  std::uniform_real_distribution<double> bp_d(1.5, 4.5);
  std::uniform_real_distribution<double> avg(2.0, 4.0);
  const std::vector<std::vector<int>> sets{{2, 3, 4}, {2, 4, 8}, {2, 3, 4, 5, 6}};
  for (int i = 0; i < 3000; ++i) {
    const auto& bs = sets[static_cast<std::size_t>(i % 3)];
    const std::size_t L = static_cast<std::size_t>(len(rng));
    std::vector<double> bp(L);
    for (auto& v : bp) {
      v = bp_d(rng) * bs.back() / 4.0;
      if (i % 2 == 0) v = std::round(v * 4.0) / 4.0;  // coarse grid to force priority ties
    }
    double b_avg = std::clamp(avg(rng) * bs.back() / 4.0, static_cast<double>(bs.front()), static_cast<double>(bs.back()));
    const auto a = discretize_greedy(bp, bs, b_avg);
    const auto fl = floors_of(bp, bs);
    std::vector<double> pr(L);
    for (std::size_t l = 0; l < L; ++l) pr[l] = bp[l] - fl[l];
    const long rem = std::lround(static_cast<double>(L) * b_avg - std::accumulate(fl.begin(), fl.end(), 0.0));
    ASSERT_EQ(a.bits, oracle::exhaustive_discretize(fl, pr, bs, rem)) << "case " << i;
  }
}

TEST(FixedAssignment, AllLayersEqual) {
  const auto a = fixed_assignment(5, 3);
  EXPECT_EQ(a.bits, (std::vector<int>(5, 3)));
  EXPECT_EQ(a.total_bits(), 15);
}
