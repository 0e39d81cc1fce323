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

#include <cmath>
#include <map>
#include <vector>

#include <gtest/gtest.h>

#include "rwrs/ergodic_sums.hpp"
#include "rwrs/stat_tests.hpp"

namespace rwrs {
namespace {

std::vector<Site> xs(std::initializer_list<std::int64_t> v) {
  std::vector<Site> out;
  for (auto x : v) out.push_back({x, 0});
  return out;
}

SceneryModel moving_average(double decay, int radius) {
  SceneryModel m;
  m.kind = SceneryKind::moving_average;
  m.marginal = Marginal::gaussian;
  m.decay = decay;
  m.radius = radius;
  return m;
}

TEST(ErgodicSum, HandExamples) {
  SceneryModel m;
  Seed seed = 0;
  for (;; ++seed) {
    SceneryField f(m, seed);
    if (f({0, 0}) == 1.0 && f({1, 0}) == -1.0) break;
  }
  SceneryField f(m, seed);
  EXPECT_EQ(ergodic_sum(trajectory_from_points(1, xs({0, 1, 0, 1})), f), 0.0);
  EXPECT_EQ(ergodic_sum(trajectory_from_points(1, xs({0})), f), 1.0);
  const Observable zero = Observable::product(BaseObservable::constant(0.0));
  EXPECT_EQ(ergodic_sum(trajectory_from_points(1, xs({0, 1, 0, 1})), f, zero), 0.0);
  const Observable general = Observable::general([](std::uint64_t, Site, SceneryField&) { return 0.0; }, true);
  EXPECT_THROW(ergodic_sum(trajectory_from_points(1, xs({0, 1, 0, 1})), f, general), std::invalid_argument);
  EXPECT_EQ(ergodic_sum(simulate_cocycle(BaseSystem::lazy_walk(1), 1, 50), f, general), 0.0);
  SceneryModel m2;
  m2.dimension = 2;
  SceneryField f2(m2, 1);
  EXPECT_THROW(ergodic_sum(trajectory_from_points(1, xs({0})), f2), std::invalid_argument);
}

TEST(ErgodicSum, PrefixesMatchDirectSums) {
  const auto t = simulate_cocycle(BaseSystem::lazy_walk(1), 4, 1000);
  SceneryModel m;
  SceneryField f(m, 9);
  const std::vector<std::int64_t> grid{1, 10, 100, 1000};
  const auto pre = ergodic_sum_prefixes(t, f, grid);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double s = 0.0;
    for (std::int64_t n = 0; n < grid[g]; ++n) s += f(t.points[static_cast<std::size_t>(n)]);
    EXPECT_DOUBLE_EQ(pre[g], s);
  }
}

TEST(QuenchedVariance, ClosedFormExamples) {
  SceneryModel m;
  EXPECT_EQ(quenched_variance_closed(trajectory_from_points(1, xs({0, 1, 0, 1})), m).value, 8.0);
  EXPECT_EQ(quenched_variance_closed(trajectory_from_points(1, xs({0, 5, 2, -7, 3})), m).value, 5.0);
  m.variance = 2.0;
  EXPECT_EQ(quenched_variance_closed(trajectory_from_points(1, xs({0, 1, 0, 1})), m).value, 16.0);
  const Observable general = Observable::general([](std::uint64_t, Site, SceneryField&) { return 1.0; }, false);
  EXPECT_THROW(quenched_variance_closed(trajectory_from_points(1, xs({0})), m, general), UnsupportedObservable);
}

TEST(QuenchedVariance, MonteCarloAgreesOnHandPath) {
  SceneryModel m;
  const auto t = trajectory_from_points(1, xs({0, 1, 0, 1}));
  const auto q = quenched_variance_mc(t, m, 4000, 2);
  EXPECT_EQ(q.method, VarianceMethod::monte_carlo);
  EXPECT_LT(std::abs(q.value - 8.0), 3.0 * q.standard_error);
  EXPECT_THROW(quenched_variance_mc(t, m, 99, 2), std::invalid_argument);
  const auto zero = quenched_variance_mc(t, m, 100, 2, Observable::product(BaseObservable::constant(0.0)));
  EXPECT_EQ(zero.value, 0.0);
}

TEST(QuenchedVariance, MonteCarloAgreesOnRandomPaths) {
  SceneryModel iid;
  const auto t = simulate_cocycle(BaseSystem::lazy_walk(1), 31, 256);
  const auto closed = quenched_variance_closed(t, iid);
  const auto mc = quenched_variance_mc(t, iid, 10000, 32);
  EXPECT_LT(std::abs(closed.value - mc.value), 3.0 * mc.standard_error);

  const SceneryModel ma = moving_average(0.5, 32);
  for (int i = 0; i < 5; ++i) {
    const auto tr = simulate_cocycle(BaseSystem::lazy_walk(1), mix(77, i), 64);
    const auto c = quenched_variance_closed(tr, ma);
    const auto e = quenched_variance_mc(tr, ma, 2000, mix(78, i));
    EXPECT_LT(std::abs(c.value - e.value), 3.0 * e.standard_error) << i;
  }
}

TEST(QuenchedVariance, WeightedProductForm) {
  // A depends on the step; the closed form uses weighted visit counts.
  const BaseSystem w = BaseSystem::lazy_walk(1);
  const auto a = BaseObservable::of_step(w, [](Site s) { return s.x == 1 ? 2.0 : 0.5; });
  const Observable h = Observable::product(a);
  const auto t = simulate_cocycle(w, 5, 128);
  SceneryModel m;
  const auto c = quenched_variance_closed(t, m, h);
  const auto e = quenched_variance_mc(t, m, 6000, 6, h);
  EXPECT_LT(std::abs(c.value - e.value), 3.0 * e.standard_error);
}

TEST(ExpectedSelfIntersection, DynamicProgramEqualsEnumeration) {
  for (const BaseSystem& s : {BaseSystem::lazy_walk(1), BaseSystem::lazy_walk(1, {0, 1}), BaseSystem::lazy_walk(1, {1, 4})}) {
    for (std::size_t n = 1; n <= 10; ++n) {
      const auto dp = expected_self_intersection(s, n);
      const auto en = enumerate_self_intersection(s, n);
      EXPECT_EQ(dp.numerator, en.numerator) << n;
      EXPECT_EQ(dp.denominator, en.denominator) << n;
    }
  }
  const BaseSystem w2 = BaseSystem::lazy_walk(2);
  for (std::size_t n = 1; n <= 7; ++n) {
    EXPECT_EQ(expected_self_intersection(w2, n).numerator, enumerate_self_intersection(w2, n).numerator);
  }
  // Simple walk, N = 3: paths ++,+-,-+,-- give sum l^2 = 3,5,5,3 -> mean 4.
  EXPECT_DOUBLE_EQ(expected_self_intersection(BaseSystem::lazy_walk(1, {0, 1}), 3).value(), 4.0);
}

double return_probability_enumerated(int k) {
  std::vector<int> word(static_cast<std::size_t>(k), 0);
  double total = 0.0;
  for (;;) {
    int at = 0;
    for (int s : word) at += s == 1 ? 1 : (s == 2 ? -1 : 0);
    if (at == 0) total += std::pow(3.0, -k);
    int pos = 0;
    while (pos < k && ++word[static_cast<std::size_t>(pos)] == 3) word[static_cast<std::size_t>(pos++)] = 0;
    if (pos == k) break;
  }
  return total;
}

TEST(CovarianceDecay, SmallLagsMatchEnumeration) {
  SceneryModel m;
  const std::vector<std::int64_t> grid{8, 10, 12};
  const auto table = covariance_decay(BaseSystem::lazy_walk(1), m, grid, 40000, 3);
  for (const auto& row : table.rows) {
    const double exact = return_probability_enumerated(static_cast<int>(row.k));
    EXPECT_LT(std::abs(row.covariance - exact), 3.0 * row.standard_error) << row.k;
  }
  EXPECT_THROW(covariance_decay(BaseSystem::lazy_walk(1), m, std::vector<std::int64_t>{4, 8}, 10, 1), std::invalid_argument);
}

TEST(CovarianceDecay, ZeroObservable) {
  SceneryModel m;
  const std::vector<std::int64_t> grid{8, 16};
  const auto t = covariance_decay(BaseSystem::lazy_walk(1), m, grid, 100, 3, BaseObservable::constant(0.0));
  for (const auto& row : t.rows) EXPECT_EQ(row.covariance, 0.0);
}

TEST(CovarianceDecay, ScaledCovarianceFlattensD1) {
  SceneryModel m;
  std::vector<std::int64_t> grid;
  for (std::int64_t k = 32; k <= 4096; k *= 2) grid.push_back(k);
  const auto table = covariance_decay(BaseSystem::lazy_walk(1), m, grid, 20000, 17);
  std::vector<double> k, v;
  for (const auto& row : table.rows) {
    k.push_back(static_cast<double>(row.k));
    v.push_back(row.scaled);
  }
  EXPECT_LT(std::abs(scaling_exponent_fit(k, v).slope), 0.1);
  EXPECT_NEAR(table.target, 1.0 / std::sqrt(2.0 * std::numbers::pi * 2.0 / 3.0), 1e-12);
  EXPECT_NEAR(v.back() / table.target, 1.0, 0.1);
}

TEST(BgConditionB, Examples) {
  const auto t = trajectory_from_points(1, xs({0, 1, 0, 1}));
  EXPECT_NEAR(bg_condition_b(t, 3, 0.5, 4.0 * std::log(4.0)), 16.0 / std::pow(4.0 * std::log(4.0), 1.5), 1e-12);
  EXPECT_NEAR(bg_condition_b(t, 3, 0.5, 4.0 * std::log(4.0)), 1.225, 1e-3);
  const auto apart = trajectory_from_points(1, xs({0, 10, 20, 30, 40}));
  EXPECT_NEAR(bg_condition_b(apart, 4, 1.0, 25.0), 5.0 / std::pow(25.0, 2.0), 1e-15);
  EXPECT_THROW(bg_condition_b(t, 2, 1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(bg_condition_b(t, 3, 0.0, 1.0), std::invalid_argument);
}

TEST(BgConditionB, BruteForceOracle) {
  for (int d : {1, 2}) {
    const auto t = simulate_cocycle(BaseSystem::lazy_walk(d), 8, 600);
    for (double R : {0.5, 1.0, 2.5, 4.0}) {
      long double sum = 0.0L;
      for (const Site& a : t.points) {
        std::int64_t card = 0;
        for (const Site& b : t.points) {
          const double dx = static_cast<double>(a.x - b.x), dy = static_cast<double>(a.y - b.y);
          card += std::sqrt(dx * dx + dy * dy) <= R;
        }
        sum += static_cast<long double>(card) * card;
      }
      const double expect = static_cast<double>(sum) / std::pow(1000.0, 1.5);
      EXPECT_NEAR(bg_condition_b(t, 3, R, 1000.0), expect, 1e-9 * expect) << d << " " << R;
    }
  }
}

TEST(BuildMeasure, Examples) {
  const auto t = trajectory_from_points(1, xs({0, 1, 0, 1}));
  EXPECT_NEAR(build_measure(t, MeasureMode::d2).total_mass(), 4.0 / std::sqrt(4.0 * std::log(4.0)), 1e-12);
  EXPECT_NEAR(build_measure(t, MeasureMode::d2).total_mass(), 1.699, 1e-3);
  EXPECT_NEAR(build_measure(t, MeasureMode::d1_self_normalized, 8.0).total_mass(), 1.414, 1e-3);
  EXPECT_THROW(build_measure(t, MeasureMode::d1_self_normalized, 0.0), std::invalid_argument);
  EXPECT_THROW(build_measure(t, MeasureMode::d1_self_normalized), std::invalid_argument);
  EXPECT_EQ(build_measure(t, MeasureMode::d2).atoms.size(), 2u);
}

TEST(BuildMeasure, MassGrowsAlongGrid) {
  SceneryModel m;
  const BaseSystem w = BaseSystem::lazy_walk(1);
  double prev = 0.0;
  for (std::size_t n : {256u, 1024u, 4096u, 16384u}) {
    double mass = 0.0;
    for (int i = 0; i < 50; ++i) {
      const auto t = simulate_cocycle(w, mix(3, i), n);
      mass += build_measure(t, MeasureMode::d1_self_normalized, quenched_variance_closed(t, m).value).total_mass();
    }
    EXPECT_GT(mass, prev);
    prev = mass;
  }
}

std::vector<double> mean_self_intersection(int d, std::size_t trials, const std::vector<std::int64_t>& grid) {
  std::vector<double> out(grid.size(), 0.0);
  SceneryModel m;
  m.dimension = d;
  for (std::size_t i = 0; i < trials; ++i) {
    const auto t = simulate_cocycle(BaseSystem::lazy_walk(d), mix(101, i), static_cast<std::size_t>(grid.back()));
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const std::vector<Site> prefix(t.points.begin(), t.points.begin() + grid[g]);
      out[g] += quenched_variance_closed(trajectory_from_points(d, prefix), m).value;
    }
  }
  for (double& v : out) v /= static_cast<double>(trials);
  return out;
}

TEST(QuenchedVariance, ScalingD1) {
  const std::vector<std::int64_t> grid{1024, 2048, 4096, 8192, 16384, 32768, 65536};
  const auto ev = mean_self_intersection(1, 300, grid);
  std::vector<double> n(grid.begin(), grid.end());
  EXPECT_NEAR(scaling_exponent_fit(n, ev).slope, 1.5, 0.05);
}

TEST(QuenchedVariance, ScalingD2) {
  const std::vector<std::int64_t> grid{1024, 2048, 4096, 8192, 16384, 32768, 65536};
  const auto ev = mean_self_intersection(2, 100, grid);
  std::vector<double> x, y;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double n = static_cast<double>(grid[g]);
    x.push_back(std::log(n));
    y.push_back(ev[g] / n);
  }
  // Exponent of E[V_N]/N against ln N.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double k = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  EXPECT_NEAR((k * sxy - sx * sy) / (k * sxx - sx * sx), 1.0, 0.15);
}

}  // namespace
}  // namespace rwrs
