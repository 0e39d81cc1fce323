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

// Ergodic sums S_N of the skew product, the quenched variance V_N, the
// occupation measures m_N and the hypothesis checkers on them.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "rwrs/base_dynamics.hpp"
#include "rwrs/fiber_scenery.hpp"

namespace rwrs {

class UnsupportedObservable : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// H(x, y). Product form A(x) B(y) with B the scenery value at the fiber
/// position; or a general function of (base symbol, position, field).
class Observable {
 public:
  using General = std::function<double(std::uint64_t, Site, SceneryField&)>;

  Observable() = default;
  explicit Observable(BaseObservable a) : a_(std::move(a)) {}

  static Observable product(BaseObservable a) { return Observable(std::move(a)); }
  static Observable general(General fn, bool fiber_mean_zero) {
    Observable h;
    h.general_ = std::move(fn);
    h.fiber_mean_zero_ = fiber_mean_zero;
    return h;
  }

  bool is_product() const { return !general_; }
  bool fiber_mean_zero() const { return fiber_mean_zero_; }
  const BaseObservable& base_part() const { return a_; }

  double operator()(std::uint64_t symbol, Site at, SceneryField& field) const {
    if (general_) return general_(symbol, at, field);
    const double a = a_.is_constant() ? a_.mean() : a_(symbol);
    return a == 0.0 ? 0.0 : a * field(at);
  }

 private:
  BaseObservable a_ = BaseObservable::constant(1.0);
  General general_;
  bool fiber_mean_zero_ = true;
};

namespace detail {

inline void require_symbols(const CocycleTrajectory& traj, const Observable& h) {
  if (h.is_product() && h.base_part().is_constant()) return;
  if (traj.symbols.size() != traj.points.size()) {
    throw std::invalid_argument("observable depends on the base point but the trajectory has no symbols");
  }
}

inline std::uint64_t symbol_at(const CocycleTrajectory& traj, std::size_t n) {
  return n < traj.symbols.size() ? traj.symbols[n] : 0;
}

}  // namespace detail

/// S_N = sum_{n<N} H(F^n(x, y)) with N = traj.size().
inline double ergodic_sum(const CocycleTrajectory& traj, SceneryField& field,
                          const Observable& h = {}) {
  if (traj.dimension != field.model().dimension) throw std::invalid_argument("ergodic_sum: dimension mismatch");
  detail::require_symbols(traj, h);
  double s = 0.0;
  for (std::size_t n = 0; n < traj.size(); ++n) s += h(detail::symbol_at(traj, n), traj.points[n], field);
  return s;
}

/// S_N for every N in n_grid (increasing, each <= traj.size()).
inline std::vector<double> ergodic_sum_prefixes(const CocycleTrajectory& traj, SceneryField& field,
                                                std::span<const std::int64_t> n_grid,
                                                const Observable& h = {}) {
  if (traj.dimension != field.model().dimension) throw std::invalid_argument("ergodic_sum: dimension mismatch");
  detail::require_symbols(traj, h);
  std::vector<double> out;
  out.reserve(n_grid.size());
  double s = 0.0;
  std::size_t n = 0;
  for (std::int64_t target : n_grid) {
    if (target < 0 || static_cast<std::size_t>(target) > traj.size()) {
      throw std::invalid_argument("ergodic_sum_prefixes: grid point outside the trajectory");
    }
    if (static_cast<std::size_t>(target) < n) throw std::invalid_argument("ergodic_sum_prefixes: grid must increase");
    for (; n < static_cast<std::size_t>(target); ++n) s += h(detail::symbol_at(traj, n), traj.points[n], field);
    out.push_back(s);
  }
  return out;
}

enum class VarianceMethod { closed_form, monte_carlo };

struct QuenchedVariance {
  double value = 0.0;
  VarianceMethod method = VarianceMethod::closed_form;
  double standard_error = 0.0;
};

/// Weighted visit counts L_z = sum_{n<N, tau_n = z} A(f^n x), sorted by site.
inline std::vector<std::pair<Site, double>> weighted_site_counts(const CocycleTrajectory& traj,
                                                                 const BaseObservable& a) {
  if (a.is_constant()) {
    const OccupationProfile p = exact_site_counts(traj);
    std::vector<std::pair<Site, double>> out;
    out.reserve(p.counts.size());
    for (const auto& [z, c] : p.counts) out.emplace_back(z, a.mean() * static_cast<double>(c));
    return out;
  }
  std::vector<std::pair<Site, double>> visits;
  visits.reserve(traj.size());
  for (std::size_t n = 0; n < traj.size(); ++n) visits.emplace_back(traj.points[n], a(traj.symbols.at(n)));
  std::sort(visits.begin(), visits.end(), [](const auto& l, const auto& r) { return l.first < r.first; });
  std::vector<std::pair<Site, double>> out;
  for (const auto& [z, w] : visits) {
    if (!out.empty() && out.back().first == z) {
      out.back().second += w;
    } else {
      out.emplace_back(z, w);
    }
  }
  return out;
}

/// V_N(x) = integral of S_N^2 over the scenery = sum_{z,z'} L_z L_z' rho(z - z').
inline QuenchedVariance quenched_variance_closed(const CocycleTrajectory& traj, const SceneryModel& model,
                                                 const Observable& h = {}) {
  if (!h.is_product()) throw UnsupportedObservable("quenched_variance_closed: observable is not of product form");
  if (traj.dimension != model.dimension) throw std::invalid_argument("quenched_variance_closed: dimension mismatch");
  detail::require_symbols(traj, h);
  const auto counts = weighted_site_counts(traj, h.base_part());
  QuenchedVariance q;
  if (model.kind == SceneryKind::iid) {
    model.validate();
    double s = 0.0;
    for (const auto& [z, c] : counts) s += c * c;
    q.value = model.variance * s;
    return q;
  }
  const CorrelationFunction rho(model);
  std::unordered_map<Site, double, SiteHash> index;
  index.reserve(counts.size() * 2);
  for (const auto& [z, c] : counts) index.emplace(z, c);
  double s = 0.0;
  for (const auto& [z, c] : counts) {
    double inner = 0.0;
    for (const auto& [u, r] : rho.support()) {
      const auto it = index.find(z + u);
      if (it != index.end()) inner += r * it->second;
    }
    s += c * inner;
  }
  q.value = std::max(0.0, s);
  return q;
}

/// Average of S_N^2 over fiber_trials independent sceneries, trajectory fixed.
inline QuenchedVariance quenched_variance_mc(const CocycleTrajectory& traj, const SceneryModel& model,
                                             std::size_t fiber_trials, Seed seed, const Observable& h = {}) {
  if (fiber_trials < 100) throw std::invalid_argument("quenched_variance_mc: fiber_trials must be >= 100");
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < fiber_trials; ++i) {
    SceneryField field(model, mix(mix(seed, stream::fiber), i));
    const double s = ergodic_sum(traj, field, h);
    sum += s * s;
    sum_sq += s * s * s * s;
  }
  const double n = static_cast<double>(fiber_trials);
  QuenchedVariance q;
  q.method = VarianceMethod::monte_carlo;
  q.value = sum / n;
  q.standard_error = std::sqrt(std::max(0.0, sum_sq / n - q.value * q.value) / (n - 1.0));
  return q;
}

struct CovarianceRow {
  std::int64_t k = 0;
  double covariance = 0.0;
  double standard_error = 0.0;
  double scaled = 0.0;  // k^{d/2} * covariance
  double scaled_standard_error = 0.0;
};

struct CovarianceTable {
  std::vector<CovarianceRow> rows;
  double target = 0.0;  // g(0) varsigma_2^2
};

/// Monte Carlo over the base of zeta(H * H o F^k) = mu(A(x) A(f^k x) rho(tau_k(x))),
/// the fiber average being done exactly. Reports k^{d/2} cov(k) against
/// g(0) varsigma_2^2.
inline CovarianceTable covariance_decay(const BaseSystem& system, const SceneryModel& model,
                                        std::span<const std::int64_t> k_grid, std::size_t trials, Seed seed,
                                        const BaseObservable& a = BaseObservable::constant(1.0)) {
  if (k_grid.empty() || k_grid.front() < 8) throw std::invalid_argument("covariance_decay: k_grid must start at >= 8");
  for (std::size_t i = 1; i < k_grid.size(); ++i) {
    if (k_grid[i] <= k_grid[i - 1]) throw std::invalid_argument("covariance_decay: k_grid must increase");
  }
  if (trials < 2) throw std::invalid_argument("covariance_decay: trials must be >= 2");
  if (system.dimension() != model.dimension) throw std::invalid_argument("covariance_decay: dimension mismatch");
  const CorrelationFunction rho(model);
  const int d = system.dimension();
  const auto k_max = static_cast<std::size_t>(k_grid.back());
  std::vector<double> sum(k_grid.size(), 0.0), sum_sq(k_grid.size(), 0.0);
  for (std::size_t t = 0; t < trials; ++t) {
    const CocycleTrajectory traj = simulate_cocycle(system, mix(seed, t), k_max + 1);
    const double a0 = a(traj.symbols[0]);
    for (std::size_t g = 0; g < k_grid.size(); ++g) {
      const auto k = static_cast<std::size_t>(k_grid[g]);
      const double v = a0 * a(traj.symbols[k]) * rho(traj.points[k]);
      sum[g] += v;
      sum_sq[g] += v * v;
    }
  }
  CovarianceTable table;
  const DiffusivityEstimate diff = estimate_diffusivity(system, 100, 4096, mix(seed, 0xd1f));
  table.target = diff.g0 * varsigma2(model, a.mean());
  const double n = static_cast<double>(trials);
  for (std::size_t g = 0; g < k_grid.size(); ++g) {
    CovarianceRow row;
    row.k = k_grid[g];
    row.covariance = sum[g] / n;
    row.standard_error = std::sqrt(std::max(0.0, sum_sq[g] / n - row.covariance * row.covariance) / (n - 1.0));
    const double scale = std::pow(static_cast<double>(row.k), 0.5 * d);
    row.scaled = scale * row.covariance;
    row.scaled_standard_error = scale * row.standard_error;
    table.rows.push_back(row);
  }
  return table;
}

/// normalization^{-r/2} sum_{n<N} Card^{r-1}(j < N : |tau_j - tau_n| <= R),
/// with the Euclidean distance.
inline double bg_condition_b(const CocycleTrajectory& traj, int r, double R, double normalization) {
  if (r < 3) throw std::invalid_argument("bg_condition_b: r must be >= 3");
  if (!(R > 0.0)) throw std::invalid_argument("bg_condition_b: R must be > 0");
  if (!(normalization > 0.0)) throw std::invalid_argument("bg_condition_b: normalization must be > 0");
  const OccupationProfile occ = exact_site_counts(traj);
  const auto& counts = occ.counts;
  std::vector<std::int64_t> prefix(counts.size() + 1, 0);
  for (std::size_t i = 0; i < counts.size(); ++i) prefix[i + 1] = prefix[i] + counts[i].second;
  // Sum of counts over sites in [lo, hi] in lexicographic order.
  const auto range = [&](Site lo, Site hi) {
    const auto cmp = [](const auto& e, Site s) { return e.first < s; };
    const auto a = std::lower_bound(counts.begin(), counts.end(), lo, cmp) - counts.begin();
    const auto b = std::upper_bound(counts.begin(), counts.end(), hi,
                                    [](Site s, const auto& e) { return s < e.first; }) - counts.begin();
    return b > a ? prefix[static_cast<std::size_t>(b)] - prefix[static_cast<std::size_t>(a)] : std::int64_t{0};
  };
  const auto reach = static_cast<std::int64_t>(std::floor(R));
  long double total = 0.0L;
  for (const auto& [z, c] : counts) {
    std::int64_t card = 0;
    if (traj.dimension == 1) {
      card = range({z.x - reach, 0}, {z.x + reach, 0});
    } else {
      for (std::int64_t dx = -reach; dx <= reach; ++dx) {
        const auto hw = static_cast<std::int64_t>(std::floor(std::sqrt(R * R - static_cast<double>(dx * dx))));
        card += range({z.x + dx, z.y - hw}, {z.x + dx, z.y + hw});
      }
    }
    total += static_cast<long double>(c) * std::pow(static_cast<long double>(card), r - 1);
  }
  return static_cast<double>(total * std::pow(static_cast<long double>(normalization), -0.5L * r));
}

enum class MeasureMode { d2, d1_self_normalized };

/// m_N = (1/normalization) sum_{n<N} delta_{tau_n}.
struct NormalizedOccupationMeasure {
  std::vector<std::pair<Site, std::int64_t>> atoms;
  double normalization = 1.0;
  std::size_t length = 0;

  double total_mass() const { return static_cast<double>(length) / normalization; }
};

inline NormalizedOccupationMeasure build_measure(const CocycleTrajectory& traj, MeasureMode mode,
                                                 std::optional<double> V_N = std::nullopt) {
  NormalizedOccupationMeasure m;
  m.atoms = exact_site_counts(traj).counts;
  m.length = traj.size();
  if (mode == MeasureMode::d2) {
    if (traj.size() < 2) throw std::invalid_argument("build_measure: d2 normalization needs N >= 2");
    const double n = static_cast<double>(traj.size());
    m.normalization = std::sqrt(n * std::log(n));
  } else {
    if (!V_N) throw std::invalid_argument("build_measure: d1 mode requires V_N");
    if (!(*V_N > 0.0)) throw std::invalid_argument("build_measure: V_N must be > 0 for a nonempty path");
    m.normalization = std::sqrt(*V_N);
  }
  return m;
}

/// Exact E[sum_z l_z^2] over walk paths of N points as a fraction
/// numerator / D^{N-1}, D = weight_total(): counts the weighted returning
/// paths R_k by dynamic programming and sums N + 2 sum_k (N - k) P(tau_k = 0).
struct ExactExpectation {
  boost::multiprecision::cpp_int numerator;
  boost::multiprecision::cpp_int denominator;

  double value() const {
    return static_cast<double>(boost::multiprecision::cpp_rational(numerator, denominator));
  }
};

inline std::vector<boost::multiprecision::cpp_int> weighted_return_counts(const BaseSystem& system, std::size_t k_max) {
  using boost::multiprecision::cpp_int;
  if (!system.is_walk()) throw std::invalid_argument("weighted_return_counts: walk bases only");
  const int d = system.dimension();
  const auto width = static_cast<std::int64_t>(2 * k_max + 1);
  const std::int64_t rows = d == 2 ? width : 1;
  const auto c = static_cast<std::int64_t>(k_max);
  const std::int64_t origin = c + (d == 2 ? c * width : 0);
  std::vector<cpp_int> cur(static_cast<std::size_t>(width * rows)), next(cur.size());
  cur[static_cast<std::size_t>(origin)] = 1;
  std::vector<cpp_int> out{1};
  for (std::size_t step = 1; step <= k_max; ++step) {
    for (auto& v : next) v = 0;
    for (std::int64_t y = 0; y < rows; ++y) {
      for (std::int64_t x = 0; x < width; ++x) {
        const cpp_int& p = cur[static_cast<std::size_t>(x + y * width)];
        if (p == 0) continue;
        for (int code = 0; code < system.step_codes(); ++code) {
          const Site s = BaseSystem::step_of_code(static_cast<std::uint64_t>(code));
          const std::int64_t nx = x + s.x, ny = y + s.y;
          if (nx < 0 || nx >= width || ny < 0 || ny >= rows) continue;
          next[static_cast<std::size_t>(nx + ny * width)] += p * system.code_weight(static_cast<std::uint64_t>(code));
        }
      }
    }
    std::swap(cur, next);
    out.push_back(cur[static_cast<std::size_t>(origin)]);
  }
  return out;
}

inline ExactExpectation expected_self_intersection(const BaseSystem& system, std::size_t N) {
  using boost::multiprecision::cpp_int;
  if (N < 1) throw std::invalid_argument("expected_self_intersection: N must be >= 1");
  const auto R = weighted_return_counts(system, N - 1);
  const cpp_int D = system.weight_total();
  std::vector<cpp_int> pow_d(N, 1);
  for (std::size_t i = 1; i < N; ++i) pow_d[i] = pow_d[i - 1] * D;
  ExactExpectation e;
  e.denominator = pow_d[N - 1];
  e.numerator = cpp_int(N) * pow_d[N - 1];
  for (std::size_t k = 1; k < N; ++k) e.numerator += 2 * cpp_int(N - k) * R[k] * pow_d[N - 1 - k];
  return e;
}

/// Exhaustive enumeration of all walk paths of N points, each weighted by
/// its product of step weights: returns sum over paths of weight * sum_z l_z^2
/// (same denominator D^{N-1} as expected_self_intersection).
inline ExactExpectation enumerate_self_intersection(const BaseSystem& system, std::size_t N) {
  using boost::multiprecision::cpp_int;
  if (!system.is_walk()) throw std::invalid_argument("enumerate_self_intersection: walk bases only");
  if (N < 1 || N > 12) throw std::invalid_argument("enumerate_self_intersection: N must be in [1, 12]");
  const int codes = system.step_codes();
  const std::size_t steps = N - 1;
  std::vector<int> word(steps, 0);
  std::vector<Site> pts(N);
  cpp_int total = 0;
  for (;;) {
    std::int64_t weight = 1;
    Site at{};
    pts[0] = at;
    for (std::size_t i = 0; i < steps; ++i) {
      weight *= system.code_weight(static_cast<std::uint64_t>(word[i]));
      at += BaseSystem::step_of_code(static_cast<std::uint64_t>(word[i]));
      pts[i + 1] = at;
    }
    if (weight != 0) {
      std::int64_t pairs = 0;
      for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = 0; j < N; ++j) pairs += pts[i] == pts[j] ? 1 : 0;
      }
      total += cpp_int(weight) * pairs;
    }
    std::size_t pos = 0;
    while (pos < steps && ++word[pos] == codes) word[pos++] = 0;
    if (pos == steps) break;
  }
  ExactExpectation e;
  e.numerator = total;
  e.denominator = 1;
  for (std::size_t i = 0; i < steps; ++i) e.denominator *= system.weight_total();
  return e;
}

}  // namespace rwrs
