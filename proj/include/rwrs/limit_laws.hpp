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

// Limit-law constants and samplers: Lambda, Sigma^2, the moments
// J_k = E[L^{2k}] of the Brownian local-time functional L = (int l_x^2 dx)^{1/2},
// and Monte Carlo draws of L and of sqrt(Lambda) L Z.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/sinh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/random/gamma_distribution.hpp>

#include "rwrs/base_dynamics.hpp"
#include "rwrs/fiber_scenery.hpp"
#include "rwrs/parallel.hpp"
#include "rwrs/random.hpp"

namespace rwrs {

/// Lambda = varsigma_2^2 / varsigma_1, so that V_N / (Lambda N^{3/2}) => L^2.
inline double lambda_constant(double varsigma1, double varsigma2_sq) {
  if (!(varsigma1 > 0.0)) throw std::invalid_argument("lambda_constant: varsigma1 must be > 0");
  if (!(varsigma2_sq >= 0.0)) throw std::invalid_argument("lambda_constant: varsigma2^2 must be >= 0");
  return varsigma2_sq / varsigma1;
}

/// The same constant written through the density at zero: sqrt(2 pi) varsigma_2^2 g(0).
inline double lambda_from_density(double g0, double varsigma2_sq) {
  if (!(g0 > 0.0)) throw std::invalid_argument("lambda_from_density: g0 must be > 0");
  return std::sqrt(2.0 * std::numbers::pi) * varsigma2_sq * g0;
}

/// Sigma^2 = 2 g(0) varsigma_2^2 (d = 2).
inline double sigma2_d2(double g0, double varsigma2_sq) {
  if (!std::isfinite(g0) || !std::isfinite(varsigma2_sq)) throw std::invalid_argument("sigma2_d2: inputs must be finite");
  if (!(g0 > 0.0)) throw std::invalid_argument("sigma2_d2: g0 must be > 0");
  return 2.0 * g0 * varsigma2_sq;
}

/// J_1 = E[L^2] = 4 sqrt(2) / (3 sqrt(pi)).
inline double j1_closed_form() { return 4.0 * std::numbers::sqrt2 / (3.0 * std::sqrt(std::numbers::pi)); }

/// J_1 by deterministic quadrature of
///   2 int_{0<t1<t2<1} int_R t1^{-1/2} phi(w / sqrt(t1)) (t2 - t1)^{-1/2} phi(0) dw dt,
/// after t1 = r^2, t2 = r^2 + s^2, w = r u (integrand 8 r phi(u) phi(0)).
inline double j1_quadrature() {
  using boost::math::quadrature::gauss_kronrod;
  using boost::math::quadrature::sinh_sinh;
  const double phi0 = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  sinh_sinh<double> real_line;
  const auto inner = [&](double r) {
    return real_line.integrate([&](double u) { return 8.0 * r * phi0 * phi0 * std::exp(-0.5 * u * u); });
  };
  const auto middle = [&](double r) {
    const double top = std::sqrt(std::max(0.0, 1.0 - r * r));
    const double w = inner(r);
    return gauss_kronrod<double, 31>::integrate([&](double) { return w; }, 0.0, top, 0, 1e-13);
  };
  return gauss_kronrod<double, 61>::integrate(middle, 0.0, 1.0, 10, 1e-13);
}

/// All maps v: {1..2k} -> {1..k} taking every value exactly twice; (2k)!/2^k of them.
inline std::vector<std::vector<int>> two_to_one_maps(int k) {
  if (k < 1 || k > 5) throw std::invalid_argument("two_to_one_maps: k must be in [1, 5]");
  std::vector<std::vector<int>> out;
  std::vector<int> word(static_cast<std::size_t>(2 * k));
  std::vector<int> used(static_cast<std::size_t>(k + 1), 0);
  const auto rec = [&](auto&& self, std::size_t pos) -> void {
    if (pos == word.size()) {
      out.push_back(word);
      return;
    }
    for (int label = 1; label <= k; ++label) {
      if (used[static_cast<std::size_t>(label)] == 2) continue;
      ++used[static_cast<std::size_t>(label)];
      word[pos] = label;
      self(self, pos + 1);
      --used[static_cast<std::size_t>(label)];
    }
  };
  rec(rec, 0);
  return out;
}

/// Representatives of two_to_one_maps up to relabelling: labels appear in
/// order of first occurrence; (2k-1)!! of them, each standing for k! maps.
inline std::vector<std::vector<int>> canonical_pairings(int k) {
  if (k < 1 || k > 5) throw std::invalid_argument("canonical_pairings: k must be in [1, 5]");
  std::vector<std::vector<int>> out;
  std::vector<int> word(static_cast<std::size_t>(2 * k), 0);
  const auto rec = [&](auto&& self, int next_label) -> void {
    const auto it = std::find(word.begin(), word.end(), 0);
    if (it == word.end()) {
      out.push_back(word);
      return;
    }
    *it = next_label;
    for (auto jt = it + 1; jt != word.end(); ++jt) {
      if (*jt != 0) continue;
      *jt = next_label;
      self(self, next_label + 1);
      *jt = 0;
    }
    *it = 0;
  };
  rec(rec, 1);
  return out;
}

struct MonteCarloEstimate {
  double value = 0.0;
  double standard_error = 0.0;
  std::size_t samples = 0;
};

namespace detail {

/// Determinant of a small symmetric positive definite matrix (Cholesky).
inline double spd_determinant(std::vector<double>& a, int n) {
  double det = 1.0;
  for (int j = 0; j < n; ++j) {
    double diag = a[static_cast<std::size_t>(j * n + j)];
    for (int p = 0; p < j; ++p) diag -= a[static_cast<std::size_t>(j * n + p)] * a[static_cast<std::size_t>(j * n + p)];
    if (!(diag > 0.0)) return 0.0;
    const double l = std::sqrt(diag);
    a[static_cast<std::size_t>(j * n + j)] = l;
    det *= diag;
    for (int i = j + 1; i < n; ++i) {
      double v = a[static_cast<std::size_t>(i * n + j)];
      for (int p = 0; p < j; ++p) v -= a[static_cast<std::size_t>(i * n + p)] * a[static_cast<std::size_t>(j * n + p)];
      a[static_cast<std::size_t>(i * n + j)] = v / l;
    }
  }
  return det;
}

/// Gaps g_1..g_m of a Dirichlet(alpha, ..., alpha, 1) vector (last slack dropped).
inline void dirichlet_gaps(Engine& engine, double alpha, std::span<double> gaps) {
  boost::random::gamma_distribution<double> shape(alpha);
  boost::random::gamma_distribution<double> slack(1.0);
  double total = 0.0;
  for (double& g : gaps) {
    g = shape(engine);
    total += g;
  }
  total += slack(engine);
  for (double& g : gaps) g /= total;
}

inline MonteCarloEstimate reduce(std::span<const std::array<double, 2>> chunks, std::size_t samples) {
  double sum = 0.0, sum_sq = 0.0;
  for (const auto& c : chunks) {
    sum += c[0];
    sum_sq += c[1];
  }
  const double n = static_cast<double>(samples);
  MonteCarloEstimate e;
  e.samples = samples;
  e.value = sum / n;
  e.standard_error = std::sqrt(std::max(0.0, sum_sq / n - e.value * e.value) / (n - 1.0));
  return e;
}

inline constexpr std::size_t kChunk = 4096;

}  // namespace detail

/// J_k = 2^k int_{0<t_1<...<t_2k<1} int_{R^k} prod (t_j - t_{j-1})^{-1/2}
///        sum_{v in V} prod phi((w_{v(j)} - w_{v(j-1)}) / sqrt(t_j - t_{j-1})) dw dt,
/// with w_{v(0)} = 0. The w-integral is Gaussian and done exactly:
/// (2 pi)^{-k/2} det(Q_v)^{-1/2} with Q_v the Laplacian of the visit path
/// grounded at 0. The gaps t_j - t_{j-1} are drawn from Dirichlet(1/2, ..., 1/2, 1),
/// whose density cancels the gap singularities.
inline MonteCarloEstimate jk_monte_carlo(int k, std::size_t samples, Seed seed, unsigned threads = 1) {
  if (k < 1) throw std::invalid_argument("jk_monte_carlo: k must be >= 1");
  if (k > 5) throw std::invalid_argument("jk_monte_carlo: k > 5 exceeds the pairing enumeration cap");
  if (samples < 10000) throw std::invalid_argument("jk_monte_carlo: samples must be >= 1e4");
  const auto pairings = canonical_pairings(k);
  const double k_fact = std::tgamma(k + 1.0);
  // 2^k (2 pi)^{-k/2} * (pi^k / k!) * k! (relabellings)
  const double prefactor = std::pow(2.0, k) * std::pow(2.0 * std::numbers::pi, -0.5 * k) *
                           std::pow(std::numbers::pi, k) / k_fact * k_fact;
  const std::size_t chunks = (samples + detail::kChunk - 1) / detail::kChunk;
  const auto parts = parallel_map(chunks, threads, [&](std::size_t c) {
    Engine engine(mix(seed, c));
    std::vector<double> gaps(static_cast<std::size_t>(2 * k));
    std::vector<double> q(static_cast<std::size_t>(k * k));
    const std::size_t begin = c * detail::kChunk;
    const std::size_t end = std::min(samples, begin + detail::kChunk);
    std::array<double, 2> acc{0.0, 0.0};
    for (std::size_t s = begin; s < end; ++s) {
      detail::dirichlet_gaps(engine, 0.5, gaps);
      double total = 0.0;
      for (const auto& v : pairings) {
        std::fill(q.begin(), q.end(), 0.0);
        int prev = 0;
        for (std::size_t j = 0; j < v.size(); ++j) {
          const int cur = v[j];
          if (cur != prev) {
            const double w = 1.0 / gaps[j];
            if (cur > 0) q[static_cast<std::size_t>((cur - 1) * k + cur - 1)] += w;
            if (prev > 0) q[static_cast<std::size_t>((prev - 1) * k + prev - 1)] += w;
            if (cur > 0 && prev > 0) {
              q[static_cast<std::size_t>((cur - 1) * k + prev - 1)] -= w;
              q[static_cast<std::size_t>((prev - 1) * k + cur - 1)] -= w;
            }
          }
          prev = cur;
        }
        const double det = detail::spd_determinant(q, k);
        if (det > 0.0) total += 1.0 / std::sqrt(det);
      }
      const double x = prefactor * total;
      acc[0] += x;
      acc[1] += x * x;
    }
    return acc;
  });
  return detail::reduce(parts, samples);
}

struct SimplexCheck {
  MonteCarloEstimate estimate;
  double exact = 0.0;
};

/// int_{0<t_1<...<t_2k<1} prod (t_j - t_{j-1})^{-1/2} dt versus pi^k / k!,
/// importance-sampled from Dirichlet(3/4, ..., 3/4, 1).
inline SimplexCheck simplex_integral_check(int k, std::size_t samples, Seed seed, unsigned threads = 1) {
  if (k < 1 || k > 4) throw std::invalid_argument("simplex_integral_check: k must be in [1, 4]");
  if (samples < 2) throw std::invalid_argument("simplex_integral_check: samples must be >= 2");
  constexpr double alpha = 0.75;
  const int m = 2 * k;
  const double log_norm = m * std::lgamma(alpha) - std::lgamma(m * alpha + 1.0);
  const std::size_t chunks = (samples + detail::kChunk - 1) / detail::kChunk;
  const auto parts = parallel_map(chunks, threads, [&](std::size_t c) {
    Engine engine(mix(seed, c));
    std::vector<double> gaps(static_cast<std::size_t>(m));
    const std::size_t begin = c * detail::kChunk;
    const std::size_t end = std::min(samples, begin + detail::kChunk);
    std::array<double, 2> acc{0.0, 0.0};
    for (std::size_t s = begin; s < end; ++s) {
      detail::dirichlet_gaps(engine, alpha, gaps);
      double log_w = log_norm;
      for (double g : gaps) log_w += (0.5 - alpha) * std::log(g);
      const double x = std::exp(log_w);
      acc[0] += x;
      acc[1] += x * x;
    }
    return acc;
  });
  SimplexCheck out;
  out.estimate = detail::reduce(parts, samples);
  out.exact = std::pow(std::numbers::pi, k) / std::tgamma(k + 1.0);
  return out;
}

/// (J_k / k!)^{1/k} for k = 1, 2, ...
inline std::vector<double> moment_growth(std::span<const double> j) {
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const double k = static_cast<double>(i + 1);
    if (!(j[i] > 0.0)) throw std::invalid_argument("moment_growth: moments must be positive");
    out.push_back(std::pow(j[i] / std::tgamma(k + 1.0), 1.0 / k));
  }
  return out;
}

struct PathLocalTime {
  double L = 0.0;
  double mass = 0.0;  // sum of l-hat * dx over bins at width h
};

/// Brownian local-time functional L = (int l_x^2 dx)^{1/2} from a time-1 path
/// of M Gaussian steps. Occupation is binned at widths h and 2h on a grid
/// with a random offset, and the O(h) binning bias is removed by combining
/// 2 L^2(h) - L^2(2h).
class KestenSpitzerSampler {
 public:
  KestenSpitzerSampler(std::size_t steps, double bin_width, Seed seed)
      : steps_(steps), h_(bin_width), seed_(seed) {
    if (steps_ < 10000) throw std::invalid_argument("KestenSpitzerSampler: M must be >= 1e4");
    if (!(h_ > 0.0) || h_ > std::pow(static_cast<double>(steps_), -0.25)) {
      throw std::invalid_argument("KestenSpitzerSampler: bin width must lie in (0, M^{-1/4}]");
    }
  }

  std::size_t steps() const { return steps_; }
  double bin_width() const { return h_; }
  Seed seed() const { return seed_; }

  PathLocalTime path(std::size_t index) const {
    NormalSource normal(mix(mix(seed_, stream::reference), index));
    const double offset = to_unit(normal.engine()());
    const double dt_sd = 1.0 / std::sqrt(static_cast<double>(steps_));
    std::vector<double> x(steps_);
    double at = 0.0, lo = 0.0, hi = 0.0;
    for (std::size_t j = 0; j < steps_; ++j) {
      x[j] = at;
      lo = std::min(lo, at);
      hi = std::max(hi, at);
      at += dt_sd * normal();
    }
    const auto [fine, mass] = binned_square(x, h_, offset, lo, hi);
    const auto [coarse, coarse_mass] = binned_square(x, 2.0 * h_, offset, lo, hi);
    PathLocalTime out;
    out.L = std::sqrt(std::max(0.0, 2.0 * fine - coarse));
    out.mass = mass;
    return out;
  }

 private:
  // Returns (sum l^2 h, sum l h) for bins of width h.
  static std::array<double, 2> binned_square(const std::vector<double>& x, double h, double offset, double lo,
                                             double hi) {
    const auto base = static_cast<std::int64_t>(std::floor(lo / h + offset));
    const auto top = static_cast<std::int64_t>(std::floor(hi / h + offset));
    std::vector<std::int64_t> count(static_cast<std::size_t>(top - base + 1), 0);
    for (double v : x) ++count[static_cast<std::size_t>(static_cast<std::int64_t>(std::floor(v / h + offset)) - base)];
    const double m = static_cast<double>(x.size());
    double sq = 0.0, mass = 0.0;
    for (std::int64_t c : count) {
      const double ell = static_cast<double>(c) / m / h;
      sq += ell * ell * h;
      mass += ell * h;
    }
    return {sq, mass};
  }

  std::size_t steps_;
  double h_;
  Seed seed_;
};

inline std::vector<double> kesten_spitzer_sample(const KestenSpitzerSampler& sampler, std::size_t n_samples,
                                                 unsigned threads = 1) {
  return parallel_map(n_samples, threads, [&](std::size_t i) { return sampler.path(i).L; });
}

enum class Provenance { analytic, quadrature, derived_oracle, monte_carlo };

inline std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::analytic: return "analytic";
    case Provenance::quadrature: return "quadrature";
    case Provenance::derived_oracle: return "derived-oracle";
    case Provenance::monte_carlo: return "monte-carlo";
  }
  return "?";
}

struct Constant {
  double value = std::numeric_limits<double>::quiet_NaN();
  double error = 0.0;
  Provenance provenance = Provenance::analytic;

  bool known() const { return std::isfinite(value); }
};

struct LimitConstants {
  int dimension = 1;
  Constant varsigma1;
  Constant g0;
  Constant varsigma2_sq;
  Constant Lambda;
  Constant Sigma2;
  std::map<int, Constant> J;
};

/// Fills the constants implied by a base diffusivity and a scenery model.
inline LimitConstants derive_constants(const DiffusivityEstimate& diff, const SceneryModel& model,
                                       double base_observable_mean = 1.0) {
  LimitConstants c;
  c.dimension = diff.dimension;
  const Provenance base_prov =
      diff.method == DiffusivityMethod::analytic ? Provenance::analytic : Provenance::monte_carlo;
  c.g0 = {diff.g0, 0.0, base_prov};
  c.varsigma2_sq = {varsigma2(model, base_observable_mean), 0.0, Provenance::analytic};
  if (diff.dimension == 1) {
    c.varsigma1 = {diff.varsigma1, diff.standard_error / (2.0 * diff.varsigma1), base_prov};
    c.Lambda = {lambda_constant(diff.varsigma1, c.varsigma2_sq.value),
                c.varsigma2_sq.value * c.varsigma1.error / (diff.varsigma1 * diff.varsigma1), base_prov};
  } else {
    c.Sigma2 = {sigma2_d2(diff.g0, c.varsigma2_sq.value), 0.0, base_prov};
  }
  c.J[1] = {j1_closed_form(), 0.0, Provenance::analytic};
  return c;
}

/// Draws sqrt(Lambda) * L * Z with L from the sampler and Z standard normal, independent.
inline std::vector<double> limit_law_sample_d1(const LimitConstants& constants, const KestenSpitzerSampler& sampler,
                                               std::size_t n, unsigned threads = 1) {
  if (!constants.Lambda.known()) throw std::invalid_argument("limit_law_sample_d1: Lambda is not set");
  if (constants.Lambda.value < 0.0) throw std::invalid_argument("limit_law_sample_d1: Lambda must be >= 0");
  const double sigma = std::sqrt(constants.Lambda.value);
  const std::vector<double> L = kesten_spitzer_sample(sampler, n, threads);
  NormalSource z(mix(sampler.seed(), stream::gaussian));
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = sigma * L[i] * z();
  return out;
}

struct LambdaCalibration {
  double limit = 0.0;    // extrapolated lim E[V_N] / N^{3/2}
  double lambda = 0.0;   // limit / J_1
  int order = 0;
};

/// Richardson extrapolation of y_N = E[V_N] / N^{3/2} under the expansion
/// y_N = a + c_1 N^{-1/2} + ... + c_m N^{-m/2}, through the last m + 1 points.
inline LambdaCalibration calibrate_lambda(std::span<const std::int64_t> n_values, std::span<const double> expected_vn,
                                          int order = 3) {
  if (n_values.size() != expected_vn.size()) throw std::invalid_argument("calibrate_lambda: size mismatch");
  if (order < 0 || n_values.size() < static_cast<std::size_t>(order + 1)) {
    throw std::invalid_argument("calibrate_lambda: need order + 1 points");
  }
  const int m = order + 1;
  std::vector<double> a(static_cast<std::size_t>(m * m)), b(static_cast<std::size_t>(m));
  const std::size_t first = n_values.size() - static_cast<std::size_t>(m);
  for (int i = 0; i < m; ++i) {
    const auto N = static_cast<double>(n_values[first + static_cast<std::size_t>(i)]);
    for (int j = 0; j < m; ++j) a[static_cast<std::size_t>(i * m + j)] = std::pow(N, -0.5 * j);
    b[static_cast<std::size_t>(i)] = expected_vn[first + static_cast<std::size_t>(i)] / std::pow(N, 1.5);
  }
  // Gaussian elimination with partial pivoting.
  for (int col = 0; col < m; ++col) {
    int piv = col;
    for (int r = col + 1; r < m; ++r) {
      if (std::abs(a[static_cast<std::size_t>(r * m + col)]) > std::abs(a[static_cast<std::size_t>(piv * m + col)])) piv = r;
    }
    for (int j = 0; j < m; ++j) std::swap(a[static_cast<std::size_t>(col * m + j)], a[static_cast<std::size_t>(piv * m + j)]);
    std::swap(b[static_cast<std::size_t>(col)], b[static_cast<std::size_t>(piv)]);
    for (int r = col + 1; r < m; ++r) {
      const double f = a[static_cast<std::size_t>(r * m + col)] / a[static_cast<std::size_t>(col * m + col)];
      for (int j = col; j < m; ++j) a[static_cast<std::size_t>(r * m + j)] -= f * a[static_cast<std::size_t>(col * m + j)];
      b[static_cast<std::size_t>(r)] -= f * b[static_cast<std::size_t>(col)];
    }
  }
  std::vector<double> x(static_cast<std::size_t>(m));
  for (int r = m - 1; r >= 0; --r) {
    double v = b[static_cast<std::size_t>(r)];
    for (int j = r + 1; j < m; ++j) v -= a[static_cast<std::size_t>(r * m + j)] * x[static_cast<std::size_t>(j)];
    x[static_cast<std::size_t>(r)] = v / a[static_cast<std::size_t>(r * m + r)];
  }
  LambdaCalibration out;
  out.limit = x[0];
  out.lambda = x[0] / j1_closed_form();
  out.order = order;
  return out;
}

}  // namespace rwrs
