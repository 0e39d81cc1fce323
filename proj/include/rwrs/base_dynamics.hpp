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

// Base systems (f, mu, tau): lazy walks on Z^d and the doubling map with an
// integer step function, their cocycle paths, local times, and empirical
// checks of the local limit and anticoncentration hypotheses.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rwrs/lattice.hpp"
#include "rwrs/random.hpp"

namespace rwrs {

/// Raised when a base system, scenery or config violates its contract.
class InvalidSpec : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }

  /// Best continued-fraction approximation with denominator <= max_den.
  /// Throws if it is farther than 1e-9 from v.
  static Rational approximate(double v, std::int64_t max_den = 1000000) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidSpec("rational: value must be finite and >= 0");
    std::int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
    double x = v;
    for (int it = 0; it < 64; ++it) {
      const double a = std::floor(x);
      const auto ai = static_cast<std::int64_t>(a);
      const std::int64_t p2 = ai * p1 + p0;
      const std::int64_t q2 = ai * q1 + q0;
      if (q2 > max_den) break;
      p0 = p1; q0 = q1; p1 = p2; q1 = q2;
      if (std::abs(static_cast<double>(p1) / static_cast<double>(q1) - v) < 1e-15) break;
      const double frac = x - a;
      if (frac < 1e-15) break;
      x = 1.0 / frac;
    }
    if (q1 == 0 || std::abs(static_cast<double>(p1) / static_cast<double>(q1) - v) > 1e-9) {
      throw InvalidSpec("rational: no small-denominator approximation of " + std::to_string(v));
    }
    return {p1, q1};
  }
};

/// Integer-valued step function on [0, 1) given by breakpoints
/// 0 = b_0 < ... < b_m = 1 and values v_0..v_{m-1}.
class StepFunction {
 public:
  StepFunction() = default;
  StepFunction(std::vector<double> breakpoints, std::vector<int> values)
      : breakpoints_(std::move(breakpoints)), values_(std::move(values)) {
    if (breakpoints_.size() < 2 || values_.size() + 1 != breakpoints_.size()) {
      throw InvalidSpec("step function: need m+1 breakpoints for m values");
    }
    if (breakpoints_.front() != 0.0 || breakpoints_.back() != 1.0) {
      throw InvalidSpec("step function: breakpoints must start at 0 and end at 1");
    }
    for (std::size_t i = 1; i < breakpoints_.size(); ++i) {
      if (!(breakpoints_[i] > breakpoints_[i - 1])) {
        throw InvalidSpec("step function: breakpoints must be strictly increasing");
      }
    }
    thresholds_.reserve(breakpoints_.size() - 2);
    for (std::size_t i = 1; i + 1 < breakpoints_.size(); ++i) {
      thresholds_.push_back(to_word(breakpoints_[i]));
    }
  }

  /// Lebesgue mean.
  double mean() const {
    double m = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      m += (breakpoints_[i + 1] - breakpoints_[i]) * values_[i];
    }
    return m;
  }

  int max_abs() const {
    int m = 0;
    for (int v : values_) m = std::max(m, std::abs(v));
    return m;
  }

  /// Value at the point word / 2^64.
  int operator()(std::uint64_t word) const {
    const auto it = std::upper_bound(thresholds_.begin(), thresholds_.end(), word);
    return values_[static_cast<std::size_t>(it - thresholds_.begin())];
  }

  const std::vector<double>& breakpoints() const { return breakpoints_; }
  const std::vector<int>& values() const { return values_; }

  static std::uint64_t to_word(double x) {
    if (x <= 0.0) return 0;
    if (x >= 1.0) return std::numeric_limits<std::uint64_t>::max();
    return static_cast<std::uint64_t>(std::ldexp(x, 64));
  }

 private:
  std::vector<double> breakpoints_;
  std::vector<int> values_;
  std::vector<std::uint64_t> thresholds_;
};

enum class BaseKind { lazy_walk_z1, lazy_walk_z2, doubling_map };

inline std::string to_string(BaseKind k) {
  switch (k) {
    case BaseKind::lazy_walk_z1: return "lazy-walk-Z1";
    case BaseKind::lazy_walk_z2: return "lazy-walk-Z2";
    case BaseKind::doubling_map: return "doubling-map";
  }
  return "?";
}

/// A base system (f, mu, tau) with a zero-drift Z^d-valued cocycle.
///
/// Walks: the base point is the two-sided sequence of steps; the symbol at
/// time n is the code of the step taken from tau_n (0 = hold, then +e1, -e1,
/// +e2, -e2). Step probabilities are rational so that exact enumeration is
/// possible: hold has weight 2d*num, every move has weight den-num, out of
/// 2d*den.
///
/// Doubling map: the symbol at time n is the 64-bit word floor(2^64 f^n x).
class BaseSystem {
 public:
  static BaseSystem lazy_walk(int dimension, Rational hold = {1, 3}) {
    if (dimension != 1 && dimension != 2) throw InvalidSpec("walk dimension must be 1 or 2");
    if (hold.den <= 0 || hold.num < 0 || hold.num >= hold.den) {
      throw InvalidSpec("hold probability must lie in [0, 1)");
    }
    BaseSystem s;
    s.kind_ = dimension == 1 ? BaseKind::lazy_walk_z1 : BaseKind::lazy_walk_z2;
    s.dimension_ = dimension;
    s.hold_ = hold;
    return s;
  }

  static BaseSystem doubling_map(StepFunction cocycle) {
    if (std::abs(cocycle.mean()) > 1e-12) {
      throw InvalidSpec("zero-drift violation: cocycle mean is " + std::to_string(cocycle.mean()));
    }
    bool nonconstant = false;
    for (int v : cocycle.values()) nonconstant |= v != 0;
    if (!nonconstant) throw InvalidSpec("doubling map cocycle is identically zero");
    BaseSystem s;
    s.kind_ = BaseKind::doubling_map;
    s.dimension_ = 1;
    s.cocycle_ = std::move(cocycle);
    return s;
  }

  /// +1 on [0, 1/2), -1 on [1/2, 1).
  static StepFunction halves_cocycle() { return StepFunction({0.0, 0.5, 1.0}, {1, -1}); }
  /// +1 on [0, 1/3), 0 on [1/3, 2/3), -1 on [2/3, 1).
  static StepFunction thirds_cocycle() {
    return StepFunction({0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0}, {1, 0, -1});
  }

  BaseKind kind() const { return kind_; }
  bool is_walk() const { return kind_ != BaseKind::doubling_map; }
  int dimension() const { return dimension_; }
  Rational hold() const { return hold_; }
  double hold_probability() const { return hold_.value(); }
  const StepFunction& cocycle() const { return cocycle_; }
  std::string label() const { return to_string(kind_); }

  /// Sup-norm bound on |tau_{n+1} - tau_n|.
  int max_step() const { return is_walk() ? 1 : cocycle_.max_abs(); }

  /// Number of walk step codes (2d + 1).
  int step_codes() const { return 2 * dimension_ + 1; }

  static constexpr Site step_of_code(std::uint64_t code) {
    switch (code) {
      case 1: return {1, 0};
      case 2: return {-1, 0};
      case 3: return {0, 1};
      case 4: return {0, -1};
      default: return {0, 0};
    }
  }

  /// Integer weights of the walk step codes; they sum to weight_total().
  std::int64_t code_weight(std::uint64_t code) const {
    return code == 0 ? 2 * dimension_ * hold_.num : hold_.den - hold_.num;
  }
  std::int64_t weight_total() const { return 2 * dimension_ * hold_.den; }
  double code_probability(std::uint64_t code) const {
    return static_cast<double>(code_weight(code)) / static_cast<double>(weight_total());
  }

  /// Increment of the cocycle at a base symbol.
  Site step(std::uint64_t symbol) const {
    if (is_walk()) return step_of_code(symbol);
    return {cocycle_(symbol), 0};
  }

  /// Per-coordinate step variance for walks (the covariance is diagonal).
  double walk_coordinate_variance() const {
    return (1.0 - hold_probability()) / static_cast<double>(dimension_);
  }

 private:
  BaseSystem() = default;

  BaseKind kind_ = BaseKind::lazy_walk_z1;
  int dimension_ = 1;
  Rational hold_{1, 3};
  StepFunction cocycle_;
};

/// The path tau_0..tau_{N-1} of one base orbit, with the base symbol at
/// every time (symbols[n] determines tau_{n+1} - tau_n).
struct CocycleTrajectory {
  int dimension = 1;
  Seed seed = 0;
  std::vector<Site> points;
  std::vector<std::uint64_t> symbols;

  std::size_t size() const { return points.size(); }
};

namespace detail {

/// Generates base symbols of one orbit.
class SymbolStream {
 public:
  SymbolStream(const BaseSystem& system, Seed seed, std::optional<double> x0)
      : system_(&system),
        engine_(mix(seed, stream::base)),
        digits_(engine_, static_cast<std::uint64_t>(system.is_walk() ? system.weight_total() : 2)) {
    if (!system.is_walk()) {
      word_ = x0 ? StepFunction::to_word(*x0) : engine_();
    }
  }

  std::uint64_t next() {
    if (system_->is_walk()) {
      const std::uint64_t digit = digits_();
      const auto hold_w = static_cast<std::uint64_t>(system_->code_weight(0));
      if (digit < hold_w) return 0;
      return 1 + (digit - hold_w) / static_cast<std::uint64_t>(system_->code_weight(1));
    }
    const std::uint64_t current = word_;
    // Exact doubling of an infinite binary expansion: shift one fresh bit in.
    if (bits_left_ == 0) {
      bit_buffer_ = engine_();
      bits_left_ = 64;
    }
    word_ = (word_ << 1) | (bit_buffer_ >> 63);
    bit_buffer_ <<= 1;
    --bits_left_;
    return current;
  }

 private:
  const BaseSystem* system_;
  Engine engine_;
  DigitSource digits_;
  std::uint64_t word_ = 0;
  std::uint64_t bit_buffer_ = 0;
  int bits_left_ = 0;
};

}  // namespace detail

/// Simulates tau_0..tau_{N-1}. A deterministic function of (system, seed),
/// and of x0 for the doubling map when given (the binary digits of x0
/// beyond 2^-64 are drawn from the seed).
inline CocycleTrajectory simulate_cocycle(const BaseSystem& system, Seed seed, std::size_t N,
                                          std::optional<double> x0 = std::nullopt) {
  if (N < 1) throw std::invalid_argument("simulate_cocycle: N must be >= 1");
  if (x0 && system.is_walk()) throw std::invalid_argument("simulate_cocycle: x0 only applies to the doubling map");
  if (x0 && !(*x0 >= 0.0 && *x0 < 1.0)) throw std::invalid_argument("simulate_cocycle: x0 must lie in [0, 1)");
  CocycleTrajectory traj;
  traj.dimension = system.dimension();
  traj.seed = seed;
  traj.points.resize(N);
  traj.symbols.resize(N);
  detail::SymbolStream stream(system, seed, x0);
  Site at{};
  for (std::size_t n = 0; n < N; ++n) {
    traj.points[n] = at;
    const std::uint64_t sym = stream.next();
    traj.symbols[n] = sym;
    at += system.step(sym);
  }
  return traj;
}

/// Builds a trajectory from explicit increments; tau_0 = 0 and the path has
/// steps.size() + 1 points. Symbols are left empty.
inline CocycleTrajectory cocycle_from_steps(int dimension, std::span<const Site> steps) {
  CocycleTrajectory traj;
  traj.dimension = dimension;
  traj.points.reserve(steps.size() + 1);
  Site at{};
  traj.points.push_back(at);
  for (Site s : steps) {
    at += s;
    traj.points.push_back(at);
  }
  return traj;
}

inline CocycleTrajectory trajectory_from_points(int dimension, std::vector<Site> points) {
  CocycleTrajectory traj;
  traj.dimension = dimension;
  traj.points = std::move(points);
  return traj;
}

/// Debug export: columns n, tau (d = 1) or n, tau_x, tau_y (d = 2).
inline void write_trajectory_csv(const CocycleTrajectory& traj, std::ostream& out) {
  out << (traj.dimension == 1 ? "n,tau\n" : "n,tau_x,tau_y\n");
  for (std::size_t n = 0; n < traj.points.size(); ++n) {
    out << n << ',' << traj.points[n].x;
    if (traj.dimension == 2) out << ',' << traj.points[n].y;
    out << '\n';
  }
}

/// Occupation counts on lattice sites, sorted by site. window_radius 0
/// means exact visits, 1 means the sup-norm window |tau_n - t| <= 1.
struct OccupationProfile {
  int dimension = 1;
  int window_radius = 0;
  std::size_t length = 0;
  std::vector<std::pair<Site, std::int64_t>> counts;

  std::int64_t at(Site t) const {
    const auto it = std::lower_bound(counts.begin(), counts.end(), t,
                                     [](const auto& e, Site s) { return e.first < s; });
    return (it != counts.end() && it->first == t) ? it->second : 0;
  }

  std::int64_t total() const {
    std::int64_t s = 0;
    for (const auto& [site, c] : counts) s += c;
    return s;
  }

  std::int64_t max() const {
    std::int64_t m = 0;
    for (const auto& [site, c] : counts) m = std::max(m, c);
    return m;
  }

  /// Sum of squared counts; for exact visits this is the self-intersection
  /// local time sum_z l_z^2.
  double sum_of_squares() const {
    double s = 0.0;
    for (const auto& [site, c] : counts) s += static_cast<double>(c) * static_cast<double>(c);
    return s;
  }
};

namespace detail {

inline std::vector<std::pair<Site, std::int64_t>> run_length(std::vector<Site> sites) {
  std::sort(sites.begin(), sites.end());
  std::vector<std::pair<Site, std::int64_t>> out;
  for (std::size_t i = 0; i < sites.size();) {
    std::size_t j = i;
    while (j < sites.size() && sites[j] == sites[i]) ++j;
    out.emplace_back(sites[i], static_cast<std::int64_t>(j - i));
    i = j;
  }
  return out;
}

}  // namespace detail

/// l_z = Card(n < N : tau_n = z).
inline OccupationProfile exact_site_counts(const CocycleTrajectory& traj) {
  OccupationProfile p;
  p.dimension = traj.dimension;
  p.window_radius = 0;
  p.length = traj.size();
  p.counts = detail::run_length(traj.points);
  return p;
}

/// l(t) = Card(n < N : |tau_n - t| <= 1) with the sup-norm window.
inline OccupationProfile local_time_profile(const CocycleTrajectory& traj) {
  const OccupationProfile exact = exact_site_counts(traj);
  std::vector<std::pair<Site, std::int64_t>> spread;
  const int ylo = traj.dimension == 2 ? -1 : 0;
  const int yhi = traj.dimension == 2 ? 1 : 0;
  spread.reserve(exact.counts.size() * (traj.dimension == 2 ? 9 : 3));
  for (const auto& [site, c] : exact.counts) {
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = ylo; dy <= yhi; ++dy) spread.emplace_back(site + Site{dx, dy}, c);
    }
  }
  std::sort(spread.begin(), spread.end());
  OccupationProfile p;
  p.dimension = traj.dimension;
  p.window_radius = 1;
  p.length = traj.size();
  for (const auto& [site, c] : spread) {
    if (!p.counts.empty() && p.counts.back().first == site) {
      p.counts.back().second += c;
    } else {
      p.counts.emplace_back(site, c);
    }
  }
  return p;
}

enum class DiffusivityMethod { analytic, green_kubo, empirical };

inline std::string to_string(DiffusivityMethod m) {
  switch (m) {
    case DiffusivityMethod::analytic: return "analytic";
    case DiffusivityMethod::green_kubo: return "green-kubo";
    case DiffusivityMethod::empirical: return "empirical";
  }
  return "?";
}

/// Covariance of the limiting Gaussian of tau_N / sqrt(N), its density at
/// zero g(0), and the scalar varsigma_1 (d = 1 only).
struct DiffusivityEstimate {
  int dimension = 1;
  std::array<double, 4> covariance{};  // row-major 2x2; only [0] used for d = 1
  double varsigma1 = 0.0;
  double g0 = 0.0;
  double standard_error = 0.0;  // of covariance[0]
  DiffusivityMethod method = DiffusivityMethod::analytic;

  double determinant() const {
    return dimension == 1 ? covariance[0]
                          : covariance[0] * covariance[3] - covariance[1] * covariance[2];
  }

  /// Limiting Gaussian density g(z).
  double density(std::array<double, 2> z) const {
    if (dimension == 1) {
      return std::exp(-0.5 * z[0] * z[0] / covariance[0]) / std::sqrt(2.0 * std::numbers::pi * covariance[0]);
    }
    const double det = determinant();
    const double a = covariance[3] / det, b = -covariance[1] / det, d = covariance[0] / det;
    const double q = a * z[0] * z[0] + 2.0 * b * z[0] * z[1] + d * z[1] * z[1];
    return std::exp(-0.5 * q) / (2.0 * std::numbers::pi * std::sqrt(det));
  }
};

namespace detail {

inline DiffusivityEstimate finish_estimate(int d, std::array<double, 4> cov, double se,
                                           DiffusivityMethod method) {
  DiffusivityEstimate e;
  e.dimension = d;
  e.covariance = cov;
  e.standard_error = se;
  e.method = method;
  const double det = e.determinant();
  const bool pd = d == 1 ? cov[0] > 0.0 : (cov[0] > 0.0 && det > 0.0);
  if (!pd || !std::isfinite(det)) {
    throw std::runtime_error("estimate_diffusivity: degenerate covariance");
  }
  e.varsigma1 = std::sqrt(cov[0]);
  e.g0 = std::pow(2.0 * std::numbers::pi, -0.5 * d) / std::sqrt(det);
  return e;
}

}  // namespace detail

/// Empirical Var(tau_N) / N over independent orbits, with standard error.
inline DiffusivityEstimate empirical_diffusivity(const BaseSystem& system, std::size_t trials,
                                                 std::size_t N, Seed seed) {
  if (trials < 100) throw std::invalid_argument("empirical_diffusivity: trials must be >= 100");
  if (N < 1) throw std::invalid_argument("empirical_diffusivity: N must be >= 1");
  std::array<double, 3> sum{}, sum_sq{};  // xx, xy, yy
  for (std::size_t i = 0; i < trials; ++i) {
    const CocycleTrajectory traj = simulate_cocycle(system, mix(seed, i), N + 1);
    const Site end = traj.points.back();
    const std::array<double, 3> v{static_cast<double>(end.x * end.x) / N,
                                  static_cast<double>(end.x * end.y) / N,
                                  static_cast<double>(end.y * end.y) / N};
    for (int j = 0; j < 3; ++j) {
      sum[j] += v[j];
      sum_sq[j] += v[j] * v[j];
    }
  }
  const double t = static_cast<double>(trials);
  std::array<double, 3> mean{};
  for (int j = 0; j < 3; ++j) mean[j] = sum[j] / t;
  const double var0 = std::max(0.0, sum_sq[0] / t - mean[0] * mean[0]);
  const double se = std::sqrt(var0 / (t - 1.0));
  return detail::finish_estimate(system.dimension(), {mean[0], mean[1], mean[1], mean[2]}, se,
                                 DiffusivityMethod::empirical);
}

/// Diffusivity of the cocycle. Walks use the exact step covariance; the
/// doubling map uses the Green-Kubo sum C(0) + 2 sum_{k=1}^{K} C(k),
/// C(k) = mu(tau * tau o f^k), estimated by time averages along `trials`
/// orbits of length N, with K = 32 lags.
inline DiffusivityEstimate estimate_diffusivity(const BaseSystem& system, std::size_t trials,
                                                std::size_t N, Seed seed) {
  if (trials < 100) throw std::invalid_argument("estimate_diffusivity: trials must be >= 100");
  if (system.is_walk()) {
    const double v = system.walk_coordinate_variance();
    const int d = system.dimension();
    return detail::finish_estimate(d, {v, 0.0, 0.0, d == 2 ? v : 0.0}, 0.0,
                                   DiffusivityMethod::analytic);
  }
  constexpr std::size_t kLags = 32;
  if (N < 2) throw std::invalid_argument("estimate_diffusivity: N must be >= 2");
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < trials; ++i) {
    const CocycleTrajectory traj = simulate_cocycle(system, mix(seed, i), N + kLags);
    std::vector<double> tau(traj.size());
    for (std::size_t n = 0; n < traj.size(); ++n) tau[n] = system.step(traj.symbols[n]).x;
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      double tail = 0.0;
      for (std::size_t k = 1; k <= kLags; ++k) tail += tau[n + k];
      acc += tau[n] * (tau[n] + 2.0 * tail);
    }
    const double g = acc / static_cast<double>(N);
    sum += g;
    sum_sq += g * g;
  }
  const double t = static_cast<double>(trials);
  const double mean = sum / t;
  const double se = std::sqrt(std::max(0.0, sum_sq / t - mean * mean) / (t - 1.0));
  return detail::finish_estimate(1, {mean, 0.0, 0.0, 0.0}, se, DiffusivityMethod::green_kubo);
}

/// A bounded function A on the base, evaluated at base symbols, together
/// with its exact mean mu(A).
class BaseObservable {
 public:
  static BaseObservable constant(double c) {
    BaseObservable a;
    a.kind_ = Kind::constant;
    a.code_values_.fill(c);
    a.mean_ = c;
    return a;
  }

  /// A(x) = fn(v_0), a function of the current walk step.
  static BaseObservable of_step(const BaseSystem& system, const std::function<double(Site)>& fn) {
    if (!system.is_walk()) throw InvalidSpec("of_step observables need a walk base");
    BaseObservable a;
    a.kind_ = Kind::walk_step;
    a.mean_ = 0.0;
    for (int code = 0; code < system.step_codes(); ++code) {
      a.code_values_[static_cast<std::size_t>(code)] = fn(BaseSystem::step_of_code(static_cast<std::uint64_t>(code)));
      a.mean_ += system.code_probability(static_cast<std::uint64_t>(code)) * a.code_values_[static_cast<std::size_t>(code)];
    }
    return a;
  }

  /// Indicator of [lo, hi) for the doubling map.
  static BaseObservable interval_indicator(double lo, double hi) {
    if (!(0.0 <= lo && lo < hi && hi <= 1.0)) throw InvalidSpec("interval must satisfy 0 <= lo < hi <= 1");
    BaseObservable a;
    a.kind_ = Kind::interval;
    a.lo_ = StepFunction::to_word(lo);
    a.hi_ = hi >= 1.0 ? 0 : StepFunction::to_word(hi);
    a.full_top_ = hi >= 1.0;
    a.mean_ = hi - lo;
    return a;
  }

  double operator()(std::uint64_t symbol) const {
    switch (kind_) {
      case Kind::constant: return code_values_[0];
      case Kind::walk_step: return code_values_[symbol];
      case Kind::interval: return (symbol >= lo_ && (full_top_ || symbol < hi_)) ? 1.0 : 0.0;
    }
    return 0.0;
  }

  double mean() const { return mean_; }
  bool is_constant() const { return kind_ == Kind::constant; }
  bool depends_on_walk_step() const { return kind_ == Kind::walk_step; }
  bool is_interval() const { return kind_ == Kind::interval; }
  double code_value(std::uint64_t code) const { return code_values_[code]; }

 private:
  enum class Kind { constant, walk_step, interval };
  Kind kind_ = Kind::constant;
  std::array<double, 5> code_values_{};
  std::uint64_t lo_ = 0, hi_ = 0;
  bool full_top_ = false;
  double mean_ = 0.0;
};

/// Axis-aligned half-open box [lower, upper) in R^d.
struct Box {
  std::array<double, 2> lower{-0.5, -0.5};
  std::array<double, 2> upper{0.5, 0.5};

  static Box unit(std::array<double, 2> center) {
    return {{center[0] - 0.5, center[1] - 0.5}, {center[0] + 0.5, center[1] + 0.5}};
  }

  double volume(int d) const {
    double v = upper[0] - lower[0];
    if (d == 2) v *= upper[1] - lower[1];
    return v;
  }

  bool contains(Site s, std::array<double, 2> shift, int d) const {
    const double x = static_cast<double>(s.x) - shift[0];
    if (!(x >= lower[0] && x < upper[0])) return false;
    if (d == 1) return true;
    const double y = static_cast<double>(s.y) - shift[1];
    return y >= lower[1] && y < upper[1];
  }
};

/// Exact law of tau_n for a walk: probabilities on [-n, n]^d, row-major,
/// index (x + n) + (2n + 1) (y + n).
inline std::vector<double> walk_distribution(const BaseSystem& system, std::size_t n) {
  if (!system.is_walk()) throw std::invalid_argument("walk_distribution: walk bases only");
  const int d = system.dimension();
  const auto width = static_cast<std::int64_t>(2 * n + 1);
  const std::int64_t rows = d == 2 ? width : 1;
  const auto c = static_cast<std::int64_t>(n);
  std::vector<double> cur(static_cast<std::size_t>(width * rows), 0.0), next(cur.size());
  cur[static_cast<std::size_t>(c + (d == 2 ? c * width : 0))] = 1.0;
  for (std::size_t step = 0; step < n; ++step) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::int64_t y = 0; y < rows; ++y) {
      for (std::int64_t x = 0; x < width; ++x) {
        const double p = cur[static_cast<std::size_t>(x + y * width)];
        if (p == 0.0) continue;
        for (int code = 0; code < system.step_codes(); ++code) {
          const Site s = BaseSystem::step_of_code(static_cast<std::uint64_t>(code));
          const std::int64_t nx = x + s.x, ny = y + s.y;
          if (nx < 0 || nx >= width || ny < 0 || ny >= rows) continue;
          next[static_cast<std::size_t>(nx + ny * width)] += p * system.code_probability(static_cast<std::uint64_t>(code));
        }
      }
    }
    std::swap(cur, next);
  }
  return cur;
}

struct MlltRow {
  std::int64_t n = 0;
  double scaled_estimate = 0.0;  // n^{d/2} * Monte Carlo estimate
  double scaled_standard_error = 0.0;
  double scaled_exact = std::numeric_limits<double>::quiet_NaN();  // NaN when unavailable
  double target = 0.0;           // g(z) mu(A0) mu(A1) Vol(C)
  bool low_precision = false;
};

struct MlltTable {
  std::vector<MlltRow> rows;
  double target = 0.0;
  bool warning = false;  // some row has too few hits for its requested precision
};

/// Tabulates n^{d/2} mu(A0 * A1 o f^n * 1_C(tau_n - z sqrt(n))) against
/// g(z) mu(A0) mu(A1) Vol(C). The Monte Carlo column uses `trials` orbits;
/// for walks an exact column is added (d = 1 for any n, d = 2 for n <= 64).
inline MlltTable mllt_diagnostic(const BaseSystem& system, const BaseObservable& a0,
                                 const BaseObservable& a1, const Box& cube,
                                 std::array<double, 2> z, std::span<const std::int64_t> n_grid,
                                 std::size_t trials, Seed seed) {
  const int d = system.dimension();
  if (!(cube.volume(d) > 0.0)) throw std::invalid_argument("mllt_diagnostic: cube must have positive volume");
  if (n_grid.empty() || n_grid.front() < 1) throw std::invalid_argument("mllt_diagnostic: n_grid must be positive");
  for (std::size_t i = 1; i < n_grid.size(); ++i) {
    if (n_grid[i] <= n_grid[i - 1]) throw std::invalid_argument("mllt_diagnostic: n_grid must increase");
  }
  if (trials < 1) throw std::invalid_argument("mllt_diagnostic: trials must be >= 1");

  const DiffusivityEstimate diff = estimate_diffusivity(system, 100, 4096, mix(seed, 0xd1f));
  MlltTable table;
  table.target = diff.density(z) * a0.mean() * a1.mean() * cube.volume(d);

  const auto n_max = static_cast<std::size_t>(n_grid.back());
  std::vector<double> sum(n_grid.size(), 0.0), sum_sq(n_grid.size(), 0.0);
  std::vector<std::size_t> hits(n_grid.size(), 0);
  for (std::size_t t = 0; t < trials; ++t) {
    const CocycleTrajectory traj = simulate_cocycle(system, mix(seed, t), n_max + 1);
    const double w0 = a0(traj.symbols[0]);
    for (std::size_t g = 0; g < n_grid.size(); ++g) {
      const auto n = static_cast<std::size_t>(n_grid[g]);
      const double rn = std::sqrt(static_cast<double>(n));
      if (!cube.contains(traj.points[n], {z[0] * rn, z[1] * rn}, d)) continue;
      const double v = w0 * a1(traj.symbols[n]);
      sum[g] += v;
      sum_sq[g] += v * v;
      ++hits[g];
    }
  }

  for (std::size_t g = 0; g < n_grid.size(); ++g) {
    MlltRow row;
    row.n = n_grid[g];
    const double scale = std::pow(static_cast<double>(row.n), 0.5 * d);
    const double tt = static_cast<double>(trials);
    const double mean = sum[g] / tt;
    const double var = std::max(0.0, sum_sq[g] / tt - mean * mean);
    row.scaled_estimate = scale * mean;
    row.scaled_standard_error = scale * std::sqrt(var / tt);
    row.target = table.target;
    row.low_precision = hits[g] < 100;
    table.warning = table.warning || row.low_precision;

    const bool exact_ok = system.is_walk() && !a0.is_interval() && !a1.is_interval() &&
                          (d == 1 || row.n <= 64);
    if (exact_ok) {
      // tau_n = v_0 + tau'_{n-1}; v_n is independent of tau_n.
      const auto m = static_cast<std::size_t>(row.n - 1);
      const std::vector<double> law = walk_distribution(system, m);
      const auto width = static_cast<std::int64_t>(2 * m + 1);
      const double rn = std::sqrt(static_cast<double>(row.n));
      const std::array<double, 2> shift{z[0] * rn, z[1] * rn};
      long double acc = 0.0L;
      for (int code = 0; code < system.step_codes(); ++code) {
        const Site first = BaseSystem::step_of_code(static_cast<std::uint64_t>(code));
        const double w = system.code_probability(static_cast<std::uint64_t>(code)) * a0.code_value(static_cast<std::uint64_t>(code));
        if (w == 0.0) continue;
        const std::int64_t rows = d == 2 ? width : 1;
        for (std::int64_t y = 0; y < rows; ++y) {
          for (std::int64_t x = 0; x < width; ++x) {
            const double p = law[static_cast<std::size_t>(x + y * width)];
            if (p == 0.0) continue;
            const Site at = first + Site{x - static_cast<std::int64_t>(m), d == 2 ? y - static_cast<std::int64_t>(m) : 0};
            if (cube.contains(at, shift, d)) acc += static_cast<long double>(w) * p;
          }
        }
      }
      row.scaled_exact = scale * static_cast<double>(acc) * a1.mean();
    }
    table.rows.push_back(row);
  }
  return table;
}

/// Anticoncentration envelope K * prod (n_j - n_{j-1})^{-d/2} *
/// Theta(max_j |c_j - c_{j-1}| / sqrt(n_j - n_{j-1})), Theta(r) = K' exp(-r^2/8).
struct AnticoncentrationBound {
  double K = 2.0;
  double K_prime = 1.0;
  double rate = 1.0 / 8.0;

  double theta(double r) const { return K_prime * std::exp(-rate * r * r); }

  double operator()(int d, std::span<const std::int64_t> times,
                    std::span<const std::array<double, 2>> centers) const {
    double prod = 1.0, r_max = 0.0;
    std::int64_t prev_t = 0;
    std::array<double, 2> prev_c{0.0, 0.0};
    for (std::size_t j = 0; j < times.size(); ++j) {
      const auto gap = static_cast<double>(times[j] - prev_t);
      prod *= std::pow(gap, -0.5 * d);
      const double dx = centers[j][0] - prev_c[0];
      const double dy = d == 2 ? centers[j][1] - prev_c[1] : 0.0;
      r_max = std::max(r_max, std::sqrt(dx * dx + dy * dy) / std::sqrt(gap));
      prev_t = times[j];
      prev_c = centers[j];
    }
    return K * prod * theta(r_max);
  }
};

struct AnticoncentrationResult {
  double estimate = 0.0;
  double standard_error = 0.0;
  double bound = 0.0;
  bool violation = false;  // estimate exceeds bound by more than 3 standard errors
};

/// Estimates mu(tau_{n_j} in C_j for all j) for unit cubes C_j centred at
/// c_j and compares with the envelope.
inline AnticoncentrationResult anticoncentration_diagnostic(
    const BaseSystem& system, std::span<const std::int64_t> times,
    std::span<const std::array<double, 2>> centers, std::size_t trials, Seed seed,
    const AnticoncentrationBound& envelope = {}) {
  if (times.empty() || times.size() != centers.size()) {
    throw std::invalid_argument("anticoncentration_diagnostic: need one centre per time");
  }
  if (times.front() < 1) throw std::invalid_argument("anticoncentration_diagnostic: times must be >= 1");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (times[i] <= times[i - 1]) throw std::invalid_argument("anticoncentration_diagnostic: times must increase");
  }
  if (trials < 1) throw std::invalid_argument("anticoncentration_diagnostic: trials must be >= 1");
  const int d = system.dimension();
  const auto n_max = static_cast<std::size_t>(times.back());
  std::size_t hits = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const CocycleTrajectory traj = simulate_cocycle(system, mix(seed, t), n_max + 1);
    bool all = true;
    for (std::size_t j = 0; j < times.size() && all; ++j) {
      all = Box::unit(centers[j]).contains(traj.points[static_cast<std::size_t>(times[j])], {0.0, 0.0}, d);
    }
    hits += all ? 1 : 0;
  }
  AnticoncentrationResult r;
  const double tt = static_cast<double>(trials);
  r.estimate = static_cast<double>(hits) / tt;
  r.standard_error = std::sqrt(r.estimate * (1.0 - r.estimate) / tt);
  r.bound = envelope(d, times, centers);
  r.violation = r.estimate > r.bound + 3.0 * r.standard_error;
  return r;
}

}  // namespace rwrs
