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

// Stationary random sceneries over Z^d generated lazily from a seed.

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <ostream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rwrs/base_dynamics.hpp"
#include "rwrs/lattice.hpp"
#include "rwrs/random.hpp"

namespace rwrs {

enum class SceneryKind { iid, moving_average };
enum class Marginal { rademacher, gaussian };

inline std::string to_string(SceneryKind k) { return k == SceneryKind::iid ? "iid" : "moving-average"; }
inline std::string to_string(Marginal m) { return m == Marginal::rademacher ? "rademacher" : "gaussian"; }

/// Offsets u with |u| <= R (Euclidean) and kernel weights exp(-c |u|).
struct Kernel {
  std::vector<Site> offsets;
  std::vector<double> weights;
  double sum = 0.0;
  double sum_sq = 0.0;
};

struct SceneryModel {
  SceneryKind kind = SceneryKind::iid;
  Marginal marginal = Marginal::rademacher;
  double variance = 1.0;
  double decay = 0.5;   // c
  int radius = 32;      // R_k
  int dimension = 1;

  void validate() const {
    if (!(variance > 0.0) || !std::isfinite(variance)) throw InvalidSpec("scenery variance must be > 0");
    if (dimension != 1 && dimension != 2) throw InvalidSpec("scenery dimension must be 1 or 2");
    if (kind == SceneryKind::moving_average) {
      if (!(decay > 0.0) || !std::isfinite(decay)) throw InvalidSpec("kernel decay rate must be > 0");
      if (radius < 0) throw InvalidSpec("kernel radius must be >= 0");
    }
  }

  Kernel kernel() const {
    Kernel k;
    const int r = kind == SceneryKind::moving_average ? radius : 0;
    const int ry = dimension == 2 ? r : 0;
    for (int x = -r; x <= r; ++x) {
      for (int y = -ry; y <= ry; ++y) {
        const double len = std::sqrt(static_cast<double>(x * x + y * y));
        if (len > r) continue;
        const double w = std::exp(-decay * len);
        k.offsets.push_back({x, y});
        k.weights.push_back(w);
        k.sum += w;
        k.sum_sq += w * w;
      }
    }
    return k;
  }
};

namespace detail {

inline std::uint64_t site_key(Seed seed, Site z) {
  return mix(mix(seed, static_cast<std::uint64_t>(z.x)), static_cast<std::uint64_t>(z.y));
}

/// Unit-variance draw of the given marginal at a lattice site.
inline double unit_draw(Marginal m, Seed seed, Site z) {
  const std::uint64_t h = site_key(seed, z);
  if (m == Marginal::rademacher) return (h >> 63) ? 1.0 : -1.0;
  const double u1 = to_open_unit(h);
  const double u2 = to_unit(splitmix64(h));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace detail

/// The scenery {xi_z}: a pure function of (model, seed, z). Moving-average
/// values are memoized; a field instance belongs to one trial.
class SceneryField {
 public:
  SceneryField(SceneryModel model, Seed seed) : model_(model), seed_(seed) {
    model_.validate();
    sd_ = std::sqrt(model_.variance);
    if (model_.kind == SceneryKind::moving_average) {
      kernel_ = std::make_shared<const Kernel>(model_.kernel());
      scale_ = sd_ / std::sqrt(kernel_->sum_sq);
    }
  }

  double operator()(Site z) {
    if (model_.kind == SceneryKind::iid) return sd_ * detail::unit_draw(model_.marginal, seed_, z);
    const auto it = memo_.find(z);
    if (it != memo_.end()) return it->second;
    double acc = 0.0;
    for (std::size_t i = 0; i < kernel_->offsets.size(); ++i) {
      acc += kernel_->weights[i] * innovation(z + kernel_->offsets[i]);
    }
    const double v = scale_ * acc;
    memo_.emplace(z, v);
    return v;
  }

  /// Underlying iid innovations w(z) of the moving-average field.
  double innovation(Site z) const { return detail::unit_draw(model_.marginal, seed_, z); }

  const SceneryModel& model() const { return model_; }
  Seed seed() const { return seed_; }

 private:
  SceneryModel model_;
  Seed seed_;
  double sd_ = 1.0;
  double scale_ = 1.0;
  std::shared_ptr<const Kernel> kernel_;
  std::unordered_map<Site, double, SiteHash> memo_;
};

inline double scenery_value(SceneryField& field, Site z) { return field(z); }

/// Closed-form rho(z) = E[xi_0 xi_z].
class CorrelationFunction {
 public:
  explicit CorrelationFunction(const SceneryModel& model) : model_(model) {
    model_.validate();
    if (model_.kind == SceneryKind::moving_average) {
      const Kernel k = model_.kernel();
      for (std::size_t i = 0; i < k.offsets.size(); ++i) weight_.emplace(k.offsets[i], k.weights[i]);
      // rho has support within twice the kernel radius; tabulate it once.
      const int r2 = 2 * model_.radius;
      const int ry = model_.dimension == 2 ? r2 : 0;
      for (int x = -r2; x <= r2; ++x) {
        for (int y = -ry; y <= ry; ++y) {
          double acc = 0.0;
          for (std::size_t i = 0; i < k.offsets.size(); ++i) {
            const auto it = weight_.find(k.offsets[i] + Site{x, y});
            if (it != weight_.end()) acc += k.weights[i] * it->second;
          }
          if (acc != 0.0) table_.emplace_back(Site{x, y}, model_.variance * acc / k.sum_sq);
        }
      }
    } else {
      table_.emplace_back(Site{0, 0}, model_.variance);
    }
    for (const auto& [z, v] : table_) lookup_.emplace(z, v);
  }

  double operator()(Site z) const {
    const auto it = lookup_.find(z);
    return it == lookup_.end() ? 0.0 : it->second;
  }

  /// Nonzero (z, rho(z)) pairs.
  const std::vector<std::pair<Site, double>>& support() const { return table_; }

  double sum() const {
    double s = 0.0;
    for (const auto& [z, v] : table_) s += v;
    return s;
  }

 private:
  SceneryModel model_;
  std::unordered_map<Site, double, SiteHash> weight_;
  std::vector<std::pair<Site, double>> table_;
  std::unordered_map<Site, double, SiteHash> lookup_;
};

inline double correlation(const SceneryModel& model, Site z) {
  if (model.kind == SceneryKind::iid) {
    model.validate();
    return z == Site{} ? model.variance : 0.0;
  }
  return CorrelationFunction(model)(z);
}

/// varsigma_2^2 = mu(A)^2 sum_z rho(z).
inline double varsigma2(const SceneryModel& model, double base_observable_mean) {
  model.validate();
  double total = model.variance;
  if (model.kind == SceneryKind::moving_average) {
    const Kernel k = model.kernel();
    total = model.variance * k.sum * k.sum / k.sum_sq;
  }
  return base_observable_mean * base_observable_mean * total;
}

struct CorrelationEstimate {
  double value = 0.0;
  double standard_error = 0.0;
};

/// Monte Carlo rho-hat(z) = mean of xi_0 xi_z over independent fields.
inline CorrelationEstimate empirical_correlation(const SceneryModel& model, Site z,
                                                 std::size_t samples, Seed seed) {
  if (samples < 2) throw std::invalid_argument("empirical_correlation: samples must be >= 2");
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    SceneryField field(model, mix(seed, i));
    const double p = field(Site{}) * field(z);
    sum += p;
    sum_sq += p * p;
  }
  const double n = static_cast<double>(samples);
  const double mean = sum / n;
  return {mean, std::sqrt(std::max(0.0, sum_sq / n - mean * mean) / (n - 1.0))};
}

/// Dumps the field on [lo.x, hi.x] x [lo.y, hi.y] as CSV (x, y, value).
inline void write_field_csv(SceneryField& field, Site lo, Site hi, std::ostream& out) {
  out << "x,y,value\n";
  for (std::int64_t x = lo.x; x <= hi.x; ++x) {
    for (std::int64_t y = lo.y; y <= hi.y; ++y) out << x << ',' << y << ',' << field({x, y}) << '\n';
  }
}

}  // namespace rwrs
