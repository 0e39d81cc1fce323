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

// Acceptance run: one PASS/FAIL line per criterion, details indented below.
// Usage: acceptance [criterion ...]   (default: all of 1..8)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "rwrs/experiment.hpp"

namespace {

using namespace rwrs;

struct Check {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
  bool informational = false;
};

struct Outcome {
  std::vector<Check> checks;
  std::vector<std::string> notes;

  void add(std::string name, double value, double threshold, bool informational = false) {
    checks.push_back({std::move(name), value, threshold, value <= threshold, informational});
  }
  void add_report(const TestReport& t, bool informational = false) {
    checks.push_back({t.name, t.value, t.threshold, t.pass, informational});
  }
  void note(const std::string& s) { notes.push_back(s); }
  bool passed() const {
    for (const auto& c : checks) {
      if (!c.pass && !c.informational) return false;
    }
    return !checks.empty();
  }
};

constexpr Seed kSeed = 20260101;
const unsigned kThreads = default_threads();

const TestReport& find_test(const ExperimentResult& r, const std::string& prefix) {
  for (const auto& t : r.tests) {
    if (t.name.rfind(prefix, 0) == 0) return t;
  }
  throw std::runtime_error("missing test '" + prefix + "' in " + r.experiment);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ExperimentResult run_config(const Json& j) { return run_experiment(parse_config(j), kThreads); }

Json d1_config(const std::string& experiment, const Json& base) {
  return Json{{"version", 1},
              {"experiment", experiment},
              {"seed", kSeed},
              {"base", base},
              {"scenery", {{"kind", "iid"}, {"marginal", "rademacher"}}},
              {"N_grid", {1024, 2048, 4096, 8192, 16384, 32768, 65536}},
              {"trials", 10000},
              {"brownian", {{"steps", 10000}, {"bin_width", 0.02}, {"samples", 10000}}}};
}

// 1. Constants.
Outcome criterion_constants() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const double closed = 4.0 * std::sqrt(2.0) / (3.0 * std::sqrt(std::numbers::pi));
  o.add("j1_closed_form vs 4 sqrt2 / (3 sqrt pi)", std::abs(j1_closed_form() - closed), 1e-12);
  o.add("quadrature vs J1", std::abs(j1_quadrature() - closed), 1e-6);
  for (int k = 1; k <= 3; ++k) {
    const SimplexCheck s = simplex_integral_check(k, 1000000, mix(kSeed, 0x51 + k), kThreads);
    const double exact = std::pow(std::numbers::pi, k) / std::tgamma(k + 1.0);
    o.add("simplex k=" + std::to_string(k) + " relative error (1e6 samples)", std::abs(s.estimate.value / exact - 1.0), 0.005);
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.add("runtime seconds", wall, 60.0);
  return o;
}

// 2. Moment consistency against the Brownian local-time oracle.
Outcome criterion_moments() {
  Outcome o;
  const MonteCarloEstimate j1 = jk_monte_carlo(1, 100000, mix(kSeed, 0x21), kThreads);
  const MonteCarloEstimate j2 = jk_monte_carlo(2, 100000, mix(kSeed, 0x22), kThreads);
  o.add("jk(1) vs J1 (sigmas)", std::abs(j1.value - j1_closed_form()) / j1.standard_error, 3.0);

  const KestenSpitzerSampler sampler(10000, 0.02, mix(kSeed, 0x23));
  const std::vector<double> L = kesten_spitzer_sample(sampler, 100000, kThreads);
  double s2 = 0.0, s4 = 0.0, s8 = 0.0;
  for (double l : L) {
    const double q = l * l;
    s2 += q;
    s4 += q * q;
    s8 += q * q * q * q;
  }
  const double n = static_cast<double>(L.size());
  const double m2 = s2 / n, m4 = s4 / n;
  const double se4 = std::sqrt((s8 / n - m4 * m4) / (n - 1.0));
  o.add("jk(2) vs oracle E[L^4] (combined sigmas)", std::abs(j2.value - m4) / std::hypot(j2.standard_error, se4), 3.0);
  o.add("sampler E[L^2] vs J1 (relative)", std::abs(m2 / j1_closed_form() - 1.0), 0.02);
  o.note("jk(2) = " + fmt("%.5f", j2.value) + " +- " + fmt("%.5f", j2.standard_error) + ", oracle E[L^4] = " +
         fmt("%.5f", m4) + " +- " + fmt("%.5f", se4) + ", E[L^2] = " + fmt("%.5f", m2));
  return o;
}

// Shared d = 1 lazy-walk run for criteria 3 and 6.
const ExperimentResult& lazy_d1_run() {
  static const ExperimentResult r =
      run_config(d1_config("d1-kesten-spitzer", {{"kind", "lazy-walk-Z1"}, {"hold", "1/3"}}));
  return r;
}

// 3. d = 1 Kesten-Spitzer law, lazy walk and doubling map.
Outcome criterion_kesten_spitzer() {
  Outcome o;
  const ExperimentResult& lazy = lazy_d1_run();
  o.add_report(find_test(lazy, "ks-two-sample"));
  o.checks.back().name = "lazy walk: " + o.checks.back().name;
  o.add_report(find_test(lazy, "scaling-slope"));
  o.note("scaling fit: " + lazy.tables["scaling_fit"].dump());

  const ExperimentResult dbl = run_config(d1_config("d1-kesten-spitzer", {{"kind", "doubling-map"}, {"cocycle", "thirds"}}));
  o.add_report(find_test(dbl, "ks-two-sample"));
  o.checks.back().name = "doubling map (thirds cocycle): " + o.checks.back().name;
  o.note("doubling-map Sigma used: " + fmt("%.5f", std::sqrt(dbl.constants["Lambda"]["value"].get<double>())));
  return o;
}

// 4. Quenched variance law with the enumeration-calibrated Lambda.
Outcome criterion_variance_law() {
  Outcome o;
  const ExperimentResult r = run_config(d1_config("variance-law", {{"kind", "lazy-walk-Z1"}, {"hold", "1/3"}}));
  o.add_report(find_test(r, "ks-two-sample"));
  o.add_report(find_test(r, "lambda-calibration"));
  o.note("Lambda formula " + fmt("%.6f", r.constants["Lambda"]["value"].get<double>()) + ", calibrated " +
         fmt("%.6f", r.constants["Lambda_used"].get<double>()));
  return o;
}

// 5. d = 2 central limit theorem.
Outcome criterion_d2() {
  Outcome o;
  std::vector<std::int64_t> grid;
  for (std::int64_t n = 1024; n <= (1 << 18); n *= 2) grid.push_back(n);
  const Json j{{"version", 1},
               {"experiment", "d2-clt"},
               {"seed", kSeed},
               {"base", {{"kind", "lazy-walk-Z2"}, {"hold", "1/3"}}},
               {"scenery", {{"kind", "iid"}, {"marginal", "rademacher"}}},
               {"N_grid", grid},
               {"trials", 5000}};
  const ExperimentResult r = run_config(j);
  o.add_report(find_test(r, "ks S_N"));
  o.add_report(find_test(r, "variance-growth flatness"));
  o.note("Sigma^2 = " + fmt("%.6f", r.constants["Sigma2"]["value"].get<double>()) + "; " + r.tables["variance_growth"].dump());
  return o;
}

// 6. Joint convergence of (V_N, S_N / sqrt(V_N)).
Outcome criterion_joint() {
  Outcome o;
  const TestReport& t = find_test(lazy_d1_run(), "joint-independence");
  o.add_report(t);
  for (const auto& c : t.components) o.add_report(c);
  return o;
}

// Exact P(tau_n = 0) for the lazy walk on Z by enumerating all 3^n step words.
double enumerated_return_probability(int n) {
  std::int64_t words = 1;
  for (int i = 0; i < n; ++i) words *= 3;
  std::int64_t hits = 0;
  for (std::int64_t w = 0; w < words; ++w) {
    std::int64_t x = 0, v = w;
    for (int i = 0; i < n; ++i, v /= 3) x += (v % 3 == 1) - (v % 3 == 2);
    hits += x == 0;
  }
  return static_cast<double>(hits) / static_cast<double>(words);
}

// 7. Hypothesis diagnostics.
Outcome criterion_diagnostics() {
  Outcome o;
  const BaseSystem walk = BaseSystem::lazy_walk(1);
  std::vector<std::int64_t> small;
  for (std::int64_t n = 1; n <= 12; ++n) small.push_back(n);
  const BaseObservable one = BaseObservable::constant(1.0);
  const MlltTable exact = mllt_diagnostic(walk, one, one, Box{}, {0.0, 0.0}, small, 1000, mix(kSeed, 0x71));
  double worst = 0.0;
  for (const auto& row : exact.rows) {
    const double oracle = std::sqrt(static_cast<double>(row.n)) * enumerated_return_probability(static_cast<int>(row.n));
    worst = std::max(worst, std::abs(row.scaled_exact - oracle));
  }
  o.add("mllt exact column vs 3^n enumeration, n <= 12 (max abs diff)", worst, 1e-12);

  const Json j{{"version", 1},
               {"experiment", "diagnostics"},
               {"seed", kSeed},
               {"base", {{"kind", "lazy-walk-Z1"}, {"hold", "1/3"}}},
               {"scenery", {{"kind", "iid"}, {"marginal", "rademacher"}}}};
  const ExperimentResult r = run_config(j);
  o.add_report(find_test(r, "mllt monte-carlo vs exact"));
  o.add_report(find_test(r, "mllt exact error non-monotone steps"));
  o.add_report(find_test(r, "anticoncentration violations"));
  for (const auto& t : r.tests) {
    if (t.name.rfind("bg-condition-b", 0) != 0) continue;
    const bool info = std::find(r.informational.begin(), r.informational.end(), t.name) != r.informational.end();
    o.add_report(t, info);
  }
  o.note("mllt: " + r.tables["mllt"].back().dump());

  // The same condition for the d = 2 measures, reported only.
  Json j2 = j;
  j2["base"] = {{"kind", "lazy-walk-Z2"}, {"hold", "1/3"}};
  j2["diagnostics"] = {{"mllt_trials", 1000}, {"mllt_n_max", 64}, {"anticoncentration_configs", 10},
                       {"covariance_trials", 1000}, {"covariance_k_grid", {32, 64, 128, 256, 512}}};
  const ExperimentResult r2 = run_config(j2);
  for (const auto& t : r2.tests) {
    if (t.name.rfind("bg-condition-b", 0) != 0) continue;
    TestReport copy = t;
    copy.name = "d=2 " + t.name;
    o.add_report(copy, true);
  }
  return o;
}

// 8. Oracle equivalence.
Outcome criterion_oracles() {
  Outcome o;
  Engine eng(mix(kSeed, 0x81));
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * to_unit(eng()); };
  double worst = 0.0;
  for (int c = 0; c < 20; ++c) {
    const int d = 1 + c % 2;
    SceneryModel m;
    m.dimension = d;
    m.variance = uniform(0.5, 2.0);
    if (c % 4 < 2) {
      m.kind = SceneryKind::iid;
      m.marginal = (c / 4) % 2 ? Marginal::gaussian : Marginal::rademacher;
    } else {
      m.kind = SceneryKind::moving_average;
      m.marginal = Marginal::gaussian;
      m.decay = uniform(0.3, 1.0);
      m.radius = d == 1 ? 4 + static_cast<int>(eng() % 29) : 2 + static_cast<int>(eng() % 5);
    }
    const auto N = static_cast<std::size_t>(16 + eng() % 497);
    const Rational hold{static_cast<std::int64_t>(eng() % 3), 4};
    const CocycleTrajectory traj = simulate_cocycle(BaseSystem::lazy_walk(d, hold), mix(kSeed, 0x8100 + c), N);
    const QuenchedVariance closed = quenched_variance_closed(traj, m);
    const QuenchedVariance mc = quenched_variance_mc(traj, m, 40000, mix(kSeed, 0x8200 + c));
    worst = std::max(worst, std::abs(closed.value - mc.value) / mc.standard_error);
  }
  o.add("closed vs Monte Carlo quenched variance, 20 cases (max sigmas)", worst, 3.0);

  int mismatches = 0;
  for (const Rational hold : {Rational{1, 3}, Rational{0, 1}}) {
    const BaseSystem w = BaseSystem::lazy_walk(1, hold);
    for (std::size_t N = 1; N <= 10; ++N) {
      const ExactExpectation a = expected_self_intersection(w, N);
      const ExactExpectation b = enumerate_self_intersection(w, N);
      if (a.numerator * b.denominator != b.numerator * a.denominator) ++mismatches;
    }
  }
  o.add("exhaustive E[V_N] vs closed-form expectation, N <= 10 (mismatches)", mismatches, 0.0);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria{
      {1, {"constants suite", criterion_constants}},
      {2, {"moment consistency", criterion_moments}},
      {3, {"d=1 Kesten-Spitzer law", criterion_kesten_spitzer}},
      {4, {"quenched variance law", criterion_variance_law}},
      {5, {"d=2 central limit theorem", criterion_d2}},
      {6, {"joint convergence", criterion_joint}},
      {7, {"hypothesis diagnostics", criterion_diagnostics}},
      {8, {"oracle equivalence", criterion_oracles}},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  if (selected.empty()) {
    for (const auto& [id, _] : criteria) selected.insert(id);
  }

  bool all = true;
  for (int id : selected) {
    const auto it = criteria.find(id);
    if (it == criteria.end()) {
      std::fprintf(stderr, "unknown criterion %d\n", id);
      return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    std::string error;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      error = e.what();
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = error.empty() && o.passed();
    all = all && pass;
    std::printf("%s criterion %d: %s (%.1f s)\n", pass ? "PASS" : "FAIL", id, it->second.first.c_str(), wall);
    if (!error.empty()) std::printf("    error: %s\n", error.c_str());
    for (const auto& c : o.checks) {
      std::printf("    [%s] %s: value=%.6g threshold=%.6g%s\n", c.pass ? "ok" : "no", c.name.c_str(), c.value,
                  c.threshold, c.informational ? " (informational)" : "");
    }
    for (const auto& n : o.notes) std::printf("    note: %s\n", n.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
