#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "setgp/errors.hpp"
#include "setgp/gp.hpp"
#include "setgp/kernels.hpp"

namespace setgp {

struct Bounds {
  double low = 0.0;
  double high = 0.0;
};

/// Search budget and box for the range parameters. All search happens in
/// log(theta) coordinates.
struct FitConfig {
  Bounds theta_x;
  Bounds theta_h;
  int population = 40;
  int generations = 25;
  int refinement_steps = 50;
  std::uint64_t seed = 0;
  JitterPolicy jitter;
  /// Optional (theta_h, theta_x) seeded into the initial population.
  std::optional<std::array<double, 2>> warm_start;

  /// theta_x in [1e-2 sqrt(d), 2 sqrt(d)]; theta_h in [1e-2 sqrt(2), sqrt(2)],
  /// sqrt(2) being the largest possible embedding distance.
  static FitConfig defaults(Eigen::Index dimension) {
    FitConfig c;
    const double sd = std::sqrt(static_cast<double>(dimension));
    c.theta_x = {1e-2 * sd, 2.0 * sd};
    c.theta_h = {1e-2 * std::numbers::sqrt2, std::numbers::sqrt2};
    return c;
  }
};

struct TraceEntry {
  int generation = 0;
  double best_nll = 0.0;
};

struct FitReport {
  double best_theta_h = 0.0;  // NaN for the double sum family (not a parameter there)
  double best_theta_x = 0.0;
  double best_sigma2_h = 0.0;
  double best_nll = 0.0;
  double jitter = 0.0;
  long evaluations = 0;
  std::vector<TraceEntry> trace;

  KernelSpec spec(KernelFamily family) const {
    return {family, best_theta_x, family == KernelFamily::DoubleSum ? 1.0 : best_theta_h,
            best_sigma2_h};
  }
};

namespace detail {

class HyperSearch {
 public:
  using Genome = std::array<double, 2>;  // (log theta_h, log theta_x)

  HyperSearch(const SetDataset& data, KernelFamily family, const FitConfig& cfg)
      : data_(data), family_(family), cfg_(cfg), rng_(cfg.seed) {
    check_bounds(cfg.theta_x, "theta_x");
    lo_[1] = std::log(cfg.theta_x.low);
    hi_[1] = std::log(cfg.theta_x.high);
    if (family == KernelFamily::DeepEmbedding) {
      check_bounds(cfg.theta_h, "theta_h");
      lo_[0] = std::log(cfg.theta_h.low);
      hi_[0] = std::log(cfg.theta_h.high);
    }
    for (int k = 0; k < 2; ++k) active_[k] = hi_[k] > lo_[k];
    if (family == KernelFamily::DoubleSum) active_[0] = false;
    if (cfg.population < 4) throw InputError("FitConfig: population must be >= 4");
    if (cfg.generations < 1) throw InputError("FitConfig: generations must be >= 1");
    if (cfg.refinement_steps < 0) throw InputError("FitConfig: refinement_steps must be >= 0");
  }

  FitReport run() {
    if (!active_[0] && !active_[1]) {
      Genome g{lo_[0], lo_[1]};
      consider(g, evaluate(g, false));
      report_.trace.push_back({0, best_f_});
      return finish();
    }

    std::vector<Genome> pop;
    std::vector<double> fit;
    pop.reserve(static_cast<std::size_t>(cfg_.population));
    if (cfg_.warm_start) {
      Genome w{std::log((*cfg_.warm_start)[0]), std::log((*cfg_.warm_start)[1])};
      if (!std::isfinite(w[0])) w[0] = lo_[0];
      pop.push_back(clamp(w));
    }
    while (static_cast<int>(pop.size()) < cfg_.population) pop.push_back(random_genome());
    for (const auto& g : pop) {
      fit.push_back(evaluate(g, false).value);
      consider(g, last_);
    }
    report_.trace.push_back({0, best_f_});

    for (int gen = 1; gen < cfg_.generations; ++gen) {
      std::vector<Genome> next{best_g_};
      std::vector<double> next_fit{best_f_};
      while (static_cast<int>(next.size()) < cfg_.population) {
        const Genome& a = pop[tournament(fit)];
        const Genome& b = pop[tournament(fit)];
        Genome child = mutate(crossover(a, b));
        next_fit.push_back(evaluate(child, false).value);
        consider(child, last_);
        next.push_back(child);
      }
      pop = std::move(next);
      fit = std::move(next_fit);
      report_.trace.push_back({gen, best_f_});
    }

    if (!std::isfinite(best_f_))
      throw ExhaustiveSingularityError(
          "every hyperparameter candidate gave a singular correlation matrix; "
          "use a jitter policy (e.g. bound(a)) for this kernel and data");
    refine();
    return finish();
  }

 private:
  static void check_bounds(const Bounds& b, const char* name) {
    if (!(b.low > 0.0) || !(b.high >= b.low) || !std::isfinite(b.high))
      throw InputError(std::string("FitConfig: invalid bounds for ") + name);
  }

  NllResult evaluate(const Genome& g, bool with_gradient) {
    ++report_.evaluations;
    const double th = std::exp(g[0]);
    const double tx = std::exp(g[1]);
    try {
      last_ = concentrated_nll(data_, family_, th, tx, cfg_.jitter, with_gradient);
      if (!std::isfinite(last_.value)) last_.value = std::numeric_limits<double>::infinity();
    } catch (const NumericalError&) {
      last_ = NllResult{};
      last_.value = std::numeric_limits<double>::infinity();
    }
    return last_;
  }

  void consider(const Genome& g, const NllResult& r) {
    if (r.value < best_f_) {
      best_f_ = r.value;
      best_g_ = g;
      best_r_ = r;
    }
  }

  Genome clamp(Genome g) const {
    for (int k = 0; k < 2; ++k) g[k] = active_[k] ? std::clamp(g[k], lo_[k], hi_[k]) : lo_[k];
    return g;
  }

  Genome random_genome() {
    Genome g{lo_[0], lo_[1]};
    for (int k = 0; k < 2; ++k)
      if (active_[k]) g[k] = std::uniform_real_distribution<double>(lo_[k], hi_[k])(rng_);
    return g;
  }

  std::size_t tournament(const std::vector<double>& fit) {
    std::uniform_int_distribution<std::size_t> pick(0, fit.size() - 1);
    std::size_t best = pick(rng_);
    for (int t = 1; t < 3; ++t) {
      const std::size_t c = pick(rng_);
      if (fit[c] < fit[best]) best = c;
    }
    return best;
  }

  // Blend crossover (BLX-0.5) per active coordinate.
  Genome crossover(const Genome& a, const Genome& b) {
    Genome c = a;
    for (int k = 0; k < 2; ++k) {
      if (!active_[k]) continue;
      const double lo = std::min(a[k], b[k]);
      const double hi = std::max(a[k], b[k]);
      const double ext = 0.5 * (hi - lo);
      c[k] = std::uniform_real_distribution<double>(lo - ext, hi + ext)(rng_);
    }
    return c;
  }

  // Gaussian step in log space, i.e. a log-normal multiplicative mutation.
  Genome mutate(Genome g) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 2; ++k) {
      if (!active_[k]) continue;
      if (u(rng_) < 0.3) g[k] += std::normal_distribution<double>(0.0, 0.1 * (hi_[k] - lo_[k]))(rng_);
      if (g[k] < lo_[k]) g[k] = lo_[k] + (lo_[k] - g[k]);
      if (g[k] > hi_[k]) g[k] = hi_[k] - (g[k] - hi_[k]);
    }
    return clamp(g);
  }

  // Projected descent in log space with an adaptive step; only improving moves
  // are accepted, so the NLL never increases.
  void refine() {
    if (cfg_.refinement_steps == 0) return;
    Genome x = best_g_;
    NllResult fx = evaluate(x, true);
    if (!(fx.value <= best_f_)) return;
    best_r_ = fx;
    double step = 0.1;
    for (int it = 1; it < cfg_.refinement_steps; ++it) {
      Genome dir{0.0, 0.0};
      double norm2 = 0.0;
      for (int k = 0; k < 2; ++k) {
        if (!active_[k]) continue;
        const double gl = std::exp(x[k]) * fx.grad[static_cast<std::size_t>(k)];
        // Drop components that push against an active bound.
        if ((x[k] <= lo_[k] && gl > 0.0) || (x[k] >= hi_[k] && gl < 0.0)) continue;
        dir[k] = -gl;
        norm2 += gl * gl;
      }
      if (!(norm2 > 0.0) || !std::isfinite(norm2)) break;
      const double norm = std::sqrt(norm2);
      Genome cand = x;
      for (int k = 0; k < 2; ++k) cand[k] += step * dir[k] / norm;
      cand = clamp(cand);
      const NllResult fc = evaluate(cand, true);
      if (fc.value < fx.value) {
        x = cand;
        fx = fc;
        step = std::min(step * 1.5, 1.0);
      } else {
        step *= 0.5;
        if (step < 1e-8) break;
      }
    }
    best_g_ = x;
    best_f_ = fx.value;
    best_r_ = fx;
  }

  FitReport finish() {
    if (!std::isfinite(best_f_))
      throw ExhaustiveSingularityError(
          "every hyperparameter candidate gave a singular correlation matrix; "
          "use a jitter policy (e.g. bound(a)) for this kernel and data");
    report_.best_theta_h = family_ == KernelFamily::DoubleSum
                               ? std::numeric_limits<double>::quiet_NaN()
                               : std::exp(best_g_[0]);
    report_.best_theta_x = std::exp(best_g_[1]);
    if (active_[1] == false) report_.best_theta_x = cfg_.theta_x.low;
    if (family_ == KernelFamily::DeepEmbedding && !active_[0]) report_.best_theta_h = cfg_.theta_h.low;
    report_.best_nll = best_f_;
    report_.best_sigma2_h = best_r_.sigma2;
    report_.jitter = best_r_.jitter;
    return report_;
  }

  const SetDataset& data_;
  KernelFamily family_;
  FitConfig cfg_;
  std::mt19937_64 rng_;
  std::array<double, 2> lo_{0.0, 0.0};
  std::array<double, 2> hi_{0.0, 0.0};
  std::array<bool, 2> active_{false, false};
  NllResult last_;
  Genome best_g_{0.0, 0.0};
  double best_f_ = std::numeric_limits<double>::infinity();
  NllResult best_r_;
  FitReport report_;
};

}  // namespace detail

/// Maximum concentrated likelihood search over (theta_h, theta_x): a seeded
/// genetic algorithm (log-uniform start, tournament selection, blend crossover,
/// log-normal mutation, elitism) followed by projected gradient refinement of
/// the best individual. Deterministic for a given seed.
inline FitReport fit_hyperparams(const SetDataset& data, KernelFamily family, const FitConfig& cfg) {
  data.validate(2);
  return detail::HyperSearch(data, family, cfg).run();
}

}  // namespace setgp
