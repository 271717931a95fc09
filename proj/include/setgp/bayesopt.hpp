#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "setgp/errors.hpp"
#include "setgp/gp.hpp"
#include "setgp/hyperfit.hpp"
#include "setgp/kernels.hpp"
#include "setgp/point_set.hpp"

namespace setgp {

/// Finite list of pairwise distinct candidate sets.
class CandidatePool {
 public:
  explicit CandidatePool(std::vector<PointSet> candidates) : candidates_(std::move(candidates)) {
    detail::common_dimension(candidates_);
    std::vector<const PointSet*> sorted;
    sorted.reserve(candidates_.size());
    for (const auto& c : candidates_) sorted.push_back(&c);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return *a < *b; });
    for (std::size_t i = 1; i < sorted.size(); ++i)
      if (*sorted[i] == *sorted[i - 1]) throw InputError("CandidatePool: duplicate candidates");
  }

  static CandidatePool from_subsets(const GroundSet& ground,
                                    const std::vector<std::vector<std::size_t>>& subsets) {
    std::vector<PointSet> sets;
    sets.reserve(subsets.size());
    for (const auto& s : subsets) sets.push_back(ground.subset(s));
    return CandidatePool(std::move(sets));
  }

  std::size_t size() const noexcept { return candidates_.size(); }
  const PointSet& operator[](std::size_t i) const { return candidates_[i]; }
  const std::vector<PointSet>& candidates() const noexcept { return candidates_; }

 private:
  std::vector<PointSet> candidates_;
};

/// Objective value of pool candidate i.
using PoolObjective = std::function<double(std::size_t)>;

struct IterationRecord {
  std::size_t chosen = 0;
  double ei = 0.0;
  double observed = 0.0;
  double best_so_far = 0.0;
};

struct BOTrialRecord {
  std::uint64_t seed = 0;
  std::vector<std::size_t> init_indices;
  std::vector<double> init_values;
  std::vector<IterationRecord> iterations;
  double final_best = 0.0;
  bool found_optimum = false;
  bool aborted = false;
  std::size_t abort_iteration = 0;  // 1-based iteration that failed
  std::string abort_reason;

  /// Best value after the initial design, then after each completed iteration.
  std::vector<double> best_curve() const {
    std::vector<double> c;
    c.reserve(iterations.size() + 1);
    c.push_back(*std::min_element(init_values.begin(), init_values.end()));
    for (const auto& it : iterations) c.push_back(it.best_so_far);
    return c;
  }
};

/// Closed-form expected improvement below `best` (minimization).
inline double expected_improvement(const PredictionResult& pred, double best) {
  const double gap = best - pred.mean;
  if (!(pred.sd > 1e-12)) return std::max(0.0, gap);
  const double z = gap / pred.sd;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return std::max(0.0, gap * cdf + pred.sd * pdf);
}

struct Proposal {
  std::size_t index = 0;
  double ei = 0.0;
};

/// Unevaluated candidate with the largest EI; ties go to the lowest index.
inline Proposal propose(const GPModel& model, const CandidatePool& pool,
                        const std::vector<bool>& evaluated) {
  if (evaluated.size() != pool.size()) throw InputError("propose: evaluated mask size mismatch");
  std::vector<std::size_t> open;
  std::vector<PointSet> sets;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (!evaluated[i]) {
      open.push_back(i);
      sets.push_back(pool[i]);
    }
  if (open.empty()) throw PoolExhaustedError("propose: every candidate has been evaluated");
  const double best = model.responses().minCoeff();
  const auto preds = model.predict(sets);
  Proposal out{open.front(), -std::numeric_limits<double>::infinity()};
  for (std::size_t k = 0; k < open.size(); ++k) {
    const double ei = expected_improvement(preds[k], best);
    if (ei > out.ei) out = {open[k], ei};
  }
  if (!std::isfinite(out.ei)) out.ei = 0.0;
  return out;
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// First k positions of a seeded Fisher-Yates shuffle of [0, n). Prefix-stable:
/// the first j < k entries do not depend on k.
inline std::vector<std::size_t> seeded_draw(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k > n) throw InputError("cannot draw more candidates than the pool holds");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(perm[i], perm[pick(rng)]);
  }
  perm.resize(k);
  return perm;
}

inline double pool_minimum(const CandidatePool& pool, const PoolObjective& objective) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pool.size(); ++i) m = std::min(m, objective(i));
  return m;
}

inline void check_run(const CandidatePool& pool, std::size_t n_init, std::size_t budget) {
  if (n_init < 2 && budget > 0) throw InputError("run: n_init must be >= 2");
  if (n_init < 1) throw InputError("run: n_init must be >= 1");
  if (n_init + budget > pool.size()) throw InputError("run: n_init + budget exceeds pool size");
}

inline BOTrialRecord start_trial(const PoolObjective& objective, const std::vector<std::size_t>& init,
                                 std::uint64_t seed) {
  BOTrialRecord rec;
  rec.seed = seed;
  rec.init_indices = init;
  for (auto i : init) rec.init_values.push_back(objective(i));
  rec.final_best = *std::min_element(rec.init_values.begin(), rec.init_values.end());
  return rec;
}

}  // namespace detail

/// Initial design shared by every method for a given trial seed.
inline std::vector<std::size_t> initial_design(std::size_t pool_size, std::size_t n_init,
                                               std::uint64_t seed) {
  return detail::seeded_draw(pool_size, n_init, seed);
}

/// EI loop over a finite pool. Hyperparameters are re-estimated at every
/// iteration; after the first, the search runs at half population and half
/// generations, warm-started at the previous optimum. A numerical failure
/// ends the trial and is recorded in the returned record.
inline BOTrialRecord run_bo(const CandidatePool& pool, const PoolObjective& objective,
                            std::size_t n_init, std::size_t budget, KernelFamily family,
                            const FitConfig& fit_cfg, std::uint64_t seed,
                            std::optional<double> known_minimum = std::nullopt) {
  detail::check_run(pool, n_init, budget);
  const double target = known_minimum ? *known_minimum : detail::pool_minimum(pool, objective);
  BOTrialRecord rec = detail::start_trial(objective, initial_design(pool.size(), n_init, seed), seed);

  SetDataset data;
  std::vector<bool> evaluated(pool.size(), false);
  for (std::size_t k = 0; k < rec.init_indices.size(); ++k) {
    data.add(pool[rec.init_indices[k]], rec.init_values[k]);
    evaluated[rec.init_indices[k]] = true;
  }

  std::optional<std::array<double, 2>> warm;
  for (std::size_t it = 1; it <= budget; ++it) {
    FitConfig cfg = fit_cfg;
    cfg.seed = detail::mix_seed(fit_cfg.seed ^ seed, it);
    if (it > 1) {
      cfg.population = std::max(4, fit_cfg.population / 2);
      cfg.generations = std::max(1, fit_cfg.generations / 2);
      cfg.warm_start = warm;
    }
    Proposal prop;
    try {
      const FitReport rep = fit_hyperparams(data, family, cfg);
      warm = std::array<double, 2>{rep.best_theta_h, rep.best_theta_x};
      const GPModel model = fit(data, rep.spec(family), cfg.jitter);
      prop = propose(model, pool, evaluated);
    } catch (const NumericalError& e) {
      rec.aborted = true;
      rec.abort_iteration = it;
      rec.abort_reason = e.what();
      break;
    }
    const double y = objective(prop.index);
    evaluated[prop.index] = true;
    data.add(pool[prop.index], y);
    rec.final_best = std::min(rec.final_best, y);
    rec.iterations.push_back({prop.index, prop.ei, y, rec.final_best});
  }
  rec.found_optimum = rec.final_best <= target;
  return rec;
}

/// Uniform sampling without replacement; starts from the same initial design as run_bo.
inline BOTrialRecord run_random(const CandidatePool& pool, const PoolObjective& objective,
                                std::size_t n_init, std::size_t budget, std::uint64_t seed,
                                std::optional<double> known_minimum = std::nullopt) {
  detail::check_run(pool, n_init, budget);
  const double target = known_minimum ? *known_minimum : detail::pool_minimum(pool, objective);
  const auto order = detail::seeded_draw(pool.size(), n_init + budget, seed);
  BOTrialRecord rec = detail::start_trial(
      objective, std::vector<std::size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_init)),
      seed);
  for (std::size_t k = n_init; k < order.size(); ++k) {
    const double y = objective(order[k]);
    rec.final_best = std::min(rec.final_best, y);
    rec.iterations.push_back({order[k], 0.0, y, rec.final_best});
  }
  rec.found_optimum = rec.final_best <= target;
  return rec;
}

enum class Method { EiDeepEmbedding, EiDoubleSum, Random };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::EiDeepEmbedding: return "EI-DE";
    case Method::EiDoubleSum: return "EI-DS";
    case Method::Random: return "RANDOM";
  }
  return "?";
}

struct Campaign {
  const CandidatePool* pool = nullptr;
  PoolObjective objective;
  Method method = Method::EiDeepEmbedding;
  std::size_t n_init = 10;
  std::size_t budget = 40;
  FitConfig fit;
  std::optional<double> known_minimum;
};

struct ReplicationSummary {
  int trials = 0;
  int hits = 0;
  int aborted = 0;
  std::vector<double> median;  // per iteration, index 0 = after the initial design
  std::vector<double> p95;
};

struct Replication {
  std::vector<BOTrialRecord> trials;
  ReplicationSummary summary;
};

/// Percentile with linear interpolation between order statistics.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw InputError("percentile: no values");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline ReplicationSummary summarize(const std::vector<BOTrialRecord>& trials, std::size_t budget) {
  ReplicationSummary s;
  s.trials = static_cast<int>(trials.size());
  std::vector<std::vector<double>> curves;
  for (const auto& t : trials) {
    s.hits += t.found_optimum ? 1 : 0;
    s.aborted += t.aborted ? 1 : 0;
    auto c = t.best_curve();
    c.resize(budget + 1, c.back());  // aborted trials stay flat at their last best
    curves.push_back(std::move(c));
  }
  for (std::size_t it = 0; it <= budget && !curves.empty(); ++it) {
    std::vector<double> col;
    for (const auto& c : curves) col.push_back(c[it]);
    s.median.push_back(percentile(col, 0.5));
    s.p95.push_back(percentile(col, 0.95));
  }
  return s;
}

/// Runs trials t = 0..n_trials-1 with seed base_seed + t on up to `threads`
/// workers. Records are stored by trial index, so output never depends on
/// scheduling.
inline Replication replicate(const Campaign& cfg, int n_trials, std::uint64_t base_seed,
                             int threads = 1) {
  if (n_trials < 1) throw InputError("replicate: n_trials must be >= 1");
  if (!cfg.pool) throw InputError("replicate: no candidate pool");
  detail::check_run(*cfg.pool, cfg.n_init, cfg.budget);
  const double target =
      cfg.known_minimum ? *cfg.known_minimum : detail::pool_minimum(*cfg.pool, cfg.objective);

  Replication out;
  out.trials.resize(static_cast<std::size_t>(n_trials));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_trials));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int t = next++; t < n_trials; t = next++) {
      const auto ut = static_cast<std::size_t>(t);
      const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(t);
      try {
        switch (cfg.method) {
          case Method::Random:
            out.trials[ut] = run_random(*cfg.pool, cfg.objective, cfg.n_init, cfg.budget, seed, target);
            break;
          case Method::EiDeepEmbedding:
            out.trials[ut] = run_bo(*cfg.pool, cfg.objective, cfg.n_init, cfg.budget,
                                    KernelFamily::DeepEmbedding, cfg.fit, seed, target);
            break;
          case Method::EiDoubleSum:
            out.trials[ut] = run_bo(*cfg.pool, cfg.objective, cfg.n_init, cfg.budget,
                                    KernelFamily::DoubleSum, cfg.fit, seed, target);
            break;
        }
      } catch (...) {
        errors[ut] = std::current_exception();
      }
    }
  };
  const int n_workers = std::clamp(threads, 1, n_trials);
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  out.summary = summarize(out.trials, cfg.budget);
  return out;
}

}  // namespace setgp
