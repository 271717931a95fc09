// setgp: command-line front end for set-input GP validation, residual
// diagnostics, BO campaigns and jitter sweeps. Every command writes CSV files
// plus a manifest.json into --out.

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "setgp/setgp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace setgp;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

struct Common {
  std::uint64_t seed = 1;
  std::string out = "setgp_out";
  int threads = 1;
};

struct Source {
  std::string objective = "mean";
  std::string csv;
  std::size_t n = 1000;
  std::size_t p = 10;
  std::size_t ground_size = 15;

  bool from_csv() const { return !csv.empty(); }
  std::string name() const { return from_csv() ? fs::path(csv).stem().string() : objective; }
};

struct Budget {
  int population = 16;
  int generations = 6;
  int refinement = 20;
};

void add_source_options(CLI::App* cmd, Source& src) {
  cmd->add_option("--objective", src.objective, "Synthetic objective")
      ->check(CLI::IsMember({"max", "min", "mean", "combinatorial"}));
  cmd->add_option("--csv", src.csv, "Load the dataset from a CSV file instead");
  cmd->add_option("--n", src.n, "Number of generated sets")->check(CLI::PositiveNumber);
  cmd->add_option("--p", src.p, "Points per generated set (subset size for combinatorial)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--ground-size", src.ground_size, "Ground set size for the combinatorial objective")
      ->check(CLI::PositiveNumber);
}

void add_budget_options(CLI::App* cmd, Budget& b) {
  cmd->add_option("--population", b.population, "Genetic search population");
  cmd->add_option("--generations", b.generations, "Genetic search generations");
  cmd->add_option("--refine", b.refinement, "Gradient refinement steps");
}

json budget_json(const Budget& b) {
  return {{"population", b.population}, {"generations", b.generations}, {"refinement_steps", b.refinement}};
}

json source_json(const Source& s) {
  json j{{"name", s.name()}};
  if (s.from_csv()) {
    j["csv"] = s.csv;
  } else {
    j["objective"] = s.objective;
    j["n"] = s.n;
    j["p"] = s.p;
    if (s.objective == "combinatorial") j["ground_size"] = s.ground_size;
  }
  return j;
}

std::shared_ptr<const CombinatorialProblem> make_problem(const Source& src, std::uint64_t seed) {
  return std::make_shared<CombinatorialProblem>(CombinatorialProblem::random(src.ground_size, src.p, 30, seed));
}

SetObjective make_objective(const Source& src, std::uint64_t seed) {
  if (src.objective == "max") return SetObjective::max();
  if (src.objective == "min") return SetObjective::min();
  if (src.objective == "mean") return SetObjective::mean();
  return SetObjective::combinatorial(make_problem(src, seed));
}

SetDataset load_source(const Source& src, std::uint64_t seed) {
  if (src.from_csv()) return load_csv(src.csv);
  return generate_dataset(make_objective(src, seed), src.n, src.p, seed);
}

KernelFamily parse_family(const std::string& k) {
  if (k == "ds") return KernelFamily::DoubleSum;
  if (k == "de") return KernelFamily::DeepEmbedding;
  throw InputError("unknown kernel '" + k + "'");
}

FitConfig make_fit(Eigen::Index dim, const Budget& b, std::uint64_t seed, std::optional<int> jitter_a) {
  auto cfg = FitConfig::defaults(dim);
  cfg.population = b.population;
  cfg.generations = b.generations;
  cfg.refinement_steps = b.refinement;
  cfg.seed = seed;
  if (jitter_a) cfg.jitter = JitterPolicy::bound(*jitter_a);
  return cfg;
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  return detail::format_double(v);
}

/// Runs body(i) for i in [0, n) on up to `threads` workers; results must be
/// stored by index by the caller.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body) {
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int w = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (w == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < w; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::ofstream open_out(const fs::path& dir, const std::string& name, std::vector<std::string>& written) {
  std::ofstream os(dir / name, std::ios::binary);
  if (!os) throw InputError("cannot write " + (dir / name).string());
  written.push_back(name);
  return os;
}

void write_manifest(const fs::path& dir, const std::string& command, const json& config, const Common& common,
                    const std::vector<std::string>& outputs, double seconds, int argc, char** argv) {
  json args = json::array();
  for (int i = 0; i < argc; ++i) args.push_back(argv[i]);
  json m{{"command", command},
         {"argv", args},
         {"config", config},
         {"seed", common.seed},
         {"threads", common.threads},
         {"library_version", std::to_string(SETGP_VERSION_MAJOR) + "." + std::to_string(SETGP_VERSION_MINOR) +
                                 "." + std::to_string(SETGP_VERSION_PATCH)},
         {"wall_clock_seconds", seconds},
         {"outputs", outputs}};
  std::ofstream os(dir / "manifest.json", std::ios::binary);
  os << m.dump(2) << '\n';
}

// ---------------------------------------------------------------- validate

struct Q2Row {
  std::string kernel;
  double ratio;
  int replication;
  double q2 = 0.0;
  std::string error;
};

struct ValidateOptions {
  Source source;
  std::vector<std::string> kernels{"ds", "de"};
  std::vector<double> ratios{0.8};
  int reps = 5;
  std::optional<int> jitter_a;
  Budget budget;
};

Q2Row validate_one(const SetDataset& data, const std::string& kernel, double ratio, int rep,
                   const ValidateOptions& opt, std::uint64_t seed) {
  Q2Row row{kernel, ratio, rep, 0.0, {}};
  const auto family = parse_family(kernel);
  const auto rep_seed = seed + static_cast<std::uint64_t>(rep);
  const auto [train, test] = split(data, ratio, rep_seed);
  std::optional<int> jitter;
  if (family == KernelFamily::DoubleSum) jitter = opt.jitter_a;
  const auto cfg = make_fit(data.dimension, opt.budget, rep_seed, jitter);
  try {
    const auto rep_fit = fit_hyperparams(train, family, cfg);
    const auto model = fit(train, rep_fit.spec(family), cfg.jitter);
    std::vector<double> pred;
    for (const auto& p : model.predict(test.sets)) pred.push_back(p.mean);
    row.q2 = q2(test.responses, pred);
  } catch (const SingularMatrixError&) {
    row.q2 = std::numeric_limits<double>::quiet_NaN();
    row.error = "singular";
  } catch (const ExhaustiveSingularityError&) {
    row.q2 = std::numeric_limits<double>::quiet_NaN();
    row.error = "all_candidates_singular";
  } catch (const NumericalError&) {
    row.q2 = std::numeric_limits<double>::quiet_NaN();
    row.error = "numerical";
  }
  return row;
}

std::vector<Q2Row> run_validate(const ValidateOptions& opt, const Common& common) {
  const auto data = load_source(opt.source, common.seed);
  std::vector<Q2Row> rows;
  for (const auto& k : opt.kernels)
    for (double r : opt.ratios)
      for (int rep = 0; rep < opt.reps; ++rep) rows.push_back({k, r, rep, 0.0, {}});
  parallel_for(rows.size(), common.threads, [&](std::size_t i) {
    rows[i] = validate_one(data, rows[i].kernel, rows[i].ratio, rows[i].replication, opt, common.seed);
  });
  return rows;
}

void write_q2(const fs::path& dir, const std::string& problem, const std::vector<Q2Row>& rows,
              std::vector<std::string>& written, const std::string& prefix = "") {
  auto os = open_out(dir, prefix + "q2.csv", written);
  os << "problem,kernel,ratio,replication,q2,error\n";
  for (const auto& r : rows)
    os << problem << ',' << r.kernel << ',' << num(r.ratio) << ',' << r.replication << ',' << num(r.q2) << ','
       << r.error << '\n';

  auto ss = open_out(dir, prefix + "q2_summary.csv", written);
  ss << "problem,kernel,ratio,mean_q2,replications,failed\n";
  std::vector<std::pair<std::string, double>> keys;
  for (const auto& r : rows)
    if (std::find(keys.begin(), keys.end(), std::pair{r.kernel, r.ratio}) == keys.end()) keys.emplace_back(r.kernel, r.ratio);
  for (const auto& [k, ratio] : keys) {
    double sum = 0.0;
    int ok = 0;
    int failed = 0;
    for (const auto& r : rows) {
      if (r.kernel != k || r.ratio != ratio) continue;
      if (std::isnan(r.q2)) {
        ++failed;
      } else {
        sum += r.q2;
        ++ok;
      }
    }
    ss << problem << ',' << k << ',' << num(ratio) << ','
       << num(ok ? sum / ok : std::numeric_limits<double>::quiet_NaN()) << ',' << ok + failed << ',' << failed
       << '\n';
  }
}

json validate_json(const ValidateOptions& o) {
  json j{{"source", source_json(o.source)},
         {"kernels", o.kernels},
         {"ratios", o.ratios},
         {"reps", o.reps},
         {"fit", budget_json(o.budget)}};
  j["jitter_a"] = o.jitter_a ? json(*o.jitter_a) : json(nullptr);
  return j;
}

// ---------------------------------------------------------------- diag

struct DiagOptions {
  Source source;
  std::string kernel = "de";
  double ratio = 0.8;
  std::optional<int> jitter_a;
  Budget budget;
};

json run_diag(const DiagOptions& opt, const Common& common, const fs::path& dir, std::vector<std::string>& written) {
  const auto data = load_source(opt.source, common.seed);
  const auto family = parse_family(opt.kernel);
  const auto idx = split_indices(data.size(), opt.ratio, common.seed);
  const auto train = data.select(idx.train);
  const auto test = data.select(idx.test);
  const auto cfg = make_fit(data.dimension, opt.budget, common.seed, opt.jitter_a);
  const auto rep = fit_hyperparams(train, family, cfg);
  const auto model = fit(train, rep.spec(family), cfg.jitter);

  auto loo_os = open_out(dir, "residuals_loo.csv", written);
  loo_os << "set_id,observed,predicted,sd,standardized\n";
  const auto loo = model.loo_residuals();
  for (std::size_t i = 0; i < loo.size(); ++i)
    loo_os << idx.train[i] << ',' << num(train.responses[i]) << ',' << num(loo[i].mean) << ','
           << num(std::sqrt(loo[i].variance)) << ',' << num(loo[i].standardized) << '\n';

  auto test_os = open_out(dir, "residuals_test.csv", written);
  test_os << "set_id,observed,predicted,sd,standardized\n";
  const auto preds = model.predict(test.sets);
  std::vector<double> means;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double z = preds[i].sd > 0.0 ? (test.responses[i] - preds[i].mean) / preds[i].sd
                                       : std::numeric_limits<double>::quiet_NaN();
    test_os << idx.test[i] << ',' << num(test.responses[i]) << ',' << num(preds[i].mean) << ','
            << num(preds[i].sd) << ',' << num(z) << '\n';
    means.push_back(preds[i].mean);
  }
  json fitted{{"theta_x", rep.best_theta_x},
              {"sigma2", rep.best_sigma2_h},
              {"nll", rep.best_nll},
              {"jitter", model.jitter_applied()}};
  fitted["theta_h"] = family == KernelFamily::DeepEmbedding ? json(rep.best_theta_h) : json(nullptr);
  if (test.size() >= 2) {
    try {
      fitted["test_q2"] = q2(test.responses, means);
    } catch (const InputError&) {
      fitted["test_q2"] = nullptr;
    }
  }
  return fitted;
}

// ---------------------------------------------------------------- bo

struct BoOptions {
  Source source;
  std::vector<std::string> methods{"EI-DE", "EI-DS", "RANDOM"};
  std::optional<int> jitter_a;
  int trials = 50;
  std::size_t init = 10;
  std::size_t budget = 40;
  Budget fit_budget{40, 25, 50};
};

struct Pool {
  std::optional<CandidatePool> pool;
  std::vector<double> values;
};

Pool make_pool(const Source& src, std::uint64_t seed) {
  Pool out;
  if (!src.from_csv() && src.objective == "combinatorial") {
    const auto problem = make_problem(src, seed);
    const auto subsets = problem->enumerate_subsets();
    for (const auto& s : subsets) out.values.push_back(problem->evaluate(s));
    out.pool.emplace(CandidatePool::from_subsets(problem->ground(), subsets));
    return out;
  }
  const auto data = load_source(src, seed);
  out.values = data.responses;
  out.pool.emplace(data.sets);
  return out;
}

Method parse_method(const std::string& m) {
  if (m == "EI-DE") return Method::EiDeepEmbedding;
  if (m == "EI-DS") return Method::EiDoubleSum;
  if (m == "RANDOM") return Method::Random;
  throw InputError("unknown method '" + m + "'");
}

std::vector<std::pair<std::string, Replication>> run_campaigns(const BoOptions& opt, const Common& common,
                                                               const Pool& pool) {
  std::vector<std::pair<std::string, Replication>> out;
  const double minimum = *std::min_element(pool.values.begin(), pool.values.end());
  for (const auto& name : opt.methods) {
    Campaign c;
    c.pool = &*pool.pool;
    c.objective = [&pool](std::size_t i) { return pool.values[i]; };
    c.method = parse_method(name);
    c.n_init = opt.init;
    c.budget = opt.budget;
    c.fit = make_fit(pool.pool->candidates().front().dimension(), opt.fit_budget, common.seed,
                     c.method == Method::EiDoubleSum ? opt.jitter_a : std::nullopt);
    c.known_minimum = minimum;
    out.emplace_back(name, replicate(c, opt.trials, common.seed, common.threads));
  }
  return out;
}

void write_bo(const fs::path& dir, const std::vector<std::pair<std::string, Replication>>& results,
              std::vector<std::string>& written, const std::string& prefix = "") {
  auto trials = open_out(dir, prefix + "trials.csv", written);
  trials << "method,trial,seed,iteration,chosen,f,best_so_far,aborted\n";
  for (const auto& [name, rep] : results)
    for (std::size_t t = 0; t < rep.trials.size(); ++t) {
      const auto& tr = rep.trials[t];
      for (std::size_t k = 0; k < tr.init_indices.size(); ++k) {
        const double best = *std::min_element(tr.init_values.begin(), tr.init_values.begin() + static_cast<std::ptrdiff_t>(k) + 1);
        trials << name << ',' << t << ',' << tr.seed << ",0," << tr.init_indices[k] << ',' << num(tr.init_values[k])
               << ',' << num(best) << ",0\n";
      }
      for (std::size_t it = 0; it < tr.iterations.size(); ++it) {
        const auto& r = tr.iterations[it];
        trials << name << ',' << t << ',' << tr.seed << ',' << it + 1 << ',' << r.chosen << ',' << num(r.observed)
               << ',' << num(r.best_so_far) << ",0\n";
      }
      if (tr.aborted)
        trials << name << ',' << t << ',' << tr.seed << ',' << tr.abort_iteration << ",,," << num(tr.final_best)
               << ",1\n";
    }

  auto summary = open_out(dir, prefix + "summary.csv", written);
  summary << "method,iteration,median,p95\n";
  for (const auto& [name, rep] : results)
    for (std::size_t it = 0; it < rep.summary.median.size(); ++it)
      summary << name << ',' << it << ',' << num(rep.summary.median[it]) << ',' << num(rep.summary.p95[it]) << '\n';

  auto hits = open_out(dir, prefix + "hits.csv", written);
  hits << "method,trials,hits,aborted\n";
  for (const auto& [name, rep] : results)
    hits << name << ',' << rep.summary.trials << ',' << rep.summary.hits << ',' << rep.summary.aborted << '\n';
}

json bo_json(const BoOptions& o) {
  json j{{"source", source_json(o.source)}, {"methods", o.methods}, {"trials", o.trials},
         {"init", o.init},                  {"budget", o.budget},   {"fit", budget_json(o.fit_budget)}};
  j["jitter_a"] = o.jitter_a ? json(*o.jitter_a) : json(nullptr);
  return j;
}

// ---------------------------------------------------------------- jitter sweep

struct SweepOptions {
  ValidateOptions validate;
  std::vector<int> levels{1, 2, 3, 4, 5, 6, 7};
  bool with_bo = false;
  BoOptions bo;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GP regression and Bayesian optimization over point sets"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--seed", common.seed, "Base seed");
  app.add_option("--out", common.out, "Output directory");
  app.add_option("--threads", common.threads, "Worker threads")->check(CLI::PositiveNumber);

  ValidateOptions vopt;
  auto* validate = app.add_subcommand("validate", "Held-out Q2 over kernels, split ratios and replications");
  add_source_options(validate, vopt.source);
  validate->add_option("--kernel", vopt.kernels, "Kernel families")->check(CLI::IsMember({"ds", "de"}));
  validate->add_option("--ratio", vopt.ratios, "Training fractions")->check(CLI::Range(0.0, 1.0));
  validate->add_option("--reps", vopt.reps, "Replications per (kernel, ratio)")->check(CLI::PositiveNumber);
  validate->add_option("--jitter-a", vopt.jitter_a, "Jitter level a for DS fits")->check(CLI::PositiveNumber);
  add_budget_options(validate, vopt.budget);

  DiagOptions dopt;
  auto* diag = app.add_subcommand("diag", "Leave-one-out and test residuals of one fitted model");
  add_source_options(diag, dopt.source);
  diag->add_option("--kernel", dopt.kernel, "Kernel family")->check(CLI::IsMember({"ds", "de"}));
  diag->add_option("--ratio", dopt.ratio, "Training fraction")->check(CLI::Range(0.0, 1.0));
  diag->add_option("--jitter-a", dopt.jitter_a, "Jitter level a")->check(CLI::PositiveNumber);
  add_budget_options(diag, dopt.budget);

  BoOptions bopt;
  auto* bo = app.add_subcommand("bo", "Replicated BO campaigns over a finite candidate pool");
  add_source_options(bo, bopt.source);
  bo->add_option("--methods", bopt.methods, "Methods to run")->check(CLI::IsMember({"EI-DE", "EI-DS", "RANDOM"}));
  bo->add_option("--jitter-a", bopt.jitter_a, "Jitter level a for EI-DS")->check(CLI::PositiveNumber);
  bo->add_option("--trials", bopt.trials, "Trials per method")->check(CLI::PositiveNumber);
  bo->add_option("--init", bopt.init, "Initial design size");
  bo->add_option("--budget", bopt.budget, "Evaluations after the initial design");
  add_budget_options(bo, bopt.fit_budget);

  SweepOptions sopt;
  sopt.validate.kernels = {"ds"};
  auto* sweep = app.add_subcommand("jitter-sweep", "DS with jitter bound(a) for each level a");
  add_source_options(sweep, sopt.validate.source);
  sweep->add_option("--levels", sopt.levels, "Jitter levels a")->check(CLI::PositiveNumber);
  sweep->add_option("--ratio", sopt.validate.ratios, "Training fractions")->check(CLI::Range(0.0, 1.0));
  sweep->add_option("--reps", sopt.validate.reps, "Replications")->check(CLI::PositiveNumber);
  sweep->add_flag("--bo", sopt.with_bo, "Also run EI-DS campaigns per level");
  sweep->add_option("--trials", sopt.bo.trials, "BO trials per level")->check(CLI::PositiveNumber);
  sweep->add_option("--init", sopt.bo.init, "BO initial design size");
  sweep->add_option("--budget", sopt.bo.budget, "BO evaluations after the initial design");
  add_budget_options(sweep, sopt.validate.budget);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  const auto t0 = std::chrono::steady_clock::now();
  const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  try {
    const fs::path dir(common.out);
    fs::create_directories(dir);
    std::vector<std::string> written;

    if (*validate) {
      const auto rows = run_validate(vopt, common);
      write_q2(dir, vopt.source.name(), rows, written);
      write_manifest(dir, "validate", validate_json(vopt), common, written, elapsed(), argc, argv);
    } else if (*diag) {
      const auto fitted = run_diag(dopt, common, dir, written);
      json cfg{{"source", source_json(dopt.source)},
               {"kernel", dopt.kernel},
               {"ratio", dopt.ratio},
               {"fit", budget_json(dopt.budget)},
               {"fitted", fitted}};
      cfg["jitter_a"] = dopt.jitter_a ? json(*dopt.jitter_a) : json(nullptr);
      write_manifest(dir, "diag", cfg, common, written, elapsed(), argc, argv);
    } else if (*bo) {
      const auto pool = make_pool(bopt.source, common.seed);
      write_bo(dir, run_campaigns(bopt, common, pool), written);
      write_manifest(dir, "bo", bo_json(bopt), common, written, elapsed(), argc, argv);
    } else if (*sweep) {
      auto sweep_os = open_out(dir, "sweep.csv", written);
      sweep_os << "a,problem,ratio,mean_q2,replications,failed\n";
      std::optional<std::ofstream> bo_os;
      std::optional<Pool> pool;
      if (sopt.with_bo) {
        bo_os.emplace(open_out(dir, "sweep_bo.csv", written));
        *bo_os << "a,trials,hits,aborted\n";
        sopt.bo.source = sopt.validate.source;
        sopt.bo.methods = {"EI-DS"};
        pool.emplace(make_pool(sopt.bo.source, common.seed));
      }
      for (int a : sopt.levels) {
        auto v = sopt.validate;
        v.jitter_a = a;
        const auto rows = run_validate(v, common);
        write_q2(dir, v.source.name(), rows, written, "a" + std::to_string(a) + "_");
        for (double ratio : v.ratios) {
          double sum = 0.0;
          int ok = 0;
          int failed = 0;
          for (const auto& r : rows) {
            if (r.ratio != ratio) continue;
            if (std::isnan(r.q2)) {
              ++failed;
            } else {
              sum += r.q2;
              ++ok;
            }
          }
          sweep_os << a << ',' << v.source.name() << ',' << num(ratio) << ','
                   << num(ok ? sum / ok : std::numeric_limits<double>::quiet_NaN()) << ',' << ok + failed << ','
                   << failed << '\n';
        }
        if (sopt.with_bo) {
          auto b = sopt.bo;
          b.jitter_a = a;
          b.fit_budget = sopt.validate.budget;
          const auto res = run_campaigns(b, common, *pool);
          write_bo(dir, res, written, "a" + std::to_string(a) + "_");
          const auto& s = res.front().second.summary;
          *bo_os << a << ',' << s.trials << ',' << s.hits << ',' << s.aborted << '\n';
        }
      }
      json cfg{{"validate", validate_json(sopt.validate)}, {"levels", sopt.levels}, {"with_bo", sopt.with_bo}};
      if (sopt.with_bo) cfg["bo"] = bo_json(sopt.bo);
      write_manifest(dir, "jitter-sweep", cfg, common, written, elapsed(), argc, argv);
    }
    std::cout << "wrote";
    for (const auto& w : written) std::cout << ' ' << (dir / w).string();
    std::cout << ' ' << (dir / "manifest.json").string() << '\n';
    return 0;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const PoolExhaustedError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
