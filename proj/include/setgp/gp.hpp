#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "setgp/errors.hpp"
#include "setgp/kernels.hpp"
#include "setgp/point_set.hpp"

namespace setgp {

/// Paired (set, response) records sharing one ambient dimension.
struct SetDataset {
  Eigen::Index dimension = 0;
  std::vector<PointSet> sets;
  std::vector<double> responses;

  std::size_t size() const noexcept { return sets.size(); }

  void add(PointSet s, double response) {
    if (sets.empty() && dimension == 0) dimension = s.dimension();
    if (s.dimension() != dimension) throw InputError("SetDataset: dimension mismatch");
    if (!std::isfinite(response)) throw InputError("SetDataset: non-finite response");
    sets.push_back(std::move(s));
    responses.push_back(response);
  }

  void validate(std::size_t min_records) const {
    if (sets.size() != responses.size()) throw InputError("SetDataset: sets/responses length mismatch");
    if (sets.size() < min_records)
      throw InputError("SetDataset: need at least " + std::to_string(min_records) + " records");
    for (const auto& s : sets)
      if (s.dimension() != dimension) throw InputError("SetDataset: dimension mismatch");
    for (double y : responses)
      if (!std::isfinite(y)) throw InputError("SetDataset: non-finite response");
  }

  Eigen::VectorXd response_vector() const {
    return Eigen::Map<const Eigen::VectorXd>(responses.data(),
                                             static_cast<Eigen::Index>(responses.size()));
  }

  SetDataset select(std::span<const std::size_t> indices) const {
    SetDataset out;
    out.dimension = dimension;
    out.sets.reserve(indices.size());
    out.responses.reserve(indices.size());
    for (auto i : indices) {
      out.sets.push_back(sets.at(i));
      out.responses.push_back(responses.at(i));
    }
    return out;
  }
};

/// How to react when the correlation matrix is numerically singular: fail, or add
/// the smallest diagonal jitter that brings its condition number down to e^a.
struct JitterPolicy {
  std::optional<double> a;

  static JitterPolicy none() { return {}; }
  static JitterPolicy bound(double a) {
    if (!(a > 0.0) || !std::isfinite(a)) throw InputError("jitter level a must be positive");
    return {a};
  }
};

struct PredictionResult {
  double mean = 0.0;
  double variance = 0.0;
  double sd = 0.0;
};

struct LooResidual {
  double raw = 0.0;           // y_i - m_{-i}
  double standardized = 0.0;  // raw / s_{-i}
  double mean = 0.0;
  double variance = 0.0;
  bool degenerate = false;  // non-positive LOO variance; standardized is NaN
};

struct NllResult {
  double value = 0.0;
  std::array<double, 2> grad{0.0, 0.0};  // (d/d theta_h, d/d theta_x)
  double sigma2 = 0.0;
  double beta = 0.0;
  double jitter = 0.0;
};

namespace detail {

/// Relative pivot floor: a Cholesky pivot below this fraction of its diagonal
/// entry is treated as a singular leading minor.
inline constexpr double kPivotTolerance = 1e-12;

/// 1-based order of the first failing leading minor, 0 on success. Builds
/// U = L^T column by column so every inner product is over contiguous memory.
inline std::size_t first_failing_minor(const Eigen::MatrixXd& a) {
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double s = a(j, j) - u.col(j).head(j).squaredNorm();
    if (!(s > kPivotTolerance * a(j, j))) return static_cast<std::size_t>(j + 1);
    u(j, j) = std::sqrt(s);
    for (Eigen::Index i = j + 1; i < n; ++i)
      u(j, i) = (a(i, j) - u.col(i).head(j).dot(u.col(j).head(j))) / u(j, j);
  }
  return 0;
}

struct CholeskyOutcome {
  Eigen::MatrixXd lower;
  std::size_t failed_minor = 0;
  bool ok() const noexcept { return failed_minor == 0; }
};

inline CholeskyOutcome checked_cholesky(const Eigen::MatrixXd& a) {
  CholeskyOutcome out;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) {
    out.lower = llt.matrixL();
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double piv = out.lower(i, i) * out.lower(i, i);
      if (!(piv > kPivotTolerance * a(i, i))) {
        out.failed_minor = static_cast<std::size_t>(i + 1);
        break;
      }
    }
    if (out.ok()) return out;
  } else {
    out.failed_minor = first_failing_minor(a);
    if (out.failed_minor == 0) out.failed_minor = static_cast<std::size_t>(a.rows());
  }
  out.lower.resize(0, 0);
  return out;
}

struct Factorized {
  Eigen::MatrixXd lower;
  double jitter = 0.0;
};

inline Factorized factorize(const Eigen::MatrixXd& r, const JitterPolicy& policy) {
  auto first = checked_cholesky(r);
  if (first.ok()) return {std::move(first.lower), 0.0};
  const std::string where = "leading minor " + std::to_string(first.failed_minor) + " of " +
                            std::to_string(r.rows());
  if (!policy.a)
    throw SingularMatrixError(first.failed_minor, "correlation matrix is singular at " + where);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r, Eigen::EigenvaluesOnly);
  const double lmax = eig.eigenvalues().maxCoeff();
  const double kappa = condition_from_extremes(eig.eigenvalues().minCoeff(), lmax);
  const double delta = jitter_bound(lmax, kappa, *policy.a);
  Eigen::MatrixXd shifted = r;
  shifted.diagonal().array() += delta;
  auto second = checked_cholesky(shifted);
  if (!second.ok())
    throw NumericalError("Cholesky failed after jitter " + std::to_string(delta) + " at " + where);
  return {std::move(second.lower), delta};
}

/// Closed-form trend and variance for a factorized correlation matrix.
struct Concentrated {
  double beta = 0.0;
  double sigma2 = 0.0;
  Eigen::VectorXd alpha;       // R^-1 (y - beta 1)
  Eigen::VectorXd ones_solve;  // R^-1 1
  double ones_quad = 0.0;      // 1^T R^-1 1
  double log_det = 0.0;
};

inline Concentrated concentrate(const Eigen::MatrixXd& lower, const Eigen::VectorXd& y) {
  const auto l = lower.triangularView<Eigen::Lower>();
  const Eigen::Index n = y.size();
  auto solve = [&](const Eigen::VectorXd& b) {
    Eigen::VectorXd z = l.solve(b);
    return Eigen::VectorXd(l.transpose().solve(z));
  };
  Concentrated c;
  c.ones_solve = solve(Eigen::VectorXd::Ones(n));
  c.ones_quad = c.ones_solve.sum();
  const Eigen::VectorXd y_solve = solve(y);
  c.beta = y_solve.sum() / c.ones_quad;
  c.alpha = y_solve - c.beta * c.ones_solve;
  const Eigen::VectorXd centered = y.array() - c.beta;
  c.sigma2 = centered.dot(c.alpha) / static_cast<double>(n);
  c.log_det = 2.0 * lower.diagonal().array().log().sum();
  return c;
}

/// Correlation matrix with unit outer variance: r_H for deep embedding, k_0 for double sum.
inline Eigen::MatrixXd correlation_matrix(std::span<const PointSet> sets, KernelFamily family,
                                          double theta_h, double theta_x) {
  KernelSpec spec{family, theta_x, theta_h, 1.0};
  return gram(sets, spec);
}

inline Eigen::MatrixXd inverse_from_cholesky(const Eigen::MatrixXd& lower) {
  const auto n = lower.rows();
  Eigen::MatrixXd linv = lower.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
  return linv.transpose() * linv;
}

}  // namespace detail

class GPModel;
inline GPModel fit(const SetDataset& data, const KernelSpec& spec, const JitterPolicy& policy);

/// Ordinary kriging model over point sets. Immutable once fitted.
class GPModel {
 public:
  const std::vector<PointSet>& designs() const noexcept { return designs_; }
  const Eigen::VectorXd& responses() const noexcept { return responses_; }
  /// Hyperparameters with sigma2_h set to its concentrated estimate.
  const KernelSpec& spec() const noexcept { return spec_; }
  double beta() const noexcept { return conc_.beta; }
  double sigma2() const noexcept { return conc_.sigma2; }
  double log_det() const noexcept { return conc_.log_det; }
  const Eigen::MatrixXd& chol() const noexcept { return lower_; }
  double jitter_applied() const noexcept { return jitter_; }
  std::optional<double> conditioning_target() const noexcept { return target_a_; }

  PredictionResult predict(const PointSet& s) const {
    return predict(std::span<const PointSet>(&s, 1)).front();
  }

  std::vector<PredictionResult> predict(std::span<const PointSet> sets) const {
    if (sets.empty()) return {};
    for (const auto& s : sets)
      if (s.dimension() != designs_.front().dimension())
        throw InputError("predict: dimension mismatch");
    KernelSpec unit = spec_;
    unit.sigma2_h = 1.0;
    const Eigen::MatrixXd r = cross_gram(designs_, sets, unit);  // n x m
    const Eigen::MatrixXd w = lower_.triangularView<Eigen::Lower>().solve(r);
    Eigen::VectorXd prior = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(sets.size()));
    if (spec_.family == KernelFamily::DoubleSum) prior = detail::self_sums(sets, spec_.theta_x);

    std::vector<PredictionResult> out(sets.size());
    for (Eigen::Index j = 0; j < r.cols(); ++j) {
      const double trend_gap = 1.0 - conc_.ones_solve.dot(r.col(j));
      const double var = conc_.sigma2 * (prior[j] - w.col(j).squaredNorm() +
                                         trend_gap * trend_gap / conc_.ones_quad);
      auto& p = out[static_cast<std::size_t>(j)];
      p.mean = conc_.beta + r.col(j).dot(conc_.alpha);
      p.variance = std::max(0.0, var);
      p.sd = std::sqrt(p.variance);
    }
    return out;
  }

  /// Leave-one-out residuals from the factorization, hyperparameters (including
  /// sigma2) held fixed and the trend re-estimated per fold.
  std::vector<LooResidual> loo_residuals() const {
    const auto n = responses_.size();
    if (n < 3) throw InputError("loo_residuals: need at least 3 records");
    const Eigen::MatrixXd rinv = detail::inverse_from_cholesky(lower_);
    std::vector<LooResidual> out(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const double qii = rinv(i, i) - conc_.ones_solve[i] * conc_.ones_solve[i] / conc_.ones_quad;
      auto& e = out[static_cast<std::size_t>(i)];
      if (!(qii > 0.0)) {
        e.degenerate = true;
        e.raw = e.standardized = e.mean = e.variance = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      e.raw = conc_.alpha[i] / qii;
      e.mean = responses_[i] - e.raw;
      e.variance = conc_.sigma2 / qii;
      e.standardized = e.raw / std::sqrt(e.variance);
    }
    return out;
  }

 private:
  friend GPModel fit(const SetDataset&, const KernelSpec&, const JitterPolicy&);
  GPModel() = default;

  std::vector<PointSet> designs_;
  Eigen::VectorXd responses_;
  KernelSpec spec_;
  Eigen::MatrixXd lower_;
  detail::Concentrated conc_;
  double jitter_ = 0.0;
  std::optional<double> target_a_;
};

/// Fits the ordinary kriging model for fixed range parameters: factorizes the
/// correlation matrix (with jitter if the policy allows and it is needed), then
/// concentrates the constant trend and the process variance.
inline GPModel fit(const SetDataset& data, const KernelSpec& spec, const JitterPolicy& policy) {
  data.validate(2);
  const Eigen::MatrixXd r =
      detail::correlation_matrix(data.sets, spec.family, spec.theta_h, spec.theta_x);
  auto fac = detail::factorize(r, policy);

  GPModel m;
  m.designs_ = data.sets;
  m.responses_ = data.response_vector();
  m.conc_ = detail::concentrate(fac.lower, m.responses_);
  if (!(m.conc_.sigma2 > 0.0)) {
    // Constant responses: any positive variance interpolates; keep it tiny and finite.
    m.conc_.sigma2 = std::numeric_limits<double>::min();
  }
  m.lower_ = std::move(fac.lower);
  m.jitter_ = fac.jitter;
  m.target_a_ = policy.a;
  m.spec_ = spec;
  m.spec_.sigma2_h = m.conc_.sigma2;
  return m;
}

inline PredictionResult predict(const GPModel& model, const PointSet& s) { return model.predict(s); }

inline std::vector<LooResidual> loo_residuals(const GPModel& model) { return model.loo_residuals(); }

namespace detail {

inline double nll_value(const Concentrated& c, Eigen::Index n) {
  return 0.5 * static_cast<double>(n) * std::log(c.sigma2) + 0.5 * c.log_det;
}

}  // namespace detail

/// Concentrated negative log-likelihood (constants dropped)
///   (n/2) log sigma2_hat + (1/2) log det R
/// and its gradient in (theta_h, theta_x). The deep embedding gradient is
/// analytic; the double sum gradient (theta_x only) uses central differences.
inline NllResult concentrated_nll(const SetDataset& data, KernelFamily family, double theta_h,
                                  double theta_x, const JitterPolicy& policy,
                                  bool with_gradient = true) {
  data.validate(2);
  detail::check_positive(theta_x, "theta_x");
  if (family == KernelFamily::DeepEmbedding) detail::check_positive(theta_h, "theta_h");
  const Eigen::VectorXd y = data.response_vector();
  const Eigen::Index n = y.size();

  NllResult out;
  if (family == KernelFamily::DeepEmbedding && with_gradient) {
    CorrelationGradients cg = de_correlation_with_gradients(data.sets, theta_h, theta_x);
    auto fac = detail::factorize(cg.corr, policy);
    const auto c = detail::concentrate(fac.lower, y);
    out.value = detail::nll_value(c, n);
    out.sigma2 = c.sigma2;
    out.beta = c.beta;
    out.jitter = fac.jitter;
    // d NLL = (1/2) tr((R^-1 - alpha alpha^T / sigma2) dR)
    Eigen::MatrixXd w = detail::inverse_from_cholesky(fac.lower);
    w.noalias() -= (c.alpha * c.alpha.transpose()) / c.sigma2;
    out.grad[0] = 0.5 * w.cwiseProduct(cg.d_theta_h).sum();
    out.grad[1] = 0.5 * w.cwiseProduct(cg.d_theta_x).sum();
    return out;
  }

  auto value_at = [&](double tx, NllResult* full) {
    const Eigen::MatrixXd r = detail::correlation_matrix(data.sets, family, theta_h, tx);
    auto fac = detail::factorize(r, policy);
    const auto c = detail::concentrate(fac.lower, y);
    if (full) {
      full->sigma2 = c.sigma2;
      full->beta = c.beta;
      full->jitter = fac.jitter;
    }
    return detail::nll_value(c, n);
  };
  out.value = value_at(theta_x, &out);
  if (with_gradient && family == KernelFamily::DoubleSum) {
    const double h = 1e-5 * theta_x;
    out.grad[1] = (value_at(theta_x + h, nullptr) - value_at(theta_x - h, nullptr)) / (2.0 * h);
  }
  return out;
}

/// Predictive coefficient 1 - SSE / SST.
inline double q2(std::span<const double> actual, std::span<const double> predicted) {
  if (actual.size() != predicted.size()) throw InputError("q2: length mismatch");
  if (actual.size() < 2) throw InputError("q2: need at least 2 values");
  double mean = 0.0;
  for (double a : actual) mean += a;
  mean /= static_cast<double>(actual.size());
  double sse = 0.0;
  double sst = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    sse += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
    sst += (actual[i] - mean) * (actual[i] - mean);
  }
  if (!(sst > 0.0)) throw InputError("q2: undefined for constant actual values");
  return 1.0 - sse / sst;
}

}  // namespace setgp
