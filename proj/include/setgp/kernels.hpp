#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "setgp/errors.hpp"
#include "setgp/point_set.hpp"

namespace setgp {

/// Isotropic Gaussian correlation on the base space. The inner variance is
/// fixed at 1; any scale is carried by the outer variance instead.
struct InnerKernelParams {
  double theta_x = 1.0;
  static constexpr double sigma2_x = 1.0;
};

/// Gaussian radial kernel applied on top of the embedding distance.
struct DeepKernelParams {
  InnerKernelParams inner;
  double theta_h = 1.0;
  double sigma2_h = 1.0;
};

enum class KernelFamily { DoubleSum, DeepEmbedding };

inline const char* to_string(KernelFamily f) {
  return f == KernelFamily::DoubleSum ? "ds" : "de";
}

/// Kernel family plus hyperparameters. `theta_h` is ignored by the double sum
/// family; `sigma2_h` multiplies either family.
struct KernelSpec {
  KernelFamily family = KernelFamily::DeepEmbedding;
  double theta_x = 1.0;
  double theta_h = 1.0;
  double sigma2_h = 1.0;

  static KernelSpec double_sum(double theta_x, double sigma2 = 1.0) {
    return {KernelFamily::DoubleSum, theta_x, 1.0, sigma2};
  }
  static KernelSpec deep_embedding(double theta_h, double theta_x, double sigma2 = 1.0) {
    return {KernelFamily::DeepEmbedding, theta_x, theta_h, sigma2};
  }

  InnerKernelParams inner() const { return {theta_x}; }
  DeepKernelParams deep() const { return {{theta_x}, theta_h, sigma2_h}; }
};

/// Partial derivatives of the outer correlation r_H = exp(-d_E^2 / (2 theta_h^2)).
struct CorrGradient {
  double d_theta_h = 0.0;
  double d_theta_x = 0.0;
};

namespace detail {

inline void check_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v))
    throw InputError(std::string(name) + " must be positive and finite");
}

inline void check_params(const InnerKernelParams& p) { check_positive(p.theta_x, "theta_x"); }

inline void check_params(const DeepKernelParams& p) {
  check_params(p.inner);
  check_positive(p.theta_h, "theta_h");
  check_positive(p.sigma2_h, "sigma2_h");
}

inline void check_same_dimension(const PointSet& a, const PointSet& b) {
  if (a.dimension() != b.dimension()) throw InputError("point sets of different dimension");
}

inline Eigen::Index common_dimension(std::span<const PointSet> sets) {
  if (sets.empty()) throw InputError("empty list of point sets");
  const Eigen::Index d = sets.front().dimension();
  for (const auto& s : sets)
    if (s.dimension() != d) throw InputError("point sets of different dimension");
  return d;
}

/// exp(-dist / (2 theta^2)) elementwise, with the exponent floored at -700. The
/// floor keeps results out of the subnormal range, where every later sum runs an
/// order of magnitude slower; e^-700 is negligible next to the O(1/p) diagonal.
template <class Array>
auto gaussian_of_sq(const Array& dist, double theta_x) {
  return (dist * (-0.5 / (theta_x * theta_x))).max(-700.0).exp();
}

/// Averages over all point pairs (x in a, y in b) of r = exp(-|x-y|^2 / (2 theta^2))
/// and, when requested, of r * |x-y|^2 / theta^3 (the theta-derivative of r).
struct PairSums {
  double corr = 0.0;
  double d_corr = 0.0;
};

template <bool WithDerivative>
PairSums pair_sums(const PointSet& a, const PointSet& b, double theta_x) {
  // Fixed argument order makes the summation order, hence the result, symmetric.
  const PointSet* s = &a;
  const PointSet* t = &b;
  if (&a != &b && b < a) std::swap(s, t);

  const Eigen::Index p = s->size();
  const Eigen::Index q = t->size();
  const Eigen::Index d = s->dimension();
  const double* x = s->coords().data();
  const double* y = t->coords().data();

  thread_local Eigen::ArrayXd dist;
  thread_local Eigen::ArrayXd corr;
  dist.resize(p * q);
  for (Eigen::Index i = 0; i < p; ++i) {
    const double* xi = x + i * d;
    for (Eigen::Index j = 0; j < q; ++j) {
      const double* yj = y + j * d;
      double acc = 0.0;
      for (Eigen::Index c = 0; c < d; ++c) {
        const double diff = xi[c] - yj[c];
        acc += diff * diff;
      }
      dist[i * q + j] = acc;
    }
  }
  corr = gaussian_of_sq(dist, theta_x);

  const double inv_count = 1.0 / static_cast<double>(p * q);
  PairSums out;
  out.corr = corr.sum() * inv_count;
  if constexpr (WithDerivative)
    out.d_corr = (corr * dist).sum() * inv_count / (theta_x * theta_x * theta_x);
  return out;
}

inline double squared_distance(double kss, double ktt, double kst) {
  return std::max(0.0, kss + ktt - 2.0 * kst);
}

}  // namespace detail

/// exp(-|x-y|^2 / (2 theta_x^2)) for two points given as Eigen vectors.
template <class A, class B>
double inner_corr(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y,
                  const InnerKernelParams& p) {
  detail::check_params(p);
  if (x.size() != y.size()) throw InputError("inner_corr: dimension mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double diff = x.derived().coeff(i) - y.derived().coeff(i);
    acc += diff * diff;
  }
  return std::exp(-0.5 * acc / (p.theta_x * p.theta_x));
}

/// Double sum kernel: mean of the inner correlation over all cross pairs.
inline double ds_kernel(const PointSet& s, const PointSet& t, const InnerKernelParams& p) {
  detail::check_params(p);
  detail::check_same_dimension(s, t);
  return detail::pair_sums<false>(s, t, p.theta_x).corr;
}

/// Distance between the mean embeddings of two sets in the inner RKHS.
inline double embed_distance(const PointSet& s, const PointSet& t, const InnerKernelParams& p) {
  detail::check_params(p);
  detail::check_same_dimension(s, t);
  const double kss = detail::pair_sums<false>(s, s, p.theta_x).corr;
  const double ktt = detail::pair_sums<false>(t, t, p.theta_x).corr;
  const double kst = detail::pair_sums<false>(s, t, p.theta_x).corr;
  return std::sqrt(detail::squared_distance(kss, ktt, kst));
}

/// Deep embedding kernel sigma2_h * exp(-d_E^2 / (2 theta_h^2)).
inline double de_kernel(const PointSet& s, const PointSet& t, const DeepKernelParams& p) {
  detail::check_params(p);
  const double d = embed_distance(s, t, p.inner);
  return p.sigma2_h * std::exp(-0.5 * d * d / (p.theta_h * p.theta_h));
}

/// Analytic (d r_H / d theta_h, d r_H / d theta_x) of the outer correlation.
inline CorrGradient de_corr_grad(const PointSet& s, const PointSet& t, const DeepKernelParams& p) {
  detail::check_params(p);
  detail::check_same_dimension(s, t);
  const double th = p.theta_h;
  const auto ss = detail::pair_sums<true>(s, s, p.inner.theta_x);
  const auto tt = detail::pair_sums<true>(t, t, p.inner.theta_x);
  const auto st = detail::pair_sums<true>(s, t, p.inner.theta_x);
  const double d2 = detail::squared_distance(ss.corr, tt.corr, st.corr);
  const double r = std::exp(-0.5 * d2 / (th * th));
  const double d_d2 = ss.d_corr + tt.d_corr - 2.0 * st.d_corr;
  return {r * d2 / (th * th * th), -0.5 / (th * th) * r * d_d2};
}

namespace detail {

inline Eigen::VectorXd self_sums(std::span<const PointSet> sets, double theta_x) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(sets.size()));
  for (std::size_t i = 0; i < sets.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = pair_sums<false>(sets[i], sets[i], theta_x).corr;
  return out;
}

/// All points of a list of sets, one column per coordinate (total_points x d).
struct FlatSets {
  Eigen::ArrayXXd coords;
  std::vector<Eigen::Index> offsets;  // offsets[k+1] - offsets[k] = #set k

  explicit FlatSets(std::span<const PointSet> sets) {
    offsets.reserve(sets.size() + 1);
    offsets.push_back(0);
    for (const auto& s : sets) offsets.push_back(offsets.back() + s.size());
    const Eigen::Index d = sets.empty() ? 0 : sets.front().dimension();
    coords.resize(offsets.back(), d);
    for (std::size_t k = 0; k < sets.size(); ++k)
      coords.middleRows(offsets[k], sets[k].size()) = sets[k].coords().array();
  }

  Eigen::Index count(std::size_t k) const { return offsets[k + 1] - offsets[k]; }
};

/// Pair averages between `s` and each of the sets [first, last) of `flat`, with
/// one vectorized exponential sweep over the whole row range.
template <bool WithDerivative>
void row_sums(const PointSet& s, const FlatSets& flat, std::size_t first, std::size_t last,
              double theta_x, double* corr_out, double* d_corr_out) {
  if (first >= last) return;
  const Eigen::Index p = s.size();
  const Eigen::Index d = s.dimension();
  const Eigen::Index begin = flat.offsets[first];
  const Eigen::Index total = flat.offsets[last] - begin;
  thread_local Eigen::ArrayXXd dist;
  thread_local Eigen::ArrayXXd corr;
  thread_local Eigen::ArrayXd acc;
  thread_local Eigen::ArrayXd d_acc;
  dist.resize(total, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    auto col = dist.col(i);
    col = (flat.coords.col(0).segment(begin, total) - s.coords()(i, 0)).square();
    for (Eigen::Index c = 1; c < d; ++c)
      col += (flat.coords.col(c).segment(begin, total) - s.coords()(i, c)).square();
  }
  corr = gaussian_of_sq(dist, theta_x);
  acc = corr.rowwise().sum();
  if constexpr (WithDerivative) d_acc = (corr * dist).rowwise().sum();

  const double inv_th3 = 1.0 / (theta_x * theta_x * theta_x);
  for (std::size_t k = first; k < last; ++k) {
    const Eigen::Index off = flat.offsets[k] - begin;
    const Eigen::Index q = flat.count(k);
    const double inv_count = 1.0 / static_cast<double>(p * q);
    corr_out[k - first] = acc.segment(off, q).sum() * inv_count;
    if constexpr (WithDerivative)
      d_corr_out[k - first] = d_acc.segment(off, q).sum() * inv_count * inv_th3;
  }
}

inline double apply_outer(const KernelSpec& spec, double kss, double ktt, double kst) {
  if (spec.family == KernelFamily::DoubleSum) return spec.sigma2_h * kst;
  const double d2 = squared_distance(kss, ktt, kst);
  const double inv_th2 = 1.0 / (spec.theta_h * spec.theta_h);
  return spec.sigma2_h * std::exp(-0.5 * d2 * inv_th2);
}

inline void check_spec(const KernelSpec& spec) {
  check_positive(spec.theta_x, "theta_x");
  check_positive(spec.sigma2_h, "sigma2_h");
  if (spec.family == KernelFamily::DeepEmbedding) check_positive(spec.theta_h, "theta_h");
}

}  // namespace detail

/// n x n kernel matrix over `sets`. The upper triangle is computed and mirrored,
/// so the result is exactly symmetric.
inline Eigen::MatrixXd gram(std::span<const PointSet> sets, const KernelSpec& spec) {
  detail::check_spec(spec);
  detail::common_dimension(sets);
  const auto n = static_cast<Eigen::Index>(sets.size());
  const Eigen::VectorXd self = detail::self_sums(sets, spec.theta_x);
  const detail::FlatSets flat(sets);
  std::vector<double> row(sets.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    detail::row_sums<false>(sets[ui], flat, ui + 1, sets.size(), spec.theta_x, row.data(), nullptr);
    k(i, i) = detail::apply_outer(spec, self[i], self[i], self[i]);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      k(i, j) = detail::apply_outer(spec, self[i], self[j], row[static_cast<std::size_t>(j - i - 1)]);
      k(j, i) = k(i, j);
    }
  }
  return k;
}

/// Rectangular kernel matrix K[i][j] = k(rows[i], cols[j]).
inline Eigen::MatrixXd cross_gram(std::span<const PointSet> rows, std::span<const PointSet> cols,
                                  const KernelSpec& spec) {
  detail::check_spec(spec);
  if (detail::common_dimension(rows) != detail::common_dimension(cols))
    throw InputError("point sets of different dimension");
  const Eigen::VectorXd self_r = detail::self_sums(rows, spec.theta_x);
  const Eigen::VectorXd self_c = detail::self_sums(cols, spec.theta_x);
  const detail::FlatSets flat(cols);
  std::vector<double> row(cols.size());
  Eigen::MatrixXd k(self_r.size(), self_c.size());
  for (Eigen::Index i = 0; i < k.rows(); ++i) {
    detail::row_sums<false>(rows[static_cast<std::size_t>(i)], flat, 0, cols.size(), spec.theta_x,
                            row.data(), nullptr);
    for (Eigen::Index j = 0; j < k.cols(); ++j)
      k(i, j) = detail::apply_outer(spec, self_r[i], self_c[j], row[static_cast<std::size_t>(j)]);
  }
  return k;
}

/// Deep embedding correlation matrix (unit outer variance) and its elementwise
/// derivatives with respect to theta_h and theta_x.
struct CorrelationGradients {
  Eigen::MatrixXd corr;
  Eigen::MatrixXd d_theta_h;
  Eigen::MatrixXd d_theta_x;
};

inline CorrelationGradients de_correlation_with_gradients(std::span<const PointSet> sets,
                                                          double theta_h, double theta_x) {
  detail::check_positive(theta_h, "theta_h");
  detail::check_positive(theta_x, "theta_x");
  detail::common_dimension(sets);
  const auto n = static_cast<Eigen::Index>(sets.size());
  std::vector<detail::PairSums> self(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i)
    self[i] = detail::pair_sums<true>(sets[i], sets[i], theta_x);

  CorrelationGradients out{Eigen::MatrixXd::Identity(n, n), Eigen::MatrixXd::Zero(n, n),
                           Eigen::MatrixXd::Zero(n, n)};
  const double inv_th2 = 1.0 / (theta_h * theta_h);
  const double inv_th3 = inv_th2 / theta_h;
  const detail::FlatSets flat(sets);
  std::vector<double> row(sets.size());
  std::vector<double> d_row(sets.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const auto& si = self[ui];
    detail::row_sums<true>(sets[ui], flat, ui + 1, sets.size(), theta_x, row.data(), d_row.data());
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const auto& sj = self[static_cast<std::size_t>(j)];
      const auto off = static_cast<std::size_t>(j - i - 1);
      const double d2 = detail::squared_distance(si.corr, sj.corr, row[off]);
      const double r = std::exp(-0.5 * d2 * inv_th2);
      const double dh = r * d2 * inv_th3;
      const double dx = -0.5 * inv_th2 * r * (si.d_corr + sj.d_corr - 2.0 * d_row[off]);
      out.corr(i, j) = out.corr(j, i) = r;
      out.d_theta_h(i, j) = out.d_theta_h(j, i) = dh;
      out.d_theta_x(i, j) = out.d_theta_x(j, i) = dx;
    }
  }
  return out;
}

/// Finite base set X_c = (x_1, ..., x_c) of pairwise distinct points.
class GroundSet {
 public:
  explicit GroundSet(std::vector<Point> elements) : elements_(std::move(elements)) {
    if (elements_.empty()) throw InputError("GroundSet: no elements");
    const Eigen::Index d = elements_.front().size();
    for (std::size_t i = 0; i < elements_.size(); ++i) {
      const auto& e = elements_[i];
      if (e.size() != d) throw InputError("GroundSet: elements of different dimension");
      if (!e.allFinite()) throw InputError("GroundSet: non-finite coordinate");
      std::vector<double> key(e.data(), e.data() + e.size());
      if (!index_.emplace(std::move(key), i).second)
        throw InputError("GroundSet: duplicate element " + std::to_string(i));
    }
  }

  std::size_t size() const noexcept { return elements_.size(); }
  Eigen::Index dimension() const noexcept { return elements_.front().size(); }
  const Point& element(std::size_t i) const { return elements_.at(i); }
  const std::vector<Point>& elements() const noexcept { return elements_; }

  template <class Derived>
  std::optional<std::size_t> index_of(const Eigen::DenseBase<Derived>& x) const {
    std::vector<double> key(static_cast<std::size_t>(x.size()));
    for (Eigen::Index i = 0; i < x.size(); ++i) key[static_cast<std::size_t>(i)] = x.derived().coeff(i);
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  void check_subset(std::span<const std::size_t> indices) const {
    if (indices.empty()) throw InputError("subset: empty index list");
    std::vector<std::size_t> sorted(indices.begin(), indices.end());
    std::sort(sorted.begin(), sorted.end());
    if (sorted.back() >= elements_.size())
      throw InputError("subset: index " + std::to_string(sorted.back()) + " out of range");
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw InputError("subset: repeated index");
  }

  PointSet subset(std::span<const std::size_t> indices) const {
    check_subset(indices);
    std::vector<Point> pts;
    pts.reserve(indices.size());
    for (auto i : indices) pts.push_back(elements_[i]);
    return PointSet(std::span<const Point>(pts));
  }

 private:
  std::vector<Point> elements_;
  std::map<std::vector<double>, std::size_t> index_;
};

/// Double sum Gram matrix over subsets of a finite ground set, assembled as
/// U^T K_X U with column j of U equal to 1/#S_j on the members of S_j.
inline Eigen::MatrixXd ds_gram_finite(const GroundSet& ground,
                                      std::span<const std::vector<std::size_t>> subsets,
                                      const InnerKernelParams& p) {
  detail::check_params(p);
  if (subsets.empty()) throw InputError("ds_gram_finite: no subsets");
  const auto c = static_cast<Eigen::Index>(ground.size());
  Eigen::MatrixXd kx(c, c);
  for (Eigen::Index i = 0; i < c; ++i) {
    kx(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < c; ++j)
      kx(i, j) = kx(j, i) = inner_corr(ground.element(static_cast<std::size_t>(i)),
                                       ground.element(static_cast<std::size_t>(j)), p);
  }
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(c, static_cast<Eigen::Index>(subsets.size()));
  for (std::size_t j = 0; j < subsets.size(); ++j) {
    ground.check_subset(subsets[j]);
    const double w = 1.0 / static_cast<double>(subsets[j].size());
    for (auto i : subsets[j]) u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = w;
  }
  Eigen::MatrixXd k = u.transpose() * kx * u;
  // Exact symmetry for downstream factorizations.
  return (0.5 * (k + k.transpose())).eval();
}

inline double condition_from_extremes(double lmin, double lmax) {
  if (!(lmax > 0.0) || lmin <= std::numeric_limits<double>::epsilon() * lmax)
    return std::numeric_limits<double>::infinity();
  return lmax / lmin;
}

/// 2-norm condition number lambda_max / lambda_min of a symmetric PSD matrix;
/// +infinity once lambda_min <= eps * lambda_max.
inline double condition_number(const Eigen::MatrixXd& r) {
  if (r.rows() != r.cols() || r.rows() == 0) throw InputError("condition_number: not square");
  const double scale = r.cwiseAbs().maxCoeff();
  if (((r - r.transpose()).cwiseAbs().array() > 1e-12 * scale).any())
    throw InputError("condition_number: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r, Eigen::EigenvaluesOnly);
  return condition_from_extremes(eig.eigenvalues().minCoeff(), eig.eigenvalues().maxCoeff());
}

/// Smallest diagonal shift delta such that (lambda_max + delta) / (lambda_min + delta) <= e^a,
/// given kappa = lambda_max / lambda_min (possibly +infinity). Clamped at 0.
inline double jitter_bound(double lambda_max, double kappa, double a) {
  if (!(a > 0.0) || !std::isfinite(a)) throw InputError("jitter_bound: a must be positive");
  if (!(lambda_max > 0.0) || !std::isfinite(lambda_max))
    throw InputError("jitter_bound: lambda_max must be positive");
  if (!(kappa >= 1.0)) throw InputError("jitter_bound: kappa must be >= 1");
  const double ea = std::exp(a);
  const double raw = std::isinf(kappa) ? lambda_max / (ea - 1.0)
                                       : lambda_max * (kappa - ea) / (kappa * (ea - 1.0));
  return std::max(0.0, raw);
}

}  // namespace setgp
