#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <numbers>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "setgp/errors.hpp"
#include "setgp/gp.hpp"
#include "setgp/kernels.hpp"
#include "setgp/point_set.hpp"

namespace setgp {

/// Branin-Hoo on the unit square, affinely mapped onto [-5, 10] x [0, 15].
template <class Derived>
double branin(const Eigen::DenseBase<Derived>& u) {
  if (u.size() != 2) throw InputError("branin: point must be 2-dimensional");
  const double u1 = u.derived().coeff(0);
  const double u2 = u.derived().coeff(1);
  if (!(u1 >= 0.0 && u1 <= 1.0 && u2 >= 0.0 && u2 <= 1.0))
    throw InputError("branin: point outside the unit square");
  constexpr double pi = std::numbers::pi;
  const double x1 = -5.0 + 15.0 * u1;
  const double x2 = 15.0 * u2;
  const double b = 5.1 / (4.0 * pi * pi);
  const double c = 5.0 / pi;
  const double t = 1.0 / (8.0 * pi);
  const double inner = x2 - b * x1 * x1 + c * x1 - 6.0;
  return inner * inner + 10.0 * (1.0 - t) * std::cos(x1) + 10.0;
}

/// Subset-selection stand-in: choose p of m ground points so that the
/// nearest-selected-point distance map over a grid stays close to the map of the
/// full ground set. f(S) = sum_t (g(t, S_full) - g(t, S))^2 with
/// g(t, S) = min_{x in S} |t - x|.
class CombinatorialProblem {
 public:
  CombinatorialProblem(GroundSet ground, std::size_t subset_size, std::size_t grid_resolution)
      : ground_(std::move(ground)), subset_size_(subset_size) {
    if (ground_.dimension() != 2) throw InputError("CombinatorialProblem: ground points must be 2D");
    if (subset_size_ < 1 || subset_size_ > ground_.size())
      throw InputError("CombinatorialProblem: subset size must be in [1, m]");
    if (grid_resolution < 20) throw InputError("CombinatorialProblem: grid resolution must be >= 20");
    const auto res = static_cast<Eigen::Index>(grid_resolution);
    grid_.resize(res * res, 2);
    for (Eigen::Index i = 0; i < res; ++i)
      for (Eigen::Index j = 0; j < res; ++j) {
        grid_(i * res + j, 0) = (static_cast<double>(i) + 0.5) / static_cast<double>(res);
        grid_(i * res + j, 1) = (static_cast<double>(j) + 0.5) / static_cast<double>(res);
      }
    std::vector<std::size_t> all(ground_.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    full_scores_ = scores(all);
  }

  /// m ground points drawn uniformly in the unit square.
  static CombinatorialProblem random(std::size_t m, std::size_t subset_size,
                                     std::size_t grid_resolution, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<Point> pts;
    pts.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
      Point x(2);
      x << unif(rng), unif(rng);
      pts.push_back(std::move(x));
    }
    return CombinatorialProblem(GroundSet(std::move(pts)), subset_size, grid_resolution);
  }

  const GroundSet& ground() const noexcept { return ground_; }
  std::size_t subset_size() const noexcept { return subset_size_; }
  const Eigen::ArrayX2d& grid() const noexcept { return grid_; }

  double evaluate(std::span<const std::size_t> subset) const {
    ground_.check_subset(subset);
    if (subset.size() != subset_size_)
      throw InputError("eval_combinatorial: subset has " + std::to_string(subset.size()) +
                       " elements, expected " + std::to_string(subset_size_));
    const Eigen::ArrayXd g = scores(subset);
    return (full_scores_ - g).square().sum();
  }

  /// All p-subsets of the ground set in lexicographic order.
  std::vector<std::vector<std::size_t>> enumerate_subsets() const {
    std::vector<std::vector<std::size_t>> out;
    const std::size_t m = ground_.size();
    std::vector<std::size_t> idx(subset_size_);
    for (std::size_t i = 0; i < subset_size_; ++i) idx[i] = i;
    while (true) {
      out.push_back(idx);
      std::size_t k = subset_size_;
      while (k > 0 && idx[k - 1] == m - subset_size_ + (k - 1)) --k;
      if (k == 0) break;
      ++idx[k - 1];
      for (std::size_t j = k; j < subset_size_; ++j) idx[j] = idx[j - 1] + 1;
    }
    return out;
  }

 private:
  Eigen::ArrayXd scores(std::span<const std::size_t> subset) const {
    Eigen::ArrayXd g = Eigen::ArrayXd::Constant(grid_.rows(), std::numeric_limits<double>::infinity());
    for (auto i : subset) {
      const Point& x = ground_.element(i);
      const Eigen::ArrayXd dist =
          ((grid_.col(0) - x[0]).square() + (grid_.col(1) - x[1]).square()).sqrt();
      g = g.min(dist);
    }
    return g;
  }

  GroundSet ground_;
  std::size_t subset_size_;
  Eigen::ArrayX2d grid_;
  Eigen::ArrayXd full_scores_;
};

inline double eval_combinatorial(const CombinatorialProblem& problem,
                                 std::span<const std::size_t> subset) {
  return problem.evaluate(subset);
}

enum class ObjectiveKind { Max, Min, Mean, Combinatorial, External };

inline const char* to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::Max: return "max";
    case ObjectiveKind::Min: return "min";
    case ObjectiveKind::Mean: return "mean";
    case ObjectiveKind::Combinatorial: return "combinatorial";
    case ObjectiveKind::External: return "external";
  }
  return "?";
}

struct SetObjective {
  ObjectiveKind kind = ObjectiveKind::Mean;
  std::shared_ptr<const CombinatorialProblem> problem;  // Combinatorial only

  static SetObjective max() { return {ObjectiveKind::Max, nullptr}; }
  static SetObjective min() { return {ObjectiveKind::Min, nullptr}; }
  static SetObjective mean() { return {ObjectiveKind::Mean, nullptr}; }
  static SetObjective combinatorial(std::shared_ptr<const CombinatorialProblem> p) {
    if (!p) throw InputError("combinatorial objective needs a problem");
    return {ObjectiveKind::Combinatorial, std::move(p)};
  }
};

/// Max / min / mean of Branin over the points of S, or the combinatorial
/// objective for sets made of ground points.
inline double eval_set_objective(const SetObjective& obj, const PointSet& s) {
  switch (obj.kind) {
    case ObjectiveKind::Max:
    case ObjectiveKind::Min:
    case ObjectiveKind::Mean: {
      if (s.dimension() != 2) throw InputError("Branin set objectives need 2D points");
      double mx = -std::numeric_limits<double>::infinity();
      double mn = std::numeric_limits<double>::infinity();
      double sum = 0.0;
      for (Eigen::Index i = 0; i < s.size(); ++i) {
        const double g = branin(s.point(i));
        mx = std::max(mx, g);
        mn = std::min(mn, g);
        sum += g;
      }
      if (obj.kind == ObjectiveKind::Max) return mx;
      if (obj.kind == ObjectiveKind::Min) return mn;
      return sum / static_cast<double>(s.size());
    }
    case ObjectiveKind::Combinatorial: {
      const auto& ground = obj.problem->ground();
      if (s.dimension() != ground.dimension()) throw InputError("combinatorial: dimension mismatch");
      std::vector<std::size_t> idx;
      for (Eigen::Index i = 0; i < s.size(); ++i) {
        auto k = ground.index_of(s.point(i));
        if (!k) throw InputError("combinatorial: point is not a ground-set element");
        idx.push_back(*k);
      }
      return obj.problem->evaluate(idx);
    }
    case ObjectiveKind::External:
      break;
  }
  throw InputError("external objectives have no evaluator; load their values from CSV");
}

/// n sets of p i.i.d. uniform points in the unit square (or n random p-subsets of
/// the ground set for the combinatorial kind), paired with objective values.
inline SetDataset generate_dataset(const SetObjective& obj, std::size_t n, std::size_t p,
                                   std::uint64_t seed) {
  if (n < 1 || p < 1) throw InputError("generate_dataset: n and p must be >= 1");
  std::mt19937_64 rng(seed);
  SetDataset out;
  if (obj.kind == ObjectiveKind::Combinatorial) {
    const auto& prob = *obj.problem;
    if (p != prob.subset_size()) throw InputError("generate_dataset: p must equal the subset size");
    // Distinct subsets only: a repeated design makes every Gram matrix singular.
    const std::size_t m = prob.ground().size();
    double available = 1.0;
    for (std::size_t i = 0; i < p; ++i)
      available = available * static_cast<double>(m - i) / static_cast<double>(i + 1);
    if (static_cast<double>(n) > available + 0.5)
      throw InputError("generate_dataset: more sets requested than distinct subsets exist");
    std::vector<std::size_t> all(m);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::set<std::vector<std::size_t>> seen;
    while (out.size() < n) {
      std::shuffle(all.begin(), all.end(), rng);
      std::vector<std::size_t> sub(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(p));
      std::sort(sub.begin(), sub.end());
      if (!seen.insert(sub).second) continue;
      out.add(prob.ground().subset(sub), prob.evaluate(sub));
    }
    return out;
  }
  if (obj.kind == ObjectiveKind::External) throw InputError("generate_dataset: external objective");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  PointSet::Coords coords(static_cast<Eigen::Index>(p), 2);
  for (std::size_t k = 0; k < n; ++k) {
    for (Eigen::Index i = 0; i < coords.size(); ++i) coords.data()[i] = unif(rng);
    PointSet s(coords);
    const double y = eval_set_objective(obj, s);
    out.add(std::move(s), y);
  }
  return out;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view tok, std::size_t line) {
  double v = 0.0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw ParseError(line, "not a number: '" + std::string(tok) + "'");
  return v;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? line.size() - start
                                                                     : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace detail

/// CSV layout: header `set_id,point_idx,x1,...,xd,response`, one row per point,
/// the set response repeated on every row of the set.
inline void write_csv(std::ostream& os, const SetDataset& data) {
  data.validate(0);
  os << "set_id,point_idx";
  for (Eigen::Index c = 0; c < data.dimension; ++c) os << ",x" << (c + 1);
  os << ",response\n";
  for (std::size_t k = 0; k < data.size(); ++k) {
    const auto& s = data.sets[k];
    const std::string resp = detail::format_double(data.responses[k]);
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      os << k << ',' << i;
      for (Eigen::Index c = 0; c < s.dimension(); ++c) os << ',' << detail::format_double(s.point(i)[c]);
      os << ',' << resp << '\n';
    }
  }
}

inline SetDataset read_csv(std::istream& is) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line)) throw ParseError(1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_fields(line);
  if (header.size() < 4 || header[0] != "set_id" || header[1] != "point_idx" ||
      header.back() != "response")
    throw ParseError(1, "header must be set_id,point_idx,x1,...,xd,response");
  const auto d = static_cast<Eigen::Index>(header.size() - 3);
  for (Eigen::Index c = 0; c < d; ++c)
    if (header[static_cast<std::size_t>(c) + 2] != "x" + std::to_string(c + 1))
      throw ParseError(1, "expected column x" + std::to_string(c + 1));

  struct Pending {
    std::vector<Point> points;
    double response;
    std::size_t first_line;
  };
  std::vector<Pending> pending;
  std::map<std::string, std::size_t> by_id;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_fields(line);
    if (f.size() != header.size())
      throw ParseError(lineno, "expected " + std::to_string(header.size()) + " fields, got " +
                                   std::to_string(f.size()));
    if (f[0].empty()) throw ParseError(lineno, "empty set_id");
    Point x(d);
    for (Eigen::Index c = 0; c < d; ++c)
      x[c] = detail::parse_double(f[static_cast<std::size_t>(c) + 2], lineno);
    const double y = detail::parse_double(f.back(), lineno);
    if (!x.allFinite() || !std::isfinite(y)) throw ParseError(lineno, "non-finite value");
    auto [it, inserted] = by_id.emplace(std::string(f[0]), pending.size());
    if (inserted) {
      pending.push_back({{}, y, lineno});
    } else if (pending[it->second].response != y) {
      throw ParseError(lineno, "response differs from earlier rows of set " + it->first);
    }
    pending[it->second].points.push_back(std::move(x));
  }
  SetDataset out;
  out.dimension = d;
  for (auto& p : pending) out.add(PointSet(std::span<const Point>(p.points)), p.response);
  return out;
}

inline void save_csv(const std::string& path, const SetDataset& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open " + path + " for writing");
  write_csv(os, data);
}

inline SetDataset load_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path);
  return read_csv(is);
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded uniform partition of [0, n): floor(ratio * n) training indices, the
/// rest for testing, both sorted.
inline SplitIndices split_indices(std::size_t n, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InputError("split: ratio must be in (0, 1)");
  const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  if (n_train == 0 || n_train == n) throw InputError("split: empty training or test part");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  SplitIndices out;
  out.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

inline std::pair<SetDataset, SetDataset> split(const SetDataset& data, double ratio,
                                               std::uint64_t seed) {
  const auto idx = split_indices(data.size(), ratio, seed);
  return {data.select(idx.train), data.select(idx.test)};
}

}  // namespace setgp
