#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <compare>
#include <numeric>
#include <span>
#include <vector>

#include "setgp/errors.hpp"

namespace setgp {

using Point = Eigen::VectorXd;

/// A nonempty finite set of points in R^d, always held in canonical form:
/// exact duplicates removed and points sorted lexicographically by coordinates.
/// Equal sets therefore have identical storage, which makes every kernel value
/// computed from them bit-reproducible.
class PointSet {
 public:
  using Coords = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  /// Rows of `points` are the points.
  explicit PointSet(const Coords& points) { assign(points); }

  explicit PointSet(std::span<const Point> points) {
    if (points.empty()) throw InputError("PointSet: empty set");
    const Eigen::Index d = points.front().size();
    Coords coords(static_cast<Eigen::Index>(points.size()), d);
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (points[i].size() != d) throw InputError("PointSet: points of different dimension");
      coords.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
    }
    assign(coords);
  }

  PointSet(std::initializer_list<std::initializer_list<double>> points) {
    if (points.size() == 0) throw InputError("PointSet: empty set");
    const auto d = static_cast<Eigen::Index>(points.begin()->size());
    Coords coords(static_cast<Eigen::Index>(points.size()), d);
    Eigen::Index r = 0;
    for (const auto& p : points) {
      if (static_cast<Eigen::Index>(p.size()) != d)
        throw InputError("PointSet: points of different dimension");
      Eigen::Index c = 0;
      for (double v : p) coords(r, c++) = v;
      ++r;
    }
    assign(coords);
  }

  Eigen::Index size() const noexcept { return coords_.rows(); }
  Eigen::Index dimension() const noexcept { return coords_.cols(); }
  const Coords& coords() const noexcept { return coords_; }
  auto point(Eigen::Index i) const { return coords_.row(i); }

  friend bool operator==(const PointSet& a, const PointSet& b) {
    return a.coords_.rows() == b.coords_.rows() && a.coords_.cols() == b.coords_.cols() &&
           a.coords_ == b.coords_;
  }

  /// Total order: by dimension, then cardinality, then lexicographic coordinates.
  friend std::strong_ordering operator<=>(const PointSet& a, const PointSet& b) {
    if (auto c = a.dimension() <=> b.dimension(); c != 0) return c;
    if (auto c = a.size() <=> b.size(); c != 0) return c;
    const double* x = a.coords_.data();
    const double* y = b.coords_.data();
    for (Eigen::Index i = 0; i < a.coords_.size(); ++i) {
      if (x[i] < y[i]) return std::strong_ordering::less;
      if (x[i] > y[i]) return std::strong_ordering::greater;
    }
    return std::strong_ordering::equal;
  }

 private:
  void assign(const Coords& points) {
    if (points.rows() == 0) throw InputError("PointSet: empty set");
    if (points.cols() == 0) throw InputError("PointSet: zero-dimensional points");
    if (!points.allFinite()) throw InputError("PointSet: non-finite coordinate");

    const Eigen::Index n = points.rows();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    auto row_less = [&](Eigen::Index i, Eigen::Index j) {
      for (Eigen::Index c = 0; c < points.cols(); ++c) {
        if (points(i, c) < points(j, c)) return true;
        if (points(i, c) > points(j, c)) return false;
      }
      return false;
    };
    std::sort(order.begin(), order.end(), row_less);
    order.erase(std::unique(order.begin(), order.end(),
                            [&](Eigen::Index i, Eigen::Index j) {
                              return points.row(i) == points.row(j);
                            }),
                order.end());

    coords_.resize(static_cast<Eigen::Index>(order.size()), points.cols());
    for (std::size_t r = 0; r < order.size(); ++r)
      coords_.row(static_cast<Eigen::Index>(r)) = points.row(order[r]);
  }

  Coords coords_;
};

}  // namespace setgp
