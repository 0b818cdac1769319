#pragma once

#include "qsdlab/core.hpp"

#include <optional>

namespace qsdlab {

// Regular grid of nodes (endpoints included) over a box, or over the probability simplex
// through the chart that drops the last coordinate. Nodes are addressed by a dense id over
// the active nodes; on the simplex a node is active iff its chart indices sum to <= cells.
class Grid {
 public:
  static Grid box(Vec lo, Vec hi, std::vector<int> cells) {
    if (lo.size() != hi.size() || lo.size() != static_cast<Eigen::Index>(cells.size()) || lo.size() == 0)
      throw DomainError("Grid::box: dimension mismatch");
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (cells[i] < 1 || !(hi[static_cast<Eigen::Index>(i)] > lo[static_cast<Eigen::Index>(i)]))
        throw DomainError("Grid::box: need hi > lo and at least one cell per axis");
    Grid g;
    g.lo_ = std::move(lo);
    g.hi_ = std::move(hi);
    g.cells_ = std::move(cells);
    g.finish();
    return g;
  }
  static Grid box(const Vec& lo, const Vec& hi, int cells) {
    return box(lo, hi, std::vector<int>(static_cast<std::size_t>(lo.size()), cells));
  }
  static Grid simplex(int k, int cells) {
    if (k < 2 || cells < 1) throw DomainError("Grid::simplex: need k >= 2 and cells >= 1");
    Grid g;
    g.simplex_ = true;
    g.lo_ = Vec::Zero(k - 1);
    g.hi_ = Vec::Ones(k - 1);
    g.cells_.assign(static_cast<std::size_t>(k - 1), cells);
    g.finish();
    return g;
  }

  bool is_simplex() const { return simplex_; }
  int chart_dim() const { return static_cast<int>(cells_.size()); }
  int ambient_dim() const { return chart_dim() + (simplex_ ? 1 : 0); }
  std::size_t size() const { return ids_.size(); }
  const std::vector<int>& cells() const { return cells_; }
  const Vec& lo() const { return lo_; }
  const Vec& hi() const { return hi_; }
  double spacing(int axis) const { return (hi_[axis] - lo_[axis]) / cells_[static_cast<std::size_t>(axis)]; }
  double spacing() const {
    double h = 0.0;
    for (int i = 0; i < chart_dim(); ++i) h = std::max(h, spacing(i));
    return h;
  }

  std::vector<int> index(std::size_t id) const {
    std::size_t flat = ids_[id];
    std::vector<int> idx(cells_.size());
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      idx[i] = static_cast<int>(flat % static_cast<std::size_t>(cells_[i] + 1));
      flat /= static_cast<std::size_t>(cells_[i] + 1);
    }
    return idx;
  }

  Vec chart_point(std::size_t id) const {
    const auto idx = index(id);
    Vec u(chart_dim());
    for (int i = 0; i < chart_dim(); ++i) u[i] = coord(i, idx[static_cast<std::size_t>(i)]);
    return u;
  }

  // Ambient coordinates; on the simplex the last coordinate is exactly zero on the far face.
  Vec point(std::size_t id) const {
    const auto idx = index(id);
    Vec x(ambient_dim());
    int used = 0;
    for (int i = 0; i < chart_dim(); ++i) {
      x[i] = coord(i, idx[static_cast<std::size_t>(i)]);
      used += idx[static_cast<std::size_t>(i)];
    }
    if (simplex_) x[chart_dim()] = static_cast<double>(cells_[0] - used) / cells_[0];
    return x;
  }

  std::optional<std::size_t> id_of(const std::vector<int>& idx) const {
    std::size_t flat = 0, mult = 1;
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      if (idx[i] < 0 || idx[i] > cells_[i]) return std::nullopt;
      flat += static_cast<std::size_t>(idx[i]) * mult;
      mult *= static_cast<std::size_t>(cells_[i] + 1);
    }
    const auto id = flat_to_id_[flat];
    if (id < 0) return std::nullopt;
    return static_cast<std::size_t>(id);
  }

  // Node nearest to an ambient point (clamped into the grid).
  std::size_t nearest(const Vec& x) const {
    std::vector<int> idx(cells_.size());
    for (int i = 0; i < chart_dim(); ++i) {
      const double t = std::round((x[i] - lo_[i]) / spacing(i));
      idx[static_cast<std::size_t>(i)] = static_cast<int>(std::clamp(t, 0.0, static_cast<double>(cells_[static_cast<std::size_t>(i)])));
    }
    if (simplex_) {
      int s = 0;
      for (int v : idx) s += v;
      while (s > cells_[0]) {
        // lower the coordinate with the largest rounding excess
        std::size_t best = 0;
        double excess = -kInf;
        for (std::size_t i = 0; i < idx.size(); ++i) {
          const double e = idx[i] - (x[static_cast<Eigen::Index>(i)] - lo_[static_cast<Eigen::Index>(i)]) / spacing(static_cast<int>(i));
          if (idx[i] > 0 && e > excess) {
            excess = e;
            best = i;
          }
        }
        --idx[best];
        --s;
      }
    }
    return *id_of(idx);
  }

  // Calls fn(id) for every active node whose chart coordinates lie within `radius`
  // (sup norm) of the chart coordinates of x.
  template <class Fn>
  void for_each_near(const Vec& x, double radius, Fn&& fn) const {
    const int m = chart_dim();
    std::vector<int> a(static_cast<std::size_t>(m)), b(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      const double h = spacing(i);
      a[static_cast<std::size_t>(i)] = std::max(0, static_cast<int>(std::ceil((x[i] - radius - lo_[i]) / h - 1e-9)));
      b[static_cast<std::size_t>(i)] =
          std::min(cells_[static_cast<std::size_t>(i)], static_cast<int>(std::floor((x[i] + radius - lo_[i]) / h + 1e-9)));
      if (a[static_cast<std::size_t>(i)] > b[static_cast<std::size_t>(i)]) return;
    }
    std::vector<int> idx = a;
    for (;;) {
      if (auto id = id_of(idx)) fn(*id);
      int i = 0;
      while (i < m && ++idx[static_cast<std::size_t>(i)] > b[static_cast<std::size_t>(i)]) {
        idx[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)];
        ++i;
      }
      if (i == m) break;
    }
  }

 private:
  double coord(int axis, int i) const {
    // exact at both ends of the axis
    if (i == cells_[static_cast<std::size_t>(axis)]) return hi_[axis];
    return lo_[axis] + (hi_[axis] - lo_[axis]) * (static_cast<double>(i) / cells_[static_cast<std::size_t>(axis)]);
  }

  void finish() {
    std::size_t total = 1;
    for (int c : cells_) {
      if (total > (std::size_t{1} << 40) / static_cast<std::size_t>(c + 1)) throw BudgetError("Grid: too many nodes");
      total *= static_cast<std::size_t>(c + 1);
    }
    flat_to_id_.assign(total, -1);
    for (std::size_t f = 0; f < total; ++f) {
      std::size_t rest = f;
      int s = 0;
      for (int c : cells_) {
        s += static_cast<int>(rest % static_cast<std::size_t>(c + 1));
        rest /= static_cast<std::size_t>(c + 1);
      }
      if (simplex_ && s > cells_[0]) continue;
      flat_to_id_[f] = static_cast<std::int64_t>(ids_.size());
      ids_.push_back(f);
    }
  }

  bool simplex_ = false;
  Vec lo_, hi_;
  std::vector<int> cells_;
  std::vector<std::size_t> ids_;
  std::vector<std::int64_t> flat_to_id_;
};

}  // namespace qsdlab
