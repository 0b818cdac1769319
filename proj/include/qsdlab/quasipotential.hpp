#pragma once

#include "qsdlab/graph.hpp"
#include "qsdlab/grid.hpp"
#include "qsdlab/parallel.hpp"
#include "qsdlab/rate.hpp"

#include <fstream>
#include <iomanip>
#include <queue>

namespace qsdlab {

// Grid Dijkstra approximation of the quasipotential B(source, .).
struct CostField {
  Grid grid;
  std::size_t source = 0;
  int stencil_radius = 0;
  std::vector<double> values;  // +inf where unreachable
  std::vector<std::int64_t> predecessor;

  ExtendedReal value_at(const Vec& x) const { return ExtendedReal(values[grid.nearest(x)]); }

  std::vector<std::size_t> path_to(std::size_t target) const {
    std::vector<std::size_t> path;
    if (std::isinf(values[target])) return path;
    for (auto u = static_cast<std::int64_t>(target); u >= 0; u = predecessor[static_cast<std::size_t>(u)])
      path.push_back(static_cast<std::size_t>(u));
    std::reverse(path.begin(), path.end());
    return path;
  }

  void write_csv(std::ostream& os) const {
    os << std::setprecision(17);
    for (int i = 0; i < grid.ambient_dim(); ++i) os << "x" << i << ",";
    os << "value\n";
    for (std::size_t u = 0; u < grid.size(); ++u) {
      const Vec p = grid.point(u);
      for (Eigen::Index i = 0; i < p.size(); ++i) os << p[i] << ",";
      if (std::isinf(values[u]))
        os << "inf\n";
      else
        os << values[u] << "\n";
    }
  }
};

namespace detail {

// Calls fn(v, rho(u, v)) for each stencil neighbour v of u with finite rate. Cells in M0
// have no outgoing edges unless `from_absorbing` is set.
template <class Fn>
void for_each_rate_edge(const RateFunction& rf, const Grid& grid, std::size_t u, int radius, Fn&& fn) {
  const Vec x = grid.point(u);
  const bool absorbed = rf.model().in_absorbing(x);
  const Vec Fx = rf.model()(x);
  const Vec c = grid.point(grid.nearest(Fx));
  grid.for_each_near(c, radius * grid.spacing() * (1.0 + 1e-9), [&](std::size_t v) {
    const ExtendedReal r = rf.rate_from_image(Fx, absorbed, grid.point(v));
    if (r.is_finite()) fn(v, r.value());
  });
}

}  // namespace detail

inline int default_stencil_radius(const RateFunction& rf, const Grid& grid, double epsilon) {
  // about four standard deviations of a single step at the working noise level
  const double sd = rf.kind() == KernelKind::poisson ? std::sqrt(rf.model().sup_bound() * epsilon)
                                                     : std::sqrt(0.25 * epsilon);
  return std::max(1, static_cast<int>(std::ceil(4.0 * sd / grid.spacing())));
}

inline CostField quasipotential(const RateFunction& rf, const Grid& grid, const Vec& source, int stencil_radius) {
  if (grid.ambient_dim() != rf.dim()) throw DomainError("quasipotential: grid/model dimension mismatch");
  if (stencil_radius < 1) throw DomainError("quasipotential: stencil radius must be >= 1");
  for (int i = 0; i < grid.chart_dim(); ++i)
    if (source[i] < grid.lo()[i] - 0.5 * grid.spacing(i) || source[i] > grid.hi()[i] + 0.5 * grid.spacing(i))
      throw DomainError("quasipotential: source outside the grid box");
  CostField cf{grid, grid.nearest(source), stencil_radius, {}, {}};
  if (rf.model().in_absorbing(grid.point(cf.source))) throw DomainError("quasipotential: source cell lies in M0");
  const std::size_t n = grid.size();
  cf.values.assign(n, kInf);
  cf.predecessor.assign(n, -1);
  std::vector<char> done(n, 0);
  using Item = std::pair<double, std::size_t>;  // equal costs pop in node rank order
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  cf.values[cf.source] = 0.0;
  heap.emplace(0.0, cf.source);
  bool source_has_edge = false;
  while (!heap.empty()) {
    const auto [d, u] = heap.top();
    heap.pop();
    if (done[u]) continue;
    done[u] = 1;
    if (rf.model().in_absorbing(grid.point(u))) continue;  // targets only
    detail::for_each_rate_edge(rf, grid, u, stencil_radius, [&](std::size_t v, double w) {
      if (u == cf.source) source_has_edge = true;
      const double nd = d + w;
      if (nd < cf.values[v]) {
        cf.values[v] = nd;
        cf.predecessor[v] = static_cast<std::int64_t>(u);
        heap.emplace(nd, v);
      }
    });
    if (u == cf.source && !source_has_edge)
      throw DomainError("quasipotential: every outgoing edge of the source cell has infinite cost");
  }
  return cf;
}

// Largest violation of value(v) <= value(u) + rho(u, v) over all stencil edges.
inline double max_triangle_violation(const CostField& cf, const RateFunction& rf) {
  double worst = 0.0;
  for (std::size_t u = 0; u < cf.grid.size(); ++u) {
    if (std::isinf(cf.values[u]) || rf.model().in_absorbing(cf.grid.point(u))) continue;
    detail::for_each_rate_edge(rf, cf.grid, u, cf.stencil_radius, [&](std::size_t v, double w) {
      worst = std::max(worst, cf.values[v] - (cf.values[u] + w));
    });
  }
  return worst;
}

// Default eta: ten times the median of rho(u, snap(F(u))) over M1 cells.
inline double default_eta(const RateFunction& rf, const Grid& grid) {
  std::vector<double> v;
  for (std::size_t u = 0; u < grid.size(); ++u) {
    const Vec x = grid.point(u);
    if (rf.model().in_absorbing(x)) continue;
    const Vec Fx = rf.model()(x);
    const auto r = rf.rate_from_image(Fx, false, grid.point(grid.nearest(Fx)));
    if (r.is_finite()) v.push_back(r.value());
  }
  if (v.empty()) return 1e-9;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
  return std::max(10.0 * v[v.size() / 2], 1e-12);
}

// Classes of the graph u -> v iff rho(u, v) <= eta. Cells in M0 keep only their edges into M0.
inline BasicClassReport rho_basic_classes(const RateFunction& rf, const Grid& grid, double eta, unsigned threads = 1) {
  if (!(eta > 0.0)) throw DomainError("rho_basic_classes: eta must be > 0");
  if (grid.ambient_dim() != rf.dim()) throw DomainError("rho_basic_classes: grid/model dimension mismatch");
  const std::size_t n = grid.size();
  std::vector<char> absorbing(n);
  for (std::size_t u = 0; u < n; ++u) absorbing[u] = rf.model().in_absorbing(grid.point(u)) ? 1 : 0;
  // rho <= eta forces |y - F|_inf <= sqrt(2 eta (sup F + 1)) for either kernel
  const double reach = std::sqrt(2.0 * eta * (rf.model().sup_bound() + 1.0)) + grid.spacing();
  const int radius = static_cast<int>(std::ceil(reach / grid.spacing()));
  std::vector<std::vector<std::uint32_t>> adj(n);
  parallel_for(n, threads, [&](std::size_t u) {
    detail::for_each_rate_edge(rf, grid, u, radius, [&](std::size_t v, double w) {
      if (w <= eta) adj[u].push_back(static_cast<std::uint32_t>(v));
    });
  });
  auto rep = recurrent_classes(Digraph::from_lists(std::move(adj)), absorbing);
  rep.delta = eta;
  if (std::none_of(rep.classes.begin(), rep.classes.end(), [](const BasicClass& c) { return c.in_M1; }))
    rep.warnings.push_back("no recurrent class in M1 (eta may be too small, or M0 attracts everything)");
  return rep;
}

}  // namespace qsdlab
