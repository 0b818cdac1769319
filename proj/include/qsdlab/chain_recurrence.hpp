#pragma once

#include "qsdlab/dynamics.hpp"
#include "qsdlab/graph.hpp"
#include "qsdlab/grid.hpp"
#include "qsdlab/parallel.hpp"
#include "qsdlab/random.hpp"

#include <ostream>
#include <sstream>

namespace qsdlab {

// Absorption-preserving delta-pseudoorbit graph on grid nodes: u -> v iff
// |F(u) - v|_inf < delta + h/2, and never from an M0 node to an M1 node.
struct PseudoorbitGraph {
  Grid grid;
  double delta = 0.0;
  Digraph graph;
  std::vector<char> absorbing;
  // Outer cell map: F(cell u) lies within spread[u] of F(center u), estimated from the
  // images of the cell corners.
  std::vector<double> images;  // F(center u), ambient, row-major by node
  std::vector<double> spread;
  std::vector<std::string> warnings;

  Eigen::Map<const Vec> image(std::size_t u) const {
    const auto k = static_cast<std::size_t>(grid.ambient_dim());
    return {images.data() + u * k, static_cast<Eigen::Index>(k)};
  }
};

// Box [0, sup F + 1]^k, or the simplex, with the default resolution.
inline Grid default_chainrec_grid(const MapModel& model, int cells = 0) {
  if (model.simplex_domain()) {
    if (model.dim() > 3 && cells == 0) throw BudgetError("default_chainrec_grid: give a resolution for k > 3");
    return Grid::simplex(model.dim(), cells > 0 ? cells : (model.dim() <= 2 ? 200 : 80));
  }
  if (model.dim() > 3 && cells == 0) throw BudgetError("default_chainrec_grid: give a resolution for k > 3");
  const int c = cells > 0 ? cells : (model.dim() <= 2 ? 200 : 80);
  return Grid::box(Vec::Zero(model.dim()), Vec::Constant(model.dim(), model.sup_bound() + 1.0), c);
}

inline PseudoorbitGraph build_pseudoorbit_graph(const MapModel& model, const Grid& grid, double delta,
                                                unsigned threads = 1) {
  if (grid.ambient_dim() != model.dim() || grid.is_simplex() != model.simplex_domain())
    throw DomainError("build_pseudoorbit_graph: grid/model dimension mismatch");
  if (!(delta > 0.0)) throw DomainError("build_pseudoorbit_graph: delta must be > 0");
  PseudoorbitGraph pg{grid, delta, {}, {}, {}, {}, {}};
  const std::size_t n = grid.size();
  const double h = grid.spacing();
  const double reach = delta + 0.5 * h;
  if (delta < h) pg.warnings.push_back("delta is below one cell width; some nodes may have no successor");
  pg.absorbing.resize(n);
  for (std::size_t u = 0; u < n; ++u) pg.absorbing[u] = model.in_absorbing(grid.point(u)) ? 1 : 0;
  const auto k = static_cast<std::size_t>(grid.ambient_dim());
  pg.images.resize(n * k);
  pg.spread.resize(n);
  const Chart ch = chart_for(model);
  const int m = grid.chart_dim();
  std::vector<std::vector<std::uint32_t>> adj(n);
  parallel_for(n, threads, [&](std::size_t u) {
    const Vec Fu = model(grid.point(u));
    for (std::size_t i = 0; i < k; ++i) pg.images[u * k + i] = Fu[static_cast<Eigen::Index>(i)];
    double sp = 0.0;
    const Vec c = grid.chart_point(u);
    for (std::size_t mask = 0; mask < (std::size_t{1} << m); ++mask) {
      Vec w = c;
      for (int i = 0; i < m; ++i) w[i] += ((mask >> i) & 1U) ? 0.5 * h : -0.5 * h;
      sp = std::max(sp, sup_distance(model(ch.to_ambient(ch.project(w))), Fu));
    }
    pg.spread[u] = sp;
    grid.for_each_near(Fu, reach, [&](std::size_t v) {
      if (pg.absorbing[u] && !pg.absorbing[v]) return;
      if (sup_distance(Fu, grid.point(v)) < reach) adj[u].push_back(static_cast<std::uint32_t>(v));
    });
  });
  pg.graph = Digraph::from_lists(std::move(adj));
  std::size_t sinks = 0;
  for (std::size_t u = 0; u < n; ++u) sinks += pg.graph.offsets[u + 1] == pg.graph.offsets[u];
  if (sinks > 0) pg.warnings.push_back(std::to_string(sinks) + " nodes have no successor (image outside the grid?)");
  return pg;
}

inline BasicClassReport ap_basic_classes(const PseudoorbitGraph& pg) {
  auto rep = recurrent_classes(pg.graph, pg.absorbing);
  rep.delta = pg.delta;
  rep.warnings = pg.warnings;
  const double h = pg.grid.spacing();
  std::vector<std::int64_t> slot(pg.grid.size(), -1);
  for (auto& c : rep.classes) {
    // restrict the outer cell map (no delta) to the class and look for a cycle
    for (std::size_t a = 0; a < c.members.size(); ++a) slot[c.members[a]] = static_cast<std::int64_t>(a);
    std::vector<std::vector<std::uint32_t>> adj(c.members.size());
    for (std::size_t a = 0; a < c.members.size(); ++a) {
      const Vec img = pg.image(c.members[a]);
      const double r = 0.5 * h + pg.spread[c.members[a]] + 1e-12;
      pg.grid.for_each_near(img, r, [&](std::size_t v) {
        if (slot[v] >= 0 && sup_distance(img, pg.grid.point(v)) < r) adj[a].push_back(static_cast<std::uint32_t>(slot[v]));
      });
    }
    for (auto u : c.members) slot[u] = -1;
    const auto sub = Digraph::from_lists(std::move(adj));
    const auto scc = strongly_connected_components(sub);
    bool cycle = false;
    for (std::size_t a = 0; a < sub.size() && !cycle; ++a) {
      auto [b, e] = sub.out(a);
      for (auto p = b; p != e; ++p)
        if (scc.component[*p] == scc.component[a]) cycle = true;
    }
    c.carries_invariant_set = cycle;
  }
  return rep;
}

struct AttractorCertificate {
  std::optional<bool> verdict;  // empty when inconclusive
  std::size_t samples = 0;
  std::size_t escapes = 0;            // sampled p in closure(V) with F(p) outside V
  double worst_image_distance = 0.0;  // max over samples of distance from F(p) to the cells
  std::vector<double> hausdorff;      // max distance of F^n(samples) to the cells, n = 0..n_steps
  std::string note;
};

struct VerifyOptions {
  std::size_t samples_per_cell = 64;
  std::size_t max_samples = 2'000'000;
  std::uint64_t seed = 0x5eed;
};

// Sampled check that V = union of open sup-norm balls of radius `fattening` around the
// cells satisfies F(closure V) in V, and that forward images of closure(V) approach the
// cells. The Hausdorff sequence must end below its start and never rise by more than
// one cell width.
inline AttractorCertificate verify_attractor(const MapModel& model, const Grid& grid,
                                             const std::vector<std::size_t>& cells, double fattening, int n_steps,
                                             const VerifyOptions& opt = {}) {
  if (cells.empty()) throw DomainError("verify_attractor: empty class");
  if (!(fattening > 0.0)) throw DomainError("verify_attractor: fattening must be > 0");
  if (n_steps < 1) throw DomainError("verify_attractor: n_steps must be >= 1");
  AttractorCertificate cert;
  const std::size_t corners = std::size_t{1} << grid.chart_dim();
  if (cells.size() * (opt.samples_per_cell + corners) > opt.max_samples) {
    cert.note = "sampling budget exceeded";
    return cert;
  }
  std::vector<char> member(grid.size(), 0);
  for (auto c : cells) member[c] = 1;
  double diameter = 0.0;
  for (int i = 0; i < grid.chart_dim(); ++i) diameter = std::max(diameter, grid.hi()[i] - grid.lo()[i]);
  // sup distance from x to the nearest member, searching outward from radius `fattening`
  auto dist_to_cells = [&](const Vec& x) {
    for (double r = fattening;; r *= 2.0) {
      double d = kInf;
      grid.for_each_near(x, r, [&](std::size_t v) {
        if (member[v]) d = std::min(d, sup_distance(x, grid.point(v)));
      });
      if (d <= r || r > 4.0 * (diameter + sup_norm(x))) return d;
    }
  };
  const Chart ch = chart_for(model);
  const int m = grid.chart_dim();
  std::vector<Vec> pts;
  RngStream rng(opt.seed);
  for (std::size_t j = 0; j < cells.size(); ++j) {
    const Vec c = grid.chart_point(cells[j]);
    auto add = [&](const Vec& u) {
      if (!ch.contains(u)) return;
      const Vec x = ch.to_ambient(u);
      if (model.in_domain(x) && dist_to_cells(x) <= fattening) pts.push_back(x);
    };
    for (std::size_t mask = 0; mask < corners; ++mask) {
      Vec u = c;
      for (int i = 0; i < m; ++i) u[i] += ((mask >> i) & 1U) ? fattening : -fattening;
      add(u);
    }
    for (std::size_t s = 0; s < opt.samples_per_cell; ++s) {
      Vec u = c;
      for (int i = 0; i < m; ++i) u[i] += fattening * (2.0 * rng.uniform() - 1.0);
      add(u);
    }
  }
  cert.samples = pts.size();
  if (pts.empty()) {
    cert.note = "no sample of closure(V) lies in the domain";
    return cert;
  }
  double h0 = 0.0;
  for (const auto& p : pts) h0 = std::max(h0, dist_to_cells(p));
  cert.hausdorff.push_back(h0);
  for (int n = 1; n <= n_steps; ++n) {
    double hn = 0.0;
    for (auto& p : pts) {
      p = model(p);
      const double d = dist_to_cells(p);
      hn = std::max(hn, d);
      if (n == 1 && !(d < fattening)) ++cert.escapes;
    }
    if (n == 1) cert.worst_image_distance = hn;
    cert.hausdorff.push_back(hn);
  }
  bool shrinking = cert.hausdorff.back() < cert.hausdorff.front();
  for (std::size_t i = 1; i < cert.hausdorff.size(); ++i)
    if (cert.hausdorff[i] > cert.hausdorff[i - 1] + grid.spacing()) shrinking = false;
  cert.verdict = cert.escapes == 0 && shrinking;
  if (cert.escapes > 0) cert.note = "forward image leaves V";
  else if (!shrinking) cert.note = "forward images do not shrink toward the class";
  return cert;
}

struct InvariantSet {
  std::string label;
  std::vector<Vec> points;
};

inline std::vector<InvariantSet> invariant_sets_from(const std::vector<Equilibrium>& eq,
                                                     const std::vector<PeriodicOrbit>& orbits = {}) {
  std::vector<InvariantSet> out;
  for (const auto& e : eq) {
    std::ostringstream os;
    os << "equilibrium(";
    for (Eigen::Index i = 0; i < e.point.size(); ++i) os << (i ? "," : "") << e.point[i];
    os << ")";
    out.push_back({os.str(), {e.point}});
  }
  for (const auto& o : orbits) out.push_back({"period-" + std::to_string(o.period) + " orbit", o.points});
  return out;
}

struct MorseDiagnostic {
  bool consistent = true;
  std::vector<std::int64_t> set_to_class;  // -1 when uncovered or ambiguous
  std::vector<std::string> mismatches;
};

// Matches invariant sets against the principal recurrent classes: each set
// must be covered by exactly one class (some member within `fattening` of every point)
// and each class must cover at least one set.
inline MorseDiagnostic morse_consistency_check(const std::vector<InvariantSet>& sets, const BasicClassReport& rep,
                                               const Grid& grid, double fattening) {
  MorseDiagnostic diag;
  std::vector<char> class_used(rep.classes.size(), 0);
  for (const auto& s : sets) {
    std::vector<std::size_t> covering;
    for (const auto& c : rep.classes) {
      if (!BasicClassReport::principal(c)) continue;
      const bool covers = std::all_of(s.points.begin(), s.points.end(), [&](const Vec& x) {
        return std::any_of(c.members.begin(), c.members.end(),
                           [&](std::size_t u) { return sup_distance(grid.point(u), x) <= fattening; });
      });
      if (covers) covering.push_back(c.id);
    }
    if (covering.size() == 1) {
      diag.set_to_class.push_back(static_cast<std::int64_t>(covering[0]));
      class_used[covering[0]] = 1;
    } else {
      diag.set_to_class.push_back(-1);
      diag.consistent = false;
      diag.mismatches.push_back(s.label + (covering.empty() ? " is not covered by any class"
                                                             : " is covered by " + std::to_string(covering.size()) +
                                                                   " classes"));
    }
  }
  for (const auto& c : rep.classes) {
    if (!BasicClassReport::principal(c) || class_used[c.id]) continue;
    diag.consistent = false;
    diag.mismatches.push_back("class " + std::to_string(c.id) + " covers no invariant set");
  }
  return diag;
}

// Condensation order of the recurrent classes in Graphviz form.
inline void write_dot(const BasicClassReport& rep, std::ostream& os) {
  os << "digraph classes {\n";
  for (const auto& c : rep.classes) {
    os << "  c" << c.id << " [label=\"" << c.id << " (" << c.members.size() << ")\"";
    if (!c.in_M1) os << ", style=dashed";
    if (c.quasiattractor) os << ", peripheries=2";
    if (c.boundary_shadow) os << ", color=gray";
    os << "];\n";
  }
  for (const auto& [i, j] : rep.order) os << "  c" << i << " -> c" << j << ";\n";
  os << "}\n";
}

}  // namespace qsdlab
