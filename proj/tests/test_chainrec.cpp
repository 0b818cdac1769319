#include "qsdlab/chain_recurrence.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace qsdlab;

namespace {
Vec v(std::initializer_list<double> xs) {
  Vec r(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) r[i++] = x;
  return r;
}

MapModel identity(int k) {
  return MapModel::user_defined(k, [](const Vec& x) { return x; }, 1.0, AbsorbingKind::none, "identity");
}
MapModel lg() { return MapModel::leslie_gower(v({2, 2}), (Mat(2, 2) << 1, 0.5, 0.5, 1).finished()); }

const BasicClass* class_of(const BasicClassReport& rep, std::size_t node) {
  for (const auto& c : rep.classes)
    if (std::find(c.members.begin(), c.members.end(), node) != c.members.end()) return &c;
  return nullptr;
}

void expect_no_absorbing_exit(const PseudoorbitGraph& pg) {
  for (std::size_t u = 0; u < pg.graph.size(); ++u) {
    if (!pg.absorbing[u]) continue;
    auto [b, e] = pg.graph.out(u);
    for (auto p = b; p != e; ++p) ASSERT_TRUE(pg.absorbing[*p]);
  }
}

// Re-derives the maximality flags from the raw order.
void expect_order_consistent(const BasicClassReport& rep) {
  for (const auto& c : rep.classes) {
    const bool has_successor = std::any_of(rep.order.begin(), rep.order.end(), [&](auto p) { return p.first == c.id; });
    EXPECT_EQ(c.maximal, !has_successor);
    EXPECT_EQ(c.quasiattractor, c.maximal && c.in_M1);
  }
  for (auto [i, j] : rep.order) {
    EXPECT_NE(i, j);
    EXPECT_EQ(std::count(rep.order.begin(), rep.order.end(), std::pair{j, i}), 0);  // acyclic
  }
}
}  // namespace

TEST(Tarjan, SmallGraphs) {
  // 0 -> 1 -> 2 -> 0, 2 -> 3, 3 -> 3, 4 isolated
  const auto g = Digraph::from_lists({{1}, {2}, {0, 3}, {3}, {}});
  const auto scc = strongly_connected_components(g);
  EXPECT_EQ(scc.count, 3u);
  EXPECT_EQ(scc.component[0], scc.component[1]);
  EXPECT_EQ(scc.component[1], scc.component[2]);
  EXPECT_NE(scc.component[2], scc.component[3]);
  EXPECT_GT(scc.component[0], scc.component[3]);  // reverse topological numbering
  const auto rep = recurrent_classes(g, {0, 0, 0, 1, 0});
  ASSERT_EQ(rep.classes.size(), 2u);  // node 4 has no edge, so it is not recurrent
  EXPECT_FALSE(rep.classes[0].in_M1);
  EXPECT_TRUE(rep.classes[0].maximal);
  EXPECT_TRUE(rep.classes[1].in_M1);
  EXPECT_FALSE(rep.classes[1].quasiattractor);
  EXPECT_TRUE(rep.classes[1].boundary_shadow);
  ASSERT_EQ(rep.order.size(), 1u);
}

TEST(Tarjan, LongChainDoesNotRecurse) {
  const std::size_t n = 2'000'000;
  std::vector<std::vector<std::uint32_t>> adj(n);
  for (std::size_t i = 0; i < n; ++i) adj[i].push_back(static_cast<std::uint32_t>((i + 1) % n));
  const auto scc = strongly_connected_components(Digraph::from_lists(std::move(adj)));
  EXPECT_EQ(scc.count, 1u);
}

TEST(Pseudoorbit, IdentityCalibration) {
  const auto grid = Grid::box(v({0.0}), v({1.0}), 100);
  for (double delta : {0.0101, 0.015, 0.05, 0.3}) {
    const auto pg = build_pseudoorbit_graph(identity(1), grid, delta);
    const auto rep = ap_basic_classes(pg);
    ASSERT_EQ(rep.classes.size(), 1u) << delta;
    EXPECT_EQ(rep.classes[0].members.size(), grid.size());
    EXPECT_TRUE(rep.classes[0].quasiattractor);
    EXPECT_TRUE(rep.warnings.empty());
  }
  const auto g2 = Grid::box(v({0.0, 0.0}), v({1.0, 1.0}), 40);
  const auto rep2 = ap_basic_classes(build_pseudoorbit_graph(identity(2), g2, 0.03));
  ASSERT_EQ(rep2.classes.size(), 1u);
  EXPECT_EQ(rep2.classes[0].members.size(), g2.size());
}

TEST(Pseudoorbit, RickerMetastable) {
  const auto m = MapModel::ricker(2.0);
  const auto grid = Grid::box(v({0.0}), v({3.0}), 600);
  const auto pg = build_pseudoorbit_graph(m, grid, 0.02);
  expect_no_absorbing_exit(pg);
  const auto rep = ap_basic_classes(pg);
  expect_order_consistent(rep);
  EXPECT_EQ(rep.principal_count(), 2u);
  const auto* zero = class_of(rep, grid.nearest(v({0.0})));
  const auto* l2 = class_of(rep, grid.nearest(v({std::log(2.0)})));
  ASSERT_TRUE(zero && l2);
  EXPECT_FALSE(zero->in_M1);
  EXPECT_EQ(zero->members.size(), 1u);
  EXPECT_TRUE(l2->in_M1);
  EXPECT_TRUE(l2->quasiattractor);
  ASSERT_EQ(rep.quasiattractors().size(), 1u);
  for (const auto& c : rep.classes)
    if (c.boundary_shadow) {
      EXPECT_LT(grid.point(c.members.back())[0], 0.05);
    }

  const auto cert = verify_attractor(m, grid, l2->members, 0.02, 20);
  ASSERT_TRUE(cert.verdict.has_value());
  EXPECT_TRUE(*cert.verdict);
  EXPECT_EQ(cert.escapes, 0u);
  EXPECT_LT(cert.hausdorff.back(), cert.hausdorff.front());

  // the origin read as if it were an M1 class: F'(0) = 2 pushes points out
  const auto bad = verify_attractor(m, grid, zero->members, 0.02, 20);
  ASSERT_TRUE(bad.verdict.has_value());
  EXPECT_FALSE(*bad.verdict);
  EXPECT_GT(bad.escapes, 0u);

  const auto eq = find_equilibria(m, Box{v({0.0}), v({3.0})}, 30);
  ASSERT_EQ(eq.size(), 2u);
  const auto diag = morse_consistency_check(invariant_sets_from(eq), rep, grid, 0.02);
  EXPECT_TRUE(diag.consistent);
  EXPECT_EQ(diag.set_to_class[0], static_cast<std::int64_t>(zero->id));
  EXPECT_EQ(diag.set_to_class[1], static_cast<std::int64_t>(l2->id));
}

TEST(Pseudoorbit, RickerExtinction) {
  const auto grid = Grid::box(v({0.0}), v({3.0}), 600);
  const auto pg = build_pseudoorbit_graph(MapModel::ricker(0.5), grid, 0.02);
  const auto rep = ap_basic_classes(pg);
  EXPECT_EQ(rep.principal_count(), 1u);
  EXPECT_TRUE(rep.quasiattractors().empty());
  for (const auto& c : rep.classes) {
    if (BasicClassReport::principal(c)) {
      EXPECT_FALSE(c.in_M1);
      EXPECT_EQ(c.members, std::vector<std::size_t>{0});
    }
  }
}

TEST(Pseudoorbit, PeriodTwoAttractor) {
  const auto m = MapModel::ricker(std::exp(2.2));
  const auto grid = default_chainrec_grid(m, 1000);
  const auto rep = ap_basic_classes(build_pseudoorbit_graph(m, grid, 0.02));
  const auto orbit = detect_periodic_orbit(m, v({0.5}), 4, 2000, 1e-10);
  ASSERT_TRUE(orbit);
  ASSERT_EQ(orbit->period, 2);
  const auto* a = class_of(rep, grid.nearest(orbit->points[0]));
  const auto* b = class_of(rep, grid.nearest(orbit->points[1]));
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a->quasiattractor);
  const auto cert = verify_attractor(m, grid, a->members, 0.02, 30);
  ASSERT_TRUE(cert.verdict.has_value());
  EXPECT_TRUE(*cert.verdict);

  // fixed points 0 and 2.2 plus the cycle
  const auto eq = find_equilibria(m, Box{v({0.0}), v({grid.hi()[0]})}, 50);
  ASSERT_EQ(eq.size(), 2u);
  const auto diag = morse_consistency_check(invariant_sets_from(eq, {*orbit}), rep, grid, 0.02);
  EXPECT_TRUE(diag.consistent) << (diag.mismatches.empty() ? "" : diag.mismatches[0]);
}

TEST(Pseudoorbit, LeslieGowerFourClasses) {
  const auto m = lg();
  const auto grid = default_chainrec_grid(m);
  EXPECT_EQ(grid.cells()[0], 200);
  const auto pg = build_pseudoorbit_graph(m, grid, 0.03);
  expect_no_absorbing_exit(pg);
  const auto rep = ap_basic_classes(pg);
  expect_order_consistent(rep);
  EXPECT_EQ(rep.principal_count(), 4u);
  const auto eq = find_equilibria(m, Box{v({0.0, 0.0}), v({3.0, 3.0})}, 12);
  ASSERT_EQ(eq.size(), 4u);
  const auto diag = morse_consistency_check(invariant_sets_from(eq), rep, grid, 0.03);
  EXPECT_TRUE(diag.consistent) << (diag.mismatches.empty() ? "" : diag.mismatches[0]);
  const auto qa = rep.quasiattractors();
  ASSERT_EQ(qa.size(), 1u);
  EXPECT_EQ(class_of(rep, grid.nearest(v({2 / 3., 2 / 3.}))), qa[0]);
  const auto cert = verify_attractor(m, grid, qa[0]->members, 0.03, 20);
  ASSERT_TRUE(cert.verdict.has_value());
  EXPECT_TRUE(*cert.verdict);
}

TEST(Pseudoorbit, ReplicatorInteriorQuasiattractor) {
  // The barycentre contracts by only 0.9875 per step, so delta-chains reach about 80 delta
  // out; a fine simplex grid keeps them off the boundary.
  const auto m = MapModel::replicator((Mat(3, 3) << 0, -1, 2, 2, 0, -1, -1, 2, 0).finished(), 10.0);
  const auto grid = Grid::simplex(3, 600);
  const auto pg = build_pseudoorbit_graph(m, grid, 0.0017);
  expect_no_absorbing_exit(pg);
  const auto rep = ap_basic_classes(pg);
  const auto qa = rep.quasiattractors();
  ASSERT_EQ(qa.size(), 1u);
  EXPECT_EQ(class_of(rep, grid.nearest(v({1 / 3., 1 / 3., 1 / 3.}))), qa[0]);
  const auto* boundary = class_of(rep, grid.nearest(v({1.0, 0.0, 0.0})));
  ASSERT_TRUE(boundary);
  EXPECT_FALSE(boundary->in_M1);
  EXPECT_EQ(class_of(rep, grid.nearest(v({0.0, 1.0, 0.0}))), boundary);
  EXPECT_EQ(class_of(rep, grid.nearest(v({0.0, 0.0, 1.0}))), boundary);
  VerifyOptions vo;
  vo.samples_per_cell = 4;
  const auto cert = verify_attractor(m, grid, qa[0]->members, 0.0017, 10, vo);
  ASSERT_TRUE(cert.verdict.has_value());
  EXPECT_TRUE(*cert.verdict);

  // the coarse default grid cannot separate the interior from the boundary
  const auto coarse = ap_basic_classes(build_pseudoorbit_graph(m, default_chainrec_grid(m), 0.0125));
  EXPECT_TRUE(coarse.quasiattractors().empty());
}

TEST(Pseudoorbit, DeltaMonotonicity) {
  const auto m = lg();
  const auto grid = Grid::box(v({0.0, 0.0}), v({3.0, 3.0}), 100);
  const auto small = build_pseudoorbit_graph(m, grid, 0.03);
  const auto large = build_pseudoorbit_graph(m, grid, 0.06);
  for (std::size_t u = 0; u < grid.size(); ++u) {
    auto [b, e] = small.graph.out(u);
    for (auto p = b; p != e; ++p) ASSERT_TRUE(large.graph.has_edge(u, *p));
  }
  const auto rs = ap_basic_classes(small), rl = ap_basic_classes(large);
  for (const auto& c : rs.classes) {
    const auto* host = class_of(rl, c.members[0]);
    ASSERT_TRUE(host);
    for (auto u : c.members) EXPECT_EQ(class_of(rl, u), host);
  }
}

TEST(Pseudoorbit, WarningsAndErrors) {
  const auto grid = Grid::box(v({0.0}), v({1.0}), 10);
  const auto pg = build_pseudoorbit_graph(identity(1), grid, 0.05);
  EXPECT_FALSE(pg.warnings.empty());
  EXPECT_THROW(build_pseudoorbit_graph(lg(), grid, 0.1), DomainError);
  EXPECT_THROW(build_pseudoorbit_graph(identity(1), grid, 0.0), DomainError);
  VerifyOptions vo;
  vo.max_samples = 10;
  const auto cert = verify_attractor(identity(1), grid, {0, 1, 2}, 0.1, 3, vo);
  EXPECT_FALSE(cert.verdict.has_value());
}

TEST(Pseudoorbit, DotExport) {
  const auto grid = Grid::box(v({0.0}), v({3.0}), 300);
  const auto rep = ap_basic_classes(build_pseudoorbit_graph(MapModel::ricker(2.0), grid, 0.02));
  std::ostringstream os;
  write_dot(rep, os);
  const auto dot = os.str();
  EXPECT_EQ(dot.rfind("digraph classes {", 0), 0u);
  EXPECT_NE(dot.find("peripheries=2"), std::string::npos);
  EXPECT_EQ(static_cast<std::size_t>(std::count(dot.begin(), dot.end(), '>')), rep.order.size());
}
