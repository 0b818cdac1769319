#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace qsdlab {

// Directed graph in compressed adjacency form.
struct Digraph {
  std::vector<std::size_t> offsets{0};
  std::vector<std::uint32_t> targets;

  std::size_t size() const { return offsets.size() - 1; }
  std::size_t edge_count() const { return targets.size(); }
  std::pair<const std::uint32_t*, const std::uint32_t*> out(std::size_t u) const {
    return {targets.data() + offsets[u], targets.data() + offsets[u + 1]};
  }
  bool has_edge(std::size_t u, std::size_t v) const {
    auto [b, e] = out(u);
    return std::binary_search(b, e, static_cast<std::uint32_t>(v));
  }

  // Builds from per-node adjacency lists; each list is sorted and deduplicated.
  static Digraph from_lists(std::vector<std::vector<std::uint32_t>> lists) {
    Digraph g;
    g.offsets.reserve(lists.size() + 1);
    for (auto& l : lists) {
      std::sort(l.begin(), l.end());
      l.erase(std::unique(l.begin(), l.end()), l.end());
      g.targets.insert(g.targets.end(), l.begin(), l.end());
      g.offsets.push_back(g.targets.size());
    }
    return g;
  }
};

struct SccResult {
  std::vector<std::uint32_t> component;  // per node
  std::size_t count = 0;
};

// Iterative Tarjan. Components are numbered in the order they are completed, so every
// edge between distinct components goes from a higher to a lower number.
inline SccResult strongly_connected_components(const Digraph& g) {
  const std::size_t n = g.size();
  constexpr std::uint32_t unset = UINT32_MAX;
  std::vector<std::uint32_t> index(n, unset), low(n, 0);
  std::vector<char> on_stack(n, 0);
  std::vector<std::uint32_t> stack;
  std::vector<std::pair<std::uint32_t, std::size_t>> call;  // node, next edge offset
  SccResult res;
  res.component.assign(n, unset);
  std::uint32_t counter = 0;
  for (std::size_t root = 0; root < n; ++root) {
    if (index[root] != unset) continue;
    call.emplace_back(static_cast<std::uint32_t>(root), g.offsets[root]);
    index[root] = low[root] = counter++;
    stack.push_back(static_cast<std::uint32_t>(root));
    on_stack[root] = 1;
    while (!call.empty()) {
      auto& [u, pos] = call.back();
      if (pos < g.offsets[u + 1]) {
        const std::uint32_t v = g.targets[pos++];
        if (index[v] == unset) {
          index[v] = low[v] = counter++;
          stack.push_back(v);
          on_stack[v] = 1;
          call.emplace_back(v, g.offsets[v]);
        } else if (on_stack[v]) {
          low[u] = std::min(low[u], index[v]);
        }
        continue;
      }
      const std::uint32_t done = u;
      call.pop_back();
      if (!call.empty()) low[call.back().first] = std::min(low[call.back().first], low[done]);
      if (low[done] == index[done]) {
        std::uint32_t w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = 0;
          res.component[w] = static_cast<std::uint32_t>(res.count);
        } while (w != done);
        ++res.count;
      }
    }
  }
  return res;
}

struct BasicClass {
  std::size_t id = 0;
  std::vector<std::size_t> members;  // grid node ids
  bool in_M1 = true;
  bool maximal = false;         // no other recurrent class is reachable from it
  bool quasiattractor = false;  // maximal and in M1
  bool boundary_shadow = false; // M1 class with a direct edge into M0
  bool carries_invariant_set = true;  // outer cell map of F restricted to the class has a cycle
  std::optional<bool> attractor_verified;
};

struct BasicClassReport {
  std::vector<BasicClass> classes;
  std::vector<std::pair<std::size_t, std::size_t>> order;  // (i, j): class i reaches class j
  double delta = 0.0;  // pseudoorbit tolerance, or eta for rate graphs
  std::vector<std::string> warnings;

  std::vector<const BasicClass*> quasiattractors() const {
    std::vector<const BasicClass*> out;
    for (const auto& c : classes)
      if (c.quasiattractor) out.push_back(&c);
    return out;
  }
  // Classes that stand for an invariant set of F: not boundary shadows, and with a cycle
  // of the outer cell map.
  static bool principal(const BasicClass& c) { return !c.boundary_shadow && c.carries_invariant_set; }
  std::size_t principal_count() const {
    return static_cast<std::size_t>(std::count_if(classes.begin(), classes.end(), principal));
  }
};

// Recurrent classes (SCCs containing an edge), the reachability order between them and
// the maximality flags. `absorbing[u]` marks nodes in M0.
inline BasicClassReport recurrent_classes(const Digraph& g, const std::vector<char>& absorbing) {
  const auto scc = strongly_connected_components(g);
  const std::size_t n = g.size();
  std::vector<std::vector<std::size_t>> members(scc.count);
  for (std::size_t u = 0; u < n; ++u) members[scc.component[u]].push_back(u);

  std::vector<char> recurrent(scc.count, 0);
  for (std::size_t u = 0; u < n; ++u) {
    auto [b, e] = g.out(u);
    for (auto p = b; p != e; ++p)
      if (scc.component[*p] == scc.component[u]) recurrent[scc.component[u]] = 1;
  }

  // Condensation successors. Components complete in reverse topological order, so a
  // sweep in increasing component number sees every successor first.
  std::vector<std::vector<std::uint32_t>> succ(scc.count);
  for (std::size_t u = 0; u < n; ++u) {
    auto [b, e] = g.out(u);
    for (auto p = b; p != e; ++p)
      if (scc.component[*p] != scc.component[u]) succ[scc.component[u]].push_back(scc.component[*p]);
  }
  std::vector<std::int64_t> class_of(scc.count, -1);
  BasicClassReport rep;
  for (std::size_t c = 0; c < scc.count; ++c) {
    if (!recurrent[c]) continue;
    class_of[c] = static_cast<std::int64_t>(rep.classes.size());
    BasicClass bc;
    bc.id = rep.classes.size();
    bc.members = members[c];
    bc.in_M1 = std::none_of(bc.members.begin(), bc.members.end(), [&](std::size_t u) { return absorbing[u] != 0; });
    rep.classes.push_back(std::move(bc));
  }
  // reach[c] = recurrent classes reachable from component c (excluding itself)
  std::vector<std::vector<std::uint32_t>> reach(scc.count);
  for (std::size_t c = 0; c < scc.count; ++c) {
    auto& r = reach[c];
    for (auto s : succ[c]) {
      if (class_of[s] >= 0) r.push_back(static_cast<std::uint32_t>(class_of[s]));
      r.insert(r.end(), reach[s].begin(), reach[s].end());
    }
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
  }
  for (std::size_t c = 0; c < scc.count; ++c) {
    if (class_of[c] < 0) continue;
    auto& bc = rep.classes[static_cast<std::size_t>(class_of[c])];
    for (auto j : reach[c]) rep.order.emplace_back(bc.id, j);
    bc.maximal = reach[c].empty();
    bc.quasiattractor = bc.maximal && bc.in_M1;
    if (bc.in_M1) {
      for (auto u : bc.members) {
        auto [b, e] = g.out(u);
        if (std::any_of(b, e, [&](std::uint32_t v) { return absorbing[v] != 0; })) {
          bc.boundary_shadow = true;
          break;
        }
      }
    }
  }
  std::sort(rep.order.begin(), rep.order.end());
  return rep;
}

}  // namespace qsdlab
