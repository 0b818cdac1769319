#pragma once

#include "qsdlab/model.hpp"
#include "qsdlab/qsd.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>

#ifndef QSDLAB_VERSION
#define QSDLAB_VERSION "0.0.0"
#endif
#ifndef QSDLAB_GIT_DESCRIBE
#define QSDLAB_GIT_DESCRIBE "unknown"
#endif

namespace qsdlab {

using json = nlohmann::json;

inline std::string version_string() { return std::string(QSDLAB_VERSION) + "+" + QSDLAB_GIT_DESCRIBE; }

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

// Hash of the canonical (key-sorted, compact) serialization.
inline std::string config_hash(const json& j) { return hex64(fnv1a(j.dump())); }

namespace detail {
inline Vec vec_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return to_vec(v);
}
inline Mat mat_from(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) throw DomainError("config: empty matrix");
  Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw DomainError("config: ragged matrix");
    for (std::size_t j2 = 0; j2 < rows[i].size(); ++j2)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j2)) = rows[i][j2];
  }
  return m;
}
inline json to_json_vec(const Vec& v) { return to_std(v); }
inline json to_json_mat(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(r);
  }
  return rows;
}
template <class T>
T value_or(const json& j, const char* key, T fallback) {
  return j.contains(key) && !j.at(key).is_null() ? j.at(key).get<T>() : fallback;
}
}  // namespace detail

// Model block, e.g. {"type": "ricker", "f0": 2}.
inline MapModel model_from_json(const json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "ricker") return MapModel::ricker(j.at("f0").get<double>());
  if (type == "spatial_ricker") return MapModel::spatial_ricker(j.at("f0").get<double>(), detail::mat_from(j.at("dispersal")));
  if (type == "leslie_gower") return MapModel::leslie_gower(detail::vec_from(j.at("b")), detail::mat_from(j.at("c")));
  if (type == "thompson")
    return MapModel::thompson(
        ThompsonParams{j.at("r").get<double>(), j.at("K").get<double>(), j.at("b").get<double>(), j.at("k").get<double>()});
  if (type == "replicator") return MapModel::replicator(detail::mat_from(j.at("payoff")), j.at("basal").get<double>());
  if (type == "neutral") return MapModel::neutral(j.at("k").get<int>());
  if (type == "identity") {
    const int d = j.at("dim").get<int>();
    return MapModel::user_defined(d, [](const Vec& x) { return x; }, detail::value_or(j, "sup_bound", 1.0),
                                  AbsorbingKind::none, "identity");
  }
  throw DomainError("config: unknown model type '" + type + "'");
}

inline const std::vector<std::pair<std::string, std::string>>& model_catalogue() {
  static const std::vector<std::pair<std::string, std::string>> c{
      {"ricker", "f0; x -> f0 x exp(-x), absorbing at the origin"},
      {"spatial_ricker", "f0, dispersal (row-stochastic k x k); x -> D^T (f0 x exp(-x))"},
      {"leslie_gower", "b (2), c (2 x 2); x_i -> b_i x_i / (1 + sum_j c_ij x_j), absorbing on the axes"},
      {"thompson", "r, K, b, k; host-parasitoid with negative binomial escape, absorbing on the axes"},
      {"replicator", "payoff (k x k), basal; x_i -> x_i ((Ax)_i + c) / (x.Ax + c) on the simplex"},
      {"neutral", "k; replicator with zero payoff (identity on the simplex)"},
      {"identity", "dim; F(x) = x with no absorbing set (chain-recurrence calibration)"}};
  return c;
}

struct KernelBlock {
  KernelKind kind = KernelKind::poisson;
  std::vector<double> epsilons;      // poisson, strictly decreasing
  std::vector<std::int64_t> sites;   // multinomial, strictly increasing
  std::size_t size() const { return kind == KernelKind::poisson ? epsilons.size() : sites.size(); }
  double epsilon(std::size_t i) const {
    return kind == KernelKind::poisson ? epsilons[i] : 1.0 / static_cast<double>(sites[i]);
  }
};

struct LatticeBlock {
  double tail_tol = 1e-12;
  std::optional<double> cap_density;  // caps = ceil(cap_density / eps) instead of the tail rule
  double prune_tol = 1e-16;
  std::size_t max_entries = 250'000'000;
};

enum class SolverMethod { power, fv, yaglom };

inline const char* to_string(SolverMethod m) {
  switch (m) {
    case SolverMethod::power: return "power";
    case SolverMethod::fv: return "fv";
    case SolverMethod::yaglom: return "yaglom";
  }
  return "?";
}

inline SolverMethod solver_method_from(const std::string& s) {
  if (s == "power") return SolverMethod::power;
  if (s == "fv") return SolverMethod::fv;
  if (s == "yaglom") return SolverMethod::yaglom;
  throw DomainError("config: unknown solver method '" + s + "'");
}

struct SolverBlock {
  SolverMethod method = SolverMethod::power;
  double tol = 1e-12;
  std::size_t max_iter = 200000;
  bool warm_start = true;
  std::size_t particles = 10000;
  std::size_t steps = 2000;
  std::size_t burn_in = 200;
  std::size_t horizon = 200;
  std::size_t samples = 10000;
  std::optional<std::vector<double>> x0;  // start density for fv / yaglom
};

struct OutputBlock {
  std::string dir = "out";
  std::string sweep_csv = "sweep.csv";
};

struct ExperimentConfig {
  std::string name = "unnamed";
  json model;
  KernelBlock kernel;
  LatticeBlock lattice;
  SolverBlock solver;
  std::vector<Region> regions;
  OutputBlock output;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;

  void validate() const {
    (void)model_from_json(model);
    if (kernel.size() == 0) throw DomainError("config: empty epsilon/site list");
    for (std::size_t i = 0; i < kernel.epsilons.size(); ++i) {
      if (!(kernel.epsilons[i] > 0.0)) throw DomainError("config: epsilons must be > 0");
      if (i > 0 && !(kernel.epsilons[i] < kernel.epsilons[i - 1]))
        throw DomainError("config: epsilon list must be strictly decreasing");
    }
    for (std::size_t i = 0; i < kernel.sites.size(); ++i) {
      if (kernel.sites[i] < 1) throw DomainError("config: sites must be >= 1");
      if (i > 0 && !(kernel.sites[i] > kernel.sites[i - 1]))
        throw DomainError("config: site list must be strictly increasing (epsilon decreasing)");
    }
    if (solver.method != SolverMethod::power && !seed)
      throw DomainError("config: a seed is required for stochastic methods");
    if (lattice.cap_density && !(*lattice.cap_density > 0.0)) throw DomainError("config: cap_density must be > 0");
  }
};

inline json region_to_json(const Region& r) {
  json j{{"name", r.name}, {"type", to_string(r.type)}};
  switch (r.type) {
    case Region::Type::all: break;
    case Region::Type::ball:
    case Region::Type::open_ball:
      j["center"] = detail::to_json_vec(r.center);
      j["radius"] = r.radius;
      break;
    case Region::Type::box:
      j["lo"] = detail::to_json_vec(r.lo);
      j["hi"] = detail::to_json_vec(r.hi);
      break;
    case Region::Type::min_coordinate_below: j["radius"] = r.radius; break;
  }
  return j;
}

inline Region region_from_json(const json& j) {
  const auto name = j.at("name").get<std::string>();
  const auto type = j.at("type").get<std::string>();
  if (type == "all") return Region::all(name);
  if (type == "ball") return Region::ball(name, detail::vec_from(j.at("center")), j.at("radius").get<double>());
  if (type == "open_ball") return Region::open_ball(name, detail::vec_from(j.at("center")), j.at("radius").get<double>());
  if (type == "box") return Region::box(name, detail::vec_from(j.at("lo")), detail::vec_from(j.at("hi")));
  if (type == "boundary_neighborhood") return Region::boundary_neighborhood(name, j.at("radius").get<double>());
  throw DomainError("config: unknown region type '" + type + "'");
}

inline json to_json(const ExperimentConfig& c) {
  json k{{"kind", to_string(c.kernel.kind)}};
  if (c.kernel.kind == KernelKind::poisson)
    k["epsilons"] = c.kernel.epsilons;
  else
    k["sites"] = c.kernel.sites;
  json lat{{"tail_tol", c.lattice.tail_tol},
           {"cap_density", c.lattice.cap_density ? json(*c.lattice.cap_density) : json(nullptr)},
           {"prune_tol", c.lattice.prune_tol},
           {"max_entries", c.lattice.max_entries}};
  json sol{{"method", to_string(c.solver.method)}, {"tol", c.solver.tol},           {"max_iter", c.solver.max_iter},
           {"warm_start", c.solver.warm_start},    {"particles", c.solver.particles}, {"steps", c.solver.steps},
           {"burn_in", c.solver.burn_in},          {"horizon", c.solver.horizon},     {"samples", c.solver.samples},
           {"x0", c.solver.x0 ? json(*c.solver.x0) : json(nullptr)}};
  json regions = json::array();
  for (const auto& r : c.regions) regions.push_back(region_to_json(r));
  return json{{"name", c.name},
              {"model", c.model},
              {"kernel", k},
              {"lattice", lat},
              {"solver", sol},
              {"regions", regions},
              {"output", {{"dir", c.output.dir}, {"sweep_csv", c.output.sweep_csv}}},
              {"seed", c.seed ? json(*c.seed) : json(nullptr)},
              {"threads", c.threads}};
}

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  c.name = detail::value_or<std::string>(j, "name", "unnamed");
  c.model = j.at("model");
  const auto& k = j.at("kernel");
  const auto kind = k.at("kind").get<std::string>();
  if (kind == "poisson") {
    c.kernel.kind = KernelKind::poisson;
    c.kernel.epsilons = k.at("epsilons").get<std::vector<double>>();
  } else if (kind == "multinomial") {
    c.kernel.kind = KernelKind::multinomial;
    c.kernel.sites = k.at("sites").get<std::vector<std::int64_t>>();
  } else {
    throw DomainError("config: unknown kernel kind '" + kind + "'");
  }
  if (j.contains("lattice")) {
    const auto& l = j.at("lattice");
    c.lattice.tail_tol = detail::value_or(l, "tail_tol", c.lattice.tail_tol);
    if (l.contains("cap_density") && !l.at("cap_density").is_null()) c.lattice.cap_density = l.at("cap_density").get<double>();
    c.lattice.prune_tol = detail::value_or(l, "prune_tol", c.lattice.prune_tol);
    c.lattice.max_entries = detail::value_or(l, "max_entries", c.lattice.max_entries);
  }
  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    c.solver.method = solver_method_from(detail::value_or<std::string>(s, "method", "power"));
    c.solver.tol = detail::value_or(s, "tol", c.solver.tol);
    c.solver.max_iter = detail::value_or(s, "max_iter", c.solver.max_iter);
    c.solver.warm_start = detail::value_or(s, "warm_start", c.solver.warm_start);
    c.solver.particles = detail::value_or(s, "particles", c.solver.particles);
    c.solver.steps = detail::value_or(s, "steps", c.solver.steps);
    c.solver.burn_in = detail::value_or(s, "burn_in", c.solver.burn_in);
    c.solver.horizon = detail::value_or(s, "horizon", c.solver.horizon);
    c.solver.samples = detail::value_or(s, "samples", c.solver.samples);
    if (s.contains("x0") && !s.at("x0").is_null()) c.solver.x0 = s.at("x0").get<std::vector<double>>();
  }
  if (j.contains("regions"))
    for (const auto& r : j.at("regions")) c.regions.push_back(region_from_json(r));
  if (j.contains("output")) {
    c.output.dir = detail::value_or<std::string>(j.at("output"), "dir", c.output.dir);
    c.output.sweep_csv = detail::value_or<std::string>(j.at("output"), "sweep_csv", c.output.sweep_csv);
  }
  if (j.contains("seed") && !j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
  c.threads = detail::value_or(j, "threads", 1u);
  c.validate();
  return c;
}

// Applies "a.b.c=value" to a JSON document; value is parsed as JSON, or taken as a
// string when it does not parse. Numeric path segments index arrays.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw DomainError("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw DomainError("override: empty path segment in " + path);
    const bool index = std::all_of(key.begin(), key.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); });
    if (index && node->is_array()) {
      const auto i = std::stoul(key);
      if (i >= node->size()) throw DomainError("override: index out of range in " + path);
      node = &(*node)[i];
    } else {
      if (!node->is_object()) throw DomainError("override: '" + key + "' is not inside an object in " + path);
      if (dot != std::string::npos && !node->contains(key)) throw DomainError("override: unknown key '" + key + "' in " + path);
      node = &(*node)[key];
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

}  // namespace qsdlab
