#include "qsdlab/experiments.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

using namespace qsdlab;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  bool verbose = false;
  bool timing = false;
};

json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DomainError("cannot open " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw DomainError(path + ": " + e.what());
  }
}

ExperimentConfig load_config(const std::string& path, const Globals& g) {
  json j = read_json(path);
  if (g.seed) j["seed"] = *g.seed;
  j["threads"] = g.threads;
  return config_from_json(j);
}

// Writes to `path`, or stdout for "-" or empty.
void emit(const std::string& path, const std::function<void(std::ostream&)>& fn) {
  if (path.empty() || path == "-") {
    fn(std::cout);
    return;
  }
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path);
  fn(os);
}

Vec parse_point(const std::string& s) {
  std::vector<double> xs;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      xs.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw DomainError("cannot parse coordinate '" + tok + "' in \"" + s + "\"");
    }
  }
  if (xs.empty()) throw DomainError("empty point");
  return to_vec(xs);
}

json grid_json(const Grid& g) {
  return json{{"simplex", g.is_simplex()}, {"lo", to_std(g.lo())}, {"hi", to_std(g.hi())}, {"cells", g.cells()},
              {"size", g.size()}};
}

json class_report_json(const BasicClassReport& rep, const Grid& grid) {
  json classes = json::array();
  for (const auto& c : rep.classes) {
    json pts = json::array();
    Vec centroid = Vec::Zero(grid.ambient_dim());
    for (auto u : c.members) {
      const Vec p = grid.point(u);
      centroid += p;
      pts.push_back(to_std(p));
    }
    centroid /= static_cast<double>(c.members.size());
    classes.push_back({{"id", c.id},
                       {"size", c.members.size()},
                       {"in_M1", c.in_M1},
                       {"maximal", c.maximal},
                       {"quasiattractor", c.quasiattractor},
                       {"boundary_shadow", c.boundary_shadow},
                       {"carries_invariant_set", c.carries_invariant_set},
                       {"principal", BasicClassReport::principal(c)},
                       {"attractor_verified", c.attractor_verified ? json(*c.attractor_verified) : json(nullptr)},
                       {"centroid", to_std(centroid)},
                       {"points", pts}});
  }
  json order = json::array();
  for (auto [i, j] : rep.order) order.push_back({i, j});
  return json{{"schema", "qsdlab.basic_classes/1"}, {"version", version_string()}, {"delta", rep.delta},
              {"grid", grid_json(grid)}, {"classes", classes}, {"order", order}, {"warnings", rep.warnings}};
}

int cmd_model_list() {
  for (const auto& [name, desc] : model_catalogue()) std::cout << name << "\t" << desc << "\n";
  return 0;
}

int cmd_model_show(const std::string& path, const Globals& g) {
  const auto cfg = load_config(path, g);
  const auto m = model_from_json(cfg.model);
  json eqs = json::array();
  if (std::isfinite(m.sup_bound()) && m.dim() <= 3) {
    const Vec hi = Vec::Constant(m.dim(), m.simplex_domain() ? 1.0 : m.sup_bound());
    for (const auto& e : find_equilibria(m, Box{Vec::Zero(m.dim()), hi}, m.dim() == 1 ? 60 : 15))
      eqs.push_back({{"point", to_std(e.point)},
                     {"in_M0", e.in_M0},
                     {"stability", to_string(e.stability)},
                     {"spectral_radius", e.spectral_radius}});
  }
  const json out{{"model", cfg.model},      {"name", m.name()},
                 {"dim", m.dim()},          {"absorbing_kind", to_string(m.absorbing_kind())},
                 {"simplex", m.simplex_domain()}, {"sup_bound", m.sup_bound()},
                 {"equilibria", eqs}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_qsd(const std::string& path, std::optional<double> eps, std::optional<std::int64_t> sites,
            const std::string& method, const std::string& out, const Globals& g) {
  auto cfg = load_config(path, g);
  if (eps) {
    cfg.kernel.kind = KernelKind::poisson;
    cfg.kernel.epsilons = {*eps};
    cfg.kernel.sites.clear();
  }
  if (sites) {
    cfg.kernel.kind = KernelKind::multinomial;
    cfg.kernel.sites = {*sites};
    cfg.kernel.epsilons.clear();
  }
  if (!method.empty()) cfg.solver.method = solver_method_from(method);
  cfg.validate();
  const auto sol = solve_config_row(cfg, cfg.kernel.size() - 1, true);
  json masses = json::object();
  for (std::size_t j = 0; j < cfg.regions.size(); ++j) masses[cfg.regions[j].name] = sol.row.masses[j];
  json support = json::array();
  for (std::size_t r = 0; r < sol.qsd.mu.size(); ++r)
    if (sol.qsd.mu[r] > 0.0) support.push_back({{"x", to_std(sol.states[r])}, {"mu", sol.qsd.mu[r]}});
  json doc{{"schema", "qsdlab.qsd_result/1"},
           {"version", version_string()},
           {"config_hash", config_hash(to_json(cfg))},
           {"seed", cfg.seed ? json(*cfg.seed) : json(nullptr)},
           {"model", cfg.model},
           {"kernel", to_string(cfg.kernel.kind)},
           {"epsilon", sol.row.epsilon},
           {"sites", sol.row.sites},
           {"method", sol.qsd.method},
           {"lambda", sol.qsd.lambda},
           {"one_minus_lambda", sol.qsd.one_minus_lambda},
           {"residual_l1", std::isnan(sol.qsd.residual_l1) ? json(nullptr) : json(sol.qsd.residual_l1)},
           {"iterations", sol.qsd.iterations},
           {"states", sol.row.states},
           {"off_lattice_mass", sol.qsd.off_lattice_mass},
           {"survivors", sol.qsd.survivors},
           {"masses", masses},
           {"mode", to_std(sol.row.mode)},
           {"warnings", sol.qsd.warnings},
           {"support", support}};
  if (g.timing) doc["runtime"] = sol.row.runtime;
  emit(out, [&](std::ostream& os) { os << doc.dump(2) << "\n"; });
  if (g.verbose) std::cerr << "lambda " << fmt17(sol.qsd.lambda) << "  1-lambda " << fmt17(sol.qsd.one_minus_lambda) << "\n";
  return 0;
}

int cmd_sweep(const std::string& path, const std::string& out, const std::string& fit_out, const Globals& g) {
  const auto cfg = load_config(path, g);
  const auto rows = run_epsilon_sweep(cfg);
  emit(out, [&](std::ostream& os) { write_sweep_csv(os, rows, cfg.regions, g.timing); });
  int failed = 0;
  for (const auto& r : rows) {
    if (!r.ok()) {
      ++failed;
      std::cerr << "eps " << fmt17(r.epsilon) << ": " << r.status << "\n";
    }
    if (g.verbose)
      for (const auto& w : r.warnings) std::cerr << "eps " << fmt17(r.epsilon) << ": " << w << "\n";
  }
  if (!fit_out.empty()) {
    const auto fit = fit_extinction_exponent(rows);
    const json j{{"schema", "qsdlab.extinction_fit/1"},
                 {"version", version_string()},
                 {"config_hash", config_hash(to_json(cfg))},
                 {"c_hat", fit.c_hat},
                 {"intercept", fit.intercept},
                 {"r_squared", fit.r_squared},
                 {"used", fit.used},
                 {"residuals", fit.residuals},
                 {"residual_trend", fit.residual_trend},
                 {"warnings", fit.warnings}};
    emit(fit_out, [&](std::ostream& os) { os << j.dump(2) << "\n"; });
  }
  return failed ? 3 : 0;
}

int cmd_quasipotential(const std::string& path, const std::string& source, int cells, int radius,
                       const std::string& out, const Globals& g) {
  const auto cfg = load_config(path, g);
  const auto m = model_from_json(cfg.model);
  const RateFunction rf(m, cfg.kernel.kind);
  const auto grid = default_chainrec_grid(m, cells);
  const double eps = cfg.kernel.epsilon(cfg.kernel.size() - 1);
  const int R = radius > 0 ? radius : default_stencil_radius(rf, grid, eps);
  const auto cf = quasipotential(rf, grid, parse_point(source), R);
  emit(out, [&](std::ostream& os) { cf.write_csv(os); });
  if (g.verbose) std::cerr << "grid " << grid.size() << " nodes, stencil radius " << R << "\n";
  return 0;
}

int cmd_chainrec(const std::string& path, double delta, int cells, bool verify, const std::string& out,
                 const std::string& dot, const Globals& g) {
  const auto cfg = load_config(path, g);
  const auto m = model_from_json(cfg.model);
  const auto grid = default_chainrec_grid(m, cells);
  const auto pg = build_pseudoorbit_graph(m, grid, delta, g.threads);
  auto rep = ap_basic_classes(pg);
  for (const auto& w : pg.warnings) rep.warnings.push_back(w);
  if (verify) {
    VerifyOptions vo;
    if (cfg.seed) vo.seed = *cfg.seed;
    for (auto& c : rep.classes)
      if (c.quasiattractor) c.attractor_verified = verify_attractor(m, grid, c.members, delta, 20, vo).verdict;
  }
  emit(out, [&](std::ostream& os) { os << class_report_json(rep, grid).dump(2) << "\n"; });
  if (!dot.empty()) emit(dot, [&](std::ostream& os) { write_dot(rep, os); });
  if (g.verbose)
    std::cerr << rep.classes.size() << " recurrent classes, " << rep.principal_count() << " principal, "
              << rep.quasiattractors().size() << " quasiattractors\n";
  return 0;
}

int cmd_experiment(const std::string& name, const std::vector<std::string>& overrides, const std::string& out,
                   bool print_config, const Globals& g) {
  json cfg = experiment_config(name, overrides);
  if (g.seed) cfg["seed"] = *g.seed;
  if (print_config) {
    std::cout << cfg.dump(2) << "\n";
    return 0;
  }
  RunContext ctx;
  ctx.threads = g.threads;
  ctx.timing = g.timing;
  if (!out.empty()) ctx.out = out;
  if (g.verbose) ctx.log = &std::cerr;
  const auto verdict = run_named_experiment(name, cfg, ctx);
  for (const auto& c : verdict.at("criteria")) {
    const int id = c.at("id").get<int>();
    std::cout << (id > 0 ? "criterion " + std::to_string(id) : std::string("report")) << ": "
              << (c.at("pass").get<bool>() ? "PASS" : "FAIL") << "  " << c.at("title").get<std::string>() << "\n";
    for (const auto& n : c.at("notes")) std::cout << "    " << n.get<std::string>() << "\n";
  }
  if (out.empty()) std::cout << verdict.dump(2) << "\n";
  return verdict.at("pass").get<bool>() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qsdlab: quasi-stationary distributions of randomly perturbed maps"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "RNG seed (overrides the config)");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--verbose,-v", g.verbose, "progress and warnings on stderr");
  app.add_flag("--timing", g.timing, "add runtime columns/fields (outputs are then not reproducible)");

  auto* model = app.add_subcommand("model", "list the model catalogue or show one configured model");
  model->require_subcommand(1);
  auto* mlist = model->add_subcommand("list", "list model types and their parameters");
  auto* mshow = model->add_subcommand("show", "dimension, bounds and equilibria of the configured model");
  std::string config;
  mshow->add_option("--config", config, "config file (JSON)")->required();

  auto* qsd = app.add_subcommand("qsd", "solve one QSD (the smallest epsilon in the config unless given)");
  std::optional<double> eps;
  std::optional<std::int64_t> sites;
  std::string method, out;
  qsd->add_option("--config", config)->required();
  auto* eps_opt = qsd->add_option("--epsilon", eps, "Poisson kernel epsilon");
  qsd->add_option("--sites", sites, "multinomial site count N")->excludes(eps_opt);
  qsd->add_option("--method", method, "power | fv | yaglom")->check(CLI::IsMember({"power", "fv", "yaglom"}));
  qsd->add_option("--out", out, "output JSON (default stdout)");

  auto* sweep = app.add_subcommand("sweep", "solve every epsilon in the config and write the sweep table");
  std::string fit_out;
  sweep->add_option("--config", config)->required();
  sweep->add_option("--out", out, "output CSV (default stdout)");
  sweep->add_option("--fit", fit_out, "also fit the extinction exponent and write it as JSON");

  auto* qp = app.add_subcommand("quasipotential", "Dijkstra quasipotential from a source point");
  std::string source;
  int cells = 0, radius = 0;
  qp->add_option("--config", config)->required();
  qp->add_option("--source", source, "source point, e.g. \"0.7\" or \"0.6,0.6\"")->required();
  qp->add_option("--cells", cells, "grid cells per axis (default by dimension)");
  qp->add_option("--radius", radius, "stencil radius in cells (default from the smallest epsilon)");
  qp->add_option("--out", out, "output CSV (default stdout)");

  auto* cr = app.add_subcommand("chainrec", "pseudo-orbit chain-recurrence classes");
  double delta = 0.0;
  bool verify = false;
  std::string dot;
  cr->add_option("--config", config)->required();
  cr->add_option("--delta", delta, "pseudo-orbit tolerance")->required();
  cr->add_option("--cells", cells, "grid cells per axis (default by dimension)");
  cr->add_flag("--verify", verify, "run the sampled attractor check on each quasiattractor");
  cr->add_option("--out", out, "output JSON (default stdout)");
  cr->add_option("--dot", dot, "also write the class order as Graphviz");

  auto* ex = app.add_subcommand("experiment", "run a named reproduction and write its verdict");
  std::string name;
  std::vector<std::string> overrides;
  bool print_config = false;
  std::string names;
  for (const auto& e : experiment_catalogue()) names += (names.empty() ? "" : " | ") + e.name;
  ex->add_option("name", name, names)->required();
  ex->add_option("--override", overrides, "dotted.path=value (JSON value), repeatable");
  ex->add_option("--out", out, "output directory for verdict.json and tables");
  ex->add_flag("--print-config", print_config, "print the effective config and exit");

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed;

  try {
    if (model->parsed()) return mlist->parsed() ? cmd_model_list() : cmd_model_show(config, g);
    if (qsd->parsed()) return cmd_qsd(config, eps, sites, method, out, g);
    if (sweep->parsed()) return cmd_sweep(config, out, fit_out, g);
    if (qp->parsed()) return cmd_quasipotential(config, source, cells, radius, out, g);
    if (cr->parsed()) return cmd_chainrec(config, delta, cells, verify, out, dot, g);
    if (ex->parsed()) return cmd_experiment(name, overrides, out, print_config, g);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
