#pragma once

#include "qsdlab/chain_recurrence.hpp"
#include "qsdlab/quasipotential.hpp"
#include "qsdlab/sweep.hpp"

#include <Eigen/Eigenvalues>
#include <boost/math/tools/roots.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>

namespace qsdlab {

struct CriterionResult {
  int id = 0;
  std::string title;
  bool pass = false;
  json numbers = json::object();
  std::vector<std::string> notes;
  bool budget_exceeded = false;
};

inline json to_json(const CriterionResult& c) {
  return json{{"id", c.id}, {"title", c.title}, {"pass", c.pass}, {"numbers", c.numbers}, {"notes", c.notes}};
}

struct RunContext {
  unsigned threads = 1;
  bool timing = false;
  std::optional<std::filesystem::path> out;  // directory for CSV/JSON side outputs
  std::ostream* log = nullptr;
};

namespace detail {

inline void say(const RunContext& ctx, const std::string& msg) {
  if (ctx.log) *ctx.log << msg << std::endl;
}

inline void write_file(const RunContext& ctx, const std::string& name, const std::function<void(std::ostream&)>& fn) {
  if (!ctx.out) return;
  std::filesystem::create_directories(*ctx.out);
  std::ofstream os(*ctx.out / name);
  if (!os) throw Error("cannot write " + (*ctx.out / name).string());
  fn(os);
}

// Parses an embedded sweep block, filling in the experiment seed and the thread budget.
inline ExperimentConfig sub_config(json block, const json& exp, const RunContext& ctx) {
  if (!block.contains("seed") || block.at("seed").is_null()) block["seed"] = exp.at("seed");
  block["threads"] = ctx.threads;
  return config_from_json(block);
}

inline std::vector<double> column(const std::vector<SweepRow>& rows, const std::function<double(const SweepRow&)>& f) {
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(f(r));
  return out;
}

inline std::size_t region_index(const ExperimentConfig& cfg, const std::string& name) {
  for (std::size_t i = 0; i < cfg.regions.size(); ++i)
    if (cfg.regions[i].name == name) return i;
  throw DomainError("config has no region named '" + name + "'");
}

inline json rows_json(const std::vector<SweepRow>& rows, const ExperimentConfig& cfg) {
  json out = json::array();
  for (const auto& r : rows) {
    json masses = json::object();
    for (std::size_t j = 0; j < cfg.regions.size() && j < r.masses.size(); ++j) masses[cfg.regions[j].name] = r.masses[j];
    json row{{"epsilon", r.epsilon}, {"lambda", r.lambda}, {"one_minus_lambda", r.one_minus_lambda},
             {"states", r.states},   {"masses", masses},   {"mode", to_std(r.mode)},
             {"status", r.status}};
    if (r.sites) row["sites"] = r.sites;
    out.push_back(row);
  }
  return out;
}

inline void require_ok(const std::vector<SweepRow>& rows) {
  for (const auto& r : rows)
    if (!r.ok()) {
      if (r.status.find("budget") != std::string::npos || r.status.find("too large") != std::string::npos)
        throw BudgetError(r.status);
      throw Error("sweep row at eps " + fmt17(r.epsilon) + " failed: " + r.status);
    }
}

inline std::vector<SweepRow> sweep_and_save(const ExperimentConfig& cfg, const RunContext& ctx, const std::string& file) {
  say(ctx, "  sweep " + cfg.name + " (" + std::to_string(cfg.kernel.size()) + " rows)");
  auto rows = run_epsilon_sweep(cfg);
  write_file(ctx, file, [&](std::ostream& os) { write_sweep_csv(os, rows, cfg.regions, ctx.timing); });
  return rows;
}

}  // namespace detail

// ---- independent oracle for the multinomial kernel --------------------------------

namespace oracle {

struct DenseChain {
  std::vector<Counts> states;  // all-positive compositions of N into k parts
  Mat Q;
};

inline void compositions(int k, std::int64_t N, Counts& cur, std::vector<Counts>& out) {
  const auto i = cur.size();
  if (static_cast<int>(i) == k - 1) {
    if (N >= 1) {
      cur.push_back(N);
      out.push_back(cur);
      cur.pop_back();
    }
    return;
  }
  for (std::int64_t c = 1; c <= N - (k - 1 - static_cast<std::int64_t>(i)); ++c) {
    cur.push_back(c);
    compositions(k, N - c, cur, out);
    cur.pop_back();
  }
}

// Q(n, y) = N! / prod y_i! prod p_i^y_i with p = F(n / N), from log-gamma.
inline DenseChain dense_multinomial(const MapModel& m, std::int64_t N) {
  DenseChain d;
  Counts cur;
  compositions(m.dim(), N, cur, d.states);
  const auto T = static_cast<Eigen::Index>(d.states.size());
  d.Q = Mat::Zero(T, T);
  const double lgN = std::lgamma(static_cast<double>(N) + 1.0);
  for (Eigen::Index a = 0; a < T; ++a) {
    Vec x(m.dim());
    for (int i = 0; i < m.dim(); ++i) x[i] = static_cast<double>(d.states[a][i]) / static_cast<double>(N);
    const Vec p = m(x);
    for (Eigen::Index b = 0; b < T; ++b) {
      double lp = lgN;
      for (int i = 0; i < m.dim(); ++i) {
        const double y = static_cast<double>(d.states[b][i]);
        lp += y * std::log(p[i]) - std::lgamma(y + 1.0);
      }
      d.Q(a, b) = std::exp(lp);
    }
  }
  return d;
}

// Leading left eigenpair of Q from a full eigendecomposition of Q^T.
inline std::pair<double, std::vector<double>> leading_left_eigen(const Mat& Q) {
  Eigen::EigenSolver<Mat> es(Q.transpose());
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < es.eigenvalues().size(); ++i)
    if (es.eigenvalues()[i].real() > es.eigenvalues()[best].real()) best = i;
  Vec w = es.eigenvectors().col(best).real().cwiseAbs();
  w /= w.sum();
  return {es.eigenvalues()[best].real(), to_std(w)};
}

}  // namespace oracle

// ---- host-parasitoid persistence indicator ---------------------------------------

struct HostParasitoidIndicator {
  double y_star = 0.0;
  double value = 0.0;  // exp(r) (1 + y*/(bk))^(-k); above 1 predicts coexistence
};

// y* = max{y >= 0 : exp(-r)((1 + y/(bk))^k - 1) = y}, for k < 1.
inline HostParasitoidIndicator host_parasitoid_indicator(const ThompsonParams& p) {
  if (!(p.k_clump > 0.0 && p.k_clump < 1.0)) throw DomainError("host_parasitoid_indicator: requires 0 < k < 1");
  const double bk = p.b_attack * p.k_clump;
  auto h = [&](double y) { return std::exp(-p.r) * std::expm1(p.k_clump * std::log1p(y / bk)) - y; };
  HostParasitoidIndicator out;
  // h is concave with h(0) = 0, so a positive root exists iff h'(0) = exp(-r)/b > 1
  if (std::exp(-p.r) / p.b_attack > 1.0) {
    double hi = 1.0;
    while (h(hi) > 0.0) hi *= 2.0;
    double lo = hi / 2.0;
    while (lo > 1e-300 && h(lo) <= 0.0) lo /= 2.0;
    boost::uintmax_t iters = 200;
    const auto r = boost::math::tools::toms748_solve(h, lo, hi, boost::math::tools::eps_tolerance<double>(52), iters);
    out.y_star = 0.5 * (r.first + r.second);
  }
  out.value = std::exp(p.r - p.k_clump * std::log1p(out.y_star / bk));
  return out;
}

// ---- criteria ------------------------------------------------------------------------

using CriterionFn = std::function<CriterionResult(const json& exp, const RunContext& ctx)>;

namespace criteria {

inline CriterionResult oracle_equivalence(const json& exp, const RunContext& ctx) {
  const auto& p = exp.at("oracle");
  CriterionResult c{1, "power iteration matches dense eigendecomposition on random multinomial instances", false, json::object(), {}, false};
  const auto n = p.at("instances").get<int>();
  const auto max_sites = p.at("max_sites").get<std::int64_t>();
  const auto max_states = p.at("max_states").get<std::size_t>();
  const auto types = p.at("types").get<std::vector<int>>();
  const double range = p.at("payoff_range").get<double>();
  const double tol_l = p.at("tol_lambda").get<double>(), tol_mu = p.at("tol_mu").get<double>();
  const RngStream base(exp.at("seed").get<std::uint64_t>(), {1});
  double worst_l = 0.0, worst_mu = 0.0;
  std::size_t largest = 0;
  json cases = json::array();
  for (int t = 0; t < n; ++t) {
    RngStream rng = base.derive(static_cast<std::uint64_t>(t));
    const int k = types[static_cast<std::size_t>(t) % types.size()];
    std::int64_t N = 0;
    for (;;) {
      N = k + static_cast<std::int64_t>(rng.uniform() * static_cast<double>(max_sites - k + 1));
      if (detail::binom_sat(N - 1, k - 1) <= max_states) break;
    }
    Mat A(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) A(i, j) = range * (2.0 * rng.uniform() - 1.0);
    const double basal = -A.minCoeff() + 0.5 + 2.0 * rng.uniform();
    const auto model = MapModel::replicator(A, basal);
    const auto dense = oracle::dense_multinomial(model, N);
    const auto [lam_d, mu_d] = oracle::leading_left_eigen(dense.Q);

    const MultinomialKernel kernel(model, N);
    const SimplexLattice lattice(N, k);
    PowerOptions po;
    po.tol = p.at("power_tol").get<double>();
    po.max_iter = p.at("max_iter").get<std::size_t>();
    const auto q = power_iterate_qsd(build_substochastic_matrix(kernel, lattice), po);
    double l1 = 0.0;
    for (std::size_t s = 0; s < dense.states.size(); ++s) l1 += std::abs(q.mu[lattice.rank(dense.states[s])] - mu_d[s]);
    const double dl = std::abs(q.lambda - lam_d);
    worst_l = std::max(worst_l, dl);
    worst_mu = std::max(worst_mu, l1);
    largest = std::max(largest, dense.states.size());
    cases.push_back({{"k", k}, {"sites", N}, {"states", dense.states.size()}, {"lambda", q.lambda},
                     {"lambda_error", dl}, {"mu_l1_error", l1}});
  }
  c.numbers = {{"instances", n}, {"max_lambda_error", worst_l}, {"max_mu_l1_error", worst_mu},
               {"largest_state_count", largest}, {"cases", cases}};
  c.pass = worst_l <= tol_l && worst_mu <= tol_mu;
  detail::say(ctx, "  oracle: max |dlambda| " + fmt17(worst_l) + ", max l1(mu) " + fmt17(worst_mu));
  return c;
}

inline CriterionResult neutral_micro(const json& exp, const RunContext&) {
  const auto& p = exp.at("micro");
  CriterionResult c{2, "closed-form neutral instances N = 2 and N = 3", false, json::object(), {}, false};
  const double tol = p.at("tol").get<double>();
  auto solve = [](std::int64_t N) {
    const MultinomialKernel k(MapModel::neutral(2), N);
    const SimplexLattice L(N, 2);
    PowerOptions po;
    po.tol = 1e-15;
    return power_iterate_qsd(build_substochastic_matrix(k, L), po);
  };
  const auto q2 = solve(2), q3 = solve(3);
  const double e2 = std::abs(q2.lambda - 0.5), e3 = std::abs(q3.lambda - 2.0 / 3.0);
  const double emu = std::max(std::abs(q3.mu[0] - 0.5), std::abs(q3.mu[1] - 0.5));
  c.numbers = {{"lambda_N2", q2.lambda}, {"lambda_N3", q3.lambda}, {"mu_N3", q3.mu},
               {"lambda_N2_error", e2},  {"lambda_N3_error", e3},  {"mu_N3_error", emu}};
  c.pass = e2 <= tol && e3 <= tol && emu <= tol;
  return c;
}

inline CriterionResult lambda_scaling(const json& exp, const RunContext& ctx) {
  const auto& p = exp.at("scaling");
  CriterionResult c{3, "log(1 - lambda) is linear in 1/eps with negative slope for the Ricker map", false, json::object(), {}, false};
  const auto cfg = detail::sub_config(p.at("sweep"), exp, ctx);
  const auto rows = detail::sweep_and_save(cfg, ctx, "lambda_scaling.csv");
  detail::require_ok(rows);
  const auto fit = fit_extinction_exponent(rows);
  const double mono = monotone_fraction(detail::column(rows, [](const SweepRow& r) { return r.one_minus_lambda; }), true);
  c.numbers = {{"c_hat", fit.c_hat},     {"slope", -fit.c_hat},
               {"intercept", fit.intercept}, {"r_squared", fit.r_squared},
               {"monotone_fraction", mono},  {"residual_trend", fit.residual_trend},
               {"rows", detail::rows_json(rows, cfg)}};
  c.notes = fit.warnings;
  c.pass = fit.c_hat > 0.0 && fit.r_squared > p.at("min_r_squared").get<double>() &&
           mono >= p.at("min_monotone_fraction").get<double>();
  detail::write_file(ctx, "lambda_scaling_fit.json", [&](std::ostream& os) {
    os << json{{"c_hat", fit.c_hat}, {"intercept", fit.intercept}, {"r_squared", fit.r_squared}, {"used", fit.used}}
              .dump(2)
       << "\n";
  });
  return c;
}

inline CriterionResult ricker_dichotomy(const json& exp, const RunContext& ctx) {
  const auto& p = exp.at("dichotomy");
  CriterionResult c{4, "Ricker QSD concentrates near 0 when f0 < 1 and on ln 2 when f0 = 2", false, json::object(), {}, false};
  const double mono_min = p.at("min_monotone_fraction").get<double>();
  const auto ext = detail::sub_config(p.at("extinction_sweep"), exp, ctx);
  const auto met = detail::sub_config(p.at("metastable_sweep"), exp, ctx);
  const auto re = detail::sweep_and_save(ext, ctx, "ricker_extinction.csv");
  const auto rm = detail::sweep_and_save(met, ctx, "ricker_metastable.csv");
  detail::require_ok(re);
  detail::require_ok(rm);
  const auto near_e = detail::column(re, [&](const SweepRow& r) { return r.masses[detail::region_index(ext, "near_zero")]; });
  const auto near_m = detail::column(rm, [&](const SweepRow& r) { return r.masses[detail::region_index(met, "near_zero")]; });
  const auto ball_m = detail::column(rm, [&](const SweepRow& r) { return r.masses[detail::region_index(met, "ln2_ball")]; });
  const double mono_e = monotone_fraction(near_e, false), mono_m = monotone_fraction(near_m, true);
  const bool ext_ok = mono_e >= mono_min && near_e.back() >= p.at("extinction_final_min").get<double>();
  const bool met_ok = mono_m >= mono_min && near_m.back() <= p.at("metastable_near_zero_max").get<double>() &&
                      ball_m.back() >= p.at("metastable_ball_min").get<double>();
  c.numbers = {{"extinction_near_zero", near_e},
               {"extinction_monotone_fraction", mono_e},
               {"metastable_near_zero", near_m},
               {"metastable_monotone_fraction", mono_m},
               {"metastable_ln2_ball", ball_m},
               {"extinction_rows", detail::rows_json(re, ext)},
               {"metastable_rows", detail::rows_json(rm, met)}};
  if (!ext_ok) c.notes.push_back("f0 < 1 branch failed");
  if (!met_ok) c.notes.push_back("f0 > 1 branch failed");
  c.pass = ext_ok && met_ok;
  return c;
}

inline CriterionResult leslie_gower(const json& exp, const RunContext& ctx) {
  const auto& p = exp.at("leslie_gower");
  CriterionResult c{5, "Leslie-Gower QSD mode converges to the coexistence point; exclusion mass sits at the boundary", false, json::object(), {}, false};
  const auto co = detail::sub_config(p.at("coexistence_sweep"), exp, ctx);
  const auto ex = detail::sub_config(p.at("exclusion_sweep"), exp, ctx);
  const Vec target = to_vec(p.at("coexistence_point").get<std::vector<double>>());
  const auto rc = detail::sweep_and_save(co, ctx, "leslie_gower_coexistence.csv");
  const auto rx = detail::sweep_and_save(ex, ctx, "leslie_gower_exclusion.csv");
  detail::require_ok(rc);
  detail::require_ok(rx);
  std::vector<double> dist, steps;
  for (const auto& r : rc) {
    dist.push_back(sup_distance(r.mode, target));
    steps.push_back(dist.back() / r.epsilon);
  }
  const double ball = rc.back().masses[detail::region_index(co, "coexistence_ball")];
  const double bnd = rx.back().masses[detail::region_index(ex, "boundary")];
  const bool mode_ok = steps.back() <= p.at("max_mode_steps").get<double>() + 1e-9;
  const bool ball_ok = ball > p.at("min_ball_mass").get<double>();
  const bool bnd_ok = bnd >= p.at("min_boundary_mass").get<double>();
  c.numbers = {{"mode_distance", dist},         {"mode_distance_in_steps", steps}, {"ball_mass_smallest_eps", ball},
               {"exclusion_boundary_mass", bnd}, {"coexistence_rows", detail::rows_json(rc, co)},
               {"exclusion_rows", detail::rows_json(rx, ex)}};
  if (!mode_ok) c.notes.push_back("mode is more than the allowed lattice steps from the coexistence point");
  if (!ball_ok) c.notes.push_back("ball mass at the smallest eps is below the threshold");
  if (!bnd_ok) c.notes.push_back("exclusion boundary mass is below the threshold");
  c.pass = mode_ok && ball_ok && bnd_ok;
  return c;
}

inline CriterionResult replicator_rps(const json& exp, const RunContext& ctx) {
  const auto& p = exp.at("rps");
  CriterionResult c{6, "rock-paper-scissors QSD mass near the interior equilibrium grows with N", false, json::object(), {}, false};
  const auto cfg = detail::sub_config(p.at("sweep"), exp, ctx);
  const auto rows = detail::sweep_and_save(cfg, ctx, "replicator_rps.csv");
  detail::require_ok(rows);
  const auto ball = detail::column(rows, [&](const SweepRow& r) { return r.masses[detail::region_index(cfg, "interior_ball")]; });
  const double mono = monotone_fraction(ball, false);
  const auto fit = fit_extinction_exponent(rows);
  const bool mass_ok = mono >= p.at("min_monotone_fraction").get<double>() && ball.back() > p.at("min_ball_mass").get<double>();
  const bool fit_ok = fit.c_hat > 0.0 && fit.r_squared > p.at("min_r_squared").get<double>();
  c.numbers = {{"ball_mass", ball},     {"monotone_fraction", mono},         {"c_hat", fit.c_hat},
               {"r_squared", fit.r_squared}, {"rows", detail::rows_json(rows, cfg)}};
  c.notes = fit.warnings;
  if (!mass_ok)
    c.notes.push_back("interior ball mass at the largest N is " + fmt17(ball.back()) +
                      "; the deterministic contraction toward the interior point is too weak at this N");
  if (!fit_ok) c.notes.push_back("log-linear fit of 1 - lambda failed");
  c.pass = mass_ok && fit_ok;
  return c;
}

inline CriterionResult geometric_absorption(const json& exp, const RunContext& ctx) {
  const auto& p = exp.at("geometric");
  CriterionResult c{7, "absorption time from the QSD is geometric with parameter 1 - lambda", false, json::object(), {}, false};
  const auto samples = p.at("samples").get<std::size_t>();
  const double p_min = p.at("min_p_value").get<double>();
  const RngStream base(exp.at("seed").get<std::uint64_t>(), {7});
  c.pass = true;
  json inst = json::array();
  std::uint64_t idx = 0;
  for (const auto& block : p.at("instances")) {
    const auto cfg = detail::sub_config(block, exp, ctx);
    const auto check = visit_row(cfg, 0, [&](const auto& kernel, const auto& lattice, std::int64_t) {
      const auto q = power_iterate_qsd(build_substochastic_matrix(kernel, lattice));
      return std::pair{q.lambda, survival_time_check(kernel, lattice, q, samples, base.derive(idx), 0, 40, ctx.threads)};
    });
    const auto& sc = check.second;
    const bool ok = !sc.inconclusive && sc.p_value > p_min;
    c.pass = c.pass && ok;
    inst.push_back({{"name", cfg.name},         {"lambda", check.first}, {"p_value", sc.p_value}, {"chi2", sc.chi2},
                    {"dof", sc.dof},            {"mean", sc.mean},       {"expected_mean", sc.expected_mean},
                    {"censored", sc.censored},  {"inconclusive", sc.inconclusive}});
    if (!ok) c.notes.push_back(cfg.name + ": geometric law rejected or inconclusive");
    ++idx;
  }
  c.numbers = {{"samples", samples}, {"instances", inst}};
  return c;
}

namespace rate_suite {

inline Vec random_point(const MapModel& m, RngStream& rng, double hi) {
  Vec x(m.dim());
  if (m.simplex_domain()) {
    for (int i = 0; i < m.dim(); ++i) x[i] = -std::log(rng.uniform_open());
    x /= x.sum();
    if (rng.uniform() < 0.1) {
      x[static_cast<Eigen::Index>(rng.uniform() * m.dim())] = 0.0;
      x /= x.sum();
    }
  } else {
    for (int i = 0; i < m.dim(); ++i) x[i] = rng.uniform() < 0.05 ? 0.0 : hi * rng.uniform();
  }
  return x;
}

}  // namespace rate_suite

inline CriterionResult rate_function_suite(const json& exp, const RunContext& ctx) {
  const auto& p = exp.at("rate_suite");
  CriterionResult c{8, "rate function properties and the large-deviation sandwich", false, json::object(), {}, false};
  const auto pairs = p.at("pairs").get<int>();
  const auto triples = p.at("convexity_triples").get<int>();
  const auto coercive = p.at("coercivity_samples").get<int>();
  const double zero_tol = p.at("zero_set_tol").get<double>();
  const RngStream base(exp.at("seed").get<std::uint64_t>(), {8});
  bool nonneg = true, zero_set = true, convex = true, coerc = true;
  json per_model = json::array();
  std::uint64_t mi = 0;
  for (const auto& mb : p.at("models")) {
    const auto model = model_from_json(mb.at("model"));
    const auto kind = mb.at("kernel").get<std::string>() == "poisson" ? KernelKind::poisson : KernelKind::multinomial;
    const double hi = mb.at("box").get<double>();
    const RateFunction rf(model, kind);
    RngStream rng = base.derive(mi++);
    double min_rate = kInf, worst_zero = 0.0, worst_convex = 0.0;
    std::size_t small = 0;
    for (int t = 0; t < pairs; ++t) {
      const Vec x = rate_suite::random_point(model, rng, hi);
      Vec y;
      if (t % 2 == 0) {
        y = rate_suite::random_point(model, rng, hi);
      } else {
        const Vec Fx = model(x);
        const double scale = std::pow(10.0, -8.0 + 7.0 * rng.uniform());
        y = Fx;
        for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = std::max(0.0, y[i] + scale * (2 * rng.uniform() - 1));
        if (model.simplex_domain()) y /= y.sum();
      }
      const auto r = rf(x, y);
      min_rate = std::min(min_rate, r.value());
      if (r.value() < 1e-9) {
        ++small;
        worst_zero = std::max(worst_zero, sup_distance(y, model(x)));
      }
      if (t < 1000 && rf(x, model(x)).value() != 0.0) zero_set = false;
    }
    if (min_rate < 0.0) nonneg = false;
    if (worst_zero >= zero_tol) zero_set = false;
    for (int t = 0; t < triples; ++t) {
      const Vec x = rate_suite::random_point(model, rng, hi);
      const Vec y1 = rate_suite::random_point(model, rng, hi), y2 = rate_suite::random_point(model, rng, hi);
      const double s = rng.uniform();
      const auto a = rf(x, y1), b = rf(x, y2);
      if (a.is_infinite() || b.is_infinite()) continue;
      const double excess = rf(x, s * y1 + (1 - s) * y2).value() - (s * a.value() + (1 - s) * b.value());
      worst_convex = std::max(worst_convex, excess);
    }
    if (worst_convex > 1e-9) convex = false;
    json deltas = json::array();
    for (double delta : p.at("deltas").get<std::vector<double>>()) {
      double lowest = kInf;
      std::vector<Vec> xs;
      for (int t = 0; t < coercive; ++t) {
        const Vec x = rate_suite::random_point(model, rng, hi);
        const Vec Fx = model(x);
        Vec y = Fx;
        const auto i = static_cast<Eigen::Index>(rng.uniform() * y.size());
        const double step = delta * (1.0 + 1e-9) + rng.uniform() * 0.5;
        y[i] += rng.uniform() < 0.5 ? step : -step;
        if (model.simplex_domain()) y[(i + 1) % y.size()] -= y[i] - Fx[i];
        if (!model.in_domain(y) || sup_distance(y, Fx) <= delta) continue;
        xs.push_back(x);
        lowest = std::min(lowest, rf(x, y).value());
      }
      const auto cb = chernov_beta_bound(rf, delta, xs);
      if (!(cb.beta_closed > 0.0 && lowest >= cb.beta_closed)) coerc = false;
      deltas.push_back({{"delta", delta}, {"lowest_sampled_rate", lowest}, {"beta_closed", cb.beta_closed}, {"beta", cb.beta}});
    }
    per_model.push_back({{"model", model.name()},
                         {"min_rate", min_rate},
                         {"near_zero_samples", small},
                         {"max_distance_at_zero_rate", worst_zero},
                         {"max_convexity_excess", worst_convex},
                         {"coercivity", deltas}});
  }
  const auto& sw = p.at("sandwich");
  const auto model = model_from_json(sw.at("model"));
  bool sandwich = true;
  json sand = json::array();
  for (double eps : sw.at("epsilons").get<std::vector<double>>()) {
    const PoissonBranchingKernel k(model, eps);
    const Counts x{static_cast<std::int64_t>(std::round(sw.at("x").get<double>() / eps))};
    const auto r = ld_sandwich(k, x, sw.at("center").get<double>(), sw.at("radius").get<double>(),
                               sw.at("draws").get<std::size_t>(),
                               base.derive(1000 + static_cast<std::uint64_t>(std::llround(1 / eps))));
    sandwich = sandwich && r.pass;
    sand.push_back({{"epsilon", eps},       {"empirical", r.empirical}, {"exact", r.exact}, {"inf_open", r.inf_open},
                    {"inf_closed", r.inf_closed}, {"slack", r.slack}, {"hits", r.hits}, {"pass", r.pass}});
  }
  c.numbers = {{"nonnegativity", nonneg}, {"zero_set", zero_set}, {"convexity", convex}, {"coercivity", coerc},
               {"sandwich", sandwich},   {"models", per_model},   {"sandwich_rows", sand}};
  c.pass = nonneg && zero_set && convex && coerc && sandwich;
  detail::say(ctx, std::string("  rate suite: ") + (c.pass ? "all properties hold" : "a property failed"));
  return c;
}

inline CriterionResult chainrec_consistency(const json& exp, const RunContext& ctx) {
  const auto& p = exp.at("chainrec");
  CriterionResult c{9, "chain-recurrence classes: identity calibration, Ricker and Leslie-Gower Morse structure", false, json::object(), {}, false};
  // identity map: one class covering the grid
  const auto& pi = p.at("identity");
  const auto id_model = model_from_json(json{{"type", "identity"}, {"dim", 1}});
  const auto id_grid = Grid::box(Vec::Zero(1), Vec::Ones(1), pi.at("cells").get<int>());
  const auto id_rep = ap_basic_classes(build_pseudoorbit_graph(id_model, id_grid, pi.at("delta").get<double>(), ctx.threads));
  const bool id_ok = id_rep.classes.size() == 1 && id_rep.classes[0].members.size() == id_grid.size();

  // Ricker f0 = 2: {0} and a class around ln 2 that is a verified quasiattractor
  const auto& pr = p.at("ricker");
  const auto rm = model_from_json(pr.at("model"));
  const auto rgrid = Grid::box(Vec::Zero(1), Vec::Constant(1, pr.at("hi").get<double>()), pr.at("cells").get<int>());
  const double rdelta = pr.at("delta").get<double>();
  const auto rrep = ap_basic_classes(build_pseudoorbit_graph(rm, rgrid, rdelta, ctx.threads));
  const auto class_of = [](const BasicClassReport& rep, std::size_t node) -> const BasicClass* {
    for (const auto& k : rep.classes)
      if (std::find(k.members.begin(), k.members.end(), node) != k.members.end()) return &k;
    return nullptr;
  };
  const double ln2 = std::log(2.0);
  const auto* l2 = class_of(rrep, rgrid.nearest(Vec::Constant(1, ln2)));
  const auto* zero = class_of(rrep, rgrid.nearest(Vec::Zero(1)));
  std::optional<bool> verified;
  if (l2) verified = verify_attractor(rm, rgrid, l2->members, rdelta, pr.at("verify_steps").get<int>()).verdict;
  const bool ricker_ok = rrep.principal_count() == 2 && l2 && zero && l2 != zero && l2->quasiattractor &&
                         !zero->in_M1 && verified.value_or(false) && rrep.quasiattractors().size() == 1;

  // Leslie-Gower coexistence: four principal classes matching the four equilibria
  const auto& pl = p.at("leslie_gower");
  const auto lm = model_from_json(pl.at("model"));
  const auto lgrid = default_chainrec_grid(lm, pl.at("cells").get<int>());
  const double ldelta = pl.at("delta").get<double>();
  const auto lrep = ap_basic_classes(build_pseudoorbit_graph(lm, lgrid, ldelta, ctx.threads));
  const auto eq = find_equilibria(lm, Box{lgrid.lo(), lgrid.hi()}, pl.at("seeds_per_axis").get<int>());
  const auto diag = morse_consistency_check(invariant_sets_from(eq), lrep, lgrid, ldelta);
  const bool lg_ok = lrep.principal_count() == pl.at("expected_classes").get<std::size_t>() &&
                     eq.size() == pl.at("expected_classes").get<std::size_t>() && diag.consistent;

  detail::write_file(ctx, "leslie_gower_classes.dot", [&](std::ostream& os) { write_dot(lrep, os); });
  c.numbers = {{"identity_classes", id_rep.classes.size()},
               {"identity_pass", id_ok},
               {"ricker_principal_classes", rrep.principal_count()},
               {"ricker_all_classes", rrep.classes.size()},
               {"ricker_ln2_quasiattractor", l2 ? l2->quasiattractor : false},
               {"ricker_ln2_verified", verified ? json(*verified) : json(nullptr)},
               {"ricker_pass", ricker_ok},
               {"leslie_gower_principal_classes", lrep.principal_count()},
               {"leslie_gower_all_classes", lrep.classes.size()},
               {"leslie_gower_equilibria", eq.size()},
               {"leslie_gower_morse_consistent", diag.consistent},
               {"leslie_gower_pass", lg_ok}};
  c.notes = diag.mismatches;
  c.pass = id_ok && ricker_ok && lg_ok;
  return c;
}

inline CriterionResult estimator_agreement(const json& exp, const RunContext& ctx) {
  const auto& p = exp.at("estimators");
  CriterionResult c{10, "Fleming-Viot and Yaglom estimates agree with the exact solve", false, json::object(), {}, false};
  const double tol_l = p.at("tol_lambda").get<double>(), tol_tv = p.at("tol_tv").get<double>();
  c.pass = true;
  json inst = json::array();
  for (const auto& block : p.at("instances")) {
    auto cfg = detail::sub_config(block, exp, ctx);
    cfg.solver.method = SolverMethod::power;
    const auto exact = solve_config_row(cfg, 0);
    json entry{{"name", cfg.name}, {"lambda_exact", exact.qsd.lambda}};
    for (auto m : {SolverMethod::fv, SolverMethod::yaglom}) {
      cfg.solver.method = m;
      const auto est = solve_config_row(cfg, 0);
      const double dl = std::abs(est.qsd.lambda - exact.qsd.lambda);
      const double tv = total_variation(est.qsd.mu, exact.qsd.mu);
      const bool ok = dl <= tol_l && tv <= tol_tv;
      c.pass = c.pass && ok;
      entry[to_string(m)] = {{"lambda", est.qsd.lambda}, {"lambda_error", dl}, {"tv", tv}, {"pass", ok}};
      if (!ok) c.notes.push_back(cfg.name + " " + to_string(m) + ": outside tolerance");
      detail::say(ctx, "  " + cfg.name + " " + to_string(m) + ": |dlambda| " + fmt17(dl) + ", tv " + fmt17(tv));
    }
    inst.push_back(entry);
  }
  c.numbers = {{"instances", inst}};
  return c;
}

// Not an acceptance criterion: reports the persistence indicator next to the deterministic
// outcome and the QSD boundary mass for each parameter set.
inline CriterionResult host_parasitoid(const json& exp, const RunContext& ctx) {
  const auto& p = exp.at("host_parasitoid");
  CriterionResult c{0, "host-parasitoid indicator against deterministic orbits and QSD boundary mass", false, json::object(), {}, false};
  c.pass = true;
  json sets = json::array();
  const double thr = p.at("boundary_threshold").get<double>();
  for (const auto& s : p.at("sets")) {
    const auto cfg = detail::sub_config(s.at("config"), exp, ctx);
    const auto model = model_from_json(cfg.model);
    const auto& mp = cfg.model;
    const ThompsonParams tp{mp.at("r").get<double>(), mp.at("K").get<double>(), mp.at("b").get<double>(),
                            mp.at("k").get<double>()};
    const auto ind = host_parasitoid_indicator(tp);
    const auto orbit = iterate(model, to_vec(s.at("x0").get<std::vector<double>>()), s.at("steps").get<std::size_t>());
    const std::size_t tail = std::min<std::size_t>(orbit.size(), s.at("tail").get<std::size_t>());
    double tail_min = kInf;
    for (std::size_t t = orbit.size() - tail; t < orbit.size(); ++t) tail_min = std::min(tail_min, orbit[t].minCoeff());
    const bool orbit_persists = tail_min > thr;
    const bool predicts = ind.value > 1.0;
    const auto rows = detail::sweep_and_save(cfg, ctx, "host_parasitoid_" + cfg.name + ".csv");
    const double bmass = rows.back().ok() ? rows.back().masses[detail::region_index(cfg, "boundary")]
                                          : std::numeric_limits<double>::quiet_NaN();
    const bool agree = predicts == orbit_persists;
    c.pass = c.pass && agree;
    sets.push_back({{"name", cfg.name},
                    {"y_star", ind.y_star},
                    {"indicator", ind.value},
                    {"indicator_predicts", predicts ? "coexistence" : "extinction"},
                    {"orbit_final", to_std(orbit.back())},
                    {"orbit_tail_min", tail_min},
                    {"orbit_outcome", orbit_persists ? "coexistence" : "extinction"},
                    {"qsd_boundary_mass", bmass},
                    {"rows", detail::rows_json(rows, cfg)}});
    if (!agree) c.notes.push_back(cfg.name + ": indicator and deterministic orbit disagree");
  }
  c.numbers = {{"sets", sets}};
  return c;
}

}  // namespace criteria

// ---- named experiments ---------------------------------------------------------------

struct ExperimentSpec {
  std::string name;
  std::string summary;
  std::vector<std::pair<int, CriterionFn>> criteria;  // id 0 = report-only check
  json defaults;
};

namespace detail {

inline json poisson_sweep(const std::string& name, json model, std::vector<double> eps, json regions,
                          json lattice = json::object()) {
  json j{{"name", name}, {"model", std::move(model)}, {"kernel", {{"kind", "poisson"}, {"epsilons", std::move(eps)}}},
         {"regions", std::move(regions)}};
  if (!lattice.empty()) j["lattice"] = std::move(lattice);
  return j;
}

inline std::vector<double> inverse(std::initializer_list<double> ns) {
  std::vector<double> out;
  for (double n : ns) out.push_back(1.0 / n);
  return out;
}

inline json ricker(double f0) { return json{{"type", "ricker"}, {"f0", f0}}; }
inline json leslie_gower(std::vector<double> b, std::vector<std::vector<double>> c) {
  return json{{"type", "leslie_gower"}, {"b", std::move(b)}, {"c", std::move(c)}};
}
inline json rps_model() {
  return json{{"type", "replicator"}, {"payoff", {{0, -1, 2}, {2, 0, -1}, {-1, 2, 0}}}, {"basal", 10.0}};
}

}  // namespace detail

inline const std::vector<ExperimentSpec>& experiment_catalogue() {
  using detail::inverse;
  static const std::vector<ExperimentSpec> cat = [] {
    std::vector<ExperimentSpec> v;
    const json lg_co = detail::leslie_gower({2, 2}, {{1, 0.5}, {0.5, 1}});
    const json lg_ex = detail::leslie_gower({3, 2}, {{1, 0.5}, {1, 1}});

    v.push_back({"qsd_vs_oracle",
                 "exact solver against a dense oracle, closed forms, the geometric absorption law, and the "
                 "Monte Carlo estimators",
                 {{1, criteria::oracle_equivalence},
                  {2, criteria::neutral_micro},
                  {7, criteria::geometric_absorption},
                  {10, criteria::estimator_agreement}},
                 json{{"seed", 20240601},
                      {"oracle",
                       {{"instances", 25},
                        {"types", {2, 3}},
                        {"max_sites", 25},
                        {"max_states", 500},
                        {"payoff_range", 1.0},
                        {"power_tol", 1e-14},
                        {"max_iter", 1000000},
                        {"tol_lambda", 1e-8},
                        {"tol_mu", 1e-8}}},
                      {"micro", {{"tol", 1e-12}}},
                      {"geometric",
                       {{"samples", 10000},
                        {"min_p_value", 0.001},
                        {"instances",
                         {json{{"name", "neutral_N3"},
                               {"model", {{"type", "neutral"}, {"k", 2}}},
                               {"kernel", {{"kind", "multinomial"}, {"sites", {3}}}}},
                          detail::poisson_sweep("ricker_eps0.2", detail::ricker(2.0), {0.2}, json::array()),
                          detail::poisson_sweep("leslie_gower_eps0.25", lg_co, {0.25}, json::array())}}}},
                      {"estimators",
                       {{"tol_lambda", 0.02},
                        {"tol_tv", 0.05},
                        {"instances",
                         {json{{"name", "neutral_N3"},
                               {"model", {{"type", "neutral"}, {"k", 2}}},
                               {"kernel", {{"kind", "multinomial"}, {"sites", {3}}}},
                               {"solver",
                                {{"particles", 10000},
                                 {"steps", 220},
                                 {"burn_in", 20},
                                 {"samples", 10000},
                                 {"horizon", 5}}}},
                          json{{"name", "ricker_eps0.05"},
                               {"model", detail::ricker(2.0)},
                               {"kernel", {{"kind", "poisson"}, {"epsilons", {0.05}}}},
                               {"solver",
                                {{"particles", 10000},
                                 {"steps", 600},
                                 {"burn_in", 100},
                                 {"samples", 10000},
                                 {"horizon", 200},
                                 {"x0", {0.7}}}}}}}}}}});

    v.push_back({"lambda_scaling",
                 "log-linear decay of 1 - lambda in 1/eps for the Ricker map, and the rate-function suite",
                 {{3, criteria::lambda_scaling}, {8, criteria::rate_function_suite}},
                 json{{"seed", 20240602},
                      {"scaling",
                       {{"min_r_squared", 0.9},
                        {"min_monotone_fraction", 0.8},
                        {"sweep", detail::poisson_sweep("ricker_f0_2", detail::ricker(2.0),
                                                        inverse({5, 10, 15, 20, 25, 30, 35, 40, 45, 50}),
                                                        json::array({{{"name", "ln2_ball"},
                                                                      {"type", "ball"},
                                                                      {"center", {std::log(2.0)}},
                                                                      {"radius", 0.2}}}))}}},
                      {"rate_suite",
                       {{"pairs", 100000},
                        {"convexity_triples", 10000},
                        {"coercivity_samples", 20000},
                        {"deltas", {0.05, 0.2, 0.5}},
                        {"zero_set_tol", 1e-3},
                        {"models",
                         {{{"model", detail::ricker(2.0)}, {"kernel", "poisson"}, {"box", 3.0}},
                          {{"model", lg_co}, {"kernel", "poisson"}, {"box", 3.0}},
                          {{"model", {{"type", "spatial_ricker"}, {"f0", 3.0}, {"dispersal", {{0.8, 0.2}, {0.3, 0.7}}}}},
                           {"kernel", "poisson"},
                           {"box", 3.0}},
                          {{"model", detail::rps_model()}, {"kernel", "multinomial"}, {"box", 1.0}}}},
                        {"sandwich",
                         {{"model", detail::ricker(2.0)},
                          {"epsilons", {0.2, 0.1, 0.05}},
                          {"x", 0.7},
                          {"center", 1.3},
                          {"radius", 0.2},
                          {"draws", 100000}}}}}}});

    const json ricker_regions = json::array(
        {{{"name", "near_zero"}, {"type", "boundary_neighborhood"}, {"radius", 0.1}},
         {{"name", "ln2_ball"}, {"type", "ball"}, {"center", {std::log(2.0)}}, {"radius", 0.2}}});
    v.push_back({"ricker_dichotomy",
                 "Ricker QSD: extinction-side concentration for f0 < 1, metastability at ln 2 for f0 > 1",
                 {{4, criteria::ricker_dichotomy}},
                 json{{"seed", 20240603},
                      {"dichotomy",
                       {{"min_monotone_fraction", 0.8},
                        {"extinction_final_min", 0.95},
                        {"metastable_near_zero_max", 0.01},
                        {"metastable_ball_min", 0.9},
                        {"extinction_sweep", detail::poisson_sweep("ricker_f0_0.8", detail::ricker(0.8),
                                                                   inverse({20, 30, 50, 100, 200}), ricker_regions)},
                        {"metastable_sweep", detail::poisson_sweep("ricker_f0_2", detail::ricker(2.0),
                                                                   inverse({20, 30, 50, 100, 200}), ricker_regions)}}}}});

    v.push_back({"leslie_gower",
                 "Leslie-Gower QSD: coexistence point and competitive exclusion",
                 {{5, criteria::leslie_gower}},
                 json{{"seed", 20240604},
                      {"leslie_gower",
                       {{"coexistence_point", {2.0 / 3.0, 2.0 / 3.0}},
                        {"max_mode_steps", 2.0},
                        {"min_ball_mass", 0.8},
                        {"min_boundary_mass", 0.9},
                        {"coexistence_sweep",
                         detail::poisson_sweep("leslie_gower_coexistence", lg_co, inverse({25, 50, 100, 200}),
                                               json::array({{{"name", "coexistence_ball"},
                                                             {"type", "ball"},
                                                             {"center", {2.0 / 3.0, 2.0 / 3.0}},
                                                             {"radius", 0.15}}}),
                                               json{{"cap_density", 1.6}})},
                        {"exclusion_sweep",
                         detail::poisson_sweep(
                             "leslie_gower_exclusion", lg_ex, inverse({10, 25, 50}),
                             json::array({{{"name", "boundary"}, {"type", "boundary_neighborhood"}, {"radius", 0.1}}}),
                             json{{"cap_density", 3.2}})}}}}});

    v.push_back({"replicator_rps",
                 "rock-paper-scissors replicator: interior concentration and lambda scaling in N",
                 {{6, criteria::replicator_rps}},
                 json{{"seed", 20240605},
                      {"rps",
                       {{"min_monotone_fraction", 0.8},
                        {"min_ball_mass", 0.8},
                        {"min_r_squared", 0.9},
                        {"sweep",
                         {{"name", "rps"},
                          {"model", detail::rps_model()},
                          {"kernel", {{"kind", "multinomial"}, {"sites", {30, 60, 90, 120, 150}}}},
                          {"regions",
                           {{{"name", "interior_ball"},
                             {"type", "ball"},
                             {"center", {1.0 / 3, 1.0 / 3, 1.0 / 3}},
                             {"radius", 0.1}}}}}}}}}});

    v.push_back({"chainrec_consistency",
                 "pseudo-orbit chain-recurrence classes on three calibration maps",
                 {{9, criteria::chainrec_consistency}},
                 json{{"seed", 20240606},
                      {"chainrec",
                       {{"identity", {{"cells", 100}, {"delta", 0.015}}},
                        {"ricker", {{"model", detail::ricker(2.0)}, {"hi", 3.0}, {"cells", 600}, {"delta", 0.02}, {"verify_steps", 20}}},
                        {"leslie_gower",
                         {{"model", lg_co}, {"cells", 200}, {"delta", 0.03}, {"seeds_per_axis", 12}, {"expected_classes", 4}}}}}}});

    const json hp_regions = json::array({{{"name", "boundary"}, {"type", "boundary_neighborhood"}, {"radius", 0.1}}});
    v.push_back({"host_parasitoid",
                 "host-parasitoid persistence indicator, deterministic outcome and QSD boundary mass",
                 {{0, criteria::host_parasitoid}},
                 json{{"seed", 20240607},
                      {"host_parasitoid",
                       {{"boundary_threshold", 1e-3},
                        {"sets",
                         {{{"x0", {0.5, 0.1}},
                           {"steps", 5000},
                           {"tail", 1000},
                           {"config",
                            detail::poisson_sweep(
                                "coexistence",
                                json{{"type", "thompson"}, {"r", 1.0}, {"K", 1.0}, {"b", 0.8}, {"k", 0.5}},
                                inverse({10, 20, 40}), hp_regions)}},
                          {{"x0", {1.0, 0.1}},
                           {"steps", 5000},
                           {"tail", 1000},
                           {"config",
                            detail::poisson_sweep(
                                "extinction",
                                json{{"type", "thompson"}, {"r", 0.5}, {"K", 2.0}, {"b", 0.1}, {"k", 0.5}},
                                inverse({5, 10, 20}), hp_regions)}}}}}}}});
    return v;
  }();
  return cat;
}

inline const ExperimentSpec& find_experiment(const std::string& name) {
  for (const auto& e : experiment_catalogue())
    if (e.name == name) return e;
  std::string names;
  for (const auto& e : experiment_catalogue()) names += (names.empty() ? "" : ", ") + e.name;
  throw DomainError("unknown experiment '" + name + "' (known: " + names + ")");
}

// Experiment and criterion function owning acceptance criterion id.
inline std::pair<const ExperimentSpec*, CriterionFn> find_criterion(int id) {
  for (const auto& e : experiment_catalogue())
    for (const auto& [cid, fn] : e.criteria)
      if (cid == id && id > 0) return {&e, fn};
  throw DomainError("no experiment implements criterion " + std::to_string(id));
}

// Runs one check, turning exceptions into a failed result. Budget errors mark it partial.
inline CriterionResult run_check(const CriterionFn& fn, int id, const json& cfg, const RunContext& ctx) {
  try {
    auto r = fn(cfg, ctx);
    r.id = id;
    return r;
  } catch (const BudgetError& e) {
    CriterionResult r{id, "budget exceeded", false, json::object(), {}, false};
    r.budget_exceeded = true;
    r.notes.push_back(std::string("budget exceeded: ") + e.what());
    return r;
  } catch (const std::exception& e) {
    CriterionResult r{id, "error", false, json::object(), {}, false};
    r.notes.push_back(std::string("error: ") + e.what());
    return r;
  }
}

inline json experiment_config(const std::string& name, const std::vector<std::string>& overrides) {
  json cfg = find_experiment(name).defaults;
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

// Runs every check of the named experiment and returns the verdict document; with an
// output directory the verdict, the effective config and the sweep tables are written there.
inline json run_named_experiment(const std::string& name, const json& cfg, const RunContext& ctx) {
  const auto& spec = find_experiment(name);
  if (!cfg.contains("seed") || !cfg.at("seed").is_number_integer() || cfg.at("seed").get<std::int64_t>() < 0)
    throw DomainError("experiment config needs an unsigned integer seed");
  json verdict{{"schema", "qsdlab.experiment_report/1"},
               {"experiment", name},
               {"version", version_string()},
               {"config_hash", config_hash(cfg)},
               {"seed", cfg.at("seed")}};
  json crit = json::array();
  bool pass = true, partial = false;
  for (const auto& [id, fn] : spec.criteria) {
    detail::say(ctx, "[" + name + "] check " + std::to_string(id));
    const auto r = run_check(fn, id, cfg, ctx);
    pass = pass && r.pass;
    partial = partial || r.budget_exceeded;
    crit.push_back(to_json(r));
  }
  verdict["criteria"] = crit;
  verdict["pass"] = pass;
  verdict["partial"] = partial;
  detail::write_file(ctx, "config.json", [&](std::ostream& os) { os << cfg.dump(2) << "\n"; });
  detail::write_file(ctx, "verdict.json", [&](std::ostream& os) { os << verdict.dump(2) << "\n"; });
  return verdict;
}

}  // namespace qsdlab
