#pragma once

#include "qsdlab/config.hpp"
#include "qsdlab/kernel.hpp"
#include "qsdlab/lattice.hpp"
#include "qsdlab/parallel.hpp"
#include "qsdlab/qsd.hpp"
#include "qsdlab/substochastic.hpp"

#include <chrono>
#include <cstdio>
#include <ostream>
#include <span>

namespace qsdlab {

struct SweepRow {
  double epsilon = 0.0;
  std::int64_t sites = 0;  // multinomial only
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double one_minus_lambda = std::numeric_limits<double>::quiet_NaN();
  double residual = std::numeric_limits<double>::quiet_NaN();
  std::size_t iterations = 0;
  std::size_t states = 0;
  std::vector<double> masses;  // one per configured region
  Vec mode;                    // density of the most massive state
  std::string status = "ok";
  double runtime = 0.0;        // seconds
  std::vector<std::string> warnings;
  bool ok() const { return status == "ok"; }
};

// A solved row together with its QSD vector, for callers that need the full measure.
struct RowSolution {
  SweepRow row;
  QsdResult qsd;
  std::vector<Vec> states;  // densities by rank, filled only when requested
};

inline TruncatedOrthantLattice orthant_lattice_from(const MapModel& model, double eps, const LatticeBlock& lb) {
  if (!lb.cap_density) return orthant_lattice_for(model, eps, lb.tail_tol);
  const auto cap = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(*lb.cap_density / eps - 1e-9)));
  return TruncatedOrthantLattice(std::vector<std::int64_t>(static_cast<std::size_t>(model.dim()), cap), eps,
                                 model.absorbing_kind());
}

namespace detail {

// Rounds a density to counts, each at least min_count. With total > 0 the counts are forced
// to sum to total: deficits go to the largest remainders, excesses come off the largest counts.
inline Counts round_counts(const Vec& x, double eps, std::int64_t total = 0, std::int64_t min_count = 0) {
  const auto k = static_cast<std::size_t>(x.size());
  Counts n(k);
  std::vector<double> frac(k);
  std::int64_t s = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double c = std::max(0.0, x[static_cast<Eigen::Index>(i)] / eps);
    n[i] = static_cast<std::int64_t>(total > 0 ? std::floor(c) : std::round(c));
    frac[i] = c - static_cast<double>(n[i]);
    if (n[i] < min_count) {
      n[i] = min_count;
      frac[i] = 0.0;
    }
    s += n[i];
  }
  if (total <= 0) return n;
  if (static_cast<std::int64_t>(k) * min_count > total) throw DomainError("round_counts: total too small");
  std::vector<std::size_t> order(k);
  for (std::size_t i = 0; i < k; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t j = 0; s < total; j = (j + 1) % k, ++s) ++n[order[j]];
  while (s > total) {
    const auto big = static_cast<std::size_t>(std::max_element(n.begin(), n.end()) - n.begin());
    --n[big];
    --s;
  }
  return n;
}

// Piecewise-constant transfer of a QSD vector to a finer lattice: each new state takes
// the mass of the old state at the same density (rounded). Not normalised.
template <Lattice Lold, Lattice Lnew>
std::vector<double> transfer_measure(const Lold& from, const std::vector<double>& mu, const Lnew& to, std::int64_t total) {
  std::vector<double> out(to.size(), 0.0);
  for (std::size_t r = 0; r < to.size(); ++r) {
    const Vec x = to.density(to.unrank(r));
    if (auto j = from.try_rank(round_counts(x, from.epsilon(), total))) out[r] = mu[*j];
  }
  return out;
}

template <Kernel K, Lattice L>
RowSolution solve_row(const K& kernel, const L& lattice, const ExperimentConfig& cfg, const std::vector<double>& initial,
                      std::size_t row_id, std::int64_t simplex_total, bool keep_states) {
  RowSolution out;
  const auto t0 = std::chrono::steady_clock::now();
  out.row.states = lattice.size();
  const auto& s = cfg.solver;
  if (s.method == SolverMethod::power) {
    BuildOptions bo;
    bo.prune_tol = cfg.lattice.prune_tol;
    bo.max_entries = cfg.lattice.max_entries;
    bo.threads = cfg.threads;
    const auto Q = build_substochastic_matrix(kernel, lattice, bo);
    PowerOptions po;
    po.tol = s.tol;
    po.max_iter = s.max_iter;
    po.initial = initial;
    out.qsd = power_iterate_qsd(Q, po);
    if (Q.total_truncation_loss_max() > 1e-6)
      out.qsd.warnings.push_back("truncation loss up to " + std::to_string(Q.total_truncation_loss_max()));
  } else {
    if (!cfg.seed) throw DomainError("a seed is required for stochastic methods");
    Vec x0;
    if (s.x0) {
      x0 = to_vec(*s.x0);
    } else if (simplex_total > 0) {
      x0 = Vec::Constant(kernel.dim(), 1.0 / kernel.dim());
    } else {
      x0 = Vec::Ones(kernel.dim());
    }
    if (x0.size() != kernel.dim()) throw DomainError("solver.x0 has the wrong dimension");
    const Counts n0 = round_counts(x0, lattice.epsilon(), simplex_total, 1);
    const RngStream rng(*cfg.seed, {0x5157, row_id});
    if (s.method == SolverMethod::fv) {
      FlemingViotOptions fo;
      fo.particles = s.particles;
      fo.steps = s.steps;
      fo.burn_in = s.burn_in;
      fo.threads = cfg.threads;
      out.qsd = fleming_viot_qsd(kernel, lattice, n0, fo, rng);
    } else {
      out.qsd = yaglom_estimate(kernel, lattice, n0, s.horizon, s.samples, rng, cfg.threads);
    }
  }
  out.row.lambda = out.qsd.lambda;
  out.row.one_minus_lambda = out.qsd.one_minus_lambda;
  out.row.residual = out.qsd.residual_l1;
  out.row.iterations = out.qsd.iterations;
  out.row.masses = mass_metrics(out.qsd, lattice, cfg.regions);
  out.row.mode = lattice.density(lattice.unrank(mode_index(out.qsd)));
  out.row.warnings = out.qsd.warnings;
  if (keep_states) {
    out.states.reserve(lattice.size());
    for (std::size_t r = 0; r < lattice.size(); ++r) out.states.push_back(lattice.density(lattice.unrank(r)));
  }
  out.row.runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace detail

// Calls fn(kernel, lattice, simplex_total) for the i-th epsilon (or site count) of cfg;
// simplex_total is the site count for multinomial kernels and 0 otherwise.
template <class Fn>
decltype(auto) visit_row(const ExperimentConfig& cfg, std::size_t i, Fn&& fn) {
  const MapModel model = model_from_json(cfg.model);
  if (cfg.kernel.kind == KernelKind::poisson) {
    const double eps = cfg.kernel.epsilons.at(i);
    const PoissonBranchingKernel kernel(model, eps);
    const auto lattice = orthant_lattice_from(model, eps, cfg.lattice);
    return fn(kernel, lattice, std::int64_t{0});
  }
  const auto N = cfg.kernel.sites.at(i);
  const MultinomialKernel kernel(model, N);
  const SimplexLattice lattice(N, model.dim());
  return fn(kernel, lattice, N);
}

// Solves the configured kernel at the i-th epsilon (or site count).
inline RowSolution solve_config_row(const ExperimentConfig& cfg, std::size_t i, bool keep_states = false) {
  return visit_row(cfg, i, [&](const auto& kernel, const auto& lattice, std::int64_t total) {
    auto sol = detail::solve_row(kernel, lattice, cfg, {}, i, total, keep_states);
    sol.row.epsilon = lattice.epsilon();
    sol.row.sites = total;
    return sol;
  });
}

// One row per epsilon. With warm_start (power method only) rows run in order and each
// starts from the previous QSD; otherwise rows run in parallel. Failures stay in the row.
inline std::vector<SweepRow> run_epsilon_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const MapModel model = model_from_json(cfg.model);
  const std::size_t n = cfg.kernel.size();
  std::vector<SweepRow> rows(n);
  auto record_failure = [&](std::size_t i, const std::exception& e) {
    rows[i] = SweepRow{};
    rows[i].epsilon = cfg.kernel.epsilon(i);
    if (cfg.kernel.kind == KernelKind::multinomial) rows[i].sites = cfg.kernel.sites[i];
    rows[i].masses.assign(cfg.regions.size(), std::numeric_limits<double>::quiet_NaN());
    rows[i].status = std::string("error: ") + e.what();
  };
  const bool warm = cfg.solver.warm_start && cfg.solver.method == SolverMethod::power;
  if (!warm) {
    ExperimentConfig inner = cfg;
    const unsigned outer = std::min<unsigned>(cfg.threads, static_cast<unsigned>(n));
    inner.threads = std::max(1u, cfg.threads / std::max(1u, outer));
    parallel_for(n, outer, [&](std::size_t i) {
      try {
        rows[i] = solve_config_row(inner, i).row;
      } catch (const std::exception& e) {
        record_failure(i, e);
      }
    });
    return rows;
  }
  if (cfg.kernel.kind == KernelKind::poisson) {
    std::optional<TruncatedOrthantLattice> prev;
    std::vector<double> prev_mu;
    for (std::size_t i = 0; i < n; ++i) {
      try {
        const double eps = cfg.kernel.epsilons[i];
        const PoissonBranchingKernel kernel(model, eps);
        const auto lattice = orthant_lattice_from(model, eps, cfg.lattice);
        std::vector<double> init;
        if (prev) init = detail::transfer_measure(*prev, prev_mu, lattice, 0);
        auto sol = detail::solve_row(kernel, lattice, cfg, init, i, 0, false);
        sol.row.epsilon = eps;
        rows[i] = std::move(sol.row);
        prev.emplace(lattice);
        prev_mu = std::move(sol.qsd.mu);
      } catch (const std::exception& e) {
        record_failure(i, e);
      }
    }
  } else {
    std::optional<SimplexLattice> prev;
    std::vector<double> prev_mu;
    for (std::size_t i = 0; i < n; ++i) {
      try {
        const auto N = cfg.kernel.sites[i];
        const MultinomialKernel kernel(model, N);
        const SimplexLattice lattice(N, model.dim());
        std::vector<double> init;
        if (prev) init = detail::transfer_measure(*prev, prev_mu, lattice, prev->sites());
        auto sol = detail::solve_row(kernel, lattice, cfg, init, i, N, false);
        sol.row.epsilon = 1.0 / static_cast<double>(N);
        sol.row.sites = N;
        rows[i] = std::move(sol.row);
        prev.emplace(lattice);
        prev_mu = std::move(sol.qsd.mu);
      } catch (const std::exception& e) {
        record_failure(i, e);
      }
    }
  }
  return rows;
}

// IEEE double with 17 significant digits (round-trips exactly).
inline std::string fmt17(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows, const std::vector<Region>& regions,
                            bool with_runtime = false) {
  int dim = 0;
  for (const auto& r : rows) dim = std::max(dim, static_cast<int>(r.mode.size()));
  os << "epsilon,sites,lambda,one_minus_lambda,residual,iterations,states";
  for (const auto& g : regions) os << ",mass_" << g.name;
  for (int j = 0; j < dim; ++j) os << ",mode_x" << j;
  os << ",status";
  if (with_runtime) os << ",runtime";
  os << "\n";
  for (const auto& r : rows) {
    os << fmt17(r.epsilon) << ',' << r.sites << ',' << fmt17(r.lambda) << ',' << fmt17(r.one_minus_lambda) << ','
       << fmt17(r.residual) << ',' << r.iterations << ',' << r.states;
    for (std::size_t j = 0; j < regions.size(); ++j)
      os << ',' << fmt17(j < r.masses.size() ? r.masses[j] : std::numeric_limits<double>::quiet_NaN());
    for (int j = 0; j < dim; ++j) os << ',' << (j < r.mode.size() ? fmt17(r.mode[j]) : std::string("nan"));
    os << ',' << csv_quote(r.status);
    if (with_runtime) os << ',' << fmt17(r.runtime);
    os << "\n";
  }
}

struct ExtinctionFit {
  double c_hat = 0.0;      // minus the slope of log(1 - lambda) against 1/eps
  double intercept = 0.0;
  double r_squared = 0.0;
  std::size_t used = 0;
  std::vector<double> residuals;  // in order of increasing 1/eps
  bool residual_trend = false;    // residuals change sign at most twice over >= 5 points
  std::vector<std::string> warnings;
};

// Ordinary least squares of log(1 - lambda) against 1/eps over the usable rows.
inline ExtinctionFit fit_extinction_exponent(std::span<const SweepRow> rows) {
  ExtinctionFit fit;
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : rows) {
    if (!r.ok()) {
      fit.warnings.push_back("row at eps " + fmt17(r.epsilon) + " failed and was excluded");
      continue;
    }
    const double q = r.one_minus_lambda;
    if (!(q > 0.0 && q < 1.0) || !(r.epsilon > 0.0)) {
      fit.warnings.push_back("row at eps " + fmt17(r.epsilon) + " has 1 - lambda = " + fmt17(q) + " and was excluded");
      continue;
    }
    pts.emplace_back(1.0 / r.epsilon, std::log(q));
  }
  if (pts.size() < 4) throw DomainError("fit_extinction_exponent: need at least 4 rows with 1 - lambda in (0,1)");
  std::sort(pts.begin(), pts.end());
  const double n = static_cast<double>(pts.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : pts) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [x, y] : pts) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (!(sxx > 0.0)) throw DomainError("fit_extinction_exponent: all rows share one epsilon");
  const double slope = sxy / sxx;
  fit.c_hat = -slope;
  fit.intercept = my - slope * mx;
  fit.used = pts.size();
  double sse = 0.0;
  for (const auto& [x, y] : pts) {
    const double e = y - (fit.intercept + slope * x);
    fit.residuals.push_back(e);
    sse += e * e;
  }
  fit.r_squared = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  const double scale = std::sqrt(sse / n);
  int changes = 0;
  for (std::size_t i = 1; i < fit.residuals.size(); ++i)
    if ((fit.residuals[i] > 0) != (fit.residuals[i - 1] > 0)) ++changes;
  if (pts.size() >= 5 && changes <= 2 && scale > 1e-9 * std::max(1.0, std::abs(my))) {
    fit.residual_trend = true;
    fit.warnings.push_back("residuals follow a systematic pattern (curvature in log(1 - lambda) vs 1/eps)");
  }
  if (fit.c_hat <= 0.0) fit.warnings.push_back("non-negative slope: no exponential decay of 1 - lambda");
  return fit;
}

// Share of consecutive pairs with v[i+1] < v[i] (decreasing) or v[i+1] > v[i], each
// strict beyond a relative tolerance.
inline double monotone_fraction(const std::vector<double>& v, bool decreasing, double rel_tol = 1e-10) {
  if (v.size() < 2) return 1.0;
  std::size_t good = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    const double tol = rel_tol * std::max(std::abs(v[i]), std::abs(v[i - 1]));
    if (decreasing ? v[i] < v[i - 1] - tol : v[i] > v[i - 1] + tol) ++good;
  }
  return static_cast<double>(good) / static_cast<double>(v.size() - 1);
}

}  // namespace qsdlab
