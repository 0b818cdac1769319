#pragma once

#include "qsdlab/substochastic.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <string>

namespace qsdlab {

struct QsdResult {
  std::string method;
  std::vector<double> mu;          // over transient lattice states, by rank
  double lambda = 0.0;
  double one_minus_lambda = 1.0;   // computed directly, not as 1 - lambda
  double residual_l1 = std::numeric_limits<double>::quiet_NaN();
  std::size_t iterations = 0;
  double off_lattice_mass = 0.0;   // Monte Carlo: share of samples beyond the lattice caps
  std::size_t survivors = 0;       // Yaglom: number of surviving chains
  double survival_fraction = 1.0;  // Yaglom
  std::vector<std::string> warnings;
};

struct PowerOptions {
  double tol = 1e-12;
  std::size_t max_iter = 200000;
  std::vector<double> initial;  // empty = uniform
};

// Left power iteration mu <- mu Q / |mu Q|_1, stopping when the l1 change drops below tol.
// The returned mu is the last iterate whose residual |mu Q - lambda mu|_1 is known exactly.
inline QsdResult power_iterate_qsd(const SubstochasticMatrix& Q, const PowerOptions& opt = {}) {
  const std::size_t T = Q.size();
  if (T == 0) throw DomainError("power_iterate_qsd: no transient states");
  std::vector<double> mu(T, 1.0 / static_cast<double>(T)), next(T);
  if (!opt.initial.empty()) {
    if (opt.initial.size() != T) throw DomainError("power_iterate_qsd: initial vector has wrong length");
    double s = 0.0;
    for (std::size_t i = 0; i < T; ++i) {
      // keep every state positive so the start is not orthogonal to the Perron vector
      mu[i] = std::max(opt.initial[i], 0.0) + 1e-300;
      s += mu[i];
    }
    for (double& v : mu) v /= s;
  }
  double change = kInf, lambda = 0.0;
  std::size_t it = 0;
  for (; it < opt.max_iter; ++it) {
    Q.left_multiply(mu, next);
    lambda = 0.0;
    for (double v : next) lambda += v;
    if (!(lambda > 0.0)) throw Error("power_iterate_qsd: all mass absorbed in one step (lambda = 0)");
    change = 0.0;
    for (std::size_t i = 0; i < T; ++i) {
      next[i] /= lambda;
      change += std::abs(next[i] - mu[i]);
    }
    if (change < opt.tol) break;
    mu.swap(next);
  }
  if (!(change < opt.tol))
    throw NonConvergenceError("power_iterate_qsd: no convergence in " + std::to_string(opt.max_iter) +
                                  " iterations (possible near-periodic Q)",
                              mu, lambda * change, it);
  QsdResult r;
  r.method = "power";
  r.lambda = lambda;
  r.residual_l1 = lambda * change;
  r.iterations = it + 1;
  double decay = 0.0;
  const auto& a = Q.absorption();
  const auto& loss = Q.truncation_loss();
  for (std::size_t i = 0; i < T; ++i) decay += mu[i] * (a[i] + loss[i]);
  r.one_minus_lambda = decay;
  r.mu = std::move(mu);
  return r;
}

struct FlemingViotOptions {
  std::size_t particles = 10000;
  std::size_t steps = 2000;
  std::size_t burn_in = 200;
  unsigned threads = 1;
};

// Fleming-Viot particle system. Absorbed particles restart at the state of a survivor
// chosen uniformly. mu is the time average of the empirical measure after burn_in.
template <Kernel K, Lattice L>
QsdResult fleming_viot_qsd(const K& kernel, const L& lattice, const Counts& x0, const FlemingViotOptions& opt,
                           const RngStream& rng) {
  if (opt.particles < 2) throw DomainError("fleming_viot_qsd: need at least 2 particles");
  if (opt.steps <= opt.burn_in) throw DomainError("fleming_viot_qsd: steps must exceed burn_in");
  if (kernel.is_absorbed(x0)) throw DomainError("fleming_viot_qsd: initial state is absorbed");
  const std::size_t n = opt.particles;
  std::vector<Counts> state(n, x0), next(n);
  std::vector<char> dead(n, 0);
  std::vector<double> hist(lattice.size(), 0.0);
  double off = 0.0, absorbed_after = 0.0;
  std::size_t recorded = 0;
  for (std::size_t t = 0; t < opt.steps; ++t) {
    const RngStream step_rng = rng.derive(t);
    parallel_for(n, opt.threads, [&](std::size_t p) {
      RngStream r = step_rng.derive(p);
      next[p] = kernel.sample_step(state[p], r);
      dead[p] = kernel.is_absorbed(next[p]) ? 1 : 0;
    });
    std::vector<std::size_t> alive;
    alive.reserve(n);
    for (std::size_t p = 0; p < n; ++p)
      if (!dead[p]) alive.push_back(p);
    if (alive.empty())
      throw EstimationError("fleming_viot_qsd: every particle was absorbed in one step; use more particles or a larger "
                            "habitat (smaller epsilon)");
    RngStream pick = step_rng.derive(~std::uint64_t{0});
    const std::size_t n_dead = n - alive.size();
    for (std::size_t p = 0; p < n; ++p) {
      if (!dead[p]) continue;
      const auto j = alive[static_cast<std::size_t>(pick.uniform() * static_cast<double>(alive.size()))];
      next[p] = next[j];
    }
    state.swap(next);
    if (t >= opt.burn_in) {
      absorbed_after += static_cast<double>(n_dead);
      ++recorded;
      for (const auto& s : state) {
        if (auto r = lattice.try_rank(s)) hist[*r] += 1.0;
        else off += 1.0;
      }
    }
  }
  QsdResult res;
  res.method = "fleming_viot";
  const double total = static_cast<double>(recorded) * static_cast<double>(n);
  for (double& v : hist) v /= total;
  res.mu = std::move(hist);
  res.off_lattice_mass = off / total;
  res.one_minus_lambda = absorbed_after / total;
  res.lambda = 1.0 - res.one_minus_lambda;
  res.iterations = opt.steps;
  if (res.off_lattice_mass > 0.0) res.warnings.push_back("some particles left the lattice caps");
  return res;
}

// Law at time `horizon` of independent chains from x0, conditioned on survival. lambda is
// the pooled one-step survival ratio over the second half of the horizon.
template <Kernel K, Lattice L>
QsdResult yaglom_estimate(const K& kernel, const L& lattice, const Counts& x0, std::size_t horizon,
                          std::size_t samples, const RngStream& rng, unsigned threads = 1) {
  if (kernel.is_absorbed(x0)) throw DomainError("yaglom_estimate: x0 must be transient");
  if (samples == 0) throw DomainError("yaglom_estimate: need at least one sample");
  std::vector<Counts> final_state(samples);
  std::vector<std::size_t> death(samples, horizon + 1);  // time of absorption, horizon+1 = survived
  parallel_for(samples, threads, [&](std::size_t s) {
    RngStream r = rng.derive(s);
    Counts x = x0;
    for (std::size_t t = 1; t <= horizon; ++t) {
      x = kernel.sample_step(x, r);
      if (kernel.is_absorbed(x)) {
        death[s] = t;
        break;
      }
    }
    final_state[s] = std::move(x);
  });
  QsdResult res;
  res.method = "yaglom";
  res.mu.assign(lattice.size(), 0.0);
  std::size_t alive = 0;
  double off = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    if (death[s] <= horizon) continue;
    ++alive;
    if (auto r = lattice.try_rank(final_state[s])) res.mu[*r] += 1.0;
    else off += 1.0;
  }
  if (alive == 0) throw EstimationError("yaglom_estimate: no chain survived to the horizon");
  for (double& v : res.mu) v /= static_cast<double>(alive);
  res.off_lattice_mass = off / static_cast<double>(alive);
  res.survivors = alive;
  res.survival_fraction = static_cast<double>(alive) / static_cast<double>(samples);
  res.iterations = horizon;
  // pooled survival over steps t in (horizon/2, horizon]
  double at_risk = 0.0, died = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t t = horizon / 2 + 1; t <= horizon; ++t) {
      if (death[s] < t) break;
      at_risk += 1.0;
      if (death[s] == t) died += 1.0;
    }
  }
  res.one_minus_lambda = at_risk > 0.0 ? died / at_risk : 0.0;
  res.lambda = 1.0 - res.one_minus_lambda;
  if (alive < 100) res.warnings.push_back("fewer than 100 surviving chains");
  return res;
}

struct SurvivalCheck {
  std::size_t samples = 0;
  std::size_t censored = 0;
  std::size_t horizon = 0;
  double mean = 0.0;           // over absorbed samples
  double expected_mean = 0.0;  // 1/(1 - lambda)
  double mean_z = 0.0;
  double chi2 = 0.0;
  int dof = 0;
  double p_value = 0.0;
  bool inconclusive = false;
  std::vector<std::size_t> bin_edges;  // bin j = [edge_j, edge_{j+1}), last bin open
  std::vector<double> observed, expected;
};

namespace detail {
inline std::vector<double> cumulative(const std::vector<double>& w) {
  std::vector<double> c(w.size());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) c[i] = (s += w[i]);
  return c;
}
}  // namespace detail

// Starts from X0 ~ mu and compares absorption times with Geometric(1 - lambda).
template <Kernel K, Lattice L>
SurvivalCheck survival_time_check(const K& kernel, const L& lattice, const QsdResult& qsd, std::size_t samples,
                                  const RngStream& rng, std::size_t horizon = 0, int max_bins = 40,
                                  unsigned threads = 1) {
  const double lam = qsd.lambda;
  if (!(lam > 0.0 && lam < 1.0)) throw DomainError("survival_time_check: lambda must be in (0,1)");
  if (qsd.mu.size() != lattice.size()) throw DomainError("survival_time_check: qsd does not match the lattice");
  const double q = qsd.one_minus_lambda > 0.0 ? qsd.one_minus_lambda : 1.0 - lam;
  const double loglam = std::log1p(-q);
  if (horizon == 0) horizon = static_cast<std::size_t>(std::ceil(std::log(1e-4) / loglam));
  const auto cum = detail::cumulative(qsd.mu);

  std::vector<AbsorptionRecord> recs(samples);
  parallel_for(samples, threads, [&](std::size_t s) {
    RngStream r = rng.derive(s);
    const auto idx = sample_discrete(cum, r);
    recs[s] = simulate_until_absorption(kernel, lattice.unrank(idx), horizon, r);
  });

  SurvivalCheck out;
  out.samples = samples;
  out.horizon = horizon;
  out.expected_mean = 1.0 / q;
  double sum = 0.0;
  std::size_t absorbed = 0;
  for (const auto& r : recs) {
    if (r.absorbed) {
      sum += static_cast<double>(r.time);
      ++absorbed;
    } else {
      ++out.censored;
    }
  }
  if (out.censored * 2 > samples) {
    out.inconclusive = true;
    return out;
  }
  out.mean = absorbed ? sum / static_cast<double>(absorbed) : 0.0;
  // mean of a geometric truncated at the horizon is close to 1/q when censoring is rare
  const double sd = std::sqrt(1.0 - q) / q;
  out.mean_z = absorbed ? (out.mean - out.expected_mean) / (sd / std::sqrt(static_cast<double>(absorbed))) : 0.0;

  // quantile bins of the geometric law: P(T > t) = lambda^t
  std::vector<std::size_t> edges{1};
  for (int j = 1; j < max_bins; ++j) {
    const double tail = 1.0 - static_cast<double>(j) / max_bins;
    const auto t = static_cast<std::size_t>(std::ceil(std::log(tail) / loglam));
    if (t > edges.back() && t <= horizon) edges.push_back(t);
  }
  const std::size_t B = edges.size();
  out.bin_edges = edges;
  out.observed.assign(B, 0.0);
  out.expected.assign(B, 0.0);
  auto surv = [&](std::size_t t) { return std::exp(static_cast<double>(t) * loglam); };  // P(T > t)
  for (std::size_t j = 0; j < B; ++j) {
    const double p_lo = surv(edges[j] - 1);
    const double p_hi = j + 1 < B ? surv(edges[j + 1] - 1) : 0.0;
    out.expected[j] = static_cast<double>(samples) * (p_lo - p_hi);
  }
  for (const auto& r : recs) {
    const std::size_t t = r.absorbed ? r.time : horizon + 1;
    const auto it = std::upper_bound(edges.begin(), edges.end(), t);
    out.observed[static_cast<std::size_t>(it - edges.begin()) - 1] += 1.0;
  }
  for (std::size_t j = 0; j < B; ++j)
    if (out.expected[j] > 0.0) out.chi2 += std::pow(out.observed[j] - out.expected[j], 2) / out.expected[j];
  out.dof = static_cast<int>(B) - 1;
  out.p_value = out.dof > 0 ? boost::math::gamma_q(out.dof / 2.0, out.chi2 / 2.0) : 1.0;
  return out;
}

// Named state predicate on densities.
struct Region {
  enum class Type { all, ball, open_ball, box, min_coordinate_below };
  std::string name;
  Type type = Type::all;
  Vec center;
  double radius = 0.0;
  Vec lo, hi;

  static Region all(std::string name = "all") { return Region{std::move(name), Type::all, {}, 0.0, {}, {}}; }
  // closed sup-norm ball
  static Region ball(std::string name, Vec c, double r) { return Region{std::move(name), Type::ball, std::move(c), r, {}, {}}; }
  static Region open_ball(std::string name, Vec c, double r) {
    return Region{std::move(name), Type::open_ball, std::move(c), r, {}, {}};
  }
  static Region box(std::string name, Vec lo, Vec hi) {
    return Region{std::move(name), Type::box, {}, 0.0, std::move(lo), std::move(hi)};
  }
  // {x : min_i x_i < r}: the open r-neighbourhood of the orthant or simplex boundary
  static Region boundary_neighborhood(std::string name, double r) {
    return Region{std::move(name), Type::min_coordinate_below, {}, r, {}, {}};
  }

  bool contains(const Vec& x) const {
    switch (type) {
      case Type::all: return true;
      case Type::ball: return sup_distance(x, center) <= radius;
      case Type::open_ball: return sup_distance(x, center) < radius;
      case Type::box: return ((x.array() >= lo.array()) && (x.array() <= hi.array())).all();
      case Type::min_coordinate_below: return x.minCoeff() < radius;
    }
    return false;
  }
};

inline const char* to_string(Region::Type t) {
  switch (t) {
    case Region::Type::all: return "all";
    case Region::Type::ball: return "ball";
    case Region::Type::open_ball: return "open_ball";
    case Region::Type::box: return "box";
    case Region::Type::min_coordinate_below: return "boundary_neighborhood";
  }
  return "?";
}

template <Lattice L>
std::vector<double> mass_metrics(const QsdResult& qsd, const L& lattice, const std::vector<Region>& regions) {
  if (qsd.mu.size() != lattice.size()) throw DomainError("mass_metrics: qsd does not match the lattice");
  std::vector<double> out(regions.size(), 0.0);
  for (std::size_t r = 0; r < qsd.mu.size(); ++r) {
    if (qsd.mu[r] == 0.0) continue;
    const Vec x = lattice.density(lattice.unrank(r));
    for (std::size_t j = 0; j < regions.size(); ++j)
      if (regions[j].contains(x)) out[j] += qsd.mu[r];
  }
  return out;
}

// Rank of the most massive state (lowest rank on ties).
inline std::size_t mode_index(const QsdResult& qsd) {
  return static_cast<std::size_t>(std::max_element(qsd.mu.begin(), qsd.mu.end()) - qsd.mu.begin());
}

inline double total_variation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DomainError("total_variation: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

}  // namespace qsdlab
