#pragma once

#include "qsdlab/extended_real.hpp"
#include "qsdlab/kernel.hpp"

#include <boost/math/special_functions/gamma.hpp>

namespace qsdlab {

namespace detail {

// a * h(b/a) with h(t) = t log t - t + 1, i.e. b log(b/a) + a - b, written so that it
// stays nonnegative near b = a.
inline double poisson_g(double a, double b) {
  if (b < 0.0 || a < 0.0) return kInf;
  if (b == 0.0) return a;  // 0 log 0 = 0
  if (a == 0.0) return kInf;
  const double d = (b - a) / a;
  double v;
  if (std::abs(d) < 0.5)
    v = a * ((1.0 + d) * std::log1p(d) - d);
  else
    v = b * std::log(b / a) + a - b;
  return std::max(0.0, v);
}

// Bernoulli relative entropy kl(q || p).
inline double bernoulli_kl(double q, double p) {
  if (q < 0.0 || q > 1.0) return kInf;
  auto term = [](double x, double y) {
    if (x == 0.0) return 0.0;
    if (y == 0.0) return kInf;
    return y * (x / y * std::log(x / y) - x / y + 1.0);
  };
  return std::max(0.0, term(q, p) + term(1.0 - q, 1.0 - p));
}

}  // namespace detail

inline ExtendedReal poisson_g(double a, double b) { return ExtendedReal(detail::poisson_g(a, b)); }

// Large-deviation rate rho(x, y) of the Poisson or multinomial kernel built on a map.
class RateFunction {
 public:
  RateFunction(MapModel model, KernelKind kind) : model_(std::move(model)), kind_(kind) {
    if (kind_ == KernelKind::multinomial && !model_.simplex_domain())
      throw DomainError("RateFunction: multinomial rate needs a simplex model");
    if (kind_ == KernelKind::poisson && model_.simplex_domain())
      throw DomainError("RateFunction: poisson rate needs an orthant model");
  }

  const MapModel& model() const { return model_; }
  KernelKind kind() const { return kind_; }
  int dim() const { return model_.dim(); }

  ExtendedReal operator()(const Vec& x, const Vec& y) const { return rate(x, y); }

  ExtendedReal rate(const Vec& x, const Vec& y) const {
    if (x.size() != dim() || y.size() != dim()) throw DomainError("rate: dimension mismatch");
    if (!model_.in_domain(x)) throw DomainError("rate: x outside the model domain");
    return rate_from_image(model_(x), model_.in_absorbing(x), y);
  }

  // Same as rate() when Fx = F(x) is already known.
  ExtendedReal rate_from_image(const Vec& Fx, bool x_absorbed, const Vec& y) const {
    if (!model_.in_domain(y)) return ExtendedReal::infinity();
    if (x_absorbed && !model_.in_absorbing(y)) return ExtendedReal::infinity();
    double s = 0.0;
    if (kind_ == KernelKind::poisson) {
      for (Eigen::Index i = 0; i < y.size(); ++i) s += detail::poisson_g(Fx[i], y[i]);
    } else {
      // sum y log(y/F) = sum F h(y/F) since both sum to one; the latter is termwise >= 0
      for (Eigen::Index i = 0; i < y.size(); ++i) s += detail::poisson_g(Fx[i], y[i]);
      s = std::max(0.0, s - (Fx.sum() - y.sum()));
    }
    return std::isinf(s) ? ExtendedReal::infinity() : ExtendedReal(s);
  }

 private:
  MapModel model_;
  KernelKind kind_;
};

// A_n(xi) = sum of step rates.
inline ExtendedReal path_cost(const RateFunction& rf, const std::vector<Vec>& xi) {
  if (xi.size() < 2) throw DomainError("path_cost: need at least two points");
  ExtendedReal total(0.0);
  for (std::size_t i = 0; i + 1 < xi.size(); ++i) {
    total += rf.rate(xi[i], xi[i + 1]);
    if (total.is_infinite()) break;
  }
  return total;
}

struct ChernovBound {
  double beta = 0.0;         // inf over states and coordinates of the one-coordinate tail exponents
  double beta_closed = 0.0;  // closed-form lower bound: g(m, m + delta) at m = sup F, or 2 delta^2
  double delta = 0.0;
  int k = 0;
  bool positive = false;
  // Bound on the probability of a delta-deviation in sup norm.
  double bound(double eps) const { return 2.0 * k * std::exp(-beta / eps); }
};

inline ChernovBound chernov_beta_bound(const RateFunction& rf, double delta, const std::vector<Vec>& states) {
  if (!(delta > 0.0)) throw DomainError("chernov_beta_bound: delta must be > 0");
  ChernovBound cb;
  cb.delta = delta;
  cb.k = rf.dim();
  double beta = kInf;
  for (const auto& x : states) {
    const Vec F = rf.model()(x);
    for (Eigen::Index i = 0; i < F.size(); ++i) {
      const double a = F[i];
      double up, down;
      if (rf.kind() == KernelKind::poisson) {
        up = detail::poisson_g(a, a + delta);
        down = a - delta >= 0.0 ? detail::poisson_g(a, a - delta) : kInf;
      } else {
        up = a + delta <= 1.0 ? detail::bernoulli_kl(a + delta, a) : kInf;
        down = a - delta >= 0.0 ? detail::bernoulli_kl(a - delta, a) : kInf;
      }
      beta = std::min({beta, up, down});
    }
  }
  cb.beta = std::isinf(beta) ? 0.0 : beta;
  if (rf.kind() == KernelKind::poisson) {
    const double m = rf.model().sup_bound();
    cb.beta_closed = detail::poisson_g(m, m + delta);
  } else {
    cb.beta_closed = 2.0 * delta * delta;  // Pinsker
  }
  cb.positive = cb.beta > 0.0;
  return cb;
}

// Monte Carlo estimate of max over states of P(|eps Y - F(x)|_inf >= delta).
template <Kernel K>
double empirical_beta(const K& kernel, double delta, const std::vector<Counts>& states, std::size_t draws,
                      const RngStream& rng) {
  double worst = 0.0;
  for (std::size_t s = 0; s < states.size(); ++s) {
    const Vec F = kernel.model()(kernel.density(states[s]));
    RngStream r = rng.derive(s);
    std::size_t hits = 0;
    for (std::size_t d = 0; d < draws; ++d) {
      const Counts y = kernel.sample_step(states[s], r);
      const Vec yd = kernel.density(y);
      if (sup_distance(yd, F) >= delta) ++hits;
    }
    worst = std::max(worst, static_cast<double>(hits) / static_cast<double>(draws));
  }
  return worst;
}

struct SandwichResult {
  double epsilon = 0.0;
  double empirical = 0.0;  // -eps log p_hat
  double exact = 0.0;      // -eps log p, from the Poisson cdf
  double inf_open = 0.0;
  double inf_closed = 0.0;
  double slack = 0.0;
  std::size_t hits = 0, draws = 0;
  bool pass = false;
};

// Two-sided large-deviation check for a 1-d Poisson kernel and the open interval
// U = (center - radius, center + radius). The slack eps (2 + |log eps|) covers the
// polynomial prefactor; a three-sigma Monte Carlo allowance is added on top.
inline SandwichResult ld_sandwich(const PoissonBranchingKernel& kernel, const Counts& x, double center, double radius,
                                  std::size_t draws, const RngStream& rng) {
  if (kernel.dim() != 1) throw DomainError("ld_sandwich: one-dimensional kernels only");
  const double eps = kernel.epsilon();
  const double F = kernel.model()(kernel.density(x))[0];
  const double a = center - radius, b = center + radius;
  SandwichResult res;
  res.epsilon = eps;
  res.draws = draws;
  if (F > a && F < b) {
    res.inf_open = res.inf_closed = 0.0;
  } else {
    const double edge = F <= a ? std::max(a, 0.0) : b;
    res.inf_closed = detail::poisson_g(F, edge);
    res.inf_open = res.inf_closed;  // g is continuous in y
  }
  RngStream r = rng;
  for (std::size_t d = 0; d < draws; ++d) {
    const double y = eps * static_cast<double>(kernel.sample_step(x, r)[0]);
    if (y > a && y < b) ++res.hits;
  }
  // exact probability of the open interval
  const double G = F / eps;
  const auto lo_count = static_cast<std::int64_t>(std::floor(a / eps)) + 1;
  const auto hi_count = static_cast<std::int64_t>(std::ceil(b / eps)) - 1;
  double p = 0.0;
  if (hi_count >= std::max<std::int64_t>(lo_count, 0)) {
    const double upper = boost::math::gamma_q(static_cast<double>(hi_count) + 1.0, G);  // P(Y <= hi)
    const double lower = lo_count <= 0 ? 0.0 : boost::math::gamma_q(static_cast<double>(lo_count), G);
    p = upper - lower;
  }
  res.exact = p > 0.0 ? -eps * std::log(p) : kInf;
  if (res.hits == 0) {
    res.empirical = kInf;
    res.pass = false;
    return res;
  }
  const double ph = static_cast<double>(res.hits) / static_cast<double>(draws);
  res.empirical = -eps * std::log(ph);
  const double mc = 3.0 * eps * std::sqrt((1.0 - ph) / (ph * static_cast<double>(draws)));
  res.slack = eps * (2.0 + std::abs(std::log(eps))) + mc;
  res.pass = res.empirical >= res.inf_open - res.slack && res.empirical <= res.inf_closed + res.slack;
  return res;
}

}  // namespace qsdlab
