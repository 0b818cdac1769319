#pragma once

#include "qsdlab/model.hpp"

#include <Eigen/Eigenvalues>

#include <optional>

namespace qsdlab {

enum class Stability { stable, unstable, marginal };

inline const char* to_string(Stability s) {
  switch (s) {
    case Stability::stable: return "stable";
    case Stability::unstable: return "unstable";
    case Stability::marginal: return "marginal";
  }
  return "?";
}

// Trajectory x0, F(x0), ..., F^n(x0).
inline std::vector<Vec> iterate(const MapModel& model, const Vec& x0, std::size_t n) {
  if (!model.in_domain(x0)) throw DomainError("iterate: x0 outside the model domain");
  std::vector<Vec> traj;
  traj.reserve(n + 1);
  traj.push_back(x0);
  for (std::size_t t = 0; t < n; ++t) {
    Vec next = model(traj.back());
    if (!next.allFinite()) throw DivergenceError("iterate: non-finite value at step " + std::to_string(t + 1), t + 1);
    traj.push_back(std::move(next));
  }
  return traj;
}

// Local coordinates. On the simplex the chart drops the last coordinate, so a k-type
// replicator is analysed as a (k-1)-dimensional map; elsewhere the chart is the identity.
struct Chart {
  bool simplex = false;
  int ambient = 1;
  int dim() const { return simplex ? ambient - 1 : ambient; }
  Vec to_local(const Vec& x) const { return simplex ? Vec(x.head(ambient - 1)) : x; }
  Vec to_ambient(const Vec& u) const {
    if (!simplex) return u;
    Vec x(ambient);
    x.head(ambient - 1) = u;
    x[ambient - 1] = 1.0 - u.sum();
    return x;
  }
  bool contains(const Vec& u) const {
    if ((u.array() < 0.0).any()) return false;
    return !simplex || u.sum() <= 1.0;
  }
  // Nearest point of the domain (clip; rescale onto the simplex face if needed).
  Vec project(Vec u) const {
    u = u.cwiseMax(0.0);
    if (simplex && u.sum() > 1.0) u /= u.sum();
    return u;
  }
};

inline Chart chart_for(const MapModel& m) { return Chart{m.simplex_domain(), m.dim()}; }

struct JacobianResult {
  Mat J;                   // in chart coordinates
  bool one_sided = false;  // some column used a one-sided difference at the domain boundary
};

// Central finite differences with step h_i = rel_step (1 + |u_i|); one-sided where the
// centered stencil leaves the domain.
inline JacobianResult fd_jacobian(const MapModel& model, const Vec& x, double rel_step = 1e-6) {
  const Chart ch = chart_for(model);
  const Vec u = ch.to_local(x);
  const int m = ch.dim();
  auto Fl = [&](const Vec& v) { return ch.to_local(model(ch.to_ambient(v))); };
  JacobianResult res{Mat(m, m), false};
  for (int i = 0; i < m; ++i) {
    const double h = rel_step * (1.0 + std::abs(u[i]));
    Vec up = u, dn = u;
    up[i] += h;
    dn[i] -= h;
    const bool ok_up = ch.contains(up), ok_dn = ch.contains(dn);
    if (ok_up && ok_dn) {
      res.J.col(i) = (Fl(up) - Fl(dn)) / (2.0 * h);
    } else if (ok_up) {
      res.J.col(i) = (Fl(up) - Fl(u)) / h;
      res.one_sided = true;
    } else if (ok_dn) {
      res.J.col(i) = (Fl(u) - Fl(dn)) / h;
      res.one_sided = true;
    } else {
      throw DomainError("fd_jacobian: no admissible difference stencil at this point");
    }
  }
  return res;
}

inline double spectral_radius(const Mat& J) {
  if (J.size() == 0) return 0.0;
  Eigen::EigenSolver<Mat> es(J, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

struct StabilityReport {
  Stability stability = Stability::marginal;
  double spectral_radius = 0.0;
  bool one_sided = false;
};

inline StabilityReport classify_equilibrium(const MapModel& model, const Vec& x, double fd_step = 1e-6,
                                            double margin = 1e-3) {
  if (!(fd_step > 0.0)) throw DomainError("classify_equilibrium: fd_step must be > 0");
  const auto jr = fd_jacobian(model, x, fd_step);
  StabilityReport r;
  r.spectral_radius = spectral_radius(jr.J);
  r.one_sided = jr.one_sided;
  if (r.spectral_radius < 1.0 - margin) r.stability = Stability::stable;
  else if (r.spectral_radius > 1.0 + margin) r.stability = Stability::unstable;
  else r.stability = Stability::marginal;
  return r;
}

struct Equilibrium {
  Vec point;
  double residual = 0.0;
  Stability stability = Stability::marginal;
  double spectral_radius = 0.0;
  bool in_M0 = false;
  bool one_sided = false;
};

struct Box {
  Vec lo, hi;
  bool contains(const Vec& x, double slack = 0.0) const {
    return ((x.array() >= lo.array() - slack) && (x.array() <= hi.array() + slack)).all();
  }
};

namespace detail {

// Damped Newton on G(u) = F(u) - u with step halving, falling back to a damped
// fixed-point step when the Newton direction does not reduce |G|.
inline std::optional<Vec> polish_root(const MapModel& model, const Chart& ch, Vec u, double tol,
                                      int max_iter = 200) {
  auto G = [&](const Vec& v) { return Vec(ch.to_local(model(ch.to_ambient(v))) - v); };
  Vec g = G(u);
  double gn = sup_norm(g);
  for (int it = 0; it < max_iter && gn > tol; ++it) {
    if (!std::isfinite(gn)) return std::nullopt;
    bool improved = false;
    Mat J;
    try {
      J = fd_jacobian(model, ch.to_ambient(u)).J - Mat::Identity(ch.dim(), ch.dim());
    } catch (const DomainError&) {
      return std::nullopt;
    }
    Eigen::ColPivHouseholderQR<Mat> qr(J);
    if (qr.isInvertible()) {
      const Vec step = qr.solve(-g);
      for (double t = 1.0; t >= 1.0 / 1024; t *= 0.5) {
        const Vec cand = ch.project(u + t * step);
        const Vec gc = G(cand);
        const double n = sup_norm(gc);
        if (n < gn) {
          u = cand;
          g = gc;
          gn = n;
          improved = true;
          break;
        }
      }
    }
    if (!improved) {
      for (double t = 0.5; t >= 1.0 / 1024; t *= 0.5) {
        const Vec cand = ch.project(u + t * g);
        const Vec gc = G(cand);
        const double n = sup_norm(gc);
        if (n < gn) {
          u = cand;
          g = gc;
          gn = n;
          improved = true;
          break;
        }
      }
    }
    if (!improved) break;
  }
  if (gn <= tol) return u;
  return std::nullopt;
}

}  // namespace detail

// Fixed points of F in `box` from a regular grid of seeds (seeds_per_axis per chart axis,
// endpoints included), polished and deduplicated within 10 tol (smaller residual wins).
inline std::vector<Equilibrium> find_equilibria(const MapModel& model, const Box& box, int seeds_per_axis,
                                                double tol = 1e-10, double margin = 1e-3) {
  if (!(tol > 0.0)) throw DomainError("find_equilibria: tol must be > 0");
  if (seeds_per_axis < 1) throw DomainError("find_equilibria: seeds_per_axis must be >= 1");
  const Chart ch = chart_for(model);
  const int m = ch.dim();
  if (box.lo.size() != model.dim() || box.hi.size() != model.dim())
    throw DomainError("find_equilibria: box dimension mismatch");

  std::vector<Equilibrium> found;
  std::vector<int> idx(static_cast<std::size_t>(m), 0);
  const int s = seeds_per_axis;
  for (;;) {
    Vec u(m);
    for (int i = 0; i < m; ++i) {
      const double t = s == 1 ? 0.5 : static_cast<double>(idx[static_cast<std::size_t>(i)]) / (s - 1);
      u[i] = box.lo[i] + t * (box.hi[i] - box.lo[i]);
    }
    if (ch.contains(u)) {
      if (auto root = detail::polish_root(model, ch, u, tol)) {
        const Vec x = ch.to_ambient(*root);
        const double res = sup_distance(model(x), x);
        if (res <= tol && box.contains(x, 1e-9)) {
          auto dup = std::find_if(found.begin(), found.end(),
                                  [&](const Equilibrium& e) { return sup_distance(e.point, x) <= 10.0 * tol; });
          if (dup == found.end()) {
            found.push_back(Equilibrium{x, res});
          } else if (res < dup->residual) {
            dup->point = x;
            dup->residual = res;
          }
        }
      }
    }
    int a = 0;
    while (a < m && ++idx[static_cast<std::size_t>(a)] == s) idx[static_cast<std::size_t>(a++)] = 0;
    if (a == m) break;
  }
  for (auto& e : found) {
    e.in_M0 = model.in_absorbing(e.point);
    const auto st = classify_equilibrium(model, e.point, 1e-6, margin);
    e.stability = st.stability;
    e.spectral_radius = st.spectral_radius;
    e.one_sided = st.one_sided;
  }
  std::sort(found.begin(), found.end(), [](const Equilibrium& a, const Equilibrium& b) {
    return std::lexicographical_compare(a.point.data(), a.point.data() + a.point.size(), b.point.data(),
                                        b.point.data() + b.point.size());
  });
  return found;
}

struct PeriodicOrbit {
  int period = 1;
  std::vector<Vec> points;
};

// Smallest p <= max_period with |F^p(x) - x| <= tol at the point reached after burn_in.
inline std::optional<PeriodicOrbit> detect_periodic_orbit(const MapModel& model, const Vec& x0, int max_period,
                                                          std::size_t burn_in, double tol) {
  if (max_period < 1) throw DomainError("detect_periodic_orbit: max_period must be >= 1");
  const auto settle = iterate(model, x0, burn_in);
  const auto orbit = iterate(model, settle.back(), static_cast<std::size_t>(max_period));
  for (int p = 1; p <= max_period; ++p) {
    if (sup_distance(orbit[static_cast<std::size_t>(p)], orbit[0]) <= tol) {
      return PeriodicOrbit{p, std::vector<Vec>(orbit.begin(), orbit.begin() + p)};
    }
  }
  return std::nullopt;
}

}  // namespace qsdlab
