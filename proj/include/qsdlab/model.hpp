#pragma once

#include "qsdlab/core.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <string>
#include <variant>
#include <vector>

namespace qsdlab {

enum class ModelKind { spatial_ricker, leslie_gower, thompson_host_parasitoid, replicator, user_defined };

// `none` has no absorbing states; it exists for calibration maps such as the identity.
enum class AbsorbingKind { none, origin, boundary_of_orthant, boundary_of_simplex };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::spatial_ricker: return "spatial_ricker";
    case ModelKind::leslie_gower: return "leslie_gower";
    case ModelKind::thompson_host_parasitoid: return "thompson_host_parasitoid";
    case ModelKind::replicator: return "replicator";
    case ModelKind::user_defined: return "user_defined";
  }
  return "?";
}

inline const char* to_string(AbsorbingKind k) {
  switch (k) {
    case AbsorbingKind::none: return "none";
    case AbsorbingKind::origin: return "origin";
    case AbsorbingKind::boundary_of_orthant: return "boundary_of_orthant";
    case AbsorbingKind::boundary_of_simplex: return "boundary_of_simplex";
  }
  return "?";
}

struct SpatialRickerParams {
  double f0 = 2.0;
  Mat dispersal = Mat::Identity(1, 1);  // row-stochastic, d(i,j) = fraction moving i -> j
};

struct LeslieGowerParams {
  Vec b = Vec::Constant(2, 2.0);
  Mat c = (Mat(2, 2) << 1.0, 0.5, 0.5, 1.0).finished();
};

struct ThompsonParams {
  double r = 1.0;
  double K = 1.0;
  double b_attack = 0.8;
  double k_clump = 0.5;
};

struct ReplicatorParams {
  Mat payoff;
  double basal = 1.0;
};

struct UserDefinedParams {
  std::function<Vec(const Vec&)> map;
  double sup_bound = kInf;
  bool simplex_domain = false;
};

using ModelParams =
    std::variant<SpatialRickerParams, LeslieGowerParams, ThompsonParams, ReplicatorParams, UserDefinedParams>;

// Deterministic skeleton F on the nonnegative orthant or the probability simplex, together
// with the absorbing set M0. Immutable after construction; evaluation is reentrant.
class MapModel {
 public:
  static MapModel spatial_ricker(double f0, Mat dispersal) {
    if (!(f0 > 0.0)) throw DomainError("spatial_ricker: f0 must be > 0");
    const auto k = dispersal.rows();
    if (k < 1 || dispersal.cols() != k) throw DomainError("spatial_ricker: dispersal must be square");
    for (Eigen::Index i = 0; i < k; ++i) {
      if ((dispersal.row(i).array() < 0.0).any()) throw DomainError("spatial_ricker: negative dispersal entry");
      if (std::abs(dispersal.row(i).sum() - 1.0) > 1e-12)
        throw DomainError("spatial_ricker: dispersal rows must sum to 1");
    }
    if (!irreducible(dispersal)) throw DomainError("spatial_ricker: dispersal matrix is reducible");
    return MapModel(ModelKind::spatial_ricker, static_cast<int>(k), AbsorbingKind::origin,
                    SpatialRickerParams{f0, std::move(dispersal)});
  }
  static MapModel ricker(double f0) { return spatial_ricker(f0, Mat::Identity(1, 1)); }

  static MapModel leslie_gower(Vec b, Mat c) {
    if (b.size() != 2 || c.rows() != 2 || c.cols() != 2) throw DomainError("leslie_gower: expects b in R^2, c 2x2");
    if ((b.array() <= 0.0).any() || (c.array() <= 0.0).any())
      throw DomainError("leslie_gower: all parameters must be > 0");
    return MapModel(ModelKind::leslie_gower, 2, AbsorbingKind::boundary_of_orthant,
                    LeslieGowerParams{std::move(b), std::move(c)});
  }

  static MapModel thompson(ThompsonParams p) {
    if (!(p.r > 0 && p.K > 0 && p.b_attack > 0 && p.k_clump > 0))
      throw DomainError("thompson: all parameters must be > 0");
    return MapModel(ModelKind::thompson_host_parasitoid, 2, AbsorbingKind::boundary_of_orthant, p);
  }

  static MapModel replicator(Mat payoff, double basal) {
    const auto k = payoff.rows();
    if (k < 2 || payoff.cols() != k) throw DomainError("replicator: payoff must be square with k >= 2");
    if (!(basal > 0.0)) throw DomainError("replicator: basal c must be > 0");
    // x.Ax and (Ax)_i are convex combinations of entries of A on the simplex, so this
    // guarantees positive numerators and denominator everywhere.
    if (!(basal + payoff.minCoeff() > 0.0))
      throw DomainError("replicator: c + min(a_ij) must be > 0 so that F stays on the simplex");
    return MapModel(ModelKind::replicator, static_cast<int>(k), AbsorbingKind::boundary_of_simplex,
                    ReplicatorParams{std::move(payoff), basal});
  }
  // F(x) = x: the replicator with zero payoffs.
  static MapModel neutral(int k) { return replicator(Mat::Zero(k, k), 1.0); }

  static MapModel user_defined(int dim, std::function<Vec(const Vec&)> f, double sup_bound, AbsorbingKind kind,
                               std::string name = "user_defined") {
    if (dim < 1) throw DomainError("user_defined: dim must be >= 1");
    MapModel m(ModelKind::user_defined, dim, kind,
               UserDefinedParams{std::move(f), sup_bound, kind == AbsorbingKind::boundary_of_simplex});
    m.name_ = std::move(name);
    return m;
  }

  ModelKind kind() const { return kind_; }
  int dim() const { return dim_; }
  AbsorbingKind absorbing_kind() const { return absorbing_; }
  const ModelParams& params() const { return params_; }
  const std::string& name() const { return name_; }
  bool simplex_domain() const {
    if (kind_ == ModelKind::replicator) return true;
    if (auto* u = std::get_if<UserDefinedParams>(&params_)) return u->simplex_domain;
    return false;
  }

  // Domain test: orthant, or simplex within 1e-9 in the sum.
  bool in_domain(const Vec& x) const {
    if (x.size() != dim_) return false;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (!(x[i] >= 0.0) || !std::isfinite(x[i])) return false;
    if (simplex_domain() && std::abs(x.sum() - 1.0) > 1e-9) return false;
    return true;
  }

  // F(x) with domain validation.
  Vec evaluate(const Vec& x) const {
    if (x.size() != dim_)
      throw DomainError("evaluate: expected dimension " + std::to_string(dim_) + ", got " + std::to_string(x.size()));
    if (!in_domain(x)) throw DomainError("evaluate: point outside the model domain");
    return (*this)(x);
  }

  // F(x) without validation. Caller guarantees x is in the domain.
  Vec operator()(const Vec& x) const {
    return std::visit([&](const auto& p) { return apply(p, x); }, params_);
  }

  // Declared bound on sup_x max_i F_i(x).
  double sup_bound() const {
    return std::visit(
        [&](const auto& p) -> double {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, SpatialRickerParams>) {
            // max_x x f0 e^{-x} = f0/e, times the largest column sum of D.
            return p.f0 / std::exp(1.0) * p.dispersal.colwise().sum().maxCoeff();
          } else if constexpr (std::is_same_v<P, LeslieGowerParams>) {
            return std::max(p.b[0] / p.c(0, 0), p.b[1] / p.c(1, 1));
          } else if constexpr (std::is_same_v<P, ThompsonParams>) {
            // F1 + F2 = x1 f(x1), maximized at x1 = K/r.
            return p.K / p.r * std::exp(p.r - 1.0);
          } else if constexpr (std::is_same_v<P, ReplicatorParams>) {
            return 1.0;
          } else {
            return p.sup_bound;
          }
        },
        params_);
  }

  bool in_absorbing(const Vec& x) const {
    switch (absorbing_) {
      case AbsorbingKind::none: return false;
      case AbsorbingKind::origin: return (x.array() == 0.0).all();
      case AbsorbingKind::boundary_of_orthant:
      case AbsorbingKind::boundary_of_simplex: return (x.array() == 0.0).any();
    }
    return false;
  }

  // Sup-norm distance from x to M0 (inf when M0 is empty).
  double distance_to_absorbing(const Vec& x) const {
    switch (absorbing_) {
      case AbsorbingKind::none: return kInf;
      case AbsorbingKind::origin: return sup_norm(x);
      case AbsorbingKind::boundary_of_orthant:
      case AbsorbingKind::boundary_of_simplex: return x.minCoeff();
    }
    return kInf;
  }

 private:
  MapModel(ModelKind kind, int dim, AbsorbingKind abs, ModelParams p)
      : kind_(kind), dim_(dim), absorbing_(abs), params_(std::move(p)), name_(to_string(kind)) {}

  static bool irreducible(const Mat& d) {
    const auto k = d.rows();
    for (Eigen::Index s = 0; s < k; ++s) {
      std::vector<char> seen(static_cast<std::size_t>(k), 0);
      std::vector<Eigen::Index> stack{s};
      seen[static_cast<std::size_t>(s)] = 1;
      while (!stack.empty()) {
        auto u = stack.back();
        stack.pop_back();
        for (Eigen::Index v = 0; v < k; ++v)
          if (d(u, v) > 0.0 && !seen[static_cast<std::size_t>(v)]) {
            seen[static_cast<std::size_t>(v)] = 1;
            stack.push_back(v);
          }
      }
      if (std::find(seen.begin(), seen.end(), 0) != seen.end()) return false;
    }
    return true;
  }

  static Vec apply(const SpatialRickerParams& p, const Vec& x) {
    const Vec births = (x.array() * p.f0 * (-x.array()).exp()).matrix();
    return p.dispersal.transpose() * births;
  }
  static Vec apply(const LeslieGowerParams& p, const Vec& x) {
    Vec y(2);
    y[0] = p.b[0] * x[0] / (1.0 + p.c(0, 0) * x[0] + p.c(0, 1) * x[1]);
    y[1] = p.b[1] * x[1] / (1.0 + p.c(1, 1) * x[1] + p.c(1, 0) * x[0]);
    return y;
  }
  static Vec apply(const ThompsonParams& p, const Vec& x) {
    if (x[0] == 0.0) return Vec::Zero(2);  // continuous extension at x1 = 0
    const double f = std::exp(p.r * (1.0 - x[0] / p.K));
    const double g = std::pow(1.0 + x[1] / (p.b_attack * x[0] * p.k_clump), -p.k_clump);
    const double offspring = f * x[0];
    Vec y(2);
    y[0] = offspring * g;
    // 1 - g computed without cancellation when the parasitoid is rare
    y[1] = offspring * -std::expm1(-p.k_clump * std::log1p(x[1] / (p.b_attack * x[0] * p.k_clump)));
    return y;
  }
  static Vec apply(const ReplicatorParams& p, const Vec& x) {
    const Vec ax = p.payoff * x;
    const double denom = x.dot(ax) + p.basal;
    return (x.array() * (ax.array() + p.basal)).matrix() / denom;
  }
  static Vec apply(const UserDefinedParams& p, const Vec& x) { return p.map(x); }

  ModelKind kind_;
  int dim_;
  AbsorbingKind absorbing_;
  ModelParams params_;
  std::string name_;
};

}  // namespace qsdlab
