#pragma once

#include "qsdlab/model.hpp"
#include "qsdlab/random.hpp"

#include <cmath>
#include <variant>

namespace qsdlab {

enum class KernelKind { poisson, multinomial };

inline const char* to_string(KernelKind k) { return k == KernelKind::poisson ? "poisson" : "multinomial"; }

struct AbsorptionRecord {
  bool absorbed = false;
  std::size_t time = 0;  // absorption time, or the horizon when censored
  Counts final_state;
  bool censored() const { return !absorbed; }
};

namespace detail {
inline bool counts_absorbed(const Counts& n, AbsorbingKind kind) {
  switch (kind) {
    case AbsorbingKind::none: return false;
    case AbsorbingKind::origin: return std::all_of(n.begin(), n.end(), [](auto c) { return c == 0; });
    case AbsorbingKind::boundary_of_orthant:
    case AbsorbingKind::boundary_of_simplex: return std::any_of(n.begin(), n.end(), [](auto c) { return c == 0; });
  }
  return false;
}
}  // namespace detail

// Nonlinear Poisson branching on eps * Z^k_+: next counts are independent Poisson with
// means F_i(eps n)/eps. States are integer counts n; densities are eps * n.
class PoissonBranchingKernel {
 public:
  PoissonBranchingKernel(MapModel model, double epsilon) : model_(std::move(model)), eps_(epsilon) {
    if (!(epsilon > 0.0)) throw DomainError("PoissonBranchingKernel: epsilon must be > 0");
    if (model_.simplex_domain()) throw DomainError("PoissonBranchingKernel: model must live on the orthant");
  }

  static constexpr KernelKind kind() { return KernelKind::poisson; }
  const MapModel& model() const { return model_; }
  double epsilon() const { return eps_; }
  int dim() const { return model_.dim(); }

  void check_state(const Counts& n) const {
    if (static_cast<int>(n.size()) != dim()) throw DomainError("Poisson kernel: state dimension mismatch");
    for (auto c : n)
      if (c < 0) throw DomainError("Poisson kernel: negative count");
  }

  Vec density(const Counts& n) const { return counts_to_density(n, eps_); }

  // Means G_i = F_i(eps n) / eps of the next counts.
  Vec mean_counts(const Counts& n) const { return model_(density(n)) / eps_; }

  bool is_absorbed(const Counts& n) const { return detail::counts_absorbed(n, model_.absorbing_kind()); }

  Counts sample_step(const Counts& n, RngStream& rng) const {
    check_state(n);
    const Vec G = mean_counts(n);
    Counts y(n.size());
    for (std::size_t i = 0; i < n.size(); ++i) y[i] = sample_poisson(G[static_cast<Eigen::Index>(i)], rng);
    if (is_absorbed(n) && !is_absorbed(y)) throw DomainError("model maps M0 outside M0");
    return y;
  }

  double log_transition_prob(const Counts& n, const Counts& y) const {
    check_state(n);
    check_state(y);
    const Vec G = mean_counts(n);
    double lp = 0.0;
    for (std::size_t i = 0; i < n.size(); ++i) {
      const double g = G[static_cast<Eigen::Index>(i)];
      const auto yi = y[i];
      if (g == 0.0) {
        if (yi != 0) return -kInf;
        continue;
      }
      lp += static_cast<double>(yi) * std::log(g) - g - std::lgamma(static_cast<double>(yi) + 1.0);
    }
    return lp;
  }

 private:
  MapModel model_;
  double eps_;
};

// (1/N) Multinomial(N, F(x)) on the simplex lattice. States are counts summing to N.
class MultinomialKernel {
 public:
  MultinomialKernel(MapModel model, std::int64_t sites) : model_(std::move(model)), N_(sites) {
    if (sites < 1) throw DomainError("MultinomialKernel: N must be >= 1");
    if (!model_.simplex_domain()) throw DomainError("MultinomialKernel: model must live on the simplex");
  }

  static constexpr KernelKind kind() { return KernelKind::multinomial; }
  const MapModel& model() const { return model_; }
  std::int64_t sites() const { return N_; }
  double epsilon() const { return 1.0 / static_cast<double>(N_); }
  int dim() const { return model_.dim(); }

  void check_state(const Counts& n) const {
    if (static_cast<int>(n.size()) != dim()) throw DomainError("multinomial kernel: state dimension mismatch");
    std::int64_t s = 0;
    for (auto c : n) {
      if (c < 0) throw DomainError("multinomial kernel: negative count");
      s += c;
    }
    if (s != N_) throw DomainError("multinomial kernel: counts must sum to N");
  }

  Vec density(const Counts& n) const { return counts_to_density(n, epsilon()); }

  bool is_absorbed(const Counts& n) const { return detail::counts_absorbed(n, model_.absorbing_kind()); }

  // F(x) as a probability vector; renormalized if off by <= 1e-12, rejected beyond.
  std::vector<double> probabilities(const Counts& n) const {
    Vec p = model_(density(n));
    const double s = p.sum();
    if (!(std::abs(s - 1.0) <= 1e-12) || (p.array() < 0.0).any())
      throw DomainError("multinomial kernel: F(x) is not a probability vector (sum " + std::to_string(s) + ")");
    p /= s;
    return to_std(p);
  }

  Counts sample_step(const Counts& n, RngStream& rng) const {
    check_state(n);
    auto y = sample_multinomial(N_, probabilities(n), rng);
    if (is_absorbed(n) && !is_absorbed(y)) throw DomainError("model maps M0 outside M0");
    return y;
  }

  double log_transition_prob(const Counts& n, const Counts& y) const {
    check_state(n);
    check_state(y);
    const auto p = probabilities(n);
    double lp = std::lgamma(static_cast<double>(N_) + 1.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (y[i] == 0) continue;  // 0 log 0 = 0
      if (p[i] == 0.0) return -kInf;
      lp += static_cast<double>(y[i]) * std::log(p[i]) - std::lgamma(static_cast<double>(y[i]) + 1.0);
    }
    return lp;
  }

 private:
  MapModel model_;
  std::int64_t N_;
};

template <class K>
concept Kernel = requires(const K& k, const Counts& n, RngStream& rng) {
  { k.sample_step(n, rng) } -> std::same_as<Counts>;
  { k.log_transition_prob(n, n) } -> std::same_as<double>;
  { k.is_absorbed(n) } -> std::same_as<bool>;
  { k.epsilon() } -> std::same_as<double>;
  { k.density(n) } -> std::same_as<Vec>;
};

template <Kernel K>
AbsorptionRecord simulate_until_absorption(const K& kernel, Counts x0, std::size_t horizon, RngStream& rng) {
  if (horizon < 1) throw DomainError("simulate_until_absorption: horizon must be >= 1");
  AbsorptionRecord rec;
  if (kernel.is_absorbed(x0)) {
    rec.absorbed = true;
    rec.time = 0;
    rec.final_state = std::move(x0);
    return rec;
  }
  for (std::size_t t = 1; t <= horizon; ++t) {
    x0 = kernel.sample_step(x0, rng);
    if (kernel.is_absorbed(x0)) {
      rec.absorbed = true;
      rec.time = t;
      rec.final_state = std::move(x0);
      return rec;
    }
  }
  rec.absorbed = false;
  rec.time = horizon;
  rec.final_state = std::move(x0);
  return rec;
}

}  // namespace qsdlab
