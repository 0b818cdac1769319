#pragma once

#include "qsdlab/core.hpp"
#include "qsdlab/model.hpp"

#include <cmath>
#include <functional>
#include <optional>

namespace qsdlab {

namespace detail {
// C(n, r) with saturation at SIZE_MAX instead of overflow.
inline std::size_t binom_sat(std::int64_t n, std::int64_t r) {
  if (r < 0 || n < 0 || r > n) return 0;
  r = std::min(r, n - r);
  unsigned __int128 acc = 1;
  for (std::int64_t i = 1; i <= r; ++i) {
    acc = acc * static_cast<unsigned __int128>(n - r + i) / static_cast<unsigned __int128>(i);
    if (acc > std::numeric_limits<std::size_t>::max()) return std::numeric_limits<std::size_t>::max();
  }
  return static_cast<std::size_t>(acc);
}
}  // namespace detail

// Points of the (1/N)-simplex lattice. Transient states are compositions of N into k
// positive parts, ranked colexicographically through their partial sums: with
// c_j = n_1 + ... + n_j - 1 (strictly increasing), rank = sum_j C(c_j, j).
class SimplexLattice {
 public:
  SimplexLattice(std::int64_t sites, int types) : N_(sites), k_(types) {
    if (types < 2) throw DomainError("SimplexLattice: k must be >= 2");
    if (sites < 1) throw DomainError("SimplexLattice: N must be >= 1");
    T_ = detail::binom_sat(N_ - 1, k_ - 1);
    if (T_ == std::numeric_limits<std::size_t>::max()) throw BudgetError("SimplexLattice: state count overflows");
    table_.assign(static_cast<std::size_t>(k_), std::vector<std::size_t>(static_cast<std::size_t>(N_ + 1), 0));
    for (int j = 1; j < k_; ++j)
      for (std::int64_t c = 0; c <= N_; ++c) table_[j][static_cast<std::size_t>(c)] = detail::binom_sat(c, j);
  }

  std::int64_t sites() const { return N_; }
  int dim() const { return k_; }
  double epsilon() const { return 1.0 / static_cast<double>(N_); }
  std::size_t size() const { return T_; }
  std::size_t full_size() const { return detail::binom_sat(N_ + k_ - 1, k_ - 1); }

  bool on_lattice(const Counts& n) const {
    if (static_cast<int>(n.size()) != k_) return false;
    std::int64_t s = 0;
    for (auto c : n) {
      if (c < 0) return false;
      s += c;
    }
    return s == N_;
  }
  bool is_transient(const Counts& n) const {
    return on_lattice(n) && std::all_of(n.begin(), n.end(), [](auto c) { return c > 0; });
  }

  std::optional<std::size_t> try_rank(const Counts& n) const {
    if (!is_transient(n)) return std::nullopt;
    std::size_t r = 0;
    std::int64_t s = 0;
    for (int j = 1; j < k_; ++j) {
      s += n[static_cast<std::size_t>(j - 1)];
      r += table_[j][static_cast<std::size_t>(s - 1)];
    }
    return r;
  }
  std::size_t rank(const Counts& n) const {
    auto r = try_rank(n);
    if (!r) throw DomainError("SimplexLattice::rank: state is not a transient lattice point");
    return *r;
  }

  Counts unrank(std::size_t r) const {
    if (r >= T_) throw DomainError("SimplexLattice::unrank: index out of range");
    std::vector<std::int64_t> c(static_cast<std::size_t>(k_), 0);
    for (int j = k_ - 1; j >= 1; --j) {
      // largest c with C(c, j) <= r
      const auto& row = table_[j];
      auto it = std::upper_bound(row.begin(), row.begin() + N_ - 1, r);
      const auto cj = static_cast<std::int64_t>(it - row.begin()) - 1;
      c[static_cast<std::size_t>(j)] = cj;
      r -= row[static_cast<std::size_t>(cj)];
    }
    Counts n(static_cast<std::size_t>(k_));
    std::int64_t prev = 0;
    for (int j = 1; j < k_; ++j) {
      const std::int64_t s = c[static_cast<std::size_t>(j)] + 1;
      n[static_cast<std::size_t>(j - 1)] = s - prev;
      prev = s;
    }
    n[static_cast<std::size_t>(k_ - 1)] = N_ - prev;
    return n;
  }

  Vec density(const Counts& n) const { return counts_to_density(n, epsilon()); }
  Vec density(std::size_t r) const { return density(unrank(r)); }

  std::vector<Counts> enumerate_transient() const {
    std::vector<Counts> out;
    out.reserve(T_);
    for (std::size_t r = 0; r < T_; ++r) out.push_back(unrank(r));
    return out;
  }

  // All weak compositions of N into k parts (absorbing ones included), in lexicographic order.
  std::vector<Counts> enumerate_full() const {
    std::vector<Counts> out;
    Counts n(static_cast<std::size_t>(k_), 0);
    std::function<void(int, std::int64_t)> rec = [&](int i, std::int64_t left) {
      if (i == k_ - 1) {
        n[static_cast<std::size_t>(i)] = left;
        out.push_back(n);
        return;
      }
      for (std::int64_t c = 0; c <= left; ++c) {
        n[static_cast<std::size_t>(i)] = c;
        rec(i + 1, left - c);
      }
    };
    rec(0, N_);
    return out;
  }

 private:
  std::int64_t N_;
  int k_;
  std::size_t T_ = 0;
  std::vector<std::vector<std::size_t>> table_;
};

// Integer orthant truncated at per-axis caps. Transient states: {1..cap_i} (boundary kind)
// or {0..cap_i} minus the origin (origin kind); mixed radix with axis 0 fastest.
class TruncatedOrthantLattice {
 public:
  TruncatedOrthantLattice(std::vector<std::int64_t> caps, double epsilon, AbsorbingKind kind)
      : caps_(std::move(caps)), eps_(epsilon), kind_(kind) {
    if (caps_.empty()) throw DomainError("TruncatedOrthantLattice: need at least one axis");
    if (!(epsilon > 0.0)) throw DomainError("TruncatedOrthantLattice: epsilon must be > 0");
    if (kind != AbsorbingKind::origin && kind != AbsorbingKind::boundary_of_orthant)
      throw DomainError("TruncatedOrthantLattice: absorbing kind must be origin or boundary_of_orthant");
    lo_ = kind == AbsorbingKind::boundary_of_orthant ? 1 : 0;
    box_ = 1;
    strides_.resize(caps_.size());
    for (std::size_t i = 0; i < caps_.size(); ++i) {
      if (caps_[i] < 1) throw DomainError("TruncatedOrthantLattice: caps must be >= 1");
      strides_[i] = box_;
      const auto extent = static_cast<std::size_t>(caps_[i] - lo_ + 1);
      if (box_ > std::numeric_limits<std::size_t>::max() / extent) throw BudgetError("lattice size overflows");
      box_ *= extent;
    }
    T_ = box_ - (kind_ == AbsorbingKind::origin ? 1 : 0);
  }

  int dim() const { return static_cast<int>(caps_.size()); }
  double epsilon() const { return eps_; }
  AbsorbingKind absorbing_kind() const { return kind_; }
  const std::vector<std::int64_t>& caps() const { return caps_; }
  std::int64_t lowest() const { return lo_; }
  std::size_t size() const { return T_; }
  std::size_t box_size() const { return box_; }
  const std::vector<std::size_t>& strides() const { return strides_; }
  // Offset between box index and transient rank (1 when the origin occupies box slot 0).
  std::size_t box_offset() const { return kind_ == AbsorbingKind::origin ? 1 : 0; }

  bool is_transient(const Counts& n) const {
    if (n.size() != caps_.size()) return false;
    bool nonzero = false;
    for (std::size_t i = 0; i < n.size(); ++i) {
      if (n[i] < lo_ || n[i] > caps_[i]) return false;
      nonzero = nonzero || n[i] != 0;
    }
    return nonzero;
  }

  std::optional<std::size_t> try_rank(const Counts& n) const {
    if (!is_transient(n)) return std::nullopt;
    std::size_t r = 0;
    for (std::size_t i = 0; i < n.size(); ++i) r += static_cast<std::size_t>(n[i] - lo_) * strides_[i];
    return r - box_offset();
  }
  std::size_t rank(const Counts& n) const {
    auto r = try_rank(n);
    if (!r) throw DomainError("TruncatedOrthantLattice::rank: state is not a transient lattice point");
    return *r;
  }

  Counts unrank(std::size_t r) const {
    if (r >= T_) throw DomainError("TruncatedOrthantLattice::unrank: index out of range");
    std::size_t b = r + box_offset();
    Counts n(caps_.size());
    for (std::size_t i = 0; i < caps_.size(); ++i) {
      const auto extent = static_cast<std::size_t>(caps_[i] - lo_ + 1);
      n[i] = static_cast<std::int64_t>(b % extent) + lo_;
      b /= extent;
    }
    return n;
  }

  Vec density(const Counts& n) const { return counts_to_density(n, eps_); }
  Vec density(std::size_t r) const { return density(unrank(r)); }

  std::vector<Counts> enumerate_transient() const {
    std::vector<Counts> out;
    out.reserve(T_);
    for (std::size_t r = 0; r < T_; ++r) out.push_back(unrank(r));
    return out;
  }

 private:
  std::vector<std::int64_t> caps_;
  double eps_;
  AbsorbingKind kind_;
  std::int64_t lo_ = 0;
  std::size_t box_ = 1;
  std::size_t T_ = 0;
  std::vector<std::size_t> strides_;
};

template <class L>
concept Lattice = requires(const L& l, const Counts& n, std::size_t r) {
  { l.size() } -> std::same_as<std::size_t>;
  { l.try_rank(n) } -> std::same_as<std::optional<std::size_t>>;
  { l.unrank(r) } -> std::same_as<Counts>;
  { l.density(n) } -> std::same_as<Vec>;
  { l.epsilon() } -> std::same_as<double>;
};

// log P(Poisson(m) > c) bound: exp(-(c log(c/m) + m - c)) for c > m (Chernoff).
inline double poisson_upper_tail_chernoff(double m, double c) {
  if (c <= m) return 1.0;
  if (m <= 0.0) return 0.0;
  return std::exp(-(c * std::log(c / m) + m - c));
}

// Smallest cap with Chernoff tail beyond cap at mean bound/eps below tail_tol.
inline std::int64_t poisson_cap(double sup_bound, double epsilon, double tail_tol = 1e-12) {
  const double m = sup_bound / epsilon;
  auto c = static_cast<std::int64_t>(std::ceil(m));
  if (c < 1) c = 1;
  while (poisson_upper_tail_chernoff(m, static_cast<double>(c)) > tail_tol) ++c;
  return c;
}

inline TruncatedOrthantLattice orthant_lattice_for(const MapModel& model, double epsilon, double tail_tol = 1e-12) {
  if (!std::isfinite(model.sup_bound())) throw DomainError("orthant_lattice_for: model has no finite sup bound");
  const auto cap = poisson_cap(model.sup_bound(), epsilon, tail_tol);
  return TruncatedOrthantLattice(std::vector<std::int64_t>(static_cast<std::size_t>(model.dim()), cap), epsilon,
                                 model.absorbing_kind());
}

}  // namespace qsdlab
