#pragma once

#include "qsdlab/kernel.hpp"
#include "qsdlab/lattice.hpp"
#include "qsdlab/parallel.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <numeric>
#include <span>

namespace qsdlab {

struct BuildOptions {
  double prune_tol = 1e-16;
  std::size_t max_entries = 250'000'000;  // stored values (about 12 bytes each)
  double conservation_tol = 1e-12;
  unsigned threads = 1;
};

// Transient block Q of a kernel on a lattice, with the absorbed mass a(x) and the mass
// lost to truncation/pruning for every row, so that rowsum + a + loss = 1.
//
// Poisson kernels factor over coordinates, so their rows are stored as one window of
// Poisson probabilities per axis and applied as outer products. Multinomial rows are CSR.
class SubstochasticMatrix {
 public:
  std::size_t size() const { return T_; }
  bool product_form() const { return std::holds_alternative<Product>(store_); }
  double epsilon() const { return epsilon_; }
  const std::vector<std::int64_t>& caps() const { return caps_; }
  const std::string& kernel_name() const { return kernel_; }

  const std::vector<double>& absorption() const { return absorption_; }
  const std::vector<double>& truncation_loss() const { return loss_; }
  const std::vector<double>& row_sums() const { return row_sums_; }
  double max_conservation_error() const { return max_conservation_error_; }
  double total_truncation_loss_max() const {
    return loss_.empty() ? 0.0 : *std::max_element(loss_.begin(), loss_.end());
  }

  // Number of stored doubles.
  std::size_t stored_entries() const {
    return std::visit([](const auto& s) { return s.values(); }, store_);
  }
  // Number of transient-to-transient entries represented.
  std::size_t nnz() const {
    if (auto* c = std::get_if<Csr>(&store_)) return c->val.size();
    const auto& p = std::get<Product>(store_);
    std::size_t n = 0;
    for (std::size_t r = 0; r < T_; ++r) {
      std::size_t prod = 1;
      bool hits_origin = p.offset == 1;
      for (int i = 0; i < p.k; ++i) {
        const std::size_t m = r * static_cast<std::size_t>(p.k) + static_cast<std::size_t>(i);
        prod *= p.len[m];
        hits_origin = hits_origin && p.start[m] == 0 && p.len[m] > 0;
      }
      n += prod - (hits_origin ? 1 : 0);
    }
    return n;
  }

  // out = mu Q
  void left_multiply(std::span<const double> mu, std::span<double> out) const {
    if (mu.size() != T_ || out.size() != T_) throw DomainError("left_multiply: size mismatch");
    if (auto* c = std::get_if<Csr>(&store_)) {
      std::fill(out.begin(), out.end(), 0.0);
      for (std::size_t r = 0; r < T_; ++r) {
        const double w = mu[r];
        if (w == 0.0) continue;
        for (std::size_t e = c->row_ptr[r]; e < c->row_ptr[r + 1]; ++e) out[c->col[e]] += w * c->val[e];
      }
      return;
    }
    const auto& p = std::get<Product>(store_);
    std::vector<double> box(p.box, 0.0);
    for (std::size_t r = 0; r < T_; ++r)
      if (mu[r] != 0.0) p.accumulate(r, mu[r], box.data());
    std::copy(box.begin() + static_cast<std::ptrdiff_t>(p.offset), box.end(), out.begin());
  }

  // fn(row, col, value) for every represented entry, rows in order.
  template <class Fn>
  void for_each_entry(Fn&& fn) const {
    if (auto* c = std::get_if<Csr>(&store_)) {
      for (std::size_t r = 0; r < T_; ++r)
        for (std::size_t e = c->row_ptr[r]; e < c->row_ptr[r + 1]; ++e) fn(r, static_cast<std::size_t>(c->col[e]), c->val[e]);
      return;
    }
    const auto& p = std::get<Product>(store_);
    std::vector<double> box(p.box);
    for (std::size_t r = 0; r < T_; ++r) {
      std::fill(box.begin(), box.end(), 0.0);
      p.accumulate(r, 1.0, box.data());
      for (std::size_t b = p.offset; b < p.box; ++b)
        if (box[b] != 0.0) fn(r, b - p.offset, box[b]);
    }
  }

  Mat to_dense(std::size_t max_size = 6000) const {
    if (T_ > max_size) throw BudgetError("to_dense: matrix too large");
    Mat Q = Mat::Zero(static_cast<Eigen::Index>(T_), static_cast<Eigen::Index>(T_));
    for_each_entry([&](std::size_t r, std::size_t c, double v) {
      Q(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
    });
    return Q;
  }

  // For tests and external matrices: rows of Q plus absorption; loss is the remainder.
  static SubstochasticMatrix from_dense(const Mat& Q, const std::vector<double>& absorption) {
    if (Q.rows() != Q.cols() || static_cast<std::size_t>(Q.rows()) != absorption.size())
      throw DomainError("from_dense: shape mismatch");
    SubstochasticMatrix m;
    m.T_ = static_cast<std::size_t>(Q.rows());
    Csr c;
    c.row_ptr.push_back(0);
    for (Eigen::Index r = 0; r < Q.rows(); ++r) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < Q.cols(); ++j) {
        if (Q(r, j) < 0.0) throw DomainError("from_dense: negative entry");
        if (Q(r, j) > 0.0) {
          c.col.push_back(static_cast<std::uint32_t>(j));
          c.val.push_back(Q(r, j));
          s += Q(r, j);
        }
      }
      c.row_ptr.push_back(c.val.size());
      const double a = absorption[static_cast<std::size_t>(r)];
      const double loss = 1.0 - s - a;
      if (loss < -1e-12) throw DomainError("from_dense: row sum plus absorption exceeds 1");
      m.row_sums_.push_back(s);
      m.absorption_.push_back(a);
      m.loss_.push_back(std::max(0.0, loss));
    }
    m.store_ = std::move(c);
    m.kernel_ = "dense";
    return m;
  }

  friend SubstochasticMatrix build_substochastic_matrix(const PoissonBranchingKernel&, const TruncatedOrthantLattice&,
                                                        const BuildOptions&);
  friend SubstochasticMatrix build_substochastic_matrix(const MultinomialKernel&, const SimplexLattice&,
                                                        const BuildOptions&);

 private:
  struct Csr {
    std::vector<std::size_t> row_ptr;
    std::vector<std::uint32_t> col;
    std::vector<double> val;
    std::size_t values() const { return val.size(); }
  };
  struct Product {
    int k = 1;
    std::size_t box = 0, offset = 0;
    std::vector<std::size_t> stride;
    // per (row, axis): first box coordinate, window length, start in pool
    std::vector<std::uint32_t> start, len;
    std::vector<std::size_t> pool_off;
    std::vector<double> pool;
    std::size_t values() const { return pool.size(); }

    void accumulate(std::size_t r, double w, double* out) const {
      const std::size_t base = r * static_cast<std::size_t>(k);
      if (k == 1) {
        const double* v = pool.data() + pool_off[base];
        double* dst = out + start[base];
        for (std::uint32_t j = 0; j < len[base]; ++j) dst[j] += w * v[j];
        return;
      }
      rec(base, k - 1, 0, w, out);
    }
    void rec(std::size_t base, int axis, std::size_t off, double w, double* out) const {
      const std::size_t m = base + static_cast<std::size_t>(axis);
      const double* v = pool.data() + pool_off[m];
      if (axis == 0) {
        double* dst = out + off + start[m];
        for (std::uint32_t j = 0; j < len[m]; ++j) dst[j] += w * v[j];
        return;
      }
      for (std::uint32_t j = 0; j < len[m]; ++j)
        rec(base, axis - 1, off + (start[m] + j) * stride[static_cast<std::size_t>(axis)], w * v[j], out);
    }
  };

  std::size_t T_ = 0;
  std::variant<Csr, Product> store_;
  std::vector<double> absorption_, loss_, row_sums_;
  double max_conservation_error_ = 0.0;
  double epsilon_ = 0.0;
  std::vector<std::int64_t> caps_;
  std::string kernel_;
};

namespace detail {

// Poisson(G) probabilities on [lo, cap], kept where >= prune, plus the exact masses outside
// the kept window (split into y = 0 when 0 < lo, and everything else).
struct AxisWindow {
  std::int64_t first = 0;  // first kept count
  std::vector<double> pmf;
  double kept = 0.0;
  double zero = 0.0;   // P(Y = 0) when 0 is below lo, else 0
  double other = 0.0;  // pruned mass inside [lo, cap] plus P(Y > cap)
  double at_zero_kept = 0.0;  // P(Y = 0) if 0 is in the kept window
};

inline AxisWindow poisson_axis(double G, std::int64_t lo, std::int64_t cap, double prune) {
  using boost::math::gamma_p;
  using boost::math::gamma_q;
  AxisWindow w;
  if (G <= 0.0) {
    if (lo == 0) {
      w.first = 0;
      w.pmf = {1.0};
      w.kept = 1.0;
      w.at_zero_kept = 1.0;
    } else {
      w.zero = 1.0;
    }
    return w;
  }
  if (lo > 0) w.zero = std::exp(-G);
  const double logG = std::log(G);
  auto logpmf = [&](std::int64_t y) {
    return static_cast<double>(y) * logG - G - std::lgamma(static_cast<double>(y) + 1.0);
  };
  const std::int64_t mode = static_cast<std::int64_t>(std::floor(G));
  const std::int64_t s = std::clamp(mode, lo, cap);
  const double ps = std::exp(logpmf(s));
  // P(lo <= Y <= cap) and P(Y > cap)
  const double above = gamma_p(static_cast<double>(cap + 1), G);
  if (ps < prune) {
    const double in_range = (lo == 0 ? gamma_q(static_cast<double>(cap + 1), G)
                                     : gamma_p(static_cast<double>(lo), G) - above);
    w.other = in_range + above;
    w.first = s;
    return w;
  }
  std::vector<double> down, up;
  std::int64_t y = s;
  double p = ps;
  while (y > lo) {
    p *= static_cast<double>(y) / G;
    if (p < prune) break;
    --y;
    down.push_back(p);
  }
  const std::int64_t first = y;
  y = s;
  p = ps;
  while (y < cap) {
    p *= G / static_cast<double>(y + 1);
    if (p < prune) break;
    ++y;
    up.push_back(p);
  }
  const std::int64_t last = y;
  w.first = first;
  w.pmf.reserve(down.size() + 1 + up.size());
  w.pmf.assign(down.rbegin(), down.rend());
  w.pmf.push_back(ps);
  w.pmf.insert(w.pmf.end(), up.begin(), up.end());
  for (double v : w.pmf) w.kept += v;
  if (first == 0) w.at_zero_kept = w.pmf.front();
  // pruned below the window: P(lo <= Y <= first - 1)
  double low = 0.0;
  if (first > lo) low = gamma_q(static_cast<double>(first), G) - (lo > 0 ? gamma_q(static_cast<double>(lo), G) : 0.0);
  // pruned above the window inside the cap: P(last + 1 <= Y <= cap)
  double high = 0.0;
  if (last < cap) high = gamma_p(static_cast<double>(last + 1), G) - above;
  w.other = std::max(0.0, low) + std::max(0.0, high) + above;
  return w;
}

// Conditional binomial probabilities for y = 0..n (mode-out recurrences, no underflow at the mode).
inline void binomial_pmf_all(std::int64_t n, double p, std::vector<double>& out) {
  out.assign(static_cast<std::size_t>(n + 1), 0.0);
  if (p <= 0.0) {
    out[0] = 1.0;
    return;
  }
  if (p >= 1.0) {
    out[static_cast<std::size_t>(n)] = 1.0;
    return;
  }
  const double nd = static_cast<double>(n);
  const auto mode = std::min<std::int64_t>(n, static_cast<std::int64_t>(std::floor((nd + 1.0) * p)));
  const double md = static_cast<double>(mode);
  out[static_cast<std::size_t>(mode)] =
      std::exp(std::lgamma(nd + 1.0) - std::lgamma(md + 1.0) - std::lgamma(nd - md + 1.0) + md * std::log(p) +
               (nd - md) * std::log1p(-p));
  const double ratio = p / (1.0 - p);
  for (std::int64_t y = mode; y < n; ++y)
    out[static_cast<std::size_t>(y + 1)] =
        out[static_cast<std::size_t>(y)] * ratio * static_cast<double>(n - y) / static_cast<double>(y + 1);
  for (std::int64_t y = mode; y > 0; --y)
    out[static_cast<std::size_t>(y - 1)] =
        out[static_cast<std::size_t>(y)] * static_cast<double>(y) / (ratio * static_cast<double>(n - y + 1));
}

// Sum over subsets of prod_{i in S} other_i prod_{i not in S} kept_i for nonempty S.
inline double outside_box_mass(const std::vector<double>& kept, const std::vector<double>& other) {
  const std::size_t k = kept.size();
  double total = 0.0;
  for (std::size_t mask = 1; mask < (std::size_t{1} << k); ++mask) {
    double t = 1.0;
    for (std::size_t i = 0; i < k; ++i) t *= (mask >> i & 1U) ? other[i] : kept[i];
    total += t;
  }
  return total;
}

}  // namespace detail

inline SubstochasticMatrix build_substochastic_matrix(const PoissonBranchingKernel& kernel,
                                                      const TruncatedOrthantLattice& lattice,
                                                      const BuildOptions& opt = {}) {
  if (kernel.dim() != lattice.dim()) throw DomainError("build: kernel and lattice dimensions differ");
  if (kernel.model().absorbing_kind() != lattice.absorbing_kind())
    throw DomainError("build: lattice absorbing kind does not match the model");
  if (std::abs(kernel.epsilon() - lattice.epsilon()) > 1e-15 * lattice.epsilon())
    throw DomainError("build: kernel and lattice epsilon differ");
  const std::size_t T = lattice.size();
  const int k = lattice.dim();
  const auto ku = static_cast<std::size_t>(k);
  const bool origin = lattice.absorbing_kind() == AbsorbingKind::origin;
  const auto lo = lattice.lowest();

  SubstochasticMatrix m;
  m.T_ = T;
  m.epsilon_ = lattice.epsilon();
  m.caps_ = lattice.caps();
  m.kernel_ = "poisson";
  m.absorption_.assign(T, 0.0);
  m.loss_.assign(T, 0.0);
  m.row_sums_.assign(T, 0.0);

  SubstochasticMatrix::Product P;
  P.k = k;
  P.box = lattice.box_size();
  P.offset = lattice.box_offset();
  P.stride = lattice.strides();
  P.start.assign(T * ku, 0);
  P.len.assign(T * ku, 0);
  P.pool_off.assign(T * ku, 0);

  std::vector<std::vector<detail::AxisWindow>> windows(T);
  std::vector<double> row_err(T, 0.0);
  parallel_for(T, opt.threads, [&](std::size_t r) {
    const Counts n = lattice.unrank(r);
    const Vec G = kernel.mean_counts(n);
    auto& ws = windows[r];
    ws.reserve(ku);
    std::vector<double> kept(ku), other(ku);
    double log_no_zero = 0.0;  // sum log(1 - P(Y_i = 0)) for the boundary kind
    double zero_all = 1.0, zero_kept_all = 1.0;
    for (std::size_t i = 0; i < ku; ++i) {
      ws.push_back(detail::poisson_axis(G[static_cast<Eigen::Index>(i)], lo, lattice.caps()[i], opt.prune_tol));
      const auto& w = ws.back();
      kept[i] = w.kept;
      other[i] = w.other;
      log_no_zero += std::log1p(-w.zero);
      zero_all *= std::exp(-G[static_cast<Eigen::Index>(i)]);
      zero_kept_all *= w.at_zero_kept;
    }
    double kept_prod = 1.0;
    for (double v : kept) kept_prod *= v;
    double a, row, loss;
    const double outside = detail::outside_box_mass(kept, other);
    if (origin) {
      a = zero_all;
      row = kept_prod - zero_kept_all;
      loss = outside - (zero_kept_all > 0.0 ? 0.0 : a);
    } else {
      a = -std::expm1(log_no_zero);
      row = kept_prod;
      loss = outside;
    }
    m.absorption_[r] = a;
    m.row_sums_[r] = row;
    m.loss_[r] = std::max(0.0, loss);
    row_err[r] = std::abs(row + a + loss - 1.0);
  });

  std::size_t total = 0;
  for (std::size_t r = 0; r < T; ++r)
    for (std::size_t i = 0; i < ku; ++i) {
      const auto& w = windows[r][i];
      const std::size_t idx = r * ku + i;
      P.pool_off[idx] = total;
      P.len[idx] = static_cast<std::uint32_t>(w.pmf.size());
      P.start[idx] = static_cast<std::uint32_t>(w.first - lo);
      total += w.pmf.size();
    }
  if (total > opt.max_entries)
    throw BudgetError("build: " + std::to_string(total) + " stored entries exceed the budget of " +
                      std::to_string(opt.max_entries));
  P.pool.resize(total);
  for (std::size_t r = 0; r < T; ++r) {
    for (std::size_t i = 0; i < ku; ++i) {
      const auto& w = windows[r][i];
      std::copy(w.pmf.begin(), w.pmf.end(), P.pool.begin() + static_cast<std::ptrdiff_t>(P.pool_off[r * ku + i]));
    }
    std::vector<detail::AxisWindow>().swap(windows[r]);
  }
  m.store_ = std::move(P);
  m.max_conservation_error_ = T ? *std::max_element(row_err.begin(), row_err.end()) : 0.0;
  if (m.max_conservation_error_ > opt.conservation_tol)
    throw Error("build: row conservation violated by " + std::to_string(m.max_conservation_error_));
  return m;
}

inline SubstochasticMatrix build_substochastic_matrix(const MultinomialKernel& kernel, const SimplexLattice& lattice,
                                                      const BuildOptions& opt = {}) {
  if (kernel.dim() != lattice.dim() || kernel.sites() != lattice.sites())
    throw DomainError("build: kernel and lattice do not match");
  const std::size_t T = lattice.size();
  const int k = lattice.dim();
  const std::int64_t N = lattice.sites();

  SubstochasticMatrix m;
  m.T_ = T;
  m.epsilon_ = lattice.epsilon();
  m.caps_ = {N};
  m.kernel_ = "multinomial";
  m.absorption_.assign(T, 0.0);
  m.loss_.assign(T, 0.0);
  m.row_sums_.assign(T, 0.0);

  // Visit every transient y with its probability through conditional binomials.
  auto visit_row = [&](std::size_t r, auto&& emit) {
    const auto p = kernel.probabilities(lattice.unrank(r));
    std::vector<double> tail(static_cast<std::size_t>(k) + 1, 0.0);
    for (int i = k - 1; i >= 0; --i) tail[static_cast<std::size_t>(i)] = tail[static_cast<std::size_t>(i) + 1] + p[static_cast<std::size_t>(i)];
    std::vector<std::vector<double>> pmf(static_cast<std::size_t>(k));
    Counts y(static_cast<std::size_t>(k), 0);
    auto rec = [&](auto& self, int i, std::int64_t left, double prob) -> void {
      const auto iu = static_cast<std::size_t>(i);
      if (i == k - 1) {
        y[iu] = left;
        emit(y, prob);
        return;
      }
      const double cond = tail[iu] > 0.0 ? std::min(1.0, p[iu] / tail[iu]) : 0.0;
      detail::binomial_pmf_all(left, cond, pmf[iu]);
      const std::int64_t max_here = left - (k - 1 - i);  // leave at least one for the rest
      for (std::int64_t c = 1; c <= max_here; ++c) {
        const double q = prob * pmf[iu][static_cast<std::size_t>(c)];
        if (q == 0.0) continue;
        y[iu] = c;
        self(self, i + 1, left - c, q);
      }
    };
    rec(rec, 0, N, 1.0);
    // absorption by inclusion-exclusion over the set of coordinates forced to zero
    double a = 0.0;
    const std::size_t full = (std::size_t{1} << k) - 1;
    for (std::size_t mask = 1; mask < full; ++mask) {
      double rest = 0.0;
      int bits = 0;
      for (int i = 0; i < k; ++i) {
        if (mask >> i & 1U) ++bits;
        else rest += p[static_cast<std::size_t>(i)];
      }
      const double term = std::pow(rest, static_cast<double>(N));
      a += (bits % 2 == 1) ? term : -term;
    }
    return a;
  };

  std::vector<std::size_t> counts(T, 0);
  parallel_for(T, opt.threads, [&](std::size_t r) {
    std::size_t c = 0;
    visit_row(r, [&](const Counts&, double q) { c += q >= opt.prune_tol; });
    counts[r] = c;
  });
  SubstochasticMatrix::Csr csr;
  csr.row_ptr.assign(T + 1, 0);
  for (std::size_t r = 0; r < T; ++r) csr.row_ptr[r + 1] = csr.row_ptr[r] + counts[r];
  if (csr.row_ptr[T] > opt.max_entries)
    throw BudgetError("build: " + std::to_string(csr.row_ptr[T]) + " entries exceed the budget of " +
                      std::to_string(opt.max_entries));
  csr.col.resize(csr.row_ptr[T]);
  csr.val.resize(csr.row_ptr[T]);
  std::vector<double> row_err(T, 0.0);
  parallel_for(T, opt.threads, [&](std::size_t r) {
    std::size_t e = csr.row_ptr[r];
    double kept = 0.0, pruned = 0.0;
    const double a = visit_row(r, [&](const Counts& y, double q) {
      if (q >= opt.prune_tol) {
        csr.col[e] = static_cast<std::uint32_t>(*lattice.try_rank(y));
        csr.val[e] = q;
        ++e;
        kept += q;
      } else {
        pruned += q;
      }
    });
    // columns ascending within a row
    std::vector<std::size_t> order(e - csr.row_ptr[r]);
    std::iota(order.begin(), order.end(), 0);
    const std::size_t b = csr.row_ptr[r];
    std::sort(order.begin(), order.end(), [&](auto x, auto z) { return csr.col[b + x] < csr.col[b + z]; });
    std::vector<std::uint32_t> cc(order.size());
    std::vector<double> vv(order.size());
    for (std::size_t j = 0; j < order.size(); ++j) {
      cc[j] = csr.col[b + order[j]];
      vv[j] = csr.val[b + order[j]];
    }
    std::copy(cc.begin(), cc.end(), csr.col.begin() + static_cast<std::ptrdiff_t>(b));
    std::copy(vv.begin(), vv.end(), csr.val.begin() + static_cast<std::ptrdiff_t>(b));
    m.absorption_[r] = a;
    m.row_sums_[r] = kept;
    m.loss_[r] = pruned;
    row_err[r] = std::abs(kept + pruned + a - 1.0);
  });
  m.store_ = std::move(csr);
  m.max_conservation_error_ = T ? *std::max_element(row_err.begin(), row_err.end()) : 0.0;
  if (m.max_conservation_error_ > opt.conservation_tol)
    throw Error("build: row conservation violated by " + std::to_string(m.max_conservation_error_));
  return m;
}

}  // namespace qsdlab
