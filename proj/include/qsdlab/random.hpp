#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <vector>

namespace qsdlab {

namespace detail {
inline std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

// Counter-based stream: the n-th output is a fixed function of (key, n). Streams are keyed
// by a tuple such as (experiment seed, replicate id, step), so any draw can be replayed
// without advancing other streams and workers never share state.
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed) : key_(detail::splitmix64_mix(seed + kGamma)) {}
  RngStream(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) : RngStream(seed) {
    for (auto id : ids) key_ = detail::splitmix64_mix(key_ ^ detail::splitmix64_mix(id + kGamma));
  }

  // Child stream keyed by this stream's key and `id`; independent of how far this stream ran.
  RngStream derive(std::uint64_t id) const {
    RngStream r(0);
    r.key_ = detail::splitmix64_mix(key_ ^ detail::splitmix64_mix(id + 0x5851f42d4c957f2dULL));
    return r;
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return detail::splitmix64_mix(key_ + (++counter_) * kGamma); }

  // Uniform on [0,1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  // Uniform on (0,1).
  double uniform_open() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

  std::uint64_t draws() const { return counter_; }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Poisson variate. Inversion (sequential search) for mean < 10, Hormann's PTRS
// transformed rejection above. The algorithm choice is fixed so streams reproduce.
inline std::int64_t sample_poisson(double mean, RngStream& rng) {
  if (!(mean > 0.0)) return 0;
  if (mean < 10.0) {
    const double u = rng.uniform();
    double p = std::exp(-mean);
    double cdf = p;
    std::int64_t k = 0;
    while (u >= cdf) {
      ++k;
      p *= mean / static_cast<double>(k);
      const double next = cdf + p;
      if (next == cdf) break;  // remaining tail below double resolution
      cdf = next;
    }
    return k;
  }
  const double slam = std::sqrt(mean);
  const double loglam = std::log(mean);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    const double U = rng.uniform() - 0.5;
    const double V = rng.uniform();
    const double us = 0.5 - std::abs(U);
    const double kd = std::floor((2.0 * a / us + b) * U + mean + 0.43);
    if (us >= 0.07 && V <= vr) return static_cast<std::int64_t>(kd);
    if (kd < 0.0 || (us < 0.013 && V > us)) continue;
    const double lhs = std::log(V) + std::log(invalpha) - std::log(a / (us * us) + b);
    const double rhs = -mean + kd * loglam - std::lgamma(kd + 1.0);
    if (lhs <= rhs) return static_cast<std::int64_t>(kd);
  }
}

// Binomial variate by inversion. Small means search upward from 0; larger means search
// outward from the mode (exact, O(sd) expected work). Uses p <= 1/2 symmetry.
inline std::int64_t sample_binomial(std::int64_t n, double p, RngStream& rng) {
  if (n <= 0 || !(p > 0.0)) return 0;
  if (p >= 1.0) return n;
  if (p > 0.5) return n - sample_binomial(n, 1.0 - p, rng);
  const double q = 1.0 - p;
  const double nd = static_cast<double>(n);
  const double ratio = p / q;
  if (nd * p < 20.0) {
    const double u = rng.uniform();
    double pk = std::exp(nd * std::log1p(-p));
    double cdf = pk;
    std::int64_t k = 0;
    while (u >= cdf && k < n) {
      pk *= ratio * static_cast<double>(n - k) / static_cast<double>(k + 1);
      ++k;
      const double next = cdf + pk;
      if (next == cdf) break;
      cdf = next;
    }
    return k;
  }
  const std::int64_t mode = static_cast<std::int64_t>(std::floor((nd + 1.0) * p));
  const double md = static_cast<double>(mode);
  const double pmode = std::exp(std::lgamma(nd + 1.0) - std::lgamma(md + 1.0) - std::lgamma(nd - md + 1.0) +
                                md * std::log(p) + (nd - md) * std::log1p(-p));
  double u = rng.uniform();
  u -= pmode;
  if (u < 0.0) return mode;
  std::int64_t lo = mode, hi = mode;
  double plo = pmode, phi = pmode;
  for (;;) {
    bool moved = false;
    if (lo > 0) {
      plo *= static_cast<double>(lo) / (ratio * static_cast<double>(n - lo + 1));
      --lo;
      u -= plo;
      if (u < 0.0) return lo;
      moved = true;
    }
    if (hi < n) {
      phi *= ratio * static_cast<double>(n - hi) / static_cast<double>(hi + 1);
      ++hi;
      u -= phi;
      if (u < 0.0) return hi;
      moved = true;
    }
    if (!moved || (plo < 1e-300 && phi < 1e-300)) return mode;  // u consumed by rounding
  }
}

// Multinomial variate through conditional binomials.
inline std::vector<std::int64_t> sample_multinomial(std::int64_t n, const std::vector<double>& p,
                                                    RngStream& rng) {
  std::vector<std::int64_t> out(p.size(), 0);
  std::int64_t left = n;
  double mass = 1.0;
  for (std::size_t i = 0; i + 1 < p.size() && left > 0; ++i) {
    const double pi = mass > 0.0 ? std::min(1.0, p[i] / mass) : 0.0;
    out[i] = sample_binomial(left, pi, rng);
    left -= out[i];
    mass -= p[i];
  }
  if (!p.empty()) out.back() += left;
  return out;
}

// Index draw from unnormalized nonnegative weights by inverse CDF.
inline std::size_t sample_discrete(const std::vector<double>& cumulative, RngStream& rng) {
  const double total = cumulative.back();
  const double u = rng.uniform() * total;
  std::size_t lo = 0, hi = cumulative.size() - 1;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (cumulative[mid] > u) hi = mid; else lo = mid + 1;
  }
  return lo;
}

}  // namespace qsdlab
