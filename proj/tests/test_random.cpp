#include "qsdlab/random.hpp"

#include <gtest/gtest.h>

#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <map>

using qsdlab::RngStream;

TEST(RngStream, SameKeySameSequence) {
  RngStream a(42, {1, 2}), b(42, {1, 2}), c(42, {1, 3});
  for (int i = 0; i < 100; ++i) {
    const auto x = a(), y = b();
    EXPECT_EQ(x, y);
    (void)c();
  }
  RngStream d(42, {1, 2}), e(42, {1, 3});
  int equal = 0;
  for (int i = 0; i < 100; ++i) equal += d() == e();
  EXPECT_LT(equal, 3);
}

TEST(RngStream, DeriveIgnoresParentPosition) {
  RngStream a(7);
  const auto child_before = a.derive(5);
  for (int i = 0; i < 10; ++i) (void)a();
  auto c1 = child_before;
  auto c2 = a.derive(5);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(c1(), c2());
}

TEST(RngStream, UniformRange) {
  RngStream r(1);
  double s = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double v = r.uniform_open();
    ASSERT_GT(v, 0.0);
    ASSERT_LT(v, 1.0);
    s += u;
  }
  EXPECT_NEAR(s / 100000, 0.5, 4 * std::sqrt(1.0 / 12 / 100000));
}

namespace {

// chi-square p-value of draws against an exact pmf, pooling bins with expectation < 5
double poisson_gof(double mean, int n, std::uint64_t seed) {
  RngStream r(seed);
  std::map<std::int64_t, double> obs;
  for (int i = 0; i < n; ++i) obs[qsdlab::sample_poisson(mean, r)] += 1.0;
  std::vector<double> o, e;
  double acc_o = 0, acc_e = 0, cdf = 0;
  const auto hi = static_cast<std::int64_t>(mean + 12 * std::sqrt(mean) + 20);
  for (std::int64_t k = 0; k <= hi; ++k) {
    const double p = std::exp(k * std::log(mean) - mean - std::lgamma(k + 1.0));
    cdf += p;
    acc_e += n * p;
    acc_o += obs.count(k) ? obs[k] : 0.0;
    if (acc_e >= 5) {
      o.push_back(acc_o);
      e.push_back(acc_e);
      acc_o = acc_e = 0;
    }
  }
  double tail_o = acc_o;
  for (auto& [k, c] : obs)
    if (k > hi) tail_o += c;
  o.back() += tail_o;
  e.back() += acc_e + n * (1 - cdf);
  double chi2 = 0;
  for (std::size_t j = 0; j < o.size(); ++j) chi2 += (o[j] - e[j]) * (o[j] - e[j]) / e[j];
  return boost::math::gamma_q((o.size() - 1) / 2.0, chi2 / 2.0);
}

}  // namespace

class PoissonSampler : public ::testing::TestWithParam<double> {};

TEST_P(PoissonSampler, MatchesPmf) { EXPECT_GT(poisson_gof(GetParam(), 200000, 99), 0.001); }

INSTANTIATE_TEST_SUITE_P(Means, PoissonSampler, ::testing::Values(0.05, 1.0, 3.5, 9.99, 10.0, 17.3, 40.0, 250.0, 3000.0));

TEST(PoissonSampler, ZeroMean) {
  RngStream r(3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(qsdlab::sample_poisson(0.0, r), 0);
}

TEST(BinomialSampler, MeanAndVariance) {
  for (auto [n, p] : {std::pair<std::int64_t, double>{10, 0.3}, {150, 0.5}, {150, 0.97}, {5000, 0.2}, {3, 0.999}}) {
    RngStream r(static_cast<std::uint64_t>(n));
    const int draws = 100000;
    double s = 0, s2 = 0;
    for (int i = 0; i < draws; ++i) {
      const auto y = qsdlab::sample_binomial(n, p, r);
      ASSERT_GE(y, 0);
      ASSERT_LE(y, n);
      s += y;
      s2 += double(y) * y;
    }
    const double mean = s / draws, var = s2 / draws - mean * mean;
    const double m0 = n * p, v0 = n * p * (1 - p);
    EXPECT_LT(std::abs(mean - m0) / std::sqrt(v0 / draws), 4.5) << n << " " << p;
    EXPECT_NEAR(var / v0, 1.0, 0.05) << n << " " << p;
  }
}

TEST(BinomialSampler, SmallExactLaw) {
  // Bin(2, 1/2): 1/4, 1/2, 1/4
  RngStream r(11);
  double c[3] = {0, 0, 0};
  const int draws = 200000;
  for (int i = 0; i < draws; ++i) c[qsdlab::sample_binomial(2, 0.5, r)] += 1;
  const double expct[3] = {0.25, 0.5, 0.25};
  double chi2 = 0;
  for (int j = 0; j < 3; ++j) chi2 += std::pow(c[j] - draws * expct[j], 2) / (draws * expct[j]);
  EXPECT_GT(boost::math::gamma_q(1.0, chi2 / 2), 0.001);
}

TEST(MultinomialSampler, SumsToTrialsAndMeans) {
  RngStream r(5);
  const std::vector<double> p{0.2, 0.5, 0.3};
  std::vector<double> s(3, 0.0);
  const int draws = 50000;
  for (int i = 0; i < draws; ++i) {
    const auto y = qsdlab::sample_multinomial(30, p, r);
    ASSERT_EQ(y[0] + y[1] + y[2], 30);
    for (int j = 0; j < 3; ++j) s[j] += y[j];
  }
  for (int j = 0; j < 3; ++j) {
    const double sd = std::sqrt(30 * p[j] * (1 - p[j]) / draws);
    EXPECT_LT(std::abs(s[j] / draws - 30 * p[j]) / sd, 4.5);
  }
}

TEST(DiscreteSampler, InverseCdf) {
  RngStream r(8);
  const std::vector<double> cum{0.0, 0.25, 0.25, 1.0};  // weights 0, .25, 0, .75
  int c[4] = {0, 0, 0, 0};
  for (int i = 0; i < 40000; ++i) c[qsdlab::sample_discrete(cum, r)]++;
  EXPECT_EQ(c[0], 0);
  EXPECT_EQ(c[2], 0);
  EXPECT_NEAR(c[1] / 40000.0, 0.25, 0.01);
}
