#include "qsdlab/dynamics.hpp"
#include "qsdlab/random.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace qsdlab;

namespace {
Vec v(std::initializer_list<double> xs) {
  Vec r(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) r[i++] = x;
  return r;
}
Mat rps() { return (Mat(3, 3) << 0, -1, 2, 2, 0, -1, -1, 2, 0).finished(); }
MapModel lg_coexist() { return MapModel::leslie_gower(v({2, 2}), (Mat(2, 2) << 1, 0.5, 0.5, 1).finished()); }
}  // namespace

TEST(Evaluate, RickerFixedPoint) {
  const auto m = MapModel::ricker(2.0);
  EXPECT_NEAR(m.evaluate(v({std::log(2.0)}))[0], std::log(2.0), 1e-15);
}

TEST(Evaluate, LeslieGowerInteriorFixedPoint) {
  // Oracle: the interior fixed point solves the linear system 1 + c_ii x_i + c_ij x_j = b_i.
  const Mat c = (Mat(2, 2) << 1, 0.5, 0.5, 1).finished();
  const Vec x = c.lu().solve(v({1, 1}));
  EXPECT_NEAR(x[0], 2.0 / 3, 1e-14);
  const Vec y = lg_coexist().evaluate(x);
  EXPECT_NEAR(y[0], x[0], 1e-14);
  EXPECT_NEAR(y[1], x[1], 1e-14);
}

TEST(Evaluate, ReplicatorVerticesFixed) {
  const auto m = MapModel::replicator(rps(), 10.0);
  for (int i = 0; i < 3; ++i) {
    Vec e = Vec::Zero(3);
    e[i] = 1.0;
    EXPECT_EQ(m.evaluate(e), e);
  }
}

TEST(Evaluate, ThompsonExplicitBranchAtZeroHost) {
  const auto m = MapModel::thompson({1.0, 1.0, 0.8, 0.5});
  EXPECT_EQ(m.evaluate(v({0.0, 0.7})), Vec::Zero(2));
  const Vec y = m.evaluate(v({0.5, 0.0}));
  EXPECT_GT(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
}

TEST(Evaluate, DomainViolationsRejected) {
  EXPECT_THROW(MapModel::ricker(2.0).evaluate(v({-0.1})), DomainError);
  EXPECT_THROW(MapModel::replicator(rps(), 10.0).evaluate(v({0.5, 0.5, 0.5})), DomainError);
  EXPECT_THROW(lg_coexist().evaluate(v({1.0})), DomainError);
}

TEST(Construction, ParameterValidation) {
  EXPECT_THROW(MapModel::ricker(0.0), DomainError);
  EXPECT_THROW(MapModel::spatial_ricker(2.0, (Mat(2, 2) << 0.5, 0.4, 0.5, 0.5).finished()), DomainError);
  EXPECT_THROW(MapModel::spatial_ricker(2.0, Mat::Identity(2, 2)), DomainError);  // reducible
  EXPECT_NO_THROW(MapModel::spatial_ricker(2.0, (Mat(2, 2) << 0.9, 0.1, 0.2, 0.8).finished()));
  EXPECT_THROW(MapModel::leslie_gower(v({2, 2}), (Mat(2, 2) << 1, 0, 0.5, 1).finished()), DomainError);
  EXPECT_THROW(MapModel::thompson({1.0, -1.0, 1.0, 0.5}), DomainError);
  EXPECT_THROW(MapModel::replicator(rps(), 0.5), DomainError);
}

TEST(Iterate, FixedPointConstant) {
  const auto traj = iterate(MapModel::ricker(2.0), v({std::log(2.0)}), 5);
  ASSERT_EQ(traj.size(), 6u);
  for (const auto& x : traj) EXPECT_NEAR(x[0], std::log(2.0), 1e-15);
}

TEST(Iterate, SubcriticalMonotoneDecrease) {
  const auto traj = iterate(MapModel::ricker(0.5), v({1.0}), 200);
  for (std::size_t t = 1; t < traj.size(); ++t) {
    EXPECT_LE(traj[t][0], 0.5 * traj[t - 1][0] + 1e-300);
    EXPECT_LT(traj[t][0], traj[t - 1][0]);
  }
  EXPECT_LT(traj.back()[0], 1e-50);
}

TEST(Iterate, RpsBarycenterConstant) {
  const auto traj = iterate(MapModel::replicator(rps(), 10.0), Vec::Constant(3, 1.0 / 3), 10);
  for (const auto& x : traj) EXPECT_LT(sup_distance(x, Vec::Constant(3, 1.0 / 3)), 1e-15);
}

TEST(Iterate, DivergenceReportsStep) {
  const auto m = MapModel::user_defined(1, [](const Vec& x) { return Vec(x * 1e200); }, kInf, AbsorbingKind::origin);
  try {
    iterate(m, v({1.0}), 10);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.step, 2u);
  }
}

TEST(Equilibria, RickerSupercritical) {
  const auto eq = find_equilibria(MapModel::ricker(2.0), Box{v({0}), v({3})}, 31, 1e-12);
  ASSERT_EQ(eq.size(), 2u);
  EXPECT_EQ(eq[0].point[0], 0.0);
  EXPECT_TRUE(eq[0].in_M0);
  EXPECT_EQ(eq[0].stability, Stability::unstable);
  EXPECT_NEAR(eq[1].point[0], std::log(2.0), 1e-12);
  EXPECT_FALSE(eq[1].in_M0);
  EXPECT_EQ(eq[1].stability, Stability::stable);
  EXPECT_NEAR(eq[1].spectral_radius, 1 - std::log(2.0), 1e-6);
}

TEST(Equilibria, RickerSubcritical) {
  const auto eq = find_equilibria(MapModel::ricker(0.5), Box{v({0}), v({3})}, 31, 1e-12);
  ASSERT_EQ(eq.size(), 1u);
  EXPECT_EQ(eq[0].point[0], 0.0);
  EXPECT_EQ(eq[0].stability, Stability::stable);
}

TEST(Equilibria, LeslieGowerFourPoints) {
  const auto m = lg_coexist();
  const auto eq = find_equilibria(m, Box{v({0, 0}), v({2, 2})}, 9, 1e-12);
  ASSERT_EQ(eq.size(), 4u);
  // Oracle: boundary points solve the one-species fixed point b x/(1 + x) = x.
  const std::vector<Vec> expect{v({0, 0}), v({0, 1}), v({2.0 / 3, 2.0 / 3}), v({1, 0})};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_LT(sup_distance(eq[i].point, expect[i]), 1e-10) << i;
    EXPECT_LE(sup_distance(m(eq[i].point), eq[i].point), 1e-12);
  }
  EXPECT_TRUE(eq[0].in_M0 && eq[1].in_M0 && eq[3].in_M0);
  EXPECT_FALSE(eq[2].in_M0);
  EXPECT_EQ(eq[2].stability, Stability::stable);
  EXPECT_EQ(eq[1].stability, Stability::unstable);
  EXPECT_EQ(eq[3].stability, Stability::unstable);
}

TEST(Classify, RickerPoints) {
  const auto m = MapModel::ricker(2.0);
  EXPECT_EQ(classify_equilibrium(m, v({std::log(2.0)})).stability, Stability::stable);
  const auto r0 = classify_equilibrium(m, v({0.0}));
  EXPECT_EQ(r0.stability, Stability::unstable);
  EXPECT_TRUE(r0.one_sided);
  EXPECT_NEAR(r0.spectral_radius, 2.0, 1e-5);
}

TEST(Classify, MarginalReportedNotCoerced) {
  const auto id = MapModel::user_defined(1, [](const Vec& x) { return x; }, kInf, AbsorbingKind::none);
  EXPECT_EQ(classify_equilibrium(id, v({0.5})).stability, Stability::marginal);
}

TEST(Classify, RpsBarycenterMatchesAnalyticJacobian) {
  const double c = 10.0;
  const Mat A = rps();
  const auto m = MapModel::replicator(A, c);
  const Vec x = Vec::Constant(3, 1.0 / 3);
  // Analytic ambient Jacobian of x_i((Ax)_i + c)/(x.Ax + c), reduced to the (x1, x2) chart.
  const Vec ax = A * x;
  const double D = x.dot(ax) + c;
  const Vec grad_D = ax + A.transpose() * x;
  Mat J(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      J(i, j) = ((i == j) * (ax[i] + c) + x[i] * A(i, j)) / D - x[i] * (ax[i] + c) * grad_D[j] / (D * D);
  Mat R(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) R(i, j) = J(i, j) - J(i, 2);
  const double rho = spectral_radius(R);
  const auto fd = fd_jacobian(m, x);
  EXPECT_LT((fd.J - R).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(rho, 1.0);
  EXPECT_NEAR(A.determinant(), 7.0, 1e-12);
  const auto st = classify_equilibrium(m, x);
  EXPECT_EQ(st.stability, Stability::stable);
  EXPECT_NEAR(st.spectral_radius, rho, 1e-8);
}

TEST(Periodic, RickerCases) {
  auto p1 = detect_periodic_orbit(MapModel::ricker(2.0), v({0.3}), 8, 500, 1e-9);
  ASSERT_TRUE(p1);
  EXPECT_EQ(p1->period, 1);
  EXPECT_NEAR(p1->points[0][0], std::log(2.0), 1e-9);

  auto p0 = detect_periodic_orbit(MapModel::ricker(0.5), v({1.0}), 8, 500, 1e-9);
  ASSERT_TRUE(p0);
  EXPECT_EQ(p0->period, 1);
  EXPECT_NEAR(p0->points[0][0], 0.0, 1e-12);
}

TEST(Periodic, RickerPeriodTwoAgainstCobweb) {
  const auto m = MapModel::ricker(std::exp(2.2));
  // Cobweb oracle: long scalar iteration, then compare x_t with x_{t+2} and x_{t+1}.
  double x = 1.0;
  for (int t = 0; t < 20000; ++t) x = std::exp(2.2) * x * std::exp(-x);
  const double x1 = std::exp(2.2) * x * std::exp(-x);
  const double x2 = std::exp(2.2) * x1 * std::exp(-x1);
  ASSERT_NEAR(x2, x, 1e-10);
  ASSERT_GT(std::abs(x1 - x), 0.1);
  auto p = detect_periodic_orbit(m, v({1.0}), 8, 2000, 1e-9);
  ASSERT_TRUE(p);
  EXPECT_EQ(p->period, 2);
  EXPECT_NEAR(std::min(p->points[0][0], p->points[1][0]), std::min(x, x1), 1e-8);
}

TEST(Periodic, NoneForChaos) {
  EXPECT_FALSE(detect_periodic_orbit(MapModel::ricker(std::exp(3.3)), v({1.0}), 8, 500, 1e-9));
}

// Invariants by sampling.
namespace {
std::vector<MapModel> orthant_models() {
  return {MapModel::ricker(2.0), MapModel::ricker(std::exp(2.2)),
          MapModel::spatial_ricker(3.0, (Mat(2, 2) << 0.7, 0.3, 0.4, 0.6).finished()), lg_coexist(),
          MapModel::leslie_gower(v({3, 2}), (Mat(2, 2) << 1, 0.5, 1.0, 1).finished()),
          MapModel::thompson({1.0, 1.0, 0.8, 0.5}), MapModel::thompson({0.5, 2.0, 0.1, 0.5})};
}
}  // namespace

TEST(Invariants, AbsorbingInvarianceOrthant) {
  RngStream r(17);
  for (const auto& m : orthant_models()) {
    for (int s = 0; s < 10000; ++s) {
      Vec x(m.dim());
      for (int i = 0; i < m.dim(); ++i) x[i] = 5.0 * r.uniform();
      if (m.absorbing_kind() == AbsorbingKind::origin) x.setZero();
      else x[static_cast<Eigen::Index>(r() % static_cast<std::uint64_t>(m.dim()))] = 0.0;
      const Vec y = m(x);
      ASSERT_TRUE(m.in_absorbing(y)) << m.name();
      if (m.absorbing_kind() == AbsorbingKind::boundary_of_orthant)
        for (int i = 0; i < m.dim(); ++i) {
          if (x[i] == 0.0) {
            ASSERT_EQ(y[i], 0.0);
          }
        }
    }
  }
}

TEST(Invariants, BoundednessOrthant) {
  RngStream r(18);
  for (const auto& m : orthant_models()) {
    const double bound = m.sup_bound();
    for (int s = 0; s < 10000; ++s) {
      Vec x(m.dim());
      for (int i = 0; i < m.dim(); ++i) x[i] = 20.0 * std::pow(r.uniform(), 3);
      ASSERT_LE(m(x).maxCoeff(), bound * (1 + 1e-12)) << m.name();
    }
  }
}

TEST(Invariants, ReplicatorSimplex) {
  RngStream r(19);
  const auto m = MapModel::replicator(rps(), 10.0);
  for (int s = 0; s < 10000; ++s) {
    Vec x(3);
    for (int i = 0; i < 3; ++i) x[i] = -std::log(r.uniform_open());
    x /= x.sum();
    if (s % 2 == 0) {
      x[static_cast<Eigen::Index>(r() % 3)] = 0.0;
      x /= x.sum();
    }
    const Vec y = m(x);
    ASSERT_LE(std::abs(y.sum() - 1.0), 1e-12);
    ASSERT_LE(y.maxCoeff(), m.sup_bound());
    if (m.in_absorbing(x)) {
      ASSERT_TRUE(m.in_absorbing(y));
    }
  }
}

TEST(Invariants, FiniteDifferenceMatchesRickerDerivative) {
  const double f0 = 2.0;
  const auto m = MapModel::ricker(f0);
  RngStream r(20);
  for (int s = 0; s < 100; ++s) {
    const double x = 0.01 + 4.0 * r.uniform();
    const double exact = f0 * std::exp(-x) * (1 - x);
    EXPECT_NEAR(fd_jacobian(m, v({x})).J(0, 0), exact, 1e-6);
  }
}

TEST(Invariants, EquilibriaResidualOnReevaluation) {
  for (const auto& m : orthant_models()) {
    Vec hi = Vec::Constant(m.dim(), m.sup_bound() + 1.0);
    for (const auto& e : find_equilibria(m, Box{Vec::Zero(m.dim()), hi}, 9, 1e-10))
      EXPECT_LE(sup_distance(m(e.point), e.point), 1e-10) << m.name();
  }
}
