#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace qsdlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Counts = std::vector<std::int64_t>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Error taxonomy. Everything thrown by the library derives from Error.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input outside a declared domain (off-simplex, negative density, off-lattice).
struct DomainError : Error {
  using Error::Error;
};

// Trajectory produced a non-finite value.
struct DivergenceError : Error {
  DivergenceError(const std::string& what, std::size_t step_) : Error(what), step(step_) {}
  std::size_t step;
};

// Iterative solver hit its iteration cap. Carries the last iterate.
struct NonConvergenceError : Error {
  NonConvergenceError(const std::string& what, std::vector<double> last_, double residual_,
                      std::size_t iterations_)
      : Error(what), last(std::move(last_)), residual(residual_), iterations(iterations_) {}
  std::vector<double> last;
  double residual;
  std::size_t iterations;
};

// A configured size or memory limit would be exceeded.
struct BudgetError : Error {
  using Error::Error;
};

// Monte Carlo estimator has nothing to estimate from (e.g. no survivors).
struct EstimationError : Error {
  using Error::Error;
};

inline double sup_norm(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

inline double sup_distance(const Vec& a, const Vec& b) { return sup_norm(a - b); }

inline Vec to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

inline Vec counts_to_density(const Counts& n, double epsilon) {
  Vec x(static_cast<Eigen::Index>(n.size()));
  for (std::size_t i = 0; i < n.size(); ++i) x[static_cast<Eigen::Index>(i)] = epsilon * static_cast<double>(n[i]);
  return x;
}

// Nearest integer counts for a density; throws if x/epsilon is not integral within tol.
inline Counts density_to_counts(const Vec& x, double epsilon, double tol = 1e-9) {
  Counts n(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double c = x[i] / epsilon;
    const double r = std::round(c);
    if (!(std::abs(c - r) <= tol * std::max(1.0, std::abs(c))) || r < 0)
      throw DomainError("density is not on the lattice: component " + std::to_string(i) + " = " +
                        std::to_string(x[i]));
    n[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(r);
  }
  return n;
}

}  // namespace qsdlab
