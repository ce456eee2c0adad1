#pragma once

#include <functional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "fbridge/rng.hpp"

namespace fbridge {

// Row/column storage is Eigen's default; "row-major entries" in the interface
// docs refer to how matrices are serialized, not how they are laid out.
using DenseMatrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularMatrix : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NotPositiveDefinite : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NoConvergence : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Default tolerances for the numerical primitives. Every value can be
/// overridden per call.
struct NumericsTolerances {
  double singular_pivot = 1e-14;  // relative to max|A|
  double max_jitter = 1e-9;       // relative to trace(M)
  double quadrature_tol = 1e-10;  // absolute
  int quadrature_max_depth = 60;
};

/// Solves A x = b by LU with partial pivoting. Throws SingularMatrix when a
/// pivot falls below `pivot_tol * max|A|`.
Vector solve_linear(const DenseMatrix& a, const Vector& b,
                    double pivot_tol = NumericsTolerances{}.singular_pivot);

struct CholeskyFactor {
  DenseMatrix lower;
  double jitter = 0.0;  // absolute amount added to the diagonal
};

/// Lower Cholesky factor of a symmetric positive semi-definite matrix.
///
/// A plain factorization is attempted first. If it fails, a diagonal jitter
/// is added, starting at 1e-15 * trace and growing by 10x up to
/// `max_jitter_rel * trace`. The zero matrix factors to the zero matrix.
CholeskyFactor cholesky(const DenseMatrix& m,
                        double max_jitter_rel = NumericsTolerances{}.max_jitter);

/// Draw from N(mean, cov): mean + L * xi with L = cholesky(cov).lower.
Vector sample_gaussian(const Vector& mean, const DenseMatrix& cov, RngStream& rng);
/// Same draw with a precomputed lower factor.
Vector sample_gaussian_factored(const Vector& mean, const DenseMatrix& lower, RngStream& rng);

/// Infinity norm (max absolute row sum).
double inf_norm(const DenseMatrix& m);

/// Globally adaptive Gauss-Kronrod (7/15) quadrature of f over [a, b].
///
/// The interval with the largest error estimate is bisected until the summed
/// error estimate drops below `tol`. Integrable power-law singularities at an
/// endpoint are handled by repeated subdivision towards it; the integrand is
/// never evaluated at the endpoints. Throws NoConvergence when an interval
/// would need to be split beyond `max_depth` levels.
double quadrature(const std::function<double(double)>& f, double a, double b,
                  double tol = NumericsTolerances{}.quadrature_tol,
                  int max_depth = NumericsTolerances{}.quadrature_max_depth);

}  // namespace fbridge
