#include "fbridge/numerics.hpp"

#include <cmath>
#include <sstream>

namespace fbridge {

Vector solve_linear(const DenseMatrix& a, const Vector& b, double pivot_tol) {
  if (a.rows() != a.cols()) {
    throw std::invalid_argument("solve_linear: matrix is not square");
  }
  if (a.rows() != b.size()) {
    throw std::invalid_argument("solve_linear: dimension mismatch");
  }
  if (a.rows() == 0) return Vector{};

  const double scale = a.cwiseAbs().maxCoeff();
  Eigen::PartialPivLU<DenseMatrix> lu(a);
  const DenseMatrix& packed = lu.matrixLU();
  for (Eigen::Index i = 0; i < packed.rows(); ++i) {
    if (!(std::abs(packed(i, i)) >= pivot_tol * scale) || scale == 0.0) {
      std::ostringstream msg;
      msg << "solve_linear: pivot " << i << " has magnitude " << std::abs(packed(i, i))
          << " below threshold " << pivot_tol * scale;
      throw SingularMatrix(msg.str());
    }
  }
  return lu.solve(b);
}

namespace {

bool try_llt(const DenseMatrix& m, DenseMatrix& lower) {
  Eigen::LLT<DenseMatrix> llt(m);
  if (llt.info() != Eigen::Success) return false;
  lower = llt.matrixL();
  return lower.allFinite();
}

}  // namespace

CholeskyFactor cholesky(const DenseMatrix& m, double max_jitter_rel) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument("cholesky: matrix is not square");
  }
  CholeskyFactor out;
  const Eigen::Index n = m.rows();
  if (n == 0) return out;
  if (m.cwiseAbs().maxCoeff() == 0.0) {
    out.lower = DenseMatrix::Zero(n, n);
    return out;
  }
  if (try_llt(m, out.lower)) return out;

  const double trace = m.trace();
  if (!(trace > 0.0)) {
    throw NotPositiveDefinite("cholesky: non-positive trace");
  }
  const double max_jitter = max_jitter_rel * trace;
  for (double jitter = 1e-15 * trace; jitter <= max_jitter * (1.0 + 1e-12); jitter *= 10.0) {
    DenseMatrix shifted = m;
    shifted.diagonal().array() += jitter;
    if (try_llt(shifted, out.lower)) {
      out.jitter = jitter;
      return out;
    }
  }
  throw NotPositiveDefinite("cholesky: factorization failed with maximal jitter");
}

Vector sample_gaussian(const Vector& mean, const DenseMatrix& cov, RngStream& rng) {
  if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
    throw std::invalid_argument("sample_gaussian: dimension mismatch");
  }
  return sample_gaussian_factored(mean, cholesky(cov).lower, rng);
}

Vector sample_gaussian_factored(const Vector& mean, const DenseMatrix& lower, RngStream& rng) {
  Vector xi(mean.size());
  for (Eigen::Index i = 0; i < xi.size(); ++i) xi[i] = rng.normal();
  return mean + lower.triangularView<Eigen::Lower>() * xi;
}

double inf_norm(const DenseMatrix& m) {
  if (m.size() == 0) return 0.0;
  return m.cwiseAbs().rowwise().sum().maxCoeff();
}

}  // namespace fbridge
