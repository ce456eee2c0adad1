#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fbridge/numerics.hpp"
#include "fbridge/state.hpp"

namespace fbridge {

class InvalidConfig : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Parameters of the Markov-approximate fBM reference process
/// X = sqrt(epsilon) * sum_k omega_k Y^k.
struct ProcessConfig {
  double hurst = 0.5;
  int num_ou = 5;
  double grid_ratio = 2.0;
  double epsilon = 1.0;
  double horizon = 1.0;

  /// Throws InvalidConfig naming the first offending field.
  void validate() const;
};

/// Geometric mean-reversion grid gamma_k = r^(k - (K+1)/2), k = 1..K.
std::vector<double> build_grid(int num_ou, double ratio);

/// A_kl = int_0^T Cov(Y^k_t, Y^l_t) dt in closed form.
DenseMatrix gram_matrix(std::span<const double> gamma, double horizon);

/// b_k = int_0^T Cov(B^H_t, Y^k_t) dt for Type II fBM, by quadrature.
Vector cross_vector(std::span<const double> gamma, double hurst, double horizon,
                    double tol = NumericsTolerances{}.quadrature_tol);

struct Coefficients {
  std::vector<double> gamma;
  std::vector<double> omega;
  double residual = 0.0;  // ||A omega - b||_inf
};

/// L2(P)-optimal weights: solves A omega = b.
Coefficients optimal_coefficients(const ProcessConfig& config);

/// Immutable bridge kernel: grid, weights and closed-form evaluators of the
/// conditional law of X_1 given Z_t. All members are pure and thread-safe.
class BridgeKernel {
 public:
  explicit BridgeKernel(const ProcessConfig& config);
  /// Kernel with explicit grid and weights (bypasses the optimal solve).
  BridgeKernel(const ProcessConfig& config, std::vector<double> gamma, std::vector<double> omega);

  const ProcessConfig& config() const { return config_; }
  int num_ou() const { return static_cast<int>(gamma_.size()); }
  int block_size() const { return num_ou() + 1; }
  std::span<const double> gamma() const { return gamma_; }
  std::span<const double> omega() const { return omega_; }
  double residual() const { return residual_; }
  double sqrt_epsilon() const { return sqrt_eps_; }
  double epsilon() const { return config_.epsilon; }
  double omega_sum() const { return omega_sum_; }

  /// zeta_k(t, u) = sqrt(eps) (exp(-gamma_k (u - t)) - 1), for t <= u.
  double zeta(int k, double t, double u) const;

  /// sigma^2_{1|t}: variance of X_1 given Z_t.
  double terminal_variance(double t) const;

  /// mu_{1|t} for one dimension block (x, y_1..y_K).
  double terminal_mean(std::span<const double> block, double t) const;

  /// [1, omega_1 zeta_1(t,1), ..., omega_K zeta_K(t,1)].
  std::vector<double> score_direction(double t) const;

  /// G^T [1, omega_k zeta_k(t,1)] = sqrt(eps) sum_k omega_k exp(-gamma_k (1 - t)).
  double score_gain(double t) const;

  /// Cov(Y^i_a, Y^j_b | Z_s) = int_s^{min(a,b)} e^{-gamma_i (a-u)} e^{-gamma_j (b-u)} du.
  double ou_covariance(int i, int j, double a, double b, double s = 0.0) const;

  /// Lambda(t): covariance of (Y^1_t, ..., Y^K_t) started from zero.
  DenseMatrix ou_marginal_covariance(double t) const;

  /// Per-block drift matrix F ((K+1) x (K+1)).
  DenseMatrix drift_block() const;
  /// Per-block diffusion vector G (K+1).
  Vector diffusion_block() const;

 private:
  void finish_init();

  ProcessConfig config_;
  std::vector<double> gamma_;
  std::vector<double> omega_;
  double residual_ = 0.0;
  double sqrt_eps_ = 1.0;
  double omega_sum_ = 0.0;
};

struct TerminalMoments {
  std::vector<double> mean;  // mu_{1|t}, one per data dimension
  double variance = 0.0;     // sigma^2_{1|t}, shared by all dimensions
};

TerminalMoments conditional_moments(const BridgeKernel& kernel, const AugmentedState& z, double t);

/// Block-diagonal drift matrix and diffusion matrix of dZ = F Z dt + G dB for
/// d data dimensions; column i of `diffusion` is the loading of the i-th
/// independent Brownian driver.
struct DriftMatrices {
  DenseMatrix drift;
  DenseMatrix diffusion;
};

DriftMatrices drift_matrices(const BridgeKernel& kernel, int dim);

/// Monte-Carlo second moments for the L2 approximation error
/// E(omega) = int_0^T E[(B^H_t - sum_k omega_k Y^k_t)^2] dt.
///
/// At each midpoint time t_i = (i + 1/2) T / n_times the vector
/// (B^H_t, Y^1_t, ..., Y^K_t) is drawn from its exact joint Gaussian law,
/// whose cross-covariances come from the regularized incomplete gamma
/// function (not from quadrature), and the moments are averaged over paths
/// and times. Evaluating `l2_error` on the same moments for several omega
/// uses common random numbers.
struct L2Moments {
  double bb = 0.0;
  Vector by;
  DenseMatrix yy;
  double horizon = 1.0;
};

L2Moments sample_l2_moments(double hurst, std::span<const double> gamma, double horizon,
                            int n_paths, int n_times, std::uint64_t seed);

double l2_error(const L2Moments& moments, const Vector& omega);

}  // namespace fbridge
