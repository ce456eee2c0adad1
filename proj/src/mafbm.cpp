#include "fbridge/mafbm.hpp"

#include <cmath>
#include <sstream>

#include <boost/math/special_functions/gamma.hpp>

namespace fbridge {

void ProcessConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw InvalidConfig("process." + field + ": " + why);
  };
  if (!(hurst > 0.0 && hurst < 1.0)) fail("hurst", "must lie in (0, 1)");
  if (num_ou < 1) fail("num_ou", "must be at least 1");
  if (!(grid_ratio > 1.0) || !std::isfinite(grid_ratio)) fail("grid_ratio", "must be > 1");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) fail("epsilon", "must be > 0");
  if (!(horizon >= 0.0) || !std::isfinite(horizon)) fail("horizon", "must be >= 0");
}

std::vector<double> build_grid(int num_ou, double ratio) {
  if (num_ou < 1) throw InvalidConfig("build_grid: K must be at least 1");
  if (!(ratio > 1.0)) throw InvalidConfig("build_grid: r must be > 1");
  const double center = 0.5 * (num_ou + 1);
  std::vector<double> gamma(static_cast<std::size_t>(num_ou));
  for (int k = 1; k <= num_ou; ++k) {
    gamma[static_cast<std::size_t>(k - 1)] = std::pow(ratio, k - center);
  }
  return gamma;
}

DenseMatrix gram_matrix(std::span<const double> gamma, double horizon) {
  const auto n = static_cast<Eigen::Index>(gamma.size());
  DenseMatrix a(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index l = 0; l < n; ++l) {
      const double g = gamma[static_cast<std::size_t>(k)] + gamma[static_cast<std::size_t>(l)];
      // T/g - (1 - e^{-gT})/g^2, written to avoid the leading cancellation.
      a(k, l) = (g * horizon + std::expm1(-g * horizon)) / (g * g);
    }
  }
  return a;
}

Vector cross_vector(std::span<const double> gamma, double hurst, double horizon, double tol) {
  const auto n = static_cast<Eigen::Index>(gamma.size());
  Vector b = Vector::Zero(n);
  if (horizon == 0.0) return b;
  const double power = hurst - 0.5;
  const double norm = std::tgamma(hurst + 0.5);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double g = gamma[static_cast<std::size_t>(k)];
    // int_0^T int_0^t u^{H-1/2} e^{-g u} du dt = int_0^T u^{H-1/2} e^{-g u} (T - u) du
    auto integrand = [&](double u) { return std::pow(u, power) * std::exp(-g * u) * (horizon - u); };
    b[k] = quadrature(integrand, 0.0, horizon, tol * norm) / norm;
  }
  return b;
}

Coefficients optimal_coefficients(const ProcessConfig& config) {
  config.validate();
  Coefficients out;
  out.gamma = build_grid(config.num_ou, config.grid_ratio);
  const DenseMatrix a = gram_matrix(out.gamma, config.horizon);
  const Vector b = cross_vector(out.gamma, config.hurst, config.horizon);
  const Vector omega = solve_linear(a, b);
  out.omega.assign(omega.data(), omega.data() + omega.size());
  out.residual = (a * omega - b).cwiseAbs().maxCoeff();
  return out;
}

BridgeKernel::BridgeKernel(const ProcessConfig& config) : config_(config) {
  ProcessConfig unit = config;
  unit.horizon = 1.0;
  Coefficients coeffs = optimal_coefficients(unit);
  gamma_ = std::move(coeffs.gamma);
  omega_ = std::move(coeffs.omega);
  residual_ = coeffs.residual;
  finish_init();
}

BridgeKernel::BridgeKernel(const ProcessConfig& config, std::vector<double> gamma,
                           std::vector<double> omega)
    : config_(config), gamma_(std::move(gamma)), omega_(std::move(omega)) {
  if (gamma_.empty() || gamma_.size() != omega_.size()) {
    throw InvalidConfig("BridgeKernel: gamma and omega must be nonempty and equally long");
  }
  for (double g : gamma_) {
    if (!(g > 0.0)) throw InvalidConfig("BridgeKernel: gamma must be positive");
  }
  config_.num_ou = static_cast<int>(gamma_.size());
  finish_init();
}

void BridgeKernel::finish_init() {
  if (!(config_.epsilon > 0.0)) throw InvalidConfig("process.epsilon: must be > 0");
  sqrt_eps_ = std::sqrt(config_.epsilon);
  omega_sum_ = 0.0;
  for (double w : omega_) omega_sum_ += w;
}

double BridgeKernel::zeta(int k, double t, double u) const {
  return sqrt_eps_ * std::expm1(-gamma_[static_cast<std::size_t>(k)] * (u - t));
}

double BridgeKernel::terminal_variance(double t) const {
  const double remaining = 1.0 - t;
  double sum = 0.0;
  const int n = num_ou();
  for (int k = 0; k < n; ++k) {
    for (int l = 0; l < n; ++l) {
      const double g = gamma_[static_cast<std::size_t>(k)] + gamma_[static_cast<std::size_t>(l)];
      sum += omega_[static_cast<std::size_t>(k)] * omega_[static_cast<std::size_t>(l)] *
             (-std::expm1(-remaining * g)) / g;
    }
  }
  return config_.epsilon * sum;
}

double BridgeKernel::terminal_mean(std::span<const double> block, double t) const {
  double mean = block[0];
  for (int k = 0; k < num_ou(); ++k) {
    mean += omega_[static_cast<std::size_t>(k)] * block[static_cast<std::size_t>(k + 1)] * zeta(k, t, 1.0);
  }
  return mean;
}

std::vector<double> BridgeKernel::score_direction(double t) const {
  std::vector<double> a(static_cast<std::size_t>(block_size()));
  a[0] = 1.0;
  for (int k = 0; k < num_ou(); ++k) {
    a[static_cast<std::size_t>(k + 1)] = omega_[static_cast<std::size_t>(k)] * zeta(k, t, 1.0);
  }
  return a;
}

double BridgeKernel::score_gain(double t) const {
  double sum = 0.0;
  for (int k = 0; k < num_ou(); ++k) {
    sum += omega_[static_cast<std::size_t>(k)] * std::exp(-gamma_[static_cast<std::size_t>(k)] * (1.0 - t));
  }
  return sqrt_eps_ * sum;
}

double BridgeKernel::ou_covariance(int i, int j, double a, double b, double s) const {
  const double m = std::min(a, b);
  if (m <= s) return 0.0;
  const double gi = gamma_[static_cast<std::size_t>(i)];
  const double gj = gamma_[static_cast<std::size_t>(j)];
  const double g = gi + gj;
  return std::exp(-gi * (a - m) - gj * (b - m)) * (-std::expm1(-g * (m - s))) / g;
}

DenseMatrix BridgeKernel::ou_marginal_covariance(double t) const {
  const int n = num_ou();
  DenseMatrix lambda(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) lambda(i, j) = ou_covariance(i, j, t, t);
  }
  return lambda;
}

DenseMatrix BridgeKernel::drift_block() const {
  const int n = num_ou();
  DenseMatrix f = DenseMatrix::Zero(n + 1, n + 1);
  for (int k = 0; k < n; ++k) {
    const double g = gamma_[static_cast<std::size_t>(k)];
    f(0, k + 1) = -sqrt_eps_ * omega_[static_cast<std::size_t>(k)] * g;
    f(k + 1, k + 1) = -g;
  }
  return f;
}

Vector BridgeKernel::diffusion_block() const {
  Vector g = Vector::Ones(block_size());
  g[0] = sqrt_eps_ * omega_sum_;
  return g;
}

TerminalMoments conditional_moments(const BridgeKernel& kernel, const AugmentedState& z, double t) {
  if (z.num_ou() != kernel.num_ou()) {
    throw std::invalid_argument("conditional_moments: state has the wrong number of OU components");
  }
  TerminalMoments out;
  out.mean.resize(static_cast<std::size_t>(z.dim()));
  for (int i = 0; i < z.dim(); ++i) out.mean[static_cast<std::size_t>(i)] = kernel.terminal_mean(z.block(i), t);
  out.variance = kernel.terminal_variance(t);
  return out;
}

DriftMatrices drift_matrices(const BridgeKernel& kernel, int dim) {
  const int b = kernel.block_size();
  const DenseMatrix f = kernel.drift_block();
  const Vector g = kernel.diffusion_block();
  DriftMatrices out;
  out.drift = DenseMatrix::Zero(dim * b, dim * b);
  out.diffusion = DenseMatrix::Zero(dim * b, dim);
  for (int i = 0; i < dim; ++i) {
    out.drift.block(i * b, i * b, b, b) = f;
    out.diffusion.block(i * b, i, b, 1) = g;
  }
  return out;
}

L2Moments sample_l2_moments(double hurst, std::span<const double> gamma, double horizon,
                            int n_paths, int n_times, std::uint64_t seed) {
  const int n = static_cast<int>(gamma.size());
  const double a = hurst + 0.5;
  const double gamma_a = std::tgamma(a);
  L2Moments out;
  out.by = Vector::Zero(n);
  out.yy = DenseMatrix::Zero(n, n);
  out.horizon = horizon;

  DenseMatrix cov(n + 1, n + 1);
  Vector sample(n + 1), xi(n + 1);
  for (int ti = 0; ti < n_times; ++ti) {
    const double t = (ti + 0.5) * horizon / n_times;
    cov(0, 0) = std::pow(t, 2.0 * hurst) / (2.0 * hurst * gamma_a * gamma_a);
    for (int k = 0; k < n; ++k) {
      const double gk = gamma[static_cast<std::size_t>(k)];
      // (1/Gamma(a)) int_0^t u^{a-1} e^{-g u} du = g^{-a} P(a, g t)
      cov(0, k + 1) = cov(k + 1, 0) = std::pow(gk, -a) * boost::math::gamma_p(a, gk * t);
      for (int l = 0; l < n; ++l) {
        const double g = gk + gamma[static_cast<std::size_t>(l)];
        cov(k + 1, l + 1) = -std::expm1(-g * t) / g;
      }
    }
    const DenseMatrix lower = cholesky(cov).lower;
    RngStream rng = make_stream(seed, StreamPurpose::oracle, static_cast<std::uint64_t>(ti));
    for (int p = 0; p < n_paths; ++p) {
      for (int j = 0; j <= n; ++j) xi[j] = rng.normal();
      sample.noalias() = lower.triangularView<Eigen::Lower>() * xi;
      out.bb += sample[0] * sample[0];
      out.by += sample[0] * sample.tail(n);
      out.yy.noalias() += sample.tail(n) * sample.tail(n).transpose();
    }
  }
  const double scale = 1.0 / (static_cast<double>(n_paths) * n_times);
  out.bb *= scale;
  out.by *= scale;
  out.yy *= scale;
  return out;
}

double l2_error(const L2Moments& m, const Vector& omega) {
  return m.horizon * (m.bb - 2.0 * omega.dot(m.by) + omega.dot(m.yy * omega));
}

}  // namespace fbridge
