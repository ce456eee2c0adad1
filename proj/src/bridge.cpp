#include "fbridge/bridge.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fbridge {

TimeCoefficients::TimeCoefficients(const BridgeKernel& kernel, double t)
    : time(t), variance(kernel.terminal_variance(t)), gain(kernel.score_gain(t)) {
  omega_zeta.resize(static_cast<std::size_t>(kernel.num_ou()));
  for (int k = 0; k < kernel.num_ou(); ++k) {
    omega_zeta[static_cast<std::size_t>(k)] = kernel.omega()[static_cast<std::size_t>(k)] * kernel.zeta(k, t, 1.0);
  }
}

namespace {

// Drift of one block given the conditioning coefficients; writes into out.
void block_drift(const BridgeKernel& kernel, const TimeCoefficients& c, std::span<const double> z,
                 double x1, std::span<double> out) {
  const int n = kernel.num_ou();
  const auto gamma = kernel.gamma();
  const auto omega = kernel.omega();
  double mu = z[0];
  double fx = 0.0;
  for (int k = 0; k < n; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    mu += c.omega_zeta[ku] * z[ku + 1];
    fx -= omega[ku] * gamma[ku] * z[ku + 1];
  }
  // G^T u = gain * (x1 - mu) / sigma^2; the drift adds G times that scalar.
  const double push = c.gain * (x1 - mu) / c.variance;
  out[0] = kernel.sqrt_epsilon() * fx + kernel.sqrt_epsilon() * kernel.omega_sum() * push;
  for (int k = 0; k < n; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    out[ku + 1] = -gamma[ku] * z[ku + 1] + push;
  }
}

double effective_clamp(const EmOptions& options) {
  const double dt = 1.0 / options.n_steps;
  return std::min(options.time_clamp, dt);
}

void check_em_options(const EmOptions& options) {
  if (options.n_steps < 10) throw std::invalid_argument("EM simulation needs n_steps >= 10");
  if (!(options.time_clamp > 0.0 && options.time_clamp <= 0.1)) {
    throw std::invalid_argument("time_clamp must lie in (0, 0.1]");
  }
  if (options.record_every < 1) throw std::invalid_argument("record_every must be >= 1");
}

std::vector<TimeCoefficients> step_coefficients(const BridgeKernel& kernel, const EmOptions& options) {
  const double dt = 1.0 / options.n_steps;
  const double t_max = 1.0 - effective_clamp(options);
  std::vector<TimeCoefficients> out;
  out.reserve(static_cast<std::size_t>(options.n_steps));
  for (int i = 0; i < options.n_steps; ++i) out.emplace_back(kernel, std::min(i * dt, t_max));
  return out;
}

void check_pair(std::span<const double> x0, std::span<const double> x1) {
  if (x0.size() != x1.size() || x0.empty()) {
    throw std::invalid_argument("x0 and x1 must be nonempty and of equal dimension");
  }
}

template <class Body>
void for_each_index(std::size_t count, Execution execution, Body&& body) {
  const auto n = static_cast<std::ptrdiff_t>(count);
  if (execution == Execution::parallel) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t p = 0; p < n; ++p) body(static_cast<std::size_t>(p));
  } else {
    for (std::ptrdiff_t p = 0; p < n; ++p) body(static_cast<std::size_t>(p));
  }
}

}  // namespace

std::vector<double> pinned_drift(const BridgeKernel& kernel, double t, const AugmentedState& z,
                                 std::span<const double> x1, double time_clamp) {
  if (1.0 - t < time_clamp) {
    std::ostringstream msg;
    msg << "pinned_drift: t = " << t << " is within " << time_clamp << " of 1";
    throw TimeTooCloseToOne(msg.str());
  }
  if (z.num_ou() != kernel.num_ou() || static_cast<std::size_t>(z.dim()) != x1.size()) {
    throw std::invalid_argument("pinned_drift: state and endpoint dimensions disagree");
  }
  const TimeCoefficients c(kernel, t);
  std::vector<double> out(z.data().size());
  const auto b = static_cast<std::size_t>(kernel.block_size());
  for (int i = 0; i < z.dim(); ++i) {
    block_drift(kernel, c, z.block(i), x1[static_cast<std::size_t>(i)],
                std::span<double>(out.data() + i * b, b));
  }
  return out;
}

JointCovariance joint_covariance(const BridgeKernel& kernel, double s, double t) {
  if (!(0.0 <= s && s <= t && t <= 1.0)) {
    throw std::invalid_argument("joint_covariance: need 0 <= s <= t <= 1");
  }
  const int n = kernel.num_ou();
  const auto omega = kernel.omega();
  const double se = kernel.sqrt_epsilon();
  JointCovariance out;
  out.sigma_ts = DenseMatrix::Zero(n + 1, n + 1);
  out.sigma12 = Vector::Zero(n + 1);

  DenseMatrix ctt(n, n), ct1(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      ctt(i, j) = kernel.ou_covariance(i, j, t, t, s);
      ct1(i, j) = kernel.ou_covariance(i, j, t, 1.0, s);
    }
  }
  const Vector w = Eigen::Map<const Vector>(omega.data(), n);
  out.sigma_ts.bottomRightCorner(n, n) = ctt;
  const Vector cross_t = se * (ctt * w);
  out.sigma_ts.block(1, 0, n, 1) = cross_t;
  out.sigma_ts.block(0, 1, 1, n) = cross_t.transpose();
  out.sigma_ts(0, 0) = kernel.epsilon() * w.dot(ctt * w);

  out.sigma12.tail(n) = se * (ct1 * w);
  out.sigma12[0] = kernel.epsilon() * w.dot(ct1 * w);
  out.sigma2_1s = kernel.terminal_variance(s);
  return out;
}

PinnedMarginal::PinnedMarginal(const BridgeKernel& kernel, double t) : kernel_(&kernel), time_(t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("PinnedMarginal: t must lie in [0, 1]");
  const int n = kernel.num_ou();
  const JointCovariance jc = joint_covariance(kernel, 0.0, t);
  gain_ = jc.sigma12 / jc.sigma2_1s;
  covariance_ = jc.sigma_ts - jc.sigma12 * jc.sigma12.transpose() / jc.sigma2_1s;
  covariance_ = 0.5 * (covariance_ + covariance_.transpose());
  ou_covariance_ = covariance_.bottomRightCorner(n, n);
  const CholeskyFactor f = cholesky(ou_covariance_);
  ou_factor_ = f.lower;
  jitter_ = f.jitter;
}

Vector PinnedMarginal::mean_block(double x0, double x1) const {
  Vector m = gain_ * (x1 - x0);
  m[0] += x0;
  return m;
}

void PinnedMarginal::sample_into(std::span<const double> x0, std::span<const double> x1, RngStream& rng,
                                 AugmentedState& out) const {
  check_pair(x0, x1);
  const int n = kernel_->num_ou();
  const int dim = static_cast<int>(x0.size());
  if (out.dim() != dim || out.num_ou() != n) out = AugmentedState(dim, n);
  const auto omega = kernel_->omega();
  const double se = kernel_->sqrt_epsilon();
  double xi[64];
  std::vector<double> xi_heap;
  double* noise = xi;
  if (n > 64) {
    xi_heap.resize(static_cast<std::size_t>(n));
    noise = xi_heap.data();
  }
  for (int i = 0; i < dim; ++i) {
    const double delta = x1[static_cast<std::size_t>(i)] - x0[static_cast<std::size_t>(i)];
    for (int k = 0; k < n; ++k) noise[k] = rng.normal();
    double x = x0[static_cast<std::size_t>(i)];
    for (int k = 0; k < n; ++k) {
      double y = gain_[k + 1] * delta;
      for (int l = 0; l <= k; ++l) y += ou_factor_(k, l) * noise[l];
      out.y(i, k) = y;
      x += se * omega[static_cast<std::size_t>(k)] * y;
    }
    out.x(i) = x;
  }
}

AugmentedState PinnedMarginal::sample(std::span<const double> x0, std::span<const double> x1,
                                      RngStream& rng) const {
  AugmentedState z;
  sample_into(x0, x1, rng, z);
  return z;
}

AugmentedState sample_pinned_marginal(const BridgeKernel& kernel, std::span<const double> x0,
                                      std::span<const double> x1, double t, RngStream& rng) {
  return PinnedMarginal(kernel, t).sample(x0, x1, rng);
}

void pinned_em_step(const BridgeKernel& kernel, const TimeCoefficients& coeffs, double x1, double dt,
                    double dw, std::span<double> block) {
  double drift[65];
  std::vector<double> heap;
  std::span<double> d;
  const auto b = static_cast<std::size_t>(kernel.block_size());
  if (b <= 65) {
    d = std::span<double>(drift, b);
  } else {
    heap.resize(b);
    d = heap;
  }
  block_drift(kernel, coeffs, block, x1, d);
  block[0] += d[0] * dt + kernel.sqrt_epsilon() * kernel.omega_sum() * dw;
  for (std::size_t k = 1; k < b; ++k) block[k] += d[k] * dt + dw;
}

Trajectory simulate_pinned_em(const BridgeKernel& kernel, std::span<const double> x0,
                              std::span<const double> x1, const EmOptions& options, RngStream& rng) {
  check_em_options(options);
  check_pair(x0, x1);
  const auto coeffs = step_coefficients(kernel, options);
  const double dt = 1.0 / options.n_steps;
  const double sdt = std::sqrt(dt);
  const int dim = static_cast<int>(x0.size());

  Trajectory traj;
  AugmentedState z = AugmentedState::initial(x0, kernel.num_ou());
  traj.times.push_back(0.0);
  traj.states.push_back(z);
  for (int step = 0; step < options.n_steps; ++step) {
    for (int i = 0; i < dim; ++i) {
      pinned_em_step(kernel, coeffs[static_cast<std::size_t>(step)], x1[static_cast<std::size_t>(i)], dt,
                     sdt * rng.normal(), z.block(i));
    }
    const int done = step + 1;
    if (done % options.record_every == 0 || done == options.n_steps) {
      traj.times.push_back(done == options.n_steps ? 1.0 : done * dt);
      traj.states.push_back(z);
    }
  }
  return traj;
}

std::vector<double> brownian_bridge_marginal(double epsilon, std::span<const double> x0,
                                             std::span<const double> x1, double t, RngStream& rng) {
  check_pair(x0, x1);
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("brownian_bridge_marginal: t must lie in [0, 1]");
  const double sd = std::sqrt(epsilon * t * (1.0 - t));
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double noise = rng.normal();
    out[i] = x0[i] + t * (x1[i] - x0[i]) + sd * noise;
  }
  return out;
}

PathBatch simulate_pinned_em_batch(const BridgeKernel& kernel, std::span<const double> x0,
                                   std::span<const double> x1, int dim, const EmOptions& options,
                                   std::span<const int> snapshot_steps, std::uint64_t seed,
                                   Execution execution) {
  check_em_options(options);
  if (dim < 1 || x0.size() != x1.size() || x0.size() % static_cast<std::size_t>(dim) != 0) {
    throw std::invalid_argument("simulate_pinned_em_batch: endpoint arrays do not match dim");
  }
  for (int s : snapshot_steps) {
    if (s < 0 || s > options.n_steps) throw std::invalid_argument("snapshot step out of range");
  }
  const auto coeffs = step_coefficients(kernel, options);
  const double dt = 1.0 / options.n_steps;
  const double sdt = std::sqrt(dt);
  const auto b = static_cast<std::size_t>(kernel.block_size());
  const auto d = static_cast<std::size_t>(dim);

  PathBatch out;
  out.dim = dim;
  out.block = kernel.block_size();
  out.count = x0.size() / d;
  out.snapshot_steps.assign(snapshot_steps.begin(), snapshot_steps.end());
  for (int s : snapshot_steps) out.snapshot_times.push_back(s * dt);
  out.snapshots.assign(snapshot_steps.size(), std::vector<double>(out.count * d * b));
  out.quadratic_variation.assign(out.count, 0.0);
  out.terminal.assign(out.count * d, 0.0);

  for_each_index(out.count, execution, [&](std::size_t p) {
    RngStream rng = make_stream(seed, StreamPurpose::sampling, p);
    AugmentedState z = AugmentedState::initial(x0.subspan(p * d, d), kernel.num_ou());
    double qv = 0.0;
    auto record = [&](int step) {
      for (std::size_t s = 0; s < out.snapshot_steps.size(); ++s) {
        if (out.snapshot_steps[s] != step) continue;
        std::copy(z.data().begin(), z.data().end(), out.snapshots[s].begin() + static_cast<std::ptrdiff_t>(p * d * b));
      }
    };
    record(0);
    for (int step = 0; step < options.n_steps; ++step) {
      for (std::size_t i = 0; i < d; ++i) {
        const double before = z.x(static_cast<int>(i));
        pinned_em_step(kernel, coeffs[static_cast<std::size_t>(step)], x1[p * d + i], dt, sdt * rng.normal(),
                       z.block(static_cast<int>(i)));
        const double inc = z.x(static_cast<int>(i)) - before;
        qv += inc * inc;
      }
      record(step + 1);
    }
    out.quadratic_variation[p] = qv;
    for (std::size_t i = 0; i < d; ++i) out.terminal[p * d + i] = z.x(static_cast<int>(i));
  });
  return out;
}

std::vector<double> sample_pinned_marginal_batch(const BridgeKernel& kernel, std::span<const double> x0,
                                                 std::span<const double> x1, int dim, double t,
                                                 std::uint64_t seed, Execution execution) {
  if (dim < 1 || x0.size() != x1.size() || x0.size() % static_cast<std::size_t>(dim) != 0) {
    throw std::invalid_argument("sample_pinned_marginal_batch: endpoint arrays do not match dim");
  }
  const PinnedMarginal marginal(kernel, t);
  const auto d = static_cast<std::size_t>(dim);
  const auto b = static_cast<std::size_t>(kernel.block_size());
  const std::size_t count = x0.size() / d;
  std::vector<double> out(count * d * b);
  for_each_index(count, execution, [&](std::size_t p) {
    RngStream rng = make_stream(seed, StreamPurpose::sampling, p);
    AugmentedState z;
    marginal.sample_into(x0.subspan(p * d, d), x1.subspan(p * d, d), rng, z);
    std::copy(z.data().begin(), z.data().end(), out.begin() + static_cast<std::ptrdiff_t>(p * d * b));
  });
  return out;
}

void apply_thread_limit_from_env() {
#ifdef _OPENMP
  if (const char* env = std::getenv("FBRIDGE_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) omp_set_num_threads(n);
    } catch (const std::exception&) {
    }
  }
#endif
}

}  // namespace fbridge
