#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "fbridge/mafbm.hpp"
#include "fbridge/numerics.hpp"
#include "fbridge/rng.hpp"
#include "fbridge/state.hpp"

namespace fbridge {

class TimeTooCloseToOne : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Where a batch kernel runs. Both paths give bit-identical results because
/// every trajectory owns its random stream.
enum class Execution { serial, parallel };

inline constexpr double kDefaultTimeClamp = 1e-3;

/// Time-dependent scalars shared by every dimension block at time t.
struct TimeCoefficients {
  double time = 0.0;
  double variance = 0.0;              // sigma^2_{1|t}
  double gain = 0.0;                  // G^T [1, omega_k zeta_k(t,1)]
  std::vector<double> omega_zeta;     // omega_k zeta_k(t,1)

  TimeCoefficients() = default;
  TimeCoefficients(const BridgeKernel& kernel, double t);
};

/// Drift F z + G G^T u(t, z) of the partially pinned process, all blocks.
/// Throws TimeTooCloseToOne when 1 - t < time_clamp.
std::vector<double> pinned_drift(const BridgeKernel& kernel, double t, const AugmentedState& z,
                                 std::span<const double> x1, double time_clamp = kDefaultTimeClamp);

/// Joint Gaussian law of (X_t, Y_t, X_1) given Z_s, per dimension block.
struct JointCovariance {
  DenseMatrix sigma_ts;  // Cov(Z_t | Z_s), (K+1) x (K+1)
  Vector sigma12;        // Cov(Z_t, X_1 | Z_s), K+1
  double sigma2_1s = 0;  // Var(X_1 | Z_s)
};

JointCovariance joint_covariance(const BridgeKernel& kernel, double s, double t);

/// Closed-form law of Z_t given X_0 = x0 and X_1 = x1, precomputed for one t.
///
/// Given Z_0 = (x0, 0) the reference satisfies X_t = x0 + sqrt(eps) omega^T Y_t
/// exactly, so the (K+1)-dimensional covariance has rank K. The sampler draws
/// the OU block from its nondegenerate conditional law and places X on the
/// constraint.
class PinnedMarginal {
 public:
  PinnedMarginal(const BridgeKernel& kernel, double t);

  double time() const { return time_; }
  /// Conditional mean per block is (x0, 0, ..., 0) + gain * (x1 - x0).
  const Vector& gain() const { return gain_; }
  /// Full conditional covariance (rank K).
  const DenseMatrix& covariance() const { return covariance_; }
  /// Conditional covariance of the OU block and its Cholesky factor.
  const DenseMatrix& ou_covariance() const { return ou_covariance_; }
  const DenseMatrix& ou_factor() const { return ou_factor_; }
  double jitter() const { return jitter_; }

  Vector mean_block(double x0, double x1) const;
  void sample_into(std::span<const double> x0, std::span<const double> x1, RngStream& rng,
                   AugmentedState& out) const;
  AugmentedState sample(std::span<const double> x0, std::span<const double> x1, RngStream& rng) const;

 private:
  const BridgeKernel* kernel_;
  double time_;
  Vector gain_;
  DenseMatrix covariance_;
  DenseMatrix ou_covariance_;
  DenseMatrix ou_factor_;
  double jitter_ = 0.0;
};

AugmentedState sample_pinned_marginal(const BridgeKernel& kernel, std::span<const double> x0,
                                      std::span<const double> x1, double t, RngStream& rng);

struct TrajectoryMeta {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<AugmentedState> states;
  TrajectoryMeta meta;
};

struct EmOptions {
  int n_steps = 100;
  double time_clamp = kDefaultTimeClamp;
  /// Keep every n-th state (the terminal state is always kept).
  int record_every = 1;
};

/// Euler-Maruyama on the uniform grid t_i = i / n. The drift is evaluated at
/// min(t_i, 1 - min(time_clamp, dt)); the grid never reaches t = 1 inside a
/// drift evaluation, so the clamp only bites when dt < time_clamp.
Trajectory simulate_pinned_em(const BridgeKernel& kernel, std::span<const double> x0,
                              std::span<const double> x1, const EmOptions& options, RngStream& rng);

/// One Euler-Maruyama step of a single block driven by the scalar Gaussian
/// increment `dw` (already scaled by sqrt(dt)).
void pinned_em_step(const BridgeKernel& kernel, const TimeCoefficients& coeffs, double x1,
                    double dt, double dw, std::span<double> block);

/// Exact scaled Brownian bridge marginal x0 + t (x1 - x0) + N(0, eps t (1 - t)).
std::vector<double> brownian_bridge_marginal(double epsilon, std::span<const double> x0,
                                             std::span<const double> x1, double t, RngStream& rng);

/// Batched pinned simulation for many (x0, x1) pairs. Path p uses stream
/// make_stream(seed, sampling, p).
struct PathBatch {
  int dim = 0;
  int block = 0;
  std::size_t count = 0;
  std::vector<int> snapshot_steps;
  std::vector<double> snapshot_times;
  /// snapshots[s][(p * dim + i) * block + j]
  std::vector<std::vector<double>> snapshots;
  /// Realized quadratic variation sum_i (X_{t_{i+1}} - X_{t_i})^2 per path,
  /// summed over data dimensions.
  std::vector<double> quadratic_variation;
  /// Terminal data coordinates, count x dim.
  std::vector<double> terminal;
};

PathBatch simulate_pinned_em_batch(const BridgeKernel& kernel, std::span<const double> x0,
                                   std::span<const double> x1, int dim, const EmOptions& options,
                                   std::span<const int> snapshot_steps, std::uint64_t seed,
                                   Execution execution);

/// Exact pinned marginals at time t for many pairs; returns count * dim * (K+1)
/// values laid out like PathBatch snapshots. Pair p uses make_stream(seed, sampling, p).
std::vector<double> sample_pinned_marginal_batch(const BridgeKernel& kernel, std::span<const double> x0,
                                                 std::span<const double> x1, int dim, double t,
                                                 std::uint64_t seed, Execution execution);

/// Caps OpenMP worker count from FBRIDGE_THREADS when set.
void apply_thread_limit_from_env();

}  // namespace fbridge
