#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fbridge/bridge.hpp"
#include "fbridge/mafbm.hpp"
#include "fbridge/nn.hpp"
#include "fbridge/rng.hpp"

namespace fbridge {

enum class ReferenceKind { fractional, brownian };

std::string to_string(ReferenceKind kind);
ReferenceKind reference_from_string(const std::string& name);

/// The reference process a bridge model is built on: the augmented MA-fBM
/// (fractional) or a scaled Brownian motion (the ABM baseline).
///
/// Both are handled through one interface: at time t a bridge state is drawn,
/// its conditioning feature m (mu_{1|t}(z) or x_t) is handed to the network,
/// and the regression target is (x1 - m) / s(t) with s(t) = sigma^2_{1|t} or
/// 1 - t.
class Reference {
 public:
  static Reference fractional(const ProcessConfig& config);
  static Reference brownian(double epsilon);

  ReferenceKind kind() const { return kind_; }
  bool is_fractional() const { return kind_ == ReferenceKind::fractional; }
  /// Throws std::logic_error for the Brownian reference.
  const BridgeKernel& kernel() const;
  double epsilon() const { return epsilon_; }
  int num_ou() const;
  int block_size() const { return num_ou() + 1; }
  double target_scale(double t) const;

 private:
  ReferenceKind kind_ = ReferenceKind::brownian;
  double epsilon_ = 1.0;
  std::shared_ptr<const BridgeKernel> kernel_;
};

/// Which inputs the network sees besides t and m: the paired model also gets x0.
enum class Conditioning { paired, unpaired };

/// drift: the network output is the drift factor itself and the loss is
/// ||out - (x1 - m)/s||^2. endpoint: the network predicts x1 - m, the drift
/// factor is out / s and the loss is ||out - (x1 - m)||^2 (same minimizer,
/// reweighted by s^2).
enum class LossMode { drift, endpoint };

std::string to_string(LossMode mode);
LossMode loss_mode_from_string(const std::string& name);

int network_input_dim(Conditioning c, int dim);

/// Training tuples for one minibatch, samples as columns.
struct LossBatch {
  int dim = 0;
  int num_ou = 0;
  std::size_t count = 0;
  std::vector<double> times;
  DenseMatrix features;   // network input
  DenseMatrix residual;   // x1 - m, dim x count
  Vector scale;           // s(t)
  /// Regularizer pieces: r = direction * v + offset per (sample, dimension);
  /// direction is num_ou x count, offset is num_ou x (count * dim).
  DenseMatrix reg_direction;
  DenseMatrix reg_offset;
  bool has_regularizer = false;
};

/// Draws t_j ~ U[0, 1 - time_clamp] and a bridge state per pair.
/// x0, x1 are dim x count.
LossBatch make_loss_batch(const Reference& ref, Conditioning cond, const DenseMatrix& x0, const DenseMatrix& x1,
                          double time_clamp, bool with_regularizer, RngStream& rng);

/// Same with caller-provided times and bridge states (deterministic part).
/// `states` holds count * dim * block values (x for the Brownian reference).
LossBatch make_loss_batch_at(const Reference& ref, Conditioning cond, const DenseMatrix& x0,
                             const DenseMatrix& x1, std::span<const double> times,
                             std::span<const double> states, bool with_regularizer);

/// Fills the network input matrix for times t, sources x0 (dim x n) and features m (dim x n).
DenseMatrix network_features(Conditioning cond, std::span<const double> times, const DenseMatrix& x0,
                             const DenseMatrix& m);

/// Residual of the reverse-drift identity for one block at time t:
/// r = S(c v - Lambda(t)^{-1} y) + (y - m_bar), with S, m_bar the pinned law
/// of the OU block and c_k = sqrt(eps) omega_k exp(-gamma_k (1 - t)).
/// Vanishes when v = (x1 - mu_{1|t}(z)) / sigma^2_{1|t}.
Vector regularizer_residual(const BridgeKernel& kernel, double t, std::span<const double> block, double x0,
                            double x1, double v);

struct LossValue {
  double total = 0.0;
  double regression = 0.0;
  double regularizer = 0.0;
};

/// Loss (and, when grad is non-null, its parameter gradient) of `model` on a batch.
LossValue batch_loss(const Mlp& model, const LossBatch& batch, LossMode mode, double lambda,
                     std::vector<double>* grad);

/// Maps network outputs to the drift factor v.
DenseMatrix drift_factor(const DenseMatrix& out, const LossBatch& batch, LossMode mode);

struct TrainConfig {
  int steps = 5000;
  int batch_size = 256;
  double lr = 1e-3;
  /// Cosine decay from lr to lr_final over `steps`; 0 keeps lr fixed.
  double lr_final = 0.0;
  int warmup_steps = 0;
  double time_clamp = kDefaultTimeClamp;
  double ema_decay = 0.999;
  LossMode mode = LossMode::endpoint;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  int log_every = 100;

  void validate() const;
  double learning_rate(std::int64_t step) const;
};

/// Draws `n` endpoint pairs (dim x n each) for one training step.
using CouplingSampler = std::function<void(RngStream& rng, int n, DenseMatrix& x0, DenseMatrix& x1)>;

struct StepLog {
  std::int64_t step = 0;
  double loss = 0.0;
};

/// Runs optimizer steps until model.step reaches `until_step`. The batch for
/// step s comes from make_stream(seed, training, tag * 2^40 + s), so a run
/// resumed from a checkpoint is bit-identical to an uninterrupted one.
/// Returns the loss of every step; `on_step` is optional.
std::vector<StepLog> train_steps(TrainableModel& model, const Reference& ref, Conditioning cond,
                                 const CouplingSampler& sampler, const TrainConfig& config, std::uint64_t tag,
                                 std::int64_t until_step, const std::function<void(const StepLog&)>& on_step = {});

/// Fresh model for a reference / conditioning pair.
TrainableModel init_model(const Reference& ref, Conditioning cond, int dim, const std::vector<int>& hidden,
                          double ema_decay, std::uint64_t seed, std::uint64_t tag);

/// Network stand-in: maps features (input x n) to outputs (dim x n).
using Predictor = std::function<DenseMatrix(const DenseMatrix& features)>;

Predictor predictor_of(const Mlp& model);

struct SampleOptions {
  int n_steps = 100;
  double time_clamp = kDefaultTimeClamp;
  /// Record full trajectories (times 0, dt, ..., 1) for every sample.
  bool record = false;
  int record_every = 1;
};

struct GeneratedBatch {
  DenseMatrix terminal;  // dim x n
  std::vector<Trajectory> trajectories;
};

/// Euler-Maruyama with the learned drift, starting at Z_0 = (x0, 0). Sample j
/// draws its noise from make_stream(seed, sampling, stream_offset + j).
GeneratedBatch generate(const Reference& ref, const Predictor& predictor, Conditioning cond, LossMode mode,
                        const DenseMatrix& x0, const SampleOptions& options, std::uint64_t seed,
                        std::uint64_t stream_offset, Execution execution);

/// Per-sample time grid used by the samplers: drift at min(t_i, 1 - min(clamp, dt)).
double clamped_time(int step, int n_steps, double time_clamp);

}  // namespace fbridge
