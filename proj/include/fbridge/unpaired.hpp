#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fbridge/datasets.hpp"
#include "fbridge/paired.hpp"
#include "fbridge/training.hpp"

namespace fbridge {

class DivergenceDetected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct UnpairedConfig {
  ProcessConfig process;
  ReferenceKind reference = ReferenceKind::fractional;
  std::vector<int> hidden = {128, 128, 128};
  /// Pretraining schedule; lambda here is the reverse-drift regularizer weight
  /// used in both phases.
  TrainConfig train;

  double alpha = 1.0;
  int finetune_steps = 2000;
  double finetune_lr = 1e-4;
  double finetune_ema_decay = 0.99;
  int generation_steps = 100;
  /// Finetuning runs only for H in [0.45, 0.55] unless this is set.
  bool allow_any_hurst = false;
  double divergence_factor = 10.0;

  void validate() const;
};

struct UnpairedModels {
  TrainableModel forward;   // Pi_0 -> Pi_1
  TrainableModel backward;  // Pi_1 -> Pi_0
  /// Smoothed loss at the end of pretraining, the divergence yardstick.
  double reference_loss_forward = 0.0;
  double reference_loss_backward = 0.0;
  std::int64_t finetune_step = 0;
};

struct PhaseLog {
  std::string phase;  // "pretrain" or "finetune"
  std::int64_t step = 0;
  double loss_forward = 0.0;
  double loss_backward = 0.0;
};

/// Unpaired regression loss: the network sees (t, m) only.
LossValue unpaired_loss(const Reference& ref, const Mlp& model, const DenseMatrix& x0, const DenseMatrix& x1,
                        LossMode mode, double time_clamp, double lambda, RngStream& rng,
                        std::vector<double>* grad);

/// Independent pairs drawn from (pool_a, pool_b).
CouplingSampler independent_sampler(const std::vector<double>& pool_a, const std::vector<double>& pool_b, int dim);

/// Trains both directions on the independent coupling.
UnpairedModels pretrain(const MarginalPools& pools, const UnpairedConfig& config,
                        const std::function<void(const PhaseLog&)>& on_step = {});

/// True when the configuration permits alpha-IMF finetuning.
bool finetune_enabled(const UnpairedConfig& config);

/// Forward-forward alpha-IMF: each step the EMA backward model turns fresh
/// Pi_1 samples into sources for the forward model and vice versa; every pair
/// is model-generated with probability alpha and independent otherwise.
/// Runs until models.finetune_step reaches config.finetune_steps. Throws
/// DivergenceDetected when a smoothed loss exceeds divergence_factor times its
/// pretraining value. Returns false (doing nothing) when gated off.
bool finetune_alpha_imf(UnpairedModels& models, const MarginalPools& pools, const UnpairedConfig& config,
                        const std::function<void(const PhaseLog&)>& on_step = {});

struct UnpairedMetrics {
  double w1_forward = 0.0;
  double w1_backward = 0.0;
  double coupling_correlation = 0.0;
};

/// Uses the EMA weights; n samples from each pool.
UnpairedMetrics evaluate_unpaired(const Reference& ref, const UnpairedModels& models, LossMode mode,
                                  const MarginalPools& pools, std::size_t n, int n_steps, std::uint64_t seed,
                                  Execution execution = Execution::parallel);

}  // namespace fbridge
