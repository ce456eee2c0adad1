#include "fbridge/unpaired.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fbridge/metrics.hpp"

namespace fbridge {

namespace {

constexpr double kRunningDecay = 0.99;
constexpr std::uint64_t kTagFinetune = 3;

void draw_columns(const std::vector<double>& pool, int dim, RngStream& rng, int n, DenseMatrix& out) {
  const std::size_t size = pool.size() / static_cast<std::size_t>(dim);
  out.resize(dim, n);
  for (int j = 0; j < n; ++j) {
    const auto p = std::min(size - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(size)));
    for (int i = 0; i < dim; ++i) out(i, j) = pool[p * static_cast<std::size_t>(dim) + static_cast<std::size_t>(i)];
  }
}

DenseMatrix first_columns(const std::vector<double>& pool, int dim, std::size_t n) {
  const std::size_t size = pool.size() / static_cast<std::size_t>(dim);
  DenseMatrix out(dim, static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t p = j % size;
    for (int i = 0; i < dim; ++i) {
      out(i, static_cast<Eigen::Index>(j)) = pool[p * static_cast<std::size_t>(dim) + static_cast<std::size_t>(i)];
    }
  }
  return out;
}

}  // namespace

void UnpairedConfig::validate() const {
  process.validate();
  train.validate();
  if (hidden.empty()) throw InvalidConfig("model.hidden: need at least one hidden layer");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidConfig("unpaired.alpha: must lie in [0, 1]");
  if (finetune_steps < 0) throw InvalidConfig("unpaired.finetune_steps: must be >= 0");
  if (!(finetune_lr > 0.0)) throw InvalidConfig("unpaired.finetune_lr: must be > 0");
  if (!(finetune_ema_decay >= 0.0 && finetune_ema_decay < 1.0)) {
    throw InvalidConfig("unpaired.finetune_ema_decay: must lie in [0, 1)");
  }
  if (generation_steps < 1) throw InvalidConfig("unpaired.generation_steps: must be >= 1");
  if (!(divergence_factor > 1.0)) throw InvalidConfig("unpaired.divergence_factor: must be > 1");
  if (train.lambda > 0.0 && reference != ReferenceKind::fractional) {
    throw InvalidConfig("training.lambda: the regularizer needs the fractional reference");
  }
}

LossValue unpaired_loss(const Reference& ref, const Mlp& model, const DenseMatrix& x0, const DenseMatrix& x1,
                        LossMode mode, double time_clamp, double lambda, RngStream& rng,
                        std::vector<double>* grad) {
  const LossBatch batch = make_loss_batch(ref, Conditioning::unpaired, x0, x1, time_clamp, lambda > 0.0, rng);
  return batch_loss(model, batch, mode, lambda, grad);
}

CouplingSampler independent_sampler(const std::vector<double>& pool_a, const std::vector<double>& pool_b, int dim) {
  if (pool_a.empty() || pool_b.empty()) throw std::invalid_argument("independent_sampler: empty pool");
  return [&pool_a, &pool_b, dim](RngStream& rng, int n, DenseMatrix& x0, DenseMatrix& x1) {
    draw_columns(pool_a, dim, rng, n, x0);
    draw_columns(pool_b, dim, rng, n, x1);
  };
}

UnpairedModels pretrain(const MarginalPools& pools, const UnpairedConfig& config,
                        const std::function<void(const PhaseLog&)>& on_step) {
  config.validate();
  pools.validate();
  const Reference ref = make_reference(config.reference, config.process);
  UnpairedModels m;
  m.forward = init_model(ref, Conditioning::unpaired, pools.dim, config.hidden, config.train.ema_decay,
                         config.train.seed, kTagForward);
  m.backward = init_model(ref, Conditioning::unpaired, pools.dim, config.hidden, config.train.ema_decay,
                          config.train.seed, kTagBackward);
  const auto forward_log = train_steps(m.forward, ref, Conditioning::unpaired,
                                       independent_sampler(pools.pool0, pools.pool1, pools.dim), config.train,
                                       kTagForward, config.train.steps);
  const auto backward_log = train_steps(m.backward, ref, Conditioning::unpaired,
                                        independent_sampler(pools.pool1, pools.pool0, pools.dim), config.train,
                                        kTagBackward, config.train.steps);
  double rf = forward_log.empty() ? 0.0 : forward_log.front().loss;
  double rb = backward_log.empty() ? 0.0 : backward_log.front().loss;
  for (std::size_t s = 0; s < forward_log.size(); ++s) {
    rf = kRunningDecay * rf + (1.0 - kRunningDecay) * forward_log[s].loss;
    rb = kRunningDecay * rb + (1.0 - kRunningDecay) * backward_log[s].loss;
    if (on_step) on_step({"pretrain", forward_log[s].step, forward_log[s].loss, backward_log[s].loss});
  }
  m.reference_loss_forward = rf;
  m.reference_loss_backward = rb;
  return m;
}

bool finetune_enabled(const UnpairedConfig& config) {
  if (config.allow_any_hurst || config.reference == ReferenceKind::brownian) return true;
  return config.process.hurst >= 0.45 && config.process.hurst <= 0.55;
}

bool finetune_alpha_imf(UnpairedModels& models, const MarginalPools& pools, const UnpairedConfig& config,
                        const std::function<void(const PhaseLog&)>& on_step) {
  config.validate();
  pools.validate();
  if (!finetune_enabled(config)) return false;
  const Reference ref = make_reference(config.reference, config.process);
  const TrainConfig& tc = config.train;
  const int n = tc.batch_size;
  const int dim = pools.dim;
  models.forward.ema_decay = config.finetune_ema_decay;
  models.backward.ema_decay = config.finetune_ema_decay;
  SampleOptions gen;
  gen.n_steps = config.generation_steps;
  gen.time_clamp = tc.time_clamp;

  double running_f = models.reference_loss_forward;
  double running_b = models.reference_loss_backward;
  std::vector<double> grad;
  DenseMatrix start0, start1, indep0, indep1;
  while (models.finetune_step < config.finetune_steps) {
    const auto s = static_cast<std::uint64_t>(models.finetune_step);
    RngStream rng = make_stream(tc.seed, StreamPurpose::finetune, s);
    draw_columns(pools.pool1, dim, rng, n, start1);  // forward-model targets
    draw_columns(pools.pool0, dim, rng, n, start0);  // backward-model targets
    draw_columns(pools.pool0, dim, rng, n, indep0);
    draw_columns(pools.pool1, dim, rng, n, indep1);
    std::vector<char> use_model_f(static_cast<std::size_t>(n)), use_model_b(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) use_model_f[static_cast<std::size_t>(j)] = rng.uniform() < config.alpha;
    for (int j = 0; j < n; ++j) use_model_b[static_cast<std::size_t>(j)] = rng.uniform() < config.alpha;

    const Mlp ema_f = models.forward.ema_model();
    const Mlp ema_b = models.backward.ema_model();
    const std::uint64_t offset = (kTagFinetune << 40) + s * static_cast<std::uint64_t>(2 * n);
    const DenseMatrix gen0 = generate(ref, predictor_of(ema_b), Conditioning::unpaired, tc.mode, start1, gen,
                                      tc.seed, offset, Execution::parallel)
                                 .terminal;
    const DenseMatrix gen1 = generate(ref, predictor_of(ema_f), Conditioning::unpaired, tc.mode, start0, gen,
                                      tc.seed, offset + static_cast<std::uint64_t>(n), Execution::parallel)
                                 .terminal;

    // Forward model learns pairs (source, start1); backward learns (source, start0).
    DenseMatrix src_f(dim, n), src_b(dim, n);
    for (int j = 0; j < n; ++j) {
      if (use_model_f[static_cast<std::size_t>(j)]) {
        src_f.col(j) = gen0.col(j);
      } else {
        src_f.col(j) = indep0.col(j);
      }
      if (use_model_b[static_cast<std::size_t>(j)]) {
        src_b.col(j) = gen1.col(j);
      } else {
        src_b.col(j) = indep1.col(j);
      }
    }
    const double lr = config.finetune_lr;
    const LossValue lf = unpaired_loss(ref, models.forward.model, src_f, start1, tc.mode, tc.time_clamp, tc.lambda,
                                       rng, &grad);
    backward_and_step(models.forward, grad, lr);
    const LossValue lb = unpaired_loss(ref, models.backward.model, src_b, start0, tc.mode, tc.time_clamp,
                                       tc.lambda, rng, &grad);
    backward_and_step(models.backward, grad, lr);

    running_f = kRunningDecay * running_f + (1.0 - kRunningDecay) * lf.total;
    running_b = kRunningDecay * running_b + (1.0 - kRunningDecay) * lb.total;
    const double limit_f = config.divergence_factor * models.reference_loss_forward;
    const double limit_b = config.divergence_factor * models.reference_loss_backward;
    if (!std::isfinite(running_f) || !std::isfinite(running_b) || running_f > limit_f || running_b > limit_b) {
      std::ostringstream msg;
      msg << "alpha-IMF diverged at finetune step " << models.finetune_step << ": smoothed losses " << running_f
          << " / " << running_b << " exceed " << config.divergence_factor << "x the pretraining values";
      throw DivergenceDetected(msg.str());
    }
    if (on_step) on_step({"finetune", models.finetune_step, lf.total, lb.total});
    ++models.finetune_step;
  }
  return true;
}

UnpairedMetrics evaluate_unpaired(const Reference& ref, const UnpairedModels& models, LossMode mode,
                                  const MarginalPools& pools, std::size_t n, int n_steps, std::uint64_t seed,
                                  Execution execution) {
  pools.validate();
  SampleOptions options;
  options.n_steps = n_steps;
  const DenseMatrix x0 = first_columns(pools.pool0, pools.dim, n);
  const DenseMatrix x1 = first_columns(pools.pool1, pools.dim, n);
  const Mlp ema_f = models.forward.ema_model();
  const Mlp ema_b = models.backward.ema_model();
  const DenseMatrix gen1 =
      generate(ref, predictor_of(ema_f), Conditioning::unpaired, mode, x0, options, seed, 0, execution).terminal;
  const DenseMatrix gen0 =
      generate(ref, predictor_of(ema_b), Conditioning::unpaired, mode, x1, options, seed, n, execution).terminal;
  UnpairedMetrics out;
  out.w1_forward = wasserstein1(gen1, x1);
  out.w1_backward = wasserstein1(gen0, x0);
  out.coupling_correlation = coupling_correlation(x0, gen1);
  return out;
}

}  // namespace fbridge
