#include "fbridge/training.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace fbridge {

std::string to_string(ReferenceKind kind) {
  return kind == ReferenceKind::fractional ? "fractional" : "brownian";
}

ReferenceKind reference_from_string(const std::string& name) {
  if (name == "fractional") return ReferenceKind::fractional;
  if (name == "brownian") return ReferenceKind::brownian;
  throw InvalidConfig("reference: expected 'fractional' or 'brownian', got '" + name + "'");
}

std::string to_string(LossMode mode) { return mode == LossMode::drift ? "drift" : "endpoint"; }

LossMode loss_mode_from_string(const std::string& name) {
  if (name == "drift") return LossMode::drift;
  if (name == "endpoint") return LossMode::endpoint;
  throw InvalidConfig("training.loss_mode: expected 'drift' or 'endpoint', got '" + name + "'");
}

Reference Reference::fractional(const ProcessConfig& config) {
  Reference r;
  r.kind_ = ReferenceKind::fractional;
  r.epsilon_ = config.epsilon;
  r.kernel_ = std::make_shared<const BridgeKernel>(config);
  return r;
}

Reference Reference::brownian(double epsilon) {
  if (!(epsilon > 0.0)) throw InvalidConfig("process.epsilon: must be > 0");
  Reference r;
  r.kind_ = ReferenceKind::brownian;
  r.epsilon_ = epsilon;
  return r;
}

const BridgeKernel& Reference::kernel() const {
  if (!kernel_) throw std::logic_error("the Brownian reference has no MA-fBM kernel");
  return *kernel_;
}

int Reference::num_ou() const { return kernel_ ? kernel_->num_ou() : 0; }

double Reference::target_scale(double t) const {
  return is_fractional() ? kernel_->terminal_variance(t) : 1.0 - t;
}

int network_input_dim(Conditioning c, int dim) { return c == Conditioning::paired ? 1 + 2 * dim : 1 + dim; }

DenseMatrix network_features(Conditioning cond, std::span<const double> times, const DenseMatrix& x0,
                             const DenseMatrix& m) {
  const Eigen::Index n = m.cols();
  const Eigen::Index d = m.rows();
  DenseMatrix f(network_input_dim(cond, static_cast<int>(d)), n);
  for (Eigen::Index j = 0; j < n; ++j) f(0, j) = times[static_cast<std::size_t>(j)];
  if (cond == Conditioning::paired) {
    f.middleRows(1, d) = x0;
    f.bottomRows(d) = m;
  } else {
    f.bottomRows(d) = m;
  }
  return f;
}

namespace {

// S c and the pieces of the offset for one time t.
struct RegularizerTerms {
  Vector direction;   // S c
  Vector lambda_c;    // Lambda(t) c
  Vector c;
  double var0 = 1.0;  // sigma^2_{1|0}

  RegularizerTerms(const BridgeKernel& kernel, double t, const DenseMatrix& s_bar) {
    const int n = kernel.num_ou();
    c.resize(n);
    for (int k = 0; k < n; ++k) {
      c[k] = kernel.sqrt_epsilon() * kernel.omega()[static_cast<std::size_t>(k)] *
             std::exp(-kernel.gamma()[static_cast<std::size_t>(k)] * (1.0 - t));
    }
    direction = s_bar * c;
    lambda_c = kernel.ou_marginal_covariance(t) * c;
    var0 = kernel.terminal_variance(0.0);
  }

  // -S Lambda^{-1} y + y - m_bar. Since S = Lambda - Lambda c c^T Lambda / var0,
  // S Lambda^{-1} y = y - Lambda c (c^T y) / var0, which avoids inverting the
  // badly conditioned Lambda(t).
  Vector offset(std::span<const double> y, double mean_shift, const Vector& gain_y) const {
    const Vector yv = Eigen::Map<const Vector>(y.data(), static_cast<Eigen::Index>(y.size()));
    const Vector s_lambda_inv_y = yv - lambda_c * (c.dot(yv) / var0);
    return -s_lambda_inv_y + yv - gain_y * mean_shift;
  }
};

}  // namespace

Vector regularizer_residual(const BridgeKernel& kernel, double t, std::span<const double> block, double x0,
                            double x1, double v) {
  const PinnedMarginal pm(kernel, t);
  const RegularizerTerms terms(kernel, t, pm.ou_covariance());
  const Vector gain_y = pm.gain().tail(kernel.num_ou());
  return terms.direction * v + terms.offset(block.subspan(1), x1 - x0, gain_y);
}

LossBatch make_loss_batch_at(const Reference& ref, Conditioning cond, const DenseMatrix& x0,
                             const DenseMatrix& x1, std::span<const double> times,
                             std::span<const double> states, bool with_regularizer) {
  const auto d = static_cast<int>(x0.rows());
  const auto n = static_cast<std::size_t>(x0.cols());
  const int b = ref.block_size();
  if (x1.rows() != d || static_cast<std::size_t>(x1.cols()) != n || times.size() != n ||
      states.size() != n * static_cast<std::size_t>(d * b)) {
    throw ShapeMismatch("make_loss_batch: inconsistent batch shapes");
  }
  if (with_regularizer && !ref.is_fractional()) {
    throw std::invalid_argument("the reverse-drift regularizer needs the fractional reference");
  }
  LossBatch batch;
  batch.dim = d;
  batch.num_ou = ref.num_ou();
  batch.count = n;
  batch.times.assign(times.begin(), times.end());
  batch.residual.resize(d, static_cast<Eigen::Index>(n));
  batch.scale.resize(static_cast<Eigen::Index>(n));
  batch.has_regularizer = with_regularizer;
  const int K = ref.num_ou();
  if (with_regularizer) {
    batch.reg_direction.resize(K, static_cast<Eigen::Index>(n));
    batch.reg_offset.resize(K, static_cast<Eigen::Index>(n) * d);
  }
  DenseMatrix m(d, static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    const double t = times[j];
    const auto col = static_cast<Eigen::Index>(j);
    batch.scale[col] = ref.target_scale(t);
    const double* z = states.data() + j * static_cast<std::size_t>(d * b);
    for (int i = 0; i < d; ++i) {
      std::span<const double> block(z + i * b, static_cast<std::size_t>(b));
      m(i, col) = ref.is_fractional() ? ref.kernel().terminal_mean(block, t) : block[0];
      batch.residual(i, col) = x1(i, col) - m(i, col);
    }
    if (with_regularizer) {
      const PinnedMarginal pm(ref.kernel(), t);
      const RegularizerTerms terms(ref.kernel(), t, pm.ou_covariance());
      const Vector gain_y = pm.gain().tail(K);
      batch.reg_direction.col(col) = terms.direction;
      for (int i = 0; i < d; ++i) {
        std::span<const double> y(z + i * b + 1, static_cast<std::size_t>(K));
        batch.reg_offset.col(col * d + i) = terms.offset(y, x1(i, col) - x0(i, col), gain_y);
      }
    }
  }
  batch.features = network_features(cond, times, x0, m);
  return batch;
}

LossBatch make_loss_batch(const Reference& ref, Conditioning cond, const DenseMatrix& x0, const DenseMatrix& x1,
                          double time_clamp, bool with_regularizer, RngStream& rng) {
  const auto d = static_cast<std::size_t>(x0.rows());
  const auto n = static_cast<std::size_t>(x0.cols());
  const auto b = static_cast<std::size_t>(ref.block_size());
  std::vector<double> times(n);
  std::vector<double> states(n * d * b);
  std::vector<double> a(d), c(d);
  AugmentedState z;
  for (std::size_t j = 0; j < n; ++j) {
    const double t = (1.0 - time_clamp) * rng.uniform();
    times[j] = t;
    for (std::size_t i = 0; i < d; ++i) {
      a[i] = x0(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      c[i] = x1(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    if (ref.is_fractional()) {
      PinnedMarginal(ref.kernel(), t).sample_into(a, c, rng, z);
      std::copy(z.data().begin(), z.data().end(), states.begin() + static_cast<std::ptrdiff_t>(j * d * b));
    } else {
      const auto x = brownian_bridge_marginal(ref.epsilon(), a, c, t, rng);
      std::copy(x.begin(), x.end(), states.begin() + static_cast<std::ptrdiff_t>(j * d));
    }
  }
  return make_loss_batch_at(ref, cond, x0, x1, times, states, with_regularizer);
}

DenseMatrix drift_factor(const DenseMatrix& out, const LossBatch& batch, LossMode mode) {
  if (mode == LossMode::drift) return out;
  DenseMatrix v = out;
  for (Eigen::Index j = 0; j < v.cols(); ++j) v.col(j) /= batch.scale[j];
  return v;
}

LossValue batch_loss(const Mlp& model, const LossBatch& batch, LossMode mode, double lambda,
                     std::vector<double>* grad) {
  if (model.config().input_dim != batch.features.rows() || model.config().output_dim != batch.dim) {
    throw ShapeMismatch("batch_loss: model and batch dimensions disagree");
  }
  if (lambda > 0.0 && !batch.has_regularizer) {
    throw std::invalid_argument("batch_loss: lambda > 0 needs a batch built with the regularizer");
  }
  ForwardCache cache;
  const DenseMatrix out = model.forward(batch.features, cache);
  const auto n = static_cast<double>(batch.count);

  DenseMatrix diff(out.rows(), out.cols());
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    if (mode == LossMode::drift) {
      diff.col(j) = out.col(j) - batch.residual.col(j) / batch.scale[j];
    } else {
      diff.col(j) = out.col(j) - batch.residual.col(j);
    }
  }
  LossValue value;
  value.regression = diff.squaredNorm() / n;
  DenseMatrix g_out = (2.0 / n) * diff;

  if (lambda > 0.0) {
    const DenseMatrix v = drift_factor(out, batch, mode);
    double reg = 0.0;
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      const double dv_dout = mode == LossMode::drift ? 1.0 : 1.0 / batch.scale[j];
      for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const Vector r = batch.reg_direction.col(j) * v(i, j) + batch.reg_offset.col(j * batch.dim + i);
        reg += r.squaredNorm();
        g_out(i, j) += (2.0 * lambda / n) * batch.reg_direction.col(j).dot(r) * dv_dout;
      }
    }
    value.regularizer = reg / n;
  }
  value.total = value.regression + lambda * value.regularizer;
  if (grad) model.backward(cache, g_out, *grad);
  return value;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw InvalidConfig("training." + field + ": " + why);
  };
  if (steps < 0) fail("steps", "must be >= 0");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(lr > 0.0)) fail("lr", "must be > 0");
  if (!(lr_final >= 0.0) || lr_final > lr) fail("lr_final", "must lie in [0, lr]");
  if (warmup_steps < 0) fail("warmup_steps", "must be >= 0");
  if (!(time_clamp > 0.0 && time_clamp <= 0.1)) fail("time_clamp", "must lie in (0, 0.1]");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail("ema_decay", "must lie in [0, 1)");
  if (!(lambda >= 0.0)) fail("lambda", "must be >= 0");
  if (log_every < 1) fail("log_every", "must be >= 1");
}

double TrainConfig::learning_rate(std::int64_t step) const {
  double rate = lr;
  if (steps > 0 && lr_final > 0.0 && lr_final < lr) {
    const double progress = std::min(1.0, static_cast<double>(step) / steps);
    rate = lr_final + 0.5 * (lr - lr_final) * (1.0 + std::cos(std::numbers::pi * progress));
  }
  if (warmup_steps > 0 && step < warmup_steps) rate *= static_cast<double>(step + 1) / warmup_steps;
  return rate;
}

std::vector<StepLog> train_steps(TrainableModel& model, const Reference& ref, Conditioning cond,
                                 const CouplingSampler& sampler, const TrainConfig& config, std::uint64_t tag,
                                 std::int64_t until_step, const std::function<void(const StepLog&)>& on_step) {
  config.validate();
  std::vector<StepLog> log;
  std::vector<double> grad;
  DenseMatrix x0, x1;
  const bool reg = config.lambda > 0.0;
  while (model.step < until_step) {
    const std::uint64_t index = (tag << 40) + static_cast<std::uint64_t>(model.step);
    RngStream rng = make_stream(config.seed, StreamPurpose::training, index);
    sampler(rng, config.batch_size, x0, x1);
    const LossBatch batch = make_loss_batch(ref, cond, x0, x1, config.time_clamp, reg, rng);
    const LossValue loss = batch_loss(model.model, batch, config.mode, config.lambda, &grad);
    const StepLog entry{model.step, loss.total};
    backward_and_step(model, grad, config.learning_rate(model.step));
    log.push_back(entry);
    if (on_step) on_step(entry);
  }
  return log;
}

TrainableModel init_model(const Reference& ref, Conditioning cond, int dim, const std::vector<int>& hidden,
                          double ema_decay, std::uint64_t seed, std::uint64_t tag) {
  (void)ref;
  MlpConfig mc;
  mc.input_dim = network_input_dim(cond, dim);
  mc.output_dim = dim;
  mc.hidden = hidden;
  RngStream rng = make_stream(seed, StreamPurpose::init, tag);
  return TrainableModel(Mlp(mc, rng), ema_decay);
}

Predictor predictor_of(const Mlp& model) {
  return [&model](const DenseMatrix& features) { return model.forward(features); };
}

double clamped_time(int step, int n_steps, double time_clamp) {
  const double dt = 1.0 / n_steps;
  return std::min(step * dt, 1.0 - std::min(time_clamp, dt));
}

GeneratedBatch generate(const Reference& ref, const Predictor& predictor, Conditioning cond, LossMode mode,
                        const DenseMatrix& x0, const SampleOptions& options, std::uint64_t seed,
                        std::uint64_t stream_offset, Execution execution) {
  if (options.n_steps < 1) throw std::invalid_argument("generate: n_steps must be >= 1");
  if (options.record_every < 1) throw std::invalid_argument("generate: record_every must be >= 1");
  const int d = static_cast<int>(x0.rows());
  const auto n = static_cast<std::size_t>(x0.cols());
  const int K = ref.num_ou();
  const double dt = 1.0 / options.n_steps;
  const double sdt = std::sqrt(dt);
  const double sqrt_eps = std::sqrt(ref.epsilon());

  std::vector<AugmentedState> states(n);
  std::vector<RngStream> rngs(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> start(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) start[static_cast<std::size_t>(i)] = x0(i, static_cast<Eigen::Index>(j));
    states[j] = AugmentedState::initial(start, K);
    rngs[j] = make_stream(seed, StreamPurpose::sampling, stream_offset + j);
  }
  GeneratedBatch out;
  if (options.record) {
    out.trajectories.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      out.trajectories[j].times.push_back(0.0);
      out.trajectories[j].states.push_back(states[j]);
      out.trajectories[j].meta.seed = seed;
    }
  }

  DenseMatrix m(d, static_cast<Eigen::Index>(n));
  std::vector<double> times(n);
  for (int step = 0; step < options.n_steps; ++step) {
    const double t = clamped_time(step, options.n_steps, options.time_clamp);
    std::fill(times.begin(), times.end(), t);
    const double s = ref.target_scale(t);
    TimeCoefficients coeffs;
    if (ref.is_fractional()) coeffs = TimeCoefficients(ref.kernel(), t);
    for (std::size_t j = 0; j < n; ++j) {
      for (int i = 0; i < d; ++i) {
        m(i, static_cast<Eigen::Index>(j)) =
            ref.is_fractional() ? ref.kernel().terminal_mean(states[j].block(i), t) : states[j].x(i);
      }
    }
    const DenseMatrix outputs = predictor(network_features(cond, times, x0, m));
    if (outputs.rows() != d || static_cast<std::size_t>(outputs.cols()) != n) {
      throw ShapeMismatch("generate: predictor returned the wrong shape");
    }
    const double factor = mode == LossMode::endpoint ? 1.0 / s : 1.0;

    auto advance = [&](std::size_t j) {
      for (int i = 0; i < d; ++i) {
        const double v = factor * outputs(i, static_cast<Eigen::Index>(j));
        const double dw = sdt * rngs[j].normal();
        if (ref.is_fractional()) {
          // The pinned step with x1 replaced by mu + sigma^2 v has drift F z + G G^T u.
          const double x1_eff = m(i, static_cast<Eigen::Index>(j)) + coeffs.variance * v;
          pinned_em_step(ref.kernel(), coeffs, x1_eff, dt, dw, states[j].block(i));
        } else {
          states[j].x(i) += v * dt + sqrt_eps * dw;
        }
      }
    };
    const auto count = static_cast<std::ptrdiff_t>(n);
    if (execution == Execution::parallel) {
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t j = 0; j < count; ++j) advance(static_cast<std::size_t>(j));
    } else {
      for (std::ptrdiff_t j = 0; j < count; ++j) advance(static_cast<std::size_t>(j));
    }
    if (options.record) {
      const int done = step + 1;
      if (done % options.record_every == 0 || done == options.n_steps) {
        for (std::size_t j = 0; j < n; ++j) {
          out.trajectories[j].times.push_back(done == options.n_steps ? 1.0 : done * dt);
          out.trajectories[j].states.push_back(states[j]);
        }
      }
    }
  }
  out.terminal.resize(d, static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    for (int i = 0; i < d; ++i) out.terminal(i, static_cast<Eigen::Index>(j)) = states[j].x(i);
  }
  return out;
}

}  // namespace fbridge
