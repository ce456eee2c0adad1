#include "fbridge/paired.hpp"

#include <algorithm>

#include "fbridge/metrics.hpp"

namespace fbridge {

void PairedTrainConfig::validate() const {
  process.validate();
  train.validate();
  if (hidden.empty()) throw InvalidConfig("model.hidden: need at least one hidden layer");
  for (int h : hidden) {
    if (h < 1) throw InvalidConfig("model.hidden: widths must be positive");
  }
}

Reference make_reference(ReferenceKind kind, const ProcessConfig& process) {
  return kind == ReferenceKind::fractional ? Reference::fractional(process) : Reference::brownian(process.epsilon);
}

CouplingSampler dataset_sampler(const PairDataset& data) {
  if (data.size() == 0) throw std::invalid_argument("training split is empty");
  return [&data](RngStream& rng, int n, DenseMatrix& x0, DenseMatrix& x1) {
    x0.resize(data.dim, n);
    x1.resize(data.dim, n);
    const std::size_t size = data.size();
    for (int j = 0; j < n; ++j) {
      const auto p = std::min(size - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(size)));
      for (int i = 0; i < data.dim; ++i) {
        x0(i, j) = data.source(p)[static_cast<std::size_t>(i)];
        x1(i, j) = data.target(p)[static_cast<std::size_t>(i)];
      }
    }
  };
}

LossValue paired_loss(const Reference& ref, const Mlp& model, const DenseMatrix& x0, const DenseMatrix& x1,
                      LossMode mode, double time_clamp, RngStream& rng, std::vector<double>* grad) {
  const LossBatch batch = make_loss_batch(ref, Conditioning::paired, x0, x1, time_clamp, false, rng);
  return batch_loss(model, batch, mode, 0.0, grad);
}

std::vector<StepLog> resume_paired(TrainableModel& model, const PairDataset& train, const PairedTrainConfig& config,
                                   const std::function<void(const StepLog&)>& on_step) {
  config.validate();
  const Reference ref = make_reference(config.reference, config.process);
  return train_steps(model, ref, Conditioning::paired, dataset_sampler(train), config.train, kTagPaired,
                     config.train.steps, on_step);
}

PairedResult train_paired(const PairDataset& train, const PairedTrainConfig& config,
                          const std::function<void(const StepLog&)>& on_step) {
  config.validate();
  train.validate();
  const Reference ref = make_reference(config.reference, config.process);
  PairedResult out;
  out.model = init_model(ref, Conditioning::paired, train.dim, config.hidden, config.train.ema_decay,
                         config.train.seed, kTagPaired);
  out.log = train_steps(out.model, ref, Conditioning::paired, dataset_sampler(train), config.train, kTagPaired,
                        config.train.steps, on_step);
  return out;
}

GeneratedBatch sample_paired(const Reference& ref, const Mlp& model, LossMode mode, const DenseMatrix& x0,
                             const SampleOptions& options, std::uint64_t seed, Execution execution) {
  return generate(ref, predictor_of(model), Conditioning::paired, mode, x0, options, seed, 0, execution);
}

PairedEvaluation evaluate_paired(const Reference& ref, const Mlp& model, LossMode mode, const PairDataset& test,
                                 const std::string& dataset_name, std::size_t n_samples,
                                 const SampleOptions& options, std::uint64_t seed, Execution execution) {
  test.validate();
  const auto n = static_cast<Eigen::Index>(n_samples);
  DenseMatrix x0(test.dim, n), x1(test.dim, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const std::size_t p = static_cast<std::size_t>(j) % test.size();
    for (int i = 0; i < test.dim; ++i) {
      x0(i, j) = test.source(p)[static_cast<std::size_t>(i)];
      x1(i, j) = test.target(p)[static_cast<std::size_t>(i)];
    }
  }
  const GeneratedBatch gen = sample_paired(ref, model, mode, x0, options, seed, execution);
  PairedEvaluation out;
  out.n_samples = n_samples;
  out.wsd = wasserstein1(gen.terminal, x1);
  if (dataset_name == "gaussian_cross" || dataset_name == "tshape") {
    out.mode_accuracy = mode_accuracy(gen.terminal, x0, mode_layout(dataset_name));
  }
  return out;
}

double validation_loss(const Reference& ref, const Mlp& model, LossMode mode, Conditioning cond,
                       const PairDataset& data, double time_clamp, std::uint64_t seed) {
  data.validate();
  RngStream rng = make_stream(seed, StreamPurpose::evaluation, 0);
  const LossBatch batch = make_loss_batch(ref, cond, data.sources(), data.targets(), time_clamp, false, rng);
  return batch_loss(model, batch, mode, 0.0, nullptr).regression;
}

}  // namespace fbridge
