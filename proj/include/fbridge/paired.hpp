#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fbridge/datasets.hpp"
#include "fbridge/training.hpp"

namespace fbridge {

/// Stream tags keeping the training batches of different models apart.
inline constexpr std::uint64_t kTagPaired = 0;
inline constexpr std::uint64_t kTagForward = 1;
inline constexpr std::uint64_t kTagBackward = 2;

struct PairedTrainConfig {
  ProcessConfig process;
  ReferenceKind reference = ReferenceKind::fractional;
  std::vector<int> hidden = {128, 128, 128};
  TrainConfig train;

  void validate() const;
};

Reference make_reference(ReferenceKind kind, const ProcessConfig& process);

/// Uniform draws with replacement from the pairs of `data`.
CouplingSampler dataset_sampler(const PairDataset& data);

/// Paired regression loss on explicit endpoint pairs (dim x n). Draws times
/// and bridge states from `rng`; fills `grad` when non-null.
LossValue paired_loss(const Reference& ref, const Mlp& model, const DenseMatrix& x0, const DenseMatrix& x1,
                      LossMode mode, double time_clamp, RngStream& rng, std::vector<double>* grad);

struct PairedResult {
  TrainableModel model;
  std::vector<StepLog> log;
};

PairedResult train_paired(const PairDataset& train, const PairedTrainConfig& config,
                          const std::function<void(const StepLog&)>& on_step = {});

/// Continues training an existing (e.g. restored) model up to config.train.steps.
std::vector<StepLog> resume_paired(TrainableModel& model, const PairDataset& train, const PairedTrainConfig& config,
                                   const std::function<void(const StepLog&)>& on_step = {});

GeneratedBatch sample_paired(const Reference& ref, const Mlp& model, LossMode mode, const DenseMatrix& x0,
                             const SampleOptions& options, std::uint64_t seed,
                             Execution execution = Execution::parallel);

struct PairedEvaluation {
  double wsd = 0.0;
  double mode_accuracy = -1.0;  // negative when the dataset has no mode layout
  std::size_t n_samples = 0;
};

/// One trajectory per test source (the first n_samples, cycling if needed);
/// W1 between generated endpoints and the matching test targets.
PairedEvaluation evaluate_paired(const Reference& ref, const Mlp& model, LossMode mode, const PairDataset& test,
                                 const std::string& dataset_name, std::size_t n_samples,
                                 const SampleOptions& options, std::uint64_t seed,
                                 Execution execution = Execution::parallel);

/// Mean regression loss over a fixed set of pairs with fixed draws.
double validation_loss(const Reference& ref, const Mlp& model, LossMode mode, Conditioning cond,
                       const PairDataset& data, double time_clamp, std::uint64_t seed);

}  // namespace fbridge
