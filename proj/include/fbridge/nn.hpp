#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fbridge/numerics.hpp"
#include "fbridge/rng.hpp"

namespace fbridge {

class ShapeMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Activation { silu, identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct MlpConfig {
  int input_dim = 1;
  int output_dim = 1;
  std::vector<int> hidden = {128, 128, 128};
  Activation activation = Activation::silu;
  /// Start the output layer at zero so the initial model emits 0.
  bool zero_last_layer = false;
};

/// Activations kept from a forward pass for backpropagation.
struct ForwardCache {
  std::vector<DenseMatrix> inputs;  // input to each layer (layer 0 gets the network input)
  std::vector<DenseMatrix> pre;     // pre-activations of hidden layers
};

/// Fully connected network, samples stored as columns.
///
/// All weights and biases live in one flat vector; layer l holds its weight
/// matrix (out x in, column-major) followed by its bias.
class Mlp {
 public:
  Mlp() = default;
  /// He-style normal initialization from `rng`.
  Mlp(const MlpConfig& config, RngStream& rng);
  /// Uninitialized (all-zero) parameters.
  explicit Mlp(const MlpConfig& config);

  const MlpConfig& config() const { return config_; }
  int num_layers() const { return static_cast<int>(offsets_.size()); }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  void set_parameters(std::span<const double> values);

  Eigen::Map<DenseMatrix> weight(int layer);
  Eigen::Map<const DenseMatrix> weight(int layer) const;
  Eigen::Map<Vector> bias(int layer);
  Eigen::Map<const Vector> bias(int layer) const;

  DenseMatrix forward(const DenseMatrix& input) const;
  DenseMatrix forward(const DenseMatrix& input, ForwardCache& cache) const;
  std::vector<double> forward_one(std::span<const double> input) const;

  /// Gradient of a loss with respect to all parameters given dL/d(output).
  /// Writes (not accumulates) into `grad`, resized to parameter_count().
  void backward(const ForwardCache& cache, const DenseMatrix& grad_output, std::vector<double>& grad) const;

 private:
  struct Layer {
    std::size_t offset;
    int in;
    int out;
  };
  void layout();

  MlpConfig config_;
  std::vector<Layer> offsets_;
  // Aligned so Eigen's vectorized kernels see the same layout on every run;
  // otherwise the summation order, and the last bits, follow the heap address.
  std::vector<double, Eigen::aligned_allocator<double>> params_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(std::size_t n, AdamConfig config = {});

  const AdamConfig& config() const { return config_; }
  std::uint64_t step() const { return step_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }
  void restore(std::vector<double> m, std::vector<double> v, std::uint64_t step);

  /// One bias-corrected Adam update of `params` in place.
  void update(std::span<double> params, std::span<const double> grad, double lr);

 private:
  AdamConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::uint64_t step_ = 0;
};

/// A model with its optimizer and exponential moving average of weights.
struct TrainableModel {
  Mlp model;
  Adam adam;
  std::vector<double> ema;
  double ema_decay = 0.999;
  std::int64_t step = 0;

  TrainableModel() = default;
  TrainableModel(Mlp m, double decay);

  /// Copy of the model carrying the EMA weights.
  Mlp ema_model() const;
};

/// Checks the gradient, applies Adam and refreshes the EMA.
/// Throws NonFiniteGradient (leaving the model untouched) on NaN or inf.
void backward_and_step(TrainableModel& model, std::span<const double> grad, double lr);

struct CheckpointMeta {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string role;  // e.g. "paired", "forward", "backward"
};

std::string checkpoint_to_json(const TrainableModel& model, const CheckpointMeta& meta);
TrainableModel checkpoint_from_json(const std::string& text, CheckpointMeta* meta = nullptr);

}  // namespace fbridge
