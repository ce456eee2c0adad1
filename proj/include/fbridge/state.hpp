#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace fbridge {

/// Augmented state z = (x, y) for d data dimensions and K OU processes.
///
/// Stored as d contiguous blocks of K + 1 values, block i being
/// (x_i, y_{i,1}, ..., y_{i,K}). Every dimension evolves independently, so
/// kernels work block by block.
class AugmentedState {
 public:
  AugmentedState() = default;
  AugmentedState(int dim, int num_ou) : dim_(dim), num_ou_(num_ou), data_(block_count(dim, num_ou)) {}

  int dim() const { return dim_; }
  int num_ou() const { return num_ou_; }
  int block_size() const { return num_ou_ + 1; }

  double& x(int i) { return data_[static_cast<std::size_t>(i) * block_size()]; }
  double x(int i) const { return data_[static_cast<std::size_t>(i) * block_size()]; }
  double& y(int i, int k) { return data_[static_cast<std::size_t>(i) * block_size() + 1 + k]; }
  double y(int i, int k) const { return data_[static_cast<std::size_t>(i) * block_size() + 1 + k]; }

  std::span<double> block(int i) {
    return {data_.data() + static_cast<std::size_t>(i) * block_size(), static_cast<std::size_t>(block_size())};
  }
  std::span<const double> block(int i) const {
    return {data_.data() + static_cast<std::size_t>(i) * block_size(), static_cast<std::size_t>(block_size())};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  std::vector<double> xs() const {
    std::vector<double> out(static_cast<std::size_t>(dim_));
    for (int i = 0; i < dim_; ++i) out[static_cast<std::size_t>(i)] = x(i);
    return out;
  }

  /// State at the start of every bridge: x = x0, all OU components zero.
  static AugmentedState initial(std::span<const double> x0, int num_ou) {
    AugmentedState z(static_cast<int>(x0.size()), num_ou);
    for (int i = 0; i < z.dim(); ++i) z.x(i) = x0[static_cast<std::size_t>(i)];
    return z;
  }

 private:
  static std::size_t block_count(int dim, int num_ou) {
    return static_cast<std::size_t>(dim) * static_cast<std::size_t>(num_ou + 1);
  }

  int dim_ = 0;
  int num_ou_ = 0;
  std::vector<double> data_;
};

}  // namespace fbridge
