#pragma once

#include <span>
#include <stdexcept>

#include "fbridge/datasets.hpp"
#include "fbridge/numerics.hpp"

namespace fbridge {

class EmptySet : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// 1D Wasserstein-1 distance between two equal-size samples (sorted quantile matching).
double wasserstein1_1d(std::span<const double> a, std::span<const double> b);

/// Per-dimension empirical W1 averaged over dimensions. Point sets are
/// row-major (point p at [p * dim, (p+1) * dim)). When the counts differ the
/// larger set is subsampled with an even stride.
double wasserstein1(std::span<const double> a, std::span<const double> b, int dim);

/// Same for dim x n matrices (points as columns).
double wasserstein1(const DenseMatrix& a, const DenseMatrix& b);

/// Fraction of generated endpoints whose nearest target centroid is the one
/// paired with their source's nearest source centroid. Points as columns.
double mode_accuracy(const DenseMatrix& generated, const DenseMatrix& sources, const ModeLayout& layout);

/// Pearson correlation of two equal-length samples.
double correlation(std::span<const double> a, std::span<const double> b);

/// Mean over dimensions of the Pearson correlation between row i of a and row i of b.
double coupling_correlation(const DenseMatrix& a, const DenseMatrix& b);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
};

MeanStd mean_std(std::span<const double> values);

}  // namespace fbridge
