#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fbridge/numerics.hpp"
#include "fbridge/rng.hpp"

namespace fbridge {

enum class Split { train, val, test };

std::string to_string(Split s);

/// N endpoint pairs (x0, x1), stored row-major (pair p at [p * dim, (p+1) * dim)).
struct PairDataset {
  int dim = 0;
  std::vector<double> x0;
  std::vector<double> x1;
  std::vector<Split> split;

  std::size_t size() const { return dim == 0 ? 0 : x0.size() / static_cast<std::size_t>(dim); }
  std::span<const double> source(std::size_t p) const {
    return {x0.data() + p * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
  std::span<const double> target(std::size_t p) const {
    return {x1.data() + p * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
  void push_back(std::span<const double> a, std::span<const double> b, Split s = Split::train);
  /// Pairs carrying the given tag.
  PairDataset subset(Split s) const;
  /// dim x count matrices.
  DenseMatrix sources() const;
  DenseMatrix targets() const;
  /// Throws std::invalid_argument on empty or non-finite data.
  void validate() const;
};

/// Tags the first n_train pairs train, the next n_val val and the rest test.
void assign_splits(PairDataset& data, std::size_t n_train, std::size_t n_val);

struct ToySpec {
  std::string name = "moons";  // moons | tshape | gaussian_cross | gaussian_shift
  std::size_t n = 1000;
  double noise = -1.0;         // negative selects the dataset default
  std::uint64_t seed = 0;

  void validate() const;
  double effective_noise() const;
};

double default_noise(const std::string& name);

PairDataset gen_moons(const ToySpec& spec);
PairDataset gen_tshape(const ToySpec& spec);
PairDataset gen_gaussian_cross(const ToySpec& spec);
/// 1D N(0,1) sources and independent N(2,1) targets (an unpaired toy).
PairDataset gen_gaussian_shift(const ToySpec& spec);
PairDataset generate_toy(const ToySpec& spec);

/// Mode centroids and the source-to-target mode pairing of a mixture toy.
struct ModeLayout {
  std::vector<std::vector<double>> source_centroids;
  std::vector<std::vector<double>> target_centroids;
  std::vector<int> pairing;  // source mode k maps to target mode pairing[k]
};

/// Layout of gaussian_cross or tshape; throws for other names.
ModeLayout mode_layout(const std::string& name);

void write_dataset_csv(std::ostream& out, const PairDataset& data, const std::string& comment = {});
/// Reads the `x0_1,...,x1_d` layout; lines starting with '#' are skipped.
PairDataset read_dataset_csv(std::istream& in);

/// Marginal samples of Pi_0 and Pi_1 for unpaired training.
struct MarginalPools {
  int dim = 0;
  std::vector<double> pool0;
  std::vector<double> pool1;

  std::size_t size0() const { return pool0.size() / static_cast<std::size_t>(dim); }
  std::size_t size1() const { return pool1.size() / static_cast<std::size_t>(dim); }
  void validate() const;
};

MarginalPools pools_from(const PairDataset& data);

}  // namespace fbridge
