#include "fbridge/datasets.hpp"

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "fbridge/mafbm.hpp"

namespace fbridge {

std::string to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "train";
}

void PairDataset::push_back(std::span<const double> a, std::span<const double> b, Split s) {
  if (dim == 0) dim = static_cast<int>(a.size());
  if (a.size() != static_cast<std::size_t>(dim) || b.size() != a.size()) {
    throw std::invalid_argument("PairDataset::push_back: dimension mismatch");
  }
  x0.insert(x0.end(), a.begin(), a.end());
  x1.insert(x1.end(), b.begin(), b.end());
  split.push_back(s);
}

PairDataset PairDataset::subset(Split s) const {
  PairDataset out;
  out.dim = dim;
  for (std::size_t p = 0; p < size(); ++p) {
    if (split[p] == s) out.push_back(source(p), target(p), s);
  }
  return out;
}

DenseMatrix PairDataset::sources() const {
  return Eigen::Map<const DenseMatrix>(x0.data(), dim, static_cast<Eigen::Index>(size()));
}

DenseMatrix PairDataset::targets() const {
  return Eigen::Map<const DenseMatrix>(x1.data(), dim, static_cast<Eigen::Index>(size()));
}

void PairDataset::validate() const {
  if (dim < 1 || size() == 0) throw std::invalid_argument("dataset is empty");
  if (x1.size() != x0.size() || split.size() != size()) throw std::invalid_argument("dataset arrays disagree");
  for (std::size_t i = 0; i < x0.size(); ++i) {
    if (!std::isfinite(x0[i]) || !std::isfinite(x1[i])) throw std::invalid_argument("dataset has non-finite values");
  }
}

void assign_splits(PairDataset& data, std::size_t n_train, std::size_t n_val) {
  for (std::size_t p = 0; p < data.size(); ++p) {
    data.split[p] = p < n_train ? Split::train : (p < n_train + n_val ? Split::val : Split::test);
  }
}

double default_noise(const std::string& name) {
  if (name == "moons") return 0.1;
  if (name == "tshape" || name == "gaussian_cross") return 0.2;
  if (name == "gaussian_shift") return 1.0;
  throw InvalidConfig("dataset.name: unknown dataset '" + name + "'");
}

void ToySpec::validate() const {
  default_noise(name);
  if (n < 1) throw InvalidConfig("dataset.n: must be >= 1");
  if (!std::isfinite(noise)) throw InvalidConfig("dataset.noise: must be finite");
}

double ToySpec::effective_noise() const { return noise < 0.0 ? default_noise(name) : noise; }

namespace {

RngStream toy_stream(const ToySpec& spec) { return make_stream(spec.seed, StreamPurpose::dataset, 0); }

}  // namespace

PairDataset gen_moons(const ToySpec& spec) {
  spec.validate();
  const double noise = spec.effective_noise();
  RngStream rng = toy_stream(spec);
  std::vector<double> pts(2 * spec.n);
  for (std::size_t p = 0; p < spec.n; ++p) {
    const double theta = std::numbers::pi * rng.uniform();
    const bool outer = p % 2 == 0;
    double x = outer ? std::cos(theta) : 1.0 - std::cos(theta);
    double y = outer ? std::sin(theta) : 0.5 - std::sin(theta);
    x += noise * rng.normal();
    y += noise * rng.normal();
    pts[2 * p] = x;
    pts[2 * p + 1] = y;
  }
  double cx = 0.0, cy = 0.0;
  for (std::size_t p = 0; p < spec.n; ++p) {
    cx += pts[2 * p];
    cy += pts[2 * p + 1];
  }
  cx /= static_cast<double>(spec.n);
  cy /= static_cast<double>(spec.n);
  PairDataset data;
  data.dim = 2;
  for (std::size_t p = 0; p < spec.n; ++p) {
    const double a[2] = {pts[2 * p], pts[2 * p + 1]};
    // Clockwise quarter turn about the centroid: (u, v) -> (v, -u).
    const double b[2] = {cx + (a[1] - cy), cy - (a[0] - cx)};
    data.push_back(a, b);
  }
  return data;
}

PairDataset gen_tshape(const ToySpec& spec) {
  spec.validate();
  const double noise = spec.effective_noise();
  const ModeLayout layout = mode_layout("tshape");
  RngStream rng = toy_stream(spec);
  PairDataset data;
  data.dim = 2;
  for (std::size_t p = 0; p < spec.n; ++p) {
    const auto k = static_cast<std::size_t>(rng.uniform() < 0.5 ? 0 : 1);
    const auto& src = layout.source_centroids[k];
    const auto& dst = layout.target_centroids[static_cast<std::size_t>(layout.pairing[k])];
    const double e0 = noise * rng.normal();
    const double e1 = noise * rng.normal();
    const double a[2] = {src[0] + e0, src[1] + e1};
    const double b[2] = {dst[0] + e0, dst[1] + e1};
    data.push_back(a, b);
  }
  return data;
}

PairDataset gen_gaussian_cross(const ToySpec& spec) {
  spec.validate();
  const double noise = spec.effective_noise();
  const ModeLayout layout = mode_layout("gaussian_cross");
  RngStream rng = toy_stream(spec);
  PairDataset data;
  data.dim = 2;
  for (std::size_t p = 0; p < spec.n; ++p) {
    const auto k = static_cast<std::size_t>(rng.uniform() < 0.5 ? 0 : 1);
    const auto& src = layout.source_centroids[k];
    const auto& dst = layout.target_centroids[static_cast<std::size_t>(layout.pairing[k])];
    const double a[2] = {src[0] + noise * rng.normal(), src[1] + noise * rng.normal()};
    const double b[2] = {dst[0] + noise * rng.normal(), dst[1] + noise * rng.normal()};
    data.push_back(a, b);
  }
  return data;
}

PairDataset gen_gaussian_shift(const ToySpec& spec) {
  spec.validate();
  const double noise = spec.effective_noise();
  RngStream rng = toy_stream(spec);
  PairDataset data;
  data.dim = 1;
  for (std::size_t p = 0; p < spec.n; ++p) {
    const double a = noise * rng.normal();
    const double b = 2.0 + noise * rng.normal();
    data.push_back(std::span<const double>(&a, 1), std::span<const double>(&b, 1));
  }
  return data;
}

PairDataset generate_toy(const ToySpec& spec) {
  if (spec.name == "moons") return gen_moons(spec);
  if (spec.name == "tshape") return gen_tshape(spec);
  if (spec.name == "gaussian_cross") return gen_gaussian_cross(spec);
  if (spec.name == "gaussian_shift") return gen_gaussian_shift(spec);
  throw InvalidConfig("dataset.name: unknown dataset '" + spec.name + "'");
}

ModeLayout mode_layout(const std::string& name) {
  ModeLayout m;
  if (name == "gaussian_cross") {
    m.source_centroids = {{-2.0, -2.0}, {-2.0, 2.0}};
    m.target_centroids = {{2.0, 2.0}, {2.0, -2.0}};
    m.pairing = {0, 1};
  } else if (name == "tshape") {
    m.source_centroids = {{-2.0, 1.0}, {0.0, -2.0}};
    m.target_centroids = {{2.0, 1.0}, {0.0, 1.0}};
    m.pairing = {0, 1};
  } else {
    throw std::invalid_argument("no mode layout for dataset '" + name + "'");
  }
  return m;
}

void write_dataset_csv(std::ostream& out, const PairDataset& data, const std::string& comment) {
  if (!comment.empty()) out << "# " << comment << '\n';
  for (int i = 0; i < data.dim; ++i) out << (i ? "," : "") << "x0_" << i + 1;
  for (int i = 0; i < data.dim; ++i) out << ",x1_" << i + 1;
  out << '\n';
  char buf[32];
  for (std::size_t p = 0; p < data.size(); ++p) {
    for (int i = 0; i < data.dim; ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", data.source(p)[static_cast<std::size_t>(i)]);
      out << (i ? "," : "") << buf;
    }
    for (int i = 0; i < data.dim; ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", data.target(p)[static_cast<std::size_t>(i)]);
      out << ',' << buf;
    }
    out << '\n';
  }
}

PairDataset read_dataset_csv(std::istream& in) {
  std::string line;
  int columns = -1;
  PairDataset data;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (columns < 0) {
      columns = static_cast<int>(cells.size());
      if (columns < 2 || columns % 2 != 0 || cells[0] != "x0_1") {
        throw std::invalid_argument("dataset CSV: unexpected header '" + line + "'");
      }
      data.dim = columns / 2;
      continue;
    }
    if (static_cast<int>(cells.size()) != columns) {
      throw std::invalid_argument("dataset CSV: wrong column count on line " + std::to_string(line_no));
    }
    std::vector<double> v(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      try {
        v[i] = std::stod(cells[i]);
      } catch (const std::exception&) {
        throw std::invalid_argument("dataset CSV: bad number on line " + std::to_string(line_no));
      }
    }
    const auto d = static_cast<std::size_t>(data.dim);
    data.push_back(std::span<const double>(v.data(), d), std::span<const double>(v.data() + d, d));
  }
  data.validate();
  return data;
}

void MarginalPools::validate() const {
  if (dim < 1 || pool0.empty() || pool1.empty()) throw std::invalid_argument("marginal pools must be nonempty");
}

MarginalPools pools_from(const PairDataset& data) {
  MarginalPools pools;
  pools.dim = data.dim;
  pools.pool0 = data.x0;
  pools.pool1 = data.x1;
  return pools;
}

}  // namespace fbridge
