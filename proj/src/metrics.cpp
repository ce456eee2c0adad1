#include "fbridge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace fbridge {

namespace {

std::vector<double> strided_column(std::span<const double> pts, int dim, int i, std::size_t count, std::size_t take) {
  std::vector<double> out(take);
  for (std::size_t k = 0; k < take; ++k) {
    const std::size_t p = k * count / take;
    out[k] = pts[p * static_cast<std::size_t>(dim) + static_cast<std::size_t>(i)];
  }
  return out;
}

std::size_t nearest(const std::vector<std::vector<double>>& centroids, const double* x, Eigen::Index dim) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centroids.size(); ++k) {
    double d = 0.0;
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double e = x[i] - centroids[k][static_cast<std::size_t>(i)];
      d += e * e;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

}  // namespace

double wasserstein1_1d(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw EmptySet("wasserstein1: empty sample");
  if (a.size() != b.size()) throw std::invalid_argument("wasserstein1_1d: sample sizes differ");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double sum = 0.0;
  for (std::size_t k = 0; k < sa.size(); ++k) sum += std::abs(sa[k] - sb[k]);
  return sum / static_cast<double>(sa.size());
}

double wasserstein1(std::span<const double> a, std::span<const double> b, int dim) {
  if (dim < 1) throw std::invalid_argument("wasserstein1: dim must be >= 1");
  const std::size_t na = a.size() / static_cast<std::size_t>(dim);
  const std::size_t nb = b.size() / static_cast<std::size_t>(dim);
  if (na == 0 || nb == 0) throw EmptySet("wasserstein1: empty point set");
  const std::size_t n = std::min(na, nb);
  double total = 0.0;
  for (int i = 0; i < dim; ++i) {
    total += wasserstein1_1d(strided_column(a, dim, i, na, n), strided_column(b, dim, i, nb, n));
  }
  return total / dim;
}

double wasserstein1(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("wasserstein1: dimension mismatch");
  return wasserstein1(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
                      std::span<const double>(b.data(), static_cast<std::size_t>(b.size())),
                      static_cast<int>(a.rows()));
}

double mode_accuracy(const DenseMatrix& generated, const DenseMatrix& sources, const ModeLayout& layout) {
  if (generated.cols() != sources.cols() || generated.rows() != sources.rows()) {
    throw std::invalid_argument("mode_accuracy: generated and source sets differ in shape");
  }
  if (generated.cols() == 0) throw EmptySet("mode_accuracy: empty set");
  std::size_t hits = 0;
  for (Eigen::Index j = 0; j < generated.cols(); ++j) {
    const std::size_t src = nearest(layout.source_centroids, sources.col(j).data(), sources.rows());
    const std::size_t dst = nearest(layout.target_centroids, generated.col(j).data(), generated.rows());
    if (static_cast<int>(dst) == layout.pairing[src]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(generated.cols());
}

double correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("correlation: need two equal samples");
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ma += a[k];
    mb += b[k];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

double coupling_correlation(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("coupling_correlation: shape mismatch");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const Vector ra = a.row(i).transpose();
    const Vector rb = b.row(i).transpose();
    sum += correlation(std::span<const double>(ra.data(), static_cast<std::size_t>(ra.size())),
                       std::span<const double>(rb.data(), static_cast<std::size_t>(rb.size())));
  }
  return sum / static_cast<double>(a.rows());
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

}  // namespace fbridge
