#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

namespace oracle {

double w1_brute_force(std::vector<double> a, std::vector<double> b) {
  std::vector<int> perm(b.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double cost = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) cost += std::abs(a[i] - b[static_cast<std::size_t>(perm[i])]);
    best = std::min(best, cost / static_cast<double>(a.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double cross_entry_nested(double gamma, double hurst, double horizon) {
  boost::math::quadrature::tanh_sinh<double> inner_rule;
  boost::math::quadrature::tanh_sinh<double> outer_rule;
  const double a = hurst + 0.5;
  auto inner = [&](double t) {
    if (t <= 0.0) return 0.0;
    auto f = [&](double u) { return std::pow(u, a - 1.0) * std::exp(-gamma * u); };
    return inner_rule.integrate(f, 0.0, t) / std::tgamma(a);
  };
  return outer_rule.integrate(inner, 0.0, horizon);
}

double gram_entry_quadrature(double gk, double gl, double horizon) {
  // Cov(Y^k_t, Y^l_t) = int_0^t e^{-(gk+gl)(t-u)} du, integrated again over t.
  auto cov = [&](double t) {
    auto f = [&](double u) { return std::exp(-(gk + gl) * (t - u)); };
    return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, 0.0, t, 8, 1e-14);
  };
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(cov, 0.0, horizon, 8, 1e-13);
}

void ExactOu::advance(std::vector<double>& block, double s, double u, const std::function<double()>& normals) const {
  const int k = static_cast<int>(gamma.size());
  const double h = u - s;
  Matrix cov(k, k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      const double g = gamma[static_cast<std::size_t>(i)] + gamma[static_cast<std::size_t>(j)];
      cov(i, j) = -std::expm1(-g * h) / g;
    }
  }
  const Matrix lower = Eigen::LLT<Matrix>(cov).matrixL();
  Vec xi(k);
  for (int i = 0; i < k; ++i) xi(i) = normals();
  const Vec noise = lower * xi;
  double dx = 0.0;
  for (int i = 0; i < k; ++i) {
    const double old = block[static_cast<std::size_t>(i + 1)];
    const double next = std::exp(-gamma[static_cast<std::size_t>(i)] * h) * old + noise(i);
    dx += omega[static_cast<std::size_t>(i)] * (next - old);
    block[static_cast<std::size_t>(i + 1)] = next;
  }
  block[0] += sqrt_eps * dx;
}

std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::vector<double> p, double h) {
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    const double step = h * std::max(1.0, std::abs(keep));
    p[i] = keep + step;
    const double up = f(p);
    p[i] = keep - step;
    const double down = f(p);
    p[i] = keep;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

double sinkhorn_gaussian_correlation(double s2, double shift, int grid, double half_width) {
  const int n = grid;
  Vec x(n), y(n), log_mu(n), log_nu(n);
  for (int i = 0; i < n; ++i) {
    const double z = -half_width + 2.0 * half_width * i / (n - 1);
    x(i) = z;
    y(i) = z + shift;
    log_mu(i) = -0.5 * z * z;
    log_nu(i) = -0.5 * z * z;
  }
  auto normalize = [](Vec& lw) {
    const double m = lw.maxCoeff();
    lw.array() -= m + std::log((lw.array() - m).exp().sum());
  };
  normalize(log_mu);
  normalize(log_nu);
  Matrix log_k(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) log_k(i, j) = -(x(i) - y(j)) * (x(i) - y(j)) / (2.0 * s2);
  }
  Vec f = Vec::Zero(n), g = Vec::Zero(n);
  auto lse = [](const Vec& v) {
    const double m = v.maxCoeff();
    return m + std::log((v.array() - m).exp().sum());
  };
  for (int it = 0; it < 5000; ++it) {
    const Vec before = g;
    for (int i = 0; i < n; ++i) f(i) = log_mu(i) - lse(log_k.row(i).transpose() + g);
    for (int j = 0; j < n; ++j) g(j) = log_nu(j) - lse(log_k.col(j) + f);
    if ((g - before).cwiseAbs().maxCoeff() < 1e-12) break;
  }
  double ex = 0, ey = 0, exx = 0, eyy = 0, exy = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double w = std::exp(f(i) + g(j) + log_k(i, j));
      ex += w * x(i);
      ey += w * y(j);
      exx += w * x(i) * x(i);
      eyy += w * y(j) * y(j);
      exy += w * x(i) * y(j);
    }
  }
  return (exy - ex * ey) / std::sqrt((exx - ex * ex) * (eyy - ey * ey));
}

Moments sample_moments(const Matrix& samples) {
  const auto n = static_cast<double>(samples.rows());
  const auto p = samples.cols();
  Moments m;
  m.mean = samples.colwise().mean().transpose();
  const Matrix centered = samples.rowwise() - m.mean.transpose();
  m.cov = centered.transpose() * centered / (n - 1.0);
  m.mean_se = (m.cov.diagonal() / n).cwiseSqrt();
  m.cov_se.resize(p, p);
  for (Eigen::Index a = 0; a < p; ++a) {
    for (Eigen::Index b = 0; b < p; ++b) {
      const Vec prod = centered.col(a).cwiseProduct(centered.col(b));
      const double mu = prod.mean();
      m.cov_se(a, b) = std::sqrt((prod.array() - mu).square().sum() / (n - 1.0) / n);
    }
  }
  return m;
}

}  // namespace oracle
