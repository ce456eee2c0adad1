#include <doctest.h>

#include <cmath>

#include "fbridge/paired.hpp"
#include "support/oracles.hpp"

using namespace fbridge;

namespace {

ProcessConfig process(double h, int k = 3, double eps = 1.0) {
  ProcessConfig c;
  c.hurst = h;
  c.num_ou = k;
  c.epsilon = eps;
  return c;
}

Mlp tiny_model(Conditioning cond, int dim, std::uint64_t seed) {
  MlpConfig c;
  c.input_dim = network_input_dim(cond, dim);
  c.output_dim = dim;
  c.hidden = {6, 5};
  RngStream rng(seed, 0);
  return Mlp(c, rng);
}

void endpoints(int dim, int n, RngStream& rng, DenseMatrix& x0, DenseMatrix& x1) {
  x0.resize(dim, n);
  x1.resize(dim, n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < dim; ++i) {
      x0(i, j) = rng.normal();
      x1(i, j) = 2.0 + 0.5 * rng.normal();
    }
  }
}

// Max relative gap between analytic and finite-difference gradients.
double gradient_gap(const Mlp& model, const LossBatch& batch, LossMode mode, double lambda) {
  std::vector<double> grad;
  batch_loss(model, batch, mode, lambda, &grad);
  const std::vector<double> p0(model.parameters().begin(), model.parameters().end());
  auto f = [&](std::span<const double> p) {
    Mlp m = model;
    m.set_parameters(p);
    return batch_loss(m, batch, mode, lambda, nullptr).total;
  };
  const auto fd = oracle::central_difference(f, p0, 1e-5);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    num += (grad[i] - fd[i]) * (grad[i] - fd[i]);
    den += fd[i] * fd[i];
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("loss gradients match finite differences") {
  const Reference frac = Reference::fractional(process(0.3));
  const Reference brown = Reference::brownian(0.5);
  RngStream rng(31, 0);
  DenseMatrix x0, x1;
  endpoints(2, 8, rng, x0, x1);
  for (LossMode mode : {LossMode::endpoint, LossMode::drift}) {
    CAPTURE(to_string(mode));
    for (Conditioning cond : {Conditioning::paired, Conditioning::unpaired}) {
      const Mlp m = tiny_model(cond, 2, 4);
      const LossBatch fb = make_loss_batch(frac, cond, x0, x1, 0.05, false, rng);
      CHECK(gradient_gap(m, fb, mode, 0.0) < 1e-6);
      const LossBatch bb = make_loss_batch(brown, cond, x0, x1, 0.05, false, rng);
      CHECK(gradient_gap(m, bb, mode, 0.0) < 1e-6);
    }
    const Mlp m = tiny_model(Conditioning::unpaired, 2, 5);
    const LossBatch rb = make_loss_batch(frac, Conditioning::unpaired, x0, x1, 0.05, true, rng);
    CHECK(gradient_gap(m, rb, mode, 0.7) < 1e-6);
  }
}

TEST_CASE("batch layout: times, features and targets") {
  const Reference ref = Reference::fractional(process(0.6));
  RngStream rng(32, 0);
  DenseMatrix x0, x1;
  endpoints(2, 50, rng, x0, x1);
  const LossBatch b = make_loss_batch(ref, Conditioning::paired, x0, x1, 0.01, false, rng);
  CHECK(b.features.rows() == 5);
  for (std::size_t j = 0; j < 50; ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    CHECK(b.times[j] >= 0.0);
    CHECK(b.times[j] < 0.99);
    CHECK(b.features(0, c) == b.times[j]);
    CHECK(b.features(1, c) == x0(0, c));
    CHECK(b.features(2, c) == x0(1, c));
    CHECK(b.residual(0, c) == doctest::Approx(x1(0, c) - b.features(3, c)));
    CHECK(b.scale[c] == doctest::Approx(ref.kernel().terminal_variance(b.times[j])));
  }
  const Reference bm = Reference::brownian(1.0);
  const LossBatch u = make_loss_batch(bm, Conditioning::unpaired, x0, x1, 0.01, false, rng);
  CHECK(u.features.rows() == 3);
  CHECK(u.scale[7] == doctest::Approx(1.0 - u.times[7]));
  CHECK_THROWS_AS(make_loss_batch(bm, Conditioning::unpaired, x0, x1, 0.01, true, rng), std::invalid_argument);
}

TEST_CASE("the two loss modes share their minimizer") {
  const Reference ref = Reference::fractional(process(0.4));
  RngStream rng(33, 0);
  DenseMatrix x0, x1;
  endpoints(1, 20, rng, x0, x1);
  const LossBatch b = make_loss_batch(ref, Conditioning::paired, x0, x1, 0.01, false, rng);
  // endpoint output x1 - m and drift output (x1 - m)/s both give zero loss and the same drift factor
  DenseMatrix v_end = drift_factor(b.residual, b, LossMode::endpoint);
  DenseMatrix v_drift = b.residual;
  for (Eigen::Index j = 0; j < v_drift.cols(); ++j) v_drift.col(j) /= b.scale[j];
  CHECK((v_end - drift_factor(v_drift, b, LossMode::drift)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("the reverse-drift residual vanishes at the analytic drift and equals its literal form") {
  for (double h : {0.2, 0.5, 0.8}) {
    const BridgeKernel k(process(h, 3, 0.7));
    RngStream rng(34, 0);
    for (double t : {0.1, 0.5, 0.9}) {
      const PinnedMarginal pm(k, t);
      const std::vector<double> x0{0.4}, x1{-1.1};
      const AugmentedState z = pm.sample(x0, x1, rng);
      const double mu = k.terminal_mean(z.block(0), t);
      const double v_star = (x1[0] - mu) / k.terminal_variance(t);
      const Vector r = regularizer_residual(k, t, z.block(0), x0[0], x1[0], v_star);
      const Eigen::Map<const Vector> y(z.data().data() + 1, 3);
      CHECK(r.norm() <= 1e-9 * (1.0 + y.norm()));

      // literal form with an explicit solve: S (c v - Lambda^{-1} y) + y - m_bar
      Vector c(3);
      for (int i = 0; i < 3; ++i) c(i) = k.sqrt_epsilon() * k.omega()[i] * std::exp(-k.gamma()[i] * (1 - t));
      const DenseMatrix lam = k.ou_marginal_covariance(t);
      const Vector lam_inv_y = lam.fullPivLu().solve(y);
      const Vector m_bar = pm.gain().tail(3) * (x1[0] - x0[0]);
      for (double v : {v_star, v_star + 0.3, -2.0}) {
        const Vector lit = pm.ou_covariance() * (c * v - lam_inv_y) + y - m_bar;
        const Vector got = regularizer_residual(k, t, z.block(0), x0[0], x1[0], v);
        CHECK((lit - got).norm() <= 1e-6 * (1.0 + lit.norm() + y.norm()));
      }
    }
  }
}

TEST_CASE("time clamp and learning-rate schedule") {
  CHECK(clamped_time(0, 100, 1e-3) == 0.0);
  CHECK(clamped_time(99, 100, 1e-3) == doctest::Approx(0.99));
  CHECK(clamped_time(3999, 4000, 1e-3) == doctest::Approx(1.0 - 2.5e-4));
  TrainConfig c;
  c.steps = 100;
  CHECK(c.learning_rate(50) == c.lr);
  c.lr_final = 1e-4;
  CHECK(c.learning_rate(0) == doctest::Approx(1e-3));
  CHECK(c.learning_rate(100) == doctest::Approx(1e-4));
  CHECK(c.learning_rate(50) == doctest::Approx(0.5 * (1e-3 + 1e-4)));
  c.warmup_steps = 10;
  CHECK(c.learning_rate(0) == doctest::Approx(1e-4));
  c.lr_final = 2.0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("training.lr_final"), InvalidConfig);
}

TEST_CASE("training resumed in chunks is bit-identical to one run") {
  const Reference ref = Reference::fractional(process(0.5));
  PairDataset data;
  RngStream rng(35, 0);
  for (int p = 0; p < 64; ++p) {
    const double a = rng.normal();
    const double b[1] = {a + 1.0};
    data.push_back(std::span<const double>(&a, 1), b);
  }
  TrainConfig tc;
  tc.batch_size = 16;
  tc.seed = 3;
  const TrainableModel start = init_model(ref, Conditioning::paired, 1, {8, 8}, 0.9, 3, kTagPaired);
  TrainableModel one = start, two = start;
  train_steps(one, ref, Conditioning::paired, dataset_sampler(data), tc, kTagPaired, 12);
  train_steps(two, ref, Conditioning::paired, dataset_sampler(data), tc, kTagPaired, 5);
  // round trip through a checkpoint in between
  two = checkpoint_from_json(checkpoint_to_json(two, {}));
  train_steps(two, ref, Conditioning::paired, dataset_sampler(data), tc, kTagPaired, 12);
  CHECK(std::equal(one.model.parameters().begin(), one.model.parameters().end(), two.model.parameters().begin()));
  CHECK(one.ema == two.ema);
}

TEST_CASE("sampling with the exact drift reproduces the pinned bridge") {
  const ProcessConfig pc = process(0.3, 4, 0.8);
  const Reference ref = Reference::fractional(pc);
  const int n = 30;
  DenseMatrix x0(1, n);
  for (int j = 0; j < n; ++j) x0(0, j) = 0.1 * j;
  // Dirac coupling x1 = x0 + 2, known to the predictor through the x0 feature
  auto exact = [&](LossMode mode) {
    return [mode, &ref](const DenseMatrix& f) {
      DenseMatrix out(1, f.cols());
      for (Eigen::Index j = 0; j < f.cols(); ++j) {
        const double resid = f(1, j) + 2.0 - f(2, j);
        out(0, j) = mode == LossMode::endpoint ? resid : resid / ref.target_scale(f(0, j));
      }
      return out;
    };
  };
  SampleOptions so;
  so.n_steps = 100;
  std::vector<double> a(x0.data(), x0.data() + n), b(n);
  for (int j = 0; j < n; ++j) b[static_cast<std::size_t>(j)] = a[static_cast<std::size_t>(j)] + 2.0;
  EmOptions em;
  em.n_steps = 100;
  const PathBatch pb = simulate_pinned_em_batch(ref.kernel(), a, b, 1, em, {}, 19, Execution::serial);
  for (LossMode mode : {LossMode::endpoint, LossMode::drift}) {
    const GeneratedBatch g1 = generate(ref, exact(mode), Conditioning::paired, mode, x0, so, 19, 0, Execution::serial);
    const GeneratedBatch g2 = generate(ref, exact(mode), Conditioning::paired, mode, x0, so, 19, 0, Execution::parallel);
    CHECK(g1.terminal == g2.terminal);
    for (int j = 0; j < n; ++j) CHECK(g1.terminal(0, j) == doctest::Approx(pb.terminal[static_cast<std::size_t>(j)]).epsilon(1e-8));
  }
}

TEST_CASE("Brownian sampling with the exact drift lands on the target") {
  const Reference ref = Reference::brownian(0.04);
  const int n = 400;
  DenseMatrix x0 = DenseMatrix::Zero(2, n);
  auto exact = [](const DenseMatrix& f) {
    DenseMatrix out(2, f.cols());
    for (Eigen::Index j = 0; j < f.cols(); ++j) {
      out(0, j) = 1.0 - f(3, j);
      out(1, j) = -1.0 - f(4, j);
    }
    return out;
  };
  SampleOptions so;
  so.record = true;
  so.record_every = 25;
  const GeneratedBatch g = generate(ref, exact, Conditioning::paired, LossMode::endpoint, x0, so, 2, 0, Execution::parallel);
  CHECK(g.trajectories.size() == static_cast<std::size_t>(n));
  CHECK(g.trajectories[0].times.size() == 5);
  CHECK(g.trajectories[0].times.back() == 1.0);
  const double mean0 = g.terminal.row(0).mean();
  CHECK(std::abs(mean0 - 1.0) < 0.01);
  CHECK(std::abs(g.terminal.row(1).mean() + 1.0) < 0.01);
  // last step leaves N(0, eps dt) noise
  const double rms = std::sqrt((g.terminal.row(0).array() - 1.0).square().mean());
  CHECK(rms == doctest::Approx(0.2 * 0.1).epsilon(0.15));
}
