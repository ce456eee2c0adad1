#include "fbridge/nn.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "fbridge/version.hpp"

namespace fbridge {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::silu:
      return "silu";
    case Activation::identity:
      return "identity";
  }
  return "silu";
}

Activation activation_from_string(const std::string& name) {
  if (name == "silu") return Activation::silu;
  if (name == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

namespace {

void silu_inplace(const DenseMatrix& pre, DenseMatrix& out) {
  out = pre.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
}

double silu_grad(double v) {
  const double s = 1.0 / (1.0 + std::exp(-v));
  return s * (1.0 + v * (1.0 - s));
}

}  // namespace

Mlp::Mlp(const MlpConfig& config) : config_(config) { layout(); }

Mlp::Mlp(const MlpConfig& config, RngStream& rng) : config_(config) {
  layout();
  for (int l = 0; l < num_layers(); ++l) {
    auto w = weight(l);
    const double sd = std::sqrt(2.0 / w.cols());
    const bool zero = config_.zero_last_layer && l == num_layers() - 1;
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        const double draw = rng.normal();
        w(i, j) = zero ? 0.0 : sd * draw;
      }
    }
    bias(l).setZero();
  }
}

void Mlp::layout() {
  if (config_.input_dim < 1 || config_.output_dim < 1) throw ShapeMismatch("Mlp: dimensions must be positive");
  for (int h : config_.hidden) {
    if (h < 1) throw ShapeMismatch("Mlp: hidden widths must be positive");
  }
  offsets_.clear();
  std::size_t offset = 0;
  int in = config_.input_dim;
  std::vector<int> outs = config_.hidden;
  outs.push_back(config_.output_dim);
  for (int out : outs) {
    offsets_.push_back({offset, in, out});
    offset += static_cast<std::size_t>(in) * out + out;
    in = out;
  }
  params_.assign(offset, 0.0);
}

void Mlp::set_parameters(std::span<const double> values) {
  if (values.size() != params_.size()) throw ShapeMismatch("Mlp::set_parameters: wrong parameter count");
  std::copy(values.begin(), values.end(), params_.begin());
}

Eigen::Map<DenseMatrix> Mlp::weight(int layer) {
  const Layer& L = offsets_[static_cast<std::size_t>(layer)];
  return {params_.data() + L.offset, L.out, L.in};
}
Eigen::Map<const DenseMatrix> Mlp::weight(int layer) const {
  const Layer& L = offsets_[static_cast<std::size_t>(layer)];
  return {params_.data() + L.offset, L.out, L.in};
}
Eigen::Map<Vector> Mlp::bias(int layer) {
  const Layer& L = offsets_[static_cast<std::size_t>(layer)];
  return {params_.data() + L.offset + static_cast<std::size_t>(L.in) * L.out, L.out};
}
Eigen::Map<const Vector> Mlp::bias(int layer) const {
  const Layer& L = offsets_[static_cast<std::size_t>(layer)];
  return {params_.data() + L.offset + static_cast<std::size_t>(L.in) * L.out, L.out};
}

DenseMatrix Mlp::forward(const DenseMatrix& input) const {
  if (input.rows() != config_.input_dim) {
    std::ostringstream msg;
    msg << "Mlp::forward: expected " << config_.input_dim << " input rows, got " << input.rows();
    throw ShapeMismatch(msg.str());
  }
  DenseMatrix h = input;
  DenseMatrix next;
  for (int l = 0; l < num_layers(); ++l) {
    next.noalias() = weight(l) * h;
    next.colwise() += bias(l);
    if (l + 1 < num_layers() && config_.activation == Activation::silu) {
      silu_inplace(next, h);
    } else {
      h.swap(next);
    }
  }
  return h;
}

DenseMatrix Mlp::forward(const DenseMatrix& input, ForwardCache& cache) const {
  if (input.rows() != config_.input_dim) {
    std::ostringstream msg;
    msg << "Mlp::forward: expected " << config_.input_dim << " input rows, got " << input.rows();
    throw ShapeMismatch(msg.str());
  }
  const auto n = static_cast<std::size_t>(num_layers());
  cache.inputs.resize(n);
  cache.pre.resize(n);
  cache.inputs[0] = input;
  DenseMatrix out;
  for (std::size_t l = 0; l < n; ++l) {
    DenseMatrix z = weight(static_cast<int>(l)) * cache.inputs[l];
    z.colwise() += bias(static_cast<int>(l));
    if (l + 1 < n) {
      if (config_.activation == Activation::silu) {
        silu_inplace(z, cache.inputs[l + 1]);
      } else {
        cache.inputs[l + 1] = z;
      }
      cache.pre[l] = std::move(z);
    } else {
      out = std::move(z);
    }
  }
  return out;
}

std::vector<double> Mlp::forward_one(std::span<const double> input) const {
  const DenseMatrix in = Eigen::Map<const Vector>(input.data(), static_cast<Eigen::Index>(input.size()));
  const DenseMatrix out = forward(in);
  return {out.data(), out.data() + out.size()};
}

void Mlp::backward(const ForwardCache& cache, const DenseMatrix& grad_output, std::vector<double>& grad) const {
  if (cache.inputs.size() != static_cast<std::size_t>(num_layers())) {
    throw ShapeMismatch("Mlp::backward: forward cache does not match this model");
  }
  if (grad_output.rows() != config_.output_dim || grad_output.cols() != cache.inputs[0].cols()) {
    throw ShapeMismatch("Mlp::backward: gradient shape does not match the forward batch");
  }
  grad.assign(params_.size(), 0.0);
  DenseMatrix delta = grad_output;
  for (int l = num_layers() - 1; l >= 0; --l) {
    const Layer& L = offsets_[static_cast<std::size_t>(l)];
    // computed in owned (aligned) storage, then copied into the flat gradient
    const DenseMatrix gw = delta * cache.inputs[static_cast<std::size_t>(l)].transpose();
    const Vector gb = delta.rowwise().sum();
    std::copy(gw.data(), gw.data() + gw.size(), grad.begin() + static_cast<std::ptrdiff_t>(L.offset));
    std::copy(gb.data(), gb.data() + gb.size(),
              grad.begin() + static_cast<std::ptrdiff_t>(L.offset + static_cast<std::size_t>(L.in) * L.out));
    if (l == 0) break;
    DenseMatrix back = weight(l).transpose() * delta;
    if (config_.activation == Activation::silu) {
      back.array() *= cache.pre[static_cast<std::size_t>(l - 1)].unaryExpr(&silu_grad).array();
    }
    delta.swap(back);
  }
}

Adam::Adam(std::size_t n, AdamConfig config) : config_(config), m_(n, 0.0), v_(n, 0.0) {}

void Adam::restore(std::vector<double> m, std::vector<double> v, std::uint64_t step) {
  if (m.size() != v.size()) throw ShapeMismatch("Adam::restore: moment sizes differ");
  m_ = std::move(m);
  v_ = std::move(v);
  step_ = step;
}

void Adam::update(std::span<double> params, std::span<const double> grad, double lr) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw ShapeMismatch("Adam::update: parameter count mismatch");
  }
  ++step_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + config_.eps);
  }
}

TrainableModel::TrainableModel(Mlp m, double decay)
    : model(std::move(m)), adam(model.parameter_count()), ema_decay(decay) {
  ema.assign(model.parameters().begin(), model.parameters().end());
}

Mlp TrainableModel::ema_model() const {
  Mlp copy = model;
  copy.set_parameters(ema);
  return copy;
}

void backward_and_step(TrainableModel& m, std::span<const double> grad, double lr) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      std::ostringstream msg;
      msg << "non-finite gradient entry " << i << " at step " << m.step;
      throw NonFiniteGradient(msg.str());
    }
  }
  auto params = m.model.parameters();
  m.adam.update(params, grad, lr);
  const double d = m.ema_decay;
  for (std::size_t i = 0; i < params.size(); ++i) m.ema[i] = d * m.ema[i] + (1.0 - d) * params[i];
  ++m.step;
}

std::string checkpoint_to_json(const TrainableModel& m, const CheckpointMeta& meta) {
  nlohmann::json j;
  j["version"] = kVersion;
  j["config_hash"] = hash_hex(meta.config_hash);
  j["seed"] = meta.seed;
  j["role"] = meta.role;
  j["step"] = m.step;
  const MlpConfig& c = m.model.config();
  j["mlp"] = {{"input_dim", c.input_dim},
              {"output_dim", c.output_dim},
              {"hidden", c.hidden},
              {"activation", to_string(c.activation)},
              {"zero_last_layer", c.zero_last_layer},
              {"parameters", std::vector<double>(m.model.parameters().begin(), m.model.parameters().end())}};
  j["adam"] = {{"beta1", m.adam.config().beta1},
               {"beta2", m.adam.config().beta2},
               {"eps", m.adam.config().eps},
               {"step", m.adam.step()},
               {"m", std::vector<double>(m.adam.first_moment().begin(), m.adam.first_moment().end())},
               {"v", std::vector<double>(m.adam.second_moment().begin(), m.adam.second_moment().end())}};
  j["ema"] = {{"decay", m.ema_decay}, {"parameters", m.ema}};
  return j.dump();
}

TrainableModel checkpoint_from_json(const std::string& text, CheckpointMeta* meta) {
  const nlohmann::json j = nlohmann::json::parse(text);
  MlpConfig c;
  const auto& jm = j.at("mlp");
  c.input_dim = jm.at("input_dim").get<int>();
  c.output_dim = jm.at("output_dim").get<int>();
  c.hidden = jm.at("hidden").get<std::vector<int>>();
  c.activation = activation_from_string(jm.at("activation").get<std::string>());
  c.zero_last_layer = jm.at("zero_last_layer").get<bool>();
  Mlp model(c);
  model.set_parameters(jm.at("parameters").get<std::vector<double>>());

  TrainableModel out(std::move(model), j.at("ema").at("decay").get<double>());
  const auto& ja = j.at("adam");
  AdamConfig ac{ja.at("beta1").get<double>(), ja.at("beta2").get<double>(), ja.at("eps").get<double>()};
  out.adam = Adam(out.model.parameter_count(), ac);
  out.adam.restore(ja.at("m").get<std::vector<double>>(), ja.at("v").get<std::vector<double>>(),
                   ja.at("step").get<std::uint64_t>());
  out.ema = j.at("ema").at("parameters").get<std::vector<double>>();
  if (out.ema.size() != out.model.parameter_count() ||
      out.adam.first_moment().size() != out.model.parameter_count()) {
    throw ShapeMismatch("checkpoint: parameter vectors have inconsistent sizes");
  }
  out.step = j.at("step").get<std::int64_t>();
  if (meta) {
    meta->config_hash = parse_hash_hex(j.at("config_hash").get<std::string>());
    meta->seed = j.at("seed").get<std::uint64_t>();
    meta->role = j.at("role").get<std::string>();
  }
  return out;
}

}  // namespace fbridge
