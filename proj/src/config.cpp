#include "fbridge/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>
#include <json.hpp>

#include "fbridge/version.hpp"

namespace fbridge {

namespace {

// Reads typed fields from one TOML table and rejects keys nobody asked for.
class Section {
 public:
  Section(const toml::table* table, std::string prefix) : table_(table), prefix_(std::move(prefix)) {}

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      auto v = node->value<bool>();
      if (!v) fail(key, "expected a boolean");
      out = *v;
    } else if constexpr (std::is_same_v<T, std::string>) {
      auto v = node->value<std::string>();
      if (!v) fail(key, "expected a string");
      out = *v;
    } else if constexpr (std::is_floating_point_v<T>) {
      auto v = node->value<double>();
      if (!v) fail(key, "expected a number");
      out = *v;
    } else if constexpr (std::is_integral_v<T>) {
      auto v = node->value<std::int64_t>();
      if (!v || !node->is_integer()) fail(key, "expected an integer");
      if (*v < 0 && std::is_unsigned_v<T>) fail(key, "must be non-negative");
      out = static_cast<T>(*v);
    } else {
      const toml::array* arr = node->as_array();
      if (!arr) fail(key, "expected an array");
      out.clear();
      for (const auto& el : *arr) {
        using E = typename T::value_type;
        if constexpr (std::is_integral_v<E>) {
          auto v = el.value<std::int64_t>();
          if (!v || !el.is_integer()) fail(key, "expected integers");
          out.push_back(static_cast<E>(*v));
        } else {
          auto v = el.value<double>();
          if (!v) fail(key, "expected numbers");
          out.push_back(*v);
        }
      }
    }
  }

  void allow(const char* key) { seen_.insert(key); }

  void finish() const {
    if (!table_) return;
    for (auto&& [k, v] : *table_) {
      if (!seen_.count(std::string(k.str()))) fail(std::string(k.str()).c_str(), "unknown key");
    }
  }

 private:
  [[noreturn]] void fail(const char* key, const std::string& why) const {
    throw InvalidConfig((prefix_.empty() ? std::string() : prefix_ + ".") + key + ": " + why);
  }

  const toml::table* table_;
  std::string prefix_;
  std::set<std::string> seen_;
};

const toml::table* sub(const toml::table& root, const char* name) {
  const toml::node* node = root.get(name);
  if (!node) return nullptr;
  if (!node->is_table()) throw InvalidConfig(std::string(name) + ": expected a table");
  return node->as_table();
}

}  // namespace

void RunConfig::validate() const {
  process.validate();
  if (process.horizon != 1.0) throw InvalidConfig("process.horizon: bridges use T = 1");
  training.validate();
  if (hidden.empty()) throw InvalidConfig("model.hidden: need at least one hidden layer");
  for (int h : hidden) {
    if (h < 1) throw InvalidConfig("model.hidden: widths must be positive");
  }
  unpaired_config().validate();
  if (dataset.path.empty()) toy_spec().validate();
  if (dataset.n_train < 1) throw InvalidConfig("dataset.n_train: must be >= 1");
  if (dataset.n_test < 1) throw InvalidConfig("dataset.n_test: must be >= 1");
  if (evaluation.n_samples < 1) throw InvalidConfig("evaluation.n_samples: must be >= 1");
  if (evaluation.n_steps < 1) throw InvalidConfig("evaluation.n_steps: must be >= 1");
  if (evaluation.trials < 1) throw InvalidConfig("evaluation.trials: must be >= 1");
  if (simulate.n_paths < 1) throw InvalidConfig("simulate.n_paths: must be >= 1");
  if (simulate.n_steps < 10) throw InvalidConfig("simulate.n_steps: must be >= 10");
  if (simulate.x0.empty() || simulate.x0.size() != simulate.x1.size()) {
    throw InvalidConfig("simulate.x1: must have the same nonzero length as simulate.x0");
  }
  if (simulate.record_every < 1) throw InvalidConfig("simulate.record_every: must be >= 1");
  for (double t : simulate.times) {
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidConfig("simulate.times: entries must lie in [0, 1]");
  }
}

PairedTrainConfig RunConfig::paired_config() const {
  PairedTrainConfig c;
  c.process = process;
  c.reference = reference;
  c.hidden = hidden;
  c.train = training;
  c.train.seed = seed;
  return c;
}

UnpairedConfig RunConfig::unpaired_config() const {
  UnpairedConfig c = unpaired;
  c.process = process;
  c.reference = reference;
  c.hidden = hidden;
  c.train = training;
  c.train.seed = seed;
  return c;
}

ToySpec RunConfig::toy_spec() const {
  ToySpec s;
  s.name = dataset.name;
  s.n = dataset.n_train + dataset.n_val + dataset.n_test;
  s.noise = dataset.noise;
  s.seed = seed;
  return s;
}

RunConfig parse_config(const std::string& text, const std::string& source_name) {
  toml::table root;
  try {
    root = toml::parse(text, source_name);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config parse error at line " << e.source().begin.line << ": " << e.description();
    throw InvalidConfig(msg.str());
  }
  RunConfig c;
  Section top(&root, "");
  top.read("seed", c.seed);
  std::string reference = to_string(c.reference);
  top.read("reference", reference);
  c.reference = reference_from_string(reference);
  top.read("output_dir", c.output_dir);

  Section process(sub(root, "process"), "process");
  top.allow("process");
  process.read("hurst", c.process.hurst);
  process.read("num_ou", c.process.num_ou);
  process.read("grid_ratio", c.process.grid_ratio);
  process.read("epsilon", c.process.epsilon);
  process.finish();

  Section model(sub(root, "model"), "model");
  top.allow("model");
  model.read("hidden", c.hidden);
  model.finish();

  Section training(sub(root, "training"), "training");
  top.allow("training");
  TrainConfig& t = c.training;
  training.read("steps", t.steps);
  training.read("batch_size", t.batch_size);
  training.read("lr", t.lr);
  training.read("lr_final", t.lr_final);
  training.read("warmup_steps", t.warmup_steps);
  training.read("time_clamp", t.time_clamp);
  training.read("ema_decay", t.ema_decay);
  std::string mode = to_string(t.mode);
  training.read("loss_mode", mode);
  t.mode = loss_mode_from_string(mode);
  training.read("lambda", t.lambda);
  training.read("log_every", t.log_every);
  training.finish();

  Section unpaired(sub(root, "unpaired"), "unpaired");
  top.allow("unpaired");
  UnpairedConfig& u = c.unpaired;
  unpaired.read("alpha", u.alpha);
  unpaired.read("finetune_steps", u.finetune_steps);
  unpaired.read("finetune_lr", u.finetune_lr);
  unpaired.read("finetune_ema_decay", u.finetune_ema_decay);
  unpaired.read("generation_steps", u.generation_steps);
  unpaired.read("allow_any_hurst", u.allow_any_hurst);
  unpaired.read("divergence_factor", u.divergence_factor);
  unpaired.finish();

  Section dataset(sub(root, "dataset"), "dataset");
  top.allow("dataset");
  dataset.read("name", c.dataset.name);
  dataset.read("n_train", c.dataset.n_train);
  dataset.read("n_val", c.dataset.n_val);
  dataset.read("n_test", c.dataset.n_test);
  dataset.read("noise", c.dataset.noise);
  dataset.read("path", c.dataset.path);
  dataset.finish();

  Section evaluation(sub(root, "evaluation"), "evaluation");
  top.allow("evaluation");
  evaluation.read("n_samples", c.evaluation.n_samples);
  evaluation.read("n_steps", c.evaluation.n_steps);
  evaluation.read("trials", c.evaluation.trials);
  evaluation.finish();

  Section simulate(sub(root, "simulate"), "simulate");
  top.allow("simulate");
  simulate.read("n_paths", c.simulate.n_paths);
  simulate.read("n_steps", c.simulate.n_steps);
  simulate.read("x0", c.simulate.x0);
  simulate.read("x1", c.simulate.x1);
  simulate.read("exact_marginals", c.simulate.exact_marginals);
  simulate.read("times", c.simulate.times);
  simulate.read("record_every", c.simulate.record_every);
  simulate.finish();

  top.finish();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

namespace {

nlohmann::json config_tree(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["reference"] = to_string(c.reference);
  j["process"] = {{"hurst", c.process.hurst},
                  {"num_ou", c.process.num_ou},
                  {"grid_ratio", c.process.grid_ratio},
                  {"epsilon", c.process.epsilon},
                  {"horizon", c.process.horizon}};
  j["model"] = {{"hidden", c.hidden}};
  const TrainConfig& t = c.training;
  j["training"] = {{"steps", t.steps},           {"batch_size", t.batch_size},     {"lr", t.lr},
                   {"lr_final", t.lr_final},     {"warmup_steps", t.warmup_steps}, {"time_clamp", t.time_clamp},
                   {"ema_decay", t.ema_decay},   {"loss_mode", to_string(t.mode)}, {"lambda", t.lambda},
                   {"log_every", t.log_every}};
  const UnpairedConfig& u = c.unpaired;
  j["unpaired"] = {{"alpha", u.alpha},
                   {"finetune_steps", u.finetune_steps},
                   {"finetune_lr", u.finetune_lr},
                   {"finetune_ema_decay", u.finetune_ema_decay},
                   {"generation_steps", u.generation_steps},
                   {"allow_any_hurst", u.allow_any_hurst},
                   {"divergence_factor", u.divergence_factor}};
  j["dataset"] = {{"name", c.dataset.name},       {"n_train", c.dataset.n_train}, {"n_val", c.dataset.n_val},
                  {"n_test", c.dataset.n_test},   {"noise", c.dataset.noise},     {"path", c.dataset.path}};
  j["evaluation"] = {{"n_samples", c.evaluation.n_samples},
                     {"n_steps", c.evaluation.n_steps},
                     {"trials", c.evaluation.trials}};
  j["simulate"] = {{"n_paths", c.simulate.n_paths},
                   {"n_steps", c.simulate.n_steps},
                   {"x0", c.simulate.x0},
                   {"x1", c.simulate.x1},
                   {"exact_marginals", c.simulate.exact_marginals},
                   {"times", c.simulate.times},
                   {"record_every", c.simulate.record_every}};
  return j;
}

}  // namespace

// output_dir is left out on purpose: moving a run must not change its hash.
std::string canonical_json(const RunConfig& c) { return config_tree(c).dump(); }

std::uint64_t config_hash(const RunConfig& config) { return fnv1a64(canonical_json(config)); }

std::uint64_t model_config_hash(const RunConfig& config, bool with_finetune) {
  nlohmann::json j = config_tree(config);
  j.erase("evaluation");
  j.erase("simulate");
  j["training"].erase("log_every");
  // Step budgets only matter through a decaying schedule, so a run can be
  // extended with --resume and a larger budget.
  if (config.training.lr_final == 0.0) j["training"].erase("steps");
  if (!with_finetune) {
    j.erase("unpaired");
  } else {
    j["unpaired"].erase("finetune_steps");
  }
  return fnv1a64(j.dump());
}

}  // namespace fbridge
