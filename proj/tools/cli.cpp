#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>

#include "fbridge/config.hpp"
#include "fbridge/io.hpp"
#include "fbridge/metrics.hpp"
#include "fbridge/version.hpp"

namespace fbridge::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class CheckpointMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flag values; each one, when given, wins over the TOML file.
struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> hurst;
  std::optional<int> num_ou;
  std::optional<double> ratio;
  std::optional<double> eps;
  std::optional<std::string> reference;
  std::vector<int> hidden;
  std::optional<int> steps;
  std::optional<int> batch_size;
  std::optional<double> lr;
  std::optional<double> lambda;
  std::optional<std::string> loss_mode;
  std::optional<std::string> dataset;
  std::optional<std::string> dataset_path;
  std::optional<double> noise;
  std::optional<std::size_t> n_train;
  std::optional<std::size_t> n_test;
  std::optional<std::size_t> n_samples;
  std::optional<int> eval_steps;
  std::optional<int> trials;
  std::optional<double> alpha;
  std::optional<int> finetune_steps;
  std::optional<std::string> output_dir;
};

void add_overrides(CLI::App* app, Overrides& o) {
  app->add_option("-c,--config", o.config_path, "TOML configuration file");
  app->add_option("--seed", o.seed, "base random seed");
  app->add_option("--H", o.hurst, "Hurst index");
  app->add_option("--K", o.num_ou, "number of OU processes");
  app->add_option("--r", o.ratio, "geometric ratio of the mean-reversion grid");
  app->add_option("--eps", o.eps, "diffusion scale epsilon (sqrt(eps) multiplies the noise)");
  app->add_option("--reference", o.reference, "fractional | brownian");
  app->add_option("--hidden", o.hidden, "hidden layer widths")->delimiter(',');
  app->add_option("--steps", o.steps, "training steps");
  app->add_option("--batch-size", o.batch_size, "training batch size");
  app->add_option("--lr", o.lr, "learning rate");
  app->add_option("--lambda", o.lambda, "reverse-drift regularizer weight");
  app->add_option("--loss-mode", o.loss_mode, "endpoint | drift");
  app->add_option("--dataset", o.dataset, "moons | tshape | gaussian_cross | gaussian_shift");
  app->add_option("--dataset-path", o.dataset_path, "CSV dataset instead of a generated toy");
  app->add_option("--noise", o.noise, "toy dataset noise level");
  app->add_option("--n-train", o.n_train, "training pairs");
  app->add_option("--n-test", o.n_test, "test pairs");
  app->add_option("--n-samples", o.n_samples, "generated samples per evaluation");
  app->add_option("--eval-steps", o.eval_steps, "Euler-Maruyama steps when sampling");
  app->add_option("--alpha", o.alpha, "alpha-IMF mixing probability");
  app->add_option("--finetune-steps", o.finetune_steps, "alpha-IMF steps");
  app->add_option("-o,--output-dir", o.output_dir, "directory for every written artifact");
}

RunConfig resolve_config(const Overrides& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.hurst) c.process.hurst = *o.hurst;
  if (o.num_ou) c.process.num_ou = *o.num_ou;
  if (o.ratio) c.process.grid_ratio = *o.ratio;
  if (o.eps) c.process.epsilon = *o.eps;
  if (o.reference) c.reference = reference_from_string(*o.reference);
  if (!o.hidden.empty()) c.hidden = o.hidden;
  if (o.steps) c.training.steps = *o.steps;
  if (o.batch_size) c.training.batch_size = *o.batch_size;
  if (o.lr) c.training.lr = *o.lr;
  if (o.lambda) c.training.lambda = *o.lambda;
  if (o.loss_mode) c.training.mode = loss_mode_from_string(*o.loss_mode);
  if (o.dataset) c.dataset.name = *o.dataset;
  if (o.dataset_path) c.dataset.path = *o.dataset_path;
  if (o.noise) c.dataset.noise = *o.noise;
  if (o.n_train) c.dataset.n_train = *o.n_train;
  if (o.n_test) c.dataset.n_test = *o.n_test;
  if (o.n_samples) c.evaluation.n_samples = *o.n_samples;
  if (o.eval_steps) c.evaluation.n_steps = *o.eval_steps;
  if (o.alpha) c.unpaired.alpha = *o.alpha;
  if (o.finetune_steps) c.unpaired.finetune_steps = *o.finetune_steps;
  if (o.trials) c.evaluation.trials = *o.trials;
  if (o.output_dir) c.output_dir = *o.output_dir;
  return c;
}

json provenance_json(std::uint64_t hash, std::uint64_t seed) {
  return {{"version", kVersion}, {"config_hash", hash_hex(hash)}, {"seed", seed}};
}

// JSON with NaN mapped to null so the file stays valid.
json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string render(const json& j) { return j.dump(2) + "\n"; }

void ensure_directory(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

// Serializes progress lines from concurrent trials.
class Log {
 public:
  Log(std::ostream& err, bool quiet) : err_(err), quiet_(quiet) {}
  void line(const std::string& text) {
    if (quiet_) return;
    std::lock_guard<std::mutex> lock(mutex_);
    err_ << text << '\n';
  }

 private:
  std::ostream& err_;
  bool quiet_;
  std::mutex mutex_;
};

struct Datasets {
  PairDataset all;
  PairDataset train;
  PairDataset val;
  PairDataset test;
};

// The whole set is generated in one call so every split shares one draw.
Datasets load_datasets(const RunConfig& c) {
  Datasets d;
  if (!c.dataset.path.empty()) {
    std::ifstream in(c.dataset.path);
    if (!in) throw InvalidConfig("dataset.path: cannot read '" + c.dataset.path + "'");
    d.all = read_dataset_csv(in);
  } else {
    d.all = generate_toy(c.toy_spec());
  }
  if (d.all.size() <= c.dataset.n_train + c.dataset.n_val) {
    throw InvalidConfig("dataset.n_train: the dataset has only " + std::to_string(d.all.size()) +
                        " pairs, too few for the requested train and val splits plus a test split");
  }
  assign_splits(d.all, c.dataset.n_train, c.dataset.n_val);
  d.train = d.all.subset(Split::train);
  d.val = d.all.subset(Split::val);
  d.test = d.all.subset(Split::test);
  return d;
}

void verify_checkpoint(const CheckpointMeta& meta, std::uint64_t hash, std::uint64_t seed, const std::string& role,
                       const std::string& path) {
  if (meta.config_hash != hash) {
    throw CheckpointMismatch("checkpoint '" + path + "' was written for config " + hash_hex(meta.config_hash) +
                             ", current config is " + hash_hex(hash));
  }
  if (meta.seed != seed) {
    throw CheckpointMismatch("checkpoint '" + path + "' has seed " + std::to_string(meta.seed) + ", expected " +
                             std::to_string(seed));
  }
  if (meta.role != role) {
    throw CheckpointMismatch("checkpoint '" + path + "' has role '" + meta.role + "', expected '" + role + "'");
  }
}

void save_checkpoint(const std::string& path, const TrainableModel& model, const CheckpointMeta& meta) {
  write_text_file(path, checkpoint_to_json(model, meta));
}

TrainableModel load_checkpoint(const std::string& path, CheckpointMeta& meta) {
  const std::string text = read_text_file(path);
  try {
    return checkpoint_from_json(text, &meta);
  } catch (const std::exception& e) {
    throw CheckpointMismatch("checkpoint '" + path + "' is unreadable: " + e.what());
  }
}

/// Runs `body(i)` for every trial, sequentially or concurrently. The first
/// failure (lowest trial index) is rethrown after all trials finish.
template <class Body>
void for_each_trial(int trials, bool parallel, Body&& body) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(trials));
  if (parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (int i = 0; i < trials; ++i) {
      try {
        body(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  } else {
    for (int i = 0; i < trials; ++i) body(i);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

json aggregate(const std::vector<json>& trials, const char* metric) {
  std::vector<double> values;
  for (const auto& t : trials) {
    if (t.contains(metric) && t[metric].is_number()) values.push_back(t[metric].get<double>());
  }
  if (values.empty()) return nullptr;
  const MeanStd ms = mean_std(values);
  return {{"mean", ms.mean}, {"std", ms.std}};
}

// ---------------------------------------------------------------- coeffs

struct CoeffsArgs {
  Overrides o;
  int mc_paths = 10000;
  int mc_times = 200;
  std::string out;
};

int cmd_coeffs(const CoeffsArgs& a, std::ostream& out) {
  RunConfig c = resolve_config(a.o);
  c.validate();
  if (a.mc_paths < 1 || a.mc_times < 1) throw InvalidConfig("--mc-paths/--mc-times: must be >= 1");
  const Coefficients co = optimal_coefficients(c.process);
  const L2Moments moments = sample_l2_moments(c.process.hurst, co.gamma, c.process.horizon, a.mc_paths, a.mc_times,
                                              c.seed);
  const Vector omega = Eigen::Map<const Vector>(co.omega.data(), static_cast<Eigen::Index>(co.omega.size()));
  json j;
  j["H"] = c.process.hurst;
  j["K"] = c.process.num_ou;
  j["r"] = c.process.grid_ratio;
  j["gamma"] = co.gamma;
  j["omega"] = co.omega;
  j["residual"] = co.residual;
  j["mc_l2_error"] = l2_error(moments, omega);
  j["mc_paths"] = a.mc_paths;
  j["mc_times"] = a.mc_times;
  j["provenance"] = provenance_json(config_hash(c), c.seed);
  const std::string text = render(j);
  if (!a.out.empty()) write_text_file(a.out, text);
  out << text;
  return kOk;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  Overrides o;
  std::optional<int> n_paths;
  std::optional<int> n_steps;
  std::vector<double> x0;
  std::vector<double> x1;
  bool exact = false;
  std::vector<double> times;
  std::optional<int> record_every;
  std::string out;
  std::string svg;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  RunConfig c = resolve_config(a.o);
  if (a.n_paths) c.simulate.n_paths = *a.n_paths;
  if (a.n_steps) c.simulate.n_steps = *a.n_steps;
  if (!a.x0.empty()) c.simulate.x0 = a.x0;
  if (!a.x1.empty()) c.simulate.x1 = a.x1;
  if (a.exact) c.simulate.exact_marginals = true;
  if (!a.times.empty()) c.simulate.times = a.times;
  if (a.record_every) c.simulate.record_every = *a.record_every;
  c.validate();
  if (c.simulate.exact_marginals) {
    for (double t : c.simulate.times) {
      if (t >= 1.0) throw InvalidConfig("simulate.times: exact marginals need t < 1 (X_1 = x1 is pinned)");
    }
  }
  const std::string csv_path = a.out.empty() ? join(c.output_dir, "trajectories.csv") : a.out;
  const std::uint64_t hash = config_hash(c);
  const Provenance prov{hash, c.seed};
  const BridgeKernel kernel(c.process);
  const SimulateSection& s = c.simulate;
  std::vector<Trajectory> paths(static_cast<std::size_t>(s.n_paths));
  for (int p = 0; p < s.n_paths; ++p) {
    RngStream rng = make_stream(c.seed, StreamPurpose::sampling, static_cast<std::uint64_t>(p));
    Trajectory& tr = paths[static_cast<std::size_t>(p)];
    if (s.exact_marginals) {
      for (double t : s.times) {
        tr.times.push_back(t);
        if (t == 0.0) {
          tr.states.push_back(AugmentedState::initial(s.x0, kernel.num_ou()));
        } else {
          tr.states.push_back(sample_pinned_marginal(kernel, s.x0, s.x1, t, rng));
        }
      }
    } else {
      EmOptions em;
      em.n_steps = s.n_steps;
      em.time_clamp = c.training.time_clamp;
      em.record_every = s.record_every;
      tr = simulate_pinned_em(kernel, s.x0, s.x1, em, rng);
    }
    tr.meta = {hash, c.seed};
  }
  if (!a.out.empty()) {
    ensure_directory(fs::path(csv_path).parent_path().empty() ? "." : fs::path(csv_path).parent_path().string());
  } else {
    ensure_directory(c.output_dir);
  }
  std::ostringstream csv;
  write_trajectories_csv(csv, paths, prov);
  write_text_file(csv_path, csv.str());
  json summary{{"trajectories", csv_path}, {"paths", s.n_paths}, {"provenance", provenance_json(hash, c.seed)}};
  if (!a.svg.empty()) {
    std::ostringstream svg;
    write_trajectories_svg(svg, paths, prov);
    write_text_file(a.svg, svg.str());
    summary["svg"] = a.svg;
  }
  out << render(summary);
  return kOk;
}

// ---------------------------------------------------------------- train

enum class TrainKind { paired, abm, unpaired_pretrain, unpaired_finetune };

struct TrainArgs {
  Overrides o;
  bool parallel_trials = false;
  bool resume = false;
  int checkpoint_every = 0;
  bool quiet = false;
};

std::string role_of(TrainKind kind) { return kind == TrainKind::abm ? "abm" : "paired"; }

SampleOptions sample_options(const RunConfig& c) {
  SampleOptions s;
  s.n_steps = c.evaluation.n_steps;
  s.time_clamp = c.training.time_clamp;
  return s;
}

json paired_trial(const RunConfig& base, const Datasets& data, TrainKind kind, int trial, const TrainArgs& a,
                  Log& log) {
  const std::uint64_t seed = base.seed + static_cast<std::uint64_t>(trial);
  const std::uint64_t hash = model_config_hash(base);
  const std::string role = role_of(kind);
  RunConfig c = base;
  c.seed = seed;
  const PairedTrainConfig pc = c.paired_config();
  const Reference ref = make_reference(pc.reference, pc.process);
  const std::string path = join(base.output_dir, role + "_trial" + std::to_string(trial) + ".json");

  TrainableModel model;
  if (a.resume && fs::exists(path)) {
    CheckpointMeta meta;
    model = load_checkpoint(path, meta);
    verify_checkpoint(meta, hash, seed, role, path);
    log.line("[" + role + " trial " + std::to_string(trial) + "] resuming at step " + std::to_string(model.step));
  } else {
    model = init_model(ref, Conditioning::paired, data.train.dim, pc.hidden, pc.train.ema_decay, seed, kTagPaired);
  }
  const CheckpointMeta meta{hash, seed, role};
  const CouplingSampler sampler = dataset_sampler(data.train);
  const int every = pc.train.log_every;
  auto on_step = [&](const StepLog& s) {
    if (every > 0 && (s.step + 1) % every == 0) {
      std::ostringstream line;
      line << '[' << role << " trial " << trial << "] step " << s.step + 1 << " loss " << s.loss;
      log.line(line.str());
    }
  };
  while (model.step < pc.train.steps) {
    std::int64_t until = pc.train.steps;
    if (a.checkpoint_every > 0) until = std::min<std::int64_t>(until, (model.step / a.checkpoint_every + 1) * a.checkpoint_every);
    train_steps(model, ref, Conditioning::paired, sampler, pc.train, kTagPaired, until, on_step);
    save_checkpoint(path, model, meta);
  }
  save_checkpoint(path, model, meta);

  const Mlp ema = model.ema_model();
  const PairedEvaluation ev = evaluate_paired(ref, ema, pc.train.mode, data.test, base.dataset.name,
                                              base.evaluation.n_samples, sample_options(base), seed);
  json j;
  j["trial"] = trial;
  j["seed"] = seed;
  j["checkpoint"] = path;
  j["wsd"] = ev.wsd;
  j["mode_accuracy"] = ev.mode_accuracy >= 0.0 ? json(ev.mode_accuracy) : json(nullptr);
  j["n_samples"] = ev.n_samples;
  if (data.val.size() > 0) {
    j["val_loss"] = number_or_null(
        validation_loss(ref, ema, pc.train.mode, Conditioning::paired, data.val, pc.train.time_clamp, seed));
  }
  log.line("[" + role + " trial " + std::to_string(trial) + "] wsd " + std::to_string(ev.wsd));
  return j;
}

struct UnpairedState {
  double reference_loss_forward = 0.0;
  double reference_loss_backward = 0.0;
  std::int64_t finetune_step = 0;
};

std::string unpaired_file(const RunConfig& c, const std::string& what, int trial) {
  return join(c.output_dir, "unpaired_" + what + "_trial" + std::to_string(trial) + ".json");
}

std::uint64_t stage_hash(const RunConfig& c, const std::string& stage) {
  return model_config_hash(c, stage == "finetune");
}

void save_unpaired(const RunConfig& base, const UnpairedModels& m, const std::string& stage, int trial,
                   std::uint64_t seed) {
  const std::uint64_t hash = stage_hash(base, stage);
  save_checkpoint(unpaired_file(base, stage + "_forward", trial), m.forward, {hash, seed, "forward"});
  save_checkpoint(unpaired_file(base, stage + "_backward", trial), m.backward, {hash, seed, "backward"});
  json st{{"reference_loss_forward", m.reference_loss_forward},
          {"reference_loss_backward", m.reference_loss_backward},
          {"finetune_step", m.finetune_step},
          {"provenance", provenance_json(hash, seed)}};
  write_text_file(unpaired_file(base, stage + "_state", trial), render(st));
}

UnpairedModels load_unpaired(const RunConfig& base, const std::string& stage, int trial, std::uint64_t seed) {
  const std::uint64_t hash = stage_hash(base, stage);
  UnpairedModels m;
  CheckpointMeta meta;
  const std::string fpath = unpaired_file(base, stage + "_forward", trial);
  const std::string bpath = unpaired_file(base, stage + "_backward", trial);
  const std::string spath = unpaired_file(base, stage + "_state", trial);
  for (const auto& p : {fpath, bpath, spath}) {
    if (!fs::exists(p)) throw CheckpointMismatch("missing unpaired checkpoint '" + p + "'");
  }
  m.forward = load_checkpoint(fpath, meta);
  verify_checkpoint(meta, hash, seed, "forward", fpath);
  m.backward = load_checkpoint(bpath, meta);
  verify_checkpoint(meta, hash, seed, "backward", bpath);
  try {
    const json st = json::parse(read_text_file(spath));
    m.reference_loss_forward = st.at("reference_loss_forward").get<double>();
    m.reference_loss_backward = st.at("reference_loss_backward").get<double>();
    m.finetune_step = st.at("finetune_step").get<std::int64_t>();
    if (parse_hash_hex(st.at("provenance").at("config_hash").get<std::string>()) != hash) {
      throw CheckpointMismatch("state '" + spath + "' belongs to another config");
    }
  } catch (const json::exception& e) {
    throw CheckpointMismatch("state '" + spath + "' is unreadable: " + e.what());
  }
  return m;
}

json unpaired_metrics_json(const UnpairedMetrics& um) {
  return {{"w1_forward", um.w1_forward},
          {"w1_backward", um.w1_backward},
          {"coupling_correlation", um.coupling_correlation}};
}

json unpaired_trial(const RunConfig& base, const Datasets& data, TrainKind kind, int trial, const TrainArgs& a,
                    Log& log) {
  const std::uint64_t seed = base.seed + static_cast<std::uint64_t>(trial);
  RunConfig c = base;
  c.seed = seed;
  UnpairedConfig uc = c.unpaired_config();
  const Reference ref = make_reference(uc.reference, uc.process);
  const MarginalPools pools = pools_from(data.train);
  const std::string tag = "[unpaired trial " + std::to_string(trial) + "] ";
  const int every = uc.train.log_every;
  auto on_step = [&](const PhaseLog& p) {
    if (every > 0 && (p.step + 1) % every == 0) {
      std::ostringstream line;
      line << tag << p.phase << " step " << p.step + 1 << " loss " << p.loss_forward << " / " << p.loss_backward;
      log.line(line.str());
    }
  };

  UnpairedModels models;
  std::string stage;
  if (kind == TrainKind::unpaired_pretrain) {
    stage = "pretrain";
    models = pretrain(pools, uc, on_step);
  } else {
    stage = "finetune";
    const bool resumed = a.resume && fs::exists(unpaired_file(base, "finetune_state", trial));
    models = load_unpaired(base, resumed ? "finetune" : "pretrain", trial, seed);
    if (resumed) log.line(tag + "resuming finetune at step " + std::to_string(models.finetune_step));
    const int total = uc.finetune_steps;
    while (models.finetune_step < total) {
      int until = total;
      if (a.checkpoint_every > 0) {
        until = std::min<int>(total, static_cast<int>((models.finetune_step / a.checkpoint_every + 1) * a.checkpoint_every));
      }
      uc.finetune_steps = until;
      finetune_alpha_imf(models, pools, uc, on_step);
      save_unpaired(base, models, stage, trial, seed);
    }
  }
  save_unpaired(base, models, stage, trial, seed);
  const UnpairedMetrics um = evaluate_unpaired(ref, models, uc.train.mode, pools_from(data.test),
                                               base.evaluation.n_samples, base.evaluation.n_steps, seed);
  json j = unpaired_metrics_json(um);
  j["trial"] = trial;
  j["seed"] = seed;
  j["stage"] = stage;
  log.line(tag + stage + " coupling correlation " + std::to_string(um.coupling_correlation));
  return j;
}

int cmd_train(TrainKind kind, const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig c = resolve_config(a.o);
  if (kind == TrainKind::abm) c.reference = ReferenceKind::brownian;
  if (a.checkpoint_every < 0) throw InvalidConfig("--checkpoint-every: must be >= 0");
  c.validate();
  if (kind == TrainKind::unpaired_finetune && !finetune_enabled(c.unpaired_config())) {
    throw InvalidConfig("process.hurst: alpha-IMF finetuning needs H in [0.45, 0.55] or unpaired.allow_any_hurst");
  }
  const int trials = c.evaluation.trials;
  ensure_directory(c.output_dir);
  const Datasets data = load_datasets(c);
  Log log(err, a.quiet);

  std::vector<json> results(static_cast<std::size_t>(trials));
  for_each_trial(trials, a.parallel_trials, [&](int i) {
    results[static_cast<std::size_t>(i)] = (kind == TrainKind::paired || kind == TrainKind::abm)
                                               ? paired_trial(c, data, kind, i, a, log)
                                               : unpaired_trial(c, data, kind, i, a, log);
  });

  static const char* names[] = {"paired", "abm", "unpaired_pretrain", "unpaired_finetune"};
  const std::string command = names[static_cast<int>(kind)];
  json j;
  j["command"] = command;
  j["dataset"] = c.dataset.name;
  j["reference"] = to_string(c.reference);
  j["hurst"] = c.process.hurst;
  j["epsilon"] = c.process.epsilon;
  j["trials"] = results;
  j["n_samples"] = c.evaluation.n_samples;
  j["n_steps"] = c.evaluation.n_steps;
  if (kind == TrainKind::paired || kind == TrainKind::abm) {
    const json w = aggregate(results, "wsd");
    j["wsd_mean"] = w["mean"];
    j["wsd_std"] = w["std"];
    const json m = aggregate(results, "mode_accuracy");
    j["mode_accuracy"] = m.is_null() ? json(nullptr) : m["mean"];
  } else {
    for (const char* key : {"w1_forward", "w1_backward", "coupling_correlation"}) {
      const json g = aggregate(results, key);
      j[std::string(key) + "_mean"] = g["mean"];
      j[std::string(key) + "_std"] = g["std"];
    }
  }
  j["provenance"] = provenance_json(config_hash(c), c.seed);
  const std::string text = render(j);
  write_text_file(join(c.output_dir, "metrics_" + command + ".json"), text);
  out << text;
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  Overrides o;
  std::vector<std::string> checkpoints;
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  RunConfig c = resolve_config(a.o);
  c.validate();
  if (a.checkpoints.empty()) throw InvalidConfig("--checkpoint: at least one checkpoint is required");
  const Datasets data = load_datasets(c);
  std::vector<json> evals;
  std::vector<double> wsds;
  std::vector<double> accs;
  for (const std::string& path : a.checkpoints) {
    if (!fs::exists(path)) throw CheckpointMismatch("checkpoint '" + path + "' does not exist");
    CheckpointMeta meta;
    const TrainableModel model = load_checkpoint(path, meta);
    RunConfig mc = c;
    if (meta.role == "abm") mc.reference = ReferenceKind::brownian;
    const bool paired = meta.role == "paired" || meta.role == "abm";
    // Unpaired checkpoints may come from either stage.
    const bool known = meta.config_hash == model_config_hash(mc) ||
                       (!paired && meta.config_hash == model_config_hash(mc, true));
    if (!known) {
      throw CheckpointMismatch("checkpoint '" + path + "' was trained with config " + hash_hex(meta.config_hash) +
                               ", the current config hashes to " + hash_hex(model_config_hash(mc)));
    }
    if (!paired && meta.role != "forward" && meta.role != "backward") {
      throw CheckpointMismatch("checkpoint '" + path + "' has unknown role '" + meta.role + "'");
    }
    const Conditioning cond = paired ? Conditioning::paired : Conditioning::unpaired;
    if (model.model.config().input_dim != network_input_dim(cond, data.test.dim) ||
        model.model.config().output_dim != data.test.dim) {
      throw CheckpointMismatch("checkpoint '" + path + "' does not match the dataset dimension");
    }
    const Reference ref = make_reference(mc.reference, mc.process);
    const Mlp ema = model.ema_model();
    for (int k = 0; k < c.evaluation.trials; ++k) {
      // Sampling trial 0 reuses the training seed, so it reproduces the train report.
      const std::uint64_t seed = meta.seed + (static_cast<std::uint64_t>(k) << 32);
      json e{{"checkpoint", path}, {"role", meta.role}, {"sampling_trial", k}, {"seed", seed}};
      if (paired) {
        const PairedEvaluation ev = evaluate_paired(ref, ema, mc.training.mode, data.test, c.dataset.name,
                                                    c.evaluation.n_samples, sample_options(c), seed);
        e["wsd"] = ev.wsd;
        wsds.push_back(ev.wsd);
        if (ev.mode_accuracy >= 0.0) {
          e["mode_accuracy"] = ev.mode_accuracy;
          accs.push_back(ev.mode_accuracy);
        }
      } else {
        const bool fwd = meta.role == "forward";
        const DenseMatrix start = fwd ? data.test.sources() : data.test.targets();
        const DenseMatrix goal = fwd ? data.test.targets() : data.test.sources();
        const auto n = std::min<Eigen::Index>(start.cols(), static_cast<Eigen::Index>(c.evaluation.n_samples));
        const DenseMatrix gen = generate(ref, predictor_of(ema), cond, mc.training.mode, start.leftCols(n),
                                         sample_options(c), seed, 0, Execution::parallel)
                                    .terminal;
        e["wsd"] = wasserstein1(gen, goal);
        e["coupling_correlation"] = coupling_correlation(start.leftCols(n), gen);
        wsds.push_back(e["wsd"].get<double>());
      }
      evals.push_back(e);
    }
  }
  const MeanStd w = mean_std(wsds);
  json j;
  j["evaluations"] = evals;
  j["wsd_mean"] = w.mean;
  j["wsd_std"] = w.std;
  j["mode_accuracy"] = accs.empty() ? json(nullptr) : json(mean_std(accs).mean);
  j["n_samples"] = c.evaluation.n_samples;
  j["n_steps"] = c.evaluation.n_steps;
  j["provenance"] = provenance_json(config_hash(c), c.seed);
  const std::string text = render(j);
  const std::string path = a.out.empty() ? join(c.output_dir, "metrics_eval.json") : a.out;
  if (a.out.empty()) ensure_directory(c.output_dir);
  write_text_file(path, text);
  out << text;
  return kOk;
}

// ---------------------------------------------------------------- dataset

struct ExportArgs {
  Overrides o;
  std::string split = "all";
  std::string out;
};

int cmd_export(const ExportArgs& a, std::ostream& out) {
  RunConfig c = resolve_config(a.o);
  c.validate();
  const Datasets data = load_datasets(c);
  const PairDataset* chosen = nullptr;
  if (a.split == "all") chosen = &data.all;
  if (a.split == "train") chosen = &data.train;
  if (a.split == "val") chosen = &data.val;
  if (a.split == "test") chosen = &data.test;
  if (!chosen) throw InvalidConfig("--split: expected all, train, val or test");
  const Provenance prov{config_hash(c), c.seed};
  std::ostringstream csv;
  write_dataset_csv(csv, *chosen, prov.comment() + " dataset=" + c.dataset.name + " split=" + a.split);
  if (a.out.empty()) {
    out << csv.str();
  } else {
    write_text_file(a.out, csv.str());
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  apply_thread_limit_from_env();
  CLI::App app{"Fractional diffusion bridge models: coefficients, bridge simulation, training and evaluation",
               "fbridge"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  CoeffsArgs coeffs;
  CLI::App* c_coeffs = app.add_subcommand("coeffs", "optimal MA-fBM weights and their L2 error");
  add_overrides(c_coeffs, coeffs.o);
  c_coeffs->add_option("--mc-paths", coeffs.mc_paths, "Monte-Carlo paths for the L2 error");
  c_coeffs->add_option("--mc-times", coeffs.mc_times, "time points for the L2 error");
  c_coeffs->add_option("--out", coeffs.out, "also write the JSON here");

  SimulateArgs sim;
  CLI::App* c_sim = app.add_subcommand("simulate", "sample fractional bridge paths to CSV (and SVG)");
  add_overrides(c_sim, sim.o);
  c_sim->add_option("--n-paths", sim.n_paths, "number of trajectories");
  c_sim->add_option("--n-steps", sim.n_steps, "Euler-Maruyama steps");
  c_sim->add_option("--x0", sim.x0, "start point")->delimiter(',');
  c_sim->add_option("--x1", sim.x1, "end point")->delimiter(',');
  c_sim->add_flag("--exact-marginals", sim.exact, "draw closed-form marginals at --times instead of paths");
  c_sim->add_option("--times", sim.times, "times for --exact-marginals")->delimiter(',');
  c_sim->add_option("--record-every", sim.record_every, "keep every n-th EM state");
  c_sim->add_option("--out", sim.out, "CSV path (default <output-dir>/trajectories.csv)");
  c_sim->add_option("--svg", sim.svg, "also plot the (x_1, x_2) paths to this SVG file");

  TrainArgs train;
  CLI::App* c_train = app.add_subcommand("train", "train bridge models");
  c_train->require_subcommand(1);
  struct Variant {
    const char* name;
    const char* help;
    TrainKind kind;
  };
  const Variant variants[] = {
      {"paired", "paired bridge model on the configured reference", TrainKind::paired},
      {"abm", "paired model on the Brownian reference", TrainKind::abm},
      {"unpaired-pretrain", "forward and backward models on independent pairs", TrainKind::unpaired_pretrain},
      {"unpaired-finetune", "alpha-IMF finetuning of pretrained unpaired models", TrainKind::unpaired_finetune},
  };
  std::vector<std::pair<CLI::App*, TrainKind>> train_cmds;
  for (const Variant& v : variants) {
    CLI::App* sub = c_train->add_subcommand(v.name, v.help);
    add_overrides(sub, train.o);
    sub->add_option("--trials", train.o.trials, "independent trials with seeds seed .. seed+N-1");
    sub->add_flag("--parallel-trials", train.parallel_trials, "run trials concurrently");
    sub->add_flag("--resume", train.resume, "continue from checkpoints in the output directory");
    sub->add_option("--checkpoint-every", train.checkpoint_every, "also checkpoint every N steps");
    sub->add_flag("-q,--quiet", train.quiet, "no progress output");
    train_cmds.emplace_back(sub, v.kind);
  }

  EvalArgs ev;
  CLI::App* c_eval = app.add_subcommand("eval", "evaluate checkpoints on the test split");
  add_overrides(c_eval, ev.o);
  c_eval->add_option("--checkpoint", ev.checkpoints, "checkpoint file (repeatable)");
  c_eval->add_option("--trials", ev.o.trials, "sampling trials per checkpoint");
  c_eval->add_option("--out", ev.out, "metrics path (default <output-dir>/metrics_eval.json)");

  ExportArgs ex;
  CLI::App* c_data = app.add_subcommand("dataset", "dataset utilities");
  c_data->require_subcommand(1);
  CLI::App* c_export = c_data->add_subcommand("export", "write the configured dataset as CSV");
  add_overrides(c_export, ex.o);
  c_export->add_option("--split", ex.split, "all | train | val | test");
  c_export->add_option("--out", ex.out, "CSV path (stdout when omitted)");

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::ostringstream msg;
    app.exit(e, msg, msg);
    err << msg.str();
    return kConfigError;
  }

  try {
    if (*c_coeffs) return cmd_coeffs(coeffs, out);
    if (*c_sim) return cmd_simulate(sim, out);
    for (const auto& [sub, kind] : train_cmds) {
      if (*sub) return cmd_train(kind, train, out, err);
    }
    if (*c_eval) return cmd_eval(ev, out);
    if (*c_export) return cmd_export(ex, out);
  } catch (const InvalidConfig& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const IoError& e) {
    err << "write error: " << e.what() << '\n';
    return kWriteError;
  } catch (const DivergenceDetected& e) {
    err << "diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const NonFiniteGradient& e) {
    err << "diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const CheckpointMismatch& e) {
    err << "checkpoint mismatch: " << e.what() << '\n';
    return kCheckpointMismatch;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

}  // namespace fbridge::cli
