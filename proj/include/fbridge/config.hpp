#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fbridge/datasets.hpp"
#include "fbridge/paired.hpp"
#include "fbridge/unpaired.hpp"

namespace fbridge {

struct DatasetSection {
  std::string name = "moons";
  std::size_t n_train = 10000;
  std::size_t n_val = 1000;
  std::size_t n_test = 10000;
  double noise = -1.0;
  std::string path;  // optional CSV; generated in-process when empty
};

struct EvaluationSection {
  std::size_t n_samples = 10000;
  int n_steps = 100;
  int trials = 1;
};

struct SimulateSection {
  int n_paths = 1;
  int n_steps = 100;
  std::vector<double> x0 = {0.0, 0.0};
  std::vector<double> x1 = {0.0, 0.0};
  bool exact_marginals = false;
  std::vector<double> times = {0.25, 0.5, 0.75};
  int record_every = 1;
};

/// The whole configuration tree. Parsed from TOML, then overridden by flags.
struct RunConfig {
  std::uint64_t seed = 0;
  ReferenceKind reference = ReferenceKind::fractional;
  ProcessConfig process;
  std::vector<int> hidden = {128, 128, 128};
  TrainConfig training;
  UnpairedConfig unpaired;  // only its finetuning fields are read from here
  DatasetSection dataset;
  EvaluationSection evaluation;
  SimulateSection simulate;
  std::string output_dir = ".";

  /// Throws InvalidConfig naming the first offending field.
  void validate() const;

  PairedTrainConfig paired_config() const;
  UnpairedConfig unpaired_config() const;
  ToySpec toy_spec() const;
};

/// Parses TOML text; unknown keys are rejected.
RunConfig parse_config(const std::string& toml_text, const std::string& source_name = "config");
RunConfig load_config(const std::string& path);

/// Canonical JSON of every field (sorted keys), the input of config_hash.
std::string canonical_json(const RunConfig& config);
std::uint64_t config_hash(const RunConfig& config);
/// Hash of the sections that determine a trained model, stamped into
/// checkpoints. Evaluation, simulation and output settings never count; the
/// unpaired finetuning fields count only when `with_finetune` is set.
std::uint64_t model_config_hash(const RunConfig& config, bool with_finetune = false);

}  // namespace fbridge
