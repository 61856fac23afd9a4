#pragma once

// Experiment harness behind the command-line tool: config files, run
// directories, dataset generation, training, evaluation, ablations and
// model-space export.
//
// A run directory holds:
//   config.json       the full experiment config with every default filled in
//   checkpoint.json   final MetaState
//   train_log.jsonl   one record per epoch
//   report.json       test-split MetricsReport
//   model_space.jsonl per-epoch task deltas and neighborhoods (Ada-SiT mode)

#include "adasit/checkpoint.hpp"
#include "adasit/data.hpp"
#include "adasit/metatrain.hpp"
#include "adasit/metrics.hpp"
#include "adasit/model.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace adasit {

struct DatasetSource {
  std::string path;                         // dataset directory or manifest; empty when synthetic
  std::string preset = "two-regime";        // used when path is empty and no explicit synthetic config
  std::optional<SyntheticConfig> synthetic; // overrides preset
  std::uint64_t seed = 0;                   // generation + split seed for synthetic data
};

struct ExperimentConfig {
  DatasetSource dataset;
  std::size_t max_sequence_length = 64;
  std::size_t embed_dim = 8;
  std::size_t hidden_dim = 8;
  double init_scale = 0.1;
  double forget_bias = 1.0;
  TrainMode mode = TrainMode::adasit;
  TrainConfig train;
  std::filesystem::path output_dir;  // empty: $ADASIT_OUTPUT_ROOT or ./runs
  std::vector<std::uint64_t> seeds{0};
  bool export_model_space = true;
};

nlohmann::json to_json(const ExperimentConfig& config);
/// Rejects unknown keys; missing keys keep their defaults.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void validate(const ExperimentConfig& config);

/// Output root: config.output_dir, else $ADASIT_OUTPUT_ROOT, else "runs".
std::filesystem::path output_root(const ExperimentConfig& config);

/// Raw dataset (loaded or generated), before truncation/normalization.
DatasetManifest load_raw_dataset(const ExperimentConfig& config);
/// Dataset as trained on: truncated and z-scored on the training splits.
DatasetManifest load_training_dataset(const ExperimentConfig& config);

ModelConfig model_config(const ExperimentConfig& config, const Vocabulary& vocab);

struct RunResult {
  std::filesystem::path run_dir;
  MetricsReport test_report;
  Checkpoint checkpoint;
};

/// One training run with `seed`; writes every run artifact under run_dir.
/// With `resume`, training continues from that checkpoint's running state
/// (Ada-SiT mode only; the model and training configs must match apart from
/// max_epochs).
RunResult run_training(const ExperimentConfig& config, std::uint64_t seed, const std::filesystem::path& run_dir,
                       const DatasetManifest& data, std::ostream* log = nullptr, const Checkpoint* resume = nullptr);

/// Task parameters used for evaluation: the finalized Ada-SiT state, or the
/// shared theta for every task in pooled mode.
std::vector<ParamVector> final_task_params(const Checkpoint& checkpoint, const DatasetManifest& data);

struct AblationRow {
  std::string name;
  std::vector<double> auc;
  std::vector<double> ap;
};

/// mean and sample standard deviation (n - 1; 0 for a single value).
std::pair<double, double> mean_std(const std::vector<double>& values);
/// "0.8729 (0.0112)"
std::string format_mean_std(const std::vector<double>& values);
std::string format_ablation_table(const std::vector<AblationRow>& rows);

/// Table-3 style statistics block.
std::string format_dataset_stats(const DatasetManifest& manifest);

// Commands. Each returns the process exit status and reports errors on `err`.
int cmd_gen_data(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::ostream& out,
                 std::ostream& err);
int cmd_train(const ExperimentConfig& config, std::ostream& out, std::ostream& err);
/// Continues the run in `run_dir` up to `max_epochs` (default: the stored
/// config's) and rewrites its artifacts.
int cmd_resume(const std::filesystem::path& run_dir, std::optional<std::size_t> max_epochs, std::ostream& out,
               std::ostream& err);
int cmd_eval(const std::filesystem::path& run_dir, Split split, std::ostream& out, std::ostream& err);
int cmd_ablate(const ExperimentConfig& config, bool include_pooled, std::ostream& out, std::ostream& err);
int cmd_export_model_space(const std::filesystem::path& checkpoint, const std::filesystem::path& out_path,
                           std::ostream& out, std::ostream& err);

}  // namespace adasit
