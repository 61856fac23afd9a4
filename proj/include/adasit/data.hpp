#pragma once

// Event-sequence data model, dataset files, splits and synthetic task
// collections.
//
// A dataset is a directory holding a JSON manifest plus one line-delimited
// records file per task. The grammar is documented in docs/dataset_format.md.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace adasit {

struct EventRecord {
  std::size_t event_type = 0;
  std::vector<std::size_t> categorical;
  std::vector<double> numeric;
  double time = 0.0;  // hours from episode start

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

struct EpisodeSample {
  std::vector<EventRecord> events;
  int label = 0;

  friend bool operator==(const EpisodeSample&, const EpisodeSample&) = default;
};

enum class Split { train, valid, test };

std::string_view split_name(Split split) noexcept;
Split parse_split(std::string_view name);

struct SplitRatios {
  double train = 0.7;
  double valid = 0.1;
  double test = 0.2;

  friend bool operator==(const SplitRatios&, const SplitRatios&) = default;
};

struct SplitIndex {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;

  const std::vector<std::size_t>& part(Split split) const noexcept;

  friend bool operator==(const SplitIndex&, const SplitIndex&) = default;
};

struct TaskCorpus {
  std::string task_id;
  std::vector<EpisodeSample> samples;
  SplitIndex split;
  double positive_rate = 0.0;

  friend bool operator==(const TaskCorpus&, const TaskCorpus&) = default;
};

struct Vocabulary {
  std::vector<std::string> event_types;
  std::vector<std::string> categorical_values;
  std::size_t numeric_dims = 0;

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

struct DatasetStats {
  std::size_t task_count = 0;
  std::size_t sample_count = 0;
  std::size_t positive_count = 0;
  double positive_rate = 0.0;
  std::size_t min_samples_per_task = 0;
  std::size_t max_samples_per_task = 0;
  double mean_samples_per_task = 0.0;

  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

struct DatasetManifest {
  std::string name;
  Vocabulary vocab;
  std::vector<TaskCorpus> tasks;
  DatasetStats stats;
  std::uint64_t split_seed = 0;
  SplitRatios ratios;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// ---------------------------------------------------------------------------
// Splits

/// train = floor(r_train*n), valid = max(1, floor(r_valid*n)), test = rest.
/// Indices are shuffled with `seed` before being cut. Requires n >= 3.
SplitIndex split_task(std::size_t n_samples, const SplitRatios& ratios, std::uint64_t seed);

/// Per-task split seed; depends only on the global seed and the task id.
std::uint64_t task_split_seed(std::uint64_t global_seed, std::string_view task_id) noexcept;

/// Builds a TaskCorpus with its split and positive rate filled in.
TaskCorpus make_task(std::string task_id, std::vector<EpisodeSample> samples,
                     const SplitRatios& ratios, std::uint64_t global_seed);

DatasetStats compute_stats(const std::vector<TaskCorpus>& tasks);

/// Assembles a manifest and validates it.
DatasetManifest make_manifest(std::string name, Vocabulary vocab, std::vector<TaskCorpus> tasks,
                              std::uint64_t split_seed, const SplitRatios& ratios = {});

/// Checks every invariant of the data model; throws adasit::Error naming the
/// task and sample on the first violation.
void validate(const DatasetManifest& manifest);

/// Samples of one split, in split order.
std::vector<const EpisodeSample*> split_samples(const TaskCorpus& task, Split split);

/// Keeps the most recent `max_events` events of every episode.
DatasetManifest truncate_sequences(const DatasetManifest& manifest, std::size_t max_events);

// ---------------------------------------------------------------------------
// Numeric attribute normalization

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Per-dimension mean/stddev over the training splits of all tasks.
/// Dimensions with zero spread get stddev 1.
NormalizationStats compute_normalization(const DatasetManifest& manifest);
DatasetManifest apply_normalization(const DatasetManifest& manifest, const NormalizationStats& stats);

struct PrepareOptions {
  std::size_t max_sequence_length = 64;
  bool normalize = true;
};

/// Truncation followed by train-split z-scoring. The usual step between
/// loading a dataset and training on it.
DatasetManifest prepare_for_training(const DatasetManifest& manifest, const PrepareOptions& options = {});

// ---------------------------------------------------------------------------
// Files

struct LoadOptions {
  std::size_t max_sequence_length = 64;
};

/// Loads and validates a dataset. `path` is the manifest file or the
/// directory containing manifest.json.
DatasetManifest load_dataset(const std::filesystem::path& path, const LoadOptions& options = {});

/// Writes manifest.json and tasks/<index>.txt under `dir`.
void save_dataset(const DatasetManifest& manifest, const std::filesystem::path& dir);

/// One records-file line for an episode (no trailing newline).
std::string format_episode(const EpisodeSample& sample);
/// Parses one records-file line; `path`/`line` are used only in error messages.
EpisodeSample parse_episode(std::string_view text, const std::string& path = "<memory>",
                            std::size_t line = 0);

// ---------------------------------------------------------------------------
// Synthetic multi-regime tasks

struct RegimeSpec {
  std::string name;
  double positive_rate = 0.1;   // target population rate; the label intercept is calibrated to it
  std::size_t task_count = 1;
  std::vector<double> type_weights;     // event-type frequencies, one per event type
  std::vector<double> count_weights;    // label weight on each event type's share of the episode
  std::vector<double> numeric_weights;  // label weight on each numeric dim's episode mean
  std::vector<double> numeric_shift;    // additive offset on each numeric dim

  friend bool operator==(const RegimeSpec&, const RegimeSpec&) = default;
};

struct SyntheticConfig {
  std::string name = "synthetic";
  std::size_t event_types = 6;
  std::size_t categorical_values = 4;
  std::size_t numeric_dims = 2;
  std::size_t min_samples_per_task = 40;
  std::size_t max_samples_per_task = 40;
  std::size_t min_events = 4;
  std::size_t max_events = 24;
  double task_jitter = 0.3;      // log-normal spread of per-task type frequencies
  double severity_scale = 0.7;   // shared per-episode shift of numeric values
  std::vector<RegimeSpec> regimes;
  SplitRatios ratios;

  friend bool operator==(const SyntheticConfig&, const SyntheticConfig&) = default;
};

/// Two regimes with opposite numeric-attribute effects and different base rates.
SyntheticConfig two_regime_preset(double rate_a = 0.05, double rate_b = 0.35,
                                  std::size_t tasks_per_regime = 15, std::size_t samples_per_task = 20);
/// 70 tasks x 100 samples, overall positive rate near 13%.
SyntheticConfig mini_eicu_preset();
/// Looks up "two-regime" or "mini-eicu".
SyntheticConfig synthetic_preset(std::string_view name);

void validate(const SyntheticConfig& config);

DatasetManifest generate_synthetic_tasks(const SyntheticConfig& config, std::uint64_t seed);

/// Regime index encoded in a generated task id ("...r<k>"), if present.
std::optional<std::size_t> regime_of(std::string_view task_id);

nlohmann::json to_json(const SyntheticConfig& config);
/// Rejects unknown keys; missing keys take the defaults above.
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);

}  // namespace adasit
