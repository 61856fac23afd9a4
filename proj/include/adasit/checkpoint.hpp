#pragma once

// Run artifacts: checkpoints (theta, task parameters, history, early-stop
// bookkeeping) and the line-delimited training log.

#include "adasit/metatrain.hpp"
#include "adasit/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace adasit {

enum class TrainMode { adasit, pooled };

std::string_view mode_name(TrainMode mode) noexcept;
TrainMode parse_mode(std::string_view name);

struct TaskSummary {
  std::string task_id;
  double positive_rate = 0.0;

  friend bool operator==(const TaskSummary&, const TaskSummary&) = default;
};

struct Checkpoint {
  TrainMode mode = TrainMode::adasit;
  ModelConfig model;
  TrainConfig train;
  std::vector<TaskSummary> tasks;
  MetaState state;
};

/// Hash of everything that must agree for a checkpoint to be resumed.
std::uint64_t checkpoint_config_hash(TrainMode mode, const ModelConfig& model, const TrainConfig& train);

std::vector<TaskSummary> summarize_tasks(const DatasetManifest& manifest);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
/// Verifies the stored config hash against the stored configs.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes one JSON line per epoch record (truncating the file).
void write_training_log(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

}  // namespace adasit
