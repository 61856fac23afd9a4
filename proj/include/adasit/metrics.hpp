#pragma once

// AUC and average precision for imbalanced binary labels, with explicit tie
// rules: AUC counts tied (positive, negative) pairs as one half, AP enters all
// samples sharing a score at the same threshold.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace adasit {

/// Mann-Whitney statistic. Requires both classes and equal lengths.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Sum over descending score thresholds of (R_n - R_{n-1}) P_n. Requires a positive.
double average_precision(std::span<const double> scores, std::span<const int> labels);

struct TaskMetrics {
  std::optional<double> auc;  // absent when the split is single-class
  std::optional<double> ap;
  std::size_t n = 0;
  std::size_t n_pos = 0;

  friend bool operator==(const TaskMetrics&, const TaskMetrics&) = default;
};

struct MetricsReport {
  double micro_auc = 0.0;
  double micro_ap = 0.0;
  std::optional<double> macro_auc;  // mean over tasks with defined metrics
  std::optional<double> macro_ap;
  std::map<std::string, TaskMetrics> per_task;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

struct TaskPredictions {
  std::string task_id;
  std::vector<double> scores;
  std::vector<int> labels;
};

/// Micro metrics over the pooled predictions, per-task metrics where both
/// classes are present, macro = unweighted mean of the defined per-task values.
MetricsReport build_report(std::span<const TaskPredictions> predictions);

nlohmann::json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);

}  // namespace adasit
