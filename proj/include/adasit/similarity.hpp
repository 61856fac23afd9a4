#pragma once

// Task similarity in model space and the neighborhoods N(task_i) built from it.
//
// A task's position is its adaptation delta theta_i - theta. Two tasks are
// compared by the cosine of their deltas; a zero delta has no direction, so
// any pair involving one scores 0, such a task is its own only neighbor and
// it is nobody else's neighbor.

#include "adasit/data.hpp"
#include "adasit/params.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace adasit {

enum class SimilarityStrategy { cosine, knn, static_rate, identity };

std::string_view strategy_name(SimilarityStrategy s) noexcept;
SimilarityStrategy parse_strategy(std::string_view name);

struct SimilarityConfig {
  SimilarityStrategy strategy = SimilarityStrategy::cosine;
  double eta = 0.7;               // cosine threshold, in (-1, 1]
  std::size_t k = 5;              // knn
  double static_tolerance = 0.02; // max |positive_rate difference|

  friend bool operator==(const SimilarityConfig&, const SimilarityConfig&) = default;
};

void validate(const SimilarityConfig& config);
nlohmann::json to_json(const SimilarityConfig& config);
SimilarityConfig similarity_config_from_json(const nlohmann::json& j, SimilarityConfig defaults = {});

/// Whether the strategy reads per-task parameters (and so needs a previous epoch).
bool needs_parameters(SimilarityStrategy s) noexcept;

struct NeighborhoodAssignment {
  std::size_t epoch = 0;
  SimilarityStrategy strategy = SimilarityStrategy::identity;
  std::vector<std::string> task_ids;
  /// neighbors[i]: sorted task indices, always containing i.
  std::vector<std::vector<std::size_t>> neighbors;

  bool contains(std::size_t i, std::size_t j) const;
  double mean_size() const noexcept;
};

/// cos(delta_i, delta_j) of two deltas; 0 if either has zero norm.
double delta_cosine(std::span<const double> delta_i, std::span<const double> delta_j);
/// cos(theta_i - theta, theta_j - theta).
double cos_delta(const ParamVector& theta_i, const ParamVector& theta_j, const ParamVector& theta);

/// Full M x M cosine matrix of the tasks' deltas.
std::vector<std::vector<double>> cosine_matrix(std::span<const ParamVector> thetas, const ParamVector& theta);

/// j in N(i) iff cos_delta > eta, plus i itself.
NeighborhoodAssignment neighborhood_cosine(std::span<const std::string> task_ids, std::span<const ParamVector> thetas,
                                           const ParamVector& theta, double eta);
/// i plus the k other tasks with the largest cosine (ties: lower task id).
NeighborhoodAssignment neighborhood_knn(std::span<const std::string> task_ids, std::span<const ParamVector> thetas,
                                        const ParamVector& theta, std::size_t k);
/// j in N(i) iff |rate_i - rate_j| <= tolerance.
NeighborhoodAssignment neighborhood_static(std::span<const TaskCorpus> tasks, double tolerance);
NeighborhoodAssignment neighborhood_identity(std::span<const std::string> task_ids);

/// Neighborhoods for one epoch. Without task parameters (the first epoch),
/// strategies that need them fall back to identity.
NeighborhoodAssignment measure_neighborhoods(const SimilarityConfig& config, std::span<const TaskCorpus> tasks,
                                             std::optional<std::span<const ParamVector>> task_params,
                                             const ParamVector* theta, std::size_t epoch);

/// One JSON object per line: epoch, task_id, regime (when encoded in the id),
/// positive_rate, delta, delta_norm, zero_delta, isolated (zero delta or no
/// neighbor besides itself), neighbors.
void export_model_space(const std::filesystem::path& path, std::size_t epoch, std::span<const TaskCorpus> tasks,
                        std::span<const ParamVector> thetas, const ParamVector& theta,
                        const NeighborhoodAssignment& assignment, bool append = false);

}  // namespace adasit
