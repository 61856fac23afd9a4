#pragma once

// Meta-training over tasks with adaptation to similar tasks.
//
// One epoch:
//   1. measure neighborhoods N(task_i) from the previous epoch's task
//      parameters (identity on the first epoch for parameter-based strategies);
//   2. for each task batch, pool the training samples of N(task_i), draw
//      disjoint D_tr / D_val, take one gradient step on D_tr from theta, and
//      add the D_val gradient at the adapted point to the meta-gradient
//      (first-order: no Hessian term); then theta -= beta * sum;
//   3. adapt every task from the new theta on its own training split. These
//      theta_i are the task models and feed the next epoch's similarity.
// Early stopping watches pooled validation micro-AUC of the theta_i.

#include "adasit/data.hpp"
#include "adasit/metrics.hpp"
#include "adasit/model.hpp"
#include "adasit/objective.hpp"
#include "adasit/params.hpp"
#include "adasit/rng.hpp"
#include "adasit/similarity.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace adasit {

struct TrainConfig {
  double alpha = 0.0005;           // inner learning rate
  double beta = 0.001;             // meta learning rate
  std::size_t inner_steps = 1;     // steps of the end-of-epoch per-task adaptation
  std::size_t dtr_size = 16;
  std::size_t dval_size = 16;
  std::size_t task_batch = 0;      // tasks per meta-update; 0 means all tasks
  std::size_t max_epochs = 100;
  std::size_t early_stop_patience = 10;
  std::uint64_t seed = 0;
  SimilarityConfig similarity;
  // Pooled single-model baseline.
  double pooled_learning_rate = 0.001;
  std::size_t pooled_batch_size = 32;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void validate(const TrainConfig& config);
nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});

struct EpochRecord {
  std::size_t epoch = 0;
  double meta_loss = 0.0;
  double val_auc = std::numeric_limits<double>::quiet_NaN();  // NaN when the pooled split is single-class
  double mean_neighborhood_size = 0.0;
};

nlohmann::json to_json(const EpochRecord& record);
EpochRecord epoch_record_from_json(const nlohmann::json& j);

struct MetaState {
  ParamVector theta;
  std::vector<ParamVector> task_params;  // aligned with the manifest's tasks
  std::size_t epoch = 0;                 // completed epochs
  ParamVector best_theta;
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t epochs_since_best = 0;
  std::vector<EpochRecord> history;
};

/// Fresh state: every task starts at theta, no history.
MetaState initial_state(const ParamVector& theta, std::size_t task_count);

/// Receives every split read made by training and evaluation.
class SplitAccessObserver {
 public:
  virtual ~SplitAccessObserver() = default;
  virtual void on_access(const TaskCorpus& task, Split split, std::size_t count) = 0;
};

struct TrainHooks {
  SplitAccessObserver* observer = nullptr;
  /// Called after each epoch with the state and the neighborhoods used in it.
  std::function<void(const MetaState&, const NeighborhoodAssignment&)> on_epoch;
};

struct ExtendedSampleSet {
  std::string anchor_task;
  std::vector<const EpisodeSample*> samples;  // training splits of every task in N(anchor)
};

ExtendedSampleSet build_extended_set(std::span<const TaskCorpus> tasks, const NeighborhoodAssignment& assignment,
                                     std::size_t anchor, SplitAccessObserver* observer = nullptr);

struct TrValPair {
  std::vector<const EpisodeSample*> train;
  std::vector<const EpisodeSample*> val;
};

/// Disjoint subsets drawn without replacement. When the pool is smaller than
/// dtr + dval, D_tr takes min(dtr, pool - 1) and D_val the rest up to dval.
TrValPair sample_tr_val(const ExtendedSampleSet& ext, std::size_t dtr_size, std::size_t dval_size, Rng& rng);

/// `steps` plain gradient-descent steps on the summed loss over `batch`.
ParamVector inner_adapt(const Objective& objective, const ParamVector& theta, SampleBatch batch, double alpha,
                        std::size_t steps);

struct MetaStepResult {
  double meta_loss = 0.0;       // sum over tasks of L_val at the adapted parameters
  ParamVector meta_gradient;    // sum over tasks of the first-order meta-gradients
  std::size_t tasks_used = 0;
};

/// One outer update of state.theta over the tasks in `batch` (indices into tasks).
MetaStepResult meta_step(const Objective& objective, MetaState& state, std::span<const TaskCorpus> tasks,
                         std::span<const std::size_t> batch, const NeighborhoodAssignment& assignment,
                         const TrainConfig& config, Rng& rng, SplitAccessObserver* observer = nullptr);

/// theta_i = inner_adapt(theta, train split of task i, alpha, steps) for every task.
std::vector<ParamVector> adapt_all_tasks(const Objective& objective, const ParamVector& theta,
                                         std::span<const TaskCorpus> tasks, double alpha, std::size_t steps,
                                         SplitAccessObserver* observer = nullptr);

/// Scores every sample of `split` with its task's parameters.
MetricsReport evaluate(const Objective& objective, std::span<const ParamVector> task_params,
                       std::span<const TaskCorpus> tasks, Split split, SplitAccessObserver* observer = nullptr);
/// Same, with one shared parameter vector for every task.
MetricsReport evaluate(const Objective& objective, const ParamVector& shared, std::span<const TaskCorpus> tasks,
                       Split split, SplitAccessObserver* observer = nullptr);

/// Runs (or resumes) epochs from `state` until max_epochs or early stop.
/// The returned state is the running one: theta and task_params are those of
/// the last epoch, so passing it back in continues the same trajectory.
MetaState run_epochs(const Objective& objective, MetaState state, const DatasetManifest& manifest,
                     const TrainConfig& config, const TrainHooks& hooks = {});
/// Final model of a run: best_theta (when some epoch had a defined validation
/// AUC, otherwise the running theta) with task parameters adapted from it.
MetaState finalize(const Objective& objective, MetaState state, const DatasetManifest& manifest,
                   const TrainConfig& config, SplitAccessObserver* observer = nullptr);
/// finalize(run_epochs(...)).
MetaState train(const Objective& objective, MetaState state, const DatasetManifest& manifest,
                const TrainConfig& config, const TrainHooks& hooks = {});
/// Convenience: backbone initialised from config.seed.
MetaState train(const Backbone& model, const DatasetManifest& manifest, const TrainConfig& config,
                const TrainHooks& hooks = {});

struct PooledResult {
  ParamVector theta;
  std::vector<EpochRecord> history;  // meta_loss holds the epoch's summed training loss
};

/// Mini-batch gradient descent of one model on the union of all training
/// splits, early-stopped on pooled validation micro-AUC.
PooledResult train_pooled(const Objective& objective, const ParamVector& initial, const DatasetManifest& manifest,
                          const TrainConfig& config, SplitAccessObserver* observer = nullptr);
PooledResult train_pooled(const Backbone& model, const DatasetManifest& manifest, const TrainConfig& config,
                          SplitAccessObserver* observer = nullptr);

}  // namespace adasit
