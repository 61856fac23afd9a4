#include "adasit/metatrain.hpp"

#include "adasit/error.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

namespace adasit {

using nlohmann::json;

void validate(const TrainConfig& c) {
  if (!(c.alpha >= 0.0) || !std::isfinite(c.alpha)) throw Error("train: alpha must be finite and >= 0");
  if (!(c.beta >= 0.0) || !std::isfinite(c.beta)) throw Error("train: beta must be finite and >= 0");
  if (c.dtr_size < 1 || c.dval_size < 1) throw Error("train: dtr_size and dval_size must be >= 1");
  if (c.early_stop_patience < 1) throw Error("train: early_stop_patience must be >= 1");
  if (!(c.pooled_learning_rate >= 0.0)) throw Error("train: pooled_learning_rate must be >= 0");
  if (c.pooled_batch_size < 1) throw Error("train: pooled_batch_size must be >= 1");
  validate(c.similarity);
}

json to_json(const TrainConfig& c) {
  return json{{"alpha", c.alpha},
              {"beta", c.beta},
              {"inner_steps", c.inner_steps},
              {"dtr_size", c.dtr_size},
              {"dval_size", c.dval_size},
              {"task_batch", c.task_batch},
              {"max_epochs", c.max_epochs},
              {"early_stop_patience", c.early_stop_patience},
              {"seed", c.seed},
              {"similarity", to_json(c.similarity)},
              {"pooled_learning_rate", c.pooled_learning_rate},
              {"pooled_batch_size", c.pooled_batch_size}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) throw Error("train: expected an object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "alpha") {
        c.alpha = value.get<double>();
      } else if (key == "beta") {
        c.beta = value.get<double>();
      } else if (key == "inner_steps") {
        c.inner_steps = value.get<std::size_t>();
      } else if (key == "dtr_size") {
        c.dtr_size = value.get<std::size_t>();
      } else if (key == "dval_size") {
        c.dval_size = value.get<std::size_t>();
      } else if (key == "task_batch") {
        c.task_batch = value.get<std::size_t>();
      } else if (key == "max_epochs") {
        c.max_epochs = value.get<std::size_t>();
      } else if (key == "early_stop_patience") {
        c.early_stop_patience = value.get<std::size_t>();
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else if (key == "similarity") {
        c.similarity = similarity_config_from_json(value, c.similarity);
      } else if (key == "pooled_learning_rate") {
        c.pooled_learning_rate = value.get<double>();
      } else if (key == "pooled_batch_size") {
        c.pooled_batch_size = value.get<std::size_t>();
      } else {
        throw Error("train: unknown field '" + key + "'");
      }
    } catch (const json::exception& ex) {
      throw Error("train." + key + ": " + ex.what());
    }
  }
  validate(c);
  return c;
}

json to_json(const EpochRecord& r) {
  return json{{"epoch", r.epoch},
              {"meta_loss", r.meta_loss},
              {"val_auc", std::isnan(r.val_auc) ? json(nullptr) : json(r.val_auc)},
              {"mean_neighborhood_size", r.mean_neighborhood_size}};
}

EpochRecord epoch_record_from_json(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.meta_loss = j.at("meta_loss").get<double>();
  r.val_auc = j.at("val_auc").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("val_auc").get<double>();
  r.mean_neighborhood_size = j.at("mean_neighborhood_size").get<double>();
  return r;
}

MetaState initial_state(const ParamVector& theta, std::size_t task_count) {
  MetaState s;
  s.theta = theta;
  s.task_params.assign(task_count, theta);
  s.best_theta = theta;
  return s;
}

namespace {

std::vector<const EpisodeSample*> read_split(const TaskCorpus& task, Split split, SplitAccessObserver* observer) {
  auto samples = split_samples(task, split);
  if (observer != nullptr) observer->on_access(task, split, samples.size());
  return samples;
}

}  // namespace

ExtendedSampleSet build_extended_set(std::span<const TaskCorpus> tasks, const NeighborhoodAssignment& assignment,
                                     std::size_t anchor, SplitAccessObserver* observer) {
  if (anchor >= tasks.size() || assignment.neighbors.size() != tasks.size()) {
    throw Error("build_extended_set: neighborhood assignment does not cover the tasks");
  }
  ExtendedSampleSet ext;
  ext.anchor_task = tasks[anchor].task_id;
  for (auto j : assignment.neighbors[anchor]) {
    if (j >= tasks.size()) throw Error("build_extended_set: neighbor index out of range");
    const auto part = read_split(tasks[j], Split::train, observer);
    ext.samples.insert(ext.samples.end(), part.begin(), part.end());
  }
  return ext;
}

TrValPair sample_tr_val(const ExtendedSampleSet& ext, std::size_t dtr_size, std::size_t dval_size, Rng& rng) {
  const std::size_t pool = ext.samples.size();
  if (pool == 0) throw Error("sample_tr_val: empty sample pool for task '" + ext.anchor_task + "'");
  if (pool < 2) throw Error("sample_tr_val: task '" + ext.anchor_task + "' needs at least 2 pooled samples");
  std::vector<const EpisodeSample*> order = ext.samples;
  // Partial Fisher-Yates: only the first n_tr + n_val positions are needed.
  const std::size_t n_tr = std::min(dtr_size, pool - 1);
  const std::size_t n_val = std::min(dval_size, pool - n_tr);
  for (std::size_t i = 0; i < n_tr + n_val; ++i) {
    std::swap(order[i], order[i + uniform_index(rng, pool - i)]);
  }
  TrValPair out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_tr));
  out.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_tr),
                 order.begin() + static_cast<std::ptrdiff_t>(n_tr + n_val));
  return out;
}

ParamVector inner_adapt(const Objective& objective, const ParamVector& theta, SampleBatch batch, double alpha,
                        std::size_t steps) {
  if (batch.empty()) throw Error("inner_adapt: empty batch");
  if (!(alpha >= 0.0)) throw Error("inner_adapt: alpha must be >= 0");
  ParamVector adapted = theta;
  ParamVector grad;
  for (std::size_t s = 0; s < steps; ++s) {
    objective.loss_grad(adapted, batch, grad);
    if (!grad.all_finite()) {
      throw Error("inner_adapt: non-finite gradient in block '" + grad.first_non_finite_block() + "'");
    }
    adapted.axpy(-alpha, grad);
  }
  return adapted;
}

MetaStepResult meta_step(const Objective& objective, MetaState& state, std::span<const TaskCorpus> tasks,
                         std::span<const std::size_t> batch, const NeighborhoodAssignment& assignment,
                         const TrainConfig& config, Rng& rng, SplitAccessObserver* observer) {
  MetaStepResult result;
  result.meta_gradient = ParamVector(state.theta.layout_ptr());
  ParamVector g;
  for (auto i : batch) {
    const ExtendedSampleSet ext = build_extended_set(tasks, assignment, i, observer);
    if (ext.samples.size() < 2) {
      std::cerr << "warning: task '" << ext.anchor_task << "' has fewer than 2 pooled training samples; skipped\n";
      continue;
    }
    const TrValPair d = sample_tr_val(ext, config.dtr_size, config.dval_size, rng);
    const ParamVector adapted = inner_adapt(objective, state.theta, d.train, config.alpha, 1);
    result.meta_loss += objective.loss_grad(adapted, d.val, g);
    result.meta_gradient.axpy(1.0, g);
    ++result.tasks_used;
  }
  if (!result.meta_gradient.all_finite() || !std::isfinite(result.meta_loss)) {
    throw Error("meta_step: non-finite meta-gradient at epoch " + std::to_string(state.epoch) + " (block '" +
                result.meta_gradient.first_non_finite_block() + "')");
  }
  state.theta.axpy(-config.beta, result.meta_gradient);
  return result;
}

std::vector<ParamVector> adapt_all_tasks(const Objective& objective, const ParamVector& theta,
                                         std::span<const TaskCorpus> tasks, double alpha, std::size_t steps,
                                         SplitAccessObserver* observer) {
  std::vector<ParamVector> out;
  out.reserve(tasks.size());
  for (const auto& task : tasks) {
    const auto train = read_split(task, Split::train, observer);
    if (train.empty()) {
      std::cerr << "warning: task '" << task.task_id << "' has an empty training split; using the shared initialization\n";
      out.push_back(theta);
      continue;
    }
    out.push_back(steps == 0 ? theta : inner_adapt(objective, theta, train, alpha, steps));
  }
  return out;
}

namespace {

MetricsReport evaluate_with(const Objective& objective, std::span<const TaskCorpus> tasks, Split split,
                            SplitAccessObserver* observer, const std::function<const ParamVector&(std::size_t)>& params) {
  std::vector<TaskPredictions> preds;
  preds.reserve(tasks.size());
  std::size_t total = 0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto samples = read_split(tasks[t], split, observer);
    TaskPredictions tp;
    tp.task_id = tasks[t].task_id;
    for (const EpisodeSample* s : samples) {
      tp.scores.push_back(objective.predict(params(t), *s));
      tp.labels.push_back(s->label);
    }
    total += samples.size();
    preds.push_back(std::move(tp));
  }
  if (total == 0) throw Error("evaluate: the " + std::string(split_name(split)) + " split is empty");
  return build_report(preds);
}

/// Pooled validation micro-AUC, NaN when the pooled split is single-class.
double validation_auc(const Objective& objective, std::span<const TaskCorpus> tasks, SplitAccessObserver* observer,
                      const std::function<const ParamVector&(std::size_t)>& params) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    for (const EpisodeSample* s : read_split(tasks[t], Split::valid, observer)) {
      scores.push_back(objective.predict(params(t), *s));
      labels.push_back(s->label);
    }
  }
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size())) return std::numeric_limits<double>::quiet_NaN();
  return auc(scores, labels);
}

}  // namespace

MetricsReport evaluate(const Objective& objective, std::span<const ParamVector> task_params,
                       std::span<const TaskCorpus> tasks, Split split, SplitAccessObserver* observer) {
  if (task_params.size() != tasks.size()) throw Error("evaluate: one parameter vector per task is required");
  return evaluate_with(objective, tasks, split, observer, [&](std::size_t t) -> const ParamVector& { return task_params[t]; });
}

MetricsReport evaluate(const Objective& objective, const ParamVector& shared, std::span<const TaskCorpus> tasks,
                       Split split, SplitAccessObserver* observer) {
  return evaluate_with(objective, tasks, split, observer, [&](std::size_t) -> const ParamVector& { return shared; });
}

MetaState run_epochs(const Objective& objective, MetaState state, const DatasetManifest& manifest,
                     const TrainConfig& config, const TrainHooks& hooks) {
  validate(config);
  const std::span<const TaskCorpus> tasks = manifest.tasks;
  if (tasks.empty()) throw Error("train: dataset has no tasks");
  if (state.task_params.size() != tasks.size()) throw Error("train: state does not match the dataset's task count");
  SplitAccessObserver* observer = hooks.observer;

  const std::size_t m = tasks.size();
  const std::size_t batch_size = config.task_batch == 0 ? m : std::min(config.task_batch, m);
  bool stopped = state.epoch > 0 && state.epochs_since_best >= config.early_stop_patience;

  while (!stopped && state.epoch < config.max_epochs) {
    const std::size_t epoch = state.epoch;
    Rng rng(derive_seed(config.seed, "epoch/" + std::to_string(epoch)));

    std::optional<std::span<const ParamVector>> prev;
    if (epoch > 0) prev = std::span<const ParamVector>(state.task_params);
    const NeighborhoodAssignment assignment =
        measure_neighborhoods(config.similarity, tasks, prev, epoch > 0 ? &state.theta : nullptr, epoch);

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(std::span<std::size_t>(order), rng);

    EpochRecord record;
    record.epoch = epoch;
    record.mean_neighborhood_size = assignment.mean_size();
    for (std::size_t start = 0; start < m; start += batch_size) {
      const auto batch = std::span<const std::size_t>(order).subspan(start, std::min(batch_size, m - start));
      record.meta_loss += meta_step(objective, state, tasks, batch, assignment, config, rng, observer).meta_loss;
    }

    state.task_params = adapt_all_tasks(objective, state.theta, tasks, config.alpha, config.inner_steps, observer);
    record.val_auc = validation_auc(objective, tasks, observer,
                                    [&](std::size_t t) -> const ParamVector& { return state.task_params[t]; });
    if (!std::isfinite(record.meta_loss)) {
      throw Error("train: meta-loss diverged at epoch " + std::to_string(epoch));
    }

    if (!std::isnan(record.val_auc) && record.val_auc > state.best_score) {
      state.best_score = record.val_auc;
      state.best_theta = state.theta;
      state.epochs_since_best = 0;
    } else {
      ++state.epochs_since_best;
    }
    state.history.push_back(record);
    state.epoch = epoch + 1;
    if (hooks.on_epoch) hooks.on_epoch(state, assignment);
    stopped = state.epochs_since_best >= config.early_stop_patience;
  }

  return state;
}

MetaState finalize(const Objective& objective, MetaState state, const DatasetManifest& manifest,
                   const TrainConfig& config, SplitAccessObserver* observer) {
  if (state.history.empty()) return state;
  // With no defined validation AUC in any epoch the running theta stands.
  if (std::isfinite(state.best_score)) state.theta = state.best_theta;
  state.task_params = adapt_all_tasks(objective, state.theta, manifest.tasks, config.alpha, config.inner_steps, observer);
  return state;
}

MetaState train(const Objective& objective, MetaState state, const DatasetManifest& manifest,
                const TrainConfig& config, const TrainHooks& hooks) {
  return finalize(objective, run_epochs(objective, std::move(state), manifest, config, hooks), manifest, config,
                  hooks.observer);
}

MetaState train(const Backbone& model, const DatasetManifest& manifest, const TrainConfig& config,
                const TrainHooks& hooks) {
  const ParamVector theta = model.init_params(derive_seed(config.seed, "init"));
  return train(model, initial_state(theta, manifest.tasks.size()), manifest, config, hooks);
}

PooledResult train_pooled(const Objective& objective, const ParamVector& initial, const DatasetManifest& manifest,
                          const TrainConfig& config, SplitAccessObserver* observer) {
  validate(config);
  const std::span<const TaskCorpus> tasks = manifest.tasks;
  if (tasks.empty()) throw Error("train_pooled: dataset has no tasks");

  std::vector<const EpisodeSample*> pool;
  for (const auto& task : tasks) {
    const auto part = read_split(task, Split::train, observer);
    pool.insert(pool.end(), part.begin(), part.end());
  }
  if (pool.empty()) throw Error("train_pooled: no training samples");

  PooledResult result{initial, {}};
  ParamVector theta = initial;
  ParamVector grad;
  double best = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < config.max_epochs && since_best < config.early_stop_patience; ++epoch) {
    Rng rng(derive_seed(config.seed, "pooled/" + std::to_string(epoch)));
    shuffle(std::span<const EpisodeSample*>(pool), rng);
    EpochRecord record;
    record.epoch = epoch;
    record.mean_neighborhood_size = static_cast<double>(tasks.size());
    for (std::size_t start = 0; start < pool.size(); start += config.pooled_batch_size) {
      const auto batch =
          SampleBatch(pool).subspan(start, std::min(config.pooled_batch_size, pool.size() - start));
      record.meta_loss += objective.loss_grad(theta, batch, grad);
      theta.axpy(-config.pooled_learning_rate, grad);
    }
    if (!std::isfinite(record.meta_loss) || !theta.all_finite()) {
      throw Error("train_pooled: training diverged at epoch " + std::to_string(epoch));
    }
    record.val_auc = validation_auc(objective, tasks, observer, [&](std::size_t) -> const ParamVector& { return theta; });
    if (!std::isnan(record.val_auc) && record.val_auc > best) {
      best = record.val_auc;
      result.theta = theta;
      since_best = 0;
    } else {
      ++since_best;
    }
    result.history.push_back(record);
  }
  if (!std::isfinite(best) && !result.history.empty()) result.theta = theta;
  return result;
}

PooledResult train_pooled(const Backbone& model, const DatasetManifest& manifest, const TrainConfig& config,
                          SplitAccessObserver* observer) {
  return train_pooled(model, model.init_params(derive_seed(config.seed, "init")), manifest, config, observer);
}

}  // namespace adasit
