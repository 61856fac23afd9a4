#include "adasit/checkpoint.hpp"

#include "adasit/error.hpp"
#include "adasit/rng.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace adasit {

using nlohmann::json;

namespace {

constexpr std::string_view kCheckpointFormat = "adasit-checkpoint/1";

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

json values_json(const ParamVector& p) { return json(std::vector<double>(p.values().begin(), p.values().end())); }

ParamVector values_from(const json& j, const std::shared_ptr<const ParamLayout>& layout, const std::string& field) {
  try {
    return ParamVector(layout, j.get<std::vector<double>>());
  } catch (const json::exception& ex) {
    throw Error("checkpoint field '" + field + "': " + ex.what());
  }
}

}  // namespace

std::string_view mode_name(TrainMode mode) noexcept { return mode == TrainMode::pooled ? "pooled" : "adasit"; }

TrainMode parse_mode(std::string_view name) {
  if (name == "adasit") return TrainMode::adasit;
  if (name == "pooled") return TrainMode::pooled;
  throw Error("unknown training mode '" + std::string(name) + "' (expected adasit or pooled)");
}

std::uint64_t checkpoint_config_hash(TrainMode mode, const ModelConfig& model, const TrainConfig& train) {
  const json j{{"mode", mode_name(mode)}, {"model", to_json(model)}, {"train", to_json(train)}};
  return fnv1a(j.dump());
}

std::vector<TaskSummary> summarize_tasks(const DatasetManifest& manifest) {
  std::vector<TaskSummary> out;
  for (const auto& t : manifest.tasks) out.push_back({t.task_id, t.positive_rate});
  return out;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  if (c.state.task_params.size() != c.tasks.size()) throw Error("checkpoint: task parameters do not match tasks");
  json tasks = json::array();
  for (std::size_t i = 0; i < c.tasks.size(); ++i) {
    tasks.push_back(json{{"task_id", c.tasks[i].task_id},
                         {"positive_rate", c.tasks[i].positive_rate},
                         {"params", values_json(c.state.task_params[i])}});
  }
  json history = json::array();
  for (const auto& r : c.state.history) history.push_back(to_json(r));
  const json j{{"format", kCheckpointFormat},
               {"config_hash", hex64(checkpoint_config_hash(c.mode, c.model, c.train))},
               {"mode", mode_name(c.mode)},
               {"model", to_json(c.model)},
               {"train", to_json(c.train)},
               {"epoch", c.state.epoch},
               {"best_score", std::isfinite(c.state.best_score) ? json(c.state.best_score) : json(nullptr)},
               {"epochs_since_best", c.state.epochs_since_best},
               {"theta", values_json(c.state.theta)},
               {"best_theta", values_json(c.state.best_theta)},
               {"tasks", tasks},
               {"history", history}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
  out << j.dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& ex) {
    throw Error("checkpoint '" + path.string() + "' is not valid JSON: " + ex.what());
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) {
      throw Error("checkpoint '" + path.string() + "' has an unsupported format");
    }
    Checkpoint c;
    c.mode = parse_mode(j.at("mode").get<std::string>());
    c.model = model_config_from_json(j.at("model"));
    c.train = train_config_from_json(j.at("train"));
    if (j.at("config_hash").get<std::string>() != hex64(checkpoint_config_hash(c.mode, c.model, c.train))) {
      throw Error("checkpoint '" + path.string() + "': config hash does not match its configuration");
    }
    const Backbone model(c.model);
    const auto& layout = model.layout();
    c.state.epoch = j.at("epoch").get<std::size_t>();
    c.state.best_score = j.at("best_score").is_null() ? -std::numeric_limits<double>::infinity()
                                                      : j.at("best_score").get<double>();
    c.state.epochs_since_best = j.at("epochs_since_best").get<std::size_t>();
    c.state.theta = values_from(j.at("theta"), layout, "theta");
    c.state.best_theta = values_from(j.at("best_theta"), layout, "best_theta");
    for (const auto& t : j.at("tasks")) {
      c.tasks.push_back({t.at("task_id").get<std::string>(), t.at("positive_rate").get<double>()});
      c.state.task_params.push_back(values_from(t.at("params"), layout, "tasks.params"));
    }
    for (const auto& r : j.at("history")) c.state.history.push_back(epoch_record_from_json(r));
    return c;
  } catch (const json::exception& ex) {
    throw Error("checkpoint '" + path.string() + "' is malformed: " + ex.what());
  }
}

void write_training_log(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write training log '" + path.string() + "'");
  for (const auto& r : history) out << to_json(r).dump() << '\n';
}

}  // namespace adasit
