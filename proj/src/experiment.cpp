#include "adasit/experiment.hpp"

#include "adasit/error.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace adasit {

namespace fs = std::filesystem;
using nlohmann::json;

json to_json(const ExperimentConfig& c) {
  json dataset{{"path", c.dataset.path}, {"preset", c.dataset.preset}, {"seed", c.dataset.seed}};
  if (c.dataset.synthetic) dataset["synthetic"] = to_json(*c.dataset.synthetic);
  return json{{"dataset", dataset},
              {"max_sequence_length", c.max_sequence_length},
              {"model",
               {{"embed_dim", c.embed_dim},
                {"hidden_dim", c.hidden_dim},
                {"init_scale", c.init_scale},
                {"forget_bias", c.forget_bias}}},
              {"mode", mode_name(c.mode)},
              {"train", to_json(c.train)},
              {"output_dir", c.output_dir.string()},
              {"seeds", c.seeds},
              {"export_model_space", c.export_model_space}};
}

namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> allowed, const std::string& context) {
  if (!j.is_object()) throw Error(context + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw Error((context.empty() ? std::string("config") : context) + ": unknown field '" + key + "'");
    }
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& context) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& ex) {
    throw Error((context.empty() ? std::string(key) : context + "." + key) + ": " + ex.what());
  }
}

}  // namespace

ExperimentConfig experiment_config_from_json(const json& j) {
  reject_unknown(j,
                 {"dataset", "max_sequence_length", "model", "mode", "train", "output_dir", "seeds",
                  "export_model_space"},
                 "");
  ExperimentConfig c;
  if (j.contains("dataset")) {
    const json& jd = j.at("dataset");
    reject_unknown(jd, {"path", "preset", "seed", "synthetic"}, "dataset");
    read_opt(jd, "path", c.dataset.path, "dataset");
    read_opt(jd, "preset", c.dataset.preset, "dataset");
    read_opt(jd, "seed", c.dataset.seed, "dataset");
    if (jd.contains("synthetic")) c.dataset.synthetic = synthetic_config_from_json(jd.at("synthetic"));
  }
  read_opt(j, "max_sequence_length", c.max_sequence_length, "");
  if (j.contains("model")) {
    const json& jm = j.at("model");
    reject_unknown(jm, {"embed_dim", "hidden_dim", "init_scale", "forget_bias"}, "model");
    read_opt(jm, "embed_dim", c.embed_dim, "model");
    read_opt(jm, "hidden_dim", c.hidden_dim, "model");
    read_opt(jm, "init_scale", c.init_scale, "model");
    read_opt(jm, "forget_bias", c.forget_bias, "model");
  }
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  std::string out_dir;
  read_opt(j, "output_dir", out_dir, "");
  c.output_dir = out_dir;
  read_opt(j, "seeds", c.seeds, "");
  read_opt(j, "export_model_space", c.export_model_space, "");
  validate(c);
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& ex) {
    throw Error("config file '" + path.string() + "' is not valid JSON: " + ex.what());
  }
  try {
    return experiment_config_from_json(j);
  } catch (const Error& ex) {
    throw Error(path.string() + ": " + ex.what());
  }
}

void validate(const ExperimentConfig& c) {
  if (c.seeds.empty()) throw Error("config: seed list must not be empty");
  if (c.max_sequence_length < 1) throw Error("config: max_sequence_length must be >= 1");
  if (!c.dataset.path.empty() && !fs::exists(c.dataset.path)) {
    throw Error("config: dataset path '" + c.dataset.path + "' does not exist");
  }
  if (c.dataset.path.empty() && !c.dataset.synthetic) (void)synthetic_preset(c.dataset.preset);
  ModelConfig probe;
  probe.embed_dim = c.embed_dim;
  probe.hidden_dim = c.hidden_dim;
  probe.init_scale = c.init_scale;
  probe.forget_bias = c.forget_bias;
  validate(probe);
  validate(c.train);
}

fs::path output_root(const ExperimentConfig& c) {
  if (!c.output_dir.empty()) return c.output_dir;
  if (const char* env = std::getenv("ADASIT_OUTPUT_ROOT"); env != nullptr && *env != '\0') return env;
  return "runs";
}

DatasetManifest load_raw_dataset(const ExperimentConfig& c) {
  LoadOptions opts;
  opts.max_sequence_length = c.max_sequence_length;
  if (!c.dataset.path.empty()) return load_dataset(c.dataset.path, opts);
  const SyntheticConfig cfg = c.dataset.synthetic ? *c.dataset.synthetic : synthetic_preset(c.dataset.preset);
  return generate_synthetic_tasks(cfg, c.dataset.seed);
}

DatasetManifest load_training_dataset(const ExperimentConfig& c) {
  PrepareOptions opts;
  opts.max_sequence_length = c.max_sequence_length;
  return prepare_for_training(load_raw_dataset(c), opts);
}

ModelConfig model_config(const ExperimentConfig& c, const Vocabulary& vocab) {
  ModelConfig m = model_config_for(vocab, c.embed_dim, c.hidden_dim);
  m.init_scale = c.init_scale;
  m.forget_bias = c.forget_bias;
  validate(m);
  return m;
}

namespace {

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

std::string fixed4(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

std::vector<TaskCorpus> task_stubs(const std::vector<TaskSummary>& tasks) {
  std::vector<TaskCorpus> out;
  for (const auto& t : tasks) {
    TaskCorpus c;
    c.task_id = t.task_id;
    c.positive_rate = t.positive_rate;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

std::vector<ParamVector> final_task_params(const Checkpoint& checkpoint, const DatasetManifest& data) {
  if (summarize_tasks(data) != checkpoint.tasks) throw Error("checkpoint tasks do not match the dataset");
  if (checkpoint.mode == TrainMode::pooled) return checkpoint.state.task_params;
  const Backbone model(checkpoint.model);
  return finalize(model, checkpoint.state, data, checkpoint.train).task_params;
}

RunResult run_training(const ExperimentConfig& config, std::uint64_t seed, const fs::path& run_dir,
                       const DatasetManifest& data, std::ostream* log, const Checkpoint* resume) {
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw Error("cannot create run directory '" + run_dir.string() + "': " + ec.message());

  ExperimentConfig snapshot = config;
  snapshot.seeds = {seed};
  snapshot.train.seed = seed;
  snapshot.output_dir = run_dir;
  write_json(to_json(snapshot), run_dir / "config.json");

  const Backbone model(model_config(config, data.vocab));
  TrainConfig tc = config.train;
  tc.seed = seed;

  Checkpoint ckpt;
  ckpt.mode = config.mode;
  ckpt.model = model.config();
  ckpt.train = tc;
  ckpt.tasks = summarize_tasks(data);

  auto print_epoch = [&](const EpochRecord& r) {
    if (log == nullptr) return;
    *log << "epoch " << std::setw(4) << r.epoch << "  loss " << std::setw(12) << std::setprecision(6) << r.meta_loss
         << "  val_auc " << (std::isnan(r.val_auc) ? std::string("  n/a ") : fixed4(r.val_auc)) << "  |N| "
         << std::setprecision(3) << r.mean_neighborhood_size << '\n';
  };

  MetaState start;
  if (resume != nullptr) {
    if (config.mode != TrainMode::adasit || resume->mode != TrainMode::adasit) {
      throw Error("resume is only supported for Ada-SiT runs");
    }
    TrainConfig stored = resume->train;
    stored.max_epochs = tc.max_epochs;
    if (!(resume->model == ckpt.model) || !(stored == tc)) {
      throw Error("cannot resume: checkpoint configuration differs from the run configuration");
    }
    if (resume->tasks != ckpt.tasks) throw Error("cannot resume: checkpoint tasks do not match the dataset");
    start = resume->state;
  } else {
    start = initial_state(model.init_params(derive_seed(seed, "init")), data.tasks.size());
  }

  if (config.mode == TrainMode::adasit) {
    const fs::path space_path = run_dir / "model_space.jsonl";
    if (config.export_model_space && resume == nullptr) fs::remove(space_path, ec);
    TrainHooks hooks;
    hooks.on_epoch = [&](const MetaState& state, const NeighborhoodAssignment&) {
      print_epoch(state.history.back());
      if (config.export_model_space) {
        const auto next = measure_neighborhoods(tc.similarity, data.tasks, std::span<const ParamVector>(state.task_params),
                                                &state.theta, state.epoch);
        export_model_space(space_path, state.epoch, data.tasks, state.task_params, state.theta, next, true);
      }
    };
    ckpt.state = run_epochs(model, std::move(start), data, tc, hooks);
  } else {
    PooledResult pooled = train_pooled(model, data, tc);
    for (const auto& r : pooled.history) print_epoch(r);
    ckpt.state = initial_state(pooled.theta, data.tasks.size());
    ckpt.state.history = std::move(pooled.history);
    ckpt.state.epoch = ckpt.state.history.size();
    for (const auto& r : ckpt.state.history) {
      if (!std::isnan(r.val_auc) && r.val_auc > ckpt.state.best_score) ckpt.state.best_score = r.val_auc;
    }
  }

  RunResult result;
  result.run_dir = run_dir;
  result.test_report = evaluate(model, final_task_params(ckpt, data), data.tasks, Split::test);
  save_checkpoint(ckpt, run_dir / "checkpoint.json");
  write_training_log(ckpt.state.history, run_dir / "train_log.jsonl");
  write_json(to_json(result.test_report), run_dir / "report.json");
  result.checkpoint = std::move(ckpt);
  return result;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {std::nan(""), std::nan("")};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

std::string format_mean_std(const std::vector<double>& values) {
  const auto [m, s] = mean_std(values);
  return fixed4(m) + " (" + fixed4(s) + ")";
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "Method" << std::setw(18) << "AUC" << "AP" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(12) << r.name << std::setw(18) << format_mean_std(r.auc) << format_mean_std(r.ap)
       << '\n';
  }
  return os.str();
}

std::string format_dataset_stats(const DatasetManifest& m) {
  const DatasetStats& s = m.stats;
  std::ostringstream os;
  os << "dataset                    " << m.name << '\n'
     << "# of tasks                 " << s.task_count << '\n'
     << "# of samples               " << s.sample_count << '\n'
     << "positive sample rate       " << std::fixed << std::setprecision(2) << 100.0 * s.positive_rate << "%\n"
     << "max # of samples per task  " << s.max_samples_per_task << '\n'
     << "min # of samples per task  " << s.min_samples_per_task << '\n'
     << "mean # of samples per task " << std::setprecision(2) << s.mean_samples_per_task << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Commands

int cmd_gen_data(const ExperimentConfig& config, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  try {
    const DatasetManifest m = load_raw_dataset(config);
    save_dataset(m, out_dir);
    out << format_dataset_stats(m);
    out << "written to " << out_dir.string() << '\n';
    return 0;
  } catch (const std::exception& ex) {
    err << "gen-data: " << ex.what() << '\n';
    return 1;
  }
}

int cmd_train(const ExperimentConfig& config, std::ostream& out, std::ostream& err) {
  try {
    validate(config);
    const DatasetManifest data = load_training_dataset(config);
    const fs::path root = output_root(config);
    for (auto seed : config.seeds) {
      const fs::path run_dir = config.seeds.size() == 1 ? root : root / ("seed-" + std::to_string(seed));
      out << "training " << mode_name(config.mode);
      if (config.mode == TrainMode::adasit) out << " (similarity: " << strategy_name(config.train.similarity.strategy) << ")";
      out << " seed " << seed << " -> " << run_dir.string() << '\n';
      const RunResult r = run_training(config, seed, run_dir, data, &out);
      out << "test micro_auc " << fixed4(r.test_report.micro_auc) << "  micro_ap " << fixed4(r.test_report.micro_ap)
          << '\n';
    }
    return 0;
  } catch (const std::exception& ex) {
    err << "train: " << ex.what() << '\n';
    return 1;
  }
}

int cmd_resume(const fs::path& run_dir, std::optional<std::size_t> max_epochs, std::ostream& out, std::ostream& err) {
  try {
    ExperimentConfig config = load_experiment_config(run_dir / "config.json");
    const Checkpoint ckpt = load_checkpoint(run_dir / "checkpoint.json");
    if (max_epochs) config.train.max_epochs = *max_epochs;
    validate(config);
    const DatasetManifest data = load_training_dataset(config);
    out << "resuming " << run_dir.string() << " at epoch " << ckpt.state.epoch << " (max " << config.train.max_epochs
        << ")\n";
    const RunResult r = run_training(config, config.train.seed, run_dir, data, &out, &ckpt);
    out << "test micro_auc " << fixed4(r.test_report.micro_auc) << "  micro_ap " << fixed4(r.test_report.micro_ap)
        << '\n';
    return 0;
  } catch (const std::exception& ex) {
    err << "train: " << ex.what() << '\n';
    return 1;
  }
}

int cmd_eval(const fs::path& run_dir, Split split, std::ostream& out, std::ostream& err) {
  try {
    const ExperimentConfig config = load_experiment_config(run_dir / "config.json");
    const Checkpoint ckpt = load_checkpoint(run_dir / "checkpoint.json");
    const DatasetManifest data = load_training_dataset(config);
    if (summarize_tasks(data) != ckpt.tasks) throw Error("checkpoint tasks do not match the dataset in config.json");
    const Backbone model(ckpt.model);
    const MetricsReport report = evaluate(model, final_task_params(ckpt, data), data.tasks, split);
    const fs::path path = run_dir / ("report_" + std::string(split_name(split)) + ".json");
    write_json(to_json(report), path);
    out << split_name(split) << " micro_auc " << fixed4(report.micro_auc) << "  micro_ap " << fixed4(report.micro_ap);
    if (report.macro_auc) out << "  macro_auc " << fixed4(*report.macro_auc) << "  macro_ap " << fixed4(*report.macro_ap);
    out << "\nwritten to " << path.string() << '\n';
    return 0;
  } catch (const std::exception& ex) {
    err << "eval: " << ex.what() << '\n';
    return 1;
  }
}

int cmd_ablate(const ExperimentConfig& config, bool include_pooled, std::ostream& out, std::ostream& err) {
  try {
    validate(config);
    const DatasetManifest data = load_training_dataset(config);
    const fs::path root = output_root(config);
    struct Variant {
      std::string name;
      TrainMode mode;
      SimilarityStrategy strategy;
    };
    std::vector<Variant> variants{{"identity", TrainMode::adasit, SimilarityStrategy::identity},
                                  {"static", TrainMode::adasit, SimilarityStrategy::static_rate},
                                  {"knn", TrainMode::adasit, SimilarityStrategy::knn},
                                  {"cosine", TrainMode::adasit, SimilarityStrategy::cosine}};
    if (include_pooled) variants.insert(variants.begin(), {"pooled", TrainMode::pooled, SimilarityStrategy::identity});

    std::vector<AblationRow> rows;
    json runs = json::array();
    for (const auto& v : variants) {
      ExperimentConfig vc = config;
      vc.mode = v.mode;
      vc.train.similarity.strategy = v.strategy;
      AblationRow row{v.name, {}, {}};
      for (auto seed : config.seeds) {
        const fs::path run_dir = root / v.name / ("seed-" + std::to_string(seed));
        out << "ablate: " << v.name << " seed " << seed << '\n';
        const RunResult r = run_training(vc, seed, run_dir, data, nullptr);
        row.auc.push_back(r.test_report.micro_auc);
        row.ap.push_back(r.test_report.micro_ap);
        runs.push_back(json{{"method", v.name},
                            {"seed", seed},
                            {"micro_auc", r.test_report.micro_auc},
                            {"micro_ap", r.test_report.micro_ap},
                            {"epochs", r.checkpoint.state.history.size()}});
      }
      rows.push_back(std::move(row));
    }
    const std::string table = format_ablation_table(rows);
    json summary = json::array();
    for (const auto& r : rows) {
      const auto [am, as] = mean_std(r.auc);
      const auto [pm, ps] = mean_std(r.ap);
      summary.push_back(json{{"method", r.name}, {"auc_mean", am}, {"auc_std", as}, {"ap_mean", pm}, {"ap_std", ps}});
    }
    write_json(json{{"runs", runs}, {"summary", summary}}, root / "ablation.json");
    std::ofstream(root / "ablation.txt", std::ios::binary) << table;
    out << table;
    return 0;
  } catch (const std::exception& ex) {
    err << "ablate: " << ex.what() << '\n';
    return 1;
  }
}

int cmd_export_model_space(const fs::path& checkpoint, const fs::path& out_path, std::ostream& out, std::ostream& err) {
  try {
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    const std::vector<TaskCorpus> tasks = task_stubs(ckpt.tasks);
    const auto assignment = measure_neighborhoods(ckpt.train.similarity, tasks,
                                                  std::span<const ParamVector>(ckpt.state.task_params),
                                                  &ckpt.state.theta, ckpt.state.epoch);
    export_model_space(out_path, ckpt.state.epoch, tasks, ckpt.state.task_params, ckpt.state.theta, assignment);
    out << "wrote " << tasks.size() << " task records to " << out_path.string() << '\n';
    return 0;
  } catch (const std::exception& ex) {
    err << "export-model-space: " << ex.what() << '\n';
    return 1;
  }
}

}  // namespace adasit
