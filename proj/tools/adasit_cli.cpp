// adasit: experiment command-line tool.
//
//   adasit gen-data --preset two-regime --seed 3 --out data/two
//   adasit train --data data/two --strategy cosine --seed 1 --out runs/cos
//   adasit train --resume runs/cos --epochs 200
//   adasit eval --run runs/cos --split test
//   adasit ablate --preset two-regime --seeds 1,2,3 --out runs/ablate
//   adasit export-model-space --checkpoint runs/cos/checkpoint.json --out space.jsonl

#include "adasit/error.hpp"
#include "adasit/experiment.hpp"
#include "adasit/kernels.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

using namespace adasit;

struct Overrides {
  std::string config_file;
  std::optional<std::string> data;
  std::optional<std::string> preset;
  std::optional<std::uint64_t> data_seed;
  std::optional<std::string> mode;
  std::optional<std::string> strategy;
  std::optional<double> eta;
  std::optional<std::size_t> k;
  std::optional<double> static_tolerance;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<std::size_t> inner_steps;
  std::optional<std::size_t> dtr;
  std::optional<std::size_t> dval;
  std::optional<std::size_t> task_batch;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> patience;
  std::optional<double> pooled_lr;
  std::optional<std::size_t> pooled_batch;
  std::optional<std::size_t> embed_dim;
  std::optional<std::size_t> hidden_dim;
  std::optional<std::size_t> max_seq_len;
  std::vector<std::uint64_t> seeds;
  std::optional<std::string> out;
};

void add_dataset_flags(CLI::App* app, Overrides& o, bool seed_is_data_seed = false) {
  app->add_option("--config", o.config_file, "Experiment config file (JSON)")->check(CLI::ExistingFile);
  app->add_option("--data", o.data, "Dataset directory or manifest.json");
  app->add_option("--preset", o.preset, "Synthetic preset: two-regime | mini-eicu");
  app->add_option(seed_is_data_seed ? "--seed,--data-seed" : "--data-seed", o.data_seed,
                  "Seed for synthetic generation and splits");
  app->add_option("--max-seq-len", o.max_seq_len, "Keep at most this many most recent events");
}

void add_train_flags(CLI::App* app, Overrides& o) {
  add_dataset_flags(app, o);
  app->add_option("--mode", o.mode, "adasit | pooled");
  app->add_option("--strategy", o.strategy, "Similarity: cosine | knn | static | identity");
  app->add_option("--eta", o.eta, "Cosine threshold");
  app->add_option("--k", o.k, "Neighbors for knn");
  app->add_option("--static-tolerance", o.static_tolerance, "Max positive-rate gap for static");
  app->add_option("--alpha", o.alpha, "Inner learning rate");
  app->add_option("--beta", o.beta, "Meta learning rate");
  app->add_option("--inner-steps", o.inner_steps, "End-of-epoch adaptation steps");
  app->add_option("--dtr", o.dtr, "D_tr size");
  app->add_option("--dval", o.dval, "D_val size");
  app->add_option("--task-batch", o.task_batch, "Tasks per meta-update (0 = all)");
  app->add_option("--epochs", o.epochs, "Maximum epochs");
  app->add_option("--patience", o.patience, "Early-stopping patience");
  app->add_option("--pooled-lr", o.pooled_lr, "Learning rate of the pooled baseline");
  app->add_option("--pooled-batch", o.pooled_batch, "Mini-batch size of the pooled baseline");
  app->add_option("--embed-dim", o.embed_dim, "Event embedding dimension");
  app->add_option("--hidden-dim", o.hidden_dim, "LSTM hidden dimension");
  app->add_option("--seed,--seeds", o.seeds, "Training seed(s)")->delimiter(',');
  app->add_option("--out", o.out, "Output directory (default $ADASIT_OUTPUT_ROOT or ./runs)");
}

ExperimentConfig build_config(const Overrides& o) {
  ExperimentConfig c = o.config_file.empty() ? ExperimentConfig{} : load_experiment_config(o.config_file);
  if (o.data) c.dataset.path = *o.data;
  if (o.preset) {
    c.dataset.preset = *o.preset;
    c.dataset.synthetic.reset();
    c.dataset.path.clear();
  }
  if (o.data_seed) c.dataset.seed = *o.data_seed;
  if (o.max_seq_len) c.max_sequence_length = *o.max_seq_len;
  if (o.mode) c.mode = parse_mode(*o.mode);
  if (o.strategy) c.train.similarity.strategy = parse_strategy(*o.strategy);
  if (o.eta) c.train.similarity.eta = *o.eta;
  if (o.k) c.train.similarity.k = *o.k;
  if (o.static_tolerance) c.train.similarity.static_tolerance = *o.static_tolerance;
  if (o.alpha) c.train.alpha = *o.alpha;
  if (o.beta) c.train.beta = *o.beta;
  if (o.inner_steps) c.train.inner_steps = *o.inner_steps;
  if (o.dtr) c.train.dtr_size = *o.dtr;
  if (o.dval) c.train.dval_size = *o.dval;
  if (o.task_batch) c.train.task_batch = *o.task_batch;
  if (o.epochs) c.train.max_epochs = *o.epochs;
  if (o.patience) c.train.early_stop_patience = *o.patience;
  if (o.pooled_lr) c.train.pooled_learning_rate = *o.pooled_lr;
  if (o.pooled_batch) c.train.pooled_batch_size = *o.pooled_batch;
  if (o.embed_dim) c.embed_dim = *o.embed_dim;
  if (o.hidden_dim) c.hidden_dim = *o.hidden_dim;
  if (!o.seeds.empty()) c.seeds = o.seeds;
  if (o.out) c.output_dir = *o.out;
  validate(c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task meta-learning with adaptation to similar tasks"};
  app.require_subcommand(1);
  std::string simd;
  app.add_option("--simd", simd, "Kernel backend: scalar | avx2 (default: best available)");

  Overrides gen_o;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset and print its statistics");
  add_dataset_flags(gen, gen_o, true);
  gen->add_option("--out", gen_out, "Output directory")->required();

  Overrides train_o;
  auto* train = app.add_subcommand("train", "Train Ada-SiT (or the pooled baseline) and report test metrics");
  add_train_flags(train, train_o);
  std::string resume_dir;
  train->add_option("--resume", resume_dir, "Continue the run in this directory (only --epochs may change)")
      ->check(CLI::ExistingDirectory);

  std::string eval_run, eval_split = "test";
  auto* eval = app.add_subcommand("eval", "Re-evaluate a finished run on a split");
  eval->add_option("--run", eval_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--split", eval_split, "valid | test");

  Overrides ablate_o;
  bool with_pooled = false;
  auto* ablate = app.add_subcommand("ablate", "Run identity/static/knn/cosine over all seeds and summarize");
  add_train_flags(ablate, ablate_o);
  ablate->add_flag("--with-pooled", with_pooled, "Also run the pooled single-model baseline");

  std::string export_ckpt, export_out;
  auto* exp = app.add_subcommand("export-model-space", "Write per-task deltas and neighborhoods");
  exp->add_option("--checkpoint", export_ckpt, "checkpoint.json of a run")->required();
  exp->add_option("--out", export_out, "Output file (JSON lines)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (simd == "scalar") {
      adasit::kernels::set_backend(adasit::kernels::Backend::scalar);
    } else if (simd == "avx2") {
      adasit::kernels::set_backend(adasit::kernels::Backend::avx2);
    } else if (!simd.empty()) {
      throw adasit::Error("unknown --simd backend '" + simd + "'");
    }

    if (*gen) return adasit::cmd_gen_data(build_config(gen_o), gen_out, std::cout, std::cerr);
    if (*train && !resume_dir.empty()) {
      return adasit::cmd_resume(resume_dir, train_o.epochs, std::cout, std::cerr);
    }
    if (*train) return adasit::cmd_train(build_config(train_o), std::cout, std::cerr);
    if (*eval) return adasit::cmd_eval(eval_run, adasit::parse_split(eval_split), std::cout, std::cerr);
    if (*ablate) return adasit::cmd_ablate(build_config(ablate_o), with_pooled, std::cout, std::cerr);
    if (*exp) return adasit::cmd_export_model_space(export_ckpt, export_out, std::cout, std::cerr);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 1;
}
