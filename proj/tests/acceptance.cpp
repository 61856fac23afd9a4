// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include "adasit/experiment.hpp"
#include "adasit/kernels.hpp"
#include "adasit/metatrain.hpp"
#include "adasit/metrics.hpp"
#include "adasit/model.hpp"
#include "adasit/similarity.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

using namespace adasit;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kFdStep = 1e-4;
constexpr double kFdMaxRelError = 1e-4;
constexpr double kFdDenominatorFloor = 1e-6;
constexpr double kMetricTolerance = 1e-12;
constexpr double kMetaStepTolerance = 1e-10;
constexpr double kThresholdMargin = 1e-9;
constexpr double kMinAuc = 0.55;
constexpr double kSecondsFd = 10.0;
constexpr double kSecondsMetrics = 10.0;
constexpr double kSecondsClustering = 600.0;
constexpr double kSecondsBenchmark = 1800.0;

const std::vector<std::uint64_t> kBenchmarkSeeds = {1, 2, 3, 4, 5};
const std::vector<std::uint64_t> kClusteringSeeds = {1, 2, 3};
constexpr std::size_t kClusteringEpochs = 20;

/// Two regimes x 15 tasks x 20 samples, rates 0.05 and 0.35. The dataset seed
/// follows the training seed so every seed sees a fresh dataset.
ExperimentConfig benchmark_config(std::uint64_t seed) {
  ExperimentConfig c;
  c.dataset.synthetic = two_regime_preset(0.05, 0.35, 15, 20);
  c.dataset.seed = seed;
  c.train.alpha = 0.05;
  c.train.beta = 0.005;
  c.train.max_epochs = 100;
  c.train.early_stop_patience = 20;
  c.train.pooled_learning_rate = 0.01;
  c.train.pooled_batch_size = 8;
  c.seeds = {seed};
  c.export_model_space = false;
  return c;
}

fs::path work_root() { return fs::temp_directory_path() / "adasit_acceptance"; }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Finite-difference gradient check

Outcome fd_gradient() {
  ModelConfig c;
  c.event_types = 2;
  c.categorical_values = 2;
  c.numeric_dims = 1;
  c.embed_dim = 2;
  c.hidden_dim = 4;
  const Backbone model(c);
  double worst = 0.0;
  for (std::uint64_t seed : {101ull, 102ull, 103ull}) {
    Rng rng(seed);
    ParamVector p = model.zeros();
    for (double& v : p.values()) v = 0.5 * standard_normal(rng);
    std::vector<EpisodeSample> samples;
    for (int i = 0; i < 4; ++i) samples.push_back(testutil::random_episode(rng, 2, 2, 1, 5));
    std::vector<const EpisodeSample*> batch;
    for (const auto& s : samples) batch.push_back(&s);

    ParamVector g;
    model.loss_grad(p, batch, g);
    for (std::size_t i = 0; i < p.size(); ++i) {
      ParamVector up = p, down = p;
      up[i] += kFdStep;
      down[i] -= kFdStep;
      const double fd = (model.loss(up, batch) - model.loss(down, batch)) / (2.0 * kFdStep);
      const double denom = std::max({std::abs(fd), std::abs(g[i]), kFdDenominatorFloor});
      worst = std::max(worst, std::abs(fd - g[i]) / denom);
    }
  }
  return {worst < kFdMaxRelError,
          "3 seeds, " + std::to_string(parameter_count(c)) + " params, max rel err " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------------------
// 2. AUC and AP against brute-force oracles

double oracle_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

// Mean over positives of the precision at that positive's score threshold.
double oracle_ap(const std::vector<double>& s, const std::vector<int>& y) {
  double sum = 0.0, positives = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    positives += 1.0;
    double taken = 0.0, hits = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s[j] >= s[i]) {
        taken += 1.0;
        hits += y[j];
      }
    }
    sum += hits / taken;
  }
  return sum / positives;
}

Outcome metric_oracles() {
  Rng rng(2024);
  double worst = 0.0;
  std::size_t with_ties = 0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t n = 2 + uniform_index(rng, 49);
    const std::size_t levels = 1 + uniform_index(rng, 8);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = uniform01(rng) < 0.6 ? static_cast<double>(uniform_index(rng, levels)) : uniform01(rng);
      y[i] = uniform01(rng) < 0.35 ? 1 : 0;
    }
    y[0] = 1;
    y[n - 1] = 0;
    if (std::set<double>(s.begin(), s.end()).size() < n) ++with_ties;
    worst = std::max(worst, std::abs(auc(s, y) - oracle_auc(s, y)));
    worst = std::max(worst, std::abs(average_precision(s, y) - oracle_ap(s, y)));
  }
  return {worst <= kMetricTolerance,
          "1000 instances (" + std::to_string(with_ties) + " with ties), max abs diff " + fmt("%.1e", worst)};
}

// ---------------------------------------------------------------------------
// 3. Meta step on the quadratic

Outcome quadratic_meta_step() {
  const testutil::QuadraticObjective q;
  std::vector<TaskCorpus> tasks{testutil::quadratic_task("q0", 1.0, 10)};
  MetaState state = initial_state(testutil::flat({1.0, 0.0}), 1);
  const auto assignment = neighborhood_identity(std::vector<std::string>{"q0"});
  TrainConfig c;
  c.alpha = 0.1;
  c.beta = 0.1;
  Rng rng(1);
  const std::size_t batch[] = {0};
  meta_step(q, state, tasks, batch, assignment, c, rng);
  const double e0 = std::abs(state.theta[0] - 0.84), e1 = std::abs(state.theta[1]);
  return {e0 <= kMetaStepTolerance && e1 <= kMetaStepTolerance,
          "theta = (" + fmt("%.12f", state.theta[0]) + ", " + fmt("%.1g", state.theta[1]) + ")"};
}

// ---------------------------------------------------------------------------
// 4. Similarity properties

Outcome similarity_properties() {
  Rng rng(4242);
  std::size_t violations = 0, rescaled = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t dim = 2 + uniform_index(rng, 6);
    const std::size_t m = 2 + uniform_index(rng, 10);
    auto layout = testutil::flat_layout(dim);
    ParamVector theta(layout);
    for (double& v : theta.values()) v = standard_normal(rng);
    std::vector<ParamVector> thetas;
    std::vector<std::string> ids;
    std::vector<TaskCorpus> corpora;
    for (std::size_t i = 0; i < m; ++i) {
      ParamVector t = theta;
      if (uniform01(rng) >= 0.1) {
        for (double& v : t.values()) v += standard_normal(rng);
      }
      thetas.push_back(t);
      ids.push_back("t" + std::to_string(i));
      corpora.push_back(testutil::quadratic_task(ids.back(), 1.0, 3 + uniform_index(rng, 5)));
    }
    const double eta = uniform(rng, -0.9, 0.95);
    const auto cos = cosine_matrix(thetas, theta);
    const auto base = neighborhood_cosine(ids, thetas, theta, eta);

    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        if (cos_delta(thetas[i], thetas[j], theta) != cos_delta(thetas[j], thetas[i], theta)) ++violations;
        if (base.contains(i, j) != base.contains(j, i)) ++violations;
      }
    }

    const auto knn = neighborhood_knn(ids, thetas, theta, 1 + uniform_index(rng, m));
    const auto stat = neighborhood_static(corpora, 0.02);
    const auto ident = neighborhood_identity(ids);
    for (std::size_t i = 0; i < m; ++i) {
      for (const auto* a : {&base, &knn, &stat, &ident}) {
        if (!a->contains(i, i)) ++violations;
      }
    }

    bool near = false;
    for (const auto& row : cos) {
      for (double v : row) near = near || std::abs(v - eta) < kThresholdMargin;
    }
    if (!near) {
      ++rescaled;
      std::vector<ParamVector> scaled;
      for (const auto& t : thetas) {
        ParamVector u = theta;
        u.axpy(std::exp(uniform(rng, -3.0, 3.0)), t.minus(theta));
        scaled.push_back(u);
      }
      if (neighborhood_cosine(ids, scaled, theta, eta).neighbors != base.neighbors) ++violations;
    }

    const auto tight = neighborhood_cosine(ids, thetas, theta, std::min(1.0, eta + uniform(rng, 0.0, 0.5)));
    for (std::size_t i = 0; i < m; ++i) {
      if (!std::includes(base.neighbors[i].begin(), base.neighbors[i].end(), tight.neighbors[i].begin(),
                         tight.neighbors[i].end())) {
        ++violations;
      }
    }
  }
  return {violations == 0, "100 sets (" + std::to_string(rescaled) + " rescaled), " + std::to_string(violations) +
                               " violations"};
}

// ---------------------------------------------------------------------------
// 5. Regime clustering in model space

Outcome regime_clustering() {
  std::size_t ok = 0;
  std::ostringstream detail;
  for (std::uint64_t seed : kClusteringSeeds) {
    auto cfg = benchmark_config(seed);
    cfg.train.seed = seed;
    cfg.train.max_epochs = kClusteringEpochs;
    cfg.train.early_stop_patience = kClusteringEpochs + 1;
    const auto data = load_training_dataset(cfg);
    const Backbone model(model_config(cfg, data.vocab));
    const auto state = run_epochs(model, initial_state(model.init_params(derive_seed(seed, "init")), data.tasks.size()),
                                  data, cfg.train);
    const auto cos = cosine_matrix(state.task_params, state.theta);
    double within = 0.0, across = 0.0;
    std::size_t n_within = 0, n_across = 0;
    for (std::size_t i = 0; i < data.tasks.size(); ++i) {
      for (std::size_t j = i + 1; j < data.tasks.size(); ++j) {
        if (regime_of(data.tasks[i].task_id) == regime_of(data.tasks[j].task_id)) {
          within += cos[i][j];
          ++n_within;
        } else {
          across += cos[i][j];
          ++n_across;
        }
      }
    }
    within /= static_cast<double>(n_within);
    across /= static_cast<double>(n_across);
    if (within > across) ++ok;
    detail << "seed " << seed << ": within " << fmt("%.3f", within) << " across " << fmt("%.3f", across) << "; ";
  }
  detail << ok << "/" << kClusteringSeeds.size() << " seeds, " << kClusteringEpochs << " epochs";
  return {ok == kClusteringSeeds.size(), detail.str()};
}

// ---------------------------------------------------------------------------
// 6 and 7. Benchmark: cosine vs identity vs pooled

struct BenchmarkResult {
  std::vector<double> cosine, identity, pooled;
  std::string error;
};

BenchmarkResult run_benchmark() {
  BenchmarkResult r;
  try {
    for (std::uint64_t seed : kBenchmarkSeeds) {
      auto cfg = benchmark_config(seed);
      const auto data = load_training_dataset(cfg);
      const auto dir = work_root() / "benchmark" / ("seed-" + std::to_string(seed));
      cfg.train.similarity.strategy = SimilarityStrategy::cosine;
      r.cosine.push_back(run_training(cfg, seed, dir / "cosine", data).test_report.micro_auc);
      cfg.train.similarity.strategy = SimilarityStrategy::identity;
      r.identity.push_back(run_training(cfg, seed, dir / "identity", data).test_report.micro_auc);
      cfg.mode = TrainMode::pooled;
      r.pooled.push_back(run_training(cfg, seed, dir / "pooled", data).test_report.micro_auc);
    }
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

std::string seeds_line(const std::vector<double>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + fmt("%.4f", v[i]);
  return out + "]";
}

// ---------------------------------------------------------------------------
// 8. Test-split isolation

class PhaseObserver final : public SplitAccessObserver {
 public:
  void on_access(const TaskCorpus&, Split split, std::size_t count) override {
    if (split == Split::test) (final_phase ? test_after : test_before) += count;
  }
  bool final_phase = false;
  std::size_t test_before = 0;
  std::size_t test_after = 0;
};

Outcome test_isolation() {
  auto cfg = benchmark_config(1);
  cfg.train.max_epochs = 5;
  const auto data = load_training_dataset(cfg);
  // Any test read during training would turn losses and scores into NaN.
  auto poisoned = data;
  for (auto& task : poisoned.tasks) {
    for (auto i : task.split.test) {
      for (auto& e : task.samples[i].events) std::fill(e.numeric.begin(), e.numeric.end(), std::nan(""));
    }
  }
  const Backbone model(model_config(cfg, data.vocab));
  std::size_t before = 0, after = 0;
  bool finite = true;
  std::string runs;
  for (auto s : {SimilarityStrategy::cosine, SimilarityStrategy::knn, SimilarityStrategy::static_rate,
                 SimilarityStrategy::identity}) {
    cfg.train.similarity.strategy = s;
    PhaseObserver obs;
    TrainHooks hooks;
    hooks.observer = &obs;
    const auto state = train(model, poisoned, cfg.train, hooks);
    finite = finite && state.theta.all_finite();
    for (const auto& t : state.task_params) finite = finite && t.all_finite();
    for (const auto& h : state.history) finite = finite && std::isfinite(h.meta_loss);
    obs.final_phase = true;
    evaluate(model, state.task_params, data.tasks, Split::test, &obs);
    before += obs.test_before;
    after += obs.test_after;
    runs += std::string(strategy_name(s)) + " ";
  }
  PhaseObserver pooled_obs;
  const auto pooled = train_pooled(model, poisoned, cfg.train, &pooled_obs);
  finite = finite && pooled.theta.all_finite();
  pooled_obs.final_phase = true;
  evaluate(model, pooled.theta, data.tasks, Split::test, &pooled_obs);
  before += pooled_obs.test_before;
  after += pooled_obs.test_after;
  runs += "pooled";
  return {before == 0 && after > 0 && finite, std::to_string(before) + " test reads before final evaluation, " +
                                                  std::to_string(after) + " during it (" + runs + ")"};
}

// ---------------------------------------------------------------------------
// 9. Bit-identical reruns

Outcome reproducibility() {
  auto cfg = benchmark_config(7);
  cfg.train.max_epochs = 30;
  cfg.export_model_space = true;
  std::ostringstream out, err;
  for (const char* name : {"a", "b"}) {
    cfg.output_dir = work_root() / "rerun" / name;
    fs::remove_all(cfg.output_dir);
    if (cmd_train(cfg, out, err) != 0) return {false, "train failed: " + err.str()};
  }
  std::size_t same = 0, total = 0;
  for (const char* f : {"checkpoint.json", "report.json", "train_log.jsonl", "model_space.jsonl"}) {
    ++total;
    const auto a = testutil::read_file(work_root() / "rerun" / "a" / f);
    const auto b = testutil::read_file(work_root() / "rerun" / "b" / f);
    if (!a.empty() && a == b) ++same;
  }
  return {same == total, std::to_string(same) + "/" + std::to_string(total) +
                             " artifacts byte-identical (checkpoint, report, log, model space)"};
}

// ---------------------------------------------------------------------------

int failures = 0;

void report(int id, const std::string& name, const Outcome& o, double seconds, double budget = 0.0) {
  const bool in_time = budget <= 0.0 || seconds < budget;
  const bool pass = o.pass && in_time;
  if (!pass) ++failures;
  std::string timing = fmt("%.1f s", seconds);
  if (budget > 0.0) timing += fmt(" of %.0f s", budget);
  std::cout << (pass ? "PASS" : "FAIL") << "  " << id << "  " << name << ": " << o.detail << " [" << timing << "]"
            << std::endl;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class F>
void timed(int id, const std::string& name, F&& f, double budget = 0.0) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = f();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  report(id, name, o, seconds_since(t0), budget);
}

}  // namespace

int main() {
  fs::remove_all(work_root());
  fs::create_directories(work_root());
  std::cout << "kernel backend: " << kernels::backend_name(kernels::active_backend()) << "\n";

  timed(1, "finite-difference gradient", fd_gradient, kSecondsFd);
  timed(2, "AUC/AP oracles", metric_oracles, kSecondsMetrics);
  timed(3, "meta step on the quadratic", quadratic_meta_step);
  timed(4, "similarity properties", similarity_properties);
  timed(5, "regime clustering", regime_clustering, kSecondsClustering);

  const auto t0 = std::chrono::steady_clock::now();
  const auto bench = run_benchmark();
  const double bench_seconds = seconds_since(t0);
  if (!bench.error.empty()) {
    report(6, "ablation direction", {false, "exception: " + bench.error}, bench_seconds, kSecondsBenchmark);
    report(7, "multi-task vs pooled", {false, "exception: " + bench.error}, bench_seconds, kSecondsBenchmark);
  } else {
    const double cos = mean_std(bench.cosine).first;
    const double idn = mean_std(bench.identity).first;
    const double pool = mean_std(bench.pooled).first;
    report(6, "ablation direction",
           {cos >= idn && cos >= kMinAuc && idn >= kMinAuc,
            "mean test micro-AUC cosine " + fmt("%.4f", cos) + " " + seeds_line(bench.cosine) + " vs identity " +
                fmt("%.4f", idn) + " " + seeds_line(bench.identity) + ", floor " + fmt("%.2f", kMinAuc)},
           bench_seconds, kSecondsBenchmark);
    report(7, "multi-task vs pooled",
           {cos >= pool, "mean test micro-AUC cosine " + fmt("%.4f", cos) + " vs pooled " + fmt("%.4f", pool) + " " +
                             seeds_line(bench.pooled)},
           bench_seconds, kSecondsBenchmark);
  }

  timed(8, "test-split isolation", test_isolation);
  timed(9, "bit-identical reruns", reproducibility);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << "\n";
  return failures == 0 ? 0 : 1;
}
