#include "adasit/error.hpp"
#include "adasit/experiment.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include <nlohmann/json.hpp>

using namespace adasit;
using testutil::read_file;
using testutil::temp_dir;

namespace {

/// Small synthetic experiment that trains in well under a second.
ExperimentConfig small_config(const std::filesystem::path& out) {
  ExperimentConfig c;
  c.dataset.synthetic = two_regime_preset(0.1, 0.35, 3, 20);
  c.dataset.seed = 5;
  c.embed_dim = 4;
  c.hidden_dim = 4;
  c.train.alpha = 0.05;
  c.train.beta = 0.01;
  c.train.max_epochs = 3;
  c.output_dir = out;
  c.seeds = {1};
  return c;
}

std::vector<nlohmann::json> read_lines(const std::filesystem::path& p) {
  std::istringstream in(read_file(p));
  std::vector<nlohmann::json> out;
  for (std::string line; std::getline(in, line);) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace

TEST_CASE("experiment config JSON") {
  ExperimentConfig c = small_config("runs/x");
  c.mode = TrainMode::pooled;
  c.seeds = {1, 2, 3};
  const auto back = experiment_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  auto j = to_json(c);
  j["extra"] = true;
  CHECK_THROWS_AS(experiment_config_from_json(j), Error);
  const auto dir = temp_dir("cfg");
  testutil::write_file(dir / "c.json", R"({"train":{"alpha":0.3},"seeds":[4]})");
  const auto loaded = load_experiment_config(dir / "c.json");
  CHECK(loaded.train.alpha == 0.3);
  CHECK(loaded.train.beta == 0.001);
  CHECK(loaded.seeds == std::vector<std::uint64_t>{4});
  ExperimentConfig bad = c;
  bad.seeds.clear();
  CHECK_THROWS_AS(validate(bad), Error);
}

TEST_CASE("output root precedence") {
  ExperimentConfig c;
  c.output_dir = "explicit";
  CHECK(output_root(c) == "explicit");
  c.output_dir.clear();
  setenv("ADASIT_OUTPUT_ROOT", "/tmp/from_env", 1);
  CHECK(output_root(c) == "/tmp/from_env");
  unsetenv("ADASIT_OUTPUT_ROOT");
  CHECK(output_root(c) == "runs");
}

TEST_CASE("mean and standard deviation formatting") {
  const auto [m, s] = mean_std({1.0, 2.0, 3.0});
  CHECK(m == 2.0);
  CHECK(s == doctest::Approx(1.0));
  CHECK(mean_std({0.5}).second == 0.0);
  CHECK(format_mean_std({0.8729, 0.8729}) == "0.8729 (0.0000)");
  CHECK(format_mean_std({0.86, 0.88}) == "0.8700 (0.0141)");
  const auto table = format_ablation_table({{"cosine", {0.7, 0.8}, {0.3, 0.4}}});
  CHECK(table.find("cosine") != std::string::npos);
  CHECK(table.find("0.7500 (0.0707)") != std::string::npos);
}

TEST_CASE("gen-data writes a loadable dataset and prints its statistics") {
  const auto dir = temp_dir("gen");
  ExperimentConfig c;
  c.dataset.preset = "mini-eicu";
  c.dataset.seed = 2;
  std::ostringstream out, err;
  REQUIRE(cmd_gen_data(c, dir / "data", out, err) == 0);
  CHECK(out.str().find("# of tasks                 70") != std::string::npos);
  CHECK(out.str().find("# of samples               7000") != std::string::npos);
  const auto m = load_dataset(dir / "data");
  CHECK(m.stats.sample_count == 7000);

  // Same seed, same files.
  std::ostringstream out2;
  REQUIRE(cmd_gen_data(c, dir / "again", out2, err) == 0);
  CHECK(read_file(dir / "data" / "manifest.json") == read_file(dir / "again" / "manifest.json"));
  CHECK(read_file(dir / "data" / "tasks" / "00003.txt") == read_file(dir / "again" / "tasks" / "00003.txt"));

  ExperimentConfig two;
  two.dataset.preset = "two-regime";
  std::ostringstream out3;
  REQUIRE(cmd_gen_data(two, dir / "two", out3, err) == 0);
  const auto t = load_dataset(dir / "two");
  CHECK(t.stats.positive_rate > 0.05);
  CHECK(t.stats.positive_rate < 0.35);

  ExperimentConfig bad;
  bad.dataset.preset = "nope";
  CHECK(cmd_gen_data(bad, dir / "bad", out, err) != 0);
  CHECK(err.str().find("gen-data") != std::string::npos);
}

TEST_CASE("train writes every run artifact") {
  const auto dir = temp_dir("train");
  const auto c = small_config(dir / "run");
  std::ostringstream out, err;
  REQUIRE(cmd_train(c, out, err) == 0);
  for (const char* f : {"config.json", "checkpoint.json", "train_log.jsonl", "report.json", "model_space.jsonl"}) {
    CHECK(std::filesystem::exists(dir / "run" / f));
  }
  const auto log = read_lines(dir / "run" / "train_log.jsonl");
  CHECK(log.size() == 3);
  const auto report = nlohmann::json::parse(read_file(dir / "run" / "report.json"));
  CHECK(report.contains("micro_auc"));
  CHECK(report.contains("per_task"));
  const auto snapshot = nlohmann::json::parse(read_file(dir / "run" / "config.json"));
  CHECK(snapshot["train"]["seed"] == 1);
  CHECK(!snapshot["train"].contains("eta"));  // similarity settings live in their own object
  CHECK(snapshot["train"]["similarity"]["eta"] == 0.7);

  // 6 tasks x 3 epochs.
  const auto space = read_lines(dir / "run" / "model_space.jsonl");
  CHECK(space.size() == 18);
  CHECK(space[0].contains("regime"));

  SUBCASE("eval re-creates the test report") {
    std::ostringstream eout;
    REQUIRE(cmd_eval(dir / "run", Split::test, eout, err) == 0);
    CHECK(read_file(dir / "run" / "report_test.json") == read_file(dir / "run" / "report.json"));
    REQUIRE(cmd_eval(dir / "run", Split::valid, eout, err) == 0);
    CHECK(std::filesystem::exists(dir / "run" / "report_valid.json"));
  }

  SUBCASE("export reproduces the last epoch of the training export") {
    std::ostringstream xout;
    REQUIRE(cmd_export_model_space(dir / "run" / "checkpoint.json", dir / "space.jsonl", xout, err) == 0);
    const auto exported = read_lines(dir / "space.jsonl");
    REQUIRE(exported.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(exported[i] == space[12 + i]);
  }

  SUBCASE("resume continues to the same state as a longer run") {
    ExperimentConfig longer = c;
    longer.train.max_epochs = 5;
    longer.output_dir = dir / "long";
    REQUIRE(cmd_train(longer, out, err) == 0);
    std::ostringstream rout;
    REQUIRE(cmd_resume(dir / "run", 5, rout, err) == 0);
    CHECK(read_file(dir / "run" / "checkpoint.json") == read_file(dir / "long" / "checkpoint.json"));
    CHECK(read_file(dir / "run" / "report.json") == read_file(dir / "long" / "report.json"));
    CHECK(read_lines(dir / "run" / "model_space.jsonl") == read_lines(dir / "long" / "model_space.jsonl"));
  }
}

TEST_CASE("multiple seeds get their own run directories") {
  const auto dir = temp_dir("seeds");
  auto c = small_config(dir);
  c.seeds = {1, 2};
  c.mode = TrainMode::pooled;
  std::ostringstream out, err;
  REQUIRE(cmd_train(c, out, err) == 0);
  CHECK(std::filesystem::exists(dir / "seed-1" / "checkpoint.json"));
  CHECK(std::filesystem::exists(dir / "seed-2" / "report.json"));
  CHECK(!std::filesystem::exists(dir / "seed-1" / "model_space.jsonl"));

  // Pooled mode stores theta for every task, so every delta is zero.
  std::ostringstream xout;
  REQUIRE(cmd_export_model_space(dir / "seed-1" / "checkpoint.json", dir / "space.jsonl", xout, err) == 0);
  for (const auto& rec : read_lines(dir / "space.jsonl")) {
    CHECK(rec["zero_delta"] == true);
    CHECK(rec["isolated"] == true);
  }
  CHECK(cmd_resume(dir / "seed-1", 5, out, err) != 0);
}

TEST_CASE("ablate runs every strategy for every seed") {
  const auto dir = temp_dir("ablate");
  auto c = small_config(dir);
  c.train.max_epochs = 2;
  c.train.similarity.k = 2;
  c.seeds = {1, 2, 3};
  c.export_model_space = false;
  std::ostringstream out, err;
  REQUIRE(cmd_ablate(c, false, out, err) == 0);
  const auto j = nlohmann::json::parse(read_file(dir / "ablation.json"));
  CHECK(j["runs"].size() == 12);
  CHECK(j["summary"].size() == 4);
  const auto table = read_file(dir / "ablation.txt");
  for (const char* name : {"identity", "static", "knn", "cosine"}) CHECK(table.find(name) != std::string::npos);
}

TEST_CASE("command errors return a non-zero status") {
  const auto dir = temp_dir("errors");
  std::ostringstream out, err;
  CHECK(cmd_export_model_space(dir / "missing.json", dir / "x.jsonl", out, err) != 0);
  CHECK(err.str().find("missing.json") != std::string::npos);
  CHECK(cmd_eval(dir / "no_run", Split::test, out, err) != 0);

  testutil::write_file(dir / "blocker", "file");
  auto c = small_config(dir / "blocker" / "run");
  CHECK(cmd_train(c, out, err) != 0);

  auto bad = small_config(dir / "bad");
  bad.dataset.synthetic.reset();
  bad.dataset.path = (dir / "nonexistent").string();
  CHECK(cmd_train(bad, out, err) != 0);
}
