// Synthetic multi-regime task collections.
//
// Every regime owns an event process and a logistic label rule over two
// episode summaries: the share of each event type and the mean of each numeric
// attribute. The rule's intercept is calibrated by bisection so that the
// regime's population positive rate matches its target.

#include "adasit/data.hpp"

#include "adasit/error.hpp"
#include "adasit/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace adasit {

using nlohmann::json;

namespace {

constexpr std::size_t kCalibrationEpisodes = 4000;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Baseline mean of numeric dim `d` for events of type `type`, shared by all regimes.
double type_numeric_mean(std::size_t type, std::size_t d) {
  return 0.5 * static_cast<double>(static_cast<int>((type * 7 + d * 3) % 5) - 2);
}

struct EpisodeDraw {
  EpisodeSample sample;
  double score = 0.0;  // label logit without the intercept
};

std::vector<double> task_type_weights(const SyntheticConfig& cfg, const RegimeSpec& regime, Rng& rng) {
  std::vector<double> w = regime.type_weights;
  for (auto& x : w) x *= std::exp(cfg.task_jitter * standard_normal(rng));
  return w;
}

EpisodeDraw draw_episode(const SyntheticConfig& cfg, const RegimeSpec& regime, std::span<const double> type_weights,
                         Rng& rng) {
  EpisodeDraw out;
  const std::size_t length = cfg.min_events + uniform_index(rng, cfg.max_events - cfg.min_events + 1);
  const double severity = standard_normal(rng);
  std::vector<double> share(cfg.event_types, 0.0);
  std::vector<double> numeric_mean(cfg.numeric_dims, 0.0);
  double t = 0.0;
  out.sample.events.reserve(length);
  for (std::size_t k = 0; k < length; ++k) {
    EventRecord e;
    t += -std::log(1.0 - uniform01(rng));
    e.time = t;
    e.event_type = weighted_index(type_weights, rng);
    if (cfg.categorical_values > 0) e.categorical.push_back(uniform_index(rng, cfg.categorical_values));
    e.numeric.resize(cfg.numeric_dims);
    for (std::size_t d = 0; d < cfg.numeric_dims; ++d) {
      e.numeric[d] = type_numeric_mean(e.event_type, d) + regime.numeric_shift[d] + cfg.severity_scale * severity +
                     standard_normal(rng);
      numeric_mean[d] += e.numeric[d];
    }
    share[e.event_type] += 1.0;
    out.sample.events.push_back(std::move(e));
  }
  const double inv = 1.0 / static_cast<double>(length);
  for (std::size_t i = 0; i < cfg.event_types; ++i) out.score += regime.count_weights[i] * share[i] * inv;
  for (std::size_t d = 0; d < cfg.numeric_dims; ++d) out.score += regime.numeric_weights[d] * numeric_mean[d] * inv;
  return out;
}

double calibrate_intercept(const SyntheticConfig& cfg, const RegimeSpec& regime, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> scores;
  scores.reserve(kCalibrationEpisodes);
  // A fresh pseudo-task every 50 episodes so the task jitter is represented.
  std::vector<double> weights;
  for (std::size_t i = 0; i < kCalibrationEpisodes; ++i) {
    if (i % 50 == 0) weights = task_type_weights(cfg, regime, rng);
    scores.push_back(draw_episode(cfg, regime, weights, rng).score);
  }
  auto mean_rate = [&](double b) {
    double s = 0.0;
    for (double x : scores) s += sigmoid(b + x);
    return s / static_cast<double>(scores.size());
  };
  double lo = -40.0, hi = 40.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mean_rate(mid) < regime.positive_rate) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

std::string task_name(const SyntheticConfig& cfg, const RegimeSpec& regime, std::size_t index, std::size_t regime_index) {
  std::ostringstream os;
  os << cfg.name << '-' << regime.name << "-t" << std::setw(4) << std::setfill('0') << index << ".r" << regime_index;
  return os.str();
}

}  // namespace

void validate(const SyntheticConfig& cfg) {
  if (cfg.regimes.empty()) throw Error("synthetic config needs at least one regime");
  if (cfg.event_types == 0) throw Error("synthetic config needs at least one event type");
  if (cfg.min_samples_per_task < 3 || cfg.max_samples_per_task < cfg.min_samples_per_task) {
    throw Error("samples per task must satisfy 3 <= min <= max");
  }
  if (cfg.min_events < 1 || cfg.max_events < cfg.min_events) throw Error("events per episode must satisfy 1 <= min <= max");
  if (!(cfg.task_jitter >= 0.0)) throw Error("task_jitter must be >= 0");
  for (const auto& r : cfg.regimes) {
    const std::string ctx = "regime '" + r.name + "': ";
    if (!(r.positive_rate >= 0.0 && r.positive_rate <= 1.0)) throw Error(ctx + "positive rate must lie in [0, 1]");
    if (r.task_count == 0) throw Error(ctx + "task_count must be >= 1");
    if (r.type_weights.size() != cfg.event_types || r.count_weights.size() != cfg.event_types) {
      throw Error(ctx + "type_weights and count_weights need one entry per event type");
    }
    if (r.numeric_weights.size() != cfg.numeric_dims || r.numeric_shift.size() != cfg.numeric_dims) {
      throw Error(ctx + "numeric_weights and numeric_shift need one entry per numeric dim");
    }
    double total = 0.0;
    for (double w : r.type_weights) {
      if (!(w >= 0.0)) throw Error(ctx + "type_weights must be non-negative");
      total += w;
    }
    if (!(total > 0.0)) throw Error(ctx + "type_weights must not all be zero");
  }
}

DatasetManifest generate_synthetic_tasks(const SyntheticConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Vocabulary vocab;
  for (std::size_t i = 0; i < cfg.event_types; ++i) vocab.event_types.push_back("event" + std::to_string(i));
  for (std::size_t i = 0; i < cfg.categorical_values; ++i) vocab.categorical_values.push_back("cat" + std::to_string(i));
  vocab.numeric_dims = cfg.numeric_dims;

  std::vector<TaskCorpus> tasks;
  std::size_t task_index = 0;
  for (std::size_t r = 0; r < cfg.regimes.size(); ++r) {
    const RegimeSpec& regime = cfg.regimes[r];
    double intercept;
    if (regime.positive_rate <= 0.0) {
      intercept = -std::numeric_limits<double>::infinity();
    } else if (regime.positive_rate >= 1.0) {
      intercept = std::numeric_limits<double>::infinity();
    } else {
      intercept = calibrate_intercept(cfg, regime, derive_seed(seed, "calibrate/" + std::to_string(r)));
    }
    for (std::size_t k = 0; k < regime.task_count; ++k, ++task_index) {
      Rng rng(derive_seed(seed, task_index));
      const std::vector<double> weights = task_type_weights(cfg, regime, rng);
      const std::size_t n =
          cfg.min_samples_per_task + uniform_index(rng, cfg.max_samples_per_task - cfg.min_samples_per_task + 1);
      std::vector<EpisodeSample> samples;
      samples.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        EpisodeDraw draw = draw_episode(cfg, regime, weights, rng);
        const double p = sigmoid(intercept + draw.score);
        draw.sample.label = uniform01(rng) < p ? 1 : 0;
        samples.push_back(std::move(draw.sample));
      }
      tasks.push_back(make_task(task_name(cfg, regime, task_index, r), std::move(samples), cfg.ratios, seed));
    }
  }
  return make_manifest(cfg.name, std::move(vocab), std::move(tasks), seed, cfg.ratios);
}

std::optional<std::size_t> regime_of(std::string_view task_id) {
  const auto pos = task_id.rfind(".r");
  if (pos == std::string_view::npos || pos + 2 >= task_id.size()) return std::nullopt;
  std::size_t value = 0;
  const char* first = task_id.data() + pos + 2;
  const char* last = task_id.data() + task_id.size();
  const auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc{} || res.ptr != last) return std::nullopt;
  return value;
}

// ---------------------------------------------------------------------------
// Presets

SyntheticConfig two_regime_preset(double rate_a, double rate_b, std::size_t tasks_per_regime,
                                  std::size_t samples_per_task) {
  SyntheticConfig cfg;
  cfg.name = "two-regime";
  cfg.event_types = 6;
  cfg.categorical_values = 4;
  cfg.numeric_dims = 2;
  cfg.min_samples_per_task = samples_per_task;
  cfg.max_samples_per_task = samples_per_task;
  cfg.min_events = 4;
  cfg.max_events = 24;
  // Same event process in both regimes; the numeric attributes carry
  // opposite risk in the two regimes.
  RegimeSpec a;
  a.name = "a";
  a.positive_rate = rate_a;
  a.task_count = tasks_per_regime;
  a.type_weights = {1, 1, 1, 1, 1, 1};
  a.count_weights = {4, 0, 0, 0, 0, -4};
  a.numeric_weights = {2.5, 0.0};
  a.numeric_shift = {0.0, 0.0};
  RegimeSpec b = a;
  b.name = "b";
  b.positive_rate = rate_b;
  b.count_weights = {-4, 0, 0, 0, 0, 4};
  b.numeric_weights = {-2.5, 1.0};
  cfg.regimes = {a, b};
  return cfg;
}

SyntheticConfig mini_eicu_preset() {
  SyntheticConfig cfg;
  cfg.name = "mini-eicu";
  cfg.event_types = 8;
  cfg.categorical_values = 6;
  cfg.numeric_dims = 3;
  cfg.min_samples_per_task = 100;
  cfg.max_samples_per_task = 100;
  cfg.min_events = 6;
  cfg.max_events = 40;
  RegimeSpec low{"low", 0.05, 24, {2, 2, 1, 1, 1, 1, 1, 1}, {3, 0, 0, 0, 0, 0, 0, -3}, {2.0, 0.0, 0.5}, {0.0, 0.0, 0.0}};
  RegimeSpec mid{"mid", 0.13, 23, {1, 1, 2, 2, 1, 1, 1, 1}, {0, 3, -3, 0, 0, 0, 0, 0}, {0.0, 2.0, -0.5}, {0.3, 0.0, 0.0}};
  RegimeSpec high{"high", 0.21, 23, {1, 1, 1, 1, 2, 2, 1, 1}, {0, 0, 0, 0, 3, -3, 0, 0}, {-2.0, 0.0, 1.0}, {0.0, -0.3, 0.0}};
  cfg.regimes = {low, mid, high};
  return cfg;
}

SyntheticConfig synthetic_preset(std::string_view name) {
  if (name == "two-regime") return two_regime_preset();
  if (name == "mini-eicu") return mini_eicu_preset();
  throw Error("unknown synthetic preset '" + std::string(name) + "' (expected two-regime or mini-eicu)");
}

// ---------------------------------------------------------------------------
// JSON

namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> allowed, const std::string& context) {
  if (!j.is_object()) throw Error(context + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw Error(context + ": unknown field '" + key + "'");
    }
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& context) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& ex) {
    throw Error(context + "." + key + ": " + ex.what());
  }
}

}  // namespace

json to_json(const SyntheticConfig& cfg) {
  json regimes = json::array();
  for (const auto& r : cfg.regimes) {
    regimes.push_back(json{{"name", r.name},
                           {"positive_rate", r.positive_rate},
                           {"task_count", r.task_count},
                           {"type_weights", r.type_weights},
                           {"count_weights", r.count_weights},
                           {"numeric_weights", r.numeric_weights},
                           {"numeric_shift", r.numeric_shift}});
  }
  return json{{"name", cfg.name},
              {"event_types", cfg.event_types},
              {"categorical_values", cfg.categorical_values},
              {"numeric_dims", cfg.numeric_dims},
              {"min_samples_per_task", cfg.min_samples_per_task},
              {"max_samples_per_task", cfg.max_samples_per_task},
              {"min_events", cfg.min_events},
              {"max_events", cfg.max_events},
              {"task_jitter", cfg.task_jitter},
              {"severity_scale", cfg.severity_scale},
              {"split_ratios", {cfg.ratios.train, cfg.ratios.valid, cfg.ratios.test}},
              {"regimes", regimes}};
}

SyntheticConfig synthetic_config_from_json(const json& j) {
  const std::string ctx = "synthetic";
  reject_unknown(j,
                 {"name", "event_types", "categorical_values", "numeric_dims", "min_samples_per_task",
                  "max_samples_per_task", "min_events", "max_events", "task_jitter", "severity_scale", "split_ratios",
                  "regimes"},
                 ctx);
  SyntheticConfig cfg;
  read_opt(j, "name", cfg.name, ctx);
  read_opt(j, "event_types", cfg.event_types, ctx);
  read_opt(j, "categorical_values", cfg.categorical_values, ctx);
  read_opt(j, "numeric_dims", cfg.numeric_dims, ctx);
  read_opt(j, "min_samples_per_task", cfg.min_samples_per_task, ctx);
  read_opt(j, "max_samples_per_task", cfg.max_samples_per_task, ctx);
  read_opt(j, "min_events", cfg.min_events, ctx);
  read_opt(j, "max_events", cfg.max_events, ctx);
  read_opt(j, "task_jitter", cfg.task_jitter, ctx);
  read_opt(j, "severity_scale", cfg.severity_scale, ctx);
  if (j.contains("split_ratios")) {
    std::vector<double> r;
    read_opt(j, "split_ratios", r, ctx);
    if (r.size() != 3) throw Error(ctx + ".split_ratios: expected three ratios");
    cfg.ratios = {r[0], r[1], r[2]};
  }
  if (!j.contains("regimes") || !j.at("regimes").is_array()) throw Error(ctx + ".regimes: expected a list");
  for (std::size_t i = 0; i < j.at("regimes").size(); ++i) {
    const json& jr = j.at("regimes")[i];
    const std::string rctx = ctx + ".regimes[" + std::to_string(i) + "]";
    reject_unknown(jr,
                   {"name", "positive_rate", "task_count", "type_weights", "count_weights", "numeric_weights",
                    "numeric_shift"},
                   rctx);
    RegimeSpec r;
    r.name = "r" + std::to_string(i);
    read_opt(jr, "name", r.name, rctx);
    read_opt(jr, "positive_rate", r.positive_rate, rctx);
    read_opt(jr, "task_count", r.task_count, rctx);
    r.type_weights.assign(cfg.event_types, 1.0);
    r.count_weights.assign(cfg.event_types, 0.0);
    r.numeric_weights.assign(cfg.numeric_dims, 0.0);
    r.numeric_shift.assign(cfg.numeric_dims, 0.0);
    read_opt(jr, "type_weights", r.type_weights, rctx);
    read_opt(jr, "count_weights", r.count_weights, rctx);
    read_opt(jr, "numeric_weights", r.numeric_weights, rctx);
    read_opt(jr, "numeric_shift", r.numeric_shift, rctx);
    cfg.regimes.push_back(std::move(r));
  }
  validate(cfg);
  return cfg;
}

}  // namespace adasit
