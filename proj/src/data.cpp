#include "adasit/data.hpp"

#include "adasit/error.hpp"
#include "adasit/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace adasit {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view split_name(Split split) noexcept {
  switch (split) {
    case Split::train:
      return "train";
    case Split::valid:
      return "valid";
    case Split::test:
      return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "valid") return Split::valid;
  if (name == "test") return Split::test;
  throw Error("unknown split '" + std::string(name) + "' (expected train, valid or test)");
}

const std::vector<std::size_t>& SplitIndex::part(Split split) const noexcept {
  switch (split) {
    case Split::train:
      return train;
    case Split::valid:
      return valid;
    case Split::test:
      return test;
  }
  return test;
}

// ---------------------------------------------------------------------------

SplitIndex split_task(std::size_t n_samples, const SplitRatios& ratios, std::uint64_t seed) {
  if (n_samples < 3) {
    throw Error("cannot split " + std::to_string(n_samples) + " samples into three non-empty parts");
  }
  if (!(ratios.train > 0.0) || !(ratios.valid > 0.0) || !(ratios.test > 0.0)) {
    throw Error("split ratios must be positive");
  }
  if (std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9) {
    throw Error("split ratios must sum to 1");
  }
  const double n = static_cast<double>(n_samples);
  // The epsilon keeps 0.7*n from flooring below an exact integer.
  auto n_train = static_cast<std::size_t>(std::floor(ratios.train * n + 1e-9));
  auto n_valid = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(ratios.valid * n + 1e-9)));
  n_train = std::max<std::size_t>(1, n_train);
  while (n_train + n_valid >= n_samples) {
    if (n_train > 1) {
      --n_train;
    } else {
      --n_valid;
    }
  }

  std::vector<std::size_t> order(n_samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(std::span<std::size_t>(order), rng);

  SplitIndex split;
  split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.valid.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                     order.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), order.end());
  return split;
}

std::uint64_t task_split_seed(std::uint64_t global_seed, std::string_view task_id) noexcept {
  return derive_seed(global_seed, task_id);
}

TaskCorpus make_task(std::string task_id, std::vector<EpisodeSample> samples, const SplitRatios& ratios,
                     std::uint64_t global_seed) {
  TaskCorpus task;
  task.split = split_task(samples.size(), ratios, task_split_seed(global_seed, task_id));
  const auto positives = std::count_if(samples.begin(), samples.end(), [](const EpisodeSample& s) { return s.label == 1; });
  task.positive_rate = static_cast<double>(positives) / static_cast<double>(samples.size());
  task.task_id = std::move(task_id);
  task.samples = std::move(samples);
  return task;
}

DatasetStats compute_stats(const std::vector<TaskCorpus>& tasks) {
  DatasetStats stats;
  stats.task_count = tasks.size();
  if (tasks.empty()) return stats;
  stats.min_samples_per_task = tasks.front().samples.size();
  for (const auto& task : tasks) {
    const std::size_t n = task.samples.size();
    stats.sample_count += n;
    stats.min_samples_per_task = std::min(stats.min_samples_per_task, n);
    stats.max_samples_per_task = std::max(stats.max_samples_per_task, n);
    for (const auto& s : task.samples) stats.positive_count += (s.label == 1) ? 1 : 0;
  }
  stats.positive_rate = stats.sample_count == 0
                            ? 0.0
                            : static_cast<double>(stats.positive_count) / static_cast<double>(stats.sample_count);
  stats.mean_samples_per_task = static_cast<double>(stats.sample_count) / static_cast<double>(stats.task_count);
  return stats;
}

DatasetManifest make_manifest(std::string name, Vocabulary vocab, std::vector<TaskCorpus> tasks,
                              std::uint64_t split_seed, const SplitRatios& ratios) {
  DatasetManifest manifest;
  manifest.name = std::move(name);
  manifest.vocab = std::move(vocab);
  manifest.stats = compute_stats(tasks);
  manifest.tasks = std::move(tasks);
  manifest.split_seed = split_seed;
  manifest.ratios = ratios;
  validate(manifest);
  return manifest;
}

namespace {

void check_unique(const std::vector<std::string>& names, const char* what) {
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) throw Error(std::string("duplicate ") + what + " name '" + n + "'");
  }
}

std::string where(const TaskCorpus& task, std::size_t sample) {
  return "task '" + task.task_id + "' sample " + std::to_string(sample);
}

void validate_episode(const EpisodeSample& s, const Vocabulary& vocab, const std::string& loc) {
  if (s.events.empty()) throw Error(loc + ": episode has no events");
  if (s.label != 0 && s.label != 1) throw Error(loc + ": label must be 0 or 1");
  double prev = 0.0;
  for (std::size_t k = 0; k < s.events.size(); ++k) {
    const auto& e = s.events[k];
    const std::string eloc = loc + " event " + std::to_string(k);
    if (e.event_type >= vocab.event_types.size()) throw Error(eloc + ": event type index out of vocabulary");
    for (auto c : e.categorical) {
      if (c >= vocab.categorical_values.size()) throw Error(eloc + ": categorical index out of vocabulary");
    }
    if (e.numeric.size() != vocab.numeric_dims) {
      throw Error(eloc + ": expected " + std::to_string(vocab.numeric_dims) + " numeric values, got " +
                  std::to_string(e.numeric.size()));
    }
    for (double v : e.numeric) {
      if (!std::isfinite(v)) throw Error(eloc + ": numeric value is not finite");
    }
    if (!std::isfinite(e.time) || e.time < 0.0) throw Error(eloc + ": time must be finite and >= 0");
    if (k > 0 && e.time < prev) throw Error(eloc + ": events not sorted by time");
    prev = e.time;
  }
}

}  // namespace

void validate(const DatasetManifest& manifest) {
  check_unique(manifest.vocab.event_types, "event type");
  check_unique(manifest.vocab.categorical_values, "categorical value");
  if (manifest.vocab.event_types.empty()) throw Error("vocabulary has no event types");
  if (manifest.tasks.empty()) throw Error("dataset has no tasks");
  std::set<std::string> ids;
  for (const auto& task : manifest.tasks) {
    if (!ids.insert(task.task_id).second) throw Error("duplicate task id '" + task.task_id + "'");
    const std::size_t n = task.samples.size();
    if (n == 0) throw Error("task '" + task.task_id + "' has no samples");
    std::size_t positives = 0;
    for (std::size_t i = 0; i < n; ++i) {
      validate_episode(task.samples[i], manifest.vocab, where(task, i));
      positives += static_cast<std::size_t>(task.samples[i].label);
    }
    if (task.positive_rate != static_cast<double>(positives) / static_cast<double>(n)) {
      throw Error("task '" + task.task_id + "': positive_rate does not match its labels");
    }
    std::vector<int> seen(n, 0);
    for (Split part : {Split::train, Split::valid, Split::test}) {
      for (auto idx : task.split.part(part)) {
        if (idx >= n || seen[idx]++ != 0) {
          throw Error("task '" + task.task_id + "': split is not a partition of its samples");
        }
      }
    }
    if (std::count(seen.begin(), seen.end(), 1) != static_cast<std::ptrdiff_t>(n)) {
      throw Error("task '" + task.task_id + "': split does not cover every sample");
    }
  }
  if (!(manifest.stats == compute_stats(manifest.tasks))) {
    throw Error("dataset statistics do not match the tasks");
  }
}

std::vector<const EpisodeSample*> split_samples(const TaskCorpus& task, Split split) {
  std::vector<const EpisodeSample*> out;
  const auto& idx = task.split.part(split);
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(&task.samples[i]);
  return out;
}

DatasetManifest truncate_sequences(const DatasetManifest& manifest, std::size_t max_events) {
  if (max_events == 0) throw Error("maximum sequence length must be at least 1");
  DatasetManifest out = manifest;
  for (auto& task : out.tasks) {
    for (auto& s : task.samples) {
      if (s.events.size() > max_events) {
        s.events.erase(s.events.begin(), s.events.end() - static_cast<std::ptrdiff_t>(max_events));
      }
    }
  }
  return out;
}

NormalizationStats compute_normalization(const DatasetManifest& manifest) {
  const std::size_t dims = manifest.vocab.numeric_dims;
  std::vector<double> sum(dims, 0.0), sum_sq(dims, 0.0);
  std::size_t count = 0;
  for (const auto& task : manifest.tasks) {
    for (auto i : task.split.train) {
      for (const auto& e : task.samples[i].events) {
        for (std::size_t d = 0; d < dims; ++d) {
          sum[d] += e.numeric[d];
          sum_sq[d] += e.numeric[d] * e.numeric[d];
        }
        ++count;
      }
    }
  }
  NormalizationStats stats{std::vector<double>(dims, 0.0), std::vector<double>(dims, 1.0)};
  if (count == 0) return stats;
  for (std::size_t d = 0; d < dims; ++d) {
    const double mean = sum[d] / static_cast<double>(count);
    const double var = std::max(0.0, sum_sq[d] / static_cast<double>(count) - mean * mean);
    stats.mean[d] = mean;
    stats.stddev[d] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  return stats;
}

DatasetManifest apply_normalization(const DatasetManifest& manifest, const NormalizationStats& stats) {
  if (stats.mean.size() != manifest.vocab.numeric_dims || stats.stddev.size() != manifest.vocab.numeric_dims) {
    throw Error("normalization statistics do not match the vocabulary's numeric dims");
  }
  DatasetManifest out = manifest;
  for (auto& task : out.tasks) {
    for (auto& s : task.samples) {
      for (auto& e : s.events) {
        for (std::size_t d = 0; d < e.numeric.size(); ++d) {
          e.numeric[d] = (e.numeric[d] - stats.mean[d]) / stats.stddev[d];
        }
      }
    }
  }
  return out;
}

DatasetManifest prepare_for_training(const DatasetManifest& manifest, const PrepareOptions& options) {
  DatasetManifest out = truncate_sequences(manifest, options.max_sequence_length);
  if (options.normalize) out = apply_normalization(out, compute_normalization(out));
  return out;
}

// ---------------------------------------------------------------------------
// Records file lines

namespace {

std::string format_real(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

class LineParser {
 public:
  LineParser(std::string_view text, const std::string& path, std::size_t line)
      : text_(text), path_(path), line_(line) {}

  [[noreturn]] void fail(const std::string& field, const std::string& msg) const {
    throw ParseError(path_, line_, field, msg + " at column " + std::to_string(pos_ + 1));
  }

  void skip_ws() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\r')) ++pos_;
  }

  bool at_end() {
    skip_ws();
    return pos_ >= text_.size();
  }

  bool peek(char c) {
    skip_ws();
    return pos_ < text_.size() && text_[pos_] == c;
  }

  void expect(char c, const std::string& field) {
    skip_ws();
    if (pos_ >= text_.size() || text_[pos_] != c) fail(field, std::string("expected '") + c + "'");
    ++pos_;
  }

  std::size_t index(const std::string& field) {
    skip_ws();
    std::size_t v = 0;
    const auto res = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), v);
    if (res.ec != std::errc{}) fail(field, "expected a non-negative integer");
    pos_ = static_cast<std::size_t>(res.ptr - text_.data());
    return v;
  }

  double real(const std::string& field) {
    skip_ws();
    double v = 0.0;
    const auto res = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), v);
    if (res.ec != std::errc{}) fail(field, "expected a real number");
    pos_ = static_cast<std::size_t>(res.ptr - text_.data());
    if (!std::isfinite(v)) fail(field, "value is not finite");
    return v;
  }

 private:
  std::string_view text_;
  const std::string& path_;
  std::size_t line_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string format_episode(const EpisodeSample& sample) {
  std::string out = std::to_string(sample.label);
  for (const auto& e : sample.events) {
    out += " (";
    out += std::to_string(e.event_type);
    out += ",[";
    for (std::size_t i = 0; i < e.categorical.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(e.categorical[i]);
    }
    out += "],[";
    for (std::size_t i = 0; i < e.numeric.size(); ++i) {
      if (i) out += ',';
      out += format_real(e.numeric[i]);
    }
    out += "],";
    out += format_real(e.time);
    out += ')';
  }
  return out;
}

EpisodeSample parse_episode(std::string_view text, const std::string& path, std::size_t line) {
  LineParser p(text, path, line);
  EpisodeSample sample;
  const std::size_t label = p.index("label");
  if (label > 1) p.fail("label", "label must be 0 or 1");
  sample.label = static_cast<int>(label);
  while (!p.at_end()) {
    const std::string ev = "event " + std::to_string(sample.events.size());
    EventRecord e;
    p.expect('(', ev);
    e.event_type = p.index(ev + ".type");
    p.expect(',', ev);
    p.expect('[', ev + ".categorical");
    if (!p.peek(']')) {
      do {
        e.categorical.push_back(p.index(ev + ".categorical"));
      } while (p.peek(',') && (p.expect(',', ev + ".categorical"), true));
    }
    p.expect(']', ev + ".categorical");
    p.expect(',', ev);
    p.expect('[', ev + ".numeric");
    if (!p.peek(']')) {
      do {
        e.numeric.push_back(p.real(ev + ".numeric"));
      } while (p.peek(',') && (p.expect(',', ev + ".numeric"), true));
    }
    p.expect(']', ev + ".numeric");
    p.expect(',', ev);
    e.time = p.real(ev + ".time");
    if (e.time < 0.0) p.fail(ev + ".time", "time must be >= 0");
    p.expect(')', ev);
    sample.events.push_back(std::move(e));
  }
  if (sample.events.empty()) p.fail("events", "episode has no events");
  return sample;
}

// ---------------------------------------------------------------------------
// Manifest files

namespace {

constexpr std::string_view kDatasetFormat = "adasit-dataset/1";

void reject_unknown(const json& j, std::initializer_list<std::string_view> allowed, const std::string& path,
                    const std::string& context) {
  if (!j.is_object()) throw ParseError(path, 0, context, "expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ParseError(path, 0, context.empty() ? key : context + "." + key, "unknown field");
    }
  }
}

template <typename T>
T required(const json& j, const char* key, const std::string& path, const std::string& context) {
  const std::string field = context.empty() ? key : context + "." + key;
  if (!j.contains(key)) throw ParseError(path, 0, field, "missing required field");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& ex) {
    throw ParseError(path, 0, field, ex.what());
  }
}

json stats_json(const DatasetStats& s) {
  return json{{"task_count", s.task_count},
              {"sample_count", s.sample_count},
              {"positive_count", s.positive_count},
              {"positive_rate", s.positive_rate},
              {"min_samples_per_task", s.min_samples_per_task},
              {"max_samples_per_task", s.max_samples_per_task},
              {"mean_samples_per_task", s.mean_samples_per_task}};
}

std::string records_name(std::size_t index) {
  std::ostringstream os;
  os << "tasks/" << std::setw(5) << std::setfill('0') << index << ".txt";
  return os.str();
}

}  // namespace

DatasetManifest load_dataset(const fs::path& path, const LoadOptions& options) {
  fs::path manifest_path = path;
  if (fs::is_directory(manifest_path)) manifest_path /= "manifest.json";
  const std::string mp = manifest_path.string();
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot open dataset manifest '" + mp + "'");

  json j;
  try {
    in >> j;
  } catch (const json::parse_error& ex) {
    throw ParseError(mp, 0, "<document>", ex.what());
  }
  reject_unknown(j, {"format", "name", "split_seed", "split_ratios", "vocabulary", "stats", "tasks"}, mp, "");
  if (required<std::string>(j, "format", mp, "") != kDatasetFormat) {
    throw ParseError(mp, 0, "format", "unsupported format (expected " + std::string(kDatasetFormat) + ")");
  }

  DatasetManifest manifest;
  manifest.name = required<std::string>(j, "name", mp, "");
  manifest.split_seed = required<std::uint64_t>(j, "split_seed", mp, "");
  if (j.contains("split_ratios")) {
    const auto r = j.at("split_ratios").get<std::vector<double>>();
    if (r.size() != 3) throw ParseError(mp, 0, "split_ratios", "expected three ratios");
    manifest.ratios = {r[0], r[1], r[2]};
  }

  const json& jv = j.at("vocabulary");
  reject_unknown(jv, {"event_types", "categorical_values", "numeric_dims"}, mp, "vocabulary");
  manifest.vocab.event_types = required<std::vector<std::string>>(jv, "event_types", mp, "vocabulary");
  manifest.vocab.categorical_values =
      required<std::vector<std::string>>(jv, "categorical_values", mp, "vocabulary");
  manifest.vocab.numeric_dims = required<std::size_t>(jv, "numeric_dims", mp, "vocabulary");

  const json& jtasks = j.at("tasks");
  if (!jtasks.is_array()) throw ParseError(mp, 0, "tasks", "expected a list");
  const fs::path base = manifest_path.parent_path();
  for (std::size_t t = 0; t < jtasks.size(); ++t) {
    const std::string ctx = "tasks[" + std::to_string(t) + "]";
    reject_unknown(jtasks[t], {"task_id", "records"}, mp, ctx);
    auto task_id = required<std::string>(jtasks[t], "task_id", mp, ctx);
    const fs::path rp = base / required<std::string>(jtasks[t], "records", mp, ctx);
    std::ifstream rin(rp);
    if (!rin) throw Error("cannot open records file '" + rp.string() + "' for task '" + task_id + "'");
    std::vector<EpisodeSample> samples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(rin, line)) {
      ++line_no;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      EpisodeSample s = parse_episode(line, rp.string(), line_no);
      for (std::size_t k = 1; k < s.events.size(); ++k) {
        if (s.events[k].time < s.events[k - 1].time) {
          throw ParseError(rp.string(), line_no, "event " + std::to_string(k) + ".time", "events not sorted by time");
        }
      }
      if (s.events.size() > options.max_sequence_length) {
        s.events.erase(s.events.begin(),
                       s.events.end() - static_cast<std::ptrdiff_t>(options.max_sequence_length));
      }
      samples.push_back(std::move(s));
    }
    if (samples.empty()) throw Error("records file '" + rp.string() + "' has no episodes");
    if (samples.size() < 3) {
      throw Error("task '" + task_id + "' has " + std::to_string(samples.size()) +
                  " samples; at least 3 are needed to split");
    }
    manifest.tasks.push_back(make_task(std::move(task_id), std::move(samples), manifest.ratios, manifest.split_seed));
  }
  manifest.stats = compute_stats(manifest.tasks);

  if (j.contains("stats")) {
    const json& js = j.at("stats");
    reject_unknown(js,
                   {"task_count", "sample_count", "positive_count", "positive_rate", "min_samples_per_task",
                    "max_samples_per_task", "mean_samples_per_task"},
                   mp, "stats");
    if (js != stats_json(manifest.stats)) {
      throw ParseError(mp, 0, "stats", "stored statistics do not match the records");
    }
  }
  validate(manifest);
  return manifest;
}

void save_dataset(const DatasetManifest& manifest, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "tasks", ec);
  if (ec) throw Error("cannot create dataset directory '" + dir.string() + "': " + ec.message());

  json tasks = json::array();
  for (std::size_t t = 0; t < manifest.tasks.size(); ++t) {
    const auto& task = manifest.tasks[t];
    const std::string rel = records_name(t);
    std::ofstream out(dir / rel);
    if (!out) throw Error("cannot write '" + (dir / rel).string() + "'");
    for (const auto& s : task.samples) out << format_episode(s) << '\n';
    tasks.push_back(json{{"task_id", task.task_id}, {"records", rel}});
  }
  json j{{"format", kDatasetFormat},
         {"name", manifest.name},
         {"split_seed", manifest.split_seed},
         {"split_ratios", {manifest.ratios.train, manifest.ratios.valid, manifest.ratios.test}},
         {"vocabulary",
          {{"event_types", manifest.vocab.event_types},
           {"categorical_values", manifest.vocab.categorical_values},
           {"numeric_dims", manifest.vocab.numeric_dims}}},
         {"stats", stats_json(manifest.stats)},
         {"tasks", tasks}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write '" + (dir / "manifest.json").string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace adasit
