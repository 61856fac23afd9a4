#include "adasit/similarity.hpp"

#include "adasit/error.hpp"
#include "adasit/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace adasit {

using nlohmann::json;

std::string_view strategy_name(SimilarityStrategy s) noexcept {
  switch (s) {
    case SimilarityStrategy::cosine:
      return "cosine";
    case SimilarityStrategy::knn:
      return "knn";
    case SimilarityStrategy::static_rate:
      return "static";
    case SimilarityStrategy::identity:
      return "identity";
  }
  return "?";
}

SimilarityStrategy parse_strategy(std::string_view name) {
  if (name == "cosine") return SimilarityStrategy::cosine;
  if (name == "knn") return SimilarityStrategy::knn;
  if (name == "static") return SimilarityStrategy::static_rate;
  if (name == "identity") return SimilarityStrategy::identity;
  throw Error("unknown similarity strategy '" + std::string(name) + "' (expected cosine, knn, static or identity)");
}

bool needs_parameters(SimilarityStrategy s) noexcept {
  return s == SimilarityStrategy::cosine || s == SimilarityStrategy::knn;
}

void validate(const SimilarityConfig& c) {
  switch (c.strategy) {
    case SimilarityStrategy::cosine:
      if (!(c.eta > -1.0 && c.eta <= 1.0)) throw Error("similarity: eta must lie in (-1, 1]");
      break;
    case SimilarityStrategy::knn:
      if (c.k < 1) throw Error("similarity: k must be at least 1");
      break;
    case SimilarityStrategy::static_rate:
      if (!(c.static_tolerance >= 0.0)) throw Error("similarity: static_tolerance must be >= 0");
      break;
    case SimilarityStrategy::identity:
      break;
  }
}

json to_json(const SimilarityConfig& c) {
  return json{{"strategy", strategy_name(c.strategy)}, {"eta", c.eta}, {"k", c.k}, {"static_tolerance", c.static_tolerance}};
}

SimilarityConfig similarity_config_from_json(const json& j, SimilarityConfig c) {
  if (!j.is_object()) throw Error("similarity: expected an object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "strategy") {
        c.strategy = parse_strategy(value.get<std::string>());
      } else if (key == "eta") {
        c.eta = value.get<double>();
      } else if (key == "k") {
        c.k = value.get<std::size_t>();
      } else if (key == "static_tolerance") {
        c.static_tolerance = value.get<double>();
      } else {
        throw Error("similarity: unknown field '" + key + "'");
      }
    } catch (const json::exception& ex) {
      throw Error("similarity." + key + ": " + ex.what());
    }
  }
  validate(c);
  return c;
}

bool NeighborhoodAssignment::contains(std::size_t i, std::size_t j) const {
  const auto& n = neighbors.at(i);
  return std::binary_search(n.begin(), n.end(), j);
}

double NeighborhoodAssignment::mean_size() const noexcept {
  if (neighbors.empty()) return 0.0;
  double total = 0.0;
  for (const auto& n : neighbors) total += static_cast<double>(n.size());
  return total / static_cast<double>(neighbors.size());
}

// ---------------------------------------------------------------------------

double delta_cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("cosine: vectors differ in length");
  const double na = std::sqrt(kernels::dot(a, a));
  const double nb = std::sqrt(kernels::dot(b, b));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(kernels::dot(a, b) / (na * nb), -1.0, 1.0);
}

double cos_delta(const ParamVector& theta_i, const ParamVector& theta_j, const ParamVector& theta) {
  require_same_layout(theta_i, theta, "cos_delta");
  require_same_layout(theta_j, theta, "cos_delta");
  const ParamVector di = theta_i.minus(theta);
  const ParamVector dj = theta_j.minus(theta);
  return delta_cosine(di.values(), dj.values());
}

namespace {

struct Deltas {
  std::vector<ParamVector> delta;
  std::vector<double> norm;
};

Deltas compute_deltas(std::span<const ParamVector> thetas, const ParamVector& theta) {
  Deltas d;
  d.delta.reserve(thetas.size());
  for (const auto& t : thetas) {
    require_same_layout(t, theta, "similarity");
    d.delta.push_back(t.minus(theta));
    d.norm.push_back(l2_norm(d.delta.back()));
  }
  return d;
}

std::vector<std::vector<double>> cosines(const Deltas& d) {
  const std::size_t m = d.delta.size();
  std::vector<std::vector<double>> c(m, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < m; ++i) {
    if (d.norm[i] != 0.0) c[i][i] = 1.0;
    for (std::size_t j = i + 1; j < m; ++j) {
      double v = 0.0;
      if (d.norm[i] != 0.0 && d.norm[j] != 0.0) {
        v = std::clamp(kernels::dot(d.delta[i].values(), d.delta[j].values()) / (d.norm[i] * d.norm[j]), -1.0, 1.0);
      }
      c[i][j] = c[j][i] = v;
    }
  }
  return c;
}

void check_ids(std::span<const std::string> task_ids, std::size_t n) {
  if (task_ids.size() != n) throw Error("similarity: task id count does not match parameter count");
  if (n == 0) throw Error("similarity: no tasks");
}

NeighborhoodAssignment blank(std::span<const std::string> task_ids, SimilarityStrategy s) {
  NeighborhoodAssignment a;
  a.strategy = s;
  a.task_ids.assign(task_ids.begin(), task_ids.end());
  a.neighbors.resize(task_ids.size());
  return a;
}

}  // namespace

std::vector<std::vector<double>> cosine_matrix(std::span<const ParamVector> thetas, const ParamVector& theta) {
  return cosines(compute_deltas(thetas, theta));
}

NeighborhoodAssignment neighborhood_cosine(std::span<const std::string> task_ids, std::span<const ParamVector> thetas,
                                           const ParamVector& theta, double eta) {
  check_ids(task_ids, thetas.size());
  if (!(eta > -1.0 && eta <= 1.0)) throw Error("neighborhood_cosine: eta must lie in (-1, 1]");
  const Deltas d = compute_deltas(thetas, theta);
  const auto c = cosines(d);
  NeighborhoodAssignment a = blank(task_ids, SimilarityStrategy::cosine);
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = 0; j < c.size(); ++j) {
      if (j == i || (d.norm[i] != 0.0 && d.norm[j] != 0.0 && c[i][j] > eta)) a.neighbors[i].push_back(j);
    }
  }
  return a;
}

NeighborhoodAssignment neighborhood_knn(std::span<const std::string> task_ids, std::span<const ParamVector> thetas,
                                        const ParamVector& theta, std::size_t k) {
  check_ids(task_ids, thetas.size());
  const std::size_t m = thetas.size();
  if (k < 1 || k > m) throw Error("neighborhood_knn: k must lie in [1, task count]");
  const Deltas d = compute_deltas(thetas, theta);
  const auto c = cosines(d);
  NeighborhoodAssignment a = blank(task_ids, SimilarityStrategy::knn);
  for (std::size_t i = 0; i < m; ++i) {
    a.neighbors[i].push_back(i);
    if (d.norm[i] == 0.0) continue;
    std::vector<std::size_t> candidates;
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i && d.norm[j] != 0.0) candidates.push_back(j);
    }
    std::sort(candidates.begin(), candidates.end(), [&](std::size_t x, std::size_t y) {
      if (c[i][x] != c[i][y]) return c[i][x] > c[i][y];
      return task_ids[x] < task_ids[y];
    });
    const std::size_t take = std::min(k, candidates.size());
    a.neighbors[i].insert(a.neighbors[i].end(), candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(a.neighbors[i].begin(), a.neighbors[i].end());
  }
  return a;
}

NeighborhoodAssignment neighborhood_static(std::span<const TaskCorpus> tasks, double tolerance) {
  if (!(tolerance >= 0.0)) throw Error("neighborhood_static: tolerance must be >= 0");
  std::vector<std::string> ids;
  for (const auto& t : tasks) ids.push_back(t.task_id);
  NeighborhoodAssignment a = blank(ids, SimilarityStrategy::static_rate);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    for (std::size_t j = 0; j < tasks.size(); ++j) {
      if (j == i || std::abs(tasks[i].positive_rate - tasks[j].positive_rate) <= tolerance) a.neighbors[i].push_back(j);
    }
  }
  return a;
}

NeighborhoodAssignment neighborhood_identity(std::span<const std::string> task_ids) {
  NeighborhoodAssignment a = blank(task_ids, SimilarityStrategy::identity);
  for (std::size_t i = 0; i < task_ids.size(); ++i) a.neighbors[i] = {i};
  return a;
}

NeighborhoodAssignment measure_neighborhoods(const SimilarityConfig& config, std::span<const TaskCorpus> tasks,
                                             std::optional<std::span<const ParamVector>> task_params,
                                             const ParamVector* theta, std::size_t epoch) {
  validate(config);
  std::vector<std::string> ids;
  for (const auto& t : tasks) ids.push_back(t.task_id);
  NeighborhoodAssignment a;
  if (needs_parameters(config.strategy) && (!task_params || theta == nullptr)) {
    a = neighborhood_identity(ids);
  } else {
    switch (config.strategy) {
      case SimilarityStrategy::cosine:
        a = neighborhood_cosine(ids, *task_params, *theta, config.eta);
        break;
      case SimilarityStrategy::knn:
        a = neighborhood_knn(ids, *task_params, *theta, std::min(config.k, ids.size()));
        break;
      case SimilarityStrategy::static_rate:
        a = neighborhood_static(tasks, config.static_tolerance);
        break;
      case SimilarityStrategy::identity:
        a = neighborhood_identity(ids);
        break;
    }
  }
  a.epoch = epoch;
  return a;
}

void export_model_space(const std::filesystem::path& path, std::size_t epoch, std::span<const TaskCorpus> tasks,
                        std::span<const ParamVector> thetas, const ParamVector& theta,
                        const NeighborhoodAssignment& assignment, bool append) {
  if (tasks.size() != thetas.size() || assignment.neighbors.size() != tasks.size()) {
    throw Error("export_model_space: tasks, parameters and neighborhoods differ in count");
  }
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw Error("cannot write model-space export '" + path.string() + "'");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const ParamVector delta = thetas[i].minus(theta);
    const double norm = l2_norm(delta);
    json neighbors = json::array();
    for (auto j : assignment.neighbors[i]) neighbors.push_back(tasks[j].task_id);
    json rec{{"epoch", epoch},
             {"task_id", tasks[i].task_id},
             {"positive_rate", tasks[i].positive_rate},
             {"delta_norm", norm},
             {"zero_delta", norm == 0.0},
             {"isolated", norm == 0.0 || assignment.neighbors[i].size() == 1},
             {"neighbors", neighbors},
             {"delta", std::vector<double>(delta.values().begin(), delta.values().end())}};
    if (auto r = regime_of(tasks[i].task_id)) rec["regime"] = *r;
    out << rec.dump() << '\n';
  }
}

}  // namespace adasit
