#include "adasit/metrics.hpp"

#include "adasit/error.hpp"

#include <algorithm>
#include <numeric>

namespace adasit {

using nlohmann::json;

namespace {

struct ClassCounts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

ClassCounts count_classes(std::span<const double> scores, std::span<const int> labels, const char* what) {
  if (scores.size() != labels.size()) {
    throw Error(std::string(what) + ": scores and labels differ in length");
  }
  ClassCounts c;
  for (int y : labels) {
    if (y == 1) {
      ++c.pos;
    } else if (y == 0) {
      ++c.neg;
    } else {
      throw Error(std::string(what) + ": labels must be 0 or 1");
    }
  }
  return c;
}

/// Sample order by descending score; ties keep input order.
std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  const ClassCounts c = count_classes(scores, labels, "auc");
  if (c.pos == 0 || c.neg == 0) throw Error("auc: needs both positive and negative samples");

  // Walk tie groups from the lowest score up. Each positive wins against all
  // negatives in lower groups and ties with the negatives of its own group.
  std::vector<std::size_t> order = descending_order(scores);
  std::reverse(order.begin(), order.end());
  double wins = 0.0;
  std::size_t neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t pos_here = 0, neg_here = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? pos_here : neg_here) += 1;
      ++j;
    }
    wins += static_cast<double>(pos_here) * (static_cast<double>(neg_below) + 0.5 * static_cast<double>(neg_here));
    neg_below += neg_here;
    i = j;
  }
  return wins / (static_cast<double>(c.pos) * static_cast<double>(c.neg));
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  const ClassCounts c = count_classes(scores, labels, "average_precision");
  if (c.pos == 0) throw Error("average_precision: needs at least one positive sample");

  const std::vector<std::size_t> order = descending_order(scores);
  double ap = 0.0;
  double recall_prev = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += static_cast<std::size_t>(labels[order[j]]);
      ++j;
    }
    seen += j - i;
    const double recall = static_cast<double>(tp) / static_cast<double>(c.pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - recall_prev) * precision;
    recall_prev = recall;
    i = j;
  }
  return ap;
}

MetricsReport build_report(std::span<const TaskPredictions> predictions) {
  MetricsReport report;
  std::vector<double> all_scores;
  std::vector<int> all_labels;
  double auc_sum = 0.0, ap_sum = 0.0;
  std::size_t defined = 0;
  for (const auto& tp : predictions) {
    const ClassCounts c = count_classes(tp.scores, tp.labels, "build_report");
    TaskMetrics m;
    m.n = tp.scores.size();
    m.n_pos = c.pos;
    if (c.pos > 0 && c.neg > 0) {
      m.auc = auc(tp.scores, tp.labels);
      m.ap = average_precision(tp.scores, tp.labels);
      auc_sum += *m.auc;
      ap_sum += *m.ap;
      ++defined;
    }
    if (!report.per_task.emplace(tp.task_id, m).second) {
      throw Error("build_report: duplicate task id '" + tp.task_id + "'");
    }
    all_scores.insert(all_scores.end(), tp.scores.begin(), tp.scores.end());
    all_labels.insert(all_labels.end(), tp.labels.begin(), tp.labels.end());
  }
  const ClassCounts pooled = count_classes(all_scores, all_labels, "build_report");
  if (pooled.pos == 0 || pooled.neg == 0) {
    throw Error("build_report: pooled predictions contain a single class; AUC is undefined");
  }
  report.micro_auc = auc(all_scores, all_labels);
  report.micro_ap = average_precision(all_scores, all_labels);
  if (defined > 0) {
    report.macro_auc = auc_sum / static_cast<double>(defined);
    report.macro_ap = ap_sum / static_cast<double>(defined);
  }
  return report;
}

json to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json per_task = json::array();
  for (const auto& [id, m] : r.per_task) {
    per_task.push_back(json{{"task_id", id}, {"auc", opt(m.auc)}, {"ap", opt(m.ap)}, {"n", m.n}, {"n_pos", m.n_pos}});
  }
  return json{{"micro_auc", r.micro_auc},
              {"micro_ap", r.micro_ap},
              {"macro_auc", opt(r.macro_auc)},
              {"macro_ap", opt(r.macro_ap)},
              {"per_task", per_task}};
}

MetricsReport report_from_json(const json& j) {
  auto opt = [](const json& v) { return v.is_null() ? std::optional<double>{} : std::optional<double>(v.get<double>()); };
  MetricsReport r;
  r.micro_auc = j.at("micro_auc").get<double>();
  r.micro_ap = j.at("micro_ap").get<double>();
  r.macro_auc = opt(j.at("macro_auc"));
  r.macro_ap = opt(j.at("macro_ap"));
  for (const auto& row : j.at("per_task")) {
    TaskMetrics m{opt(row.at("auc")), opt(row.at("ap")), row.at("n").get<std::size_t>(), row.at("n_pos").get<std::size_t>()};
    r.per_task.emplace(row.at("task_id").get<std::string>(), m);
  }
  return r;
}

}  // namespace adasit
