#include <algorithm>
#include <cstdio>
#include <sstream>

#include "actgraph/error.hpp"
#include "actgraph/synthlab.hpp"

namespace actgraph {

std::vector<RankedReturn> ranked_returns(const RetrievalResult& result) {
  std::vector<RankedReturn> out;
  out.reserve(result.ranked.size());
  for (const auto& g : result.ranked) out.push_back({g.full_log_score, g.volume});
  return out;
}

std::vector<RankedReturn> ranked_returns_from_json(const json& result_doc) {
  try {
    std::vector<std::pair<std::size_t, RankedReturn>> rows;
    for (const auto& r : result_doc.at("ranked"))
      rows.push_back({r.at("rank").get<std::size_t>(),
                      {r.at("full_log_score").get<double>(), volume_from_json(r.at("volume"))}});
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<RankedReturn> out;
    for (auto& [_, r] : rows) out.push_back(r);
    return out;
  } catch (const json::exception& e) {
    throw ParseError(std::string("result: ") + e.what());
  }
}

EvalReport evaluate(std::span<const RankedReturn> returns, std::span<const GroundTruthInstance> truth,
                    const std::vector<std::size_t>& ks) {
  EvalReport report;
  report.n_returns = returns.size();
  report.n_truth = truth.size();
  report.matched.assign(returns.size(), false);

  std::vector<bool> used(truth.size(), false);
  for (std::size_t r = 0; r < returns.size(); ++r) {
    double best = 0.5;
    std::optional<std::size_t> hit;
    for (std::size_t t = 0; t < truth.size(); ++t) {
      if (used[t]) continue;
      const double iou = volume_iou(returns[r].volume, truth[t].volume);
      if (iou > best) {
        best = iou;
        hit = t;
      }
    }
    if (hit) {
      used[*hit] = true;
      report.matched[r] = true;
      ++report.true_positives;
    }
  }

  // One point per distinct score: everything scoring at least that much is returned.
  std::size_t tp = 0;
  for (std::size_t r = 0; r < returns.size(); ++r) {
    tp += report.matched[r] ? 1 : 0;
    if (r + 1 < returns.size() && returns[r + 1].score == returns[r].score) continue;
    const double n = static_cast<double>(r + 1);
    const double recall = truth.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(truth.size());
    report.pr_points.push_back({returns[r].score, static_cast<double>(tp) / n, recall});
  }

  if (!report.pr_points.empty()) {
    double prev_recall = 0.0, prev_precision = report.pr_points.front().precision;
    for (const auto& p : report.pr_points) {
      report.auc += (p.recall - prev_recall) * (p.precision + prev_precision) / 2.0;
      prev_recall = p.recall;
      prev_precision = p.precision;
    }
  }

  for (std::size_t k : ks) {
    if (k == 0 || returns.size() < k) {
      report.precision_at_k[k] = std::nullopt;
      continue;
    }
    const auto hits = std::count(report.matched.begin(), report.matched.begin() + static_cast<std::ptrdiff_t>(k), true);
    report.precision_at_k[k] = static_cast<double>(hits) / static_cast<double>(k);
  }
  return report;
}

EvalReport evaluate(const RetrievalResult& result, std::span<const GroundTruthInstance> truth,
                    const std::vector<std::size_t>& ks) {
  const auto returns = ranked_returns(result);
  return evaluate(returns, truth, ks);
}

json to_json(const EvalReport& report) {
  json points = json::array();
  for (const auto& p : report.pr_points)
    points.push_back({{"score", p.score}, {"precision", p.precision}, {"recall", p.recall}});
  json pk = json::object();
  for (const auto& [k, v] : report.precision_at_k) pk[std::to_string(k)] = v ? json(*v) : json(nullptr);
  return json{{"auc", report.auc},
              {"pr_points", points},
              {"precision_at_k", pk},
              {"n_returns", report.n_returns},
              {"n_truth", report.n_truth},
              {"true_positives", report.true_positives}};
}

std::string pr_points_csv(const EvalReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "score,precision,recall\n";
  for (const auto& p : report.pr_points) out << p.score << ',' << p.precision << ',' << p.recall << '\n';
  return out.str();
}

std::string format_report(const EvalReport& report) {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "returns %zu  truth %zu  matched %zu\n", report.n_returns, report.n_truth,
                report.true_positives);
  out << line;
  std::snprintf(line, sizeof line, "AUC     %.4f\n", report.auc);
  out << line;
  for (const auto& [k, v] : report.precision_at_k) {
    if (v)
      std::snprintf(line, sizeof line, "P@%-5zu %.4f\n", k, *v);
    else
      std::snprintf(line, sizeof line, "P@%-5zu -\n", k);
    out << line;
  }
  return out.str();
}

}  // namespace actgraph
