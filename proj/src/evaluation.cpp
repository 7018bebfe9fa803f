#include "aaformer/evaluation.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace aaformer {

double average_precision(const std::vector<bool>& ranked_hits) {
  std::size_t hits = 0;
  double acc = 0.0;
  for (std::size_t k = 0; k < ranked_hits.size(); ++k) {
    if (!ranked_hits[k]) continue;
    ++hits;
    acc += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return hits == 0 ? 0.0 : acc / static_cast<double>(hits);
}

EvalReport evaluate_descriptors(const std::vector<std::vector<double>>& query,
                                std::span<const std::size_t> query_labels,
                                const std::vector<std::vector<double>>& gallery,
                                std::span<const std::size_t> gallery_labels, bool same_set) {
  if (query.size() != query_labels.size() || gallery.size() != gallery_labels.size()) {
    throw DimensionError("evaluate: one label per descriptor required");
  }
  if (same_set && query.size() != gallery.size()) throw ContractError("same_set evaluation needs equal sets");
  EvalReport report;
  std::size_t hit1 = 0, hit5 = 0, hit10 = 0;
  std::vector<double> dist(gallery.size());
  std::vector<std::size_t> order;
  for (std::size_t q = 0; q < query.size(); ++q) {
    order.clear();
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      if (same_set && g == q) continue;
      if (gallery[g].size() != query[q].size()) throw DimensionError("descriptor length mismatch");
      double s = 0.0;
      for (std::size_t i = 0; i < query[q].size(); ++i) s += (query[q][i] - gallery[g][i]) * (query[q][i] - gallery[g][i]);
      dist[g] = std::sqrt(s);
      order.push_back(g);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
    });
    std::vector<bool> hits(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) hits[r] = gallery_labels[order[r]] == query_labels[q];
    const auto first = std::find(hits.begin(), hits.end(), true);
    if (first == hits.end()) {
      report.excluded_queries.push_back(q);
      continue;
    }
    const auto rank = static_cast<std::size_t>(first - hits.begin());
    hit1 += rank < 1;
    hit5 += rank < 5;
    hit10 += rank < 10;
    report.evaluated_queries.push_back(q);
    report.per_query_ap.push_back(average_precision(hits));
  }
  const std::size_t n = report.evaluated_queries.size();
  if (n > 0) {
    report.rank1 = static_cast<double>(hit1) / static_cast<double>(n);
    report.rank5 = static_cast<double>(hit5) / static_cast<double>(n);
    report.rank10 = static_cast<double>(hit10) / static_cast<double>(n);
    report.mAP = std::accumulate(report.per_query_ap.begin(), report.per_query_ap.end(), 0.0) / static_cast<double>(n);
  }
  return report;
}

std::vector<std::vector<double>> compute_descriptors(const AAformer& model, const std::vector<Sample>& samples) {
  std::vector<std::vector<double>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(descriptor_values(model.forward(s.pixels)));
  return out;
}

std::vector<std::size_t> labels_of(const std::vector<Sample>& samples) {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.identity);
  return out;
}

EvalReport evaluate(const AAformer& model, const std::vector<Sample>& query, const std::vector<Sample>& gallery) {
  return evaluate_descriptors(compute_descriptors(model, query), labels_of(query), compute_descriptors(model, gallery),
                              labels_of(gallery));
}

std::string format_eval_csv(const EvalReport& report) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "metric,value\nrank1,%.17g\nrank5,%.17g\nrank10,%.17g\nmAP,%.17g\nqueries,%zu\nexcluded_queries,%zu\n",
                report.rank1, report.rank5, report.rank10, report.mAP, report.evaluated_queries.size(),
                report.excluded_queries.size());
  return buf;
}

}  // namespace aaformer
