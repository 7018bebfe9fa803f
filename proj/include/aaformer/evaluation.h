#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "aaformer/dataset.h"
#include "aaformer/model.h"

namespace aaformer {

struct EvalReport {
  double rank1 = 0.0;
  double rank5 = 0.0;
  double rank10 = 0.0;
  double mAP = 0.0;
  std::vector<double> per_query_ap;          // evaluated queries, in query order
  std::vector<std::size_t> evaluated_queries;
  std::vector<std::size_t> excluded_queries;  // queries without any positive
};

/// Average precision of a ranked hit list: mean over hits of precision at
/// that hit's rank. Zero when there are no hits.
double average_precision(const std::vector<bool>& ranked_hits);

/// Ranks the gallery for every query by ascending Euclidean distance (ties by
/// gallery index) and computes CMC rank-1/5/10 and mAP. With
/// `same_set = true` query i and gallery i are the same image and that pair
/// is skipped (leave-one-out retrieval over one set).
EvalReport evaluate_descriptors(const std::vector<std::vector<double>>& query,
                                std::span<const std::size_t> query_labels,
                                const std::vector<std::vector<double>>& gallery,
                                std::span<const std::size_t> gallery_labels, bool same_set = false);

std::vector<std::vector<double>> compute_descriptors(const AAformer& model, const std::vector<Sample>& samples);
std::vector<std::size_t> labels_of(const std::vector<Sample>& samples);

EvalReport evaluate(const AAformer& model, const std::vector<Sample>& query, const std::vector<Sample>& gallery);

/// `metric,value` CSV.
std::string format_eval_csv(const EvalReport& report);

}  // namespace aaformer
