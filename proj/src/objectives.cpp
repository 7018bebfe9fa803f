#include "aaformer/objectives.h"

#include <cmath>
#include <cstdio>
#include <map>

namespace aaformer {

Tensor cross_entropy_smoothed(const Tensor& logits, std::span<const std::size_t> labels, double smoothing) {
  if (smoothing < 0.0 || smoothing >= 1.0) throw ContractError("smoothing must lie in [0,1)");
  std::size_t B = 0, C = 0;
  if (logits.dim() == 1) {
    B = 1;
    C = logits.numel();
  } else if (logits.dim() == 2) {
    B = logits.rows();
    C = logits.cols();
  } else {
    throw DimensionError("logits must be [C] or [B×C]");
  }
  if (labels.size() != B) throw DimensionError("one label per logits row required");
  if (C == 0) throw DimensionError("logits need at least one class");
  for (auto y : labels) {
    if (y >= C) throw ContractError("label " + std::to_string(y) + " outside [0," + std::to_string(C) + ")");
  }
  const double off = smoothing / static_cast<double>(C);
  const double on = 1.0 - smoothing + off;
  const auto X = logits.data();
  std::vector<double> probs(B * C);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double* row = X.data() + b * C;
    double mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    double loss = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double q = c == labels[b] ? on : off;
      loss -= q * (row[c] - lse);
      probs[b * C + c] = std::exp(row[c] - lse);
    }
    total += loss;
  }
  std::vector<std::size_t> ys(labels.begin(), labels.end());
  return Tensor::make_result(
      {}, {total / static_cast<double>(B)}, {logits},
      [probs = std::move(probs), ys = std::move(ys), B, C, on, off](const GradRefs& g) {
        const double s = g.out[0] / static_cast<double>(B);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c)
            g.in[0][b * C + c] += s * (probs[b * C + c] - (c == ys[b] ? on : off));
      });
}

// ---------------------------------------------------------------------------
// Classifier bank
// ---------------------------------------------------------------------------

namespace {

std::string classifier_name(std::size_t token, const char* leaf) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "classifier.%02zu.%s", token, leaf);
  return buf;
}

}  // namespace

ClassifierBank ClassifierBank::create(ParameterStore& store, std::size_t tokens, std::size_t dim,
                                      std::size_t classes, std::mt19937_64& rng, double init_std) {
  if (classes == 0) throw ContractError("classifier bank needs at least one class");
  for (std::size_t i = 0; i < tokens; ++i) {
    Tensor w = Tensor::zeros({dim, classes});
    truncated_normal_fill(w.mutable_data(), init_std, rng);
    store.add(classifier_name(i, "weight"), w);
    store.add(classifier_name(i, "bias"), Tensor::zeros({classes}));
  }
  return attach(store, tokens);
}

ClassifierBank ClassifierBank::attach(ParameterStore& store, std::size_t tokens) {
  ClassifierBank bank;
  for (std::size_t i = 0; i < tokens; ++i) {
    bank.weights_.push_back(store.get(classifier_name(i, "weight")));
    bank.biases_.push_back(store.get(classifier_name(i, "bias")));
  }
  return bank;
}

Tensor ClassifierBank::logits(std::size_t token, const Tensor& features) const {
  if (token >= weights_.size()) throw ContractError("no classifier for token " + std::to_string(token));
  return add_bias(matmul(features, weights_[token]), biases_[token]);
}

// ---------------------------------------------------------------------------
// Classification loss
// ---------------------------------------------------------------------------

Tensor token_features(const std::vector<ModelOutput>& outputs, std::size_t token) {
  std::vector<Tensor> rows;
  rows.reserve(outputs.size());
  for (const auto& o : outputs) {
    if (token == 0) {
      rows.push_back(reshape(o.cls, {1, o.cls.numel()}));
    } else {
      rows.push_back(slice_rows(o.part_tokens, token - 1, 1));
    }
  }
  return concat_rows(rows);
}

Tensor loss_cls(const std::vector<ModelOutput>& outputs, std::span<const std::size_t> labels,
                const ClassifierBank& bank, double smoothing) {
  if (outputs.empty()) throw ContractError("loss_cls on an empty batch");
  const std::size_t tokens = 1 + outputs.front().part_tokens.rows();
  if (bank.tokens() != tokens) {
    throw ContractError("classifier bank has " + std::to_string(bank.tokens()) + " heads but outputs have " +
                        std::to_string(tokens) + " tokens");
  }
  for (auto y : labels) {
    if (y >= bank.classes()) throw ContractError("identity " + std::to_string(y) + " outside classifier range");
  }
  Tensor acc;
  for (std::size_t i = 0; i < tokens; ++i) {
    Tensor term = cross_entropy_smoothed(bank.logits(i, token_features(outputs, i)), labels, smoothing);
    acc = acc.defined() ? add(acc, term) : term;
  }
  return scale(acc, 1.0 / static_cast<double>(tokens));
}

// ---------------------------------------------------------------------------
// Triplet loss
// ---------------------------------------------------------------------------

TripletBatch TripletBatch::from_outputs(const std::vector<ModelOutput>& outputs, std::span<const std::size_t> labels) {
  if (outputs.size() != labels.size()) throw DimensionError("one label per output required");
  TripletBatch batch;
  for (const auto& o : outputs) {
    batch.global.push_back(o.cls);
    if (o.part_tokens.defined() && o.part_tokens.numel() > 0) {
      batch.part.push_back(reshape(o.part_tokens, {o.part_tokens.numel()}));
    }
  }
  batch.labels.assign(labels.begin(), labels.end());
  return batch;
}

void TripletBatch::validate() const {
  if (global.size() != labels.size()) throw ContractError("triplet batch: descriptor/label count mismatch");
  if (!part.empty() && part.size() != labels.size()) throw ContractError("triplet batch: part count mismatch");
  std::map<std::size_t, std::size_t> per_id;
  for (auto y : labels) ++per_id[y];
  if (per_id.size() < 2) throw ContractError("triplet batch needs at least two identities (no negatives)");
  for (const auto& [id, n] : per_id) {
    if (n < 2) throw ContractError("identity " + std::to_string(id) + " has a single image (no positive)");
  }
}

std::vector<bool> TripletMining::active(double margin) const {
  std::vector<bool> out(positive_distance.size());
  for (std::size_t a = 0; a < out.size(); ++a) out[a] = positive_distance[a] - negative_distance[a] + margin > 0.0;
  return out;
}

namespace {

double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::vector<std::vector<double>> values_of(const std::vector<Tensor>& ts) {
  std::vector<std::vector<double>> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

Tensor branch_term(const std::vector<Tensor>& desc, const TripletMining& mining, double margin) {
  const Tensor alpha = Tensor::scalar(margin);
  Tensor acc;
  for (std::size_t a = 0; a < desc.size(); ++a) {
    const Tensor dp = l2_distance(desc[a], desc[mining.hardest_positive[a]]);
    const Tensor dn = l2_distance(desc[a], desc[mining.hardest_negative[a]]);
    const Tensor hinge = relu(add(sub(dp, dn), alpha));
    acc = acc.defined() ? add(acc, hinge) : hinge;
  }
  return scale(acc, 1.0 / static_cast<double>(desc.size()));
}

}  // namespace

TripletMining mine_batch_hard(const std::vector<std::vector<double>>& descriptors,
                              std::span<const std::size_t> labels) {
  const std::size_t B = descriptors.size();
  if (labels.size() != B) throw DimensionError("one label per descriptor required");
  TripletMining m;
  m.hardest_positive.resize(B);
  m.hardest_negative.resize(B);
  m.positive_distance.resize(B);
  m.negative_distance.resize(B);
  for (std::size_t a = 0; a < B; ++a) {
    bool have_pos = false, have_neg = false;
    for (std::size_t j = 0; j < B; ++j) {
      if (j == a) continue;
      const double d = euclidean(descriptors[a], descriptors[j]);
      if (labels[j] == labels[a]) {
        if (!have_pos || d > m.positive_distance[a]) {
          m.positive_distance[a] = d;
          m.hardest_positive[a] = j;
          have_pos = true;
        }
      } else if (!have_neg || d < m.negative_distance[a]) {
        m.negative_distance[a] = d;
        m.hardest_negative[a] = j;
        have_neg = true;
      }
    }
    if (!have_pos || !have_neg) throw ContractError("anchor without positive or negative in triplet batch");
  }
  return m;
}

TripletResult loss_triplet(const TripletBatch& batch, double margin) {
  if (margin < 0.0) throw ContractError("triplet margin must be nonnegative");
  batch.validate();
  TripletResult r;
  r.global = mine_batch_hard(values_of(batch.global), batch.labels);
  r.global_term = branch_term(batch.global, r.global, margin);
  if (batch.part.empty()) {
    r.loss = r.global_term;
    return r;
  }
  r.part = mine_batch_hard(values_of(batch.part), batch.labels);
  r.part_term = branch_term(batch.part, r.part, margin);
  r.loss = scale(add(r.global_term, r.part_term), 0.5);
  return r;
}

LossBreakdown loss_total(const std::vector<ModelOutput>& outputs, std::span<const std::size_t> labels,
                         const ClassifierBank& bank, double smoothing, double margin) {
  LossBreakdown out;
  out.cls = loss_cls(outputs, labels, bank, smoothing);
  out.tri = loss_triplet(TripletBatch::from_outputs(outputs, labels), margin).loss;
  out.total = add(out.cls, out.tri);
  return out;
}

}  // namespace aaformer
