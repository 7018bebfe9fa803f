#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "aaformer/model.h"
#include "aaformer/tensor.h"

namespace aaformer {

/// Label-smoothed cross-entropy. `logits` is [C] (one label) or [B×C]; the
/// result is the mean over rows. Target mass is 1−s+s/C on the label and s/C
/// elsewhere.
Tensor cross_entropy_smoothed(const Tensor& logits, std::span<const std::size_t> labels, double smoothing);

/// One unshared linear classifier per output token (CLS first, then parts).
class ClassifierBank {
 public:
  ClassifierBank() = default;

  /// Registers `classifier.NN.weight|bias` into the store.
  static ClassifierBank create(ParameterStore& store, std::size_t tokens, std::size_t dim, std::size_t classes,
                               std::mt19937_64& rng, double init_std);
  /// Binds to parameters already present in the store.
  static ClassifierBank attach(ParameterStore& store, std::size_t tokens);

  std::size_t tokens() const { return weights_.size(); }
  std::size_t classes() const { return weights_.empty() ? 0 : weights_.front().cols(); }

  /// features [B×D] → logits [B×C] for the given token's classifier.
  Tensor logits(std::size_t token, const Tensor& features) const;

 private:
  std::vector<Tensor> weights_;  // D×C
  std::vector<Tensor> biases_;   // C
};

/// Rows of token `token` (0 = CLS, i = part i−1) stacked over a batch: [B×D].
Tensor token_features(const std::vector<ModelOutput>& outputs, std::size_t token);

/// Mean over the P+1 tokens of the batch-mean smoothed cross-entropy.
Tensor loss_cls(const std::vector<ModelOutput>& outputs, std::span<const std::size_t> labels,
                const ClassifierBank& bank, double smoothing);

/// Global (CLS) and part (concatenated part tokens) descriptors per image.
struct TripletBatch {
  std::vector<Tensor> global;
  std::vector<Tensor> part;
  std::vector<std::size_t> labels;

  static TripletBatch from_outputs(const std::vector<ModelOutput>& outputs, std::span<const std::size_t> labels);
  /// Throws ContractError unless there are ≥2 identities and each has ≥2 images.
  void validate() const;
};

/// Batch-hard selection for one branch: per anchor, farthest positive and
/// nearest negative (ties to the lowest index).
struct TripletMining {
  std::vector<std::size_t> hardest_positive;
  std::vector<std::size_t> hardest_negative;
  std::vector<double> positive_distance;
  std::vector<double> negative_distance;

  /// Anchors whose hinge d_p − d_n + margin is positive.
  std::vector<bool> active(double margin) const;
};

TripletMining mine_batch_hard(const std::vector<std::vector<double>>& descriptors,
                              std::span<const std::size_t> labels);

struct TripletResult {
  Tensor loss;         // ½(global + part)
  Tensor global_term;  // mean over anchors of the CLS hinge
  Tensor part_term;    // mean over anchors of the part hinge (undefined without parts)
  TripletMining global;
  TripletMining part;
};

/// ½([d_p^g − d_n^g + α]₊ + [d_p^p − d_n^p + α]₊) averaged over anchors,
/// Euclidean distances, batch-hard mining. With no part tokens the global
/// term alone is returned.
TripletResult loss_triplet(const TripletBatch& batch, double margin);

struct LossBreakdown {
  Tensor total;
  Tensor cls;
  Tensor tri;
};

LossBreakdown loss_total(const std::vector<ModelOutput>& outputs, std::span<const std::size_t> labels,
                         const ClassifierBank& bank, double smoothing, double margin);

}  // namespace aaformer
