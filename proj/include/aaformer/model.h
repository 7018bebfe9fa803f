#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "aaformer/attention.h"
#include "aaformer/config.h"
#include "aaformer/tensor.h"

namespace aaformer {

struct ModelOutput {
  Tensor cls;          // [D]
  Tensor part_tokens;  // [P×D]
  std::vector<LayerTrace> traces;  // one per layer in MAA mode
};

struct ForwardOptions {
  /// Per-layer traces whose masks are reused instead of re-solving.
  const std::vector<LayerTrace>* frozen = nullptr;
  MemberOverride override_members;
};

/// Splits an H×W×C image into N flattened I×I×C patches with the configured
/// stride, row-major over the patch grid.
Tensor patchify(const Tensor& image, const ModelConfig& cfg);

/// Truncated normal (±2σ) fill used for tokens, embeddings and projections.
void truncated_normal_fill(std::span<double> values, double std, std::mt19937_64& rng);

class AAformer {
 public:
  AAformer(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const TokenLayout& layout() const { return layout_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  LayerParams layer_params(std::size_t layer) const;

  ModelOutput forward(const Tensor& image, const ForwardOptions& opts = {}) const;
  std::vector<ModelOutput> forward_batch(const std::vector<Tensor>& images,
                                         const std::vector<const std::vector<LayerTrace>*>& frozen = {}) const;

  /// Sets every attention and MLP weight and bias to zero, leaving each
  /// layer an identity map on its input.
  void zero_residual_branches();

 private:
  ModelConfig cfg_;
  TokenLayout layout_;
  ParameterStore params_;
};

/// concat(cls, part_1, …, part_P) as a flat [(P+1)·D] tensor.
Tensor extract_descriptor(const ModelOutput& out);
std::vector<double> descriptor_values(const ModelOutput& out);

}  // namespace aaformer
