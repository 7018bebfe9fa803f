#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "aaformer/config.h"
#include "aaformer/sinkhorn.h"
#include "aaformer/tensor.h"

namespace aaformer {

/// Sequence layout: CLS at 0, part tokens 1..P grouped by granularity set in
/// declaration order, then N patches in row-major spatial order.
struct TokenLayout {
  std::size_t num_patches = 0;
  std::vector<std::size_t> granularity;

  static TokenLayout from_config(const ModelConfig& cfg);

  std::size_t num_parts() const;
  std::size_t length() const { return 1 + num_parts() + num_patches; }
  std::size_t cls_index() const { return 0; }
  std::size_t part_index(std::size_t part) const { return 1 + part; }
  std::size_t patch_index(std::size_t patch) const { return 1 + num_parts() + patch; }
  /// Index of the first part token of granularity set `set` among the parts.
  std::size_t set_offset(std::size_t set) const;
};

struct AttentionProjections {
  Tensor wq, wk, wv;  // D×D
  Tensor wo;          // D×D
  std::size_t heads = 1;

  std::size_t dim() const { return wq.rows(); }
  std::size_t head_dim() const { return dim() / heads; }
};

/// Alignment of one granularity set in one head.
struct AlignmentTrace {
  std::size_t head = 0;
  std::size_t set = 0;
  std::size_t part_offset = 0;
  std::size_t parts = 0;
  Tensor similarity;                        // parts×N raw query·key products
  std::optional<ot::TransportPlan> plan;    // present for optimal transport
  ot::AssignmentMask mask;                  // final mask, after repairs
  std::vector<std::vector<std::size_t>> members;  // Φ_p for every part of the set
  std::vector<std::size_t> repaired_parts;  // parts that were empty after rounding
  bool log_domain_fallback = false;
};

struct LayerTrace {
  std::size_t heads = 0;
  std::size_t num_parts = 0;
  std::size_t num_patches = 0;
  std::vector<AlignmentTrace> alignments;  // head-major, then set
  /// heads × parts × patches softmax weights of part-token queries over
  /// patch keys (zero outside Φ_p).
  std::vector<double> part_attention;

  const AlignmentTrace& at(std::size_t head, std::size_t set) const;
  double part_weight(std::size_t head, std::size_t part, std::size_t patch) const;
  std::size_t repair_count() const;
};

/// Replaces Φ for (head, set): returns one patch list per part of the set.
using MemberOverride =
    std::function<std::vector<std::vector<std::size_t>>(std::size_t head, std::size_t set, std::size_t parts,
                                                        std::size_t patches)>;

struct AlignmentControl {
  /// Reuse the masks of a previous pass instead of solving (gradient checks).
  const LayerTrace* frozen = nullptr;
  MemberOverride override_members;
};

struct AlignedAttention {
  Tensor output;          // L×D, after W_O
  Tensor pre_projection;  // L×D, concatenated heads
  LayerTrace trace;
};

/// Per-head scaled dot-product attention, heads concatenated, before W_O.
/// `mask` is L×L (nonzero = may attend); empty means unrestricted.
Tensor attention_heads(const Tensor& z, const AttentionProjections& proj, std::span<const std::uint8_t> mask = {});

/// Standard MSA over the full sequence.
Tensor multi_head_self_attention(const Tensor& z, const AttentionProjections& proj);

/// MAA: CLS and patches attend to everything; part token p attends only to
/// the patches of Φ_p, found per head and per granularity set.
AlignedAttention auto_aligned_attention(const Tensor& z, const AttentionProjections& proj, const TokenLayout& layout,
                                        const ModelConfig& cfg, const AlignmentControl& ctl = {});

struct LayerParams {
  Tensor norm1_w, norm1_b;
  AttentionProjections attn;
  Tensor norm2_w, norm2_b;
  Tensor fc1_w, fc1_b;  // D×rD, rD
  Tensor fc2_w, fc2_b;  // rD×D, D
};

struct LayerResult {
  Tensor output;
  std::optional<LayerTrace> trace;
};

Tensor mlp_block(const Tensor& x, const LayerParams& params);

/// Pre-norm residual layer: z + Attn(LN(z)), then + MLP(LN(·)).
LayerResult transformer_layer(const Tensor& z, const LayerParams& params, AttentionMode mode,
                              const TokenLayout& layout, const ModelConfig& cfg, const AlignmentControl& ctl = {});

}  // namespace aaformer
