#include "aaformer/attention.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace aaformer {

TokenLayout TokenLayout::from_config(const ModelConfig& cfg) {
  TokenLayout layout;
  layout.num_patches = cfg.num_patches();
  layout.granularity = cfg.granularity;
  return layout;
}

std::size_t TokenLayout::num_parts() const {
  return std::accumulate(granularity.begin(), granularity.end(), std::size_t{0});
}

std::size_t TokenLayout::set_offset(std::size_t set) const {
  if (set >= granularity.size()) throw ContractError("granularity set index out of range");
  return std::accumulate(granularity.begin(), granularity.begin() + static_cast<std::ptrdiff_t>(set),
                         std::size_t{0});
}

const AlignmentTrace& LayerTrace::at(std::size_t head, std::size_t set) const {
  for (const auto& a : alignments) {
    if (a.head == head && a.set == set) return a;
  }
  throw ContractError("no alignment recorded for head " + std::to_string(head) + ", set " + std::to_string(set));
}

double LayerTrace::part_weight(std::size_t head, std::size_t part, std::size_t patch) const {
  return part_attention.at((head * num_parts + part) * num_patches + patch);
}

std::size_t LayerTrace::repair_count() const {
  std::size_t n = 0;
  for (const auto& a : alignments) n += a.repaired_parts.size();
  return n;
}

namespace {

void check_projections(const Tensor& z, const AttentionProjections& proj) {
  if (z.dim() != 2) throw DimensionError("attention input must be L×D");
  const std::size_t D = z.cols();
  for (const Tensor* w : {&proj.wq, &proj.wk, &proj.wv, &proj.wo}) {
    if (!w->defined() || w->shape() != Shape{D, D}) throw DimensionError("attention projections must be D×D");
  }
  if (proj.heads == 0 || D % proj.heads != 0) throw DimensionError("embed dim not divisible by heads");
  if (z.rows() == 0) throw ContractError("attention needs at least one token");
}

/// Moves the top-scoring patch into every empty part, taking only from parts
/// that keep at least one patch. Returns the repaired part indices.
std::vector<std::size_t> repair_empty_parts(ot::AssignmentMask& mask, const Tensor& score) {
  std::vector<std::size_t> repaired;
  auto counts = mask.counts();
  const std::size_t N = mask.num_patches();
  for (std::size_t p = 0; p < mask.num_parts; ++p) {
    if (counts[p] != 0) continue;
    std::size_t best = N;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < N; ++n) {
      if (counts[mask.part_of[n]] < 2) continue;
      const double s = score.at(p, n);
      if (best == N || s > best_score) {
        best = n;
        best_score = s;
      }
    }
    if (best == N) throw ContractError("cannot repair empty part: fewer patches than parts");
    --counts[mask.part_of[best]];
    mask.part_of[best] = p;
    counts[p] = 1;
    repaired.push_back(p);
  }
  return repaired;
}

/// Similarity of the set's part-token queries with all patch keys, per head.
Tensor head_similarity(const Tensor& q, const Tensor& k, const TokenLayout& layout, std::size_t head,
                       std::size_t head_dim, std::size_t offset, std::size_t parts) {
  const std::size_t D = q.cols();
  const std::size_t N = layout.num_patches;
  const auto Q = q.data();
  const auto K = k.data();
  std::vector<double> sim(parts * N);
  for (std::size_t p = 0; p < parts; ++p) {
    const double* qrow = Q.data() + layout.part_index(offset + p) * D + head * head_dim;
    for (std::size_t n = 0; n < N; ++n) {
      const double* krow = K.data() + layout.patch_index(n) * D + head * head_dim;
      double acc = 0.0;
      for (std::size_t j = 0; j < head_dim; ++j) acc += qrow[j] * krow[j];
      sim[p * N + n] = acc;
    }
  }
  return Tensor::from({parts, N}, std::move(sim));
}

AlignmentTrace align_set(const Tensor& q, const Tensor& k, const TokenLayout& layout, const ModelConfig& cfg,
                         const AlignmentControl& ctl, std::size_t head, std::size_t set, std::size_t head_dim) {
  AlignmentTrace t;
  t.head = head;
  t.set = set;
  t.part_offset = layout.set_offset(set);
  t.parts = layout.granularity[set];
  t.similarity = head_similarity(q, k, layout, head, head_dim, t.part_offset, t.parts);
  const std::size_t N = layout.num_patches;

  if (ctl.override_members) {
    t.members = ctl.override_members(head, set, t.parts, N);
    if (t.members.size() != t.parts) throw ContractError("override must return one subset per part");
    for (auto& m : t.members) {
      std::sort(m.begin(), m.end());
      m.erase(std::unique(m.begin(), m.end()), m.end());
      if (m.empty()) throw ContractError("override produced an empty subset");
      for (auto n : m) {
        if (n >= N) throw ContractError("override patch index out of range");
      }
    }
    return t;
  }
  if (ctl.frozen != nullptr) {
    t.mask = ctl.frozen->at(head, set).mask;
    if (t.mask.num_parts != t.parts || t.mask.num_patches() != N) {
      throw ContractError("frozen mask does not match the layout");
    }
    t.members = t.mask.members();
    return t;
  }

  switch (cfg.assignment) {
    case AssignmentMode::kOptimalTransport: {
      try {
        t.plan = ot::entropic_transport(t.similarity, cfg.epsilon, cfg.sinkhorn_iters);
      } catch (const ot::DegenerateSimilarityError&) {
        t.plan = ot::entropic_transport_log(t.similarity, cfg.epsilon, cfg.sinkhorn_iters);
        t.log_domain_fallback = true;
      }
      t.mask = cfg.rounding == RoundingMode::kBalanced ? ot::round_balanced(*t.plan) : ot::round_assignment(*t.plan);
      t.repaired_parts = repair_empty_parts(t.mask, t.plan->values);
      break;
    }
    case AssignmentMode::kNearestNeighbor:
      t.mask = ot::nearest_neighbor_assignment(t.similarity);
      t.repaired_parts = repair_empty_parts(t.mask, t.similarity);
      break;
    case AssignmentMode::kFixedStripes:
      t.mask = ot::stripe_assignment(cfg.grid_rows(), cfg.grid_cols(), t.parts);
      break;
  }
  t.members = t.mask.members();
  return t;
}

}  // namespace

Tensor attention_heads(const Tensor& z, const AttentionProjections& proj, std::span<const std::uint8_t> mask) {
  check_projections(z, proj);
  const Tensor q = matmul(z, proj.wq);
  const Tensor k = matmul(z, proj.wk);
  const Tensor v = matmul(z, proj.wv);
  const std::size_t d = proj.head_dim();
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Tensor> heads;
  heads.reserve(proj.heads);
  for (std::size_t h = 0; h < proj.heads; ++h) {
    const Tensor qh = slice_cols(q, h * d, d);
    const Tensor kh = slice_cols(k, h * d, d);
    const Tensor vh = slice_cols(v, h * d, d);
    const Tensor scores = scale(matmul_nt(qh, kh), inv_scale);
    const Tensor weights = mask.empty() ? softmax_rows(scores) : masked_softmax_rows(scores, mask);
    heads.push_back(matmul(weights, vh));
  }
  return concat_cols(heads);
}

Tensor multi_head_self_attention(const Tensor& z, const AttentionProjections& proj) {
  return matmul(attention_heads(z, proj), proj.wo);
}

AlignedAttention auto_aligned_attention(const Tensor& z, const AttentionProjections& proj, const TokenLayout& layout,
                                        const ModelConfig& cfg, const AlignmentControl& ctl) {
  check_projections(z, proj);
  const std::size_t L = layout.length();
  const std::size_t P = layout.num_parts();
  const std::size_t N = layout.num_patches;
  if (z.rows() != L) {
    throw DimensionError("sequence length " + std::to_string(z.rows()) + " does not match layout length " +
                         std::to_string(L));
  }
  if (P > 0 && N == 0) throw ContractError("part tokens need at least one patch");

  const Tensor q = matmul(z, proj.wq);
  const Tensor k = matmul(z, proj.wk);
  const Tensor v = matmul(z, proj.wv);
  const std::size_t d = proj.head_dim();
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d));

  AlignedAttention result;
  LayerTrace& trace = result.trace;
  trace.heads = proj.heads;
  trace.num_parts = P;
  trace.num_patches = N;
  trace.part_attention.assign(proj.heads * P * N, 0.0);

  std::vector<Tensor> heads;
  heads.reserve(proj.heads);
  std::vector<std::uint8_t> mask(L * L);
  for (std::size_t h = 0; h < proj.heads; ++h) {
    std::fill(mask.begin(), mask.end(), std::uint8_t{1});
    for (std::size_t s = 0; s < layout.granularity.size(); ++s) {
      AlignmentTrace a = align_set(q, k, layout, cfg, ctl, h, s, d);
      for (std::size_t p = 0; p < a.parts; ++p) {
        const std::size_t row = layout.part_index(a.part_offset + p);
        std::fill(mask.begin() + static_cast<std::ptrdiff_t>(row * L),
                  mask.begin() + static_cast<std::ptrdiff_t>((row + 1) * L), std::uint8_t{0});
        for (auto n : a.members[p]) mask[row * L + layout.patch_index(n)] = 1;
      }
      trace.alignments.push_back(std::move(a));
    }
    const Tensor qh = slice_cols(q, h * d, d);
    const Tensor kh = slice_cols(k, h * d, d);
    const Tensor vh = slice_cols(v, h * d, d);
    const Tensor weights = masked_softmax_rows(scale(matmul_nt(qh, kh), inv_scale), mask);
    const auto W = weights.data();
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t n = 0; n < N; ++n)
        trace.part_attention[(h * P + p) * N + n] = W[layout.part_index(p) * L + layout.patch_index(n)];
    heads.push_back(matmul(weights, vh));
  }
  result.pre_projection = concat_cols(heads);
  result.output = matmul(result.pre_projection, proj.wo);
  return result;
}

Tensor mlp_block(const Tensor& x, const LayerParams& params) {
  const Tensor hidden = gelu(add_bias(matmul(x, params.fc1_w), params.fc1_b));
  return add_bias(matmul(hidden, params.fc2_w), params.fc2_b);
}

LayerResult transformer_layer(const Tensor& z, const LayerParams& params, AttentionMode mode,
                              const TokenLayout& layout, const ModelConfig& cfg, const AlignmentControl& ctl) {
  LayerResult result;
  const Tensor normed = layer_norm(z, params.norm1_w, params.norm1_b, cfg.ln_eps);
  Tensor attended;
  if (mode == AttentionMode::kAutoAlignment) {
    auto aligned = auto_aligned_attention(normed, params.attn, layout, cfg, ctl);
    attended = aligned.output;
    result.trace = std::move(aligned.trace);
  } else {
    attended = multi_head_self_attention(normed, params.attn);
  }
  const Tensor mid = add(z, attended);
  result.output = add(mid, mlp_block(layer_norm(mid, params.norm2_w, params.norm2_b, cfg.ln_eps), params));
  return result;
}

}  // namespace aaformer
