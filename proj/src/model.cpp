#include "aaformer/model.h"

#include <cstdio>

namespace aaformer {

namespace {

std::string block_name(std::size_t layer, const char* leaf) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "blocks.%02zu.%s", layer, leaf);
  return buf;
}

}  // namespace

Tensor patchify(const Tensor& image, const ModelConfig& cfg) {
  cfg.validate();
  if (image.shape() != Shape{cfg.image_h, cfg.image_w, cfg.channels}) {
    throw DimensionError("image shape " + shape_string(image.shape()) + " does not match config");
  }
  const std::size_t rows = cfg.grid_rows(), cols = cfg.grid_cols();
  const std::size_t I = cfg.patch_size, C = cfg.channels, W = cfg.image_w;
  const auto px = image.data();
  std::vector<double> out;
  out.reserve(rows * cols * cfg.patch_dim());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      for (std::size_t y = 0; y < I; ++y) {
        const std::size_t iy = r * cfg.stride + y;
        for (std::size_t x = 0; x < I; ++x) {
          const std::size_t ix = c * cfg.stride + x;
          for (std::size_t ch = 0; ch < C; ++ch) out.push_back(px[(iy * W + ix) * C + ch]);
        }
      }
    }
  }
  return Tensor::from({rows * cols, cfg.patch_dim()}, std::move(out));
}

void truncated_normal_fill(std::span<double> values, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : values) {
    double x;
    do {
      x = normal(rng);
    } while (x < -2.0 || x > 2.0);
    v = x * std;
  }
}

AAformer::AAformer(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  layout_ = TokenLayout::from_config(cfg_);
  std::mt19937_64 rng(seed);
  const std::size_t D = cfg_.embed_dim;
  const std::size_t H = D * cfg_.mlp_ratio;
  const std::size_t P = cfg_.num_parts();
  const std::size_t N = cfg_.num_patches();

  auto random = [&](const std::string& name, Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    truncated_normal_fill(t.mutable_data(), cfg_.init_std, rng);
    params_.add(name, t);
  };
  auto constant = [&](const std::string& name, Shape shape, double value) {
    params_.add(name, Tensor::full(std::move(shape), value));
  };

  random("patch_embed.weight", {cfg_.patch_dim(), D});
  constant("patch_embed.bias", {D}, 0.0);
  random("cls_token", {1, D});
  if (P > 0) random("part_tokens", {P, D});
  random("pos_embed", {1 + N + (cfg_.part_pos_embed ? P : 0), D});
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    constant(block_name(l, "norm1.weight"), {D}, 1.0);
    constant(block_name(l, "norm1.bias"), {D}, 0.0);
    random(block_name(l, "attn.wq"), {D, D});
    random(block_name(l, "attn.wk"), {D, D});
    random(block_name(l, "attn.wv"), {D, D});
    random(block_name(l, "attn.wo"), {D, D});
    constant(block_name(l, "norm2.weight"), {D}, 1.0);
    constant(block_name(l, "norm2.bias"), {D}, 0.0);
    random(block_name(l, "mlp.fc1.weight"), {D, H});
    constant(block_name(l, "mlp.fc1.bias"), {H}, 0.0);
    random(block_name(l, "mlp.fc2.weight"), {H, D});
    constant(block_name(l, "mlp.fc2.bias"), {D}, 0.0);
  }
  constant("norm.weight", {D}, 1.0);
  constant("norm.bias", {D}, 0.0);
}

LayerParams AAformer::layer_params(std::size_t layer) const {
  if (layer >= cfg_.layers) throw ContractError("layer index out of range");
  LayerParams p;
  p.norm1_w = params_.get(block_name(layer, "norm1.weight"));
  p.norm1_b = params_.get(block_name(layer, "norm1.bias"));
  p.attn.wq = params_.get(block_name(layer, "attn.wq"));
  p.attn.wk = params_.get(block_name(layer, "attn.wk"));
  p.attn.wv = params_.get(block_name(layer, "attn.wv"));
  p.attn.wo = params_.get(block_name(layer, "attn.wo"));
  p.attn.heads = cfg_.heads;
  p.norm2_w = params_.get(block_name(layer, "norm2.weight"));
  p.norm2_b = params_.get(block_name(layer, "norm2.bias"));
  p.fc1_w = params_.get(block_name(layer, "mlp.fc1.weight"));
  p.fc1_b = params_.get(block_name(layer, "mlp.fc1.bias"));
  p.fc2_w = params_.get(block_name(layer, "mlp.fc2.weight"));
  p.fc2_b = params_.get(block_name(layer, "mlp.fc2.bias"));
  return p;
}

ModelOutput AAformer::forward(const Tensor& image, const ForwardOptions& opts) const {
  const std::size_t D = cfg_.embed_dim;
  const std::size_t P = cfg_.num_parts();
  const std::size_t N = cfg_.num_patches();
  if (opts.frozen != nullptr && opts.frozen->size() != cfg_.layers) {
    throw ContractError("frozen traces must cover every layer");
  }

  const Tensor patches = patchify(image, cfg_);
  const Tensor embedded =
      add_bias(matmul(patches, params_.get("patch_embed.weight")), params_.get("patch_embed.bias"));
  const Tensor& pos = params_.get("pos_embed");

  std::vector<Tensor> rows;
  rows.push_back(add(params_.get("cls_token"), slice_rows(pos, 0, 1)));
  std::size_t next_pos = 1;
  if (P > 0) {
    const Tensor& parts = params_.get("part_tokens");
    if (cfg_.part_pos_embed) {
      rows.push_back(add(parts, slice_rows(pos, next_pos, P)));
      next_pos += P;
    } else {
      rows.push_back(parts);
    }
  }
  rows.push_back(add(embedded, slice_rows(pos, next_pos, N)));
  Tensor z = concat_rows(rows);

  ModelOutput out;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    AlignmentControl ctl;
    ctl.override_members = opts.override_members;
    if (opts.frozen != nullptr) ctl.frozen = &(*opts.frozen)[l];
    auto layer = transformer_layer(z, layer_params(l), cfg_.attention, layout_, cfg_, ctl);
    z = layer.output;
    if (layer.trace) out.traces.push_back(std::move(*layer.trace));
  }
  z = layer_norm(z, params_.get("norm.weight"), params_.get("norm.bias"), cfg_.ln_eps);
  out.cls = reshape(slice_rows(z, 0, 1), {D});
  out.part_tokens = slice_rows(z, 1, P);
  return out;
}

std::vector<ModelOutput> AAformer::forward_batch(const std::vector<Tensor>& images,
                                                 const std::vector<const std::vector<LayerTrace>*>& frozen) const {
  if (!frozen.empty() && frozen.size() != images.size()) throw ContractError("one frozen trace set per image");
  std::vector<ModelOutput> outs;
  outs.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    ForwardOptions opts;
    if (!frozen.empty()) opts.frozen = frozen[i];
    outs.push_back(forward(images[i], opts));
  }
  return outs;
}

void AAformer::zero_residual_branches() {
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    for (const char* leaf : {"attn.wq", "attn.wk", "attn.wv", "attn.wo", "mlp.fc1.weight", "mlp.fc1.bias",
                             "mlp.fc2.weight", "mlp.fc2.bias"}) {
      auto values = params_.get(block_name(l, leaf)).mutable_data();
      std::fill(values.begin(), values.end(), 0.0);
    }
  }
}

Tensor extract_descriptor(const ModelOutput& out) {
  const std::size_t D = out.cls.numel();
  std::vector<Tensor> rows{reshape(out.cls, {1, D})};
  if (out.part_tokens.defined() && out.part_tokens.numel() > 0) rows.push_back(out.part_tokens);
  const Tensor stacked = concat_rows(rows);
  return reshape(stacked, {stacked.numel()});
}

std::vector<double> descriptor_values(const ModelOutput& out) {
  std::vector<double> v(out.cls.data().begin(), out.cls.data().end());
  if (out.part_tokens.defined()) v.insert(v.end(), out.part_tokens.data().begin(), out.part_tokens.data().end());
  return v;
}

}  // namespace aaformer
