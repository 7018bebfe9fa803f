#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "aaformer/model.h"
#include "test_util.h"

using namespace aaformer;
using testutil::random_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.image_h = 64;
  cfg.image_w = 48;
  cfg.patch_size = 16;
  cfg.stride = 16;
  cfg.embed_dim = 32;
  cfg.heads = 4;
  cfg.layers = 2;
  cfg.granularity = {2, 3};
  return cfg;
}

ModelConfig grad_config() {
  ModelConfig cfg;
  cfg.image_h = 32;
  cfg.image_w = 24;
  cfg.patch_size = 8;
  cfg.stride = 8;
  cfg.embed_dim = 16;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.granularity = {2, 3};
  return cfg;
}

Tensor image_for(const ModelConfig& cfg, std::mt19937_64& rng) {
  return random_tensor({cfg.image_h, cfg.image_w, cfg.channels}, rng, 0.5);
}

}  // namespace

TEST(Patchify, FullSizeGeometry) {
  ModelConfig cfg;
  EXPECT_EQ(cfg.num_patches(), 384u);
  std::mt19937_64 rng(1);
  EXPECT_EQ(patchify(image_for(cfg, rng), cfg).shape(), (Shape{384, 768}));
}

TEST(Patchify, WholeImagePatch) {
  ModelConfig cfg = small_config();
  cfg.image_h = cfg.image_w = cfg.patch_size = cfg.stride = 4;
  cfg.granularity = {1};
  std::mt19937_64 rng(2);
  const auto img = image_for(cfg, rng);
  const auto p = patchify(img, cfg);
  ASSERT_EQ(p.shape(), (Shape{1, 48}));
  for (std::size_t i = 0; i < 48; ++i) EXPECT_EQ(p.at(i), img.at(i));
}

TEST(Patchify, PreservesContentAndOrder) {
  ModelConfig cfg = small_config();
  cfg.image_h = cfg.image_w = 32;
  std::mt19937_64 rng(3);
  const auto img = image_for(cfg, rng);
  const auto p = patchify(img, cfg);
  ASSERT_EQ(p.shape(), (Shape{4, 768}));
  std::vector<double> a(img.data().begin(), img.data().end()), b(p.data().begin(), p.data().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  // Patch 1 is the top-right block; its first pixel is image (0, 16).
  EXPECT_EQ(p.at(1, 0), img.at((0 * 32 + 16) * 3));
  // Patch 2 starts at image (16, 0); entry 5 is (y=0, x=1, channel 2).
  EXPECT_EQ(p.at(2, 5), img.at((16 * 32 + 1) * 3 + 2));
}

TEST(Patchify, OverlappingStride) {
  ModelConfig cfg = small_config();
  cfg.image_h = 40;
  cfg.image_w = 28;
  cfg.stride = 12;
  EXPECT_EQ(cfg.num_patches(), 3u * 2u);
  std::mt19937_64 rng(4);
  const auto img = image_for(cfg, rng);
  const auto p = patchify(img, cfg);
  EXPECT_EQ(p.at(1, 0), img.at((0 * 28 + 12) * 3));
}

TEST(Patchify, BadGeometryIsConfigError) {
  ModelConfig cfg = small_config();
  cfg.image_h = 70;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.heads = 5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.granularity = {};
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Model, OutputShapes) {
  const auto cfg = small_config();
  AAformer model(cfg, 5);
  EXPECT_EQ(model.layout().length(), 18u);
  std::mt19937_64 rng(5);
  const auto out = model.forward(image_for(cfg, rng));
  EXPECT_EQ(out.cls.shape(), (Shape{32}));
  EXPECT_EQ(out.part_tokens.shape(), (Shape{5, 32}));
  EXPECT_EQ(out.traces.size(), 2u);
  EXPECT_EQ(extract_descriptor(out).shape(), (Shape{192}));
}

TEST(Model, ParameterNamesAndInit) {
  AAformer model(small_config(), 6);
  const auto& ps = model.params();
  for (const char* n : {"patch_embed.weight", "patch_embed.bias", "cls_token", "part_tokens", "pos_embed",
                        "blocks.00.attn.wq", "blocks.01.mlp.fc2.bias", "norm.weight", "norm.bias"}) {
    EXPECT_TRUE(ps.contains(n)) << n;
  }
  EXPECT_EQ(ps.get("pos_embed").shape(), (Shape{13, 32}));
  for (double v : ps.get("blocks.00.attn.wk").data()) EXPECT_LE(std::abs(v), 0.04);
  for (double v : ps.get("blocks.00.norm1.weight").data()) EXPECT_EQ(v, 1.0);
  for (double v : ps.get("blocks.00.mlp.fc1.bias").data()) EXPECT_EQ(v, 0.0);
}

TEST(Model, SameSeedSameParameters) {
  AAformer a(small_config(), 7), b(small_config(), 7), c(small_config(), 8);
  const auto& wa = a.params().get("blocks.01.attn.wo").data();
  const auto& wb = b.params().get("blocks.01.attn.wo").data();
  const auto& wc = c.params().get("blocks.01.attn.wo").data();
  EXPECT_TRUE(std::equal(wa.begin(), wa.end(), wb.begin()));
  EXPECT_FALSE(std::equal(wa.begin(), wa.end(), wc.begin()));
}

TEST(Model, IdenticalImagesGiveIdenticalOutputs) {
  const auto cfg = small_config();
  AAformer model(cfg, 9);
  std::mt19937_64 rng(9);
  const auto img = image_for(cfg, rng);
  const auto outs = model.forward_batch({img, img.clone()});
  const auto a = descriptor_values(outs[0]);
  const auto b = descriptor_values(outs[1]);
  EXPECT_EQ(a, b);
}

TEST(Model, ZeroBranchesLeaveNormalisedClsToken) {
  const auto cfg = small_config();
  AAformer model(cfg, 10);
  model.zero_residual_branches();
  std::mt19937_64 rng(10);
  const auto out = model.forward(image_for(cfg, rng));
  const auto tok = model.params().get("cls_token").data();
  const auto pos = model.params().get("pos_embed").data();
  std::vector<double> x(32);
  double m = 0, v = 0;
  for (std::size_t i = 0; i < 32; ++i) m += (x[i] = tok[i] + pos[i]) / 32;
  for (std::size_t i = 0; i < 32; ++i) v += (x[i] - m) * (x[i] - m) / 32;
  for (std::size_t i = 0; i < 32; ++i) EXPECT_NEAR(out.cls.at(i), (x[i] - m) / std::sqrt(v + cfg.ln_eps), 1e-12);
}

TEST(Model, PartTokensAreSharedPrototypesWithAdaptiveOutputs) {
  const auto cfg = small_config();
  AAformer model(cfg, 11);
  std::mt19937_64 rng(11);
  const auto a = model.forward(image_for(cfg, rng));
  const auto b = model.forward(image_for(cfg, rng));
  bool differs = false;
  for (std::size_t i = 0; i < a.part_tokens.numel(); ++i) differs |= a.part_tokens.at(i) != b.part_tokens.at(i);
  EXPECT_TRUE(differs);
  EXPECT_TRUE(model.params().get("part_tokens").is_leaf());
}

TEST(Model, EveryLayerPartitionsPatchesPerSet) {
  const auto cfg = small_config();
  AAformer model(cfg, 12);
  std::mt19937_64 rng(12);
  const auto out = model.forward(image_for(cfg, rng));
  for (const auto& t : out.traces) {
    EXPECT_EQ(t.alignments.size(), cfg.heads * 2);
    for (const auto& a : t.alignments) {
      EXPECT_TRUE(a.mask.is_partition());
      EXPECT_EQ(a.mask.num_patches(), 12u);
    }
  }
}

TEST(Model, SelfAttentionModeHasNoTraces) {
  auto cfg = small_config();
  cfg.attention = AttentionMode::kSelfAttention;
  AAformer model(cfg, 13);
  std::mt19937_64 rng(13);
  EXPECT_TRUE(model.forward(image_for(cfg, rng)).traces.empty());
}

TEST(Model, PartPositionEmbeddingOption) {
  auto cfg = small_config();
  cfg.part_pos_embed = true;
  AAformer model(cfg, 14);
  EXPECT_EQ(model.params().get("pos_embed").shape(), (Shape{18, 32}));
}

TEST(Model, AssignmentModesShareShapes) {
  std::mt19937_64 rng(15);
  const auto img = image_for(small_config(), rng);
  for (auto mode : {AssignmentMode::kOptimalTransport, AssignmentMode::kNearestNeighbor, AssignmentMode::kFixedStripes}) {
    auto cfg = small_config();
    cfg.assignment = mode;
    AAformer model(cfg, 15);
    const auto out = model.forward(img);
    EXPECT_EQ(out.part_tokens.shape(), (Shape{5, 32}));
    EXPECT_EQ(model.params().size(), AAformer(small_config(), 15).params().size());
  }
}

TEST(Descriptor, NoPartsIsCls) {
  ModelOutput out;
  out.cls = Tensor::from({3}, {1, 2, 3});
  out.part_tokens = Tensor::zeros({0, 3});
  EXPECT_EQ(descriptor_values(out), (std::vector<double>{1, 2, 3}));
}

TEST(Model, EndToEndGradientMatchesFiniteDifferences) {
  const auto cfg = grad_config();
  AAformer model(cfg, 16);
  std::mt19937_64 rng(16);
  // Larger weights than the init so gradients are not vanishingly small.
  for (auto& [name, p] : model.params()) {
    if (name.find("norm") == std::string::npos) {
      for (auto& v : p.mutable_data()) v *= 10.0;
    }
  }
  const auto img = image_for(cfg, rng);
  const auto base = model.forward(img);
  ForwardOptions opts;
  opts.frozen = &base.traces;
  auto loss = [&] { return testutil::probe(extract_descriptor(model.forward(img, opts))); };
  model.params().zero_grad();
  backward(loss(), model.params());

  std::size_t checked = 0;
  double worst = 0.0;
  for (auto& [name, p] : model.params()) {
    std::uniform_int_distribution<std::size_t> pick(0, p.numel() - 1);
    for (int s = 0; s < 4; ++s) {
      const std::size_t i = pick(rng);
      const double x0 = p.data()[i];
      const double h = 1e-6;
      p.mutable_data()[i] = x0 + h;
      const double up = loss().item();
      p.mutable_data()[i] = x0 - h;
      const double down = loss().item();
      p.mutable_data()[i] = x0;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p.grad()[i];
      worst = std::max(worst, std::abs(analytic - numeric) / std::max({1e-7, std::abs(analytic), std::abs(numeric)}));
      ++checked;
    }
  }
  EXPECT_GE(checked, 60u);
  EXPECT_LT(worst, 1e-4);
}
