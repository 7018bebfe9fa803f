#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

#include "aaformer/config.h"

using namespace aaformer;

TEST(Config, DefaultsMatchReferenceSetup) {
  const Config cfg;
  EXPECT_EQ(cfg.model.num_patches(), 384u);
  EXPECT_EQ(cfg.model.num_parts(), 5u);
  EXPECT_EQ(cfg.model.head_dim(), 64u);
  EXPECT_EQ(cfg.model.seq_len(), 390u);
  EXPECT_DOUBLE_EQ(cfg.model.epsilon, 0.05);
  EXPECT_EQ(cfg.model.sinkhorn_iters, 3u);
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_NO_THROW(desk_config().validate());
}

TEST(Config, ParsesKeysCommentsAndWhitespace) {
  const auto cfg = parse_config(
      "# comment line\n"
      "  epsilon = 0.1   # trailing\n"
      "granularity=1, 4\n"
      "\n"
      "assignment = nn\n"
      "part_pos_embed = true\n"
      "seed = 42\n"
      "data_seed = 9\n");
  EXPECT_DOUBLE_EQ(cfg.model.epsilon, 0.1);
  EXPECT_EQ(cfg.model.granularity, (std::vector<std::size_t>{1, 4}));
  EXPECT_EQ(cfg.model.assignment, AssignmentMode::kNearestNeighbor);
  EXPECT_TRUE(cfg.model.part_pos_embed);
  EXPECT_EQ(cfg.train.seed, 42u);
  EXPECT_EQ(cfg.data.seed, 9u);
  // Unspecified keys keep the desk defaults.
  EXPECT_EQ(cfg.model.embed_dim, desk_config().model.embed_dim);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config("epsilonn = 0.1\n"), ConfigError);
  EXPECT_THROW(parse_config("epsilon = abc\n"), ConfigError);
  EXPECT_THROW(parse_config("heads = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("heads = 3.5\n"), ConfigError);
  EXPECT_THROW(parse_config("part_pos_embed = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("assignment = greedy\n"), ConfigError);
  EXPECT_THROW(parse_config("just a line\n"), ConfigError);
}

TEST(Config, ValidationErrors) {
  EXPECT_THROW(parse_config("epsilon = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("sinkhorn_iters = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("heads = 5\n"), ConfigError);
  EXPECT_THROW(parse_config("image_h = 50\n"), ConfigError);
  EXPECT_THROW(parse_config("label_smoothing = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("ids_per_batch = 100\n"), ConfigError);
  EXPECT_THROW(parse_config("granularity = 0\n"), ConfigError);
  EXPECT_NO_THROW(parse_config("attention = msa\ngranularity =\n"));
}

TEST(Config, TextRoundTrip) {
  auto cfg = desk_config();
  cfg.model.epsilon = 0.1 + 0.2;
  cfg.train.base_lr = 1.0 / 3.0;
  cfg.model.rounding = RoundingMode::kBalanced;
  const auto back = parse_config(format_config(cfg));
  EXPECT_EQ(format_config(back), format_config(cfg));
  EXPECT_EQ(back.model.epsilon, cfg.model.epsilon);
  EXPECT_EQ(back.train.base_lr, cfg.train.base_lr);
}

TEST(Config, JsonRoundTrip) {
  auto cfg = desk_config();
  cfg.model.assignment = AssignmentMode::kFixedStripes;
  cfg.train.decay_epochs = {3, 5, 11};
  cfg.data.noise_std = 0.123456789012345;
  const auto back = config_from_json(config_to_json(cfg));
  EXPECT_EQ(config_entries(back), config_entries(cfg));
  EXPECT_THROW(config_from_json("{\"nope\": 1}"), ConfigError);
  EXPECT_THROW(config_from_json("[1,2]"), ConfigError);
  EXPECT_THROW(config_from_json("{bad"), ConfigError);
}

TEST(Config, LoadFromFile) {
  const std::string path = ::testing::TempDir() + "aaformer_cfg.txt";
  {
    std::ofstream out(path);
    out << "layers = 2\n";
  }
  EXPECT_EQ(load_config(path).model.layers, 2u);
  std::remove(path.c_str());
  EXPECT_THROW(load_config(path), ConfigError);
}

TEST(Config, ModeNamesRoundTrip) {
  for (auto m : {AssignmentMode::kOptimalTransport, AssignmentMode::kNearestNeighbor, AssignmentMode::kFixedStripes})
    EXPECT_EQ(parse_assignment_mode(to_string(m)), m);
  for (auto m : {RoundingMode::kArgmax, RoundingMode::kBalanced}) EXPECT_EQ(parse_rounding_mode(to_string(m)), m);
  for (auto m : {AttentionMode::kSelfAttention, AttentionMode::kAutoAlignment})
    EXPECT_EQ(parse_attention_mode(to_string(m)), m);
}
