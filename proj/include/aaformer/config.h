#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace aaformer {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// How patches are grouped onto part tokens inside an MAA layer.
enum class AssignmentMode { kOptimalTransport, kNearestNeighbor, kFixedStripes };

/// How a soft transport plan becomes a hard mask.
enum class RoundingMode { kArgmax, kBalanced };

/// MSA layers let every token attend everywhere; MAA layers restrict part tokens.
enum class AttentionMode { kSelfAttention, kAutoAlignment };

std::string to_string(AssignmentMode mode);
std::string to_string(RoundingMode mode);
std::string to_string(AttentionMode mode);
AssignmentMode parse_assignment_mode(const std::string& text);
RoundingMode parse_rounding_mode(const std::string& text);
AttentionMode parse_attention_mode(const std::string& text);

struct ModelConfig {
  std::size_t image_h = 384;
  std::size_t image_w = 256;
  std::size_t channels = 3;
  std::size_t patch_size = 16;
  std::size_t stride = 16;
  std::size_t embed_dim = 768;
  std::size_t heads = 12;
  std::size_t layers = 12;
  std::vector<std::size_t> granularity{2, 3};
  double epsilon = 0.05;
  std::size_t sinkhorn_iters = 3;
  std::size_t mlp_ratio = 4;
  double label_smoothing = 0.1;
  double triplet_margin = 0.3;
  double ln_eps = 1e-6;
  double init_std = 0.02;
  bool part_pos_embed = false;
  AttentionMode attention = AttentionMode::kAutoAlignment;
  AssignmentMode assignment = AssignmentMode::kOptimalTransport;
  RoundingMode rounding = RoundingMode::kArgmax;

  std::size_t num_parts() const;
  std::size_t grid_rows() const;
  std::size_t grid_cols() const;
  std::size_t num_patches() const { return grid_rows() * grid_cols(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t head_dim() const { return embed_dim / heads; }
  std::size_t seq_len() const { return 1 + num_parts() + num_patches(); }

  /// Throws ConfigError when the geometry or head split is inconsistent.
  void validate() const;
};

/// Synthetic benchmark layout.
struct DataConfig {
  std::uint64_t seed = 7;
  std::size_t num_identities = 8;
  std::size_t train_per_identity = 8;
  std::size_t query_per_identity = 2;
  std::size_t gallery_per_identity = 4;
  double noise_std = 0.04;
  std::size_t max_jitter = 2;
  double flip_prob = 0.5;
  double occluder_prob = 0.2;

  void validate() const;
};

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t ids_per_batch = 4;
  std::size_t images_per_id = 4;
  std::size_t epochs = 24;
  std::size_t steps_per_epoch = 12;
  double base_lr = 3.5e-4;
  double warmup_start_lr = 3.5e-5;
  double warmup_epochs = 2.0;
  std::vector<std::size_t> decay_epochs{8, 14};
  double decay_factor = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double aug_flip_prob = 0.5;
  double aug_erase_prob = 0.5;
  std::size_t checkpoint_every = 0;

  std::size_t total_steps() const { return epochs * steps_per_epoch; }
  void validate() const;
};

struct Config {
  ModelConfig model;
  DataConfig data;
  TrainConfig train;

  void validate() const;
};

/// Parses line-oriented `key = value` text. `#` starts a comment. Unknown
/// keys and malformed values are ConfigErrors.
Config parse_config(const std::string& text);
Config load_config(const std::string& path);

/// All keys with their current values, in declaration order.
std::vector<std::pair<std::string, std::string>> config_entries(const Config& cfg);
std::string format_config(const Config& cfg);

std::string config_to_json(const Config& cfg);
Config config_from_json(const std::string& text);

/// Reduced-size defaults used by tests, acceptance runs and the CLI.
Config desk_config();

}  // namespace aaformer
