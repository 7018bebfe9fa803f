#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "aaformer/config.h"
#include "aaformer/tensor.h"

namespace aaformer {

using Rgb = std::array<double, 3>;

/// Fixed appearance of one synthetic identity.
struct IdentityAppearance {
  std::array<Rgb, 4> bands;   // head, torso, legs, feet
  Rgb object_color;           // carried object
  bool object_left = false;   // side of the body
  std::size_t object_level = 0;  // 0 = torso height, 1 = hip height
};

/// Per-image nuisance parameters drawn from the image's own RNG stream.
struct ImageVariation {
  int dx = 0;
  int dy = 0;
  bool flipped = false;
  double background = 0.0;
  bool occluded = false;
  std::size_t occ_y = 0, occ_x = 0, occ_h = 0, occ_w = 0;
  double occ_value = 0.0;
};

struct Sample {
  Tensor pixels;  // H×W×C
  std::size_t identity = 0;
  std::size_t index = 0;
  ImageVariation variation;
};

enum class Split { kTrain, kQuery, kGallery };

/// Deterministic procedurally coloured "people". Every image is a pure
/// function of (seed, identity, image index); splits use disjoint indices.
class SyntheticDataset {
 public:
  SyntheticDataset(DataConfig data, std::size_t image_h, std::size_t image_w, std::size_t channels = 3);

  const DataConfig& config() const { return data_; }
  std::size_t image_h() const { return h_; }
  std::size_t image_w() const { return w_; }
  std::size_t channels() const { return c_; }

  IdentityAppearance appearance(std::size_t identity) const;
  ImageVariation variation(std::size_t identity, std::size_t index) const;
  /// Renders without noise from explicit parameters.
  Tensor render_clean(const IdentityAppearance& look, const ImageVariation& var) const;
  Tensor image(std::size_t identity, std::size_t index) const;

  const std::vector<Sample>& split(Split s) const;
  const std::vector<Sample>& train() const { return train_; }
  const std::vector<Sample>& query() const { return query_; }
  const std::vector<Sample>& gallery() const { return gallery_; }
  /// Positions of an identity's images inside train().
  const std::vector<std::size_t>& train_indices(std::size_t identity) const { return by_identity_[identity]; }

 private:
  std::mt19937_64 image_rng(std::size_t identity, std::size_t index, std::uint64_t stream) const;

  DataConfig data_;
  std::size_t h_, w_, c_;
  std::vector<Sample> train_, query_, gallery_;
  std::vector<std::vector<std::size_t>> by_identity_;
};

SyntheticDataset generate_dataset(const DataConfig& data, const ModelConfig& model);

/// Training-time flip and random erasing, drawn from `rng`.
Tensor augment(const Tensor& image, std::mt19937_64& rng, double flip_prob, double erase_prob);

double mean_intensity(const Tensor& image);

}  // namespace aaformer
