#include "aaformer/dataset.h"

#include <algorithm>
#include <cmath>

namespace aaformer {

namespace {

constexpr std::array<Rgb, 8> kPalette = {{
    {0.90, 0.10, 0.10},  // red
    {0.10, 0.70, 0.20},  // green
    {0.15, 0.25, 0.90},  // blue
    {0.95, 0.85, 0.10},  // yellow
    {0.85, 0.35, 0.85},  // magenta
    {0.10, 0.85, 0.85},  // cyan
    {0.95, 0.55, 0.10},  // orange
    {0.98, 0.98, 0.98},  // white
}};

constexpr std::size_t kCodeSpace = 8 * 8 * 8 * 8;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

void fill_rect(std::vector<double>& px, std::size_t H, std::size_t W, std::size_t C, long y0, long x0, long h,
               long w, const Rgb& color) {
  for (long y = std::max(0L, y0); y < std::min<long>(static_cast<long>(H), y0 + h); ++y)
    for (long x = std::max(0L, x0); x < std::min<long>(static_cast<long>(W), x0 + w); ++x)
      for (std::size_t c = 0; c < C; ++c) px[(static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)) * C + c] = color[c % 3];
}

void flip_horizontal(std::vector<double>& px, std::size_t H, std::size_t W, std::size_t C) {
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W / 2; ++x)
      for (std::size_t c = 0; c < C; ++c) std::swap(px[(y * W + x) * C + c], px[(y * W + (W - 1 - x)) * C + c]);
}

}  // namespace

SyntheticDataset::SyntheticDataset(DataConfig data, std::size_t image_h, std::size_t image_w, std::size_t channels)
    : data_(std::move(data)), h_(image_h), w_(image_w), c_(channels) {
  data_.validate();
  if (data_.num_identities > kCodeSpace) throw ConfigError("too many identities for the colour code space");
  if (h_ < 12 || w_ < 8 || c_ == 0) throw ConfigError("synthetic images need at least 12×8 pixels");
  by_identity_.resize(data_.num_identities);
  const std::size_t k = data_.train_per_identity, q = data_.query_per_identity, g = data_.gallery_per_identity;
  for (std::size_t id = 0; id < data_.num_identities; ++id) {
    for (std::size_t idx = 0; idx < k + q + g; ++idx) {
      Sample s{image(id, idx), id, idx, variation(id, idx)};
      if (idx < k) {
        by_identity_[id].push_back(train_.size());
        train_.push_back(std::move(s));
      } else if (idx < k + q) {
        query_.push_back(std::move(s));
      } else {
        gallery_.push_back(std::move(s));
      }
    }
  }
}

std::mt19937_64 SyntheticDataset::image_rng(std::size_t identity, std::size_t index, std::uint64_t stream) const {
  std::seed_seq seq{static_cast<std::uint32_t>(data_.seed), static_cast<std::uint32_t>(data_.seed >> 32),
                    static_cast<std::uint32_t>(identity), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

IdentityAppearance SyntheticDataset::appearance(std::size_t identity) const {
  if (identity >= data_.num_identities) throw ContractError("identity out of range");
  // Odd multiplier mod 8^4 is a bijection, so distinct identities get
  // distinct band codes.
  const std::uint64_t offset = splitmix(data_.seed) % kCodeSpace;
  std::uint64_t code = (identity * 2654435761ull + offset) % kCodeSpace;
  IdentityAppearance look;
  for (auto& band : look.bands) {
    band = kPalette[code % 8];
    code /= 8;
  }
  const std::uint64_t h = splitmix(data_.seed ^ splitmix(identity + 1));
  look.object_color = kPalette[h % 8];
  look.object_left = ((h >> 3) & 1u) != 0;
  look.object_level = (h >> 4) & 1u;
  return look;
}

ImageVariation SyntheticDataset::variation(std::size_t identity, std::size_t index) const {
  auto rng = image_rng(identity, index, 0);
  const int J = static_cast<int>(data_.max_jitter);
  std::uniform_int_distribution<int> jitter(-J, J);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ImageVariation v;
  v.dx = jitter(rng);
  v.dy = jitter(rng);
  v.flipped = unit(rng) < data_.flip_prob;
  v.background = 0.2 + 0.3 * unit(rng);
  v.occluded = unit(rng) < data_.occluder_prob;
  std::uniform_int_distribution<std::size_t> oh(h_ / 5, h_ / 3), ow(w_ / 3, w_ / 2);
  v.occ_h = oh(rng);
  v.occ_w = ow(rng);
  std::uniform_int_distribution<std::size_t> oy(0, h_ - v.occ_h), ox(0, w_ - v.occ_w);
  v.occ_y = oy(rng);
  v.occ_x = ox(rng);
  v.occ_value = unit(rng);
  return v;
}

Tensor SyntheticDataset::render_clean(const IdentityAppearance& look, const ImageVariation& var) const {
  const std::size_t H = h_, W = w_, C = c_;
  std::vector<double> px(H * W * C, var.background);
  const long top = static_cast<long>(H / 12) + var.dy;
  const long fig_h = static_cast<long>(H - 2 * (H / 12));
  const long left = static_cast<long>(W / 4) + var.dx;
  const long fig_w = static_cast<long>(W / 2);
  const long head_h = fig_h / 6;
  fill_rect(px, H, W, C, top, left + fig_w / 4, head_h, fig_w / 2, look.bands[0]);
  fill_rect(px, H, W, C, top + head_h, left, fig_h / 2 - head_h, fig_w, look.bands[1]);
  fill_rect(px, H, W, C, top + fig_h / 2, left, fig_h * 5 / 6 - fig_h / 2, fig_w, look.bands[2]);
  fill_rect(px, H, W, C, top + fig_h * 5 / 6, left, fig_h - fig_h * 5 / 6, fig_w, look.bands[3]);
  const long obj_w = static_cast<long>(W / 6), obj_h = static_cast<long>(H / 6);
  const long obj_x = look.object_left ? left - obj_w : left + fig_w;
  const long obj_y = top + (look.object_level == 0 ? fig_h / 4 : fig_h / 2);
  fill_rect(px, H, W, C, obj_y, obj_x, obj_h, obj_w, look.object_color);
  if (var.flipped) flip_horizontal(px, H, W, C);
  if (var.occluded) {
    const Rgb grey{var.occ_value, var.occ_value, var.occ_value};
    fill_rect(px, H, W, C, static_cast<long>(var.occ_y), static_cast<long>(var.occ_x), static_cast<long>(var.occ_h),
              static_cast<long>(var.occ_w), grey);
  }
  return Tensor::from({H, W, C}, std::move(px));
}

Tensor SyntheticDataset::image(std::size_t identity, std::size_t index) const {
  Tensor clean = render_clean(appearance(identity), variation(identity, index));
  if (data_.noise_std > 0.0) {
    auto rng = image_rng(identity, index, 1);
    std::normal_distribution<double> noise(0.0, data_.noise_std);
    for (double& v : clean.mutable_data()) v += noise(rng);
  }
  return clean;
}

const std::vector<Sample>& SyntheticDataset::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train_;
    case Split::kQuery: return query_;
    case Split::kGallery: return gallery_;
  }
  return train_;
}

SyntheticDataset generate_dataset(const DataConfig& data, const ModelConfig& model) {
  return SyntheticDataset(data, model.image_h, model.image_w, model.channels);
}

Tensor augment(const Tensor& image, std::mt19937_64& rng, double flip_prob, double erase_prob) {
  if (image.dim() != 3) throw DimensionError("augment expects an H×W×C image");
  const std::size_t H = image.shape()[0], W = image.shape()[1], C = image.shape()[2];
  std::vector<double> px(image.data().begin(), image.data().end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < flip_prob) flip_horizontal(px, H, W, C);
  if (unit(rng) < erase_prob) {
    // Random erasing: area in [2%, 30%] of the image, aspect ratio in [0.3, 3.3].
    const double area = (0.02 + 0.28 * unit(rng)) * static_cast<double>(H * W);
    const double aspect = std::exp(std::log(0.3) + (std::log(3.3) - std::log(0.3)) * unit(rng));
    const auto eh = std::clamp<std::size_t>(static_cast<std::size_t>(std::round(std::sqrt(area * aspect))), 1, H);
    const auto ew = std::clamp<std::size_t>(static_cast<std::size_t>(std::round(std::sqrt(area / aspect))), 1, W);
    const auto y0 = static_cast<std::size_t>(unit(rng) * static_cast<double>(H - eh + 1));
    const auto x0 = static_cast<std::size_t>(unit(rng) * static_cast<double>(W - ew + 1));
    const double value = unit(rng);
    fill_rect(px, H, W, C, static_cast<long>(std::min(y0, H - eh)), static_cast<long>(std::min(x0, W - ew)),
              static_cast<long>(eh), static_cast<long>(ew), Rgb{value, value, value});
  }
  return Tensor::from(image.shape(), std::move(px));
}

double mean_intensity(const Tensor& image) {
  double s = 0.0;
  for (double v : image.data()) s += v;
  return s / static_cast<double>(image.numel());
}

}  // namespace aaformer
