#include "aaformer/config.h"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

namespace aaformer {

std::string to_string(AssignmentMode mode) {
  switch (mode) {
    case AssignmentMode::kOptimalTransport: return "ot";
    case AssignmentMode::kNearestNeighbor: return "nn";
    case AssignmentMode::kFixedStripes: return "stripes";
  }
  return "?";
}

std::string to_string(RoundingMode mode) {
  return mode == RoundingMode::kArgmax ? "argmax" : "balanced";
}

std::string to_string(AttentionMode mode) {
  return mode == AttentionMode::kSelfAttention ? "msa" : "maa";
}

AssignmentMode parse_assignment_mode(const std::string& text) {
  if (text == "ot") return AssignmentMode::kOptimalTransport;
  if (text == "nn") return AssignmentMode::kNearestNeighbor;
  if (text == "stripes") return AssignmentMode::kFixedStripes;
  throw ConfigError("assignment must be one of ot|nn|stripes, got '" + text + "'");
}

RoundingMode parse_rounding_mode(const std::string& text) {
  if (text == "argmax") return RoundingMode::kArgmax;
  if (text == "balanced") return RoundingMode::kBalanced;
  throw ConfigError("rounding must be argmax|balanced, got '" + text + "'");
}

AttentionMode parse_attention_mode(const std::string& text) {
  if (text == "msa") return AttentionMode::kSelfAttention;
  if (text == "maa") return AttentionMode::kAutoAlignment;
  throw ConfigError("attention must be msa|maa, got '" + text + "'");
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

std::size_t ModelConfig::num_parts() const {
  std::size_t p = 0;
  for (auto g : granularity) p += g;
  return p;
}

std::size_t ModelConfig::grid_rows() const { return (image_h - patch_size) / stride + 1; }
std::size_t ModelConfig::grid_cols() const { return (image_w - patch_size) / stride + 1; }

void ModelConfig::validate() const {
  if (patch_size == 0 || stride == 0) throw ConfigError("patch_size and stride must be positive");
  if (stride > patch_size) throw ConfigError("stride must not exceed patch_size");
  if (image_h < patch_size || image_w < patch_size) throw ConfigError("image smaller than one patch");
  if ((image_h - patch_size) % stride != 0 || (image_w - patch_size) % stride != 0) {
    throw ConfigError("image geometry is not covered exactly by patch_size/stride");
  }
  if (channels == 0) throw ConfigError("channels must be positive");
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw ConfigError("embed_dim must be a positive multiple of heads");
  }
  for (auto g : granularity) {
    if (g == 0) throw ConfigError("granularity sets must be nonempty");
    if (g > num_patches()) throw ConfigError("granularity set larger than the number of patches");
  }
  if (attention == AttentionMode::kAutoAlignment && granularity.empty()) {
    throw ConfigError("auto-alignment needs at least one granularity set");
  }
  if (epsilon <= 0.0) throw ConfigError("epsilon must be positive");
  if (sinkhorn_iters == 0) throw ConfigError("sinkhorn_iters must be at least 1");
  if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("label_smoothing must be in [0,1)");
  if (triplet_margin < 0.0) throw ConfigError("triplet_margin must be nonnegative");
  if (ln_eps <= 0.0) throw ConfigError("ln_eps must be positive");
  if (assignment == AssignmentMode::kFixedStripes) {
    for (auto g : granularity) {
      if (g > grid_rows()) throw ConfigError("stripes mode needs at most one part per patch row");
    }
  }
}

void DataConfig::validate() const {
  if (num_identities < 2) throw ConfigError("num_identities must be at least 2");
  if (train_per_identity < 2) throw ConfigError("train_per_identity must be at least 2");
  if (noise_std < 0.0) throw ConfigError("noise_std must be nonnegative");
  for (double p : {flip_prob, occluder_prob}) {
    if (p < 0.0 || p > 1.0) throw ConfigError("probabilities must lie in [0,1]");
  }
}

void TrainConfig::validate() const {
  if (ids_per_batch < 2) throw ConfigError("ids_per_batch must be at least 2");
  if (images_per_id < 2) throw ConfigError("images_per_id must be at least 2");
  if (steps_per_epoch == 0) throw ConfigError("steps_per_epoch must be positive");
  if (base_lr <= 0.0 || warmup_start_lr < 0.0) throw ConfigError("learning rates must be positive");
  if (warmup_epochs < 0.0) throw ConfigError("warmup_epochs must be nonnegative");
  if (decay_factor <= 0.0) throw ConfigError("decay_factor must be positive");
  for (double p : {aug_flip_prob, aug_erase_prob}) {
    if (p < 0.0 || p > 1.0) throw ConfigError("probabilities must lie in [0,1]");
  }
}

void Config::validate() const {
  model.validate();
  data.validate();
  train.validate();
  if (train.ids_per_batch > data.num_identities) throw ConfigError("ids_per_batch exceeds num_identities");
  if (train.images_per_id > data.train_per_identity) {
    throw ConfigError("images_per_id exceeds train_per_identity");
  }
}

// ---------------------------------------------------------------------------
// Key table
// ---------------------------------------------------------------------------

namespace {

enum class Kind { kSize, kU64, kDouble, kBool, kWord, kSizeList };

struct Field {
  const char* key;
  Kind kind;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto t = trim(text);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError("invalid value for '" + key + "': '" + text + "'");
  }
  return value;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

bool parse_bool(const std::string& key, const std::string& text) {
  const auto t = trim(text);
  if (t == "true" || t == "1") return true;
  if (t == "false" || t == "0") return false;
  throw ConfigError("invalid boolean for '" + key + "': '" + text + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(parse_number<std::size_t>(key, item));
  }
  return out;
}

std::string format_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

#define AA_SIZE(name, member)                                                                 \
  Field{name, Kind::kSize, [](const Config& c) { return std::to_string(c.member); },          \
        [](Config& c, const std::string& v) { c.member = parse_number<std::size_t>(name, v); }}
#define AA_U64(name, member)                                                                  \
  Field{name, Kind::kU64, [](const Config& c) { return std::to_string(c.member); },           \
        [](Config& c, const std::string& v) { c.member = parse_number<std::uint64_t>(name, v); }}
#define AA_DOUBLE(name, member)                                                               \
  Field{name, Kind::kDouble, [](const Config& c) { return format_double(c.member); },         \
        [](Config& c, const std::string& v) { c.member = parse_number<double>(name, v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      AA_SIZE("image_h", model.image_h),
      AA_SIZE("image_w", model.image_w),
      AA_SIZE("channels", model.channels),
      AA_SIZE("patch_size", model.patch_size),
      AA_SIZE("stride", model.stride),
      AA_SIZE("embed_dim", model.embed_dim),
      AA_SIZE("heads", model.heads),
      AA_SIZE("layers", model.layers),
      Field{"granularity", Kind::kSizeList, [](const Config& c) { return format_list(c.model.granularity); },
            [](Config& c, const std::string& v) { c.model.granularity = parse_list("granularity", v); }},
      AA_DOUBLE("epsilon", model.epsilon),
      AA_SIZE("sinkhorn_iters", model.sinkhorn_iters),
      AA_SIZE("mlp_ratio", model.mlp_ratio),
      AA_DOUBLE("label_smoothing", model.label_smoothing),
      AA_DOUBLE("triplet_margin", model.triplet_margin),
      AA_DOUBLE("ln_eps", model.ln_eps),
      AA_DOUBLE("init_std", model.init_std),
      Field{"part_pos_embed", Kind::kBool,
            [](const Config& c) { return std::string(c.model.part_pos_embed ? "true" : "false"); },
            [](Config& c, const std::string& v) { c.model.part_pos_embed = parse_bool("part_pos_embed", v); }},
      Field{"attention", Kind::kWord, [](const Config& c) { return to_string(c.model.attention); },
            [](Config& c, const std::string& v) { c.model.attention = parse_attention_mode(trim(v)); }},
      Field{"assignment", Kind::kWord, [](const Config& c) { return to_string(c.model.assignment); },
            [](Config& c, const std::string& v) { c.model.assignment = parse_assignment_mode(trim(v)); }},
      Field{"rounding", Kind::kWord, [](const Config& c) { return to_string(c.model.rounding); },
            [](Config& c, const std::string& v) { c.model.rounding = parse_rounding_mode(trim(v)); }},

      AA_U64("data_seed", data.seed),
      AA_SIZE("num_identities", data.num_identities),
      AA_SIZE("train_per_identity", data.train_per_identity),
      AA_SIZE("query_per_identity", data.query_per_identity),
      AA_SIZE("gallery_per_identity", data.gallery_per_identity),
      AA_DOUBLE("noise_std", data.noise_std),
      AA_SIZE("max_jitter", data.max_jitter),
      AA_DOUBLE("flip_prob", data.flip_prob),
      AA_DOUBLE("occluder_prob", data.occluder_prob),

      AA_U64("seed", train.seed),
      AA_SIZE("ids_per_batch", train.ids_per_batch),
      AA_SIZE("images_per_id", train.images_per_id),
      AA_SIZE("epochs", train.epochs),
      AA_SIZE("steps_per_epoch", train.steps_per_epoch),
      AA_DOUBLE("base_lr", train.base_lr),
      AA_DOUBLE("warmup_start_lr", train.warmup_start_lr),
      AA_DOUBLE("warmup_epochs", train.warmup_epochs),
      Field{"decay_epochs", Kind::kSizeList, [](const Config& c) { return format_list(c.train.decay_epochs); },
            [](Config& c, const std::string& v) { c.train.decay_epochs = parse_list("decay_epochs", v); }},
      AA_DOUBLE("decay_factor", train.decay_factor),
      AA_DOUBLE("adam_beta1", train.adam_beta1),
      AA_DOUBLE("adam_beta2", train.adam_beta2),
      AA_DOUBLE("adam_eps", train.adam_eps),
      AA_DOUBLE("aug_flip_prob", train.aug_flip_prob),
      AA_DOUBLE("aug_erase_prob", train.aug_erase_prob),
      AA_SIZE("checkpoint_every", train.checkpoint_every),
  };
  return table;
}

#undef AA_SIZE
#undef AA_U64
#undef AA_DOUBLE

const Field& find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (key == f.key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

Config parse_config(const std::string& text) {
  Config cfg = desk_config();
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    find_field(key).set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::vector<std::pair<std::string, std::string>> config_entries(const Config& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(cfg));
  return out;
}

std::string format_config(const Config& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

std::string config_to_json(const Config& cfg) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& f : fields()) {
    const auto text = f.get(cfg);
    switch (f.kind) {
      case Kind::kSize: j[f.key] = parse_number<std::size_t>(f.key, text); break;
      case Kind::kU64: j[f.key] = parse_number<std::uint64_t>(f.key, text); break;
      case Kind::kDouble: j[f.key] = parse_number<double>(f.key, text); break;
      case Kind::kBool: j[f.key] = parse_bool(f.key, text); break;
      case Kind::kWord: j[f.key] = text; break;
      case Kind::kSizeList: j[f.key] = parse_list(f.key, text); break;
    }
  }
  return j.dump(2);
}

Config config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config JSON must be an object");
  Config cfg = desk_config();
  for (const auto& [key, value] : j.items()) {
    const auto& f = find_field(key);
    std::string text;
    switch (f.kind) {
      case Kind::kDouble: text = format_double(value.get<double>()); break;
      case Kind::kSize:
      case Kind::kU64: text = std::to_string(value.get<std::uint64_t>()); break;
      case Kind::kBool: text = value.get<bool>() ? "true" : "false"; break;
      case Kind::kWord: text = value.get<std::string>(); break;
      case Kind::kSizeList: text = format_list(value.get<std::vector<std::size_t>>()); break;
    }
    f.set(cfg, text);
  }
  cfg.validate();
  return cfg;
}

Config desk_config() {
  Config cfg;
  cfg.model.image_h = 48;
  cfg.model.image_w = 32;
  cfg.model.patch_size = 8;
  cfg.model.stride = 8;
  cfg.model.embed_dim = 64;
  cfg.model.heads = 4;
  cfg.model.layers = 4;
  cfg.model.granularity = {2, 3};
  return cfg;
}

}  // namespace aaformer
