#include "aaformer/checkpoint.h"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace aaformer {

namespace {

constexpr std::array<char, 4> kMagic{'A', 'A', 'F', 'K'};
constexpr std::array<std::array<char, 4>, 5> kSections{{
    {'C', 'O', 'N', 'F'},
    {'T', 'E', 'N', 'S'},
    {'O', 'P', 'T', 'M'},
    {'R', 'N', 'G', 'S'},
    {'P', 'R', 'O', 'G'},
}};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes, std::string what = "checkpoint")
      : bytes_(bytes), what_(std::move(what)) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw CheckpointIntegrityError(what_ + ": truncated data");
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u64();
    auto b = take(checked(n, 1));
    return std::string(b.begin(), b.end());
  }
  std::vector<double> doubles() {
    const auto n = u64();
    checked(n, 8);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  /// Rejects counts that cannot fit in the remaining bytes.
  std::size_t checked(std::uint64_t count, std::size_t unit) const {
    if (count > (bytes_.size() - pos_) / unit) throw CheckpointIntegrityError(what_ + ": length field exceeds data");
    return static_cast<std::size_t>(count);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string what_;
};

void write_section(Writer& out, const std::array<char, 4>& tag, const std::vector<std::uint8_t>& payload) {
  out.raw(tag.data(), 4);
  out.u64(payload.size());
  out.raw(payload.data(), payload.size());
  out.u64(fnv1a64(payload));
}

std::string tag_string(const std::array<char, 4>& tag) { return std::string(tag.begin(), tag.end()); }

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer out;
  out.raw(kMagic.data(), 4);
  out.u32(Checkpoint::kVersion);

  Writer conf;
  const auto json = config_to_json(ckpt.config);
  conf.raw(json.data(), json.size());
  write_section(out, kSections[0], conf.bytes());

  Writer tens;
  tens.u64(ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    tens.str(t.name);
    tens.u64(t.shape.size());
    for (auto d : t.shape) tens.u64(d);
    tens.doubles(t.values);
  }
  write_section(out, kSections[1], tens.bytes());

  Writer optm;
  optm.u64(ckpt.optimizer.step);
  optm.u64(ckpt.optimizer.first_moment.size());
  for (const auto& [name, m] : ckpt.optimizer.first_moment) {
    optm.str(name);
    optm.doubles(m);
    const auto it = ckpt.optimizer.second_moment.find(name);
    optm.doubles(it == ckpt.optimizer.second_moment.end() ? std::vector<double>{} : it->second);
  }
  write_section(out, kSections[2], optm.bytes());

  Writer rngs;
  rngs.raw(ckpt.rng_state.data(), ckpt.rng_state.size());
  write_section(out, kSections[3], rngs.bytes());

  Writer prog;
  prog.u64(ckpt.epoch);
  prog.u64(ckpt.step);
  write_section(out, kSections[4], prog.bytes());

  return std::move(out.bytes());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  const auto magic = in.take(4);
  if (std::memcmp(magic.data(), kMagic.data(), 4) != 0) throw CheckpointIntegrityError("not a checkpoint: bad magic");
  const auto version = in.u32();
  if (version != Checkpoint::kVersion) {
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                                 std::to_string(Checkpoint::kVersion) + ")");
  }

  std::array<std::span<const std::uint8_t>, kSections.size()> payloads;
  for (std::size_t s = 0; s < kSections.size(); ++s) {
    const auto tag = in.take(4);
    if (std::memcmp(tag.data(), kSections[s].data(), 4) != 0) {
      throw CheckpointIntegrityError("expected section " + tag_string(kSections[s]));
    }
    const auto len = in.u64();
    payloads[s] = in.take(in.checked(len, 1));
    if (in.u64() != fnv1a64(payloads[s])) {
      throw CheckpointIntegrityError("checksum mismatch in section " + tag_string(kSections[s]));
    }
  }
  if (!in.done()) throw CheckpointIntegrityError("trailing bytes after last section");

  Checkpoint ckpt;
  try {
    ckpt.config = config_from_json(std::string(payloads[0].begin(), payloads[0].end()));
  } catch (const ConfigError& e) {
    throw CheckpointIntegrityError(std::string("invalid config section: ") + e.what());
  }

  Reader tens(payloads[1], "tensor table");
  const auto count = tens.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = tens.str();
    const auto ndim = tens.checked(tens.u64(), 8);
    for (std::size_t d = 0; d < ndim; ++d) t.shape.push_back(static_cast<std::size_t>(tens.u64()));
    t.values = tens.doubles();
    if (shape_numel(t.shape) != t.values.size()) throw CheckpointIntegrityError("tensor " + t.name + ": shape mismatch");
    ckpt.tensors.push_back(std::move(t));
  }
  if (!tens.done()) throw CheckpointIntegrityError("tensor table: trailing bytes");

  Reader optm(payloads[2], "optimizer state");
  ckpt.optimizer.step = optm.u64();
  const auto entries = optm.u64();
  for (std::uint64_t i = 0; i < entries; ++i) {
    auto name = optm.str();
    ckpt.optimizer.first_moment[name] = optm.doubles();
    ckpt.optimizer.second_moment[name] = optm.doubles();
  }
  if (!optm.done()) throw CheckpointIntegrityError("optimizer state: trailing bytes");

  ckpt.rng_state.assign(payloads[3].begin(), payloads[3].end());

  Reader prog(payloads[4], "progress");
  ckpt.epoch = prog.u64();
  ckpt.step = prog.u64();
  if (!prog.done()) throw CheckpointIntegrityError("progress: trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::vector<NamedTensor> snapshot_tensors(const ParameterStore& params) {
  std::vector<NamedTensor> out;
  for (const auto& [name, t] : params) out.push_back({name, t.shape(), {t.data().begin(), t.data().end()}});
  return out;
}

void restore_tensors(ParameterStore& params, const std::vector<NamedTensor>& tensors) {
  if (tensors.size() != params.size()) throw CheckpointError("checkpoint tensor count does not match the model");
  for (const auto& t : tensors) {
    if (!params.contains(t.name)) throw CheckpointError("checkpoint has unknown tensor " + t.name);
    auto& p = params.get(t.name);
    if (p.shape() != t.shape) throw CheckpointError("checkpoint tensor " + t.name + " has the wrong shape");
    std::copy(t.values.begin(), t.values.end(), p.mutable_data().begin());
  }
}

}  // namespace aaformer
