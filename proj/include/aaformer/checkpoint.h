#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "aaformer/config.h"
#include "aaformer/optimizer.h"
#include "aaformer/tensor.h"

namespace aaformer {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Truncation, checksum mismatch, or malformed section.
class CheckpointIntegrityError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// Little-endian file: "AAFK", u32 version, then the sections CONF (config
/// JSON), TENS (tensor table), OPTM (Adam moments), RNGS (engine state text),
/// PROG (epoch, step). Each section is tag[4], u64 length, payload, u64
/// FNV-1a checksum of the payload.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  Config config;
  std::vector<NamedTensor> tensors;
  AdamState optimizer;
  std::string rng_state;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::vector<NamedTensor> snapshot_tensors(const ParameterStore& params);
/// Copies values into existing parameters; names and shapes must match exactly.
void restore_tensors(ParameterStore& params, const std::vector<NamedTensor>& tensors);

}  // namespace aaformer
