#include <gtest/gtest.h>

#include <cstdio>
#include <cstring>
#include <fstream>

#include "aaformer/checkpoint.h"

using namespace aaformer;

namespace {

Checkpoint sample() {
  Checkpoint c;
  c.config = desk_config();
  c.config.model.epsilon = 0.1 + 0.2;
  c.tensors.push_back({"a.weight", {2, 3}, {1.0 / 3, -0.0, 1e-300, 5e300, -2.5, 0.1}});
  c.tensors.push_back({"b", {1}, {42.0}});
  c.optimizer.step = 17;
  c.optimizer.first_moment["a.weight"] = {1, 2, 3, 4, 5, 6};
  c.optimizer.second_moment["a.weight"] = {0.1, 0.2, 0.3, 0.4, 0.5, 1.0 / 7};
  c.rng_state = "123 456 789";
  c.epoch = 3;
  c.step = 40;
  return c;
}

void expect_equal(const Checkpoint& a, const Checkpoint& b) {
  EXPECT_EQ(config_entries(a.config), config_entries(b.config));
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    EXPECT_EQ(a.tensors[i].name, b.tensors[i].name);
    EXPECT_EQ(a.tensors[i].shape, b.tensors[i].shape);
    EXPECT_EQ(0, std::memcmp(a.tensors[i].values.data(), b.tensors[i].values.data(),
                             a.tensors[i].values.size() * sizeof(double)));
  }
  EXPECT_EQ(a.optimizer.step, b.optimizer.step);
  EXPECT_EQ(a.optimizer.first_moment, b.optimizer.first_moment);
  EXPECT_EQ(a.optimizer.second_moment, b.optimizer.second_moment);
  EXPECT_EQ(a.rng_state, b.rng_state);
  EXPECT_EQ(a.epoch, b.epoch);
  EXPECT_EQ(a.step, b.step);
}

}  // namespace

TEST(Fnv1a, ReferenceVectors) {
  EXPECT_EQ(fnv1a64({}), 0xcbf29ce484222325ull);
  const std::uint8_t a[] = {'a'};
  EXPECT_EQ(fnv1a64(a), 0xaf63dc4c8601ec8cull);
  const std::uint8_t foobar[] = {'f', 'o', 'o', 'b', 'a', 'r'};
  EXPECT_EQ(fnv1a64(foobar), 0x85944171f73967e8ull);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto c = sample();
  const auto bytes = encode_checkpoint(c);
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "AAFK");
  const auto back = decode_checkpoint(bytes);
  expect_equal(c, back);
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, FileRoundTrip) {
  const std::string path = ::testing::TempDir() + "aaformer_ckpt.aafk";
  save_checkpoint(sample(), path);
  expect_equal(sample(), load_checkpoint(path));
  std::remove(path.c_str());
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
}

TEST(Checkpoint, AnySingleByteCorruptionIsDetected) {
  const auto bytes = encode_checkpoint(sample());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    auto bad = bytes;
    bad[i] ^= 0x5a;
    EXPECT_THROW(decode_checkpoint(bad), CheckpointError) << "byte " << i;
  }
}

TEST(Checkpoint, PayloadCorruptionIsIntegrityError) {
  auto bytes = encode_checkpoint(sample());
  bytes[bytes.size() - 12] ^= 1;  // inside the PROG payload
  EXPECT_THROW(decode_checkpoint(bytes), CheckpointIntegrityError);
}

TEST(Checkpoint, TruncationIsIntegrityError) {
  const auto bytes = encode_checkpoint(sample());
  for (std::size_t n : {std::size_t{0}, std::size_t{3}, std::size_t{8}, std::size_t{20}, bytes.size() / 2,
                        bytes.size() - 1}) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n));
    EXPECT_THROW(decode_checkpoint(cut), CheckpointIntegrityError) << n;
  }
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_THROW(decode_checkpoint(longer), CheckpointIntegrityError);
}

TEST(Checkpoint, VersionMismatch) {
  auto bytes = encode_checkpoint(sample());
  bytes[4] = 2;
  EXPECT_THROW(decode_checkpoint(bytes), CheckpointVersionError);
}

TEST(Checkpoint, RestoreTensorsChecksNamesAndShapes) {
  ParameterStore store;
  store.add("a.weight", Tensor::zeros({2, 3}));
  store.add("b", Tensor::zeros({1}));
  const auto c = sample();
  restore_tensors(store, c.tensors);
  EXPECT_EQ(store.get("b").data()[0], 42.0);
  EXPECT_EQ(store.get("a.weight").data()[3], 5e300);
  const auto snap = snapshot_tensors(store);
  ASSERT_EQ(snap.size(), 2u);
  EXPECT_EQ(snap[0].values, c.tensors[0].values);

  ParameterStore wrong_shape;
  wrong_shape.add("a.weight", Tensor::zeros({3, 2}));
  wrong_shape.add("b", Tensor::zeros({1}));
  EXPECT_THROW(restore_tensors(wrong_shape, c.tensors), CheckpointError);
  ParameterStore missing;
  missing.add("a.weight", Tensor::zeros({2, 3}));
  EXPECT_THROW(restore_tensors(missing, c.tensors), CheckpointError);
}
