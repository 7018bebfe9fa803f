#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <set>

#include "aaformer/trainer.h"

using namespace aaformer;

namespace {

Config tiny() {
  Config cfg = desk_config();
  cfg.model.embed_dim = 16;
  cfg.model.heads = 2;
  cfg.model.layers = 1;
  cfg.data.num_identities = 4;
  cfg.data.train_per_identity = 3;
  cfg.data.query_per_identity = 1;
  cfg.data.gallery_per_identity = 1;
  cfg.train.ids_per_batch = 2;
  cfg.train.images_per_id = 2;
  cfg.train.steps_per_epoch = 2;
  cfg.train.seed = 5;
  return cfg;
}

bool params_equal(const ParameterStore& a, const ParameterStore& b) {
  const auto sa = snapshot_tensors(a), sb = snapshot_tensors(b);
  if (sa.size() != sb.size()) return false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i].name != sb[i].name || sa[i].values.size() != sb[i].values.size()) return false;
    if (std::memcmp(sa[i].values.data(), sb[i].values.data(), sa[i].values.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST(PkBatch, DistinctIdentitiesAndImages) {
  const auto cfg = tiny();
  const auto ds = generate_dataset(cfg.data, cfg.model);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto batch = sample_pk_batch(ds, 3, 2, rng);
    ASSERT_EQ(batch.size(), 6u);
    std::set<std::size_t> ids, positions(batch.begin(), batch.end());
    EXPECT_EQ(positions.size(), 6u);
    for (std::size_t b = 0; b < 3; ++b) {
      const auto id = ds.train()[batch[2 * b]].identity;
      EXPECT_EQ(ds.train()[batch[2 * b + 1]].identity, id);
      ids.insert(id);
    }
    EXPECT_EQ(ids.size(), 3u);
  }
  EXPECT_THROW(sample_pk_batch(ds, 5, 2, rng), ContractError);
  EXPECT_THROW(sample_pk_batch(ds, 2, 4, rng), ContractError);
}

TEST(Metrics, RowFormat) {
  EXPECT_EQ(metrics_header(), "step,lr,loss_total,loss_cls,loss_tri");
  StepLog log{3, 0.125, 1.0 / 3, 0.25, 0.0};
  EXPECT_EQ(format_metrics_row(log), "3,0.125,0.33333333333333331,0.25,0");
}

TEST(Trainer, SameSeedGivesBitIdenticalTrajectories) {
  Trainer a(tiny()), b(tiny());
  const auto la = a.run(3);
  const auto lb = b.run(3);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(la[i].step, i + 1);
    EXPECT_EQ(la[i].loss_total, lb[i].loss_total);
    EXPECT_EQ(la[i].lr, lb[i].lr);
    EXPECT_NEAR(la[i].loss_total, la[i].loss_cls + la[i].loss_tri, 1e-12);
  }
  EXPECT_TRUE(params_equal(a.model().params(), b.model().params()));
  auto other = tiny();
  other.train.seed = 6;
  Trainer c(other);
  EXPECT_NE(c.run(1)[0].loss_total, la[0].loss_total);
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  Trainer straight(tiny());
  const auto full = straight.run(4);

  Trainer first(tiny());
  first.run(2);
  const auto bytes = encode_checkpoint(first.checkpoint());
  auto resumed = Trainer::from_checkpoint(decode_checkpoint(bytes));
  EXPECT_EQ(resumed.steps_done(), 2u);
  EXPECT_EQ(resumed.epoch(), 1u);
  const auto rest = resumed.run(2);
  EXPECT_EQ(rest[0].step, 3u);
  EXPECT_EQ(rest[0].loss_total, full[2].loss_total);
  EXPECT_EQ(rest[1].loss_total, full[3].loss_total);
  EXPECT_EQ(rest[1].lr, full[3].lr);
  EXPECT_TRUE(params_equal(resumed.model().params(), straight.model().params()));
}

TEST(Trainer, LearningRateFollowsSchedule) {
  Trainer t(tiny());
  const auto logs = t.run(3);
  const LrSchedule s;
  EXPECT_DOUBLE_EQ(logs[0].lr, s.at(0.0));
  EXPECT_DOUBLE_EQ(logs[1].lr, s.at(0.5));
  EXPECT_DOUBLE_EQ(logs[2].lr, s.at(1.0));
}

TEST(Trainer, NonFiniteParameterAbortsWithTrace) {
  Trainer t(tiny());
  t.step();
  t.model().params().get("blocks.00.mlp.fc2.bias").mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    t.step();
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos);
    EXPECT_NE(e.diagnostic().find("layer 0"), std::string::npos);
    EXPECT_NE(e.diagnostic().find("|phi_"), std::string::npos);
  }
  EXPECT_EQ(t.steps_done(), 1u);
}

TEST(Trainer, TrainSetStatsAreWellFormed) {
  Trainer t(tiny());
  const auto s = train_set_stats(t.model(), t.dataset(), 0.3);
  EXPECT_GE(s.rank1, 0.0);
  EXPECT_LE(s.rank1, 1.0);
  EXPECT_GT(s.mAP, 0.0);
  EXPECT_GE(s.triplet_loss, 0.0);
}
