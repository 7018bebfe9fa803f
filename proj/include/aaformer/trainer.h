#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "aaformer/checkpoint.h"
#include "aaformer/config.h"
#include "aaformer/dataset.h"
#include "aaformer/model.h"
#include "aaformer/objectives.h"
#include "aaformer/optimizer.h"

namespace aaformer {

/// Raised when a step produces a non-finite value. `diagnostic()` holds a
/// dump of the most recent layer traces.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, std::string diagnostic)
      : std::runtime_error(what), diagnostic_(std::move(diagnostic)) {}
  const std::string& diagnostic() const { return diagnostic_; }

 private:
  std::string diagnostic_;
};

struct StepLog {
  std::uint64_t step = 0;  // 1-based index of the finished step
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_cls = 0.0;
  double loss_tri = 0.0;
};

std::string metrics_header();
std::string format_metrics_row(const StepLog& log);

/// Human-readable assignment summary, one line per (head, set).
std::string dump_layer_trace(const LayerTrace& trace, std::size_t layer);

/// Positions into `dataset.train()` for a P×K batch: `ids` distinct
/// identities, `per_id` distinct images each, identity-major.
std::vector<std::size_t> sample_pk_batch(const SyntheticDataset& dataset, std::size_t ids, std::size_t per_id,
                                         std::mt19937_64& rng);

class Trainer {
 public:
  explicit Trainer(Config cfg);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;
  Trainer(Trainer&&) = default;
  Trainer& operator=(Trainer&&) = default;
  static Trainer from_checkpoint(const Checkpoint& ckpt);

  const Config& config() const { return cfg_; }
  const SyntheticDataset& dataset() const { return dataset_; }
  AAformer& model() { return model_; }
  const AAformer& model() const { return model_; }
  const ClassifierBank& classifier() const { return bank_; }
  const LrSchedule& schedule() const { return schedule_; }

  std::uint64_t steps_done() const { return step_; }
  std::uint64_t epoch() const { return step_ / cfg_.train.steps_per_epoch; }
  /// Learning rate the next step will use.
  double next_lr() const;

  StepLog step();
  std::vector<StepLog> run(std::size_t steps, const std::function<void(const StepLog&)>& on_step = {});

  Checkpoint checkpoint() const;
  /// Traces of the first image in the most recent forward pass.
  const std::vector<LayerTrace>& last_traces() const { return last_traces_; }

 private:
  Config cfg_;
  SyntheticDataset dataset_;
  AAformer model_;
  ClassifierBank bank_;
  LrSchedule schedule_;
  Adam adam_;
  std::mt19937_64 rng_;
  std::uint64_t step_ = 0;
  std::vector<LayerTrace> last_traces_;
};

/// Training-set retrieval without augmentation: leave-one-out rank-1 and the
/// batch-hard triplet loss over all training images at once.
struct TrainSetStats {
  double rank1 = 0.0;
  double mAP = 0.0;
  double triplet_loss = 0.0;
};

TrainSetStats train_set_stats(const AAformer& model, const SyntheticDataset& dataset, double margin);

}  // namespace aaformer
