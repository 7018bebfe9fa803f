#include "aaformer/trainer.h"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "aaformer/evaluation.h"

namespace aaformer {

namespace {

constexpr std::uint64_t kTrainStream = 0x7a11;
constexpr std::uint64_t kClassifierStream = 0xc1a5;

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

ClassifierBank make_bank(AAformer& model, std::size_t classes, std::uint64_t seed) {
  auto rng = seeded(seed, kClassifierStream);
  const auto& m = model.config();
  return ClassifierBank::create(model.params(), m.num_parts() + 1, m.embed_dim, classes, rng, m.init_std);
}

std::string dump_traces(const std::vector<LayerTrace>& traces) {
  if (traces.empty()) return "no layer traces recorded\n";
  return dump_layer_trace(traces.back(), traces.size() - 1);
}

}  // namespace

std::string metrics_header() { return "step,lr,loss_total,loss_cls,loss_tri"; }

std::string format_metrics_row(const StepLog& log) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.17g,%.17g", static_cast<unsigned long long>(log.step), log.lr,
                log.loss_total, log.loss_cls, log.loss_tri);
  return buf;
}

std::string dump_layer_trace(const LayerTrace& trace, std::size_t layer) {
  std::ostringstream os;
  os << "layer " << layer << ": heads=" << trace.heads << " parts=" << trace.num_parts
     << " patches=" << trace.num_patches << "\n";
  for (const auto& a : trace.alignments) {
    os << "  head " << a.head << " set " << a.set << ":";
    const auto counts = a.mask.counts();
    for (std::size_t p = 0; p < counts.size(); ++p) os << " |phi_" << a.part_offset + p << "|=" << counts[p];
    if (a.plan) os << " residual=" << a.plan->residual;
    if (!a.repaired_parts.empty()) os << " repaired=" << a.repaired_parts.size();
    if (a.log_domain_fallback) os << " log-domain";
    double lo = 0.0, hi = 0.0;
    bool finite = true;
    const auto sim = a.similarity.data();
    for (std::size_t i = 0; i < sim.size(); ++i) {
      if (!std::isfinite(sim[i])) finite = false;
      if (i == 0 || sim[i] < lo) lo = sim[i];
      if (i == 0 || sim[i] > hi) hi = sim[i];
    }
    os << " sim=[" << lo << ", " << hi << "]" << (finite ? "" : " NON-FINITE") << "\n";
  }
  return os.str();
}

std::vector<std::size_t> sample_pk_batch(const SyntheticDataset& dataset, std::size_t ids, std::size_t per_id,
                                         std::mt19937_64& rng) {
  const std::size_t total_ids = dataset.config().num_identities;
  if (ids > total_ids) throw ContractError("batch asks for more identities than the dataset has");
  std::vector<std::size_t> identities(total_ids);
  for (std::size_t i = 0; i < total_ids; ++i) identities[i] = i;
  std::vector<std::size_t> batch;
  for (std::size_t k = 0; k < ids; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, total_ids - 1);
    std::swap(identities[k], identities[pick(rng)]);
    auto pool = dataset.train_indices(identities[k]);
    if (per_id > pool.size()) throw ContractError("batch asks for more images per identity than available");
    for (std::size_t j = 0; j < per_id; ++j) {
      std::uniform_int_distribution<std::size_t> img(j, pool.size() - 1);
      std::swap(pool[j], pool[img(rng)]);
      batch.push_back(pool[j]);
    }
  }
  return batch;
}

Trainer::Trainer(Config cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      dataset_(generate_dataset(cfg_.data, cfg_.model)),
      model_(cfg_.model, cfg_.train.seed),
      bank_(make_bank(model_, cfg_.data.num_identities, cfg_.train.seed)),
      schedule_(LrSchedule::from_config(cfg_.train)),
      adam_(cfg_.train.adam_beta1, cfg_.train.adam_beta2, cfg_.train.adam_eps),
      rng_(seeded(cfg_.train.seed, kTrainStream)) {}

Trainer Trainer::from_checkpoint(const Checkpoint& ckpt) {
  Trainer t(ckpt.config);
  restore_tensors(t.model_.params(), ckpt.tensors);
  t.adam_.set_state(ckpt.optimizer);
  std::istringstream is(ckpt.rng_state);
  is >> t.rng_;
  if (!is) throw CheckpointError("checkpoint RNG state is unreadable");
  t.step_ = ckpt.step;
  return t;
}

double Trainer::next_lr() const {
  return schedule_.at(static_cast<double>(step_) / static_cast<double>(cfg_.train.steps_per_epoch));
}

StepLog Trainer::step() {
  const auto& tc = cfg_.train;
  const auto batch = sample_pk_batch(dataset_, tc.ids_per_batch, tc.images_per_id, rng_);
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  for (auto i : batch) {
    const auto& s = dataset_.train()[i];
    images.push_back(augment(s.pixels, rng_, tc.aug_flip_prob, tc.aug_erase_prob));
    labels.push_back(s.identity);
  }

  StepLog log;
  log.step = step_ + 1;
  log.lr = next_lr();
  try {
    auto outputs = model_.forward_batch(images);
    last_traces_ = outputs.front().traces;
    auto losses = loss_total(outputs, labels, bank_, cfg_.model.label_smoothing, cfg_.model.triplet_margin);
    log.loss_total = losses.total.item();
    log.loss_cls = losses.cls.item();
    log.loss_tri = losses.tri.item();
    if (!std::isfinite(log.loss_total)) throw NumericError("non-finite loss");
    model_.params().zero_grad();
    backward(losses.total, model_.params());
    for (const auto& [name, p] : model_.params()) {
      if (!p.has_grad()) continue;
      for (double g : p.grad()) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + name);
      }
    }
  } catch (const NumericError& e) {
    throw TrainingAborted("training aborted at step " + std::to_string(log.step) + ": " + e.what(),
                          dump_traces(last_traces_));
  }
  adam_.step(model_.params(), log.lr);
  ++step_;
  return log;
}

std::vector<StepLog> Trainer::run(std::size_t steps, const std::function<void(const StepLog&)>& on_step) {
  std::vector<StepLog> logs;
  logs.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    logs.push_back(step());
    if (on_step) on_step(logs.back());
  }
  return logs;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.config = cfg_;
  ckpt.tensors = snapshot_tensors(model_.params());
  ckpt.optimizer = adam_.state();
  std::ostringstream os;
  os << rng_;
  ckpt.rng_state = os.str();
  ckpt.epoch = epoch();
  ckpt.step = step_;
  return ckpt;
}

TrainSetStats train_set_stats(const AAformer& model, const SyntheticDataset& dataset, double margin) {
  const auto& train = dataset.train();
  std::vector<ModelOutput> outputs;
  std::vector<std::vector<double>> descriptors;
  outputs.reserve(train.size());
  for (const auto& s : train) {
    auto out = model.forward(s.pixels);
    ModelOutput light;
    light.cls = out.cls.detach();
    if (out.part_tokens.defined()) light.part_tokens = out.part_tokens.detach();
    descriptors.push_back(descriptor_values(light));
    outputs.push_back(std::move(light));
  }
  const auto labels = labels_of(train);
  TrainSetStats stats;
  const auto report = evaluate_descriptors(descriptors, labels, descriptors, labels, true);
  stats.rank1 = report.rank1;
  stats.mAP = report.mAP;
  stats.triplet_loss = loss_triplet(TripletBatch::from_outputs(outputs, labels), margin).loss.item();
  return stats;
}

}  // namespace aaformer
