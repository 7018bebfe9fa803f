// Command-line front end: train, eval, export-maps, bench-sinkhorn.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "aaformer/bench.h"
#include "aaformer/checkpoint.h"
#include "aaformer/config.h"
#include "aaformer/evaluation.h"
#include "aaformer/export_maps.h"
#include "aaformer/trainer.h"

namespace fs = std::filesystem;
using namespace aaformer;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string assignment;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value config file (defaults to the desk config)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "training seed override");
  cmd->add_option("--checkpoint", c.checkpoint, "checkpoint path");
  cmd->add_option("--assignment", c.assignment, "patch-to-part assignment")
      ->check(CLI::IsMember({"ot", "nn", "stripes"}));
  cmd->add_option("--out", c.out, "output path");
}

Config base_config(const Common& c) {
  Config cfg = c.config_path.empty() ? desk_config() : load_config(c.config_path);
  if (c.seed) cfg.train.seed = *c.seed;
  if (!c.assignment.empty()) cfg.model.assignment = parse_assignment_mode(c.assignment);
  cfg.validate();
  return cfg;
}

/// Model from a checkpoint, with assignment overridable at inference time.
AAformer load_model(const Common& c, Config& cfg) {
  if (c.checkpoint.empty()) throw CLI::ValidationError("--checkpoint", "required for this command");
  const auto ckpt = load_checkpoint(c.checkpoint);
  cfg = ckpt.config;
  if (!c.assignment.empty()) cfg.model.assignment = parse_assignment_mode(c.assignment);
  AAformer model(cfg.model, cfg.train.seed);
  std::vector<NamedTensor> backbone;
  for (const auto& t : ckpt.tensors) {
    if (model.params().contains(t.name)) backbone.push_back(t);
  }
  restore_tensors(model.params(), backbone);
  return model;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

int run_train(const Common& c, std::optional<std::size_t> steps) {
  const fs::path out_dir = c.out.empty() ? fs::path("run") : fs::path(c.out);
  fs::create_directories(out_dir);
  Trainer trainer = [&] {
    if (!c.checkpoint.empty() && fs::exists(c.checkpoint)) {
      auto ckpt = load_checkpoint(c.checkpoint);
      std::cerr << "resuming from " << c.checkpoint << " at step " << ckpt.step << "\n";
      return Trainer::from_checkpoint(ckpt);
    }
    return Trainer(base_config(c));
  }();
  const auto& tc = trainer.config().train;
  const std::uint64_t target = steps ? trainer.steps_done() + *steps : tc.total_steps();
  const auto ckpt_path = c.checkpoint.empty() ? (out_dir / "checkpoint.aafk").string() : c.checkpoint;

  const auto metrics_path = out_dir / "metrics.csv";
  const bool fresh = trainer.steps_done() == 0 || !fs::exists(metrics_path);
  std::ofstream metrics(metrics_path, fresh ? std::ios::trunc : std::ios::app);
  if (fresh) metrics << metrics_header() << "\n";
  write_text((out_dir / "config.txt").string(), format_config(trainer.config()));

  try {
    while (trainer.steps_done() < target) {
      const auto log = trainer.step();
      metrics << format_metrics_row(log) << "\n";
      if (tc.checkpoint_every > 0 && log.step % tc.checkpoint_every == 0) {
        save_checkpoint(trainer.checkpoint(), ckpt_path);
      }
      if (log.step % tc.steps_per_epoch == 0) {
        std::fprintf(stderr, "epoch %llu step %llu lr %.3g loss %.5f (cls %.5f, tri %.5f)\n",
                     static_cast<unsigned long long>(trainer.epoch()), static_cast<unsigned long long>(log.step),
                     log.lr, log.loss_total, log.loss_cls, log.loss_tri);
      }
    }
  } catch (const TrainingAborted& e) {
    const auto dump = out_dir / "abort_trace.txt";
    write_text(dump.string(), e.diagnostic());
    std::cerr << e.what() << "\n" << e.diagnostic() << "trace written to " << dump.string() << "\n";
    return 2;
  }
  save_checkpoint(trainer.checkpoint(), ckpt_path);
  const auto report = evaluate(trainer.model(), trainer.dataset().query(), trainer.dataset().gallery());
  write_text((out_dir / "eval.csv").string(), format_eval_csv(report));
  std::fprintf(stderr, "saved %s; held-out rank-1 %.4f mAP %.4f\n", ckpt_path.c_str(), report.rank1, report.mAP);
  return 0;
}

int run_eval(const Common& c, bool on_train) {
  Config cfg;
  const auto model = load_model(c, cfg);
  const auto dataset = generate_dataset(cfg.data, cfg.model);
  EvalReport report;
  if (on_train) {
    const auto d = compute_descriptors(model, dataset.train());
    const auto labels = labels_of(dataset.train());
    report = evaluate_descriptors(d, labels, d, labels, true);
  } else {
    report = evaluate(model, dataset.query(), dataset.gallery());
  }
  write_text(c.out, format_eval_csv(report));
  if (!report.excluded_queries.empty()) {
    std::cerr << report.excluded_queries.size() << " queries had no positive in the gallery and were excluded\n";
  }
  return 0;
}

int run_export(const Common& c, std::size_t layer, std::size_t head, std::size_t image) {
  Config cfg;
  const auto model = load_model(c, cfg);
  if (cfg.model.attention != AttentionMode::kAutoAlignment) {
    throw std::runtime_error("model has no aligned layers to export");
  }
  const auto dataset = generate_dataset(cfg.data, cfg.model);
  const auto& query = dataset.query();
  if (image >= query.size()) throw CLI::ValidationError("--image", "index beyond the query split");
  const auto out = model.forward(query[image].pixels);
  const auto files = export_maps(out.traces, layer, head, cfg.model.grid_rows(), cfg.model.grid_cols(),
                                 c.out.empty() ? "maps" : c.out);
  for (const auto& f : files.images) std::cout << f << "\n";
  std::cout << files.table << "\n";
  return 0;
}

int run_bench(const Common& c, std::size_t parts, std::size_t patches, std::size_t iters, std::size_t calls,
              double epsilon) {
  const auto t = bench_sinkhorn(parts, patches, iters, calls, epsilon, c.seed.value_or(1));
  write_text(c.out, format_bench_csv(t));
  std::fprintf(stderr, "sinkhorn P=%zu N=%zu iters=%zu: mean %.4f ms, median %.4f ms per call\n", parts, patches,
               iters, t.mean_ms, t.median_ms);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Auto-aligned part-token transformer for synthetic re-identification"};
  app.require_subcommand(1);

  Common train_opts, eval_opts, export_opts, bench_opts;

  auto* train = app.add_subcommand("train", "train on the synthetic benchmark");
  add_common(train, train_opts);
  std::optional<std::size_t> steps;
  train->add_option("--steps", steps, "stop after this many more steps instead of the configured schedule");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the query/gallery split");
  add_common(eval, eval_opts);
  bool on_train = false;
  eval->add_flag("--train-set", on_train, "leave-one-out retrieval over the training split instead");

  auto* exp = app.add_subcommand("export-maps", "write part-token attention maps for one layer and head");
  add_common(exp, export_opts);
  std::size_t layer = 0, head = 0, image = 0;
  exp->add_option("--layer", layer, "layer index");
  exp->add_option("--head", head, "head index");
  exp->add_option("--image", image, "query image index");

  auto* bench = app.add_subcommand("bench-sinkhorn", "time the transport solver");
  add_common(bench, bench_opts);
  std::size_t parts = 5, patches = 576, iters = 3, calls = 200;
  double epsilon = 0.05;
  bench->add_option("--parts", parts);
  bench->add_option("--patches", patches);
  bench->add_option("--iters", iters);
  bench->add_option("--calls", calls);
  bench->add_option("--epsilon", epsilon);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return run_train(train_opts, steps);
    if (*eval) return run_eval(eval_opts, on_train);
    if (*exp) return run_export(export_opts, layer, head, image);
    if (*bench) return run_bench(bench_opts, parts, patches, iters, calls, epsilon);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
