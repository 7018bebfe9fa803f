#include "aaformer/bench.h"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

#include "aaformer/sinkhorn.h"

namespace aaformer {

SinkhornTiming bench_sinkhorn(std::size_t parts, std::size_t patches, std::size_t iterations, std::size_t calls,
                              double epsilon, std::uint64_t seed) {
  if (calls == 0) throw ContractError("bench_sinkhorn needs at least one call");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> ms;
  ms.reserve(calls);
  SinkhornTiming t{parts, patches, iterations, calls};
  std::vector<double> sim(parts * patches);
  for (std::size_t c = 0; c < calls; ++c) {
    for (auto& v : sim) v = normal(rng);
    const Tensor s = Tensor::from({parts, patches}, sim);
    const auto start = std::chrono::steady_clock::now();
    const auto plan = ot::entropic_transport(s, epsilon, iterations);
    const auto stop = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    t.max_residual = std::max(t.max_residual, plan.residual);
  }
  double total = 0.0;
  for (double v : ms) total += v;
  t.mean_ms = total / static_cast<double>(calls);
  std::sort(ms.begin(), ms.end());
  t.median_ms = calls % 2 ? ms[calls / 2] : 0.5 * (ms[calls / 2 - 1] + ms[calls / 2]);
  t.min_ms = ms.front();
  t.max_ms = ms.back();
  return t;
}

std::string format_bench_csv(const SinkhornTiming& t) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "metric,value\nparts,%zu\npatches,%zu\niterations,%zu\ncalls,%zu\nmean_ms,%.6g\nmedian_ms,%.6g\n"
                "min_ms,%.6g\nmax_ms,%.6g\nmax_residual,%.6g\n",
                t.parts, t.patches, t.iterations, t.calls, t.mean_ms, t.median_ms, t.min_ms, t.max_ms,
                t.max_residual);
  return buf;
}

}  // namespace aaformer
