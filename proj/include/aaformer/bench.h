#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace aaformer {

struct SinkhornTiming {
  std::size_t parts = 0;
  std::size_t patches = 0;
  std::size_t iterations = 0;
  std::size_t calls = 0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
  double max_residual = 0.0;  // worst marginal residual seen, for sanity
};

/// Times entropic_transport on fresh N(0,1) similarity matrices, one matrix
/// per call; matrix generation is outside the timed region.
SinkhornTiming bench_sinkhorn(std::size_t parts, std::size_t patches, std::size_t iterations, std::size_t calls,
                              double epsilon, std::uint64_t seed);

std::string format_bench_csv(const SinkhornTiming& t);

}  // namespace aaformer
