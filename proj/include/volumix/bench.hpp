#pragma once

// Sequence-kernel micro-benchmarks: the structured scan and two-way mixer
// against their dense materialized counterparts, across sequence lengths.
// Each measurement repeats the kernel until a minimum wall time is reached
// and reports the mean nanoseconds per call plus an output checksum.

#include <cstdint>
#include <string>
#include <vector>

namespace volumix {

struct BenchRow {
  std::string kernel;
  int64_t length = 0, state = 0, channels = 0;
  int reps = 0;
  double ns_per_call = 0.0;
  double checksum = 0.0;  // seed-deterministic; independent of reps
};

// The benchable kernel names, in run order.
const std::vector<std::string>& bench_kernels();

// kernel: "all" or one of bench_kernels(). DataError on unknown names or on
// dense cases whose materialized matrix would be unreasonably large.
std::vector<BenchRow> run_bench(const std::string& kernel, const std::vector<int64_t>& lengths,
                                int64_t state, int64_t channels, double min_ms, uint64_t seed);

// CSV "kernel,L,N,d,reps,ns_per_call,checksum" with a header line.
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace volumix
