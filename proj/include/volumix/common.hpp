#pragma once

// Shared plumbing: shapes, errors, the seeded PRNG, and the thread pool.
// Parallel work is always partitioned into units whose internal computation
// is independent of the thread count, so results are bitwise reproducible
// for any VOLUMIX_THREADS value.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace volumix {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

// Row-major strides (last axis fastest).
std::vector<int64_t> strides_of(const Shape& s);

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct VerificationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// SplitMix64: the single PRNG used everywhere (init, shuffling, phantoms).
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next();

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Integer in [0, n), n > 0.
  uint64_t below(uint64_t n);
  // Standard normal via Box-Muller (second draw cached).
  double normal();
  // Derive an independent child stream deterministically.
  SplitMix64 fork(uint64_t salt);

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Worker cap shared by all parallel loops; VOLUMIX_THREADS is read once by the
// CLI and pushed here. Default 1.
void set_max_threads(int n);
int max_threads();

// Runs fn(i) for i in [0, n). Tasks must write disjoint outputs; each task's
// computation must not depend on the partition (which it cannot, given only i).
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace volumix
