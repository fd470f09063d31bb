#include "volumix/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <limits>

#include "volumix/seqmix.hpp"

namespace volumix {

namespace {

using D = double;

Tensor<D> rand_tensor(const Shape& shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<D> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<D>::from(shape, std::move(v));
}

RealizedSsm<D> make_scan_params(int64_t l, int64_t d, int64_t n, SplitMix64& rng) {
  RealizedSsm<D> p;
  p.abar = rand_tensor({l, d}, rng, 0.5, 0.99);
  p.dt = rand_tensor({l, d}, rng, 0.1, 1.0);
  p.B = rand_tensor({l, n}, rng);
  p.C = rand_tensor({l, n}, rng);
  p.D = rand_tensor({d}, rng);
  return p;
}

QuasiParams<D> make_quasi_params(int64_t l, int64_t n, SplitMix64& rng) {
  QuasiParams<D> q;
  q.fA = rand_tensor({l, n}, rng, 0.5, 0.99);
  q.fb = rand_tensor({l, n}, rng);
  q.fc = rand_tensor({l, n}, rng);
  q.bA = rand_tensor({l, n}, rng, 0.5, 0.99);
  q.bb = rand_tensor({l, n}, rng);
  q.bc = rand_tensor({l, n}, rng);
  q.delta = rand_tensor({l}, rng);
  return q;
}

double sum_of(const std::vector<D>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s;
}

// y[i,c] = sum_j m[c?][i,j] x[j,c] for a (d,L,L) or shared (L,L) matrix.
std::vector<D> apply_dense(const std::vector<D>& m, const Tensor<D>& x, bool per_channel) {
  const int64_t l = x.shape()[0], d = x.shape()[1];
  std::vector<D> y(static_cast<size_t>(l * d), 0.0);
  for (int64_t c = 0; c < d; ++c) {
    const D* mat = m.data() + (per_channel ? c * l * l : 0);
    for (int64_t i = 0; i < l; ++i) {
      D acc = 0;
      for (int64_t j = 0; j < l; ++j) acc += mat[i * l + j] * x.values()[j * d + c];
      y[static_cast<size_t>(i * d + c)] = acc;
    }
  }
  return y;
}

BenchRow measure(const std::string& name, int64_t l, int64_t n, int64_t d, double min_ms,
                 const std::function<double()>& once) {
  BenchRow row;
  row.kernel = name;
  row.length = l;
  row.state = n;
  row.channels = d;
  row.checksum = once();  // warmup; checksum is reps-independent
  using clock = std::chrono::steady_clock;
  int reps = 0;
  double elapsed_ns = 0.0;
  double best_ns = std::numeric_limits<double>::infinity();
  const double budget_ns = min_ms * 1e6;
  while (elapsed_ns < budget_ns || reps < 3) {
    const auto t0 = clock::now();
    once();
    const double ns = std::chrono::duration<double, std::nano>(clock::now() - t0).count();
    elapsed_ns += ns;
    best_ns = std::min(best_ns, ns);
    ++reps;
  }
  row.reps = reps;
  // Minimum over repetitions: timing noise is strictly additive, so the
  // fastest observed call is the best estimate of the true kernel cost.
  row.ns_per_call = best_ns;
  return row;
}

}  // namespace

const std::vector<std::string>& bench_kernels() {
  static const std::vector<std::string> names = {"scan", "quasi", "dense_scan", "dense_quasi"};
  return names;
}

std::vector<BenchRow> run_bench(const std::string& kernel, const std::vector<int64_t>& lengths,
                                int64_t state, int64_t channels, double min_ms, uint64_t seed) {
  if (lengths.empty()) throw DataError("bench: need at least one length");
  for (int64_t l : lengths)
    if (l < 2) throw DataError("bench: length must be >= 2, got " + std::to_string(l));
  if (state < 1 || channels < 1) throw DataError("bench: state and channels must be >= 1");
  if (!(min_ms > 0)) throw DataError("bench: min_ms must be > 0");

  std::vector<std::string> todo;
  if (kernel == "all") {
    todo = bench_kernels();
  } else {
    bool known = false;
    for (const auto& k : bench_kernels()) known = known || k == kernel;
    if (!known) throw DataError("bench: unknown kernel '" + kernel + "'");
    todo.push_back(kernel);
  }

  NoGradGuard guard;
  std::vector<BenchRow> rows;
  for (const auto& name : todo) {
    const bool dense = name.rfind("dense_", 0) == 0;
    for (int64_t l : lengths) {
      if (dense && channels * l * l > (int64_t{1} << 28))
        throw DataError("bench: dense materialization too large at L=" + std::to_string(l));
      SplitMix64 rng(seed ^ (static_cast<uint64_t>(l) << 16));
      const Tensor<D> x = rand_tensor({l, channels}, rng);

      std::function<double()> once;
      if (name == "scan" || name == "dense_scan") {
        const RealizedSsm<D> p = make_scan_params(l, channels, state, rng);
        if (name == "scan") {
          once = [x, p]() { return sum_of(ssm_scan(x, p).values()); };
        } else {
          once = [x, p]() { return sum_of(apply_dense(materialize_semiseparable(p), x, true)); };
        }
      } else {
        const QuasiParams<D> q = make_quasi_params(l, state, rng);
        if (name == "quasi") {
          once = [x, q]() { return sum_of(quasiseparable_matmul(x, q).values()); };
        } else {
          once = [x, q]() { return sum_of(apply_dense(quasiseparable_materialize(q), x, false)); };
        }
      }
      rows.push_back(measure(name, l, state, channels, min_ms, once));
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "kernel,L,N,d,reps,ns_per_call,checksum\n";
  char buf[200];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%lld,%lld,%lld,%d,%.1f,%.9g\n", r.kernel.c_str(),
                  static_cast<long long>(r.length), static_cast<long long>(r.state),
                  static_cast<long long>(r.channels), r.reps, r.ns_per_call, r.checksum);
    out += buf;
  }
  return out;
}

}  // namespace volumix
