#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "volumix/gradcheck.hpp"
#include "volumix/seqmix.hpp"

using namespace volumix;

namespace {

template <typename S>
Tensor<S> rand_tensor(const Shape& shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<S> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<S>(rng.uniform(lo, hi));
  return Tensor<S>::from(shape, std::move(v));
}

RealizedSsm<double> rand_realized(int64_t L, int64_t d, int64_t N, SplitMix64& rng) {
  RealizedSsm<double> p;
  p.abar = rand_tensor<double>({L, d}, rng, 0.05, 0.95);
  p.dt = rand_tensor<double>({L, d}, rng, 0.1, 1.0);
  p.B = rand_tensor<double>({L, N}, rng);
  p.C = rand_tensor<double>({L, N}, rng);
  p.D = rand_tensor<double>({d}, rng);
  return p;
}

QuasiParams<double> rand_quasi(int64_t L, int64_t N, SplitMix64& rng) {
  QuasiParams<double> q;
  q.fA = rand_tensor<double>({L, N}, rng);
  q.fb = rand_tensor<double>({L, N}, rng);
  q.fc = rand_tensor<double>({L, N}, rng);
  q.bA = rand_tensor<double>({L, N}, rng);
  q.bb = rand_tensor<double>({L, N}, rng);
  q.bc = rand_tensor<double>({L, N}, rng);
  q.delta = rand_tensor<double>({L}, rng);
  return q;
}

// Dense multiply of the per-channel materialized matrices.
std::vector<double> dense_apply(const std::vector<double>& m, const Tensor<double>& x,
                                bool per_channel) {
  const int64_t L = x.shape()[0], d = x.shape()[1];
  std::vector<double> out(static_cast<size_t>(L * d), 0.0);
  for (int64_t c = 0; c < d; ++c) {
    const double* mc = per_channel ? m.data() + c * L * L : m.data();
    for (int64_t i = 0; i < L; ++i) {
      double acc = 0;
      for (int64_t j = 0; j < L; ++j) acc += mc[i * L + j] * x.values()[j * d + c];
      out[static_cast<size_t>(i * d + c)] = acc;
    }
  }
  return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

// ---- selective scan ----

TEST_CASE("scan with zero output projection reduces to the skip path") {
  SplitMix64 rng(10);
  auto p = rand_realized(6, 3, 4, rng);
  p.C = Tensor<double>::zeros({6, 4});
  auto x = rand_tensor<double>({6, 3}, rng);
  auto y = ssm_scan(x, p);
  for (int64_t t = 0; t < 6; ++t) {
    for (int64_t c = 0; c < 3; ++c) {
      CHECK(y.values()[t * 3 + c] == doctest::Approx(p.D.values()[c] * x.values()[t * 3 + c]));
    }
  }
}

TEST_CASE("single-token scan is one explicit recurrence step") {
  RealizedSsm<double> p;
  p.abar = Tensor<double>::from({1, 1}, {0.5});
  p.dt = Tensor<double>::from({1, 1}, {0.25});
  p.B = Tensor<double>::from({1, 2}, {2.0, -1.0});
  p.C = Tensor<double>::from({1, 2}, {3.0, 4.0});
  p.D = Tensor<double>::from({1}, {1.5});
  auto x = Tensor<double>::from({1, 1}, {2.0});
  auto y = ssm_scan(x, p);
  // h = dt*B*x = (1.0, -0.5); y = C.h + D*x = 3 - 2 + 3 = 4
  CHECK(y.values()[0] == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("scan equals the dense semiseparable matrix at L=16 N=4 d=2") {
  SplitMix64 rng(1);
  auto p = rand_realized(16, 2, 4, rng);
  auto x = rand_tensor<double>({16, 2}, rng);
  auto y = ssm_scan(x, p);
  auto m = materialize_semiseparable(p);
  CHECK(max_abs_diff(dense_apply(m, x, true), y.values()) < 1e-10);
}

TEST_CASE("unit coefficients give inclusive running sums") {
  RealizedSsm<double> p;
  p.abar = Tensor<double>::full({4, 1}, 1.0);
  p.dt = Tensor<double>::full({4, 1}, 1.0);
  p.B = Tensor<double>::full({4, 1}, 1.0);
  p.C = Tensor<double>::full({4, 1}, 1.0);
  p.D = Tensor<double>::zeros({1});
  auto x = Tensor<double>::full({4, 1}, 1.0);
  auto y = ssm_scan(x, p);
  CHECK(y.values() == std::vector<double>{1, 2, 3, 4});
  auto m = materialize_semiseparable(p);
  for (int64_t i = 0; i < 4; ++i) {
    for (int64_t j = 0; j < 4; ++j) {
      CHECK(m[static_cast<size_t>(i * 4 + j)] == (j <= i ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("zero decay keeps only the current token: diagonal matrix") {
  SplitMix64 rng(13);
  auto p = rand_realized(5, 2, 3, rng);
  p.abar = Tensor<double>::zeros({5, 2});
  auto m = materialize_semiseparable(p);
  for (int64_t c = 0; c < 2; ++c) {
    for (int64_t i = 0; i < 5; ++i) {
      for (int64_t j = 0; j < 5; ++j) {
        double e = m[static_cast<size_t>((c * 5 + i) * 5 + j)];
        if (i == j) {
          double cb = 0;
          for (int64_t n = 0; n < 3; ++n) cb += p.C.values()[i * 3 + n] * p.B.values()[i * 3 + n];
          CHECK(e == doctest::Approx(cb * p.dt.values()[i * 2 + c] + p.D.values()[c]));
        } else {
          CHECK(e == 0.0);
        }
      }
    }
  }
  // and the scan agrees: y depends on the current token only
  auto x = rand_tensor<double>({5, 2}, rng);
  auto y = ssm_scan(x, p);
  CHECK(max_abs_diff(dense_apply(m, x, true), y.values()) < 1e-12);
}

TEST_CASE("scan oracle sweep over random configurations") {
  auto res = run_seqmix_oracles(0, 200);
  CHECK(res.cases == 200);
  CHECK(res.max_scan_err < 1e-10);
  CHECK(res.max_quasi_err < 1e-10);
  CHECK(res.max_linearity_err < 1e-9);
}

TEST_CASE("scan is causal: later tokens never affect earlier outputs") {
  SplitMix64 rng(14);
  const int64_t L = 12, d = 3;
  auto p = rand_realized(L, d, 4, rng);
  auto x = rand_tensor<double>({L, d}, rng);
  auto y = ssm_scan(x, p);
  for (int64_t t = 2; t < L; t += 3) {
    auto xv = x.values();
    xv[static_cast<size_t>(t * d + 1)] += 5.0;
    auto y2 = ssm_scan(Tensor<double>::from({L, d}, xv), p);
    for (int64_t s = 0; s < t; ++s) {
      for (int64_t c = 0; c < d; ++c) {
        CHECK(y2.values()[s * d + c] == y.values()[s * d + c]);
      }
    }
    bool later_changed = false;
    for (int64_t s = t; s < L; ++s) {
      for (int64_t c = 0; c < d; ++c) {
        later_changed |= y2.values()[s * d + c] != y.values()[s * d + c];
      }
    }
    CHECK(later_changed);
  }
}

TEST_CASE("projected scan is causal too") {
  SplitMix64 rng(15);
  ParamStore<double> store;
  auto p = make_ssm_params(store, "m", 3, 4, rng);
  const int64_t L = 9, d = 3;
  auto x = rand_tensor<double>({L, d}, rng);
  NoGradGuard guard;
  auto y = ssm_mix(x, p);
  CHECK(y.shape() == Shape{L, d});
  auto xv = x.values();
  xv[static_cast<size_t>(5 * d)] += 2.0;
  auto y2 = ssm_mix(Tensor<double>::from({L, d}, xv), p);
  for (int64_t s = 0; s < 5; ++s) {
    for (int64_t c = 0; c < d; ++c) CHECK(y2.values()[s * d + c] == y.values()[s * d + c]);
  }
}

TEST_CASE("scan shape errors name the offending shapes") {
  SplitMix64 rng(16);
  auto p = rand_realized(6, 3, 4, rng);
  auto bad = rand_tensor<double>({6, 2}, rng);
  CHECK_THROWS_AS(ssm_scan(bad, p), ShapeError);
  auto p2 = p;
  p2.D = Tensor<double>::zeros({2});
  CHECK_THROWS_AS(ssm_scan(rand_tensor<double>({6, 3}, rng), p2), ShapeError);
}

TEST_CASE("materialization rejects empty sequences") {
  RealizedSsm<double> p;
  p.abar = Tensor<double>::from({0, 1}, {});
  p.dt = Tensor<double>::from({0, 1}, {});
  p.B = Tensor<double>::from({0, 2}, {});
  p.C = Tensor<double>::from({0, 2}, {});
  p.D = Tensor<double>::from({1}, {1.0});
  CHECK_THROWS_AS(materialize_semiseparable(p), ShapeError);
}

TEST_CASE("scan gradients pass the finite-difference check") {
  SplitMix64 rng(17);
  const int64_t L = 5, d = 2, N = 3;
  auto x = rand_tensor<double>({L, d}, rng);
  auto p = rand_realized(L, d, N, rng);
  SplitMix64 wr(77);
  auto w = rand_tensor<double>({L, d}, wr);
  auto fn = [&](const std::vector<Tensor<double>>& in) {
    RealizedSsm<double> q{in[1], in[2], in[3], in[4], in[5]};
    return sum(mul(ssm_scan(in[0], q), w));
  };
  auto rep = grad_check_report<double>(fn, {x, p.abar, p.dt, p.B, p.C, p.D}, 1e-5);
  CHECK_MESSAGE(rep.max_rel_err < 1e-4, "input " << rep.input << " coord " << rep.coord
                                                 << " analytic " << rep.analytic << " numeric "
                                                 << rep.numeric);
}

TEST_CASE("projected scan gradients pass end to end") {
  SplitMix64 rng(18);
  ParamStore<double> store;
  auto p = make_ssm_params(store, "m", 2, 3, rng);
  auto x = rand_tensor<double>({4, 2}, rng);
  auto fn = [&](const std::vector<Tensor<double>>& in) {
    SsmParams<double> q{in[1], in[2], in[3], in[4], in[5], in[6]};
    return sum(mul(ssm_mix(in[0], q), ssm_mix(in[0], q)));
  };
  double err = grad_check<double>(fn, {x, p.a, p.W_dt, p.b_dt, p.W_B, p.W_C, p.D}, 1e-5);
  CHECK(err < 1e-4);
}

// ---- quasiseparable mixer ----

TEST_CASE("zero in/out projections leave only the diagonal") {
  SplitMix64 rng(19);
  const int64_t L = 7, d = 2, N = 3;
  auto q = rand_quasi(L, N, rng);
  q.fb = Tensor<double>::zeros({L, N});
  q.fc = Tensor<double>::zeros({L, N});
  q.bb = Tensor<double>::zeros({L, N});
  q.bc = Tensor<double>::zeros({L, N});
  auto x = rand_tensor<double>({L, d}, rng);
  auto y = quasiseparable_matmul(x, q);
  for (int64_t t = 0; t < L; ++t) {
    for (int64_t c = 0; c < d; ++c) {
      CHECK(y.values()[t * d + c] ==
            doctest::Approx(q.delta.values()[t] * x.values()[t * d + c]).epsilon(1e-14));
    }
  }
}

TEST_CASE("zero input maps to zero") {
  SplitMix64 rng(20);
  auto q = rand_quasi(6, 2, rng);
  auto y = quasiseparable_matmul(Tensor<double>::zeros({6, 3}), q);
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("two-way mixer equals the dense matrix at L=8 N=2 d=1") {
  SplitMix64 rng(2);
  auto q = rand_quasi(8, 2, rng);
  auto x = rand_tensor<double>({8, 1}, rng);
  auto y = quasiseparable_matmul(x, q);
  auto m = quasiseparable_materialize(q);
  CHECK(max_abs_diff(dense_apply(m, x, false), y.values()) < 1e-10);
}

TEST_CASE("symmetric triples give a symmetric matrix") {
  SplitMix64 rng(21);
  auto q = rand_quasi(9, 3, rng);
  q.bA = q.fA;
  q.bb = q.fb;
  q.bc = q.fc;
  auto m = quasiseparable_materialize(q);
  for (int64_t i = 0; i < 9; ++i) {
    for (int64_t j = 0; j < 9; ++j) {
      CHECK(m[static_cast<size_t>(i * 9 + j)] ==
            doctest::Approx(m[static_cast<size_t>(j * 9 + i)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("unit diagonal with zero projections materializes the identity") {
  SplitMix64 rng(22);
  auto q = rand_quasi(5, 2, rng);
  q.fb = Tensor<double>::zeros({5, 2});
  q.fc = Tensor<double>::zeros({5, 2});
  q.bb = Tensor<double>::zeros({5, 2});
  q.bc = Tensor<double>::zeros({5, 2});
  q.delta = Tensor<double>::full({5}, 1.0);
  auto m = quasiseparable_materialize(q);
  for (int64_t i = 0; i < 5; ++i) {
    for (int64_t j = 0; j < 5; ++j) {
      CHECK(m[static_cast<size_t>(i * 5 + j)] == (i == j ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("two-way mixer is not causal") {
  SplitMix64 rng(23);
  const int64_t L = 8;
  auto q = rand_quasi(L, 2, rng);
  auto x = rand_tensor<double>({L, 1}, rng);
  auto y = quasiseparable_matmul(x, q);
  auto xv = x.values();
  xv[static_cast<size_t>(6)] += 3.0;  // perturb a late token
  auto y2 = quasiseparable_matmul(Tensor<double>::from({L, 1}, xv), q);
  bool earlier_changed = false;
  for (int64_t s = 0; s < 6; ++s) earlier_changed |= y2.values()[s] != y.values()[s];
  CHECK(earlier_changed);
}

TEST_CASE("length mismatch between x and parameters errors") {
  SplitMix64 rng(24);
  auto q = rand_quasi(8, 2, rng);
  CHECK_THROWS_AS(quasiseparable_matmul(rand_tensor<double>({7, 2}, rng), q), ShapeError);
}

TEST_CASE("one-directional branch gradients pass") {
  SplitMix64 rng(25);
  const int64_t L = 4, d = 2, N = 3;
  auto x = rand_tensor<double>({L, d}, rng);
  auto A = rand_tensor<double>({L, d, N}, rng);
  auto b = rand_tensor<double>({L, N}, rng);
  auto c = rand_tensor<double>({L, N}, rng);
  SplitMix64 wr(78);
  auto w = rand_tensor<double>({L, d}, wr);
  auto fn = [&](const std::vector<Tensor<double>>& in) {
    return sum(mul(hydra_branch_scan(in[0], in[1], in[2], in[3]), w));
  };
  double err = grad_check<double>(fn, {x, A, b, c}, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("two-way mixer gradients pass") {
  SplitMix64 rng(26);
  const int64_t L = 5, d = 2, N = 2;
  auto q = rand_quasi(L, N, rng);
  auto x = rand_tensor<double>({L, d}, rng);
  auto fn = [&](const std::vector<Tensor<double>>& in) {
    QuasiParams<double> p{in[1], in[2], in[3], in[4], in[5], in[6], in[7]};
    auto y = quasiseparable_matmul(in[0], p);
    return sum(mul(y, y));
  };
  double err = grad_check<double>(fn, {x, q.fA, q.fb, q.fc, q.bA, q.bb, q.bc, q.delta}, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("projected two-way mixer gradients pass end to end") {
  SplitMix64 rng(27);
  ParamStore<double> store;
  auto p = make_hydra_params(store, "h", 2, 2, rng);
  auto x = rand_tensor<double>({4, 2}, rng);
  auto fn = [&](const std::vector<Tensor<double>>& in) {
    HydraParams<double> hp{in[1], in[2], in[3], in[4], in[5], in[6], in[7], in[8], in[9]};
    auto y = hydra_mix(in[0], hp);
    return sum(mul(y, y));
  };
  double err = grad_check<double>(
      fn, {x, p.a_f, p.a_b, p.W_dt, p.b_dt, p.W_fb, p.W_fc, p.W_bb, p.W_bc, p.delta}, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("parameter budgets of the projected mixers") {
  SplitMix64 rng(28);
  const int64_t d = 48, n = 4;
  ParamStore<double> store;
  make_ssm_params(store, "scan", d, n, rng);
  make_hydra_params(store, "twoway", d, n, rng);
  CHECK(store.total_params("scan.") == d * d + 2 * n * d + 3 * d);
  CHECK(store.total_params("twoway.") == d * d + 4 * n * d + 4 * d);
}

TEST_CASE("mixer outputs are invariant to the worker count") {
  SplitMix64 rng(29);
  const int64_t L = 64, d = 8;
  ParamStore<float> store;
  auto p = make_hydra_params(store, "h", d, 4, rng);
  auto x = rand_tensor<float>({L, d}, rng);
  NoGradGuard guard;
  set_max_threads(1);
  auto y1 = hydra_mix(x, p);
  set_max_threads(8);
  auto y8 = hydra_mix(x, p);
  set_max_threads(1);
  CHECK(y1.values() == y8.values());
}

TEST_CASE("two-way inference fast path is bitwise identical to the graph") {
  SplitMix64 rng(31);
  const int64_t d = 3;
  for (int64_t L : {1, 2, 7, 64}) {
    const int64_t N = std::min<int64_t>(L, 4);
    auto q = rand_quasi(L, N, rng);
    auto x = rand_tensor<double>({L, d}, rng);
    auto ref = quasiseparable_matmul(x, q);  // graph path (gradients on)
    NoGradGuard guard;
    auto fast = quasiseparable_matmul(x, q);  // fused single-pass path
    REQUIRE(fast.values().size() == ref.values().size());
    CHECK(std::memcmp(fast.data(), ref.data(), ref.values().size() * sizeof(double)) == 0);
  }
}

TEST_CASE("projected mixer inference fast path matches the graph bitwise") {
  SplitMix64 rng(33);
  const int64_t L = 40, d = 6;
  ParamStore<float> store;
  auto p = make_hydra_params(store, "h", d, 3, rng);
  auto x = rand_tensor<float>({L, d}, rng);
  auto ref = hydra_mix(x, p);
  NoGradGuard guard;
  auto fast = hydra_mix(x, p);
  REQUIRE(fast.values().size() == ref.values().size());
  CHECK(std::memcmp(fast.data(), ref.data(), ref.values().size() * sizeof(float)) == 0);
}

// ---- gated CNN mixer ----

TEST_CASE("depthwise token mixer: zero kernel gives zero") {
  SplitMix64 rng(30);
  auto x = rand_tensor<double>({2, 4, 4, 4}, rng);
  auto w = Tensor<double>::zeros({2, 1, 7, 7, 7});
  auto b = Tensor<double>::zeros({2});
  auto y = gated_cnn_mix(x, w, b);
  CHECK(y.shape() == x.shape());
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("depthwise token mixer: center-tap kernel is the identity") {
  SplitMix64 rng(31);
  auto x = rand_tensor<double>({3, 4, 5, 4}, rng);
  std::vector<double> wv(3 * 343, 0.0);
  for (int c = 0; c < 3; ++c) wv[static_cast<size_t>(c * 343 + (3 * 7 + 3) * 7 + 3)] = 1.0;
  auto w = Tensor<double>::from({3, 1, 7, 7, 7}, wv);
  auto y = gated_cnn_mix(x, w, Tensor<double>::zeros({3}));
  for (int64_t i = 0; i < x.numel(); ++i) {
    CHECK(y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-14));
  }
}

TEST_CASE("depthwise token mixer rejects channel mismatch") {
  auto x = Tensor<double>::zeros({2, 4, 4, 4});
  auto w = Tensor<double>::zeros({3, 1, 7, 7, 7});
  CHECK_THROWS_AS(gated_cnn_mix(x, w, Tensor<double>::zeros({3})), ShapeError);
}

TEST_CASE("depthwise token mixer gradients pass") {
  set_max_threads(8);
  SplitMix64 rng(32);
  auto x = rand_tensor<double>({2, 4, 4, 4}, rng);
  auto w = rand_tensor<double>({2, 1, 7, 7, 7}, rng, -0.05, 0.05);
  auto b = rand_tensor<double>({2}, rng);
  auto fn = [](const std::vector<Tensor<double>>& in) {
    auto y = gated_cnn_mix(in[0], in[1], in[2]);
    return sum(mul(y, y));
  };
  double err = grad_check<double>(fn, {x, w, b}, 1e-5);
  set_max_threads(1);
  CHECK(err < 1e-4);
}
