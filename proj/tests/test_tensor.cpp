#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "volumix/checkpoint.hpp"
#include "volumix/gradcheck.hpp"
#include "volumix/ops.hpp"

using namespace volumix;

namespace {

template <typename S>
Tensor<S> rand_tensor(const Shape& shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<S> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<S>(rng.uniform(lo, hi));
  return Tensor<S>::from(shape, std::move(v));
}

// Values bounded away from zero (for kinked / singular ops).
template <typename S>
Tensor<S> rand_signed_away(const Shape& shape, SplitMix64& rng, double floor_mag) {
  std::vector<S> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) {
    double m = rng.uniform(floor_mag, 1.0);
    x = static_cast<S>(rng.uniform() < 0.5 ? -m : m);
  }
  return Tensor<S>::from(shape, std::move(v));
}

std::string thrown_message(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("splitmix64 reference sequence") {
  SplitMix64 r(0);
  CHECK(r.next() == 0xE220A8397B1DCDAFULL);
  CHECK(r.next() == 0x6E789E6AA1B965F4ULL);
  CHECK(r.next() == 0x06C45D188009454FULL);
  CHECK(r.next() == 0xF88BB8A8724C81ECULL);
  SplitMix64 r42(42);
  CHECK(r42.next() == 0xBDD732262FEB6E95ULL);
  SplitMix64 u(0);
  CHECK(u.uniform() == doctest::Approx(0.8833108082136426).epsilon(1e-15));
  SplitMix64 a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  CHECK(a.fork(1).next() != a.fork(2).next());
}

TEST_CASE("backward of sum(x*x) gives 2x") {
  auto x = Tensor<double>::param({3}, {1.0, 2.0, 3.0});
  auto y = sum(mul(x, x));
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
  CHECK(x.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("backward requires a scalar root") {
  auto x = Tensor<double>::param({3}, {1.0, 2.0, 3.0});
  auto y = mul(x, x);
  CHECK_THROWS_AS(y.backward(), ShapeError);
}

TEST_CASE("gradient accumulates across uses and zero_grad resets") {
  auto x = Tensor<double>::param({2}, {1.0, 2.0});
  auto y = sum(add(mul(x, x), x));  // d/dx = 2x + 1
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(3.0));
  CHECK(x.grad()[1] == doctest::Approx(5.0));
  auto y2 = sum(x);
  y2.backward();  // grads accumulate
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("shape mismatch errors name both shapes") {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({3, 2});
  std::string msg = thrown_message([&] { add(a, b); });
  CHECK(msg.find("[2,3]") != std::string::npos);
  CHECK(msg.find("[3,2]") != std::string::npos);
}

TEST_CASE("flip is an involution, bit-exact") {
  SplitMix64 rng(3);
  auto x = rand_tensor<double>({2, 3, 4}, rng);
  for (int axis = 0; axis < 3; ++axis) {
    auto y = flip(flip(x, axis), axis);
    CHECK(y.values() == x.values());
  }
}

TEST_CASE("permute and reshape invert bit-exactly") {
  SplitMix64 rng(4);
  auto x = rand_tensor<double>({2, 3, 4, 5}, rng);
  std::vector<int> perm{2, 0, 3, 1};
  std::vector<int> inv(4);
  for (int i = 0; i < 4; ++i) inv[perm[i]] = i;
  CHECK(permute(permute(x, perm), inv).values() == x.values());
  CHECK(reshape(reshape(x, {6, 20}), {2, 3, 4, 5}).values() == x.values());
  CHECK(permute(x, perm).shape() == Shape{4, 2, 5, 3});
}

TEST_CASE("shift_one drops the last slab and zero-fills the first") {
  auto x = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto y = shift_one(x, 1);
  CHECK(y.values() == std::vector<double>{0, 1, 2, 0, 4, 5});
  auto z = shift_one(x, 0);
  CHECK(z.values() == std::vector<double>{0, 0, 0, 1, 2, 3});
  // Shifting back recovers every surviving element exactly.
  auto back = flip(shift_one(flip(y, 1), 1), 1);
  CHECK(back.values() == std::vector<double>{1, 2, 0, 4, 5, 0});
}

TEST_CASE("slice and concat roundtrip") {
  SplitMix64 rng(5);
  auto x = rand_tensor<double>({3, 4, 5}, rng);
  auto a = slice(x, {0, 0, 0}, {3, 2, 5});
  auto b = slice(x, {0, 2, 0}, {3, 2, 5});
  CHECK(concat<double>({a, b}, 1).values() == x.values());
  auto c = slice(x, {1, 1, 2}, {2, 2, 2});
  CHECK(c.shape() == Shape{2, 2, 2});
  CHECK(c.values()[0] == x.values()[1 * 20 + 1 * 5 + 2]);
}

TEST_CASE("matmul matches a frozen product") {
  auto a = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor<double>::from({3, 2}, {7, 8, 9, 10, 11, 12});
  auto c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 2});
  CHECK(c.values()[0] == doctest::Approx(58));
  CHECK(c.values()[1] == doctest::Approx(64));
  CHECK(c.values()[2] == doctest::Approx(139));
  CHECK(c.values()[3] == doctest::Approx(154));
  // batched
  auto ab = Tensor<double>::from({2, 1, 2}, {1, 2, 3, 4});
  auto bb = Tensor<double>::from({2, 2, 1}, {5, 6, 7, 8});
  auto cb = matmul(ab, bb);
  CHECK(cb.shape() == Shape{2, 1, 1});
  CHECK(cb.values()[0] == doctest::Approx(17));
  CHECK(cb.values()[1] == doctest::Approx(53));
}

TEST_CASE("linear applies w x + b over the trailing axis") {
  auto x = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto w = Tensor<double>::from({2, 3}, {1, 0, 0, 0, 0, 1});
  auto b = Tensor<double>::from({2}, {10, 20});
  auto y = linear(x, w, b);
  CHECK(y.shape() == Shape{2, 2});
  CHECK(y.values() == std::vector<double>{11, 23, 14, 26});
}

TEST_CASE("softmax rows sum to one and are shift-invariant") {
  SplitMix64 rng(6);
  auto x = rand_tensor<double>({3, 5}, rng, -4.0, 4.0);
  auto y = softmax(x);
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int c = 0; c < 5; ++c) s += y.values()[r * 5 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  auto shifted = softmax(add_scalar(x, 100.0));
  for (int i = 0; i < 15; ++i) {
    CHECK(shifted.values()[i] == doctest::Approx(y.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("layer_norm normalizes across channels per position") {
  SplitMix64 rng(7);
  auto x = rand_tensor<double>({4, 3, 2}, rng);
  auto gamma = Tensor<double>::full({4}, 1.0);
  auto beta = Tensor<double>::zeros({4});
  auto y = layer_norm(x, gamma, beta);
  for (int p = 0; p < 6; ++p) {
    double m = 0, v = 0;
    for (int c = 0; c < 4; ++c) m += y.values()[c * 6 + p];
    m /= 4;
    for (int c = 0; c < 4; ++c) v += (y.values()[c * 6 + p] - m) * (y.values()[c * 6 + p] - m);
    v /= 4;
    CHECK(m == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("instance_norm normalizes each channel over space") {
  SplitMix64 rng(8);
  auto x = rand_tensor<double>({3, 4, 4}, rng, -2.0, 5.0);
  auto gamma = Tensor<double>::full({3}, 1.0);
  auto beta = Tensor<double>::zeros({3});
  auto y = instance_norm(x, gamma, beta);
  for (int c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (int p = 0; p < 16; ++p) m += y.values()[c * 16 + p];
    m /= 16;
    for (int p = 0; p < 16; ++p) v += (y.values()[c * 16 + p] - m) * (y.values()[c * 16 + p] - m);
    v /= 16;
    CHECK(m == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
  }
}

// ---- convolution ----

TEST_CASE("conv3d stem shape: 32^3 single channel to 48 x 16^3") {
  auto x = Tensor<float>::zeros({1, 32, 32, 32});
  auto w = Tensor<float>::zeros({48, 1, 7, 7, 7});
  Conv3dOpts o;
  o.stride[0] = o.stride[1] = o.stride[2] = 2;
  o.pad[0] = o.pad[1] = o.pad[2] = 3;
  auto y = conv3d(x, w, Tensor<float>(), o);
  CHECK(y.shape() == Shape{48, 16, 16, 16});
}

TEST_CASE("conv3d with an all-zero kernel returns the bias") {
  SplitMix64 rng(9);
  auto x = rand_tensor<double>({2, 4, 4, 4}, rng);
  auto w = Tensor<double>::zeros({3, 2, 3, 3, 3});
  auto b = Tensor<double>::from({3}, {1.5, -2.0, 0.25});
  Conv3dOpts o;
  o.pad[0] = o.pad[1] = o.pad[2] = 1;
  auto y = conv3d(x, w, b, o);
  CHECK(y.shape() == Shape{3, 4, 4, 4});
  for (int c = 0; c < 3; ++c) {
    for (int p = 0; p < 64; ++p) CHECK(y.values()[c * 64 + p] == b.values()[c]);
  }
  auto y0 = conv3d(x, w, Tensor<double>(), o);
  for (double v : y0.values()) CHECK(v == 0.0);
}

TEST_CASE("conv3d frozen tiny example") {
  std::vector<double> xv(8);
  for (int i = 0; i < 8; ++i) xv[i] = i + 1;
  auto x = Tensor<double>::from({1, 2, 2, 2}, xv);
  auto w = Tensor<double>::full({1, 1, 2, 2, 2}, 1.0);
  Conv3dOpts valid;
  auto y = conv3d(x, w, Tensor<double>(), valid);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.values()[0] == doctest::Approx(36.0));
  Conv3dOpts padded;
  padded.pad[0] = padded.pad[1] = padded.pad[2] = 1;
  auto z = conv3d(x, w, Tensor<double>(), padded);
  CHECK(z.shape() == Shape{1, 3, 3, 3});
  CHECK(z.values()[0] == doctest::Approx(1.0));    // only x[0,0,0] in window
  CHECK(z.values()[13] == doctest::Approx(36.0));  // center covers everything
  CHECK(z.values()[26] == doctest::Approx(8.0));   // only x[1,1,1]
}

TEST_CASE("conv3d kernel larger than padded input errors with both shapes") {
  auto x = Tensor<double>::zeros({1, 2, 2, 2});
  auto w = Tensor<double>::zeros({1, 1, 5, 5, 5});
  std::string msg = thrown_message([&] { conv3d(x, w, Tensor<double>(), Conv3dOpts{}); });
  CHECK(msg.find("[1,2,2,2]") != std::string::npos);
  CHECK(msg.find("[1,1,5,5,5]") != std::string::npos);
}

template <typename S>
static void check_conv_matches_reference() {
  SplitMix64 rng(11);
  struct Case {
    Shape xs, ws;
    Conv3dOpts o;
  };
  std::vector<Case> cases;
  {
    Conv3dOpts o;
    o.stride[0] = 2, o.stride[1] = 1, o.stride[2] = 3;
    o.pad[0] = 1, o.pad[1] = 0, o.pad[2] = 2;
    cases.push_back({{3, 5, 6, 7}, {4, 3, 3, 2, 3}, o});
  }
  {
    Conv3dOpts o;
    o.groups = 2;
    o.pad[0] = o.pad[1] = o.pad[2] = 1;
    cases.push_back({{4, 4, 5, 4}, {6, 2, 3, 3, 3}, o});
  }
  {
    Conv3dOpts o;  // depthwise
    o.groups = 5;
    o.pad[0] = o.pad[1] = o.pad[2] = 3;
    cases.push_back({{5, 6, 6, 6}, {5, 1, 7, 7, 7}, o});
  }
  {
    Conv3dOpts o;  // pointwise
    cases.push_back({{7, 3, 4, 5}, {9, 7, 1, 1, 1}, o});
  }
  for (const auto& cs : cases) {
    auto x = rand_tensor<S>(cs.xs, rng);
    auto w = rand_tensor<S>(cs.ws, rng);
    auto b = rand_tensor<S>({cs.ws[0]}, rng);
    Shape ref_shape;
    auto ref = conv3d_reference(x, w, b, cs.o, &ref_shape);
    auto fast = conv3d(x, w, b, cs.o);
    REQUIRE(fast.shape() == ref_shape);
    if (std::is_same_v<S, double>) {
      CHECK(fast.values() == ref);  // bitwise: verify-precision contract
    } else {
      // float may reassociate the reduction; bound the rounding drift instead.
      S scale = S(1);
      for (S v : ref) scale = std::max(scale, std::abs(v));
      for (int64_t i = 0; i < fast.numel(); ++i) {
        REQUIRE(std::abs(fast.values()[i] - ref[i]) <= S(1e-4) * scale);
      }
    }
    set_max_threads(4);
    auto fast_mt = conv3d(x, w, b, cs.o);
    set_max_threads(1);
    CHECK(fast_mt.values() == fast.values());  // invariant to worker count
  }
}

TEST_CASE("conv3d fast path matches the reference bitwise (double)") {
  check_conv_matches_reference<double>();
}

TEST_CASE("conv3d fast path tracks the reference within rounding (float)") {
  check_conv_matches_reference<float>();
}

TEST_CASE("conv_transpose3d is the adjoint of conv3d") {
  SplitMix64 rng(12);
  auto x = rand_tensor<double>({3, 5, 4, 6}, rng);
  auto w = rand_tensor<double>({4, 3, 3, 3, 2}, rng);
  Conv3dOpts o;
  o.stride[0] = 2, o.stride[1] = 1, o.stride[2] = 2;
  o.pad[0] = 1, o.pad[1] = 1, o.pad[2] = 0;
  auto y = conv3d(x, w, Tensor<double>(), o);
  auto g = rand_tensor<double>(y.shape(), rng);
  // <conv(x; W), g> == <x, convT(g; W)>: the same weight buffer, with the
  // leading axis read as the transposed op's input channels.
  ConvT3dOpts to;
  to.stride[0] = 2, to.stride[1] = 1, to.stride[2] = 2;
  to.pad[0] = 1, to.pad[1] = 1, to.pad[2] = 0;
  // output extent must equal x's: op = x - ((y-1)s - 2p + k)
  for (int i = 0; i < 3; ++i) {
    int64_t xe = x.shape()[i + 1], ye = y.shape()[i + 1];
    int64_t ke = w.shape()[i + 2];
    to.output_pad[i] = static_cast<int>(xe - ((ye - 1) * to.stride[i] - 2 * to.pad[i] + ke));
  }
  auto xt = conv_transpose3d(g, w, Tensor<double>(), to);
  REQUIRE(xt.shape() == x.shape());
  double lhs = 0, rhs = 0;
  for (int64_t i = 0; i < y.numel(); ++i) lhs += y.values()[i] * g.values()[i];
  for (int64_t i = 0; i < x.numel(); ++i) rhs += x.values()[i] * xt.values()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("conv_transpose3d decoder shape: doubles each spatial extent") {
  auto x = Tensor<float>::zeros({4, 4, 4, 4});
  auto w = Tensor<float>::zeros({4, 2, 3, 3, 3});
  ConvT3dOpts o;
  o.stride[0] = o.stride[1] = o.stride[2] = 2;
  o.pad[0] = o.pad[1] = o.pad[2] = 1;
  o.output_pad[0] = o.output_pad[1] = o.output_pad[2] = 1;
  auto y = conv_transpose3d(x, w, Tensor<float>(), o);
  CHECK(y.shape() == Shape{2, 8, 8, 8});
}

TEST_CASE("conv_transpose3d 1x1 kernel is a channel mix") {
  auto x = Tensor<double>::from({2, 1, 1, 2}, {1, 2, 3, 4});
  auto w = Tensor<double>::from({2, 3, 1, 1, 1}, {1, 2, 3, 10, 20, 30});
  auto y = conv_transpose3d(x, w, Tensor<double>(), ConvT3dOpts{});
  CHECK(y.shape() == Shape{3, 1, 1, 2});
  // out[co, p] = x[0,p]*w[0,co] + x[1,p]*w[1,co]
  CHECK(y.values() == std::vector<double>{31, 42, 62, 84, 93, 126});
}

// ---- loss ----

TEST_CASE("softmax_cross_entropy equals ln K on uniform logits") {
  auto logits = Tensor<double>::zeros({4, 2, 2});
  std::vector<int> labels{0, 1, 2, 3};
  auto loss = softmax_cross_entropy(logits, labels);
  CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("softmax_cross_entropy matches a manual computation") {
  auto logits = Tensor<double>::from({2, 2}, {1.0, -0.5, 0.0, 2.0});
  std::vector<int> labels{1, 0};  // positions: col0 label 1, col1 label 0
  auto loss = softmax_cross_entropy(logits, labels);
  double l0 = -std::log(std::exp(0.0) / (std::exp(1.0) + std::exp(0.0)));
  double l1 = -std::log(std::exp(-0.5) / (std::exp(-0.5) + std::exp(2.0)));
  CHECK(loss.item() == doctest::Approx(0.5 * (l0 + l1)).epsilon(1e-12));
  CHECK_THROWS_AS(softmax_cross_entropy(logits, std::vector<int>{2, 0}), DataError);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, std::vector<int>{0}), ShapeError);
}

// ---- gradient checks ----

TEST_CASE("grad_check: sum(sigmoid(x)) under 1e-6") {
  SplitMix64 rng(0);
  auto x = rand_tensor<double>({16}, rng, -2.0, 2.0);
  double err = grad_check<double>([](const Tensor<double>& t) { return sum(sigmoid(t)); }, x, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("grad_check: sum(x) is exactly linear") {
  SplitMix64 rng(1);
  auto x = rand_tensor<double>({12}, rng);
  // Any step works on a linear map; a large one avoids cancellation noise.
  double err = grad_check<double>([](const Tensor<double>& t) { return sum(t); }, x, 0.125);
  CHECK(err <= 1e-12);
}

TEST_CASE("grad_check rejects non-scalar maps") {
  auto x = Tensor<double>::from({2}, {1.0, 2.0});
  CHECK_THROWS_AS(
      grad_check<double>([](const Tensor<double>& t) { return mul(t, t); }, x, 1e-5),
      ShapeError);
}

TEST_CASE("grad_check passes for every op") {
  using T = Tensor<double>;
  using Fn = std::function<T(const std::vector<T>&)>;
  SplitMix64 rng(20);
  const double eps = 1e-5;
  const double tol = 1e-4;

  auto weighted = [&](const T& y) {  // scalarize with a fixed random weighting
    SplitMix64 wr(99);
    std::vector<double> w(static_cast<size_t>(y.numel()));
    for (auto& v : w) v = wr.uniform(-1.0, 1.0);
    return sum(mul(y, T::from(y.shape(), std::move(w))));
  };

  struct Entry {
    const char* name;
    Fn fn;
    std::vector<T> inputs;
  };
  std::vector<Entry> table;
  auto x34 = rand_tensor<double>({3, 4}, rng);
  auto y34 = rand_tensor<double>({3, 4}, rng);
  table.push_back({"add", [&](const std::vector<T>& in) { return weighted(add(in[0], in[1])); },
                   {x34, y34}});
  table.push_back({"sub", [&](const std::vector<T>& in) { return weighted(sub(in[0], in[1])); },
                   {x34, y34}});
  table.push_back({"mul", [&](const std::vector<T>& in) { return weighted(mul(in[0], in[1])); },
                   {x34, y34}});
  table.push_back({"add_scalar",
                   [&](const std::vector<T>& in) { return weighted(add_scalar(in[0], 0.7)); },
                   {x34}});
  table.push_back({"mul_scalar",
                   [&](const std::vector<T>& in) { return weighted(mul_scalar(in[0], -1.3)); },
                   {x34}});
  table.push_back({"neg", [&](const std::vector<T>& in) { return weighted(neg(in[0])); }, {x34}});
  table.push_back({"relu", [&](const std::vector<T>& in) { return weighted(relu(in[0])); },
                   {rand_signed_away<double>({3, 4}, rng, 0.05)}});
  table.push_back({"sigmoid", [&](const std::vector<T>& in) { return weighted(sigmoid(in[0])); },
                   {x34}});
  table.push_back({"silu", [&](const std::vector<T>& in) { return weighted(silu(in[0])); }, {x34}});
  table.push_back({"exp", [&](const std::vector<T>& in) { return weighted(volumix::exp(in[0])); },
                   {x34}});
  table.push_back({"log", [&](const std::vector<T>& in) { return weighted(volumix::log(in[0])); },
                   {rand_tensor<double>({3, 4}, rng, 0.2, 2.0)}});
  table.push_back({"sqrt", [&](const std::vector<T>& in) { return weighted(volumix::sqrt(in[0])); },
                   {rand_tensor<double>({3, 4}, rng, 0.2, 2.0)}});
  table.push_back({"reciprocal",
                   [&](const std::vector<T>& in) { return weighted(reciprocal(in[0])); },
                   {rand_signed_away<double>({3, 4}, rng, 0.3)}});
  table.push_back({"softplus", [&](const std::vector<T>& in) { return weighted(softplus(in[0])); },
                   {x34}});
  table.push_back({"softmax", [&](const std::vector<T>& in) { return weighted(softmax(in[0])); },
                   {rand_tensor<double>({3, 4}, rng, -2.0, 2.0)}});
  table.push_back({"sum", [&](const std::vector<T>& in) { return sum(mul(in[0], in[0])); }, {x34}});
  table.push_back({"mean", [&](const std::vector<T>& in) { return mean(mul(in[0], in[0])); },
                   {x34}});
  table.push_back({"mean_axis0",
                   [&](const std::vector<T>& in) { return weighted(mean_axis0(in[0])); }, {x34}});
  table.push_back({"mean_rest",
                   [&](const std::vector<T>& in) { return weighted(mean_rest(in[0])); }, {x34}});
  table.push_back({"expand_axis0",
                   [&](const std::vector<T>& in) { return weighted(expand_axis0(in[0], 5)); },
                   {rand_tensor<double>({4}, rng)}});
  table.push_back({"expand_rest",
                   [&](const std::vector<T>& in) { return weighted(expand_rest(in[0], {2, 3})); },
                   {rand_tensor<double>({4}, rng)}});
  table.push_back({"reshape",
                   [&](const std::vector<T>& in) { return weighted(reshape(in[0], {4, 3})); },
                   {x34}});
  table.push_back({"permute",
                   [&](const std::vector<T>& in) { return weighted(permute(in[0], {1, 0})); },
                   {x34}});
  table.push_back({"flip", [&](const std::vector<T>& in) { return weighted(flip(in[0], 1)); },
                   {x34}});
  table.push_back({"shift_one",
                   [&](const std::vector<T>& in) { return weighted(shift_one(in[0], 0)); }, {x34}});
  table.push_back({"slice",
                   [&](const std::vector<T>& in) {
                     return weighted(slice(in[0], {1, 0}, {2, 3}));
                   },
                   {x34}});
  table.push_back({"concat",
                   [&](const std::vector<T>& in) { return weighted(concat<double>({in[0], in[1]}, 1)); },
                   {x34, y34}});
  table.push_back({"matmul",
                   [&](const std::vector<T>& in) { return weighted(matmul(in[0], in[1])); },
                   {rand_tensor<double>({2, 3, 4}, rng), rand_tensor<double>({2, 4, 2}, rng)}});
  table.push_back({"linear",
                   [&](const std::vector<T>& in) { return weighted(linear(in[0], in[1], in[2])); },
                   {rand_tensor<double>({5, 3}, rng), rand_tensor<double>({2, 3}, rng),
                    rand_tensor<double>({2}, rng)}});
  {
    Conv3dOpts o;
    o.stride[0] = 2, o.stride[1] = 1, o.stride[2] = 1;
    o.pad[0] = 1, o.pad[1] = 1, o.pad[2] = 0;
    table.push_back({"conv3d",
                     [&, o](const std::vector<T>& in) {
                       return weighted(conv3d(in[0], in[1], in[2], o));
                     },
                     {rand_tensor<double>({2, 3, 3, 3}, rng), rand_tensor<double>({2, 2, 2, 3, 2}, rng),
                      rand_tensor<double>({2}, rng)}});
    Conv3dOpts dw;
    dw.groups = 3;
    dw.pad[0] = dw.pad[1] = dw.pad[2] = 1;
    table.push_back({"conv3d_depthwise",
                     [&, dw](const std::vector<T>& in) {
                       return weighted(conv3d(in[0], in[1], in[2], dw));
                     },
                     {rand_tensor<double>({3, 3, 3, 3}, rng), rand_tensor<double>({3, 1, 3, 3, 3}, rng),
                      rand_tensor<double>({3}, rng)}});
  }
  {
    ConvT3dOpts o;
    o.stride[0] = o.stride[1] = o.stride[2] = 2;
    o.pad[0] = o.pad[1] = o.pad[2] = 1;
    o.output_pad[0] = o.output_pad[1] = o.output_pad[2] = 1;
    table.push_back({"conv_transpose3d",
                     [&, o](const std::vector<T>& in) {
                       return weighted(conv_transpose3d(in[0], in[1], in[2], o));
                     },
                     {rand_tensor<double>({2, 3, 3, 3}, rng), rand_tensor<double>({2, 2, 3, 3, 3}, rng),
                      rand_tensor<double>({2}, rng)}});
  }
  table.push_back({"layer_norm",
                   [&](const std::vector<T>& in) {
                     return weighted(layer_norm(in[0], in[1], in[2]));
                   },
                   {rand_tensor<double>({4, 6}, rng), rand_tensor<double>({4}, rng, 0.5, 1.5),
                    rand_tensor<double>({4}, rng)}});
  table.push_back({"instance_norm",
                   [&](const std::vector<T>& in) {
                     return weighted(instance_norm(in[0], in[1], in[2]));
                   },
                   {rand_tensor<double>({3, 2, 2, 2}, rng), rand_tensor<double>({3}, rng, 0.5, 1.5),
                    rand_tensor<double>({3}, rng)}});
  table.push_back({"softmax_axis0",
                   [&](const std::vector<T>& in) { return weighted(softmax_axis0(in[0])); },
                   {rand_tensor<double>({4, 2, 3}, rng, -2.0, 2.0)}});
  {
    std::vector<int> labels{0, 2, 1, 3, 0, 1};
    table.push_back({"softmax_cross_entropy",
                     [labels](const std::vector<T>& in) {
                       return softmax_cross_entropy(in[0], labels);
                     },
                     {rand_tensor<double>({4, 6}, rng, -1.5, 1.5)}});
  }

  for (auto& e : table) {
    auto rep = grad_check_report<double>(e.fn, e.inputs, eps);
    CHECK_MESSAGE(rep.max_rel_err < tol,
                  e.name << ": err " << rep.max_rel_err << " input " << rep.input << " coord "
                         << rep.coord << " analytic " << rep.analytic << " numeric "
                         << rep.numeric);
  }
}

// ---- infrastructure ----

TEST_CASE("NoGradGuard suppresses graph construction") {
  auto x = Tensor<double>::param({2}, {1.0, 2.0});
  {
    NoGradGuard guard;
    auto y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.raw()->parents.empty());
  }
  auto y = mul(x, x);
  CHECK(y.requires_grad());
  auto d = y.detach();
  CHECK_FALSE(d.requires_grad());
  CHECK(d.values() == y.values());
}

TEST_CASE("finite checks flag non-finite outputs in verify precision") {
  auto x = Tensor<double>::from({1}, {1000.0});
  CHECK_THROWS_AS(volumix::exp(x), NumericError);
  set_finite_checks<double>(false);
  auto y = volumix::exp(x);
  CHECK(std::isinf(y.values()[0]));
  set_finite_checks<double>(true);
  // float defaults to no checking
  auto xf = Tensor<float>::from({1}, {1000.0f});
  auto yf = volumix::exp(xf);
  CHECK(std::isinf(yf.values()[0]));
}

TEST_CASE("parallel_for covers every index once and propagates errors") {
  set_max_threads(4);
  std::vector<int> hits(1000, 0);
  parallel_for(1000, [&](int64_t i) { hits[static_cast<size_t>(i)]++; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(
      parallel_for(100, [](int64_t i) { if (i == 37) throw DataError("boom"); }),
      DataError);
  set_max_threads(1);
}

TEST_CASE("checkpoint files roundtrip and validate") {
  std::string path = "test_roundtrip.ckpt";
  std::vector<CkptEntry> entries;
  entries.push_back({"stage0.block0.weight", {2, 3}, {1, 2, 3, 4, 5, 6}});
  entries.push_back({"head.bias", {4}, {-1, 0, 1, 2.5}});
  write_ckpt(path, entries);
  auto back = read_ckpt(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "stage0.block0.weight");
  CHECK(back[0].shape == Shape{2, 3});
  CHECK(back[0].values == entries[0].values);
  CHECK(back[1].name == "head.bias");
  CHECK(back[1].values == entries[1].values);

  {  // truncation detected
    std::ifstream f(path, std::ios::binary);
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::ofstream out("test_trunc.ckpt", std::ios::binary);
    out.write(raw.data(), static_cast<std::streamsize>(raw.size() - 5));
  }
  CHECK_THROWS_AS(read_ckpt("test_trunc.ckpt"), DataError);
  {  // bad magic
    std::ofstream out("test_magic.ckpt", std::ios::binary);
    out << "NOPE";
  }
  CHECK_THROWS_AS(read_ckpt("test_magic.ckpt"), DataError);
  {  // trailing garbage detected
    std::ifstream f(path, std::ios::binary);
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::ofstream out("test_trail.ckpt", std::ios::binary);
    out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    out << "xx";
  }
  CHECK_THROWS_AS(read_ckpt("test_trail.ckpt"), DataError);
  std::remove(path.c_str());
  std::remove("test_trunc.ckpt");
  std::remove("test_magic.ckpt");
  std::remove("test_trail.ckpt");
}

TEST_CASE("ParamStore tracks named parameters") {
  ParamStore<double> ps;
  SplitMix64 rng(33);
  auto w = ps.add_uniform("enc.w", {4, 9}, 9, rng);
  auto b = ps.add_zeros("enc.b", {4});
  ps.add_full("enc.scale", {4}, 1.0);
  CHECK_THROWS_AS(ps.add_zeros("enc.b", {4}), DataError);
  CHECK(ps.total_params() == 36 + 4 + 4);
  CHECK(ps.total_params("enc.") == 44);
  CHECK(ps.total_params("dec.") == 0);
  for (double v : w.values()) CHECK(std::abs(v) <= 1.0 / 3.0 + 1e-12);
  CHECK(ps.get("enc.b").values() == b.values());
  CHECK_THROWS_AS(ps.get("missing"), DataError);

  auto y = sum(mul(w, w));
  y.backward();
  CHECK(w.grad()[0] != 0.0);
  ps.zero_grad();
  CHECK(w.grad()[0] == 0.0);

  // save -> perturb -> load restores (to float precision)
  auto saved = ps.to_entries();
  w.values()[0] = 123.0;
  ps.load_entries(saved);
  CHECK(w.values()[0] == doctest::Approx(saved[0].values[0]));
  saved[0].shape = {9, 4};
  CHECK_THROWS_AS(ps.load_entries(saved), DataError);
  ParamStore<double> other;
  other.add_zeros("dec.w", {2});
  CHECK_THROWS_AS(other.load_entries(saved), DataError);
}

TEST_CASE("conv3d forward is invariant to the worker count") {
  SplitMix64 rng(44);
  auto x = rand_tensor<float>({4, 8, 8, 8}, rng);
  auto w = rand_tensor<float>({6, 4, 3, 3, 3}, rng);
  auto b = rand_tensor<float>({6}, rng);
  Conv3dOpts o;
  o.pad[0] = o.pad[1] = o.pad[2] = 1;
  set_max_threads(1);
  auto y1 = conv3d(x, w, b, o);
  std::vector<std::vector<float>> grads1;
  {
    auto xp = Tensor<float>::param(x.shape(), x.values());
    auto wp = Tensor<float>::param(w.shape(), w.values());
    auto bp = Tensor<float>::param(b.shape(), b.values());
    auto loss = sum(mul(conv3d(xp, wp, bp, o), conv3d(xp, wp, bp, o)));
    loss.backward();
    grads1 = {xp.grad(), wp.grad(), bp.grad()};
  }
  set_max_threads(8);
  auto y8 = conv3d(x, w, b, o);
  std::vector<std::vector<float>> grads8;
  {
    auto xp = Tensor<float>::param(x.shape(), x.values());
    auto wp = Tensor<float>::param(w.shape(), w.values());
    auto bp = Tensor<float>::param(b.shape(), b.values());
    auto loss = sum(mul(conv3d(xp, wp, bp, o), conv3d(xp, wp, bp, o)));
    loss.backward();
    grads8 = {xp.grad(), wp.grad(), bp.grad()};
  }
  set_max_threads(1);
  CHECK(y1.values() == y8.values());
  CHECK(grads1[0] == grads8[0]);
  CHECK(grads1[1] == grads8[1]);
  CHECK(grads1[2] == grads8[2]);
}
