#pragma once

// The differentiable op set. Free functions; every op validates shapes and
// throws ShapeError naming both shapes on mismatch. All outputs are fresh
// contiguous tensors.

#include "volumix/tensor.hpp"

namespace volumix {

// ---- elementwise (operands must have identical shape) ----
template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);

template <typename S> Tensor<S> add_scalar(const Tensor<S>& a, S c);
template <typename S> Tensor<S> mul_scalar(const Tensor<S>& a, S c);

template <typename S> Tensor<S> neg(const Tensor<S>& a);
template <typename S> Tensor<S> relu(const Tensor<S>& a);
template <typename S> Tensor<S> sigmoid(const Tensor<S>& a);
template <typename S> Tensor<S> silu(const Tensor<S>& a);
template <typename S> Tensor<S> exp(const Tensor<S>& a);
template <typename S> Tensor<S> log(const Tensor<S>& a);
template <typename S> Tensor<S> sqrt(const Tensor<S>& a);
template <typename S> Tensor<S> reciprocal(const Tensor<S>& a);
template <typename S> Tensor<S> softplus(const Tensor<S>& a);

// Softmax over the last axis.
template <typename S> Tensor<S> softmax(const Tensor<S>& a);

// ---- reductions ----
template <typename S> Tensor<S> sum(const Tensor<S>& a);        // -> [1]
template <typename S> Tensor<S> mean(const Tensor<S>& a);       // -> [1]
// Mean over the first axis: (C, rest...) -> (rest...).
template <typename S> Tensor<S> mean_axis0(const Tensor<S>& a);
// Per-channel mean over everything after the first axis: (C, rest...) -> (C).
template <typename S> Tensor<S> mean_rest(const Tensor<S>& a);

// ---- broadcast helpers (explicit expansion; backward sums) ----
// (rest...) -> (n, rest...)
template <typename S> Tensor<S> expand_axis0(const Tensor<S>& s, int64_t n);
// (C) -> (C, rest...)
template <typename S> Tensor<S> expand_rest(const Tensor<S>& s, Shape rest);

// ---- shape ops ----
template <typename S> Tensor<S> reshape(const Tensor<S>& a, Shape shape);
template <typename S> Tensor<S> permute(const Tensor<S>& a, const std::vector<int>& perm);
template <typename S> Tensor<S> flip(const Tensor<S>& a, int axis);
// One position toward higher index along `axis`, zero-filled at index 0.
template <typename S> Tensor<S> shift_one(const Tensor<S>& a, int axis);
template <typename S> Tensor<S> slice(const Tensor<S>& a, const std::vector<int64_t>& start,
                                      const std::vector<int64_t>& len);
template <typename S> Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis);

// ---- linear algebra ----
// a: (..., M, K), b: (..., K, N) with identical leading dims.
template <typename S> Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);
// x: (..., K), w: (M, K), b: (M) or undefined -> (..., M).
template <typename S> Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b);

// ---- normalization (composed from primitives; backward is automatic) ----
// Normalizes across the first (channel) axis per position.
template <typename S> Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma,
                                           const Tensor<S>& beta, S eps = S(1e-5));
// Normalizes each channel across all remaining axes.
template <typename S> Tensor<S> instance_norm(const Tensor<S>& x, const Tensor<S>& gamma,
                                              const Tensor<S>& beta, S eps = S(1e-5));
// Softmax over axis 0 of (C, rest...).
template <typename S> Tensor<S> softmax_axis0(const Tensor<S>& x);

// ---- 3D convolution ----
struct Conv3dOpts {
  int stride[3] = {1, 1, 1};
  int pad[3] = {0, 0, 0};
  int groups = 1;
};

// x: (Cin, D, H, W), w: (Cout, Cin/groups, kd, kh, kw), bias: (Cout) or undefined.
template <typename S> Tensor<S> conv3d(const Tensor<S>& x, const Tensor<S>& w,
                                       const Tensor<S>& bias, const Conv3dOpts& o);

// Plain-loop reference with the same accumulation order as the fast path;
// the fast path must match it bitwise (tested).
template <typename S> std::vector<S> conv3d_reference(const Tensor<S>& x, const Tensor<S>& w,
                                                      const Tensor<S>& bias, const Conv3dOpts& o,
                                                      Shape* out_shape);

struct ConvT3dOpts {
  int stride[3] = {1, 1, 1};
  int pad[3] = {0, 0, 0};
  int output_pad[3] = {0, 0, 0};
  int groups = 1;
};

// x: (Cin, D, H, W), w: (Cin, Cout/groups, kd, kh, kw), bias: (Cout) or undefined.
template <typename S> Tensor<S> conv_transpose3d(const Tensor<S>& x, const Tensor<S>& w,
                                                 const Tensor<S>& bias, const ConvT3dOpts& o);

// ---- loss ----
// logits: (K, rest...), labels: flat rest-sized class ids. Mean over positions of
// -log softmax(logits)[label].
template <typename S> Tensor<S> softmax_cross_entropy(const Tensor<S>& logits,
                                                      const std::vector<int>& labels);

// Operator sugar.
template <typename S> Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S> Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }

}  // namespace volumix
