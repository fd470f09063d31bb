#pragma once

// Sequence mixers. A sequence batch is a (L, d) tensor: L tokens, d channels.
//
// The selective scan runs the diagonal state-space recurrence
//   h_t = abar_t ⊙ h_{t-1} + (dt_t B_t) x_t,   y_t = C_t^T h_t + D ⊙ x_t
// per channel with an N-dimensional state. Its dense oracle materializes the
// per-channel L×L mixing matrix (lower triangular) and multiplies.
//
// The two-way (quasiseparable) mixer composes two such one-directional passes
// plus a diagonal: y = shift(SS_fwd(x)) + flip(shift(SS_bwd(flip(x)))) + δ⊙x,
// where shift moves every token one step later with a zero at the front. Its
// dense oracle evaluates the three-case matrix element formula directly.

#include "volumix/checkpoint.hpp"
#include "volumix/ops.hpp"

namespace volumix {

// ---- selective scan ----

// Per-token realized scan coefficients (static mode feeds these directly;
// projection mode derives them from x).
template <typename S>
struct RealizedSsm {
  Tensor<S> abar;  // (L, d) decay in (0,1] per token per channel
  Tensor<S> dt;    // (L, d) positive step size
  Tensor<S> B;     // (L, N) input projection, shared across channels
  Tensor<S> C;     // (L, N) output projection, shared across channels
  Tensor<S> D;     // (d)    skip scale
};

// Differentiable scan node. x: (L, d) -> (L, d).
template <typename S>
Tensor<S> ssm_scan(const Tensor<S>& x, const RealizedSsm<S>& p);

// Dense oracle: per-channel matrices, flattened (d, L, L); entry (i, j) for
// i >= j is C_i^T (prod_{k=j+1..i} abar_k) dt_j B_j plus D on the diagonal.
template <typename S>
std::vector<S> materialize_semiseparable(const RealizedSsm<S>& p);

// Input-dependent parameterization: dt = softplus(W_dt x + b_dt),
// abar = exp(-softplus(a) ⊙ dt), B = W_B x, C = W_C x.
template <typename S>
struct SsmParams {
  Tensor<S> a;     // (d)
  Tensor<S> W_dt;  // (d, d)
  Tensor<S> b_dt;  // (d)
  Tensor<S> W_B;   // (N, d)
  Tensor<S> W_C;   // (N, d)
  Tensor<S> D;     // (d)
};

template <typename S>
SsmParams<S> make_ssm_params(ParamStore<S>& store, const std::string& prefix, int64_t d,
                             int64_t n, SplitMix64& rng);

template <typename S>
RealizedSsm<S> realize_ssm(const SsmParams<S>& p, const Tensor<S>& x);

// Scan with projected parameters; the standard network-mode entry point.
template <typename S>
Tensor<S> ssm_mix(const Tensor<S>& x, const SsmParams<S>& p);

// ---- two-way quasiseparable mixer ----

// One-directional inclusive scan with full per-channel diagonal transitions:
//   h_t = A_t ⊙ h_{t-1} + b_t x_t,  y_t = c_t^T h_t
// x: (L, d), A: (L, d, N), b: (L, N), c: (L, N) -> (L, d).
template <typename S>
Tensor<S> hydra_branch_scan(const Tensor<S>& x, const Tensor<S>& A, const Tensor<S>& b,
                            const Tensor<S>& c);

// Static parameters shared across channels (oracle mode).
template <typename S>
struct QuasiParams {
  Tensor<S> fA, fb, fc;  // forward triple, each (L, N)
  Tensor<S> bA, bb, bc;  // backward triple, each (L, N)
  Tensor<S> delta;       // (L) diagonal
};

// Applies the two-way mixer channelwise; every channel sees the same matrix.
template <typename S>
Tensor<S> quasiseparable_matmul(const Tensor<S>& x, const QuasiParams<S>& q);

// Dense oracle: the L×L matrix with
//   m_ij = fc_i^T (prod_{k=j+1..i-1} diag(fA_k)) fb_j   (i > j)
//   m_ii = delta_i
//   m_ij = bc_j^T (prod_{k=i+1..j-1} diag(bA_k)) bb_i   (i < j)
template <typename S>
std::vector<S> quasiseparable_materialize(const QuasiParams<S>& q);

// Input-dependent parameterization, mirroring the scan's: one shared step
// projection, separate forward/backward decays and in/out projections, and a
// per-channel diagonal.
template <typename S>
struct HydraParams {
  Tensor<S> a_f, a_b;      // (d)
  Tensor<S> W_dt;          // (d, d)
  Tensor<S> b_dt;          // (d)
  Tensor<S> W_fb, W_fc;    // (N, d)
  Tensor<S> W_bb, W_bc;    // (N, d)
  Tensor<S> delta;         // (d)
};

template <typename S>
HydraParams<S> make_hydra_params(ParamStore<S>& store, const std::string& prefix, int64_t d,
                                 int64_t n, SplitMix64& rng);

template <typename S>
Tensor<S> hydra_mix(const Tensor<S>& x, const HydraParams<S>& p);

// ---- gated-CNN token mixer ----

// Depthwise 7^3 convolution, pad 3, groups == channels: the token mixer with
// the state-space path removed. weight: (C, 1, 7, 7, 7), bias: (C).
template <typename S>
Tensor<S> gated_cnn_mix(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias);

// ---- oracle sweeps (shared by tests and the CLI) ----

struct OracleSweepResult {
  double max_scan_err = 0.0;   // scan vs dense semiseparable
  double max_quasi_err = 0.0;  // two-way mixer vs dense three-case matrix
  double max_linearity_err = 0.0;
  int cases = 0;
};

OracleSweepResult run_seqmix_oracles(uint64_t seed, int cases);

}  // namespace volumix
