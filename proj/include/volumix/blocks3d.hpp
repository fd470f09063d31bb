#pragma once

// Composite 3D blocks. A feature map is a (C, D, H, W) tensor.
//
// gsc:    x + Outer(Branch3(x) ⊙ Branch1(x)), each branch = norm→conv→ReLU.
// tri_oriented_mix: flattens the volume into three sequences (D-major,
//         H-major, W-major), runs a per-orientation sequence mixer, unflattens
//         and sums.
// tsblock: x̂ = gsc(x); x̃ = TokenMixer(LN(x̂)) + x̂; out = MLP(LN(x̃)) + x̃.
//         The token mixer is selected by BlockKind: scan or two-way mixer on
//         SiLU(DepthwiseConv(·)) routed through the tri-oriented mix, or a
//         gated convolution branch (the scan ablated away).
// windowed_attention: non-overlapping window³ multi-head attention, with an
//         optional cyclic half-window shift; volumes are zero-padded up to a
//         window multiple and cropped back.
// mamba_swin_block: x + WinAttn(LN(TokenMixer_scan(x))).

#include <functional>
#include <variant>

#include "volumix/seqmix.hpp"

namespace volumix {

enum class BlockKind { TSMamba, TSHydra, MambaSwin, MambaOut };

const char* block_kind_name(BlockKind k);
BlockKind block_kind_from_name(const std::string& name);

template <typename S>
struct ConvUnit {
  Tensor<S> gamma, beta;    // instance-norm affine
  Tensor<S> weight, bias;   // conv
};

template <typename S>
struct GscParams {
  ConvUnit<S> branch3;  // 3^3, pad 1
  ConvUnit<S> branch1;  // 1^3
  ConvUnit<S> outer;    // 3^3, pad 1
};

template <typename S>
struct MlpParams {
  Tensor<S> w1, b1;  // (2C, C), (2C)
  Tensor<S> w2, b2;  // (C, 2C), (C)
};

template <typename S>
struct MixerScanParams {
  Tensor<S> conv_w, conv_b;  // depthwise 7^3
  SsmParams<S> axial, coronal, sagittal;
};

template <typename S>
struct MixerHydraParams {
  Tensor<S> conv_w, conv_b;
  HydraParams<S> axial, coronal, sagittal;
};

template <typename S>
struct MixerGatedParams {
  Tensor<S> w_in, b_in;    // (2C, C), (2C): [gate; value]
  Tensor<S> conv_w, conv_b;
  Tensor<S> w_out, b_out;  // (C, C), (C)
};

template <typename S>
using MixerParams = std::variant<MixerScanParams<S>, MixerHydraParams<S>, MixerGatedParams<S>>;

template <typename S>
struct TsBlockParams {
  Tensor<S> ln1_g, ln1_b;
  Tensor<S> ln2_g, ln2_b;
  GscParams<S> gsc;
  MixerParams<S> mixer;
  MlpParams<S> mlp;
};

template <typename S>
struct AttnParams {
  Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename S>
struct MambaSwinParams {
  MixerScanParams<S> mixer;
  Tensor<S> ln_g, ln_b;
  AttnParams<S> attn;
  int window = 4;
  int heads = 4;
  bool shifted = false;
};

// ---- forward functions ----

template <typename S>
Tensor<S> gsc(const Tensor<S>& x, const GscParams<S>& p);

// mixer(seq, orientation) receives the (L, C) flattening for orientation
// 0 (D-major), 1 (H-major), 2 (W-major) and must return (L, C).
template <typename S>
Tensor<S> tri_oriented_mix(const Tensor<S>& x,
                           const std::function<Tensor<S>(const Tensor<S>&, int)>& mixer);

// The token mixer alone (pre-residual), as used inside tsblock.
template <typename S>
Tensor<S> token_mixer(const Tensor<S>& x, const MixerParams<S>& p);

template <typename S>
Tensor<S> tsblock(const Tensor<S>& x, const TsBlockParams<S>& p);

// Pre-residual windowed attention. If attn_probs is non-null it receives the
// (windows, heads, T, T) attention probabilities.
template <typename S>
Tensor<S> windowed_attention(const Tensor<S>& x, int window, int heads, bool shifted,
                             const AttnParams<S>& p, Tensor<S>* attn_probs = nullptr);

template <typename S>
Tensor<S> mamba_swin_block(const Tensor<S>& x, const MambaSwinParams<S>& p);

// ---- parameter factories (registered under `prefix.` in the store) ----

template <typename S>
GscParams<S> make_gsc_params(ParamStore<S>& store, const std::string& prefix, int64_t c,
                             SplitMix64& rng);

template <typename S>
MixerParams<S> make_mixer_params(ParamStore<S>& store, const std::string& prefix, BlockKind kind,
                                 int64_t c, int64_t n, SplitMix64& rng);

template <typename S>
TsBlockParams<S> make_tsblock_params(ParamStore<S>& store, const std::string& prefix,
                                     BlockKind kind, int64_t c, int64_t n, SplitMix64& rng);

template <typename S>
AttnParams<S> make_attn_params(ParamStore<S>& store, const std::string& prefix, int64_t c,
                               SplitMix64& rng);

template <typename S>
MambaSwinParams<S> make_mamba_swin_params(ParamStore<S>& store, const std::string& prefix,
                                          int64_t c, int64_t n, int window, int heads,
                                          bool shifted, SplitMix64& rng);

}  // namespace volumix
