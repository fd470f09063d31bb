#pragma once

// Shared encoder-decoder segmentation network.
//
// stem (depthwise 7^3 stride 2 + pointwise) -> four encoder stages of
// configurable block kind with 2^3 stride-2 conv downsamples between stages ->
// decoder chain that doubles resolution per step and fuses the stage skips
// through the parameter-free uncertainty rescaling `fue` -> final transposed
// conv back to input resolution -> 1^3 conv to class logits.

#include "volumix/blocks3d.hpp"

namespace volumix {

struct SegConfig {
  BlockKind variant = BlockKind::TSMamba;
  int64_t in_channels = 1;
  int64_t num_classes = 2;
  int64_t stem_channels = 48;
  std::vector<int64_t> stage_depths = {1, 1, 1, 1};
  std::vector<int64_t> channels = {48, 96, 192, 384};
  int64_t state_dim = 4;
  int window = 4;
  int heads = 4;
};

template <typename S>
using AnyBlock = std::variant<TsBlockParams<S>, MambaSwinParams<S>>;

template <typename S>
struct SegStage {
  std::vector<AnyBlock<S>> blocks;
  Tensor<S> down_w, down_b;  // undefined for the last stage
};

template <typename S>
struct DecoderParams {
  Tensor<S> up_w, up_b;      // ConvT 3^3 stride 2: C_hi -> C_lo
  Tensor<S> conv_w, conv_b;  // 3^3: 2*C_lo -> C_lo
  Tensor<S> gamma, beta;     // instance norm
};

template <typename S>
struct SegNet {
  SegConfig cfg;
  ParamStore<S> params;
  Tensor<S> stem_dw_w, stem_dw_b, stem_pw_w, stem_pw_b;
  std::vector<SegStage<S>> stages;
  std::vector<DecoderParams<S>> decoders;  // applied deepest skip first
  Tensor<S> final_up_w, final_up_b;
  Tensor<S> head_w, head_b;
};

// Depthwise 7^3 (stride 2, pad 3) then pointwise conv to the stem width.
// Spatial extents must be even.
template <typename S>
Tensor<S> encoder_stem(const Tensor<S>& v, const Tensor<S>& dw_w, const Tensor<S>& dw_b,
                       const Tensor<S>& pw_w, const Tensor<S>& pw_b);

// Parameter-free skip rescaling: x ⊙ (2 − u), u = −x̄ ln x̄,
// x̄ = sigmoid(mean over channels). u ∈ [0, 1/e], so the scale ∈ [2−1/e, 2].
template <typename S>
Tensor<S> fue(const Tensor<S>& x);

template <typename S>
Tensor<S> decoder_block(const Tensor<S>& d_prev, const Tensor<S>& skip,
                        const DecoderParams<S>& p);

template <typename S>
SegNet<S> build_model(const SegConfig& cfg, uint64_t seed);

template <typename S>
Tensor<S> seg_forward(const SegNet<S>& net, const Tensor<S>& volume);

}  // namespace volumix
