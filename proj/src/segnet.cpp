#include "volumix/segnet.hpp"

#include <type_traits>

#include "volumix/ops.hpp"

namespace volumix {

namespace {

template <typename S>
void validate_config(const SegConfig& cfg) {
  if (cfg.channels.empty() || cfg.channels.size() != cfg.stage_depths.size()) {
    throw DataError("segnet: channel schedule and stage depths must have equal, nonzero length");
  }
  if (cfg.channels[0] != cfg.stem_channels) {
    throw DataError("segnet: stem_channels (" + std::to_string(cfg.stem_channels) +
                    ") must equal the first schedule entry (" + std::to_string(cfg.channels[0]) +
                    ")");
  }
  for (size_t i = 0; i + 1 < cfg.channels.size(); ++i) {
    if (cfg.channels[i + 1] != 2 * cfg.channels[i]) {
      throw DataError("segnet: channel schedule must double per stage, got " +
                      std::to_string(cfg.channels[i]) + " -> " +
                      std::to_string(cfg.channels[i + 1]));
    }
  }
  for (int64_t c : cfg.channels) {
    if (c < 1 || (cfg.variant == BlockKind::MambaSwin && c % cfg.heads != 0)) {
      throw DataError("segnet: heads (" + std::to_string(cfg.heads) +
                      ") must divide every stage width (offending width " + std::to_string(c) +
                      ")");
    }
  }
  for (int64_t d : cfg.stage_depths) {
    if (d < 1) throw DataError("segnet: stage depths must be positive");
  }
  if (cfg.in_channels < 1 || cfg.num_classes < 2 || cfg.state_dim < 1 || cfg.window < 1 ||
      cfg.heads < 1) {
    throw DataError("segnet: in_channels/num_classes/state_dim/window/heads out of range");
  }
}

}  // namespace

template <typename S>
Tensor<S> encoder_stem(const Tensor<S>& v, const Tensor<S>& dw_w, const Tensor<S>& dw_b,
                       const Tensor<S>& pw_w, const Tensor<S>& pw_b) {
  if (v.dim() != 4) throw ShapeError("encoder_stem: expected (C,D,H,W), got " + str(v.shape()));
  for (int a = 1; a < 4; ++a) {
    if (v.shape()[a] % 2 != 0) {
      throw ShapeError("encoder_stem: spatial extents must be even, got " + str(v.shape()));
    }
  }
  Conv3dOpts dw;
  dw.stride[0] = dw.stride[1] = dw.stride[2] = 2;
  dw.pad[0] = dw.pad[1] = dw.pad[2] = 3;
  dw.groups = static_cast<int>(v.shape()[0]);
  Conv3dOpts pw;
  return conv3d(conv3d(v, dw_w, dw_b, dw), pw_w, pw_b, pw);
}

template <typename S>
Tensor<S> fue(const Tensor<S>& x) {
  if (x.dim() < 2) throw ShapeError("fue: expected (C, spatial...), got " + str(x.shape()));
  Tensor<S> xbar = sigmoid(mean_axis0(x));
  Tensor<S> u = neg(mul(xbar, log(xbar)));
  Tensor<S> scale = add_scalar(neg(u), S(2));
  return mul(x, expand_axis0(scale, x.shape()[0]));
}

template <typename S>
Tensor<S> decoder_block(const Tensor<S>& d_prev, const Tensor<S>& skip,
                        const DecoderParams<S>& p) {
  if (d_prev.dim() != 4 || skip.dim() != 4) {
    throw ShapeError("decoder_block: expected (C,D,H,W) inputs, got " + str(d_prev.shape()) +
                     " and " + str(skip.shape()));
  }
  ConvT3dOpts up;
  up.stride[0] = up.stride[1] = up.stride[2] = 2;
  up.pad[0] = up.pad[1] = up.pad[2] = 1;
  up.output_pad[0] = up.output_pad[1] = up.output_pad[2] = 1;
  Tensor<S> u = conv_transpose3d(d_prev, p.up_w, p.up_b, up);
  for (int a = 1; a < 4; ++a) {
    if (u.shape()[a] != skip.shape()[a]) {
      throw ShapeError("decoder_block: upsampled " + str(u.shape()) + " does not match skip " +
                       str(skip.shape()));
    }
  }
  Tensor<S> fused = concat<S>({u, fue(skip)}, 0);
  Conv3dOpts c3;
  c3.pad[0] = c3.pad[1] = c3.pad[2] = 1;
  return relu(instance_norm(conv3d(fused, p.conv_w, p.conv_b, c3), p.gamma, p.beta));
}

template <typename S>
SegNet<S> build_model(const SegConfig& cfg, uint64_t seed) {
  validate_config<S>(cfg);
  SegNet<S> net;
  net.cfg = cfg;
  SplitMix64 rng(seed);
  auto& st = net.params;
  const int64_t c0 = cfg.stem_channels;

  net.stem_dw_w = st.add_uniform("stem.dw.weight", {cfg.in_channels, 1, 7, 7, 7}, 343, rng);
  net.stem_dw_b = st.add_zeros("stem.dw.bias", {cfg.in_channels});
  net.stem_pw_w = st.add_uniform("stem.pw.weight", {c0, cfg.in_channels, 1, 1, 1},
                                 cfg.in_channels, rng);
  net.stem_pw_b = st.add_zeros("stem.pw.bias", {c0});

  const size_t nstages = cfg.channels.size();
  for (size_t i = 0; i < nstages; ++i) {
    SegStage<S> stage;
    const int64_t c = cfg.channels[i];
    for (int64_t j = 0; j < cfg.stage_depths[i]; ++j) {
      std::string prefix = "stage" + std::to_string(i) + ".block" + std::to_string(j);
      if (cfg.variant == BlockKind::MambaSwin) {
        stage.blocks.emplace_back(make_mamba_swin_params(st, prefix, c, cfg.state_dim, cfg.window,
                                                         cfg.heads, j % 2 == 1, rng));
      } else {
        stage.blocks.emplace_back(
            make_tsblock_params(st, prefix, cfg.variant, c, cfg.state_dim, rng));
      }
    }
    if (i + 1 < nstages) {
      std::string prefix = "down" + std::to_string(i);
      stage.down_w = st.add_uniform(prefix + ".weight", {cfg.channels[i + 1], c, 2, 2, 2}, c * 8,
                                    rng);
      stage.down_b = st.add_zeros(prefix + ".bias", {cfg.channels[i + 1]});
    }
    net.stages.push_back(std::move(stage));
  }

  for (size_t k = nstages - 1; k-- > 0;) {
    const int64_t hi = cfg.channels[k + 1], lo = cfg.channels[k];
    std::string prefix = "dec" + std::to_string(k);
    DecoderParams<S> d;
    d.up_w = st.add_uniform(prefix + ".up.weight", {hi, lo, 3, 3, 3}, hi * 27, rng);
    d.up_b = st.add_zeros(prefix + ".up.bias", {lo});
    d.conv_w = st.add_uniform(prefix + ".conv.weight", {lo, 2 * lo, 3, 3, 3}, 2 * lo * 27, rng);
    d.conv_b = st.add_zeros(prefix + ".conv.bias", {lo});
    d.gamma = st.add_full(prefix + ".norm.gamma", {lo}, S(1));
    d.beta = st.add_zeros(prefix + ".norm.beta", {lo});
    net.decoders.push_back(std::move(d));
  }

  net.final_up_w = st.add_uniform("final_up.weight", {c0, c0, 3, 3, 3}, c0 * 27, rng);
  net.final_up_b = st.add_zeros("final_up.bias", {c0});
  net.head_w = st.add_uniform("head.weight", {cfg.num_classes, c0, 1, 1, 1}, c0, rng);
  net.head_b = st.add_zeros("head.bias", {cfg.num_classes});
  return net;
}

template <typename S>
Tensor<S> seg_forward(const SegNet<S>& net, const Tensor<S>& volume) {
  if (volume.dim() != 4 || volume.shape()[0] != net.cfg.in_channels) {
    throw ShapeError("seg_forward: expected (" + std::to_string(net.cfg.in_channels) +
                     ",D,H,W), got " + str(volume.shape()));
  }
  Tensor<S> x =
      encoder_stem(volume, net.stem_dw_w, net.stem_dw_b, net.stem_pw_w, net.stem_pw_b);

  std::vector<Tensor<S>> skips;
  const size_t nstages = net.stages.size();
  for (size_t i = 0; i < nstages; ++i) {
    for (const auto& blk : net.stages[i].blocks) {
      x = std::visit(
          [&](const auto& b) -> Tensor<S> {
            using B = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<B, TsBlockParams<S>>) {
              return tsblock(x, b);
            } else {
              return mamba_swin_block(x, b);
            }
          },
          blk);
    }
    skips.push_back(x);
    if (i + 1 < nstages) {
      Conv3dOpts down;
      down.stride[0] = down.stride[1] = down.stride[2] = 2;
      x = conv3d(x, net.stages[i].down_w, net.stages[i].down_b, down);
    }
  }

  Tensor<S> d = skips.back();
  for (size_t k = nstages - 1; k-- > 0;) {
    d = decoder_block(d, skips[k], net.decoders[nstages - 2 - k]);
  }

  ConvT3dOpts up;
  up.stride[0] = up.stride[1] = up.stride[2] = 2;
  up.pad[0] = up.pad[1] = up.pad[2] = 1;
  up.output_pad[0] = up.output_pad[1] = up.output_pad[2] = 1;
  d = conv_transpose3d(d, net.final_up_w, net.final_up_b, up);
  Conv3dOpts head;
  return conv3d(d, net.head_w, net.head_b, head);
}

#define VOLUMIX_INST(S)                                                                        \
  template Tensor<S> encoder_stem(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,       \
                                  const Tensor<S>&, const Tensor<S>&);                         \
  template Tensor<S> fue(const Tensor<S>&);                                                    \
  template Tensor<S> decoder_block(const Tensor<S>&, const Tensor<S>&,                        \
                                   const DecoderParams<S>&);                                   \
  template SegNet<S> build_model(const SegConfig&, uint64_t);                                  \
  template Tensor<S> seg_forward(const SegNet<S>&, const Tensor<S>&);

VOLUMIX_INST(float)
VOLUMIX_INST(double)
#undef VOLUMIX_INST

}  // namespace volumix
