#include "volumix/blocks3d.hpp"

#include <array>
#include <cmath>
#include <type_traits>

#include "volumix/ops.hpp"

namespace volumix {

const char* block_kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::TSMamba: return "tsmamba";
    case BlockKind::TSHydra: return "tshydra";
    case BlockKind::MambaSwin: return "mamba_swin";
    case BlockKind::MambaOut: return "mambaout";
  }
  throw DataError("block_kind_name: invalid kind");
}

BlockKind block_kind_from_name(const std::string& name) {
  if (name == "tsmamba") return BlockKind::TSMamba;
  if (name == "tshydra") return BlockKind::TSHydra;
  if (name == "mamba_swin") return BlockKind::MambaSwin;
  if (name == "mambaout") return BlockKind::MambaOut;
  throw DataError("unknown block kind '" + name +
                  "' (expected tsmamba|tshydra|mamba_swin|mambaout)");
}

namespace {

template <typename S>
void require_volume(const Tensor<S>& x, const char* who) {
  if (x.dim() != 4) throw ShapeError(std::string(who) + ": expected (C,D,H,W), got " + str(x.shape()));
}

// norm -> conv -> ReLU
template <typename S>
Tensor<S> conv_unit(const Tensor<S>& x, const ConvUnit<S>& u, int pad) {
  Conv3dOpts o;
  o.pad[0] = o.pad[1] = o.pad[2] = pad;
  return relu(conv3d(instance_norm(x, u.gamma, u.beta), u.weight, u.bias, o));
}

// (C,D,H,W) -> (L,C) in D-major token order.
template <typename S>
Tensor<S> to_seq(const Tensor<S>& x) {
  const auto& s = x.shape();
  return reshape(permute(x, {1, 2, 3, 0}), {s[1] * s[2] * s[3], s[0]});
}

// (L,C) -> (C,D,H,W), inverse of to_seq.
template <typename S>
Tensor<S> to_vol(const Tensor<S>& t, int64_t d, int64_t h, int64_t w) {
  return permute(reshape(t, {d, h, w, t.shape()[1]}), {3, 0, 1, 2});
}

template <typename S>
Tensor<S> mixer_scan(const Tensor<S>& x, const MixerScanParams<S>& p) {
  Conv3dOpts o;
  o.pad[0] = o.pad[1] = o.pad[2] = 3;
  o.groups = static_cast<int>(x.shape()[0]);
  Tensor<S> t = silu(conv3d(x, p.conv_w, p.conv_b, o));
  const std::array<const SsmParams<S>*, 3> ps = {&p.axial, &p.coronal, &p.sagittal};
  return tri_oriented_mix<S>(
      t, [&](const Tensor<S>& seq, int orientation) { return ssm_mix(seq, *ps[orientation]); });
}

template <typename S>
Tensor<S> mixer_hydra(const Tensor<S>& x, const MixerHydraParams<S>& p) {
  Conv3dOpts o;
  o.pad[0] = o.pad[1] = o.pad[2] = 3;
  o.groups = static_cast<int>(x.shape()[0]);
  Tensor<S> t = silu(conv3d(x, p.conv_w, p.conv_b, o));
  const std::array<const HydraParams<S>*, 3> ps = {&p.axial, &p.coronal, &p.sagittal};
  return tri_oriented_mix<S>(
      t, [&](const Tensor<S>& seq, int orientation) { return hydra_mix(seq, *ps[orientation]); });
}

template <typename S>
Tensor<S> mixer_gated(const Tensor<S>& x, const MixerGatedParams<S>& p) {
  const auto& s = x.shape();
  const int64_t c = s[0], l = s[1] * s[2] * s[3];
  Tensor<S> z = linear(to_seq(x), p.w_in, p.b_in);  // (L, 2C) = [gate; value]
  Tensor<S> gate = slice(z, {0, 0}, {l, c});
  Tensor<S> value = slice(z, {0, c}, {l, c});
  Tensor<S> mixed = gated_cnn_mix(to_vol(value, s[1], s[2], s[3]), p.conv_w, p.conv_b);
  Tensor<S> out = linear(mul(silu(gate), to_seq(mixed)), p.w_out, p.b_out);
  return to_vol(out, s[1], s[2], s[3]);
}

// Cyclic shift toward lower indices by s along axis.
template <typename S>
Tensor<S> roll_left(const Tensor<S>& t, int axis, int64_t s) {
  const auto& sh = t.shape();
  const int64_t n = sh[axis];
  s = ((s % n) + n) % n;
  if (s == 0) return t;
  std::vector<int64_t> st0(sh.size(), 0), ln0(sh.begin(), sh.end());
  std::vector<int64_t> st1(sh.size(), 0), ln1(sh.begin(), sh.end());
  st0[axis] = s;
  ln0[axis] = n - s;
  ln1[axis] = s;
  return concat<S>({slice(t, st0, ln0), slice(t, st1, ln1)}, axis);
}

template <typename S>
Tensor<S> pad_axis_to(const Tensor<S>& t, int axis, int64_t target) {
  const int64_t extra = target - t.shape()[axis];
  if (extra == 0) return t;
  Shape zs = t.shape();
  zs[axis] = extra;
  return concat<S>({t, Tensor<S>::zeros(zs)}, axis);
}

}  // namespace

template <typename S>
Tensor<S> gsc(const Tensor<S>& x, const GscParams<S>& p) {
  require_volume(x, "gsc");
  Tensor<S> gated = mul(conv_unit(x, p.branch3, 1), conv_unit(x, p.branch1, 0));
  return add(x, conv_unit(gated, p.outer, 1));
}

template <typename S>
Tensor<S> tri_oriented_mix(const Tensor<S>& x,
                           const std::function<Tensor<S>(const Tensor<S>&, int)>& mixer) {
  require_volume(x, "tri_oriented_mix");
  const auto& s = x.shape();
  const int64_t c = s[0], l = s[1] * s[2] * s[3];
  // Token orders: 0 = (D,H,W) lexicographic, 1 = (H,W,D), 2 = (W,D,H).
  static const std::array<std::vector<int>, 3> fwd = {
      {{1, 2, 3, 0}, {2, 3, 1, 0}, {3, 1, 2, 0}}};
  static const std::array<std::vector<int>, 3> inv = {
      {{3, 0, 1, 2}, {3, 2, 0, 1}, {3, 1, 2, 0}}};
  Tensor<S> acc;
  for (int o = 0; o < 3; ++o) {
    Tensor<S> flat = permute(x, fwd[o]);
    Shape grid = flat.shape();  // (.,.,.,C)
    Tensor<S> y = mixer(reshape(flat, {l, c}), o);
    if (!same_shape(y.shape(), Shape{l, c})) {
      throw ShapeError("tri_oriented_mix: mixer returned " + str(y.shape()) + ", expected " +
                       str(Shape{l, c}));
    }
    Tensor<S> vol = permute(reshape(y, grid), inv[o]);
    acc = acc.defined() ? add(acc, vol) : vol;
  }
  return acc;
}

template <typename S>
Tensor<S> token_mixer(const Tensor<S>& x, const MixerParams<S>& p) {
  require_volume(x, "token_mixer");
  return std::visit(
      [&](const auto& m) -> Tensor<S> {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, MixerScanParams<S>>) {
          return mixer_scan(x, m);
        } else if constexpr (std::is_same_v<M, MixerHydraParams<S>>) {
          return mixer_hydra(x, m);
        } else {
          return mixer_gated(x, m);
        }
      },
      p);
}

template <typename S>
Tensor<S> tsblock(const Tensor<S>& x, const TsBlockParams<S>& p) {
  require_volume(x, "tsblock");
  Tensor<S> xh = gsc(x, p.gsc);
  Tensor<S> xt = add(token_mixer(layer_norm(xh, p.ln1_g, p.ln1_b), p.mixer), xh);
  const auto& s = xt.shape();
  Tensor<S> t = to_seq(layer_norm(xt, p.ln2_g, p.ln2_b));
  Tensor<S> m = linear(silu(linear(t, p.mlp.w1, p.mlp.b1)), p.mlp.w2, p.mlp.b2);
  return add(to_vol(m, s[1], s[2], s[3]), xt);
}

template <typename S>
Tensor<S> windowed_attention(const Tensor<S>& x, int window, int heads, bool shifted,
                             const AttnParams<S>& p, Tensor<S>* attn_probs) {
  require_volume(x, "windowed_attention");
  const auto& s = x.shape();
  const int64_t c = s[0];
  if (window < 1) throw ShapeError("windowed_attention: window must be >= 1");
  if (heads < 1 || c % heads != 0) {
    throw ShapeError("windowed_attention: heads (" + std::to_string(heads) +
                     ") must divide channels (" + std::to_string(c) + ")");
  }
  const int64_t w = window;
  const int64_t head_dim = c / heads;

  Tensor<S> t = x;
  Shape padded(3);
  for (int a = 0; a < 3; ++a) {
    padded[a] = (s[a + 1] + w - 1) / w * w;
    t = pad_axis_to(t, a + 1, padded[a]);
  }
  const int64_t shift = shifted ? window / 2 : 0;
  for (int a = 0; a < 3; ++a) {
    if (shift) t = roll_left(t, a + 1, shift);
  }

  const int64_t nd = padded[0] / w, nh = padded[1] / w, nw = padded[2] / w;
  const int64_t nwin = nd * nh * nw, tok = w * w * w;
  Tensor<S> cells = permute(reshape(t, {c, nd, w, nh, w, nw, w}), {1, 3, 5, 2, 4, 6, 0});
  Tensor<S> seq = reshape(cells, {nwin, tok, c});  // (windows, T, C)

  auto split_heads = [&](const Tensor<S>& u) {
    return permute(reshape(u, {nwin, tok, static_cast<int64_t>(heads), head_dim}), {0, 2, 1, 3});
  };
  Tensor<S> q = split_heads(linear(seq, p.wq, p.bq));
  Tensor<S> k = split_heads(linear(seq, p.wk, p.bk));
  Tensor<S> v = split_heads(linear(seq, p.wv, p.bv));

  const S scale = S(1) / std::sqrt(static_cast<S>(head_dim));
  Tensor<S> probs = softmax(matmul(mul_scalar(q, scale), permute(k, {0, 1, 3, 2})));
  if (attn_probs) *attn_probs = probs;  // (windows, heads, T, T)

  Tensor<S> mixed = reshape(permute(matmul(probs, v), {0, 2, 1, 3}), {nwin, tok, c});
  Tensor<S> out = linear(mixed, p.wo, p.bo);

  Tensor<S> vol = reshape(permute(reshape(out, {nd, nh, nw, w, w, w, c}), {6, 0, 3, 1, 4, 2, 5}),
                          {c, padded[0], padded[1], padded[2]});
  for (int a = 0; a < 3; ++a) {
    if (shift) vol = roll_left(vol, a + 1, padded[a] - shift);
  }
  return slice(vol, {0, 0, 0, 0}, {c, s[1], s[2], s[3]});
}

template <typename S>
Tensor<S> mamba_swin_block(const Tensor<S>& x, const MambaSwinParams<S>& p) {
  require_volume(x, "mamba_swin_block");
  Tensor<S> mixed = mixer_scan(x, p.mixer);
  Tensor<S> attended = windowed_attention(layer_norm(mixed, p.ln_g, p.ln_b), p.window, p.heads,
                                          p.shifted, p.attn);
  return add(x, attended);
}

// ---- factories ----

namespace {

template <typename S>
ConvUnit<S> make_conv_unit(ParamStore<S>& store, const std::string& prefix,
                           const std::string& norm_name, const std::string& conv_name, int64_t c,
                           int64_t k, SplitMix64& rng) {
  ConvUnit<S> u;
  u.gamma = store.add_full(prefix + "." + norm_name + ".gamma", {c}, S(1));
  u.beta = store.add_zeros(prefix + "." + norm_name + ".beta", {c});
  u.weight =
      store.add_uniform(prefix + "." + conv_name + ".weight", {c, c, k, k, k}, c * k * k * k, rng);
  u.bias = store.add_zeros(prefix + "." + conv_name + ".bias", {c});
  return u;
}

template <typename S>
void make_dwconv(ParamStore<S>& store, const std::string& prefix, int64_t c, SplitMix64& rng,
                 Tensor<S>& weight, Tensor<S>& bias) {
  weight = store.add_uniform(prefix + ".conv.weight", {c, 1, 7, 7, 7}, 343, rng);
  bias = store.add_zeros(prefix + ".conv.bias", {c});
}

}  // namespace

template <typename S>
GscParams<S> make_gsc_params(ParamStore<S>& store, const std::string& prefix, int64_t c,
                             SplitMix64& rng) {
  GscParams<S> p;
  p.branch3 = make_conv_unit(store, prefix, "norm3", "conv3", c, 3, rng);
  p.branch1 = make_conv_unit(store, prefix, "norm1", "conv1", c, 1, rng);
  p.outer = make_conv_unit(store, prefix, "norm_out", "conv_out", c, 3, rng);
  return p;
}

template <typename S>
MixerParams<S> make_mixer_params(ParamStore<S>& store, const std::string& prefix, BlockKind kind,
                                 int64_t c, int64_t n, SplitMix64& rng) {
  switch (kind) {
    case BlockKind::TSMamba:
    case BlockKind::MambaSwin: {
      MixerScanParams<S> m;
      make_dwconv(store, prefix, c, rng, m.conv_w, m.conv_b);
      m.axial = make_ssm_params(store, prefix + ".axial", c, n, rng);
      m.coronal = make_ssm_params(store, prefix + ".coronal", c, n, rng);
      m.sagittal = make_ssm_params(store, prefix + ".sagittal", c, n, rng);
      return m;
    }
    case BlockKind::TSHydra: {
      MixerHydraParams<S> m;
      make_dwconv(store, prefix, c, rng, m.conv_w, m.conv_b);
      m.axial = make_hydra_params(store, prefix + ".axial", c, n, rng);
      m.coronal = make_hydra_params(store, prefix + ".coronal", c, n, rng);
      m.sagittal = make_hydra_params(store, prefix + ".sagittal", c, n, rng);
      return m;
    }
    case BlockKind::MambaOut: {
      MixerGatedParams<S> m;
      m.w_in = store.add_uniform(prefix + ".w_in.weight", {2 * c, c}, c, rng);
      m.b_in = store.add_zeros(prefix + ".w_in.bias", {2 * c});
      make_dwconv(store, prefix, c, rng, m.conv_w, m.conv_b);
      m.w_out = store.add_uniform(prefix + ".w_out.weight", {c, c}, c, rng);
      m.b_out = store.add_zeros(prefix + ".w_out.bias", {c});
      return m;
    }
  }
  throw DataError("make_mixer_params: invalid kind");
}

template <typename S>
TsBlockParams<S> make_tsblock_params(ParamStore<S>& store, const std::string& prefix,
                                     BlockKind kind, int64_t c, int64_t n, SplitMix64& rng) {
  TsBlockParams<S> p;
  p.gsc = make_gsc_params(store, prefix + ".gsc", c, rng);
  p.ln1_g = store.add_full(prefix + ".norm1.gamma", {c}, S(1));
  p.ln1_b = store.add_zeros(prefix + ".norm1.beta", {c});
  p.mixer = make_mixer_params(store, prefix + ".mixer", kind, c, n, rng);
  p.ln2_g = store.add_full(prefix + ".norm2.gamma", {c}, S(1));
  p.ln2_b = store.add_zeros(prefix + ".norm2.beta", {c});
  p.mlp.w1 = store.add_uniform(prefix + ".mlp.w1", {2 * c, c}, c, rng);
  p.mlp.b1 = store.add_zeros(prefix + ".mlp.b1", {2 * c});
  p.mlp.w2 = store.add_uniform(prefix + ".mlp.w2", {c, 2 * c}, 2 * c, rng);
  p.mlp.b2 = store.add_zeros(prefix + ".mlp.b2", {c});
  return p;
}

template <typename S>
AttnParams<S> make_attn_params(ParamStore<S>& store, const std::string& prefix, int64_t c,
                               SplitMix64& rng) {
  AttnParams<S> p;
  p.wq = store.add_uniform(prefix + ".wq", {c, c}, c, rng);
  p.bq = store.add_zeros(prefix + ".bq", {c});
  p.wk = store.add_uniform(prefix + ".wk", {c, c}, c, rng);
  p.bk = store.add_zeros(prefix + ".bk", {c});
  p.wv = store.add_uniform(prefix + ".wv", {c, c}, c, rng);
  p.bv = store.add_zeros(prefix + ".bv", {c});
  p.wo = store.add_uniform(prefix + ".wo", {c, c}, c, rng);
  p.bo = store.add_zeros(prefix + ".bo", {c});
  return p;
}

template <typename S>
MambaSwinParams<S> make_mamba_swin_params(ParamStore<S>& store, const std::string& prefix,
                                          int64_t c, int64_t n, int window, int heads,
                                          bool shifted, SplitMix64& rng) {
  MambaSwinParams<S> p;
  auto mix = make_mixer_params(store, prefix + ".mixer", BlockKind::MambaSwin, c, n, rng);
  p.mixer = std::get<MixerScanParams<S>>(mix);
  p.ln_g = store.add_full(prefix + ".norm.gamma", {c}, S(1));
  p.ln_b = store.add_zeros(prefix + ".norm.beta", {c});
  p.attn = make_attn_params(store, prefix + ".attn", c, rng);
  p.window = window;
  p.heads = heads;
  p.shifted = shifted;
  return p;
}

#define VOLUMIX_INST(S)                                                                          \
  template Tensor<S> gsc(const Tensor<S>&, const GscParams<S>&);                                 \
  template Tensor<S> tri_oriented_mix(                                                           \
      const Tensor<S>&, const std::function<Tensor<S>(const Tensor<S>&, int)>&);                 \
  template Tensor<S> token_mixer(const Tensor<S>&, const MixerParams<S>&);                       \
  template Tensor<S> tsblock(const Tensor<S>&, const TsBlockParams<S>&);                         \
  template Tensor<S> windowed_attention(const Tensor<S>&, int, int, bool, const AttnParams<S>&,  \
                                        Tensor<S>*);                                             \
  template Tensor<S> mamba_swin_block(const Tensor<S>&, const MambaSwinParams<S>&);              \
  template GscParams<S> make_gsc_params(ParamStore<S>&, const std::string&, int64_t,             \
                                        SplitMix64&);                                            \
  template MixerParams<S> make_mixer_params(ParamStore<S>&, const std::string&, BlockKind,       \
                                            int64_t, int64_t, SplitMix64&);                      \
  template TsBlockParams<S> make_tsblock_params(ParamStore<S>&, const std::string&, BlockKind,   \
                                                int64_t, int64_t, SplitMix64&);                  \
  template AttnParams<S> make_attn_params(ParamStore<S>&, const std::string&, int64_t,           \
                                          SplitMix64&);                                          \
  template MambaSwinParams<S> make_mamba_swin_params(ParamStore<S>&, const std::string&,         \
                                                     int64_t, int64_t, int, int, bool,           \
                                                     SplitMix64&);

VOLUMIX_INST(float)
VOLUMIX_INST(double)
#undef VOLUMIX_INST

}  // namespace volumix
