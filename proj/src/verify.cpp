#include "volumix/verify.hpp"

#include <cmath>
#include <functional>

#include "volumix/gradcheck.hpp"
#include "volumix/metrics.hpp"
#include "volumix/segnet.hpp"
#include "volumix/trainer.hpp"

namespace volumix {

namespace {

using D = double;
using Inputs = std::vector<Tensor<D>>;

Tensor<D> rand_tensor(const Shape& shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<D> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<D>::from(shape, std::move(v));
}

struct Fixture {
  std::function<Tensor<D>(const Inputs&)> fn;
  Inputs inputs;
  double eps;
  double tolerance;
};

// Each fixture perturbs the block input plus a spread of parameter tensors,
// mapped to a scalar through a fixed random projection.
Fixture make_fixture(const std::string& name, uint64_t seed) {
  SplitMix64 rng(seed);

  if (name == "gsc") {
    auto store = std::make_shared<ParamStore<D>>();
    auto p = make_gsc_params(*store, "g", 4, rng);
    auto x = rand_tensor({4, 4, 4, 4}, rng);
    auto w = rand_tensor({4, 4, 4, 4}, rng);
    auto fn = [store, p, w](const Inputs& in) {
      GscParams<D> q = p;
      q.branch3.weight = in[1];
      q.branch1.gamma = in[2];
      q.outer.bias = in[3];
      return sum(mul(gsc(in[0], q), w));
    };
    return {fn, {x, p.branch3.weight, p.branch1.gamma, p.outer.bias}, 1e-6, 1e-4};
  }

  if (name == "tom") {
    auto store = std::make_shared<ParamStore<D>>();
    SsmParams<D> p = make_ssm_params(*store, "s", int64_t{2}, int64_t{2}, rng);
    auto x = rand_tensor({2, 2, 2, 2}, rng);
    auto w = rand_tensor({2, 2, 2, 2}, rng);
    auto fn = [store, p, w](const Inputs& in) {
      SsmParams<D> q = p;
      q.W_C = in[1];
      auto mixer = [&q](const Tensor<D>& seq, int) { return ssm_mix(seq, q); };
      return sum(mul(tri_oriented_mix<D>(in[0], mixer), w));
    };
    return {fn, {x, p.W_C}, 1e-6, 1e-4};
  }

  if (name == "tsmamba" || name == "tshydra" || name == "mambaout") {
    const BlockKind kind = block_kind_from_name(name);
    auto store = std::make_shared<ParamStore<D>>();
    auto p = make_tsblock_params(*store, "b", kind, 2, 2, rng);
    auto x = rand_tensor({2, 2, 2, 2}, rng);
    auto w = rand_tensor({2, 2, 2, 2}, rng);
    Tensor<D> mix_param;
    if (kind == BlockKind::TSMamba) {
      mix_param = std::get<MixerScanParams<D>>(p.mixer).axial.W_dt;
    } else if (kind == BlockKind::TSHydra) {
      mix_param = std::get<MixerHydraParams<D>>(p.mixer).axial.W_fb;
    } else {
      mix_param = std::get<MixerGatedParams<D>>(p.mixer).w_in;
    }
    auto fn = [store, p, w, kind](const Inputs& in) {
      TsBlockParams<D> q = p;
      q.gsc.branch3.weight = in[1];
      q.mlp.w1 = in[2];
      if (kind == BlockKind::TSMamba) {
        std::get<MixerScanParams<D>>(q.mixer).axial.W_dt = in[3];
      } else if (kind == BlockKind::TSHydra) {
        std::get<MixerHydraParams<D>>(q.mixer).axial.W_fb = in[3];
      } else {
        std::get<MixerGatedParams<D>>(q.mixer).w_in = in[3];
      }
      return sum(mul(tsblock(in[0], q), w));
    };
    return {fn, {x, p.gsc.branch3.weight, p.mlp.w1, mix_param}, 1e-6, 1e-4};
  }

  if (name == "mamba_swin") {
    auto store = std::make_shared<ParamStore<D>>();
    auto p = make_mamba_swin_params(*store, "m", int64_t{2}, int64_t{2}, 2, 2, false, rng);
    auto x = rand_tensor({2, 2, 2, 2}, rng);
    auto w = rand_tensor({2, 2, 2, 2}, rng);
    auto fn = [store, p, w](const Inputs& in) {
      MambaSwinParams<D> q = p;
      q.attn.wv = in[1];
      q.mixer.axial.W_C = in[2];
      return sum(mul(mamba_swin_block(in[0], q), w));
    };
    return {fn, {x, p.attn.wv, p.mixer.axial.W_C}, 1e-5, 1e-4};
  }

  if (name == "fue") {
    auto x = rand_tensor({3, 2, 2, 2}, rng);
    auto w = rand_tensor({3, 2, 2, 2}, rng);
    auto fn = [w](const Inputs& in) { return sum(mul(fue(in[0]), w)); };
    return {fn, {x}, 1e-6, 1e-4};
  }

  if (name == "decoder") {
    auto store = std::make_shared<ParamStore<D>>();
    DecoderParams<D> p;
    p.up_w = store->add_uniform("d.up.weight", {4, 2, 3, 3, 3}, 4 * 27, rng);
    p.up_b = store->add_zeros("d.up.bias", {2});
    p.conv_w = store->add_uniform("d.conv.weight", {2, 4, 3, 3, 3}, 4 * 27, rng);
    p.conv_b = store->add_zeros("d.conv.bias", {2});
    p.gamma = store->add_full("d.norm.gamma", {2}, D(1));
    p.beta = store->add_zeros("d.norm.beta", {2});
    auto d_prev = rand_tensor({4, 2, 2, 2}, rng);
    auto skip = rand_tensor({2, 4, 4, 4}, rng);
    auto w = rand_tensor({2, 4, 4, 4}, rng);
    auto fn = [store, p, w](const Inputs& in) {
      DecoderParams<D> q = p;
      q.up_w = in[2];
      q.gamma = in[3];
      return sum(mul(decoder_block(in[0], in[1], q), w));
    };
    return {fn, {d_prev, skip, p.up_w, p.gamma}, 1e-6, 1e-4};
  }

  if (name == "loss_model") {
    SegConfig cfg;
    cfg.variant = BlockKind::TSMamba;
    cfg.stem_channels = 4;
    cfg.channels = {4, 8};
    cfg.stage_depths = {1, 1};
    cfg.state_dim = 2;
    cfg.window = 2;
    cfg.heads = 2;
    auto net = std::make_shared<SegNet<D>>(build_model<D>(cfg, seed));
    auto volume = rand_tensor({1, 8, 8, 8}, rng);
    auto labels = std::make_shared<std::vector<int>>(512);
    for (auto& l : *labels) l = static_cast<int>(rng.below(2));
    (*labels)[0] = 0;
    (*labels)[1] = 1;
    auto fn = [net, volume, labels](const Inputs& in) {
      SegNet<D> m = *net;
      m.head_b = in[0];
      m.stem_pw_b = in[1];
      m.decoders.back().gamma = in[2];
      m.head_w = in[3];
      return seg_loss(seg_forward(m, volume), *labels);
    };
    return {fn,
            {net->head_b, net->stem_pw_b, net->decoders.back().gamma, net->head_w},
            1e-5,
            1e-3};
  }

  throw DataError("gradcheck: unknown module '" + name + "'");
}

}  // namespace

const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> names = {
      "gsc",  "tom",     "tsmamba", "tshydra",    "mamba_swin",
      "mambaout", "fue", "decoder", "loss_model"};
  return names;
}

std::vector<ModuleCheck> run_gradchecks(const std::string& module, uint64_t seed) {
  std::vector<std::string> todo;
  if (module == "all") {
    todo = gradcheck_modules();
  } else {
    todo.push_back(module);
  }
  std::vector<ModuleCheck> out;
  for (const auto& name : todo) {
    Fixture fx = make_fixture(name, seed + out.size());
    ModuleCheck mc;
    mc.name = name;
    mc.tolerance = fx.tolerance;
    mc.max_rel_err = grad_check_report<D>(fx.fn, fx.inputs, fx.eps).max_rel_err;
    mc.pass = mc.max_rel_err < mc.tolerance;
    out.push_back(std::move(mc));
  }
  return out;
}

MetricsCheck run_metrics_checks(uint64_t seed, int cases) {
  if (cases < 1) throw DataError("metrics check: cases must be >= 1");
  MetricsCheck res;
  res.cases = cases;
  for (int c = 0; c < cases; ++c) {
    SplitMix64 rng(seed + static_cast<uint64_t>(c));
    const Shape shape{6, 6, 6};
    auto mask = [&rng, &shape]() {
      LabelVolume v;
      v.shape = shape;
      v.labels.resize(static_cast<size_t>(numel(shape)));
      for (auto& l : v.labels) l = rng.uniform() < 0.3 ? 1 : 0;
      return v;
    };
    const LabelVolume a = mask();
    const LabelVolume b = mask();
    const double d = dsc(a, b, 1);
    const double i = miou(a, b, 1);
    res.max_identity_err = std::max(res.max_identity_err, std::abs(d - 2.0 * i / (1.0 + i)));
    double prev = -1.0;
    for (double tau : {0.5, 1.0, 1.5, 2.0, 3.0, 6.0}) {
      const double v = nsd(a, b, 1, tau);
      if (v < prev) ++res.monotonicity_violations;
      prev = v;
    }
  }
  return res;
}

}  // namespace volumix
