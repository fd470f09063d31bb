#include "volumix/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <utility>

#include "volumix/checkpoint.hpp"
#include "volumix/ops.hpp"

namespace volumix {

template <typename S>
Tensor<S> seg_loss(const Tensor<S>& logits, const std::vector<int>& labels, S dice_weight,
                   S ce_weight) {
  if (logits.dim() < 2) throw ShapeError("seg_loss: logits must be (K, spatial...), got " + str(logits.shape()));
  const int64_t k = logits.shape()[0];
  if (k < 2) throw ShapeError("seg_loss: need at least 2 classes, got " + std::to_string(k));
  const int64_t vox = logits.numel() / k;
  if (static_cast<int64_t>(labels.size()) != vox)
    throw ShapeError("seg_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(vox) + " voxels");
  for (int64_t v = 0; v < vox; ++v)
    if (labels[v] < 0 || labels[v] >= k)
      throw DataError("seg_loss: label " + std::to_string(labels[v]) + " out of range [0, " +
                      std::to_string(k) + ") at voxel " + std::to_string(v));

  Tensor<S> ce = softmax_cross_entropy(logits, labels);

  const S smooth = S(1e-5);
  Tensor<S> probs = reshape(softmax_axis0(logits), {k, vox});
  Tensor<S> dsc_sum;
  for (int64_t cls = 1; cls < k; ++cls) {
    std::vector<S> mask(static_cast<size_t>(vox), S(0));
    int64_t count = 0;
    for (int64_t v = 0; v < vox; ++v)
      if (labels[v] == cls) {
        mask[v] = S(1);
        ++count;
      }
    Tensor<S> pc = slice(probs, {cls, 0}, {1, vox});
    Tensor<S> inter = sum(mul(pc, Tensor<S>::from({1, vox}, std::move(mask))));
    Tensor<S> num = add_scalar(mul_scalar(inter, S(2)), smooth);
    Tensor<S> den = add_scalar(sum(pc), static_cast<S>(count) + smooth);
    Tensor<S> d = mul(num, reciprocal(den));
    dsc_sum = dsc_sum.defined() ? add(dsc_sum, d) : d;
  }
  // 1 - mean soft DSC over the foreground classes.
  Tensor<S> dice_loss = add_scalar(neg(mul_scalar(dsc_sum, S(1) / static_cast<S>(k - 1))), S(1));
  return add(mul_scalar(dice_loss, dice_weight), mul_scalar(ce, ce_weight));
}

template Tensor<float> seg_loss<float>(const Tensor<float>&, const std::vector<int>&, float, float);
template Tensor<double> seg_loss<double>(const Tensor<double>&, const std::vector<int>&, double,
                                         double);

template <typename S>
Adam<S>::Adam(ParamStore<S>& store, AdamConfig cfg) : store_(&store), cfg_(cfg) {
  m_.resize(store.entries().size());
  v_.resize(store.entries().size());
  for (size_t i = 0; i < store.entries().size(); ++i) {
    const size_t n = static_cast<size_t>(store.entries()[i].second.numel());
    m_[i].assign(n, S(0));
    v_[i].assign(n, S(0));
  }
}

template <typename S>
void Adam<S>::step() {
  if (store_->entries().size() != m_.size())
    throw ShapeError("adam: parameter store grew after optimizer construction");
  ++t_;
  const S lr = static_cast<S>(cfg_.lr);
  const S b1 = static_cast<S>(cfg_.beta1);
  const S b2 = static_cast<S>(cfg_.beta2);
  const S eps = static_cast<S>(cfg_.eps);
  const S bc1 = S(1) - static_cast<S>(std::pow(cfg_.beta1, static_cast<double>(t_)));
  const S bc2 = S(1) - static_cast<S>(std::pow(cfg_.beta2, static_cast<double>(t_)));
  for (size_t i = 0; i < m_.size(); ++i) {
    Tensor<S> p = store_->entries()[i].second;
    auto& val = p.values();
    const auto& g = p.grad();
    if (!g.empty() && g.size() != val.size())
      throw ShapeError("adam: grad/value size mismatch for " + store_->entries()[i].first);
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < val.size(); ++j) {
      const S gj = g.empty() ? S(0) : g[j];
      m[j] = b1 * m[j] + (S(1) - b1) * gj;
      v[j] = b2 * v[j] + (S(1) - b2) * gj * gj;
      val[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

template <typename S>
LabelVolume predict_labels(const Tensor<S>& logits, const std::array<double, 3>& spacing) {
  if (logits.dim() != 4)
    throw ShapeError("predict_labels: expected (K,D,H,W) logits, got " + str(logits.shape()));
  const int64_t k = logits.shape()[0];
  if (k < 1 || k > 255) throw DataError("predict_labels: class count " + std::to_string(k) +
                                        " outside [1, 255]");
  const int64_t vox = logits.numel() / k;
  LabelVolume out;
  out.shape = {logits.shape()[1], logits.shape()[2], logits.shape()[3]};
  out.spacing = spacing;
  out.labels.resize(static_cast<size_t>(vox));
  const S* p = logits.data();
  for (int64_t v = 0; v < vox; ++v) {
    int64_t best = 0;
    S best_v = p[v];
    for (int64_t c = 1; c < k; ++c) {
      const S cv = p[c * vox + v];
      if (cv > best_v) {  // ties keep the lowest class id
        best_v = cv;
        best = c;
      }
    }
    out.labels[static_cast<size_t>(v)] = static_cast<uint8_t>(best);
  }
  return out;
}

template LabelVolume predict_labels<float>(const Tensor<float>&, const std::array<double, 3>&);
template LabelVolume predict_labels<double>(const Tensor<double>&, const std::array<double, 3>&);

namespace {

constexpr const char* kMetaName = "__meta__";
constexpr int kMetaVersion = 1;

std::string format_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

template <typename S>
void save_model(const SegNet<S>& net, const std::string& path, double best_val_dsc,
                int best_epoch) {
  std::vector<CkptEntry> entries = net.params.to_entries();
  CkptEntry meta;
  meta.name = kMetaName;
  auto push = [&meta](double v) { meta.values.push_back(static_cast<float>(v)); };
  push(kMetaVersion);
  push(static_cast<double>(static_cast<int>(net.cfg.variant)));
  push(static_cast<double>(net.cfg.in_channels));
  push(static_cast<double>(net.cfg.num_classes));
  push(static_cast<double>(net.cfg.stem_channels));
  push(static_cast<double>(net.cfg.state_dim));
  push(net.cfg.window);
  push(net.cfg.heads);
  push(static_cast<double>(net.cfg.stage_depths.size()));
  for (int64_t d : net.cfg.stage_depths) push(static_cast<double>(d));
  for (int64_t c : net.cfg.channels) push(static_cast<double>(c));
  push(best_val_dsc);
  push(best_epoch);
  meta.shape = {static_cast<int64_t>(meta.values.size())};
  entries.push_back(std::move(meta));
  write_ckpt(path, entries);
}

template void save_model<float>(const SegNet<float>&, const std::string&, double, int);
template void save_model<double>(const SegNet<double>&, const std::string&, double, int);

SegNet<float> load_model(const std::string& path, double* best_val_dsc, int* best_epoch) {
  const std::vector<CkptEntry> entries = read_ckpt(path);
  const CkptEntry* meta = nullptr;
  for (const auto& e : entries)
    if (e.name == kMetaName) meta = &e;
  if (!meta) throw DataError("load_model: " + path + " has no " + kMetaName + " entry");

  size_t pos = 0;
  auto next = [&]() -> double {
    if (pos >= meta->values.size())
      throw DataError("load_model: truncated " + std::string(kMetaName) + " in " + path);
    return static_cast<double>(meta->values[pos++]);
  };
  if (static_cast<int>(next()) != kMetaVersion)
    throw DataError("load_model: unsupported metadata version in " + path);
  SegConfig cfg;
  const int variant = static_cast<int>(next());
  if (variant < 0 || variant > 3)
    throw DataError("load_model: bad variant index in " + path);
  cfg.variant = static_cast<BlockKind>(variant);
  cfg.in_channels = static_cast<int64_t>(next());
  cfg.num_classes = static_cast<int64_t>(next());
  cfg.stem_channels = static_cast<int64_t>(next());
  cfg.state_dim = static_cast<int64_t>(next());
  cfg.window = static_cast<int>(next());
  cfg.heads = static_cast<int>(next());
  const int nstages = static_cast<int>(next());
  if (nstages < 1 || nstages > 16)
    throw DataError("load_model: bad stage count in " + path);
  cfg.stage_depths.clear();
  cfg.channels.clear();
  for (int i = 0; i < nstages; ++i) cfg.stage_depths.push_back(static_cast<int64_t>(next()));
  for (int i = 0; i < nstages; ++i) cfg.channels.push_back(static_cast<int64_t>(next()));
  const double dsc_val = next();
  const int epoch_val = static_cast<int>(next());
  if (pos != meta->values.size())
    throw DataError("load_model: trailing metadata values in " + path);
  if (best_val_dsc) *best_val_dsc = dsc_val;
  if (best_epoch) *best_epoch = epoch_val;

  SegNet<float> net = build_model<float>(cfg, 0);
  net.params.load_entries(entries);
  return net;
}

MetricsReport evaluate_split(const SegNet<float>& net, const std::vector<ManifestEntry>& entries,
                             const std::string& split, double tau_mm) {
  NoGradGuard ng;
  MetricsReport agg;
  int n = 0;
  for (const auto& e : entries) {
    if (e.split != split) continue;
    const LabelVolume gt = to_label_volume(read_volx(e.label));
    const Tensor<float> image = to_image_tensor<float>(read_volx(e.image));
    const Tensor<float> logits = seg_forward(net, image);
    const LabelVolume pred = predict_labels(logits, gt.spacing);
    const MetricsReport r =
        evaluate_labels(pred, gt, static_cast<int>(net.cfg.num_classes), tau_mm);
    if (n == 0) {
      agg = r;
    } else {
      for (size_t i = 0; i < agg.class_dsc.size(); ++i) {
        agg.class_dsc[i] += r.class_dsc[i];
        agg.class_miou[i] += r.class_miou[i];
        agg.class_nsd[i] += r.class_nsd[i];
      }
      agg.mean_dsc += r.mean_dsc;
      agg.mean_miou += r.mean_miou;
      agg.mean_nsd += r.mean_nsd;
      agg.n_voxels += r.n_voxels;
    }
    ++n;
  }
  if (n == 0) throw DataError("evaluate_split: manifest has no '" + split + "' entries");
  const double inv = 1.0 / n;
  for (size_t i = 0; i < agg.class_dsc.size(); ++i) {
    agg.class_dsc[i] *= inv;
    agg.class_miou[i] *= inv;
    agg.class_nsd[i] *= inv;
  }
  agg.mean_dsc *= inv;
  agg.mean_miou *= inv;
  agg.mean_nsd *= inv;
  return agg;
}

namespace {

template <typename S>
struct Sample {
  Tensor<S> image;
  std::vector<int> labels;  // flattened ground truth, for the loss
  LabelVolume gt;
};

template <typename S>
std::vector<Sample<S>> load_split(const std::vector<ManifestEntry>& entries,
                                  const std::string& split) {
  std::vector<Sample<S>> out;
  for (const auto& e : entries) {
    if (e.split != split) continue;
    Sample<S> s;
    s.image = to_image_tensor<S>(read_volx(e.image));
    s.gt = to_label_volume(read_volx(e.label));
    s.labels.assign(s.gt.labels.begin(), s.gt.labels.end());
    out.push_back(std::move(s));
  }
  return out;
}

double foreground_dsc(const LabelVolume& pred, const LabelVolume& gt, int num_classes) {
  double total = 0;
  for (int cls = 1; cls < num_classes; ++cls) total += dsc(pred, gt, cls);
  return num_classes > 1 ? total / (num_classes - 1) : 0.0;
}

template <typename S>
double validation_dsc(const SegNet<S>& net, const std::vector<Sample<S>>& val_set) {
  NoGradGuard ng;
  double total = 0;
  for (const auto& s : val_set) {
    const Tensor<S> logits = seg_forward(net, s.image);
    const LabelVolume pred = predict_labels(logits, s.gt.spacing);
    total += foreground_dsc(pred, s.gt, static_cast<int>(net.cfg.num_classes));
  }
  return total / static_cast<double>(val_set.size());
}

template <typename S>
TrainResult train_impl(const TrainConfig& cfg, const SegConfig& seg,
                       const std::string& manifest_path, const std::string& out_prefix) {
  if (cfg.epochs < 1) throw DataError("train: epochs must be >= 1");
  if (!(cfg.lr > 0)) throw DataError("train: lr must be > 0");
  if (cfg.batch_size < 1) throw DataError("train: batch_size must be >= 1");
  if (cfg.val_interval < 1) throw DataError("train: val_interval must be >= 1");

  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<ManifestEntry> manifest = read_manifest(manifest_path);
  const std::vector<Sample<S>> train_set = load_split<S>(manifest, "train");
  const std::vector<Sample<S>> val_set = load_split<S>(manifest, "val");
  if (train_set.empty()) throw DataError("train: manifest has no train entries");
  if (val_set.empty()) throw DataError("train: manifest has no val entries");

  SegNet<S> net = build_model<S>(seg, cfg.seed);
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  Adam<S> opt(net.params, adam_cfg);
  SplitMix64 shuffle_rng = SplitMix64(cfg.seed).fork(1);

  TrainResult res;
  res.ckpt_path = out_prefix + ".ckpt";
  res.log_path = out_prefix + ".csv";

  std::string log = "epoch,train_loss,val_dsc\n";
  double best = -1.0;
  int best_epoch = 0;
  const S dw = static_cast<S>(cfg.dice_weight);
  const S cw = static_cast<S>(cfg.ce_weight);

  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.below(i))]);

    double loss_sum = 0;
    int in_batch = 0;
    net.params.zero_grad();
    for (size_t si = 0; si < order.size(); ++si) {
      try {
        const Sample<S>& sample = train_set[order[si]];
        const Tensor<S> logits = seg_forward(net, sample.image);
        Tensor<S> loss = seg_loss<S>(logits, sample.labels, dw, cw);
        const double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv)) throw NumericError("train: non-finite loss");
        loss_sum += lv;
        // Mean gradient over the batch; a trailing partial batch keeps the
        // same per-sample scale.
        if (cfg.batch_size > 1) loss = mul_scalar(loss, S(1) / static_cast<S>(cfg.batch_size));
        loss.backward();
      } catch (const NumericError& err) {
        throw NumericError(std::string(err.what()) + " (epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(si + 1) + ")");
      }
      ++in_batch;
      if (in_batch == cfg.batch_size || si + 1 == order.size()) {
        opt.step();
        net.params.zero_grad();
        in_batch = 0;
      }
    }
    const double train_loss = loss_sum / static_cast<double>(train_set.size());

    std::string val_field;
    if (epoch % cfg.val_interval == 0 || epoch == cfg.epochs) {
      const double vd = validation_dsc(net, val_set);
      val_field = format_g(vd);
      if (vd > best) {
        best = vd;
        best_epoch = epoch;
        save_model(net, res.ckpt_path, best, best_epoch);
      }
    }
    log += std::to_string(epoch) + "," + format_g(train_loss) + "," + val_field + "\n";
  }

  std::ofstream f(res.log_path, std::ios::binary);
  if (!f) throw DataError("train: cannot write log " + res.log_path);
  f << log;
  f.close();

  res.best_val_dsc = best;
  res.best_epoch = best_epoch;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const SegConfig& seg, const std::string& manifest_path,
                  const std::string& out_prefix) {
  if (cfg.precision == Precision::Verify)
    return train_impl<double>(cfg, seg, manifest_path, out_prefix);
  return train_impl<float>(cfg, seg, manifest_path, out_prefix);
}

std::vector<VariantResult> compare_variants(const TrainConfig& cfg, const SegConfig& base,
                                            const std::string& manifest_path,
                                            const std::string& out_dir) {
  const std::vector<ManifestEntry> manifest = read_manifest(manifest_path);
  bool has_test = false;
  for (const auto& e : manifest) has_test = has_test || e.split == "test";
  if (!has_test) throw DataError("compare_variants: manifest has no test entries");
  std::filesystem::create_directories(out_dir);

  std::vector<VariantResult> rows;
  for (BlockKind kind :
       {BlockKind::TSMamba, BlockKind::TSHydra, BlockKind::MambaSwin, BlockKind::MambaOut}) {
    SegConfig sc = base;
    sc.variant = kind;
    VariantResult vr;
    vr.variant = block_kind_name(kind);
    vr.train_result = train(cfg, sc, manifest_path, out_dir + "/" + vr.variant);
    const SegNet<float> net = load_model(vr.train_result.ckpt_path);
    vr.params = net.params.total_params();
    vr.seconds = vr.train_result.seconds;
    vr.report = evaluate_split(net, manifest, "test", cfg.tau_mm);
    rows.push_back(std::move(vr));
  }
  return rows;
}

std::string compare_grid(const std::vector<VariantResult>& rows) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-12s %8s %8s %8s %12s %10s\n", "variant", "DSC", "mIoU", "NSD",
                "params", "seconds");
  std::string out = buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-12s %8.4f %8.4f %8.4f %12lld %10.2f\n", r.variant.c_str(),
                  r.report.mean_dsc, r.report.mean_miou, r.report.mean_nsd,
                  static_cast<long long>(r.params), r.seconds);
    out += buf;
  }
  return out;
}

std::string compare_csv(const std::vector<VariantResult>& rows) {
  std::string out = "variant,dsc,miou,nsd,params,seconds\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%lld,%.3f\n", r.variant.c_str(),
                  r.report.mean_dsc, r.report.mean_miou, r.report.mean_nsd,
                  static_cast<long long>(r.params), r.seconds);
    out += buf;
  }
  return out;
}

}  // namespace volumix
