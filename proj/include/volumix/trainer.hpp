#pragma once

// Desk-scale training and evaluation: soft-Dice + cross-entropy loss, Adam,
// seeded epoch shuffling, periodic validation with best-checkpoint tracking,
// CSV logging, and the four-variant comparison harness.

#include <array>

#include "volumix/metrics.hpp"
#include "volumix/segnet.hpp"
#include "volumix/synthdata.hpp"

namespace volumix {

enum class Precision { Train, Verify };  // float / double graphs

struct TrainConfig {
  int epochs = 50;
  double lr = 1e-3;
  int batch_size = 1;  // volumes accumulated per optimizer step
  double dice_weight = 1.0;
  double ce_weight = 1.0;
  int val_interval = 5;  // epochs between validations (the last epoch always validates)
  uint64_t seed = 0;
  Precision precision = Precision::Train;
  double tau_mm = 0.0;  // NSD tolerance for reports; 0 -> max voxel spacing
};

// dice_weight * (1 - mean over foreground classes of soft DSC, smooth 1e-5)
// + ce_weight * mean voxelwise cross-entropy. logits: (K, D, H, W), K >= 2.
template <typename S>
Tensor<S> seg_loss(const Tensor<S>& logits, const std::vector<int>& labels,
                   S dice_weight = S(1), S ce_weight = S(1));

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
class Adam {
 public:
  explicit Adam(ParamStore<S>& store, AdamConfig cfg = {});
  // Applies the bias-corrected update from the parameters' current grads
  // (an unmaterialized grad counts as zero) and advances the step count.
  void step();

 private:
  ParamStore<S>* store_;
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<S>> m_, v_;
};

// Per-voxel argmax over the class axis (ties -> lowest class id).
template <typename S>
LabelVolume predict_labels(const Tensor<S>& logits, const std::array<double, 3>& spacing);

struct TrainResult {
  std::string ckpt_path;  // best-val-DSC checkpoint
  std::string log_path;   // CSV epoch,train_loss,val_dsc
  double best_val_dsc = 0.0;
  int best_epoch = 0;
  double seconds = 0.0;
};

// Trains on the manifest's train split, validates on its val split, and writes
// <out_prefix>.ckpt / <out_prefix>.csv. Aborts with NumericError (naming the
// epoch and step) if the loss goes non-finite.
TrainResult train(const TrainConfig& cfg, const SegConfig& seg, const std::string& manifest_path,
                  const std::string& out_prefix);

// Checkpoints carry the SegConfig and best-val metadata in a side-channel
// entry, so a model is reconstructible from the file alone.
template <typename S>
void save_model(const SegNet<S>& net, const std::string& path, double best_val_dsc,
                int best_epoch);
SegNet<float> load_model(const std::string& path, double* best_val_dsc = nullptr,
                         int* best_epoch = nullptr);

// Mean per-volume metrics over one manifest split.
MetricsReport evaluate_split(const SegNet<float>& net, const std::vector<ManifestEntry>& entries,
                             const std::string& split, double tau_mm = 0.0);

struct VariantResult {
  std::string variant;
  MetricsReport report;  // test split of the manifest
  int64_t params = 0;
  double seconds = 0.0;
  TrainResult train_result;
};

// Trains all four block variants with one TrainConfig and evaluates each on
// the test split; artifacts land at out_dir/<variant>.{ckpt,csv}.
std::vector<VariantResult> compare_variants(const TrainConfig& cfg, const SegConfig& base,
                                            const std::string& manifest_path,
                                            const std::string& out_dir);

// Table-shaped summary: one row per variant x {DSC, mIoU, NSD, params, seconds}.
std::string compare_grid(const std::vector<VariantResult>& rows);
std::string compare_csv(const std::vector<VariantResult>& rows);

}  // namespace volumix
