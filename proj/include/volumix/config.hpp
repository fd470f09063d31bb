#pragma once

// Flat key=value run configuration shared by every CLI command. One struct
// carries the union of the phantom, model, and trainer knobs; a config file
// sets fields by name, command-line flags override file values, and every
// command prints the digest of the effective configuration so runs are
// attributable and bitwise reproducible.

#include <cstdint>
#include <string>
#include <vector>

#include "volumix/segnet.hpp"
#include "volumix/synthdata.hpp"
#include "volumix/trainer.hpp"

namespace volumix {

struct RunConfig {
  // data generation
  std::string regime = "small_roi";
  int64_t extent_d = 32, extent_h = 32, extent_w = 32;
  int num_classes = 2;
  double noise_std = 0.05;
  double roi_frac_lo = 0.001, roi_frac_hi = 0.015;
  int n_distractors = 2;
  int n_train = 32, n_val = 4, n_test = 4;
  // model
  std::string variant = "tsmamba";
  int64_t in_channels = 1;
  int64_t stem_channels = 48;
  std::vector<int64_t> stage_depths = {1, 1, 1, 1};
  std::vector<int64_t> channels = {48, 96, 192, 384};
  int64_t state_dim = 4;
  int window = 4;
  int heads = 4;
  // training
  int epochs = 50;
  double lr = 1e-3;
  int batch_size = 1;
  double dice_weight = 1.0, ce_weight = 1.0;
  int val_interval = 5;
  std::string precision = "train";  // train (f32) | verify (f64)
  double tau_mm = 0.0;
  // shared
  uint64_t seed = 0;
  std::string manifest;  // dataset manifest path
};

// The recognized keys, in canonical order.
const std::vector<std::string>& config_keys();

// Assigns one key=value pair; DataError on an unknown key or a bad value.
void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value);

// Parses "key = value" lines ('#' starts a comment) on top of `base`;
// errors name the offending "path:line".
RunConfig load_config_file(const std::string& path, RunConfig base = {});

// Canonical "key=value\n" listing of every field, fixed order.
std::string serialize_config(const RunConfig& cfg);

// FNV-1a 64 over the canonical serialization plus the worker-thread count.
uint64_t config_digest(const RunConfig& cfg);

// Views of the flat bag as the module-level configs (values validated here).
PhantomSpec phantom_of(const RunConfig& cfg);
SegConfig model_of(const RunConfig& cfg);
TrainConfig train_of(const RunConfig& cfg);

}  // namespace volumix
