#pragma once

// Deterministic synthetic 3D phantoms and the VOLX volume file format.
//
// small_roi: smooth background texture plus 1-3 small irregular foreground
// blobs (unions of warped ellipsoids) labeled 1, with intensity-similar but
// unlabeled distractor blobs. The foreground voxel fraction is enforced
// exactly: each voxel gets the minimal blob scale that covers it, and the
// blob scale is chosen as an order statistic of that field, so the count
// lands inside the requested range by construction.
//
// multi_organ: one large smooth structure per foreground class, placed on
// separated octant centers with geometrically decreasing target sizes, so
// the largest/smallest class-size ratio stays >= 4.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "volumix/metrics.hpp"
#include "volumix/tensor.hpp"

namespace volumix {

enum class Regime { SmallRoi, MultiOrgan };

const char* regime_name(Regime r);
Regime regime_from_name(const std::string& name);

struct PhantomSpec {
  Regime regime = Regime::SmallRoi;
  int64_t d = 32, h = 32, w = 32;
  int num_classes = 2;
  uint64_t seed = 0;
  double noise_std = 0.05;
  double roi_frac_lo = 0.001, roi_frac_hi = 0.015;  // small_roi foreground band
  int n_distractors = 2;
};

// VOLX: magic "VOLX", version u8=1, dtype u8 (0: f32 image, 1: u8 labels),
// channels u32, D,H,W u32, spacing 3 x f32, then the little-endian payload,
// channel-major then row-major D,H,W.
struct VolumeData {
  uint8_t dtype = 0;
  int64_t channels = 1, d = 0, h = 0, w = 0;
  std::array<float, 3> spacing = {1.f, 1.f, 1.f};
  std::vector<float> f32;   // dtype 0 payload
  std::vector<uint8_t> u8;  // dtype 1 payload
};

void write_volx(const std::string& path, const VolumeData& v);
VolumeData read_volx(const std::string& path);

LabelVolume to_label_volume(const VolumeData& v);
template <typename S>
Tensor<S> to_image_tensor(const VolumeData& v);

struct Phantom {
  VolumeData image;   // f32, 1 channel
  VolumeData labels;  // u8, 1 channel
};

Phantom gen_phantom(const PhantomSpec& spec);

struct ManifestEntry {
  std::string split;  // train | val | test
  std::string image;  // resolved path
  std::string label;  // resolved path
};

// Writes n_train+n_val+n_test phantoms (volume i uses seed spec.seed+i) plus
// a manifest ("split<TAB>image<TAB>label" per line) into dir; returns the
// manifest path.
std::string dataset(const PhantomSpec& spec, int n_train, int n_val, int n_test,
                    const std::string& dir);

// Parses a manifest; relative paths are resolved against the manifest's
// directory.
std::vector<ManifestEntry> read_manifest(const std::string& path);

}  // namespace volumix
