#pragma once

// Segmentation metrics over integer label volumes: Dice similarity (DSC),
// mean intersection-over-union (mIoU), and normalized surface distance (NSD).
//
// Conventions: a class empty in both volumes scores 1.0, empty in exactly one
// scores 0.0. NSD surfaces are foreground voxels with at least one
// six-connected background neighbor (the volume border counts as background);
// distances are exact Euclidean distances in millimetres.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "volumix/common.hpp"

namespace volumix {

struct LabelVolume {
  Shape shape;                             // (D, H, W)
  std::vector<uint8_t> labels;             // row-major, values in [0, num_classes)
  std::array<double, 3> spacing = {1, 1, 1};  // mm per voxel step along D,H,W
};

double dsc(const LabelVolume& pred, const LabelVolume& gt, int cls);
double miou(const LabelVolume& pred, const LabelVolume& gt, int cls);
double nsd(const LabelVolume& pred, const LabelVolume& gt, int cls, double tau_mm);

struct MetricsReport {
  int num_classes = 2;
  double tau_mm = 1.0;
  int64_t n_voxels = 0;
  // Indexed by foreground class (class 1 first).
  std::vector<double> class_dsc, class_miou, class_nsd;
  double mean_dsc = 0, mean_miou = 0, mean_nsd = 0;
};

// tau_mm <= 0 selects the default tolerance: 1.0 x the maximum spacing.
MetricsReport evaluate_labels(const LabelVolume& pred, const LabelVolume& gt, int num_classes,
                              double tau_mm = 0.0);

// CSV rows "variant,class,dsc,miou,nsd,tau_mm" with one row per foreground
// class plus a mean row. With header=true the column header line is included.
std::string metrics_csv(const std::string& variant, const MetricsReport& r, bool header);

// Plain-text grid, one row per (variant, report) pair.
std::string metrics_grid(const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace volumix
