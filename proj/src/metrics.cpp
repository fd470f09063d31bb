#include "volumix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace volumix {

namespace {

void check_pair(const LabelVolume& pred, const LabelVolume& gt, const char* who,
                bool need_spacing) {
  if (pred.shape.size() != 3 || !same_shape(pred.shape, gt.shape)) {
    throw ShapeError(std::string(who) + ": label volumes must share a (D,H,W) shape, got " +
                     str(pred.shape) + " and " + str(gt.shape));
  }
  const auto n = static_cast<size_t>(numel(pred.shape));
  if (pred.labels.size() != n || gt.labels.size() != n) {
    throw DataError(std::string(who) + ": label payload does not match shape " + str(pred.shape));
  }
  if (need_spacing) {
    for (int a = 0; a < 3; ++a) {
      if (pred.spacing[a] <= 0 || gt.spacing[a] <= 0) {
        throw DataError(std::string(who) + ": spacing must be positive");
      }
      if (pred.spacing[a] != gt.spacing[a]) {
        throw DataError(std::string(who) + ": volumes disagree on spacing along axis " +
                        std::to_string(a));
      }
    }
  }
}

struct OverlapCounts {
  int64_t p = 0, g = 0, both = 0;
};

OverlapCounts overlap(const LabelVolume& pred, const LabelVolume& gt, int cls) {
  OverlapCounts c;
  for (size_t i = 0; i < pred.labels.size(); ++i) {
    const bool ip = pred.labels[i] == cls, ig = gt.labels[i] == cls;
    c.p += ip;
    c.g += ig;
    c.both += ip && ig;
  }
  return c;
}

struct SurfacePoint {
  double z, y, x;  // mm coordinates
};

// Foreground voxels with a six-connected background neighbor; the border
// counts as background.
std::vector<SurfacePoint> surface_points(const LabelVolume& v, int cls) {
  const int64_t D = v.shape[0], H = v.shape[1], W = v.shape[2];
  std::vector<SurfacePoint> out;
  auto at = [&](int64_t z, int64_t y, int64_t x) {
    if (z < 0 || z >= D || y < 0 || y >= H || x < 0 || x >= W) return false;
    return v.labels[static_cast<size_t>((z * H + y) * W + x)] == cls;
  };
  for (int64_t z = 0; z < D; ++z) {
    for (int64_t y = 0; y < H; ++y) {
      for (int64_t x = 0; x < W; ++x) {
        if (!at(z, y, x)) continue;
        const bool boundary = !at(z - 1, y, x) || !at(z + 1, y, x) || !at(z, y - 1, x) ||
                              !at(z, y + 1, x) || !at(z, y, x - 1) || !at(z, y, x + 1);
        if (boundary) {
          out.push_back({static_cast<double>(z) * v.spacing[0],
                         static_cast<double>(y) * v.spacing[1],
                         static_cast<double>(x) * v.spacing[2]});
        }
      }
    }
  }
  return out;
}

// Count of points in `from` whose nearest point in `to` lies within tau.
// Compares squared distances; exact brute force.
int64_t within_tolerance(const std::vector<SurfacePoint>& from,
                         const std::vector<SurfacePoint>& to, double tau) {
  const double t2 = tau * tau;
  int64_t hits = 0;
  for (const auto& p : from) {
    for (const auto& q : to) {
      const double dz = p.z - q.z, dy = p.y - q.y, dx = p.x - q.x;
      if (dz * dz + dy * dy + dx * dx <= t2) {
        ++hits;
        break;
      }
    }
  }
  return hits;
}

}  // namespace

double dsc(const LabelVolume& pred, const LabelVolume& gt, int cls) {
  check_pair(pred, gt, "dsc", false);
  const auto c = overlap(pred, gt, cls);
  if (c.p == 0 && c.g == 0) return 1.0;
  if (c.p == 0 || c.g == 0) return 0.0;
  return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.p + c.g);
}

double miou(const LabelVolume& pred, const LabelVolume& gt, int cls) {
  check_pair(pred, gt, "miou", false);
  const auto c = overlap(pred, gt, cls);
  if (c.p == 0 && c.g == 0) return 1.0;
  if (c.p == 0 || c.g == 0) return 0.0;
  return static_cast<double>(c.both) / static_cast<double>(c.p + c.g - c.both);
}

double nsd(const LabelVolume& pred, const LabelVolume& gt, int cls, double tau_mm) {
  check_pair(pred, gt, "nsd", true);
  if (tau_mm <= 0) throw DataError("nsd: tolerance must be positive, got " + std::to_string(tau_mm));
  const auto sp = surface_points(pred, cls);
  const auto sg = surface_points(gt, cls);
  if (sp.empty() && sg.empty()) return 1.0;
  if (sp.empty() || sg.empty()) return 0.0;
  const int64_t hits = within_tolerance(sp, sg, tau_mm) + within_tolerance(sg, sp, tau_mm);
  return static_cast<double>(hits) / static_cast<double>(sp.size() + sg.size());
}

MetricsReport evaluate_labels(const LabelVolume& pred, const LabelVolume& gt, int num_classes,
                              double tau_mm) {
  check_pair(pred, gt, "evaluate_labels", true);
  if (num_classes < 2) throw DataError("evaluate_labels: need at least two classes");
  for (size_t i = 0; i < pred.labels.size(); ++i) {
    if (pred.labels[i] >= num_classes || gt.labels[i] >= num_classes) {
      throw DataError("evaluate_labels: label " +
                      std::to_string(std::max(pred.labels[i], gt.labels[i])) +
                      " out of range for " + std::to_string(num_classes) + " classes");
    }
  }
  MetricsReport r;
  r.num_classes = num_classes;
  r.tau_mm = tau_mm > 0 ? tau_mm
                        : std::max({pred.spacing[0], pred.spacing[1], pred.spacing[2]});
  r.n_voxels = numel(pred.shape);
  for (int c = 1; c < num_classes; ++c) {
    r.class_dsc.push_back(dsc(pred, gt, c));
    r.class_miou.push_back(miou(pred, gt, c));
    r.class_nsd.push_back(nsd(pred, gt, c, r.tau_mm));
  }
  const double k = static_cast<double>(num_classes - 1);
  for (int c = 0; c < num_classes - 1; ++c) {
    r.mean_dsc += r.class_dsc[static_cast<size_t>(c)] / k;
    r.mean_miou += r.class_miou[static_cast<size_t>(c)] / k;
    r.mean_nsd += r.class_nsd[static_cast<size_t>(c)] / k;
  }
  return r;
}

namespace {
std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}
}  // namespace

std::string metrics_csv(const std::string& variant, const MetricsReport& r, bool header) {
  std::ostringstream os;
  if (header) os << "variant,class,dsc,miou,nsd,tau_mm\n";
  for (size_t c = 0; c < r.class_dsc.size(); ++c) {
    os << variant << ',' << (c + 1) << ',' << fmt(r.class_dsc[c]) << ',' << fmt(r.class_miou[c])
       << ',' << fmt(r.class_nsd[c]) << ',' << fmt(r.tau_mm) << '\n';
  }
  os << variant << ",mean," << fmt(r.mean_dsc) << ',' << fmt(r.mean_miou) << ','
     << fmt(r.mean_nsd) << ',' << fmt(r.tau_mm) << '\n';
  return os.str();
}

std::string metrics_grid(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof(line), "%-14s %8s %8s %8s\n", "variant", "DSC", "mIoU", "NSD");
  os << line;
  for (const auto& [name, r] : rows) {
    std::snprintf(line, sizeof(line), "%-14s %8.4f %8.4f %8.4f\n", name.c_str(), r.mean_dsc,
                  r.mean_miou, r.mean_nsd);
    os << line;
  }
  return os.str();
}

}  // namespace volumix
