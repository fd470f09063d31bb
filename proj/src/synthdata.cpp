#include "volumix/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace volumix {

const char* regime_name(Regime r) {
  return r == Regime::SmallRoi ? "small_roi" : "multi_organ";
}

Regime regime_from_name(const std::string& name) {
  if (name == "small_roi") return Regime::SmallRoi;
  if (name == "multi_organ") return Regime::MultiOrgan;
  throw DataError("unknown phantom regime '" + name + "' (expected small_roi|multi_organ)");
}

// ---- VOLX ----

namespace {

void put_u8(std::string& out, uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  void need(size_t n, const char* what) {
    if (pos + n > buf.size()) throw DataError(std::string("VOLX: truncated ") + what);
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<uint8_t>(buf[pos++]);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
    return v;
  }
  float f32(const char* what) {
    uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

int64_t volume_voxels(const VolumeData& v) { return v.channels * v.d * v.h * v.w; }

}  // namespace

void write_volx(const std::string& path, const VolumeData& v) {
  if (v.dtype > 1) throw DataError("VOLX: dtype must be 0 (f32) or 1 (u8)");
  if (v.channels < 1 || v.d < 1 || v.h < 1 || v.w < 1) {
    throw DataError("VOLX: channels and extents must be positive");
  }
  const auto n = static_cast<size_t>(volume_voxels(v));
  if (v.dtype == 0 && (v.f32.size() != n || !v.u8.empty())) {
    throw DataError("VOLX: f32 payload size does not match header of " + path);
  }
  if (v.dtype == 1 && (v.u8.size() != n || !v.f32.empty())) {
    throw DataError("VOLX: u8 payload size does not match header of " + path);
  }
  std::string out;
  out += "VOLX";
  put_u8(out, 1);
  put_u8(out, v.dtype);
  put_u32(out, static_cast<uint32_t>(v.channels));
  put_u32(out, static_cast<uint32_t>(v.d));
  put_u32(out, static_cast<uint32_t>(v.h));
  put_u32(out, static_cast<uint32_t>(v.w));
  for (float s : v.spacing) put_f32(out, s);
  if (v.dtype == 0) {
    for (float x : v.f32) put_f32(out, x);
  } else {
    out.append(reinterpret_cast<const char*>(v.u8.data()), v.u8.size());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("VOLX: cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("VOLX: write failed: " + path);
}

VolumeData read_volx(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("VOLX: cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf};
  r.need(4, "magic");
  if (buf.compare(0, 4, "VOLX") != 0) throw DataError("VOLX: bad magic in " + path);
  r.pos = 4;
  const uint8_t version = r.u8("version");
  if (version != 1) throw DataError("VOLX: unsupported version " + std::to_string(version));
  VolumeData v;
  v.dtype = r.u8("dtype");
  if (v.dtype > 1) throw DataError("VOLX: bad dtype in " + path);
  v.channels = r.u32("channels");
  v.d = r.u32("extent");
  v.h = r.u32("extent");
  v.w = r.u32("extent");
  if (v.channels < 1 || v.d < 1 || v.h < 1 || v.w < 1) {
    throw DataError("VOLX: zero extent in " + path);
  }
  for (auto& s : v.spacing) s = r.f32("spacing");
  const auto n = static_cast<size_t>(volume_voxels(v));
  if (v.dtype == 0) {
    v.f32.resize(n);
    for (auto& x : v.f32) x = r.f32("payload");
  } else {
    r.need(n, "payload");
    v.u8.assign(buf.begin() + static_cast<std::ptrdiff_t>(r.pos),
                buf.begin() + static_cast<std::ptrdiff_t>(r.pos + n));
    r.pos += n;
  }
  if (r.pos != buf.size()) throw DataError("VOLX: trailing bytes in " + path);
  return v;
}

LabelVolume to_label_volume(const VolumeData& v) {
  if (v.dtype != 1 || v.channels != 1) {
    throw DataError("to_label_volume: expected a single-channel u8 volume");
  }
  LabelVolume lv;
  lv.shape = {v.d, v.h, v.w};
  lv.labels = v.u8;
  lv.spacing = {v.spacing[0], v.spacing[1], v.spacing[2]};
  return lv;
}

template <typename S>
Tensor<S> to_image_tensor(const VolumeData& v) {
  if (v.dtype != 0) throw DataError("to_image_tensor: expected an f32 volume");
  std::vector<S> vals(v.f32.size());
  for (size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<S>(v.f32[i]);
  return Tensor<S>::from({v.channels, v.d, v.h, v.w}, std::move(vals));
}

template Tensor<float> to_image_tensor(const VolumeData&);
template Tensor<double> to_image_tensor(const VolumeData&);

// ---- phantom generation ----

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Ellipsoid {
  double cz, cy, cx;  // center, voxel units
  double rz, ry, rx;  // radii at scale 1, voxel units
};

// One smooth sine displacement per axis, shared by all blobs of a phantom.
struct WarpField {
  std::vector<double> dz, dy, dx;
};

WarpField make_warp(const PhantomSpec& sp, SplitMix64& rng) {
  struct Wave {
    double amp, kz, ky, kx, phase;
  };
  Wave waves[3];
  for (auto& wv : waves) {
    wv.amp = rng.uniform(0.5, 1.5);
    wv.kz = rng.uniform(1.0, 2.0) * 2.0 * kPi / static_cast<double>(sp.d);
    wv.ky = rng.uniform(1.0, 2.0) * 2.0 * kPi / static_cast<double>(sp.h);
    wv.kx = rng.uniform(1.0, 2.0) * 2.0 * kPi / static_cast<double>(sp.w);
    wv.phase = rng.uniform(0.0, 2.0 * kPi);
  }
  const auto n = static_cast<size_t>(sp.d * sp.h * sp.w);
  WarpField wf;
  wf.dz.resize(n);
  wf.dy.resize(n);
  wf.dx.resize(n);
  size_t i = 0;
  for (int64_t z = 0; z < sp.d; ++z) {
    for (int64_t y = 0; y < sp.h; ++y) {
      for (int64_t x = 0; x < sp.w; ++x, ++i) {
        auto eval = [&](const Wave& wv) {
          return wv.amp * std::sin(wv.kz * static_cast<double>(z) +
                                   wv.ky * static_cast<double>(y) +
                                   wv.kx * static_cast<double>(x) + wv.phase);
        };
        wf.dz[i] = eval(waves[0]);
        wf.dy[i] = eval(waves[1]);
        wf.dx[i] = eval(waves[2]);
      }
    }
  }
  return wf;
}

// Minimal blob scale that covers each voxel: the blob at scale s is
// { p : min_e sqrt(sum(((p+disp(p)-c_e)/r_e)^2)) <= s }.
std::vector<double> min_cover_scale(const PhantomSpec& sp, const WarpField& wf,
                                    const std::vector<Ellipsoid>& blob) {
  const auto n = static_cast<size_t>(sp.d * sp.h * sp.w);
  std::vector<double> smin(n, 1e300);
  size_t i = 0;
  for (int64_t z = 0; z < sp.d; ++z) {
    for (int64_t y = 0; y < sp.h; ++y) {
      for (int64_t x = 0; x < sp.w; ++x, ++i) {
        const double qz = static_cast<double>(z) + wf.dz[i];
        const double qy = static_cast<double>(y) + wf.dy[i];
        const double qx = static_cast<double>(x) + wf.dx[i];
        for (const auto& e : blob) {
          const double az = (qz - e.cz) / e.rz;
          const double ay = (qy - e.cy) / e.ry;
          const double ax = (qx - e.cx) / e.rx;
          smin[i] = std::min(smin[i], std::sqrt(az * az + ay * ay + ax * ax));
        }
      }
    }
  }
  return smin;
}

// Coarse value grid upsampled trilinearly: the smooth background texture.
struct BgTexture {
  int64_t gd, gh, gw;
  std::vector<double> grid;
  double cell;

  double at(double z, double y, double x) const {
    auto sample = [&](double p, int64_t g, double& frac) {
      double u = p / cell;
      auto i = static_cast<int64_t>(std::floor(u));
      i = std::clamp<int64_t>(i, 0, g - 2);
      frac = std::clamp(u - static_cast<double>(i), 0.0, 1.0);
      return i;
    };
    double fz, fy, fx;
    const int64_t iz = sample(z, gd, fz), iy = sample(y, gh, fy), ix = sample(x, gw, fx);
    auto g = [&](int64_t a, int64_t b, int64_t c) {
      return grid[static_cast<size_t>((a * gh + b) * gw + c)];
    };
    auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
    const double c00 = lerp(g(iz, iy, ix), g(iz, iy, ix + 1), fx);
    const double c01 = lerp(g(iz, iy + 1, ix), g(iz, iy + 1, ix + 1), fx);
    const double c10 = lerp(g(iz + 1, iy, ix), g(iz + 1, iy, ix + 1), fx);
    const double c11 = lerp(g(iz + 1, iy + 1, ix), g(iz + 1, iy + 1, ix + 1), fx);
    return lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz);
  }
};

BgTexture make_bg(const PhantomSpec& sp, double amp, SplitMix64& rng) {
  BgTexture bg;
  bg.cell = 8.0;
  bg.gd = sp.d / 8 + 2;
  bg.gh = sp.h / 8 + 2;
  bg.gw = sp.w / 8 + 2;
  bg.grid.resize(static_cast<size_t>(bg.gd * bg.gh * bg.gw));
  for (auto& v : bg.grid) v = rng.uniform(-amp, amp);
  return bg;
}

std::vector<Ellipsoid> draw_blob(const PhantomSpec& sp, SplitMix64& rng, double center_lo,
                                 double center_hi) {
  const double ext[3] = {static_cast<double>(sp.d), static_cast<double>(sp.h),
                         static_cast<double>(sp.w)};
  const double cz = rng.uniform(center_lo, center_hi) * ext[0];
  const double cy = rng.uniform(center_lo, center_hi) * ext[1];
  const double cx = rng.uniform(center_lo, center_hi) * ext[2];
  const auto m = static_cast<int>(2 + rng.below(3));
  std::vector<Ellipsoid> blob;
  for (int e = 0; e < m; ++e) {
    Ellipsoid el;
    el.cz = cz + rng.uniform(-0.1, 0.1) * ext[0];
    el.cy = cy + rng.uniform(-0.1, 0.1) * ext[1];
    el.cx = cx + rng.uniform(-0.1, 0.1) * ext[2];
    el.rz = rng.uniform(0.06, 0.15) * ext[0];
    el.ry = rng.uniform(0.06, 0.15) * ext[1];
    el.rx = rng.uniform(0.06, 0.15) * ext[2];
    blob.push_back(el);
  }
  return blob;
}

// Picks the scale that makes exactly `target` voxels covered (an order
// statistic of smin); verifies the resulting count stays inside [lo, hi].
double scale_for_count(const std::vector<double>& smin, int64_t target, int64_t lo, int64_t hi) {
  std::vector<double> sorted(smin);
  std::sort(sorted.begin(), sorted.end());
  double s = sorted[static_cast<size_t>(target - 1)];
  auto count = static_cast<int64_t>(std::upper_bound(sorted.begin(), sorted.end(), s) -
                                    sorted.begin());
  while (count > hi && target > lo) {
    --target;
    s = sorted[static_cast<size_t>(target - 1)];
    count = static_cast<int64_t>(std::upper_bound(sorted.begin(), sorted.end(), s) -
                                 sorted.begin());
  }
  if (count < lo || count > hi) {
    throw DataError("phantom: cannot hit the requested foreground fraction");
  }
  return s;
}

void validate_spec(const PhantomSpec& sp) {
  if (sp.d < 16 || sp.h < 16 || sp.w < 16) {
    throw DataError("phantom: size must be at least 16 per axis");
  }
  if (sp.num_classes < 2) throw DataError("phantom: need at least two classes");
  if (sp.noise_std < 0) throw DataError("phantom: noise_std must be non-negative");
  if (sp.regime == Regime::SmallRoi) {
    if (!(sp.roi_frac_lo > 0 && sp.roi_frac_lo < sp.roi_frac_hi && sp.roi_frac_hi < 1)) {
      throw DataError("phantom: roi fraction range must satisfy 0 < lo < hi < 1");
    }
    if (sp.n_distractors < 0) throw DataError("phantom: n_distractors must be non-negative");
  }
}

Phantom assemble(const PhantomSpec& sp, const std::vector<uint8_t>& labels,
                 const std::vector<double>& intensity, const BgTexture& bg, SplitMix64& rng) {
  Phantom ph;
  const float sz = sp.regime == Regime::SmallRoi ? 3.75f : 1.0f;
  ph.image.dtype = 0;
  ph.image.channels = 1;
  ph.image.d = sp.d;
  ph.image.h = sp.h;
  ph.image.w = sp.w;
  ph.image.spacing = {sz, 1.f, 1.f};
  ph.labels = ph.image;
  ph.labels.dtype = 1;
  ph.labels.u8 = labels;
  ph.image.f32.resize(labels.size());
  size_t i = 0;
  for (int64_t z = 0; z < sp.d; ++z) {
    for (int64_t y = 0; y < sp.h; ++y) {
      for (int64_t x = 0; x < sp.w; ++x, ++i) {
        const double v = bg.at(static_cast<double>(z), static_cast<double>(y),
                               static_cast<double>(x)) +
                         intensity[i] + sp.noise_std * rng.normal();
        ph.image.f32[i] = static_cast<float>(v);
      }
    }
  }
  return ph;
}

Phantom gen_small_roi(const PhantomSpec& sp, SplitMix64& rng) {
  const int64_t n = sp.d * sp.h * sp.w;
  const auto lo = std::max<int64_t>(
      1, static_cast<int64_t>(std::ceil(sp.roi_frac_lo * static_cast<double>(n))));
  const auto hi = static_cast<int64_t>(std::floor(sp.roi_frac_hi * static_cast<double>(n)));
  if (lo > hi) {
    throw DataError("phantom: roi fraction range admits no voxel count at size " +
                    std::to_string(n));
  }

  const WarpField wf = make_warp(sp, rng);
  const BgTexture bg = make_bg(sp, 0.3, rng);

  const auto n_blobs = static_cast<int>(1 + rng.below(3));
  std::vector<Ellipsoid> targets;
  for (int b = 0; b < n_blobs; ++b) {
    auto blob = draw_blob(sp, rng, 0.25, 0.75);
    targets.insert(targets.end(), blob.begin(), blob.end());
  }
  std::vector<std::vector<Ellipsoid>> distractors;
  for (int b = 0; b < sp.n_distractors; ++b) distractors.push_back(draw_blob(sp, rng, 0.15, 0.85));
  const int64_t target_count = lo + static_cast<int64_t>(rng.below(static_cast<uint64_t>(hi - lo + 1)));

  const auto smin = min_cover_scale(sp, wf, targets);
  const double s = scale_for_count(smin, target_count, lo, hi);

  std::vector<uint8_t> labels(static_cast<size_t>(n), 0);
  std::vector<double> intensity(static_cast<size_t>(n), 0.0);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (smin[i] <= s) {
      labels[i] = 1;
      intensity[i] = 0.8;
    }
  }
  for (const auto& blob : distractors) {
    const double sd = s * rng.uniform(0.7, 1.3);
    const auto dmin = min_cover_scale(sp, wf, blob);
    for (size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == 0 && dmin[i] <= sd) intensity[i] = 0.55;
    }
  }
  return assemble(sp, labels, intensity, bg, rng);
}

Phantom gen_multi_organ(const PhantomSpec& sp, SplitMix64& rng) {
  const int k = sp.num_classes - 1;
  if (k > 8) throw DataError("phantom: multi_organ supports at most 8 foreground classes");
  const int64_t n = sp.d * sp.h * sp.w;

  const WarpField wf = make_warp(sp, rng);
  const BgTexture bg = make_bg(sp, 0.2, rng);

  // Octant anchors ordered so consecutive (large) structures sit far apart.
  static const int kOct[8][3] = {{-1, -1, -1}, {1, 1, 1},  {-1, 1, 1},  {1, -1, -1},
                                 {-1, -1, 1},  {1, 1, -1}, {-1, 1, -1}, {1, -1, 1}};
  const double ext[3] = {static_cast<double>(sp.d), static_cast<double>(sp.h),
                         static_cast<double>(sp.w)};

  std::vector<std::vector<Ellipsoid>> structures;
  for (int i = 0; i < k; ++i) {
    const double cz = ext[0] * (0.5 + 0.25 * kOct[i][0]) + rng.uniform(-1.0, 1.0) * ext[0] / 16.0;
    const double cy = ext[1] * (0.5 + 0.25 * kOct[i][1]) + rng.uniform(-1.0, 1.0) * ext[1] / 16.0;
    const double cx = ext[2] * (0.5 + 0.25 * kOct[i][2]) + rng.uniform(-1.0, 1.0) * ext[2] / 16.0;
    const auto m = static_cast<int>(1 + rng.below(2));
    std::vector<Ellipsoid> blob;
    for (int e = 0; e < m; ++e) {
      Ellipsoid el;
      el.cz = cz + rng.uniform(-0.03, 0.03) * ext[0];
      el.cy = cy + rng.uniform(-0.03, 0.03) * ext[1];
      el.cx = cx + rng.uniform(-0.03, 0.03) * ext[2];
      el.rz = rng.uniform(0.6, 1.0) * ext[0];
      el.ry = rng.uniform(0.6, 1.0) * ext[1];
      el.rx = rng.uniform(0.6, 1.0) * ext[2];
      blob.push_back(el);
    }
    structures.push_back(std::move(blob));
  }

  // Geometric size ladder: largest/smallest target ratio 8 keeps the measured
  // ratio comfortably above 4 even after assignment collisions.
  std::vector<uint8_t> labels(static_cast<size_t>(n), 0);
  std::vector<double> intensity(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < k; ++i) {
    const double frac =
        k == 1 ? 0.06 : 0.12 * std::pow(8.0, -static_cast<double>(i) / static_cast<double>(k - 1));
    const auto want = std::max<int64_t>(1, static_cast<int64_t>(std::llround(
                                               frac * static_cast<double>(n))));
    const auto smin = min_cover_scale(sp, wf, structures[static_cast<size_t>(i)]);
    std::vector<std::pair<double, int64_t>> free;
    free.reserve(static_cast<size_t>(n));
    for (int64_t v = 0; v < n; ++v) {
      if (labels[static_cast<size_t>(v)] == 0) free.emplace_back(smin[static_cast<size_t>(v)], v);
    }
    if (static_cast<int64_t>(free.size()) < want) {
      throw DataError("phantom: multi_organ structures exceed the volume");
    }
    std::nth_element(free.begin(), free.begin() + static_cast<std::ptrdiff_t>(want - 1),
                     free.end());
    std::sort(free.begin(), free.begin() + static_cast<std::ptrdiff_t>(want));
    for (int64_t j = 0; j < want; ++j) {
      const auto v = static_cast<size_t>(free[static_cast<size_t>(j)].second);
      labels[v] = static_cast<uint8_t>(i + 1);
      intensity[v] = 0.2 + 0.15 * static_cast<double>(i + 1);
    }
  }
  return assemble(sp, labels, intensity, bg, rng);
}

}  // namespace

Phantom gen_phantom(const PhantomSpec& spec) {
  validate_spec(spec);
  SplitMix64 rng(spec.seed);
  return spec.regime == Regime::SmallRoi ? gen_small_roi(spec, rng)
                                         : gen_multi_organ(spec, rng);
}

// ---- dataset + manifest ----

std::string dataset(const PhantomSpec& spec, int n_train, int n_val, int n_test,
                    const std::string& dir) {
  if (n_train < 1 || n_val < 1 || n_test < 1) {
    throw DataError("dataset: every split needs at least one volume");
  }
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("dataset: cannot create directory " + dir + ": " + ec.message());

  std::string manifest;
  const int total = n_train + n_val + n_test;
  for (int i = 0; i < total; ++i) {
    PhantomSpec sp = spec;
    sp.seed = spec.seed + static_cast<uint64_t>(i);
    const Phantom ph = gen_phantom(sp);
    char img[32], lbl[32];
    std::snprintf(img, sizeof(img), "img_%03d.volx", i);
    std::snprintf(lbl, sizeof(lbl), "lbl_%03d.volx", i);
    write_volx((fs::path(dir) / img).string(), ph.image);
    write_volx((fs::path(dir) / lbl).string(), ph.labels);
    const char* split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    manifest += std::string(split) + "\t" + img + "\t" + lbl + "\n";
  }
  const std::string mpath = (fs::path(dir) / "manifest.tsv").string();
  std::ofstream f(mpath, std::ios::trunc);
  if (!f) throw DataError("dataset: cannot write manifest " + mpath);
  f << manifest;
  if (!f) throw DataError("dataset: manifest write failed: " + mpath);
  return mpath;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  namespace fs = std::filesystem;
  std::ifstream f(path);
  if (!f) throw DataError("manifest: cannot open " + path);
  const fs::path base = fs::path(path).parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  auto resolve = [&](const std::string& p) {
    fs::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      throw DataError("manifest: line " + std::to_string(lineno) +
                      " must be split<TAB>image<TAB>label");
    }
    const std::string split = line.substr(0, t1);
    if (split != "train" && split != "val" && split != "test") {
      throw DataError("manifest: line " + std::to_string(lineno) + " has unknown split '" +
                      split + "'");
    }
    out.push_back({split, resolve(line.substr(t1 + 1, t2 - t1 - 1)), resolve(line.substr(t2 + 1))});
  }
  if (out.empty()) throw DataError("manifest: no entries in " + path);
  return out;
}

}  // namespace volumix
