#include "tdnet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "tdnet/nifti.hpp"
#include "tdnet/rng.hpp"

namespace tdnet {

namespace {

// Organ appearance at the 64-voxel reference scale. Semi-axes shrink per
// organ so the classes span clearly different sizes, while the smallest
// still covers a bit over 1% of a 64-cube.
constexpr double kSemiAxisLo = 11.5;
constexpr double kSemiAxisHi = 14.5;
constexpr double kOrganShrink = 0.10;   // per-organ scale step
constexpr double kOrganShrinkFloor = 0.55;
constexpr double kBackgroundIntensity = 0.25;
constexpr double kOrganIntensityLo = 0.45;
constexpr double kOrganIntensityHi = 0.80;
constexpr double kIntensityJitter = 0.02;
constexpr int kPlacementRetries = 200;
constexpr int kPhantomRestarts = 50;

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> semi;
};

bool paint_if_free(ByteGrid& labels, const Ellipsoid& e, uint8_t value) {
  const int64_t dd = labels.dim(0), hh = labels.dim(1), ww = labels.dim(2);
  std::array<int64_t, 3> lo, hi;
  for (int a = 0; a < 3; ++a) {
    lo[static_cast<size_t>(a)] = std::max<int64_t>(
        0, static_cast<int64_t>(std::floor(e.center[static_cast<size_t>(a)] -
                                           e.semi[static_cast<size_t>(a)])));
    const int64_t dim = a == 0 ? dd : (a == 1 ? hh : ww);
    hi[static_cast<size_t>(a)] = std::min<int64_t>(
        dim - 1, static_cast<int64_t>(std::ceil(e.center[static_cast<size_t>(a)] +
                                                e.semi[static_cast<size_t>(a)])));
  }
  auto inside = [&](int64_t d, int64_t h, int64_t w) {
    const double zd = (static_cast<double>(d) - e.center[0]) / e.semi[0];
    const double zh = (static_cast<double>(h) - e.center[1]) / e.semi[1];
    const double zw = (static_cast<double>(w) - e.center[2]) / e.semi[2];
    return zd * zd + zh * zh + zw * zw <= 1.0;
  };
  for (int64_t d = lo[0]; d <= hi[0]; ++d)
    for (int64_t h = lo[1]; h <= hi[1]; ++h)
      for (int64_t w = lo[2]; w <= hi[2]; ++w)
        if (inside(d, h, w) && labels.at3(d, h, w) != 0) return false;
  for (int64_t d = lo[0]; d <= hi[0]; ++d)
    for (int64_t h = lo[1]; h <= hi[1]; ++h)
      for (int64_t w = lo[2]; w <= hi[2]; ++w)
        if (inside(d, h, w)) labels.at3(d, h, w) = value;
  return true;
}

}  // namespace

Phantom generate_phantom(uint64_t seed, const std::array<int64_t, 3>& size, int num_classes,
                         double noise_sigma) {
  if (num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
  for (int64_t s : size)
    if (s < 16) throw std::invalid_argument("phantom size must be at least 16 per axis");
  if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be nonnegative");

  const int organs = num_classes - 1;
  Phantom out;
  out.dense.num_classes = num_classes;

  Rng rng(Rng::derive(seed, rng_stream::kPhantom, 0));

  out.organ_intensity.resize(static_cast<size_t>(organs));
  for (int k = 0; k < organs; ++k) {
    const double base =
        organs == 1 ? 0.5 * (kOrganIntensityLo + kOrganIntensityHi)
                    : kOrganIntensityLo + (kOrganIntensityHi - kOrganIntensityLo) *
                                              static_cast<double>(k) /
                                              static_cast<double>(organs - 1);
    out.organ_intensity[static_cast<size_t>(k)] =
        base + rng.uniform(-kIntensityJitter, kIntensityJitter);
  }

  bool placed = false;
  for (int restart = 0; restart < kPhantomRestarts && !placed; ++restart) {
    out.dense.labels = ByteGrid({size[0], size[1], size[2]});
    placed = true;
    for (int k = 1; k <= organs && placed; ++k) {
      const double shrink =
          std::max(kOrganShrinkFloor, 1.0 - kOrganShrink * static_cast<double>(k - 1));
      bool ok = false;
      for (int attempt = 0; attempt < kPlacementRetries && !ok; ++attempt) {
        Ellipsoid e;
        bool fits = true;
        for (int a = 0; a < 3; ++a) {
          const double scale = static_cast<double>(size[static_cast<size_t>(a)]) / 64.0;
          e.semi[static_cast<size_t>(a)] =
              rng.uniform(kSemiAxisLo, kSemiAxisHi) * shrink * scale;
          const double margin = e.semi[static_cast<size_t>(a)] + 1.0;
          const double hi = static_cast<double>(size[static_cast<size_t>(a)] - 1) - margin;
          if (hi < margin) {
            fits = false;
            break;
          }
          e.center[static_cast<size_t>(a)] = rng.uniform(margin, hi);
        }
        if (!fits) continue;
        ok = paint_if_free(out.dense.labels, e, static_cast<uint8_t>(k));
      }
      if (!ok) placed = false;
    }
  }
  if (!placed)
    throw std::runtime_error("could not place " + std::to_string(organs) +
                             " non-overlapping organs in a " + std::to_string(size[0]) + "x" +
                             std::to_string(size[1]) + "x" + std::to_string(size[2]) +
                             " phantom after bounded retries");

  // Smooth bias: a random coarse 3x3x3 grid, trilinearly upsampled.
  std::array<double, 27> coarse;
  for (auto& c : coarse) c = rng.uniform(-kPhantomBiasAmplitude, kPhantomBiasAmplitude);
  auto bias_at = [&](int64_t d, int64_t h, int64_t w) {
    auto coord = [&](int64_t i, int64_t n) {
      return n == 1 ? 0.0 : 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    };
    const double fd = coord(d, size[0]), fh = coord(h, size[1]), fw = coord(w, size[2]);
    const int64_t d0 = std::min<int64_t>(1, static_cast<int64_t>(fd));
    const int64_t h0 = std::min<int64_t>(1, static_cast<int64_t>(fh));
    const int64_t w0 = std::min<int64_t>(1, static_cast<int64_t>(fw));
    const double td = fd - static_cast<double>(d0), th = fh - static_cast<double>(h0),
                 tw = fw - static_cast<double>(w0);
    double acc = 0.0;
    for (int dd = 0; dd < 2; ++dd)
      for (int hh = 0; hh < 2; ++hh)
        for (int ww = 0; ww < 2; ++ww) {
          const double wt = (dd ? td : 1.0 - td) * (hh ? th : 1.0 - th) * (ww ? tw : 1.0 - tw);
          acc += wt * coarse[static_cast<size_t>(((d0 + dd) * 3 + (h0 + hh)) * 3 + (w0 + ww))];
        }
    return acc;
  };

  out.image.data = Tensor({size[0], size[1], size[2]});
  out.image.spacing = {1.0, 1.0, 1.0};
  int64_t i = 0;
  for (int64_t d = 0; d < size[0]; ++d)
    for (int64_t h = 0; h < size[1]; ++h)
      for (int64_t w = 0; w < size[2]; ++w, ++i) {
        const uint8_t l = out.dense.labels[i];
        double v = l == 0 ? kBackgroundIntensity
                          : out.organ_intensity[static_cast<size_t>(l - 1)];
        v += bias_at(d, h, w);
        if (noise_sigma > 0.0) v += rng.normal(0.0, noise_sigma);
        out.image.data[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return out;
}

namespace {

struct SliceMask {
  std::vector<uint8_t> in;  // H*W membership
  std::vector<int64_t> voxels;  // linear in-slice offsets h*W+w
};

// Region of class c on slice z, optionally eroded by one 4-connected step.
// Out-of-bounds neighbors read as background.
SliceMask slice_region(const ByteGrid& labels, int64_t z, uint8_t c, bool erode) {
  const int64_t hh = labels.dim(1), ww = labels.dim(2);
  SliceMask m;
  m.in.assign(static_cast<size_t>(hh * ww), 0);
  auto lab = [&](int64_t h, int64_t w) -> uint8_t {
    if (h < 0 || h >= hh || w < 0 || w >= ww) return 0;
    return labels.at3(z, h, w);
  };
  for (int64_t h = 0; h < hh; ++h)
    for (int64_t w = 0; w < ww; ++w) {
      if (lab(h, w) != c) continue;
      if (erode) {
        const bool interior = lab(h - 1, w) == c && lab(h + 1, w) == c && lab(h, w - 1) == c &&
                              lab(h, w + 1) == c;
        if (!interior) continue;
      }
      m.in[static_cast<size_t>(h * ww + w)] = 1;
      m.voxels.push_back(h * ww + w);
    }
  return m;
}

void walk_region(ByteGrid& scr, const SliceMask& region, int64_t z, int64_t width, uint8_t c,
                 int64_t max_steps, Rng& rng) {
  if (region.voxels.empty()) return;
  const int64_t steps =
      std::min<int64_t>(max_steps,
                        std::max<int64_t>(8, static_cast<int64_t>(region.voxels.size()) / 3));
  int64_t cur = region.voxels[static_cast<size_t>(
      rng.uniform_int(0, static_cast<int64_t>(region.voxels.size()) - 1))];
  scr[z * scr.dim(1) * scr.dim(2) + cur] = c;
  const int64_t offs[4] = {-width, width, -1, 1};
  for (int64_t s = 0; s < steps; ++s) {
    int64_t cand[4];
    int n = 0;
    const int64_t w = cur % width;
    for (int k = 0; k < 4; ++k) {
      const int64_t nxt = cur + offs[k];
      if (k >= 2 && ((k == 2 && w == 0) || (k == 3 && w == width - 1))) continue;
      if (nxt < 0 || nxt >= static_cast<int64_t>(region.in.size())) continue;
      if (!region.in[static_cast<size_t>(nxt)]) continue;
      cand[n++] = nxt;
    }
    if (n == 0) break;
    cur = cand[rng.uniform_int(0, n - 1)];
    scr[z * scr.dim(1) * scr.dim(2) + cur] = c;
  }
}

}  // namespace

ScribbleAnnotation synthesize_scribbles(const SegmentationMask& dense, uint64_t seed,
                                        double slice_fraction, int64_t max_walk_steps) {
  if (dense.labels.rank() != 3) throw std::invalid_argument("dense mask must be a 3D grid");
  if (dense.num_classes < 2) throw std::invalid_argument("dense mask needs at least 2 classes");
  if (!(slice_fraction > 0.0 && slice_fraction <= 1.0))
    throw std::invalid_argument("slice_fraction must lie in (0, 1]");
  if (max_walk_steps < 1) throw std::invalid_argument("max_walk_steps must be at least 1");

  const int64_t dd = dense.labels.dim(0), hh = dense.labels.dim(1), ww = dense.labels.dim(2);
  ScribbleAnnotation out;
  out.num_classes = dense.num_classes;
  out.labels = ByteGrid::full({dd, hh, ww}, kIgnoreLabel);

  Rng rng(Rng::derive(seed, rng_stream::kScribble, 0));

  // Slices that contain any foreground, and the classes present per slice.
  std::vector<std::vector<uint8_t>> present(static_cast<size_t>(dd));
  std::vector<int64_t> candidates;
  for (int64_t z = 0; z < dd; ++z) {
    std::vector<uint8_t> seen(static_cast<size_t>(dense.num_classes), 0);
    const uint8_t* row = dense.labels.data() + z * hh * ww;
    for (int64_t i = 0; i < hh * ww; ++i) {
      const uint8_t l = row[i];
      if (l >= dense.num_classes)
        throw std::invalid_argument("dense label " + std::to_string(int(l)) +
                                    " is out of range for " +
                                    std::to_string(dense.num_classes) + " classes");
      if (l != 0) seen[l] = 1;
    }
    for (int c = 1; c < dense.num_classes; ++c)
      if (seen[static_cast<size_t>(c)]) present[static_cast<size_t>(z)].push_back(
          static_cast<uint8_t>(c));
    if (!present[static_cast<size_t>(z)].empty()) candidates.push_back(z);
  }

  std::vector<int64_t> selected;
  if (!candidates.empty()) {
    const auto want = std::max<int64_t>(
        1, std::llround(slice_fraction * static_cast<double>(candidates.size())));
    for (int64_t i = static_cast<int64_t>(candidates.size()) - 1; i > 0; --i)
      std::swap(candidates[static_cast<size_t>(i)],
                candidates[static_cast<size_t>(rng.uniform_int(0, i))]);
    selected.assign(candidates.begin(),
                    candidates.begin() + std::min<int64_t>(want,
                                                           static_cast<int64_t>(candidates.size())));
    std::sort(selected.begin(), selected.end());
  }

  for (int64_t z : selected) {
    for (uint8_t c : present[static_cast<size_t>(z)]) {
      SliceMask region = slice_region(dense.labels, z, c, true);
      if (region.voxels.empty()) region = slice_region(dense.labels, z, c, false);
      walk_region(out.labels, region, z, ww, c, max_walk_steps, rng);
    }
    SliceMask bg = slice_region(dense.labels, z, 0, true);
    if (bg.voxels.empty()) bg = slice_region(dense.labels, z, 0, false);
    walk_region(out.labels, bg, z, ww, 0, max_walk_steps, rng);
  }

  // Any class that never got a voxel (all its slices were unselected) falls
  // back to the longest run on its largest-area slice.
  std::vector<int64_t> counts(static_cast<size_t>(dense.num_classes), 0);
  for (int64_t i = 0; i < out.labels.numel(); ++i)
    if (out.labels[i] != kIgnoreLabel) ++counts[out.labels[i]];
  for (int c = 1; c < dense.num_classes; ++c) {
    if (counts[static_cast<size_t>(c)] > 0) continue;
    int64_t best_z = -1, best_area = 0;
    for (int64_t z = 0; z < dd; ++z) {
      int64_t area = 0;
      const uint8_t* row = dense.labels.data() + z * hh * ww;
      for (int64_t i = 0; i < hh * ww; ++i) area += row[i] == c;
      if (area > best_area) {
        best_area = area;
        best_z = z;
      }
    }
    if (best_z < 0) continue;  // class absent from the volume entirely
    int64_t run_h = 0, run_w = 0, run_len = 0;
    for (int64_t h = 0; h < hh; ++h) {
      int64_t start = -1;
      for (int64_t w = 0; w <= ww; ++w) {
        const bool in = w < ww && dense.labels.at3(best_z, h, w) == c;
        if (in && start < 0) start = w;
        if (!in && start >= 0) {
          if (w - start > run_len) {
            run_len = w - start;
            run_h = h;
            run_w = start;
          }
          start = -1;
        }
      }
    }
    const int64_t take = std::min<int64_t>(run_len, max_walk_steps + 1);
    for (int64_t w = 0; w < take; ++w)
      out.labels.at3(best_z, run_h, run_w + w) = static_cast<uint8_t>(c);
  }
  return out;
}

DatasetManifest write_phantom_dataset(const std::string& out_dir, int count, uint64_t seed,
                                      const std::array<int64_t, 3>& size, int num_classes,
                                      double noise_sigma, double slice_fraction) {
  if (count < 1) throw std::invalid_argument("count must be at least 1");
  if (out_dir.empty()) throw std::invalid_argument("out_dir must be set");

  const int n_val = static_cast<int>(std::llround(0.1 * count));
  int n_test = static_cast<int>(std::llround(0.2 * count));
  int n_train = count - n_val - n_test;
  if (n_train < 1) {
    n_test -= 1 - n_train;
    n_train = 1;
  }

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  DatasetManifest m;
  m.root = out_dir;
  m.num_classes = num_classes;
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "case_%03d", i);
    const uint64_t case_seed = Rng::derive(seed, rng_stream::kPhantom, static_cast<uint64_t>(i));
    Phantom p = generate_phantom(case_seed, size, num_classes, noise_sigma);
    p.image.id = id;
    const ScribbleAnnotation scr = synthesize_scribbles(p.dense, case_seed, slice_fraction);

    CaseEntry e;
    e.id = id;
    e.image = std::string(id) + "_img.nii.gz";
    e.labels = std::string(id) + "_lab.nii.gz";
    e.scribbles = std::string(id) + "_scr.nii.gz";
    e.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    nifti::write_volume(m.resolve(e.image), p.image);
    nifti::write_labels(m.resolve(e.labels), p.dense.labels, p.image.spacing);
    nifti::write_labels(m.resolve(e.scribbles), scr.labels, p.image.spacing);
    m.cases.push_back(std::move(e));
  }
  save_manifest(m, out_dir);
  return m;
}

}  // namespace tdnet
