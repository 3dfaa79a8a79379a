#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tdnet/tensor.hpp"

namespace tdnet {

/// Label value marking unlabeled voxels in scribble files and grids.
inline constexpr uint8_t kIgnoreLabel = 255;

/// Per-voxel probability simplex tolerance used by validators.
inline constexpr double kSimplexTol = 1e-5;

/// 3D scalar image with physical voxel spacing. Spacing is ordered like the
/// grid axes: (depth, height, width), in millimetres.
struct Volume {
  Tensor data;  // (D,H,W)
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::string id;
};

/// Sparse voxel labels: values in {0..C-1} or kIgnoreLabel.
struct ScribbleAnnotation {
  ByteGrid labels;  // (D,H,W)
  int num_classes = 0;
};

/// Dense hard labels in {0..C-1}.
struct SegmentationMask {
  ByteGrid labels;  // (D,H,W)
  int num_classes = 0;
};

/// Per-voxel class probabilities, shape (C,D,H,W).
template <typename T>
struct ProbMapT {
  TensorT<T> probs;

  int64_t num_classes() const { return probs.dim(0); }
};

using ProbabilityMap = ProbMapT<float>;
using ProbabilityMapD = ProbMapT<double>;

enum class View { Axial, Sagittal, Coronal };

inline const char* view_name(View v) {
  switch (v) {
    case View::Axial: return "axial";
    case View::Sagittal: return "sagittal";
    case View::Coronal: return "coronal";
  }
  return "?";
}

inline constexpr std::array<View, 3> kAllViews{View::Axial, View::Sagittal, View::Coronal};

enum class AffinityNorm { L1, Frobenius };

/// C x C nonnegative symmetric co-activation matrix of one projected view.
template <typename T>
struct ClassAffinityT {
  TensorT<T> entries;  // (C,C)
  View view = View::Axial;
  AffinityNorm normalization = AffinityNorm::L1;
};

using ClassAffinityMatrix = ClassAffinityT<double>;

/// exp(-entropy) confidence weights, one per voxel, in [1/C, 1].
template <typename T>
struct UncertaintyWeightsT {
  TensorT<T> weights;  // (D,H,W)
};

using UncertaintyWeightMap = UncertaintyWeightsT<double>;

// ---------------------------------------------------------------------------
// Validation

inline void validate_volume(const Volume& v, bool normalized = false) {
  if (v.data.rank() != 3) throw std::invalid_argument("volume must be a 3D grid");
  for (double s : v.spacing)
    if (!(s > 0.0)) throw std::invalid_argument("volume spacing components must be > 0");
  if (normalized) {
    for (int64_t i = 0; i < v.data.numel(); ++i) {
      const float x = v.data[i];
      if (!(x >= 0.0f && x <= 1.0f))
        throw std::invalid_argument("normalized volume values must lie in [0,1]");
    }
  }
}

inline void validate_scribble(const ScribbleAnnotation& s) {
  if (s.labels.rank() != 3) throw std::invalid_argument("scribble must be a 3D grid");
  if (s.num_classes < 1 || s.num_classes > 254)
    throw std::invalid_argument("scribble num_classes must be in [1,254]");
  for (int64_t i = 0; i < s.labels.numel(); ++i) {
    const uint8_t l = s.labels[i];
    if (l != kIgnoreLabel && l >= s.num_classes)
      throw std::invalid_argument("scribble label " + std::to_string(int(l)) +
                                  " is out of range for " + std::to_string(s.num_classes) +
                                  " classes");
  }
}

template <typename T>
void validate_probability_map(const ProbMapT<T>& p, double tol = kSimplexTol) {
  if (p.probs.rank() != 4) throw std::invalid_argument("probability map must be (C,D,H,W)");
  const int64_t c_count = p.probs.dim(0);
  const int64_t vox = p.probs.numel() / c_count;
  const T* data = p.probs.data();
  for (int64_t i = 0; i < vox; ++i) {
    double sum = 0.0;
    for (int64_t c = 0; c < c_count; ++c) {
      const double x = static_cast<double>(data[c * vox + i]);
      if (!(x >= -tol && x <= 1.0 + tol))
        throw std::invalid_argument("probability entries must lie in [0,1]");
      sum += x;
    }
    if (std::abs(sum - 1.0) > tol)
      throw std::invalid_argument("per-voxel class probabilities must sum to 1");
  }
}

// ---------------------------------------------------------------------------
// Label encoding

template <typename T>
struct OneHotT {
  TensorT<T> onehot;  // (C,D,H,W); all-zero channel vector at IGNORE voxels
  ByteGrid mask;      // (D,H,W); 1 where labeled
  int64_t labeled_count = 0;
};

/// Expands scribble labels to one-hot channels plus a labeled-voxel mask.
/// IGNORE voxels get an all-zero channel vector and mask 0.
template <typename T>
OneHotT<T> one_hot_encode_scribble(const ScribbleAnnotation& s) {
  if (s.labels.rank() != 3) throw std::invalid_argument("scribble must be a 3D grid");
  const int64_t d = s.labels.dim(0), h = s.labels.dim(1), w = s.labels.dim(2);
  const int64_t vox = d * h * w;
  OneHotT<T> out;
  out.onehot = TensorT<T>({s.num_classes, d, h, w});
  out.mask = ByteGrid({d, h, w});
  T* oh = out.onehot.data();
  for (int64_t i = 0; i < vox; ++i) {
    const uint8_t l = s.labels[i];
    if (l == kIgnoreLabel) continue;
    if (l >= s.num_classes)
      throw std::invalid_argument("scribble label " + std::to_string(int(l)) +
                                  " exceeds class count " + std::to_string(s.num_classes));
    oh[static_cast<int64_t>(l) * vox + i] = T(1);
    out.mask[i] = 1;
    ++out.labeled_count;
  }
  return out;
}

/// Hard prediction: per-voxel argmax, ties broken toward the lowest class.
template <typename T>
SegmentationMask argmax_to_mask(const ProbMapT<T>& p) {
  if (p.probs.rank() != 4) throw std::invalid_argument("probability map must be (C,D,H,W)");
  const int64_t c_count = p.probs.dim(0);
  const int64_t vox = p.probs.numel() / c_count;
  SegmentationMask m;
  m.num_classes = static_cast<int>(c_count);
  m.labels = ByteGrid({p.probs.dim(1), p.probs.dim(2), p.probs.dim(3)});
  const T* data = p.probs.data();
  for (int64_t i = 0; i < vox; ++i) {
    int best = 0;
    T best_val = data[i];
    for (int64_t c = 1; c < c_count; ++c) {
      const T v = data[c * vox + i];
      if (v > best_val) {
        best_val = v;
        best = static_cast<int>(c);
      }
    }
    m.labels[i] = static_cast<uint8_t>(best);
  }
  return m;
}

}  // namespace tdnet
