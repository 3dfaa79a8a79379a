#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "tdnet/core_types.hpp"
#include "tdnet/dataset.hpp"

namespace tdnet {

/// Peak magnitude of the smooth low-frequency bias field added to phantoms.
inline constexpr double kPhantomBiasAmplitude = 0.05;

struct Phantom {
  Volume image;            // intensities in [0,1]
  SegmentationMask dense;  // exact labels
  std::vector<double> organ_intensity;  // per class 1..C-1, before bias/noise
};

/// Places C-1 non-overlapping random ellipsoids of distinct mean intensity
/// and decreasing scale on a darker background, then adds a smooth bias
/// field and Gaussian noise (sigma = noise_sigma) and clamps to [0,1].
/// Reproducible from the seed. Throws std::runtime_error when the ellipsoids
/// cannot be placed without overlap after bounded retries.
Phantom generate_phantom(uint64_t seed, const std::array<int64_t, 3>& size, int num_classes,
                         double noise_sigma);

/// Draws scribbles on a random fraction of the axial slices that contain
/// foreground: per selected slice, a 1-voxel-wide random walk inside the
/// (2D-eroded) region of every present foreground class plus one background
/// walk. Every labeled voxel agrees with the dense labels by construction.
/// A class whose selected slices all erode away falls back to walking the
/// raw region; a class that ends up with no labels at all gets the longest
/// voxel run on its largest-area slice.
ScribbleAnnotation synthesize_scribbles(const SegmentationMask& dense, uint64_t seed,
                                        double slice_fraction = 0.3, int64_t max_walk_steps = 60);

/// Generates `count` phantom cases under out_dir as {id}_img / {id}_lab /
/// {id}_scr NIfTI files, splits them train/val/test (70/10/20, at least one
/// training case) and writes manifest.json. Validates before touching the
/// filesystem, so a bad count leaves no partial output.
DatasetManifest write_phantom_dataset(const std::string& out_dir, int count, uint64_t seed,
                                      const std::array<int64_t, 3>& size, int num_classes,
                                      double noise_sigma, double slice_fraction = 0.3);

}  // namespace tdnet
