#pragma once

#include <array>
#include <utility>

#include "tdnet/core_types.hpp"
#include "tdnet/rng.hpp"

namespace tdnet {

/// Clips intensities to [level - window/2, level + window/2] and maps the
/// range affinely onto [0,1]. Defaults match CT soft-tissue windowing.
Volume window_and_normalize(const Volume& v, double window = 400.0, double level = 50.0);

/// Pads a grid to at least `target` per axis with symmetric borders
/// (lower side gets the smaller half). Returns the per-axis lower padding.
std::array<int64_t, 3> pad_to_min(Tensor& grid, const std::array<int64_t, 3>& target,
                                  float fill);
std::array<int64_t, 3> pad_to_min(ByteGrid& grid, const std::array<int64_t, 3>& target,
                                  uint8_t fill);

struct PatchPair {
  Volume image;
  ScribbleAnnotation scribble;
  std::array<int64_t, 3> origin{0, 0, 0};  // in the (possibly padded) grid
};

/// Crops a spatially aligned (image, scribble) patch at a uniformly random
/// valid origin. Inputs smaller than the patch are symmetrically padded
/// first: image with 0, scribble with the ignore code. Origin draws consume
/// one uniform integer per axis, in axis order.
PatchPair extract_random_patch(const Volume& v, const ScribbleAnnotation& s,
                               const std::array<int64_t, 3>& patch_size, Rng& rng);

}  // namespace tdnet
