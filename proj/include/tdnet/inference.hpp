#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "tdnet/core_types.hpp"
#include "tdnet/network.hpp"

namespace tdnet {

/// Window origins along one axis: 0, stride, 2·stride, ... with the last
/// origin shifted flush to size - patch so no voxel is left uncovered.
/// Requires 1 <= stride <= patch <= size.
std::vector<int64_t> window_origins(int64_t size, int64_t patch, int64_t stride);

/// Tiles the volume with overlapping patches, averages the primary decoder's
/// probabilities over the per-voxel cover count. Volumes smaller than the
/// patch are zero-padded and the prediction is cropped back. stride of 0 on
/// an axis means patch/2 (rounded down, at least 1). Deterministic.
ProbabilityMap sliding_window_predict(const TDNet& net, const Volume& v,
                                      const std::array<int64_t, 3>& patch_size,
                                      std::array<int64_t, 3> stride = {0, 0, 0});

}  // namespace tdnet
