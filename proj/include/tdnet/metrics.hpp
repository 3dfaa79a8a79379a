#pragma once

#include <array>
#include <string>
#include <vector>

#include "tdnet/core_types.hpp"

namespace tdnet {

/// 2|A∩B| / (|A|+|B|) for the binary masks of class_id. Both masks empty
/// yields 1.0 by convention.
double dice_score(const SegmentationMask& pred, const SegmentationMask& ref, int class_id);

/// Border voxels of the class mask: foreground voxels with at least one
/// six-connected background neighbor. Out-of-bounds counts as background, so
/// voxels on the grid boundary are surface. Points come out in scan order
/// (d, then h, then w).
std::vector<std::array<int64_t, 3>> extract_surface(const ByteGrid& labels, int class_id);

struct SurfaceDistances {
  double asd_mm = 0.0;
  double hd95_mm = 0.0;
  bool empty_pred = false;
  bool empty_ref = false;
};

/// ASD: mean of the two directed average surface distances. HD95: max of the
/// two directed 95th percentiles (linear interpolation on the sorted
/// distances). Distances are Euclidean between voxel centers in mm.
///
/// If exactly one mask is empty, both metrics return a sentinel: the largest
/// distance from any corner voxel of the grid to the non-empty surface. Both
/// masks empty yields (0, 0). The empty_* flags report which case applied.
SurfaceDistances surface_metrics(const SegmentationMask& pred, const SegmentationMask& ref,
                                 int class_id, const std::array<double, 3>& spacing);

struct ClassMetrics {
  int class_id = 0;
  double dsc = 0.0;
  double asd_mm = 0.0;
  double hd95_mm = 0.0;
  std::string note;  // "", "empty-pair", "empty-pred", "empty-ref"
};

struct CaseMetrics {
  std::vector<ClassMetrics> per_class;  // foreground classes 1..C-1
  double mean_dsc = 0.0;
  double mean_asd_mm = 0.0;
  double mean_hd95_mm = 0.0;
};

/// All three metrics for every foreground class plus unweighted means.
CaseMetrics evaluate_case(const SegmentationMask& pred, const SegmentationMask& ref,
                          int num_classes, const std::array<double, 3>& spacing);

namespace metrics_detail {

/// Static nearest-neighbor index over 3D points (median-split KD tree).
class KdTree3 {
 public:
  explicit KdTree3(std::vector<std::array<double, 3>> points);

  /// Squared Euclidean distance from q to the nearest stored point.
  double nearest_sq(const std::array<double, 3>& q) const;

  bool empty() const { return pts_.empty(); }

 private:
  struct Node {
    int32_t left = -1, right = -1;
    int32_t point = -1;
    int8_t axis = 0;
  };
  int32_t build(int64_t lo, int64_t hi, int depth);
  void search(int32_t node, const std::array<double, 3>& q, double& best) const;

  std::vector<std::array<double, 3>> pts_;
  std::vector<int32_t> order_;
  std::vector<Node> nodes_;
  int32_t root_ = -1;
};

/// 95th percentile with linear interpolation; sorts its argument.
double percentile95(std::vector<double>& values);

}  // namespace metrics_detail

}  // namespace tdnet
