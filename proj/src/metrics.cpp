#include "tdnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace tdnet {

namespace {

void check_pair(const SegmentationMask& pred, const SegmentationMask& ref) {
  if (pred.labels.rank() != 3 || ref.labels.rank() != 3)
    throw std::invalid_argument("masks must be 3D grids");
  if (!pred.labels.same_shape(ref.labels))
    throw std::invalid_argument("mask shapes differ: " + shape_str(pred.labels.shape()) + " vs " +
                                shape_str(ref.labels.shape()));
}

std::array<double, 3> to_mm(const std::array<int64_t, 3>& p, const std::array<double, 3>& sp) {
  return {static_cast<double>(p[0]) * sp[0], static_cast<double>(p[1]) * sp[1],
          static_cast<double>(p[2]) * sp[2]};
}

}  // namespace

double dice_score(const SegmentationMask& pred, const SegmentationMask& ref, int class_id) {
  check_pair(pred, ref);
  int64_t inter = 0, a = 0, b = 0;
  const uint8_t c = static_cast<uint8_t>(class_id);
  for (int64_t i = 0; i < pred.labels.numel(); ++i) {
    const bool in_a = pred.labels[i] == c;
    const bool in_b = ref.labels[i] == c;
    a += in_a;
    b += in_b;
    inter += in_a && in_b;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

std::vector<std::array<int64_t, 3>> extract_surface(const ByteGrid& labels, int class_id) {
  const int64_t dd = labels.dim(0), hh = labels.dim(1), ww = labels.dim(2);
  const uint8_t c = static_cast<uint8_t>(class_id);
  auto fg = [&](int64_t d, int64_t h, int64_t w) {
    if (d < 0 || d >= dd || h < 0 || h >= hh || w < 0 || w >= ww) return false;
    return labels.at3(d, h, w) == c;
  };
  std::vector<std::array<int64_t, 3>> surface;
  for (int64_t d = 0; d < dd; ++d)
    for (int64_t h = 0; h < hh; ++h)
      for (int64_t w = 0; w < ww; ++w) {
        if (!fg(d, h, w)) continue;
        const bool border = !fg(d - 1, h, w) || !fg(d + 1, h, w) || !fg(d, h - 1, w) ||
                            !fg(d, h + 1, w) || !fg(d, h, w - 1) || !fg(d, h, w + 1);
        if (border) surface.push_back({d, h, w});
      }
  return surface;
}

namespace metrics_detail {

KdTree3::KdTree3(std::vector<std::array<double, 3>> points) : pts_(std::move(points)) {
  order_.resize(pts_.size());
  for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int32_t>(i);
  nodes_.reserve(pts_.size());
  if (!pts_.empty()) root_ = build(0, static_cast<int64_t>(pts_.size()), 0);
}

int32_t KdTree3::build(int64_t lo, int64_t hi, int depth) {
  if (lo >= hi) return -1;
  const int axis = depth % 3;
  const int64_t mid = lo + (hi - lo) / 2;
  std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                   [&](int32_t a, int32_t b) {
                     return pts_[static_cast<size_t>(a)][static_cast<size_t>(axis)] <
                            pts_[static_cast<size_t>(b)][static_cast<size_t>(axis)];
                   });
  Node n;
  n.point = order_[static_cast<size_t>(mid)];
  n.axis = static_cast<int8_t>(axis);
  const int32_t id = static_cast<int32_t>(nodes_.size());
  nodes_.push_back(n);
  const int32_t left = build(lo, mid, depth + 1);
  const int32_t right = build(mid + 1, hi, depth + 1);
  nodes_[static_cast<size_t>(id)].left = left;
  nodes_[static_cast<size_t>(id)].right = right;
  return id;
}

void KdTree3::search(int32_t node, const std::array<double, 3>& q, double& best) const {
  if (node < 0) return;
  const Node& n = nodes_[static_cast<size_t>(node)];
  const auto& p = pts_[static_cast<size_t>(n.point)];
  const double d0 = q[0] - p[0], d1 = q[1] - p[1], d2 = q[2] - p[2];
  const double dist = d0 * d0 + d1 * d1 + d2 * d2;
  if (dist < best) best = dist;
  const double delta = q[static_cast<size_t>(n.axis)] - p[static_cast<size_t>(n.axis)];
  const int32_t near = delta < 0.0 ? n.left : n.right;
  const int32_t far = delta < 0.0 ? n.right : n.left;
  search(near, q, best);
  if (delta * delta < best) search(far, q, best);
}

double KdTree3::nearest_sq(const std::array<double, 3>& q) const {
  if (root_ < 0) throw std::logic_error("nearest_sq on an empty KdTree3");
  double best = std::numeric_limits<double>::infinity();
  search(root_, q, best);
  return best;
}

double percentile95(std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty list");
  std::sort(values.begin(), values.end());
  const double rank = 0.95 * static_cast<double>(values.size() - 1);
  const size_t lo = static_cast<size_t>(rank);
  if (lo + 1 >= values.size()) return values.back();
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

}  // namespace metrics_detail

SurfaceDistances surface_metrics(const SegmentationMask& pred, const SegmentationMask& ref,
                                 int class_id, const std::array<double, 3>& spacing) {
  check_pair(pred, ref);
  for (double s : spacing)
    if (!(s > 0.0)) throw std::invalid_argument("spacing components must be > 0");

  const auto surf_a = extract_surface(pred.labels, class_id);
  const auto surf_b = extract_surface(ref.labels, class_id);

  SurfaceDistances out;
  out.empty_pred = surf_a.empty();
  out.empty_ref = surf_b.empty();
  if (out.empty_pred && out.empty_ref) return out;

  auto to_points = [&](const std::vector<std::array<int64_t, 3>>& s) {
    std::vector<std::array<double, 3>> pts;
    pts.reserve(s.size());
    for (const auto& p : s) pts.push_back(to_mm(p, spacing));
    return pts;
  };

  if (out.empty_pred || out.empty_ref) {
    // Sentinel: the farthest grid corner from the non-empty surface,
    // measured as a point-to-set distance. Large, finite, and aggregatable.
    const auto& surf = out.empty_pred ? surf_b : surf_a;
    metrics_detail::KdTree3 tree(to_points(surf));
    const auto& g = pred.labels;
    double worst = 0.0;
    for (int corner = 0; corner < 8; ++corner) {
      const std::array<int64_t, 3> idx{(corner & 1) ? g.dim(0) - 1 : 0,
                                       (corner & 2) ? g.dim(1) - 1 : 0,
                                       (corner & 4) ? g.dim(2) - 1 : 0};
      worst = std::max(worst, tree.nearest_sq(to_mm(idx, spacing)));
    }
    out.asd_mm = out.hd95_mm = std::sqrt(worst);
    return out;
  }

  metrics_detail::KdTree3 tree_a(to_points(surf_a));
  metrics_detail::KdTree3 tree_b(to_points(surf_b));

  auto directed = [&](const std::vector<std::array<int64_t, 3>>& from,
                      const metrics_detail::KdTree3& to) {
    std::vector<double> dists;
    dists.reserve(from.size());
    for (const auto& p : from) dists.push_back(std::sqrt(to.nearest_sq(to_mm(p, spacing))));
    double sum = 0.0;
    for (double d : dists) sum += d;
    const double mean = sum / static_cast<double>(dists.size());
    return std::pair<double, double>(mean, metrics_detail::percentile95(dists));
  };

  const auto [mean_ab, p95_ab] = directed(surf_a, tree_b);
  const auto [mean_ba, p95_ba] = directed(surf_b, tree_a);
  out.asd_mm = 0.5 * (mean_ab + mean_ba);
  out.hd95_mm = std::max(p95_ab, p95_ba);
  return out;
}

CaseMetrics evaluate_case(const SegmentationMask& pred, const SegmentationMask& ref,
                          int num_classes, const std::array<double, 3>& spacing) {
  check_pair(pred, ref);
  if (num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
  CaseMetrics out;
  double sd = 0.0, sa = 0.0, sh = 0.0;
  for (int c = 1; c < num_classes; ++c) {
    ClassMetrics m;
    m.class_id = c;
    m.dsc = dice_score(pred, ref, c);
    const SurfaceDistances s = surface_metrics(pred, ref, c, spacing);
    m.asd_mm = s.asd_mm;
    m.hd95_mm = s.hd95_mm;
    if (s.empty_pred && s.empty_ref)
      m.note = "empty-pair";
    else if (s.empty_pred)
      m.note = "empty-pred";
    else if (s.empty_ref)
      m.note = "empty-ref";
    sd += m.dsc;
    sa += m.asd_mm;
    sh += m.hd95_mm;
    out.per_class.push_back(std::move(m));
  }
  const double n = static_cast<double>(num_classes - 1);
  out.mean_dsc = sd / n;
  out.mean_asd_mm = sa / n;
  out.mean_hd95_mm = sh / n;
  return out;
}

}  // namespace tdnet
