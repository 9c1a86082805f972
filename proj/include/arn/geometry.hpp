#pragma once

// Axis-aligned box arithmetic and the absolute/relative location encodings
// used to build proposal location features.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace arn {

/// Axis-aligned rectangle in image pixel coordinates, corner form.
struct Box {
  double x_tl = 0.0;
  double y_tl = 0.0;
  double x_br = 0.0;
  double y_br = 0.0;

  double width() const { return x_br - x_tl; }
  double height() const { return y_br - y_tl; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_tl + x_br); }
  double center_y() const { return 0.5 * (y_tl + y_br); }

  bool valid() const { return x_tl <= x_br && y_tl <= y_br; }

  void validate() const {
    if (!valid()) {
      throw std::invalid_argument("Box: corners out of order (x_tl " +
                                  std::to_string(x_tl) + " > x_br " +
                                  std::to_string(x_br) + " or y_tl " +
                                  std::to_string(y_tl) + " > y_br " +
                                  std::to_string(y_br) + ")");
    }
  }
};

/// One candidate region: box, category id, precomputed visual feature.
struct Proposal {
  int id = 0;
  Box box;
  int category = 0;
  std::vector<float> subject_raw;
};

inline constexpr int kNeighborCount = 5;
inline constexpr int kPadNeighbor = -1;  // PAD sentinel in neighbor lists

/// Intersection over union of two valid boxes.
/// Undefined (throws) only when both boxes are degenerate, i.e. the union
/// has zero area.
inline double iou(const Box& a, const Box& b) {
  a.validate();
  b.validate();
  const double area_a = a.area();
  const double area_b = b.area();
  if (area_a == 0.0 && area_b == 0.0) {
    throw std::domain_error("iou: undefined for two degenerate boxes");
  }
  const double ix = std::max(
      0.0, std::min(a.x_br, b.x_br) - std::max(a.x_tl, b.x_tl));
  const double iy = std::max(
      0.0, std::min(a.y_br, b.y_br) - std::max(a.y_tl, b.y_tl));
  const double inter = ix * iy;
  const double uni = area_a + area_b - inter;
  return inter / uni;
}

/// 5-vector [x_tl/W, y_tl/H, x_br/W, y_br/H, w*h/(W*H)].
inline std::array<double, 5> absolute_location(const Box& b, double image_w,
                                               double image_h) {
  b.validate();
  if (image_w <= 0.0 || image_h <= 0.0) {
    throw std::invalid_argument("absolute_location: image dimensions must be positive");
  }
  return {b.x_tl / image_w, b.y_tl / image_h, b.x_br / image_w,
          b.y_br / image_h, b.area() / (image_w * image_h)};
}

/// Offset and area ratio of a neighbor relative to the candidate:
/// [dx_tl/w_i, dy_tl/h_i, dx_br/w_i, dy_br/h_i, w_j*h_j/(w_i*h_i)],
/// deltas are neighbor minus candidate.
inline std::array<double, 5> relative_offset(const Box& candidate,
                                             const Box& neighbor) {
  candidate.validate();
  neighbor.validate();
  const double w = candidate.width();
  const double h = candidate.height();
  if (candidate.area() == 0.0) {
    throw std::invalid_argument("relative_offset: candidate box has zero area");
  }
  return {(neighbor.x_tl - candidate.x_tl) / w,
          (neighbor.y_tl - candidate.y_tl) / h,
          (neighbor.x_br - candidate.x_br) / w,
          (neighbor.y_br - candidate.y_br) / h,
          neighbor.area() / candidate.area()};
}

/// Indices of up to `k` pool proposals nearest to `target` by
/// center-to-center distance, ties broken by ascending proposal id,
/// padded with kPadNeighbor. The target itself (by id) is excluded.
inline std::vector<int> select_neighbors(const Proposal& target,
                                         const std::vector<Proposal>& pool,
                                         bool same_category_only,
                                         int k = kNeighborCount) {
  struct Entry {
    double dist2;
    int id;
    int index;
  };
  std::vector<Entry> entries;
  entries.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const Proposal& p = pool[i];
    if (p.id == target.id) continue;
    if (same_category_only && p.category != target.category) continue;
    const double dx = p.box.center_x() - target.box.center_x();
    const double dy = p.box.center_y() - target.box.center_y();
    entries.push_back({dx * dx + dy * dy, p.id, static_cast<int>(i)});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.dist2 != b.dist2) return a.dist2 < b.dist2;
    return a.id < b.id;
  });
  std::vector<int> out(static_cast<std::size_t>(k), kPadNeighbor);
  const std::size_t n = std::min(entries.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) out[i] = entries[i].index;
  return out;
}

/// Absolute location plus relative offsets against the 5 nearest
/// same-category neighbors; 30 values total, PAD slots all zero.
struct LocationFeature {
  std::array<double, 5> absolute{};
  std::array<std::array<double, 5>, kNeighborCount> relatives{};

  std::array<double, 30> flatten() const {
    std::array<double, 30> out{};
    for (int i = 0; i < 5; ++i) out[static_cast<std::size_t>(i)] = absolute[static_cast<std::size_t>(i)];
    for (int n = 0; n < kNeighborCount; ++n) {
      for (int i = 0; i < 5; ++i) {
        out[static_cast<std::size_t>(5 + n * 5 + i)] = relatives[static_cast<std::size_t>(n)][static_cast<std::size_t>(i)];
      }
    }
    return out;
  }
};

inline LocationFeature location_feature(const Proposal& target,
                                        const std::vector<Proposal>& pool,
                                        double image_w, double image_h) {
  LocationFeature feat;
  feat.absolute = absolute_location(target.box, image_w, image_h);
  const std::vector<int> nbrs =
      select_neighbors(target, pool, /*same_category_only=*/true);
  for (int n = 0; n < kNeighborCount; ++n) {
    if (nbrs[static_cast<std::size_t>(n)] == kPadNeighbor) continue;
    feat.relatives[static_cast<std::size_t>(n)] = relative_offset(
        target.box, pool[static_cast<std::size_t>(nbrs[static_cast<std::size_t>(n)])].box);
  }
  return feat;
}

}  // namespace arn
