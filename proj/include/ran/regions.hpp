#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

// Candidate regions formed HOG-style from a CxC cell grid: every contiguous
// cell rectangle except the full grid, which enters the model separately as
// the whole-image stream.

namespace ran {

struct RegionSpec {
  std::size_t row0, col0, row1, col1;  // inclusive cell indices

  bool operator==(const RegionSpec&) const = default;
};

struct RegionSet {
  std::size_t cells_per_side = 0;
  std::vector<RegionSpec> regions;  // lexicographic by (row0, col0, row1, col1)

  std::size_t size() const { return regions.size(); }
};

struct Box {
  double x0, y0, x1, y1;  // half-open feature-map coordinates

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
};

// Closed form (C(C+1)/2)^2 - 1: rectangles are pairs of row intervals and
// column intervals, minus the full grid.
inline std::size_t region_count(std::size_t cells_per_side) {
  if (cells_per_side < 1) throw std::invalid_argument("region_count: cells_per_side must be >= 1");
  const std::size_t intervals = cells_per_side * (cells_per_side + 1) / 2;
  return intervals * intervals - 1;
}

// All cell rectangles except the full grid, in canonical order. A nonzero
// max_extent caps the rectangle side length in cells, approximating reduced
// region sets; the closed-form count only applies when the cap is off.
inline RegionSet enumerate_regions(std::size_t cells_per_side, std::size_t max_extent = 0) {
  if (cells_per_side < 1)
    throw std::invalid_argument("enumerate_regions: cells_per_side must be >= 1");
  RegionSet set;
  set.cells_per_side = cells_per_side;
  const std::size_t C = cells_per_side;
  for (std::size_t r0 = 0; r0 < C; ++r0)
    for (std::size_t c0 = 0; c0 < C; ++c0)
      for (std::size_t r1 = r0; r1 < C; ++r1)
        for (std::size_t c1 = c0; c1 < C; ++c1) {
          if (r0 == 0 && c0 == 0 && r1 == C - 1 && c1 == C - 1) continue;
          if (max_extent > 0 && (r1 - r0 + 1 > max_extent || c1 - c0 + 1 > max_extent)) continue;
          set.regions.push_back({r0, c0, r1, c1});
        }
  return set;
}

inline Box region_to_box(const RegionSpec& r, std::size_t cells_per_side, std::size_t feat_h,
                         std::size_t feat_w) {
  if (feat_h < cells_per_side || feat_w < cells_per_side) {
    throw std::invalid_argument("region_to_box: feature map " + std::to_string(feat_h) + "x" +
                                std::to_string(feat_w) + " smaller than the " +
                                std::to_string(cells_per_side) + "-cell grid");
  }
  const double C = static_cast<double>(cells_per_side);
  return Box{
      static_cast<double>(r.col0) * static_cast<double>(feat_w) / C,
      static_cast<double>(r.row0) * static_cast<double>(feat_h) / C,
      static_cast<double>(r.col1 + 1) * static_cast<double>(feat_w) / C,
      static_cast<double>(r.row1 + 1) * static_cast<double>(feat_h) / C,
  };
}

inline Box full_box(std::size_t feat_h, std::size_t feat_w) {
  return Box{0.0, 0.0, static_cast<double>(feat_w), static_cast<double>(feat_h)};
}

}  // namespace ran
