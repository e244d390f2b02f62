#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "locdet/raster.hpp"

namespace locdet {

// Per-pixel prediction raster: values in {-1, 0, +1}. A plain stump emits
// only +-1; post-processing introduces the 0 (abstention) entries.
struct SignMap {
  int width = 0, height = 0;
  std::vector<int8_t> v;

  SignMap() = default;
  SignMap(int w, int h, int8_t fill = 0)
      : width(w), height(h), v(static_cast<size_t>(w) * h, fill) {}
  int8_t operator()(int x, int y) const { return v[static_cast<size_t>(y) * width + x]; }
  int8_t& operator()(int x, int y) { return v[static_cast<size_t>(y) * width + x]; }
};

struct NoFilter {
  bool operator==(const NoFilter&) const = default;
};
struct RegionGrowFilter {
  int max_area;  // 4-connected positive regions strictly larger than this abstain
  bool operator==(const RegionGrowFilter&) const = default;
};
struct ErodeFilter {
  int radius;
  bool operator==(const ErodeFilter&) const = default;
};
struct DilateFilter {
  int radius;
  bool operator==(const DilateFilter&) const = default;
};
struct MedianFilter {
  int radius;
  bool operator==(const MedianFilter&) const = default;
};

using PostFilterSpec =
    std::variant<NoFilter, RegionGrowFilter, ErodeFilter, DilateFilter, MedianFilter>;

// Region growing converts oversized positive components to abstentions and
// never touches negative pixels. The erosion/dilation/median filters act on
// the binary positive mask with a circular structuring element; the output is
// +1 where both the original and filtered masks are set, -1 where both are
// unset, and 0 where they disagree.
SignMap apply_post_filter(const SignMap& pred, const PostFilterSpec& filter);

std::string filter_to_string(const PostFilterSpec& filter);
PostFilterSpec filter_from_string(const std::string& text);

// Expands a combination like "R,E,D,M" or "N" into the validation-grid
// candidate set: R -> max_area 1000..5000 step 500, E/D/M -> radius 1..5,
// N -> the identity filter.
std::vector<PostFilterSpec> expand_filter_combo(const std::string& combo);

enum class Connectivity { Four, Eight };

struct ComponentLabels {
  int count = 0;
  std::vector<int32_t> label;  // -1 outside the mask, else component id
  std::vector<int64_t> area;   // per component
};

ComponentLabels label_components(const std::vector<uint8_t>& mask, int w, int h,
                                 Connectivity conn);

// Exact squared Euclidean distance transforms (Felzenszwalb-Huttenlocher).
// Distances to the nearest unset/set pixel; pixels with no target anywhere
// get a value larger than any attainable squared distance.
std::vector<int64_t> squared_edt_to_unset(const std::vector<uint8_t>& mask, int w, int h);
std::vector<int64_t> squared_edt_to_set(const std::vector<uint8_t>& mask, int w, int h);

// Binary disk morphology with footprint clipping at borders. Implemented via
// the distance transforms; equivalent to direct min/max over the clipped disk.
std::vector<uint8_t> binary_erode_disk(const std::vector<uint8_t>& mask, int w, int h, int r);
std::vector<uint8_t> binary_dilate_disk(const std::vector<uint8_t>& mask, int w, int h, int r);
// Strict-majority vote over the in-bounds disk footprint (nearest-rank median).
std::vector<uint8_t> binary_median_disk(const std::vector<uint8_t>& mask, int w, int h, int r);

}  // namespace locdet
