#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace locdet {

// Real-valued 2-D raster, row-major. Intensities are nominally in [0,1] for
// loaded images; operator outputs may leave that range but stay finite.
class GreyImage {
 public:
  GreyImage() = default;
  GreyImage(int width, int height, double fill = 0.0)
      : width_(width), height_(height),
        data_(static_cast<size_t>(width) * height, fill) {
    if (width < 1 || height < 1)
      throw std::runtime_error("GreyImage: dimensions must be at least 1x1");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  size_t size() const { return data_.size(); }

  double operator()(int x, int y) const { return data_[idx(x, y)]; }
  double& operator()(int x, int y) { return data_[idx(x, y)]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool same_size(const GreyImage& o) const {
    return width_ == o.width_ && height_ == o.height_;
  }

  bool operator==(const GreyImage& o) const {
    return width_ == o.width_ && height_ == o.height_ && data_ == o.data_;
  }

 private:
  size_t idx(int x, int y) const { return static_cast<size_t>(y) * width_ + x; }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

// The boosted ensemble's per-pixel output shares the raster layout.
using ConfidenceImage = GreyImage;

enum class PixelLabel : uint8_t { Background = 0, Object = 1, Confuser = 2 };

// Per-pixel ternary ground truth paired with a GreyImage of equal size.
class LabelMask {
 public:
  LabelMask() = default;
  LabelMask(int width, int height, PixelLabel fill = PixelLabel::Background)
      : width_(width), height_(height),
        labels_(static_cast<size_t>(width) * height, fill) {
    if (width < 1 || height < 1)
      throw std::runtime_error("LabelMask: dimensions must be at least 1x1");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  size_t size() const { return labels_.size(); }

  PixelLabel operator()(int x, int y) const {
    return labels_[static_cast<size_t>(y) * width_ + x];
  }
  PixelLabel& operator()(int x, int y) {
    return labels_[static_cast<size_t>(y) * width_ + x];
  }

  const std::vector<PixelLabel>& labels() const { return labels_; }

  bool operator==(const LabelMask& o) const {
    return width_ == o.width_ && height_ == o.height_ && labels_ == o.labels_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<PixelLabel> labels_;
};

// Binary elliptical footprint for morphology and percentile filtering.
// Parameters follow the sampling space: orientation in radians, major radius
// k giving an odd diameter 2k+1, and a width-to-height aspect ratio. The
// footprint is normalized so the larger semi-axis equals k; the minor
// semi-axis is clamped to at least 0.5 so the mask is never empty.
struct StructuringElement {
  double orientation = 0.0;
  int major_radius = 1;
  double aspect_ratio = 1.0;
  int size = 0;                               // mask is size x size, size = 2k+1
  std::vector<uint8_t> mask;                  // row-major footprint
  std::vector<std::pair<int, int>> offsets;   // set pixels as (dx, dy)

  bool contains(int dx, int dy) const {
    int k = major_radius;
    if (dx < -k || dx > k || dy < -k || dy > k) return false;
    return mask[static_cast<size_t>(dy + k) * size + (dx + k)] != 0;
  }
};

StructuringElement rasterize_se(double orientation, int k, double ratio);
StructuringElement rotate180(const StructuringElement& se);
// Circular footprint {(dx,dy) : dx^2+dy^2 <= r^2}; r = 0 is the single center pixel.
StructuringElement disk_se(int radius);

// Cumulative-sum raster giving O(1) rectangle sums.
class IntegralImage {
 public:
  explicit IntegralImage(const GreyImage& img);

  int width() const { return width_; }
  int height() const { return height_; }

  // Sum of img over the half-open rectangle [x0,x1) x [y0,y1).
  double rect_sum(int x0, int y0, int x1, int y1) const {
    const double* s = sum_.data();
    size_t stride = static_cast<size_t>(width_) + 1;
    return s[static_cast<size_t>(y1) * stride + x1] -
           s[static_cast<size_t>(y0) * stride + x1] -
           s[static_cast<size_t>(y1) * stride + x0] +
           s[static_cast<size_t>(y0) * stride + x0];
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> sum_;  // (width+1) x (height+1)
};

}  // namespace locdet
