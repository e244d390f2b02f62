#include "locdet/raster.hpp"

#include <algorithm>
#include <cmath>

namespace locdet {

StructuringElement rasterize_se(double orientation, int k, double ratio) {
  if (k < 1 || k > 7)
    throw std::runtime_error("rasterize_se: major radius must be in 1..7, got " +
                             std::to_string(k));
  if (!(ratio > 0.0) || !std::isfinite(ratio))
    throw std::runtime_error("rasterize_se: aspect ratio must be positive");

  StructuringElement se;
  se.orientation = orientation;
  se.major_radius = k;
  se.aspect_ratio = ratio;
  se.size = 2 * k + 1;
  se.mask.assign(static_cast<size_t>(se.size) * se.size, 0);

  // Semi-axes (k, k*ratio) normalized so the larger equals k; the first axis
  // lies along `orientation`. Minor semi-axis clamped to 0.5 so the center
  // row/column is always populated.
  double norm = std::max(1.0, ratio);
  double a = std::max(0.5, k / norm);
  double b = std::max(0.5, k * ratio / norm);
  double c = std::cos(orientation), s = std::sin(orientation);

  for (int dy = -k; dy <= k; ++dy) {
    for (int dx = -k; dx <= k; ++dx) {
      double u = dx * c + dy * s;
      double v = -dx * s + dy * c;
      double q = (u * u) / (a * a) + (v * v) / (b * b);
      if (q <= 1.0) {
        se.mask[static_cast<size_t>(dy + k) * se.size + (dx + k)] = 1;
        se.offsets.emplace_back(dx, dy);
      }
    }
  }
  return se;
}

StructuringElement rotate180(const StructuringElement& se) {
  StructuringElement out = se;
  int k = se.major_radius;
  for (int dy = -k; dy <= k; ++dy)
    for (int dx = -k; dx <= k; ++dx)
      out.mask[static_cast<size_t>(dy + k) * se.size + (dx + k)] =
          se.mask[static_cast<size_t>(-dy + k) * se.size + (-dx + k)];
  out.offsets.clear();
  for (int dy = -k; dy <= k; ++dy)
    for (int dx = -k; dx <= k; ++dx)
      if (out.mask[static_cast<size_t>(dy + k) * se.size + (dx + k)])
        out.offsets.emplace_back(dx, dy);
  return out;
}

StructuringElement disk_se(int radius) {
  if (radius < 0) throw std::runtime_error("disk_se: negative radius");
  StructuringElement se;
  se.orientation = 0.0;
  se.major_radius = std::max(1, radius);
  se.aspect_ratio = 1.0;
  se.size = 2 * se.major_radius + 1;
  se.mask.assign(static_cast<size_t>(se.size) * se.size, 0);
  int k = se.major_radius;
  for (int dy = -k; dy <= k; ++dy)
    for (int dx = -k; dx <= k; ++dx)
      if (dx * dx + dy * dy <= radius * radius) {
        se.mask[static_cast<size_t>(dy + k) * se.size + (dx + k)] = 1;
        se.offsets.emplace_back(dx, dy);
      }
  return se;
}

IntegralImage::IntegralImage(const GreyImage& img)
    : width_(img.width()), height_(img.height()),
      sum_((static_cast<size_t>(img.width()) + 1) * (img.height() + 1), 0.0) {
  size_t stride = static_cast<size_t>(width_) + 1;
  for (int y = 0; y < height_; ++y) {
    double row = 0.0;
    for (int x = 0; x < width_; ++x) {
      row += img(x, y);
      sum_[(static_cast<size_t>(y) + 1) * stride + x + 1] =
          sum_[static_cast<size_t>(y) * stride + x + 1] + row;
    }
  }
}

}  // namespace locdet
