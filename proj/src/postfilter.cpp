#include "locdet/postfilter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace locdet {

namespace {

constexpr int64_t kEdtInf = int64_t{1} << 40;

// 1D squared distance transform via the lower envelope of parabolas
// y = f[q] + (x - q)^2 (Felzenszwalb-Huttenlocher).
void edt_1d(const std::vector<int64_t>& f, std::vector<int64_t>& d, int n,
            std::vector<int>& v, std::vector<double>& z) {
  int k = 0;
  v[0] = 0;
  z[0] = -1e300;
  z[1] = 1e300;
  for (int q = 1; q < n; ++q) {
    double s = 0.0;
    while (true) {
      const int p = v[k];
      s = (static_cast<double>(f[q] - f[p]) + static_cast<double>(q) * q -
           static_cast<double>(p) * p) /
          (2.0 * (q - p));
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = 1e300;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const int64_t dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

// Squared distance from every pixel to the nearest pixel with target != 0.
std::vector<int64_t> squared_edt(const std::vector<uint8_t>& target, int w, int h) {
  const int m = std::max(w, h);
  std::vector<int64_t> d(static_cast<size_t>(w) * h);
  std::vector<int64_t> f(m), g(m);
  std::vector<int> v(m);
  std::vector<double> z(m + 1);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = target[static_cast<size_t>(y) * w + x] ? 0 : kEdtInf;
    edt_1d(f, g, h, v, z);
    for (int y = 0; y < h; ++y) d[static_cast<size_t>(y) * w + x] = g[y];
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[x] = d[static_cast<size_t>(y) * w + x];
    edt_1d(f, g, w, v, z);
    for (int x = 0; x < w; ++x) d[static_cast<size_t>(y) * w + x] = g[x];
  }
  return d;
}

void check_radius(int r) {
  if (r < 0) throw std::invalid_argument("filter radius must be non-negative");
}

// Merges the filtered positive mask back into the ternary prediction:
// agreement keeps the sign, disagreement abstains, and pixels that were
// neither positive before nor after are left untouched.
SignMap merge_filtered(const SignMap& pred, const std::vector<uint8_t>& filtered) {
  SignMap out(pred.width, pred.height);
  for (size_t i = 0; i < pred.v.size(); ++i) {
    const bool was = pred.v[i] > 0;
    const bool now = filtered[i] != 0;
    if (was && now) {
      out.v[i] = 1;
    } else if (was != now) {
      out.v[i] = 0;
    } else {
      out.v[i] = pred.v[i];
    }
  }
  return out;
}

std::vector<uint8_t> positive_mask(const SignMap& pred) {
  std::vector<uint8_t> mask(pred.v.size());
  for (size_t i = 0; i < pred.v.size(); ++i) mask[i] = pred.v[i] > 0 ? 1 : 0;
  return mask;
}

}  // namespace

ComponentLabels label_components(const std::vector<uint8_t>& mask, int w, int h,
                                 Connectivity conn) {
  if (static_cast<size_t>(w) * h != mask.size())
    throw std::invalid_argument("component mask size does not match dimensions");
  ComponentLabels out;
  out.label.assign(mask.size(), -1);
  std::vector<int> stack;
  for (int y0 = 0; y0 < h; ++y0) {
    for (int x0 = 0; x0 < w; ++x0) {
      const size_t i0 = static_cast<size_t>(y0) * w + x0;
      if (!mask[i0] || out.label[i0] >= 0) continue;
      const int32_t id = out.count++;
      int64_t area = 0;
      out.label[i0] = id;
      stack.push_back(static_cast<int>(i0));
      while (!stack.empty()) {
        const int i = stack.back();
        stack.pop_back();
        ++area;
        const int x = i % w, y = i / w;
        auto visit = [&](int nx, int ny) {
          if (nx < 0 || nx >= w || ny < 0 || ny >= h) return;
          const size_t j = static_cast<size_t>(ny) * w + nx;
          if (mask[j] && out.label[j] < 0) {
            out.label[j] = id;
            stack.push_back(static_cast<int>(j));
          }
        };
        visit(x - 1, y);
        visit(x + 1, y);
        visit(x, y - 1);
        visit(x, y + 1);
        if (conn == Connectivity::Eight) {
          visit(x - 1, y - 1);
          visit(x + 1, y - 1);
          visit(x - 1, y + 1);
          visit(x + 1, y + 1);
        }
      }
      out.area.push_back(area);
    }
  }
  return out;
}

std::vector<int64_t> squared_edt_to_unset(const std::vector<uint8_t>& mask, int w, int h) {
  std::vector<uint8_t> inverted(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) inverted[i] = mask[i] ? 0 : 1;
  return squared_edt(inverted, w, h);
}

std::vector<int64_t> squared_edt_to_set(const std::vector<uint8_t>& mask, int w, int h) {
  return squared_edt(mask, w, h);
}

std::vector<uint8_t> binary_erode_disk(const std::vector<uint8_t>& mask, int w, int h, int r) {
  check_radius(r);
  const auto d = squared_edt_to_unset(mask, w, h);
  const int64_t r2 = static_cast<int64_t>(r) * r;
  std::vector<uint8_t> out(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) out[i] = (mask[i] && d[i] > r2) ? 1 : 0;
  return out;
}

std::vector<uint8_t> binary_dilate_disk(const std::vector<uint8_t>& mask, int w, int h, int r) {
  check_radius(r);
  const auto d = squared_edt_to_set(mask, w, h);
  const int64_t r2 = static_cast<int64_t>(r) * r;
  std::vector<uint8_t> out(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) out[i] = d[i] <= r2 ? 1 : 0;
  return out;
}

std::vector<uint8_t> binary_median_disk(const std::vector<uint8_t>& mask, int w, int h, int r) {
  check_radius(r);
  if (static_cast<size_t>(w) * h != mask.size())
    throw std::invalid_argument("median mask size does not match dimensions");
  // Row prefix sums let each disk row be counted in O(1).
  std::vector<int32_t> prefix(static_cast<size_t>(h) * (w + 1), 0);
  for (int y = 0; y < h; ++y) {
    int32_t run = 0;
    for (int x = 0; x < w; ++x) {
      run += mask[static_cast<size_t>(y) * w + x];
      prefix[static_cast<size_t>(y) * (w + 1) + x + 1] = run;
    }
  }
  std::vector<int> half_width(r + 1);
  for (int dy = 0; dy <= r; ++dy)
    half_width[dy] = static_cast<int>(std::floor(std::sqrt(static_cast<double>(r) * r - dy * dy)));
  std::vector<uint8_t> out(mask.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int64_t set = 0, total = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        const int hw = half_width[std::abs(dy)];
        const int x0 = std::max(0, x - hw);
        const int x1 = std::min(w - 1, x + hw);
        set += prefix[static_cast<size_t>(yy) * (w + 1) + x1 + 1] -
               prefix[static_cast<size_t>(yy) * (w + 1) + x0];
        total += x1 - x0 + 1;
      }
      out[static_cast<size_t>(y) * w + x] = 2 * set > total ? 1 : 0;
    }
  }
  return out;
}

SignMap apply_post_filter(const SignMap& pred, const PostFilterSpec& filter) {
  return std::visit(
      [&](const auto& f) -> SignMap {
        using F = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<F, NoFilter>) {
          return pred;
        } else if constexpr (std::is_same_v<F, RegionGrowFilter>) {
          if (f.max_area < 0) throw std::invalid_argument("region grow area must be non-negative");
          const auto mask = positive_mask(pred);
          const auto comps = label_components(mask, pred.width, pred.height, Connectivity::Four);
          SignMap out = pred;
          for (size_t i = 0; i < out.v.size(); ++i) {
            if (comps.label[i] >= 0 && comps.area[comps.label[i]] > f.max_area) out.v[i] = 0;
          }
          return out;
        } else if constexpr (std::is_same_v<F, ErodeFilter>) {
          return merge_filtered(
              pred, binary_erode_disk(positive_mask(pred), pred.width, pred.height, f.radius));
        } else if constexpr (std::is_same_v<F, DilateFilter>) {
          return merge_filtered(
              pred, binary_dilate_disk(positive_mask(pred), pred.width, pred.height, f.radius));
        } else {
          static_assert(std::is_same_v<F, MedianFilter>);
          return merge_filtered(
              pred, binary_median_disk(positive_mask(pred), pred.width, pred.height, f.radius));
        }
      },
      filter);
}

std::string filter_to_string(const PostFilterSpec& filter) {
  char buf[32];
  return std::visit(
      [&](const auto& f) -> std::string {
        using F = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<F, NoFilter>) {
          return "none";
        } else if constexpr (std::is_same_v<F, RegionGrowFilter>) {
          std::snprintf(buf, sizeof(buf), "grow:%d", f.max_area);
          return buf;
        } else if constexpr (std::is_same_v<F, ErodeFilter>) {
          std::snprintf(buf, sizeof(buf), "erode:%d", f.radius);
          return buf;
        } else if constexpr (std::is_same_v<F, DilateFilter>) {
          std::snprintf(buf, sizeof(buf), "dilate:%d", f.radius);
          return buf;
        } else {
          static_assert(std::is_same_v<F, MedianFilter>);
          std::snprintf(buf, sizeof(buf), "median:%d", f.radius);
          return buf;
        }
      },
      filter);
}

PostFilterSpec filter_from_string(const std::string& text) {
  if (text == "none") return NoFilter{};
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    const std::string head = text.substr(0, colon);
    int value = 0;
    try {
      size_t used = 0;
      value = std::stoi(text.substr(colon + 1), &used);
      if (colon + 1 + used != text.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw std::invalid_argument("bad filter parameter in '" + text + "'");
    }
    if (value < 0) throw std::invalid_argument("negative filter parameter in '" + text + "'");
    if (head == "grow") return RegionGrowFilter{value};
    if (head == "erode") return ErodeFilter{value};
    if (head == "dilate") return DilateFilter{value};
    if (head == "median") return MedianFilter{value};
  }
  throw std::invalid_argument("unknown filter '" + text + "'");
}

std::vector<PostFilterSpec> expand_filter_combo(const std::string& combo) {
  std::vector<PostFilterSpec> out;
  size_t pos = 0;
  while (pos <= combo.size()) {
    size_t comma = combo.find(',', pos);
    if (comma == std::string::npos) comma = combo.size();
    const std::string part = combo.substr(pos, comma - pos);
    if (part == "N") {
      out.push_back(NoFilter{});
    } else if (part == "R") {
      for (int k = 1000; k <= 5000; k += 500) out.push_back(RegionGrowFilter{k});
    } else if (part == "E") {
      for (int r = 1; r <= 5; ++r) out.push_back(ErodeFilter{r});
    } else if (part == "D") {
      for (int r = 1; r <= 5; ++r) out.push_back(DilateFilter{r});
    } else if (part == "M") {
      for (int r = 1; r <= 5; ++r) out.push_back(MedianFilter{r});
    } else {
      throw std::invalid_argument("unknown filter combo element '" + part + "' in '" + combo +
                                  "'");
    }
    pos = comma + 1;
  }
  return out;
}

}  // namespace locdet
