#include "locdet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace locdet {

namespace {

double clamp_value(double v) {
  if (std::isnan(v)) return 0.0;
  if (v > kValueClamp) return kValueClamp;
  if (v < -kValueClamp) return -kValueClamp;
  return v;
}

void sanitize(GreyImage& img) {
  for (double& v : img.data()) v = clamp_value(v);
}

void require_same_size(const GreyImage& a, const GreyImage& b, const char* op) {
  if (!a.same_size(b))
    throw std::runtime_error(std::string(op) + ": dimension mismatch (" +
                             std::to_string(a.width()) + "x" + std::to_string(a.height()) +
                             " vs " + std::to_string(b.width()) + "x" +
                             std::to_string(b.height()) + ")");
}

// Reflected source index for each position of an axis padded by r on both
// sides. Hoisting the fold out of the convolution loops keeps them branch
// free, which matters: these loops dominate program evaluation.
std::vector<int> reflect_table(int n, int r) {
  std::vector<int> idx(static_cast<size_t>(n) + 2 * r);
  for (int i = 0; i < static_cast<int>(idx.size()); ++i) idx[i] = reflect101(i - r, n);
  return idx;
}

// Footprint rows as inclusive dx runs, so interior pixels can gather whole
// spans with pointer arithmetic instead of testing bounds per offset.
struct FootprintRun {
  int dy, dx0, dx1;
};

std::vector<FootprintRun> footprint_runs(const StructuringElement& se) {
  auto sorted = se.offsets;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  std::vector<FootprintRun> runs;
  for (auto [dx, dy] : sorted) {
    if (!runs.empty() && runs.back().dy == dy && runs.back().dx1 + 1 == dx)
      runs.back().dx1 = dx;
    else
      runs.push_back({dy, dx, dx});
  }
  return runs;
}

}  // namespace

GreyImage apply_binary(BinaryOpKind kind, const GreyImage& a, const GreyImage& b) {
  require_same_size(a, b, "apply_binary");
  GreyImage out(a.width(), a.height());
  const auto& pa = a.data();
  const auto& pb = b.data();
  auto& po = out.data();
  switch (kind) {
    case BinaryOpKind::Mult:
      for (size_t i = 0; i < po.size(); ++i) po[i] = pa[i] * pb[i];
      break;
    case BinaryOpKind::Blend:
      for (size_t i = 0; i < po.size(); ++i) po[i] = (pa[i] + pb[i]) * 0.5;
      break;
    case BinaryOpKind::NormDiff: {
      double denom = 0.0;
      for (double v : pa) denom += v;
      for (double v : pb) denom += v;
      if (denom == 0.0) break;  // all-zero output
      for (size_t i = 0; i < po.size(); ++i) po[i] = (pa[i] - pb[i]) / denom;
      break;
    }
    case BinaryOpKind::ScaledSub:
      for (size_t i = 0; i < po.size(); ++i) {
        double s = pa[i] + pb[i];
        po[i] = s == 0.0 ? 0.0 : (pa[i] - pb[i]) / s;
      }
      break;
  }
  sanitize(out);
  return out;
}

GreyImage apply_sigmoid(const GreyImage& img, double theta, double lambda) {
  if (lambda < 0.0 || !std::isfinite(lambda) || !std::isfinite(theta))
    throw std::runtime_error("apply_sigmoid: invalid parameters");
  GreyImage out(img.width(), img.height());
  const auto& pi = img.data();
  auto& po = out.data();
  if (lambda == 0.0) {
    for (size_t i = 0; i < po.size(); ++i) po[i] = pi[i] + theta;
  } else {
    for (size_t i = 0; i < po.size(); ++i)
      po[i] = std::atan(lambda * (pi[i] + theta)) / lambda;
  }
  sanitize(out);
  return out;
}

int reflect101(int i, int n) {
  if (n == 1) return 0;
  int period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

GreyImage separable_conv(const GreyImage& img, const std::vector<double>& kx,
                         const std::vector<double>& ky) {
  int w = img.width(), h = img.height();
  int rx = static_cast<int>(kx.size()) / 2;
  int ry = static_cast<int>(ky.size()) / 2;
  const int nx = static_cast<int>(kx.size()), ny = static_cast<int>(ky.size());
  std::vector<int> xi = reflect_table(w, rx);
  std::vector<int> yi = reflect_table(h, ry);

  GreyImage tmp(w, h);
  std::vector<double> row(xi.size());
  for (int y = 0; y < h; ++y) {
    const double* src = &img.data()[static_cast<size_t>(y) * w];
    for (size_t i = 0; i < row.size(); ++i) row[i] = src[xi[i]];
    double* dst = &tmp.data()[static_cast<size_t>(y) * w];
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = 0; t < nx; ++t) acc += kx[t] * row[x + t];
      dst[x] = acc;
    }
  }
  // Vertical pass as row-sized accumulations: each output row sums the taps
  // in the same ascending order the per-pixel loop would.
  GreyImage out(w, h);
  for (int y = 0; y < h; ++y) {
    double* dst = &out.data()[static_cast<size_t>(y) * w];
    for (int t = 0; t < ny; ++t) {
      const double* srow = &tmp.data()[static_cast<size_t>(yi[y + t]) * w];
      double coeff = ky[t];
      for (int x = 0; x < w; ++x) dst[x] += coeff * srow[x];
    }
  }
  return out;
}

std::vector<double> gaussian_taps(double sigma) {
  int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int t = -r; t <= r; ++t) {
    k[t + r] = std::exp(-0.5 * t * t / (sigma * sigma));
    sum += k[t + r];
  }
  for (double& v : k) v /= sum;
  return k;
}

std::vector<double> gaussian_d1_taps(double sigma) {
  int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1, 0.0);
  double norm = 1.0 / (sigma * std::sqrt(2.0 * M_PI));
  // Antisymmetric by construction so the response to a constant is zero.
  for (int t = 1; t <= r; ++t) {
    double g = norm * std::exp(-0.5 * t * t / (sigma * sigma));
    double d = -(t / (sigma * sigma)) * g;
    k[r + t] = d;
    k[r - t] = -d;
  }
  return k;
}

std::vector<double> gaussian_d2_taps(double sigma) {
  int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double norm = 1.0 / (sigma * std::sqrt(2.0 * M_PI));
  double sum = 0.0;
  for (int t = -r; t <= r; ++t) {
    double g = norm * std::exp(-0.5 * t * t / (sigma * sigma));
    k[t + r] = (t * t - sigma * sigma) / (sigma * sigma * sigma * sigma) * g;
    sum += k[t + r];
  }
  // Zero the DC component so flat regions respond with 0.
  double mean = sum / k.size();
  for (double& v : k) v -= mean;
  return k;
}

const std::vector<double>& laws_vector(LawsVector v) {
  static const std::vector<double> L5 = {1, 4, 6, 4, 1};
  static const std::vector<double> E5 = {-1, -2, 0, 2, 1};
  static const std::vector<double> S5 = {-1, 0, 2, 0, -1};
  static const std::vector<double> R5 = {1, -4, 6, -4, 1};
  static const std::vector<double> W5 = {-1, 2, 0, -2, 1};
  switch (v) {
    case LawsVector::L5: return L5;
    case LawsVector::E5: return E5;
    case LawsVector::S5: return S5;
    case LawsVector::R5: return R5;
    case LawsVector::W5: return W5;
  }
  throw std::runtime_error("laws_vector: bad enum");
}

GreyImage apply_laws(const GreyImage& img, LawsVector u, LawsVector v) {
  GreyImage out = separable_conv(img, laws_vector(v), laws_vector(u));
  sanitize(out);
  return out;
}

GreyImage apply_laplace(const GreyImage& img, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw std::runtime_error("apply_laplace: sigma must be positive");
  auto g = gaussian_taps(sigma);
  auto d2 = gaussian_d2_taps(sigma);
  GreyImage gxx = separable_conv(img, d2, g);
  GreyImage gyy = separable_conv(img, g, d2);
  GreyImage out(img.width(), img.height());
  for (size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = gxx.data()[i] + gyy.data()[i];
  sanitize(out);
  return out;
}

GreyImage apply_ggm(const GreyImage& img, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw std::runtime_error("apply_ggm: sigma must be positive");
  auto g = gaussian_taps(sigma);
  auto d1 = gaussian_d1_taps(sigma);
  GreyImage gx = separable_conv(img, d1, g);
  GreyImage gy = separable_conv(img, g, d1);
  GreyImage out(img.width(), img.height());
  for (size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = std::hypot(gx.data()[i], gy.data()[i]);
  sanitize(out);
  return out;
}

GreyImage apply_gabor(const GreyImage& img, double orientation, double size,
                      double ratio, double wavelength, GaborEnvelope envelope) {
  if (!(size >= 1.0) || !(ratio > 0.0) || !(wavelength > 0.0))
    throw std::runtime_error("apply_gabor: invalid parameters");
  int ksize = static_cast<int>(std::lround(size));
  ksize = std::clamp(ksize, 1, 31);
  if (ksize % 2 == 0) ksize += 1;
  int r = ksize / 2;

  double sa = std::max(0.25, size / 4.0);
  double sb = std::max(0.25, size * ratio / 4.0);
  double c = std::cos(orientation), s = std::sin(orientation);

  std::vector<double> ksin(static_cast<size_t>(ksize) * ksize);
  std::vector<double> kcos(static_cast<size_t>(ksize) * ksize);
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      double u = dx * c + dy * s;
      double v = -dx * s + dy * c;
      double env = std::exp(-0.5 * (u * u / (sa * sa) + v * v / (sb * sb)));
      double phase = 2.0 * M_PI * u / wavelength;
      size_t i = static_cast<size_t>(dy + r) * ksize + (dx + r);
      ksin[i] = env * std::sin(phase);
      kcos[i] = env * std::cos(phase);
    }

  // One reflect-101 padded copy of the image; the correlation loops then run
  // over contiguous rows with no index folding.
  int w = img.width(), h = img.height();
  int pw = w + 2 * r;
  std::vector<int> xi = reflect_table(w, r);
  std::vector<int> yi = reflect_table(h, r);
  std::vector<double> pad(static_cast<size_t>(pw) * (h + 2 * r));
  for (int y = 0; y < h + 2 * r; ++y) {
    const double* src = &img.data()[static_cast<size_t>(yi[y]) * w];
    double* dst = &pad[static_cast<size_t>(y) * pw];
    for (int x = 0; x < pw; ++x) dst[x] = src[xi[x]];
  }

  auto correlate = [&](const std::vector<double>& kern) {
    GreyImage res(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double* window = &pad[static_cast<size_t>(y) * pw + x];
        const double* kp = kern.data();
        double acc = 0.0;
        for (int dy = 0; dy < ksize; ++dy, window += pw, kp += ksize)
          for (int dx = 0; dx < ksize; ++dx) acc += kp[dx] * window[dx];
        res(x, y) = acc;
      }
    return res;
  };

  GreyImage out(w, h);
  switch (envelope) {
    case GaborEnvelope::Sin: out = correlate(ksin); break;
    case GaborEnvelope::Cos: out = correlate(kcos); break;
    case GaborEnvelope::Both: {
      // Both accumulators in one pass over the window; each still adds its
      // taps in the same order as a lone correlation.
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double* window = &pad[static_cast<size_t>(y) * pw + x];
          const double* ks = ksin.data();
          const double* kc = kcos.data();
          double acc_s = 0.0, acc_c = 0.0;
          for (int dy = 0; dy < ksize; ++dy, window += pw, ks += ksize, kc += ksize)
            for (int dx = 0; dx < ksize; ++dx) {
              acc_s += ks[dx] * window[dx];
              acc_c += kc[dx] * window[dx];
            }
          out(x, y) = std::hypot(acc_s, acc_c);
        }
      break;
    }
  }
  sanitize(out);
  return out;
}

GreyImage apply_morph(MorphKind kind, const GreyImage& img, const StructuringElement& se) {
  if (kind == MorphKind::Open)
    return apply_morph(MorphKind::Dilate, apply_morph(MorphKind::Erode, img, se), se);
  if (kind == MorphKind::Close)
    return apply_morph(MorphKind::Erode, apply_morph(MorphKind::Dilate, img, se), se);

  int w = img.width(), h = img.height();
  bool erode = kind == MorphKind::Erode;
  int k = se.major_radius;
  auto runs = footprint_runs(se);
  GreyImage out(w, h);
  auto sweep = [&](auto better, double start) {
    for (int y = 0; y < h; ++y) {
      bool y_inside = y >= k && y + k < h;
      for (int x = 0; x < w; ++x) {
        double best = start;
        if (y_inside && x >= k && x + k < w) {
          for (const auto& run : runs) {
            const double* p = &img.data()[static_cast<size_t>(y + run.dy) * w + x + run.dx0];
            for (int i = 0; i <= run.dx1 - run.dx0; ++i) best = better(best, p[i]);
          }
        } else {
          for (auto [dx, dy] : se.offsets) {
            int xx = x + dx, yy = y + dy;
            if (xx < 0 || xx >= w || yy < 0 || yy >= h) continue;  // footprint clipping
            best = better(best, img(xx, yy));
          }
        }
        out(x, y) = best;
      }
    }
  };
  if (erode)
    sweep([](double a, double b) { return std::min(a, b); },
          std::numeric_limits<double>::infinity());
  else
    sweep([](double a, double b) { return std::max(a, b); },
          -std::numeric_limits<double>::infinity());
  sanitize(out);
  return out;
}

GreyImage apply_ptile(const GreyImage& img, double p, const StructuringElement& se) {
  if (!(p >= 0.0 && p <= 100.0))
    throw std::runtime_error("apply_ptile: percentile must be in [0,100]");
  int w = img.width(), h = img.height();
  int k = se.major_radius;
  auto runs = footprint_runs(se);
  GreyImage out(w, h);
  std::vector<double> vals;
  vals.reserve(se.offsets.size());
  for (int y = 0; y < h; ++y) {
    bool y_inside = y >= k && y + k < h;
    for (int x = 0; x < w; ++x) {
      vals.clear();
      if (y_inside && x >= k && x + k < w) {
        for (const auto& run : runs) {
          const double* p = &img.data()[static_cast<size_t>(y + run.dy) * w + x + run.dx0];
          vals.insert(vals.end(), p, p + (run.dx1 - run.dx0 + 1));
        }
      } else {
        for (auto [dx, dy] : se.offsets) {
          int xx = x + dx, yy = y + dy;
          if (xx < 0 || xx >= w || yy < 0 || yy >= h) continue;
          vals.push_back(img(xx, yy));
        }
      }
      // Nearest rank: rank = clamp(ceil(p/100 * n), 1, n).
      int n = static_cast<int>(vals.size());
      int rank = static_cast<int>(std::ceil(p / 100.0 * n));
      rank = std::clamp(rank, 1, n);
      std::nth_element(vals.begin(), vals.begin() + (rank - 1), vals.end());
      out(x, y) = vals[rank - 1];
    }
  }
  sanitize(out);
  return out;
}

int ViolaJonesKernel::block_w() const {
  switch (kind) {
    case Kind::Horizontal2: return 2 * rect_w;
    case Kind::Horizontal3: return 3 * rect_w;
    case Kind::Quad: return 2 * rect_w;
    default: return rect_w;
  }
}

int ViolaJonesKernel::block_h() const {
  switch (kind) {
    case Kind::Vertical2: return 2 * rect_h;
    case Kind::Vertical3: return 3 * rect_h;
    case Kind::Quad: return 2 * rect_h;
    default: return rect_h;
  }
}

std::vector<ViolaJonesKernel::Rect> ViolaJonesKernel::rects() const {
  std::vector<Rect> rs;
  int ox = offset_x, oy = offset_y, rw = rect_w, rh = rect_h;
  auto rect = [&](int ix, int iy, double coeff) {
    rs.push_back({ox + ix * rw, oy + iy * rh, ox + (ix + 1) * rw, oy + (iy + 1) * rh, coeff});
  };
  switch (kind) {
    case Kind::Horizontal2:
      rect(0, 0, 1.0);
      rect(1, 0, -1.0);
      break;
    case Kind::Vertical2:
      rect(0, 0, 1.0);
      rect(0, 1, -1.0);
      break;
    case Kind::Horizontal3:
      rect(0, 0, 1.0);
      rect(1, 0, -1.0);
      rect(2, 0, 1.0);
      break;
    case Kind::Vertical3:
      rect(0, 0, 1.0);
      rect(0, 1, -1.0);
      rect(0, 2, 1.0);
      break;
    case Kind::Quad:
      rect(0, 0, 1.0);
      rect(1, 0, -1.0);
      rect(0, 1, -1.0);
      rect(1, 1, 1.0);
      break;
  }
  return rs;
}

ViolaJonesKernel sample_vj_kernel(Rng& rng) {
  ViolaJonesKernel k;
  constexpr int E = ViolaJonesKernel::kExtent;
  k.kind = static_cast<ViolaJonesKernel::Kind>(rng.uniform_int(0, 4));
  int nx = 1, ny = 1;  // rectangles along each axis
  switch (k.kind) {
    case ViolaJonesKernel::Kind::Horizontal2: nx = 2; break;
    case ViolaJonesKernel::Kind::Vertical2: ny = 2; break;
    case ViolaJonesKernel::Kind::Horizontal3: nx = 3; break;
    case ViolaJonesKernel::Kind::Vertical3: ny = 3; break;
    case ViolaJonesKernel::Kind::Quad: nx = 2; ny = 2; break;
  }
  k.rect_w = static_cast<int>(rng.uniform_int(1, E / nx));
  k.rect_h = static_cast<int>(rng.uniform_int(1, E / ny));
  k.offset_x = static_cast<int>(rng.uniform_int(0, E - nx * k.rect_w));
  k.offset_y = static_cast<int>(rng.uniform_int(0, E - ny * k.rect_h));
  return k;
}

GreyImage apply_convolve(const GreyImage& img, const ViolaJonesKernel& kernel) {
  constexpr int E = ViolaJonesKernel::kExtent;
  constexpr int C = E / 2;
  int w = img.width(), h = img.height();

  // Reflect-101 pad by the kernel reach, then integral-image rectangle sums.
  GreyImage padded(w + 2 * C, h + 2 * C);
  for (int y = 0; y < h + 2 * C; ++y)
    for (int x = 0; x < w + 2 * C; ++x)
      padded(x, y) = img(reflect101(x - C, w), reflect101(y - C, h));
  IntegralImage integral(padded);

  auto rs = kernel.rects();
  GreyImage out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // Kernel origin in padded coordinates: pixel center minus C, plus pad C.
      double acc = 0.0;
      for (const auto& r : rs)
        acc += r.coeff * integral.rect_sum(x + r.x0, y + r.y0, x + r.x1, y + r.y1);
      out(x, y) = acc;
    }
  sanitize(out);
  return out;
}

}  // namespace locdet
