#include "locdet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "locdet/image_io.hpp"

namespace locdet {

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Value noise: a coarse lattice of uniform samples interpolated with a
// smoothstep, one octave per cell size.
std::vector<double> noise_octave(int w, int h, int cell, Rng& rng) {
  int gw = w / cell + 2, gh = h / cell + 2;
  std::vector<double> lattice(static_cast<size_t>(gw) * gh);
  for (double& v : lattice) v = rng.uniform01();

  std::vector<double> out(static_cast<size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    double fy = static_cast<double>(y) / cell;
    int iy = static_cast<int>(fy);
    double ty = smoothstep(fy - iy);
    for (int x = 0; x < w; ++x) {
      double fx = static_cast<double>(x) / cell;
      int ix = static_cast<int>(fx);
      double tx = smoothstep(fx - ix);
      double v00 = lattice[static_cast<size_t>(iy) * gw + ix];
      double v10 = lattice[static_cast<size_t>(iy) * gw + ix + 1];
      double v01 = lattice[static_cast<size_t>(iy + 1) * gw + ix];
      double v11 = lattice[static_cast<size_t>(iy + 1) * gw + ix + 1];
      double top = v00 + (v10 - v00) * tx;
      double bot = v01 + (v11 - v01) * tx;
      out[static_cast<size_t>(y) * w + x] = top + (bot - top) * ty;
    }
  }
  return out;
}

struct Rect {
  int x0, y0, x1, y1;  // half-open
};

bool rects_overlap(const Rect& a, const Rect& b, int gap) {
  return a.x0 < b.x1 + gap && b.x0 < a.x1 + gap && a.y0 < b.y1 + gap && b.y0 < a.y1 + gap;
}

}  // namespace

void SynthSpec::validate() const {
  if (width < 32 || height < 32) throw std::invalid_argument("synth: image smaller than 32x32");
  if (images < 1) throw std::invalid_argument("synth: need at least one image");
  if (objects_per_image < 0 || confusers_per_image < 0)
    throw std::invalid_argument("synth: negative instance count");
  if (!(car_semi_major >= car_semi_minor) || car_semi_minor < 1.0)
    throw std::invalid_argument("synth: car axes must satisfy major >= minor >= 1");
  if (!(car_lo < car_hi) || !(confuser_lo < confuser_hi) || !(background_lo < background_hi))
    throw std::invalid_argument("synth: intensity bands must be increasing");
  if (!(background_hi < car_lo))
    throw std::invalid_argument("synth: background band must sit below the car band");
  if (confuser_area_lo < 1 || confuser_area_hi < confuser_area_lo)
    throw std::invalid_argument("synth: bad confuser area band");
  if (noise_sigma < 0.0 || occlusion_fraction < 0.0 || occlusion_fraction > 1.0)
    throw std::invalid_argument("synth: bad noise or occlusion setting");
  if (cluster_fraction < 0.0 || cluster_fraction > 1.0)
    throw std::invalid_argument("synth: cluster fraction must be in [0,1]");
  if (cluster_fraction > 0.0 && cluster_size < 2)
    throw std::invalid_argument("synth: parking rows need at least 2 cars");
  if (train_fraction <= 0.0 || validation_fraction < 0.0 ||
      train_fraction + validation_fraction >= 1.0 + 1e-12)
    throw std::invalid_argument("synth: split fractions must leave room for a test share");
}

SynthScene synth_scene(const SynthSpec& spec, Rng& rng) {
  spec.validate();
  const int w = spec.width, h = spec.height;

  SynthScene scene;
  scene.image = GreyImage(w, h);
  scene.mask = LabelMask(w, h);

  // textured background from two octaves of value noise
  std::vector<double> coarse = noise_octave(w, h, 16, rng);
  std::vector<double> fine = noise_octave(w, h, 8, rng);
  std::vector<double> background(static_cast<size_t>(w) * h);
  for (size_t i = 0; i < background.size(); ++i) {
    double n = 0.65 * coarse[i] + 0.35 * fine[i];
    background[i] = spec.background_lo + (spec.background_hi - spec.background_lo) * n;
    scene.image.data()[i] = background[i];
  }

  // buildings first; they are large and constrain car placement
  std::vector<Rect> buildings;
  for (int c = 0; c < spec.confusers_per_image; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      int area = rng.uniform_int(spec.confuser_area_lo, spec.confuser_area_hi);
      double aspect = rng.uniform(0.6, 1.8);
      int rw = std::max(8, static_cast<int>(std::lround(std::sqrt(area * aspect))));
      int rh = std::max(8, static_cast<int>(std::lround(static_cast<double>(area) / rw)));
      if (rw > w - 8 || rh > h - 8) continue;
      int x0 = rng.uniform_int(2, w - 2 - rw);
      int y0 = rng.uniform_int(2, h - 2 - rh);
      Rect rect{x0, y0, x0 + rw, y0 + rh};
      bool clash = false;
      for (const Rect& b : buildings)
        if (rects_overlap(rect, b, 4)) clash = true;
      if (clash) continue;

      double base = rng.uniform(spec.confuser_lo, spec.confuser_hi);
      for (int y = rect.y0; y < rect.y1; ++y)
        for (int x = rect.x0; x < rect.x1; ++x) {
          scene.image(x, y) = base;
          scene.mask(x, y) = PixelLabel::Confuser;
        }
      buildings.push_back(rect);
      placed = true;
      ++scene.placed_confusers;
    }
  }

  // elliptical cars with a clearance that keeps instances from merging
  const double pi = 3.14159265358979323846;
  const double a = spec.car_semi_major, b = spec.car_semi_minor;
  const double margin = a + 3.0;
  const double min_sep = 2.0 * a + 4.0;
  std::vector<std::pair<double, double>> centers;

  auto in_margins = [&](double cx, double cy) {
    return cx >= margin && cx <= w - 1 - margin && cy >= margin && cy <= h - 1 - margin;
  };
  auto clashes = [&](double cx, double cy) {
    for (const auto& [px, py] : centers)
      if (std::hypot(cx - px, cy - py) < min_sep) return true;
    int keep_out = static_cast<int>(std::ceil(a)) + 2;
    Rect car_box{static_cast<int>(cx - a) - 1, static_cast<int>(cy - a) - 1,
                 static_cast<int>(cx + a) + 2, static_cast<int>(cy + a) + 2};
    for (const Rect& bld : buildings)
      if (rects_overlap(car_box, bld, keep_out - 2)) return true;
    return false;
  };
  auto paint_car = [&](double cx, double cy, double phi) {
    double base = rng.uniform(spec.car_lo, spec.car_hi);
    double cphi = std::cos(phi), sphi = std::sin(phi);
    int x_lo = std::max(0, static_cast<int>(std::floor(cx - a)));
    int x_hi = std::min(w - 1, static_cast<int>(std::ceil(cx + a)));
    int y_lo = std::max(0, static_cast<int>(std::floor(cy - a)));
    int y_hi = std::min(h - 1, static_cast<int>(std::ceil(cy + a)));
    for (int y = y_lo; y <= y_hi; ++y)
      for (int x = x_lo; x <= x_hi; ++x) {
        double dx = x - cx, dy = y - cy;
        double u = dx * cphi + dy * sphi;
        double v = -dx * sphi + dy * cphi;
        if ((u / a) * (u / a) + (v / b) * (v / b) <= 1.0) {
          scene.image(x, y) = base;
          scene.mask(x, y) = PixelLabel::Object;
        }
      }

    // occlusion stripe: appearance reverts to background, label stays
    if (rng.uniform01() < spec.occlusion_fraction) {
      double psi = rng.uniform(0.0, pi);
      double ox = cx + rng.uniform(-2.0, 2.0);
      double oy = cy + rng.uniform(-2.0, 2.0);
      double nx = -std::sin(psi), ny = std::cos(psi);
      for (int y = y_lo; y <= y_hi; ++y)
        for (int x = x_lo; x <= x_hi; ++x) {
          if (scene.mask(x, y) != PixelLabel::Object) continue;
          double dx = x - cx, dy = y - cy;
          double u = dx * cphi + dy * sphi;
          double v = -dx * sphi + dy * cphi;
          if ((u / a) * (u / a) + (v / b) * (v / b) > 1.0) continue;
          if (std::abs((x - ox) * nx + (y - oy) * ny) <= 1.0)
            scene.image(x, y) = background[static_cast<size_t>(y) * w + x];
        }
    }

    centers.push_back({cx, cy});
    ++scene.placed_objects;
  };

  // Rows keep the mask instances 8-disconnected: spacing 2b+3 leaves a 3 px
  // true gap, so rasterized boundary pixels stay over sqrt(2) apart.
  const double row_step = 2.0 * b + 3.0;
  while (scene.placed_objects < spec.objects_per_image) {
    int remaining = spec.objects_per_image - scene.placed_objects;
    int row_size = 0;
    if (spec.cluster_fraction > 0.0 && remaining >= 2 &&
        rng.uniform01() < spec.cluster_fraction)
      row_size = std::min(spec.cluster_size, remaining);

    bool placed = false;
    if (row_size >= 2) {
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        double rx = rng.uniform(margin, w - 1 - margin);
        double ry = rng.uniform(margin, h - 1 - margin);
        double phi = rng.uniform(0.0, pi);
        double ux = -std::sin(phi), uy = std::cos(phi);  // across the shared major axis
        std::vector<std::pair<double, double>> row;
        bool ok = true;
        for (int i = 0; i < row_size && ok; ++i) {
          double t = (i - 0.5 * (row_size - 1)) * row_step;
          double cx = rx + t * ux, cy = ry + t * uy;
          if (!in_margins(cx, cy) || clashes(cx, cy))
            ok = false;
          else
            row.push_back({cx, cy});
        }
        if (!ok) continue;
        for (const auto& [cx, cy] : row) paint_car(cx, cy, phi);
        placed = true;
      }
    }
    if (!placed) {
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        double cx = rng.uniform(margin, w - 1 - margin);
        double cy = rng.uniform(margin, h - 1 - margin);
        double phi = rng.uniform(0.0, pi);
        if (clashes(cx, cy)) continue;
        paint_car(cx, cy, phi);
        placed = true;
      }
    }
    if (!placed) break;  // no room left; report what fit
  }

  if (spec.noise_sigma > 0.0)
    for (double& v : scene.image.data())
      v = std::clamp(v + spec.noise_sigma * rng.normal(), 0.0, 1.0);

  return scene;
}

DatasetManifest synth_generate(const SynthSpec& spec, uint64_t seed, const std::string& out_dir,
                               std::vector<std::string>* warnings) {
  spec.validate();
  std::filesystem::create_directories(out_dir);

  const int n = spec.images;
  int n_train = std::clamp<int>(static_cast<int>(std::llround(spec.train_fraction * n)), 1, n);
  int n_val =
      std::clamp<int>(static_cast<int>(std::llround(spec.validation_fraction * n)), 0, n - n_train);

  Rng root(seed);
  DatasetManifest man;
  man.base_dir = out_dir;
  for (int i = 0; i < n; ++i) {
    Rng rng = root.fork(static_cast<uint64_t>(i));
    SynthScene scene = synth_scene(spec, rng);
    if (scene.placed_objects < spec.objects_per_image && warnings) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "image %d: placed %d of %d objects before running out of room",
                    i, scene.placed_objects, spec.objects_per_image);
      warnings->push_back(buf);
    }

    char img_name[64], mask_name[64];
    std::snprintf(img_name, sizeof img_name, "img_%03d.png", i);
    std::snprintf(mask_name, sizeof mask_name, "img_%03d_mask.png", i);
    save_image_png16(scene.image, out_dir + "/" + img_name);
    save_mask(scene.mask, out_dir + "/" + mask_name);

    const char* split = i < n_train ? "train" : (i < n_train + n_val ? "validation" : "test");
    man.entries.push_back({img_name, mask_name, split});
  }
  man.save(out_dir + "/manifest.txt");
  return man;
}

}  // namespace locdet
