#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "locdet/pipeline.hpp"
#include "locdet/raster.hpp"
#include "locdet/rng.hpp"

namespace locdet {

// Scene parameters for the synthetic aerial stand-in: textured background,
// elliptical cars, rectangular building confusers, optional occlusion
// stripes and additive noise.
struct SynthSpec {
  int width = 128, height = 128;
  int images = 20;
  int objects_per_image = 10;
  int confusers_per_image = 2;

  double car_semi_major = 4.0, car_semi_minor = 2.0;
  double car_lo = 0.75, car_hi = 0.92;  // per-car base intensity band

  // building area band sits well above the smallest region-growing cutoff,
  // so that filter visibly changes predictions on these scenes
  int confuser_area_lo = 1300, confuser_area_hi = 1700;
  double confuser_lo = 0.60, confuser_hi = 0.80;

  double background_lo = 0.25, background_hi = 0.45;
  double noise_sigma = 0.05;        // additive Gaussian, clamped to [0,1]
  double occlusion_fraction = 0.3;  // chance a car gets a background stripe

  // Fraction of the cars laid out as tight parking rows sharing one
  // orientation, spaced 2*minor+3 px apart. Rows keep mask instances
  // disconnected but sit close enough that component-based detection
  // merges them; 0 keeps the old scattered placement.
  double cluster_fraction = 0.0;
  int cluster_size = 3;  // cars per row, capped by the remaining budget

  // split proportions over the image list, train first, then validation
  double train_fraction = 0.55, validation_fraction = 0.27;

  void validate() const;
};

struct SynthScene {
  GreyImage image;
  LabelMask mask;
  int placed_objects = 0;
  int placed_confusers = 0;
};

// One rendered scene. Placement retries are bounded; if space runs out the
// scene holds fewer instances than requested (see placed_objects).
SynthScene synth_scene(const SynthSpec& spec, Rng& rng);

// Renders spec.images scenes under out_dir as 16-bit PNGs with label masks,
// writes manifest.txt with the split assignment, and returns the manifest.
// Warnings (for reduced object counts) are appended to *warnings when given.
DatasetManifest synth_generate(const SynthSpec& spec, uint64_t seed, const std::string& out_dir,
                               std::vector<std::string>* warnings = nullptr);

}  // namespace locdet
