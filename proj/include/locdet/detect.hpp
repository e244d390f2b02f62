#pragma once

#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "locdet/raster.hpp"

namespace locdet {

struct Detection {
  double x = 0.0, y = 0.0;
  double confidence = 0.0;

  bool operator==(const Detection&) const = default;
};

// Always sorted by non-increasing confidence.
using DetectionSet = std::vector<Detection>;

// Detector parameterizations; ranges mirror the validation grid.
struct CcSpec {
  double sigma;  // (0, 20): dilation radius is round(sigma)
  bool operator==(const CcSpec&) const = default;
};
struct LlmSpec {
  double sigma;  // [0, 20): 0 skips smoothing
  double theta;
  bool operator==(const LlmSpec&) const = default;
};
struct KdeSpec {
  double sigma_kde;  // (0, 10): mean-shift bandwidth
  double sigma_llm;  // smoothing for the seed maxima
  bool operator==(const KdeSpec&) const = default;
};
using DetectorSpec = std::variant<CcSpec, LlmSpec, KdeSpec>;

GreyImage gaussian_smooth(const GreyImage& img, double sigma);

// Raster indices of pixels strictly greater than every in-bounds 8-neighbor;
// plateaus produce none.
std::vector<int> local_maxima(const GreyImage& img);

// Threshold at zero, dilate by a disk of radius round(sigma_cc), then one
// detection per 8-connected component: centroid location, max confidence.
DetectionSet cc_detect(const ConfidenceImage& conf, double sigma_cc);

// Local maxima of the (optionally smoothed) confidence above theta_llm.
DetectionSet llm_detect(const ConfidenceImage& conf, double sigma_llm, double theta_llm);

// Modes of the confidence-weighted Gaussian KDE over the positive LLM maxima,
// found by mean shift from every seed and merged within 0.5 px.
DetectionSet kde_detect(const ConfidenceImage& conf, double sigma_kde, double sigma_llm,
                        double theta_llm = 0.0);

// Unnormalized weighted Gaussian KDE: sum_i w_i exp(-d_i^2 / (2 sigma^2)).
// Also the confidence assigned to a KDE mode.
double kde_value(const std::vector<Detection>& points, double sigma, double x, double y);

// Mean-shift trajectory from (x0, y0): the start plus one entry per step,
// ending at convergence (displacement < 1e-3 px) or after 100 steps. The KDE
// value is non-decreasing along the path.
std::vector<std::pair<double, double>> mean_shift_path(const std::vector<Detection>& points,
                                                       double sigma, double x0, double y0);

// Validates the parameter ranges, then dispatches.
DetectionSet run_detector(const ConfidenceImage& conf, const DetectorSpec& spec);

std::string detector_to_string(const DetectorSpec& spec);
// Accepts the to_string forms: "cc:<s>", "llm:<s>,<t>", "kde:<s>,<s_llm>".
DetectorSpec detector_from_string(const std::string& text);

// CSV rows "image_id,x,y,confidence", one block per image in input order.
void write_detections_csv(const std::string& path,
                          const std::vector<std::pair<std::string, DetectionSet>>& per_image);
// Groups rows by image in first-seen order; detections come back sorted by
// confidence whatever order the file held.
std::vector<std::pair<std::string, DetectionSet>> read_detections_csv(const std::string& path);

}  // namespace locdet
