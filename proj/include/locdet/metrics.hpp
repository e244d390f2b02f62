#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "locdet/detect.hpp"
#include "locdet/raster.hpp"

namespace locdet {

// Object instances derived from a label mask: 8-connected components of the
// Object pixels, each located at its centroid.
struct GroundTruth {
  int width = 0, height = 0;
  std::vector<std::pair<double, double>> centroids;  // one per instance
  std::vector<int32_t> instance;                     // per pixel: instance id, -1 elsewhere
  std::vector<PixelLabel> labels;                    // original per-pixel labels

  static GroundTruth from_mask(const LabelMask& mask);
  size_t count() const { return centroids.size(); }
};

struct MatchResult {
  int true_positives = 0;
  int false_positives = 0;
  int false_negatives = 0;
};

// A detection whose rounded pixel lands on an object counts that object as
// hit (duplicate hits are free), on background it is a false positive, and on
// a confuser it is ignored entirely.
MatchResult match_cueing(const DetectionSet& dets, const GroundTruth& gt);

// Greedy globally-closest-pair matching: repeatedly pair the detection and
// object at minimum Euclidean distance until the best remaining pair is
// farther than r. Equal distances prefer the lowest detection index, then the
// lowest object index.
MatchResult match_nn(const DetectionSet& dets,
                     const std::vector<std::pair<double, double>>& objects, double r);

// Nearest-neighbor matching with a radius so large it never binds; callers
// default it to the image diagonal.
MatchResult match_counting(const DetectionSet& dets,
                           const std::vector<std::pair<double, double>>& objects,
                           double r_large);

enum class MatchCriterion { Cueing, Tracking, Counting };

std::string criterion_name(MatchCriterion c);
MatchCriterion criterion_from_name(const std::string& name);

// Tracking uses the given radius; counting substitutes the image diagonal.
MatchResult match_detections(const DetectionSet& dets, const GroundTruth& gt,
                             MatchCriterion criterion, double tracking_radius);

struct RocPoint {
  double threshold = 0.0;  // retain detections with confidence >= threshold
  double fp_per_image = 0.0;
  double tp_rate = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // fp_per_image non-decreasing, capped at u
  double u = 30.0;
};

// Sweeps the distinct confidence values in descending order, matching the
// retained detections of every image at each threshold. Points beyond u false
// positives per image are dropped; a zero-FP anchor leads the curve.
RocCurve build_roc(const std::vector<DetectionSet>& dets_per_image,
                   const std::vector<GroundTruth>& gt_per_image, MatchCriterion criterion,
                   double u, double tracking_radius = 5.0);

// Trapezoidal area of the curve extended horizontally to u, normalized to [0,1].
double aroc(const RocCurve& curve);

// CSV rows "threshold,fp_per_image,tp_rate" followed by "AROC=<value>".
void write_roc_csv(const RocCurve& curve, const std::string& path);
void write_roc_svg(const RocCurve& curve, const std::string& path);

}  // namespace locdet
