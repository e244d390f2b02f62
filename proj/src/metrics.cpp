#include "locdet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "locdet/postfilter.hpp"
#include "locdet/textio.hpp"

namespace locdet {

GroundTruth GroundTruth::from_mask(const LabelMask& mask) {
  const int w = mask.width(), h = mask.height();
  std::vector<uint8_t> object(mask.size(), 0);
  for (size_t i = 0; i < mask.size(); ++i)
    object[i] = mask.labels()[i] == PixelLabel::Object ? 1 : 0;

  ComponentLabels comps = label_components(object, w, h, Connectivity::Eight);

  GroundTruth gt;
  gt.width = w;
  gt.height = h;
  gt.labels = mask.labels();
  gt.instance = std::move(comps.label);
  gt.centroids.assign(comps.count, {0.0, 0.0});
  std::vector<int64_t> npix(comps.count, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int32_t id = gt.instance[static_cast<size_t>(y) * w + x];
      if (id < 0) continue;
      gt.centroids[id].first += x;
      gt.centroids[id].second += y;
      ++npix[id];
    }
  for (int c = 0; c < comps.count; ++c) {
    gt.centroids[c].first /= static_cast<double>(npix[c]);
    gt.centroids[c].second /= static_cast<double>(npix[c]);
  }
  return gt;
}

MatchResult match_cueing(const DetectionSet& dets, const GroundTruth& gt) {
  if (gt.width < 1 || gt.height < 1)
    throw std::invalid_argument("match_cueing: ground truth has no raster");
  std::vector<uint8_t> hit(gt.count(), 0);
  MatchResult res;
  for (const Detection& d : dets) {
    int x = std::clamp(static_cast<int>(std::llround(d.x)), 0, gt.width - 1);
    int y = std::clamp(static_cast<int>(std::llround(d.y)), 0, gt.height - 1);
    size_t px = static_cast<size_t>(y) * gt.width + x;
    switch (gt.labels[px]) {
      case PixelLabel::Object:
        hit[gt.instance[px]] = 1;
        break;
      case PixelLabel::Background:
        ++res.false_positives;
        break;
      case PixelLabel::Confuser:
        break;  // neither credit nor penalty
    }
  }
  for (uint8_t f : hit) res.true_positives += f;
  res.false_negatives = static_cast<int>(gt.count()) - res.true_positives;
  return res;
}

MatchResult match_nn(const DetectionSet& dets,
                     const std::vector<std::pair<double, double>>& objects, double r) {
  if (!(r > 0.0)) throw std::invalid_argument("match_nn: radius must be positive");
  const size_t nd = dets.size(), no = objects.size();
  std::vector<uint8_t> det_used(nd, 0), obj_used(no, 0);
  const double r2 = r * r;
  int tp = 0;
  for (size_t pass = 0; pass < std::min(nd, no); ++pass) {
    double best = std::numeric_limits<double>::infinity();
    size_t bd = nd, bo = no;
    for (size_t di = 0; di < nd; ++di) {
      if (det_used[di]) continue;
      for (size_t oi = 0; oi < no; ++oi) {
        if (obj_used[oi]) continue;
        double dx = dets[di].x - objects[oi].first;
        double dy = dets[di].y - objects[oi].second;
        double d2 = dx * dx + dy * dy;
        if (d2 < best) {  // strict: equal distances keep the earlier pair
          best = d2;
          bd = di;
          bo = oi;
        }
      }
    }
    if (bd == nd || best > r2) break;
    det_used[bd] = 1;
    obj_used[bo] = 1;
    ++tp;
  }
  MatchResult res;
  res.true_positives = tp;
  res.false_positives = static_cast<int>(nd) - tp;
  res.false_negatives = static_cast<int>(no) - tp;
  return res;
}

MatchResult match_counting(const DetectionSet& dets,
                           const std::vector<std::pair<double, double>>& objects,
                           double r_large) {
  return match_nn(dets, objects, r_large);
}

std::string criterion_name(MatchCriterion c) {
  switch (c) {
    case MatchCriterion::Cueing: return "cueing";
    case MatchCriterion::Tracking: return "tracking";
    case MatchCriterion::Counting: return "counting";
  }
  throw std::logic_error("criterion_name: unknown criterion");
}

MatchCriterion criterion_from_name(const std::string& name) {
  if (name == "cueing") return MatchCriterion::Cueing;
  if (name == "tracking") return MatchCriterion::Tracking;
  if (name == "counting") return MatchCriterion::Counting;
  throw std::invalid_argument("criterion_from_name: unknown criterion '" + name + "'");
}

MatchResult match_detections(const DetectionSet& dets, const GroundTruth& gt,
                             MatchCriterion criterion, double tracking_radius) {
  switch (criterion) {
    case MatchCriterion::Cueing:
      return match_cueing(dets, gt);
    case MatchCriterion::Tracking:
      return match_nn(dets, gt.centroids, tracking_radius);
    case MatchCriterion::Counting:
      return match_counting(dets, gt.centroids, std::hypot(gt.width, gt.height));
  }
  throw std::logic_error("match_detections: unknown criterion");
}

RocCurve build_roc(const std::vector<DetectionSet>& dets_per_image,
                   const std::vector<GroundTruth>& gt_per_image, MatchCriterion criterion,
                   double u, double tracking_radius) {
  if (!(u > 0.0)) throw std::invalid_argument("build_roc: U must be positive");
  if (dets_per_image.size() != gt_per_image.size())
    throw std::invalid_argument("build_roc: detections and ground truth differ in image count");
  const size_t n_images = gt_per_image.size();
  if (n_images == 0) throw std::invalid_argument("build_roc: no images");

  size_t total_objects = 0;
  for (const GroundTruth& gt : gt_per_image) total_objects += gt.count();
  if (total_objects == 0)
    throw std::runtime_error("build_roc: empty ground truth, no objects to detect");

  std::vector<double> thresholds;
  for (const DetectionSet& dets : dets_per_image) {
    for (size_t k = 0; k + 1 < dets.size(); ++k)
      if (dets[k].confidence < dets[k + 1].confidence)
        throw std::invalid_argument("build_roc: detections must be sorted by confidence");
    for (const Detection& d : dets) thresholds.push_back(d.confidence);
  }
  std::sort(thresholds.begin(), thresholds.end(), std::greater<double>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  // Detection sets are sorted by confidence, so each threshold retains a
  // prefix; grow the retained prefixes as the sweep descends.
  std::vector<DetectionSet> retained(n_images);
  std::vector<size_t> cursor(n_images, 0);

  RocCurve curve;
  curve.u = u;
  bool have_anchor = false;
  RocPoint anchor{0.0, 0.0, 0.0};

  for (double theta : thresholds) {
    int tp = 0, fp = 0;
    for (size_t i = 0; i < n_images; ++i) {
      const DetectionSet& all = dets_per_image[i];
      while (cursor[i] < all.size() && all[cursor[i]].confidence >= theta)
        retained[i].push_back(all[cursor[i]++]);
      MatchResult m = match_detections(retained[i], gt_per_image[i], criterion, tracking_radius);
      tp += m.true_positives;
      fp += m.false_positives;
    }
    RocPoint pt;
    pt.threshold = theta;
    pt.fp_per_image = static_cast<double>(fp) / static_cast<double>(n_images);
    pt.tp_rate = static_cast<double>(tp) / static_cast<double>(total_objects);
    if (pt.fp_per_image == 0.0 && !have_anchor) {
      anchor = pt;
      have_anchor = true;
    }
    if (pt.fp_per_image > u) break;  // false positives only grow from here
    curve.points.push_back(pt);
  }

  if (!have_anchor) anchor.threshold = std::numeric_limits<double>::infinity();
  curve.points.insert(curve.points.begin(), anchor);
  return curve;
}

double aroc(const RocCurve& curve) {
  if (curve.points.empty()) return 0.0;
  double area = 0.0;
  for (size_t i = 0; i + 1 < curve.points.size(); ++i) {
    const RocPoint& a = curve.points[i];
    const RocPoint& b = curve.points[i + 1];
    area += (b.fp_per_image - a.fp_per_image) * (a.tp_rate + b.tp_rate) * 0.5;
  }
  const RocPoint& last = curve.points.back();
  area += (curve.u - last.fp_per_image) * last.tp_rate;
  return area / curve.u;
}

void write_roc_csv(const RocCurve& curve, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_roc_csv: cannot open " + path);
  out << "threshold,fp_per_image,tp_rate\n";
  for (const RocPoint& p : curve.points)
    out << format_real(p.threshold) << ',' << format_real(p.fp_per_image) << ','
        << format_real(p.tp_rate) << '\n';
  out << "AROC=" << format_real(aroc(curve)) << '\n';
  if (!out) throw std::runtime_error("write_roc_csv: write failed for " + path);
}

void write_roc_svg(const RocCurve& curve, const std::string& path) {
  // Fixed 480x360 canvas with a 60-pixel margin; x spans [0, u] false
  // positives per image, y spans [0, 1] detection rate.
  const double x0 = 60, y0 = 300, pw = 360, ph = 240;
  auto sx = [&](double fp) { return x0 + pw * fp / curve.u; };
  auto sy = [&](double tp) { return y0 - ph * tp; };

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_roc_svg: cannot open " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"360\" "
         "viewBox=\"0 0 480 360\">\n";
  out << "<rect x=\"60\" y=\"60\" width=\"360\" height=\"240\" fill=\"white\" "
         "stroke=\"black\"/>\n";
  out << "<text x=\"240\" y=\"340\" text-anchor=\"middle\" font-size=\"14\">"
         "false positives per image (0 to "
      << format_real(curve.u) << ")</text>\n";
  out << "<text x=\"20\" y=\"180\" text-anchor=\"middle\" font-size=\"14\" "
         "transform=\"rotate(-90 20 180)\">detection rate</text>\n";
  if (!curve.points.empty()) {
    out << "<polyline fill=\"none\" stroke=\"crimson\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < curve.points.size(); ++i) {
      if (i) out << ' ';
      out << format_real(sx(curve.points[i].fp_per_image)) << ','
          << format_real(sy(curve.points[i].tp_rate));
    }
    // horizontal extension to the right edge
    out << ' ' << format_real(sx(curve.u)) << ','
        << format_real(sy(curve.points.back().tp_rate));
    out << "\"/>\n";
  }
  out << "<text x=\"416\" y=\"80\" text-anchor=\"end\" font-size=\"14\">AROC = "
      << format_real(aroc(curve)) << "</text>\n";
  out << "</svg>\n";
  if (!out) throw std::runtime_error("write_roc_svg: write failed for " + path);
}

}  // namespace locdet
