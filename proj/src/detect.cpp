#include "locdet/detect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include "locdet/ops.hpp"
#include "locdet/postfilter.hpp"
#include "locdet/textio.hpp"

namespace locdet {

namespace {

void sort_by_confidence(DetectionSet& dets) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    return a.confidence > b.confidence;
  });
}

}  // namespace

GreyImage gaussian_smooth(const GreyImage& img, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_smooth: sigma must be positive");
  auto taps = gaussian_taps(sigma);
  return separable_conv(img, taps, taps);
}

std::vector<int> local_maxima(const GreyImage& img) {
  int w = img.width(), h = img.height();
  std::vector<int> out;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double c = img(x, y);
      bool maximal = true;
      for (int dy = -1; dy <= 1 && maximal; ++dy)
        for (int dx = -1; dx <= 1 && maximal; ++dx) {
          if (dx == 0 && dy == 0) continue;
          int xx = x + dx, yy = y + dy;
          if (xx < 0 || xx >= w || yy < 0 || yy >= h) continue;
          if (!(c > img(xx, yy))) maximal = false;
        }
      if (maximal) out.push_back(y * w + x);
    }
  return out;
}

DetectionSet cc_detect(const ConfidenceImage& conf, double sigma_cc) {
  if (!(sigma_cc > 0.0)) throw std::invalid_argument("cc_detect: sigma must be positive");
  int w = conf.width(), h = conf.height();
  std::vector<uint8_t> mask(conf.size());
  bool any = false;
  for (size_t px = 0; px < mask.size(); ++px) {
    mask[px] = conf.data()[px] > 0.0;
    if (mask[px]) any = true;
  }
  if (!any) return {};

  int radius = static_cast<int>(std::llround(sigma_cc));
  if (radius > 0) mask = binary_dilate_disk(mask, w, h, radius);
  ComponentLabels lab = label_components(mask, w, h, Connectivity::Eight);

  std::vector<double> sx(lab.count, 0.0), sy(lab.count, 0.0);
  std::vector<double> peak(lab.count, -std::numeric_limits<double>::infinity());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int c = lab.label[static_cast<size_t>(y) * w + x];
      if (c < 0) continue;
      sx[c] += x;
      sy[c] += y;
      peak[c] = std::max(peak[c], conf(x, y));
    }
  DetectionSet dets;
  dets.reserve(lab.count);
  for (int c = 0; c < lab.count; ++c) {
    double n = static_cast<double>(lab.area[c]);
    dets.push_back({sx[c] / n, sy[c] / n, peak[c]});
  }
  sort_by_confidence(dets);
  return dets;
}

DetectionSet llm_detect(const ConfidenceImage& conf, double sigma_llm, double theta_llm) {
  if (sigma_llm < 0.0) throw std::invalid_argument("llm_detect: sigma must be nonnegative");
  GreyImage smoothed = sigma_llm > 0.0 ? gaussian_smooth(conf, sigma_llm) : conf;
  DetectionSet dets;
  for (int px : local_maxima(smoothed)) {
    double c = smoothed.data()[px];
    if (c > theta_llm)
      dets.push_back({static_cast<double>(px % smoothed.width()),
                      static_cast<double>(px / smoothed.width()), c});
  }
  sort_by_confidence(dets);
  return dets;
}

double kde_value(const std::vector<Detection>& points, double sigma, double x, double y) {
  double inv = 1.0 / (2.0 * sigma * sigma);
  double v = 0.0;
  for (const auto& p : points) {
    double dx = x - p.x, dy = y - p.y;
    v += p.confidence * std::exp(-(dx * dx + dy * dy) * inv);
  }
  return v;
}

std::vector<std::pair<double, double>> mean_shift_path(const std::vector<Detection>& points,
                                                       double sigma, double x0, double y0) {
  if (!(sigma > 0.0)) throw std::invalid_argument("mean_shift: bandwidth must be positive");
  std::vector<std::pair<double, double>> path{{x0, y0}};
  double inv = 1.0 / (2.0 * sigma * sigma);
  double x = x0, y = y0;
  for (int iter = 0; iter < 100; ++iter) {
    double wx = 0.0, wy = 0.0, wsum = 0.0;
    for (const auto& p : points) {
      double dx = x - p.x, dy = y - p.y;
      double k = p.confidence * std::exp(-(dx * dx + dy * dy) * inv);
      wx += k * p.x;
      wy += k * p.y;
      wsum += k;
    }
    if (!(wsum > 0.0)) break;  // every kernel underflowed; nowhere to move
    double nx = wx / wsum, ny = wy / wsum;
    double step = std::hypot(nx - x, ny - y);
    x = nx;
    y = ny;
    path.emplace_back(x, y);
    if (step < 1e-3) break;
  }
  return path;
}

DetectionSet kde_detect(const ConfidenceImage& conf, double sigma_kde, double sigma_llm,
                        double theta_llm) {
  if (!(sigma_kde > 0.0)) throw std::invalid_argument("kde_detect: bandwidth must be positive");
  DetectionSet seeds = llm_detect(conf, sigma_llm, theta_llm);
  std::vector<Detection> points;
  points.reserve(seeds.size());
  for (const auto& s : seeds)
    if (s.confidence > 0.0) points.push_back(s);  // KDE weights must be positive

  DetectionSet modes;
  for (const auto& p : points) {
    auto [mx, my] = mean_shift_path(points, sigma_kde, p.x, p.y).back();
    bool merged = false;
    for (const auto& m : modes)
      if (std::hypot(m.x - mx, m.y - my) <= 0.5) {
        merged = true;
        break;
      }
    if (!merged) modes.push_back({mx, my, kde_value(points, sigma_kde, mx, my)});
  }
  sort_by_confidence(modes);
  return modes;
}

DetectionSet run_detector(const ConfidenceImage& conf, const DetectorSpec& spec) {
  if (const auto* cc = std::get_if<CcSpec>(&spec)) {
    if (!(cc->sigma > 0.0 && cc->sigma < 20.0))
      throw std::invalid_argument("detector: sigma_cc outside (0, 20)");
    return cc_detect(conf, cc->sigma);
  }
  if (const auto* llm = std::get_if<LlmSpec>(&spec)) {
    if (!(llm->sigma >= 0.0 && llm->sigma < 20.0))
      throw std::invalid_argument("detector: sigma_llm outside [0, 20)");
    return llm_detect(conf, llm->sigma, llm->theta);
  }
  const auto& kde = std::get<KdeSpec>(spec);
  if (!(kde.sigma_kde > 0.0 && kde.sigma_kde < 10.0))
    throw std::invalid_argument("detector: sigma_kde outside (0, 10)");
  if (!(kde.sigma_llm >= 0.0 && kde.sigma_llm < 20.0))
    throw std::invalid_argument("detector: sigma_llm outside [0, 20)");
  return kde_detect(conf, kde.sigma_kde, kde.sigma_llm);
}

std::string detector_to_string(const DetectorSpec& spec) {
  if (const auto* cc = std::get_if<CcSpec>(&spec)) return "cc:" + format_real(cc->sigma);
  if (const auto* llm = std::get_if<LlmSpec>(&spec))
    return "llm:" + format_real(llm->sigma) + "," + format_real(llm->theta);
  const auto& kde = std::get<KdeSpec>(spec);
  return "kde:" + format_real(kde.sigma_kde) + "," + format_real(kde.sigma_llm);
}

void write_detections_csv(const std::string& path,
                          const std::vector<std::pair<std::string, DetectionSet>>& per_image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "image_id,x,y,confidence\n";
  for (const auto& [id, dets] : per_image)
    for (const auto& d : dets)
      out << id << ',' << format_real(d.x) << ',' << format_real(d.y) << ','
          << format_real(d.confidence) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

double parse_param(const std::string& text, const std::string& whole) {
  char* end = nullptr;
  double v = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size() || text.empty() || !std::isfinite(v))
    throw std::invalid_argument("detector: bad parameter '" + text + "' in '" + whole + "'");
  return v;
}

}  // namespace

DetectorSpec detector_from_string(const std::string& text) {
  size_t colon = text.find(':');
  if (colon == std::string::npos)
    throw std::invalid_argument("detector: expected '<kind>:<params>', got '" + text + "'");
  const std::string kind = text.substr(0, colon);

  std::vector<double> params;
  size_t pos = colon + 1;
  while (pos <= text.size()) {
    size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    params.push_back(parse_param(text.substr(pos, comma - pos), text));
    pos = comma + 1;
  }

  if (kind == "cc" && params.size() == 1) return CcSpec{params[0]};
  if (kind == "llm" && params.size() == 2) return LlmSpec{params[0], params[1]};
  if (kind == "kde" && params.size() == 2) return KdeSpec{params[0], params[1]};
  throw std::invalid_argument("detector: unknown kind or parameter count in '" + text + "'");
}

std::vector<std::pair<std::string, DetectionSet>> read_detections_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);

  std::string line;
  if (!std::getline(in, line) || (line != "image_id,x,y,confidence" &&
                                  line != "image_id,x,y,confidence\r"))
    throw std::runtime_error("detections csv: missing header in " + path);

  std::vector<std::pair<std::string, DetectionSet>> out;
  std::map<std::string, size_t> slot;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    size_t pos = 0;
    while (pos <= line.size()) {
      size_t comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      cols.push_back(line.substr(pos, comma - pos));
      pos = comma + 1;
    }
    if (cols.size() != 4 || cols[0].empty())
      throw std::runtime_error("detections csv: expected 'image_id,x,y,confidence', got: " + line);

    auto [it, inserted] = slot.emplace(cols[0], out.size());
    if (inserted) out.push_back({cols[0], {}});
    out[it->second].second.push_back(
        {parse_param(cols[1], line), parse_param(cols[2], line), parse_param(cols[3], line)});
  }
  for (auto& [id, dets] : out)
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
      return a.confidence > b.confidence;
    });
  return out;
}

}  // namespace locdet
