#include "locdet/boost.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "locdet/textio.hpp"

namespace locdet {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Candidate stump thresholds for one feature: midpoints between consecutive
// distinct values, thinned to at most cap quantile-spaced entries. A constant
// feature yields no candidates.
std::vector<double> stump_thresholds(std::vector<double> vals, int cap) {
  std::sort(vals.begin(), vals.end());
  vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
  std::vector<double> mids;
  if (vals.size() >= 2) {
    mids.reserve(vals.size() - 1);
    for (size_t i = 0; i + 1 < vals.size(); ++i)
      mids.push_back(vals[i] + (vals[i + 1] - vals[i]) * 0.5);
  }
  if (mids.size() > static_cast<size_t>(cap)) {
    std::vector<double> kept;
    kept.reserve(cap);
    if (cap == 1) {
      kept.push_back(mids[(mids.size() - 1) / 2]);
    } else {
      size_t m = mids.size() - 1;
      size_t prev = mids.size();  // sentinel no index reaches
      for (int j = 0; j < cap; ++j) {
        size_t idx = static_cast<size_t>(j) * m / (cap - 1);
        if (idx != prev) kept.push_back(mids[idx]);
        prev = idx;
      }
    }
    mids = std::move(kept);
  }
  return mids;
}

void sorted_unique(std::vector<int>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

size_t radius_index(const std::vector<int>& radii, int r) {
  return static_cast<size_t>(std::lower_bound(radii.begin(), radii.end(), r) - radii.begin());
}

}  // namespace

TrainingSet TrainingSet::build(std::vector<std::pair<GreyImage, LabelMask>> data,
                               size_t background_cap_per_image, Rng* rng) {
  if (data.empty()) throw std::invalid_argument("training set: no images");
  TrainingSet ts;
  ts.items.reserve(data.size());
  for (auto& [image, mask] : data) {
    if (image.width() != mask.width() || image.height() != mask.height())
      throw std::invalid_argument("training set: image and mask sizes differ");
    std::vector<int> object, background;
    const auto& labels = mask.labels();
    for (size_t px = 0; px < labels.size(); ++px) {
      if (labels[px] == PixelLabel::Object)
        object.push_back(static_cast<int>(px));
      else if (labels[px] == PixelLabel::Background)
        background.push_back(static_cast<int>(px));
    }
    if (background_cap_per_image > 0 && background.size() > background_cap_per_image) {
      if (rng == nullptr)
        throw std::invalid_argument("training set: background subsampling needs an rng");
      // Partial Fisher-Yates draw without replacement, then back to raster
      // order so feature gathers stay cache friendly.
      for (size_t j = 0; j < background_cap_per_image; ++j) {
        size_t pick = j + static_cast<size_t>(
                              rng->uniform_int(0, static_cast<int64_t>(background.size() - j) - 1));
        std::swap(background[j], background[pick]);
      }
      background.resize(background_cap_per_image);
      std::sort(background.begin(), background.end());
    }
    Item item;
    item.offset = ts.total;
    item.included.reserve(object.size() + background.size());
    item.labels.reserve(object.size() + background.size());
    size_t oi = 0, bi = 0;  // merge back into raster order
    while (oi < object.size() || bi < background.size()) {
      bool take_object =
          bi == background.size() || (oi < object.size() && object[oi] < background[bi]);
      if (take_object) {
        item.included.push_back(object[oi++]);
        item.labels.push_back(1);
      } else {
        item.included.push_back(background[bi++]);
        item.labels.push_back(-1);
      }
    }
    ts.total += item.included.size();
    item.image = std::move(image);
    item.mask = std::move(mask);
    ts.items.push_back(std::move(item));
  }
  return ts;
}

std::vector<double> init_weights(const TrainingSet& ts) {
  size_t pos = 0, neg = 0;
  for (const auto& item : ts.items)
    for (int8_t y : item.labels) (y > 0 ? pos : neg)++;
  if (pos == 0) throw std::runtime_error("empty class: training set has no object pixels");
  if (neg == 0) throw std::runtime_error("empty class: training set has no background pixels");
  std::vector<double> weights(ts.total);
  const double wp = 0.5 / static_cast<double>(pos);
  const double wn = 0.5 / static_cast<double>(neg);
  for (const auto& item : ts.items)
    for (size_t k = 0; k < item.labels.size(); ++k)
      weights[item.offset + k] = item.labels[k] > 0 ? wp : wn;
  return weights;
}

SignMap WeakHypothesis::predict_map(const GreyImage& image) const {
  GreyImage f = evaluate(program, image);
  SignMap pred(image.width(), image.height());
  const auto& fd = f.data();
  const auto p = static_cast<int8_t>(polarity);
  for (size_t px = 0; px < fd.size(); ++px)
    pred.v[px] = fd[px] > threshold ? p : static_cast<int8_t>(-p);
  return apply_post_filter(pred, filter);
}

FitResult fit_weak_over_programs(const TrainingSet& ts, const std::vector<double>& D,
                                 const std::vector<FeatureProgram>& programs,
                                 const std::vector<PostFilterSpec>& filters,
                                 int threshold_cap) {
  if (programs.empty()) throw std::invalid_argument("fit_weak: empty program pool");
  if (filters.empty()) throw std::invalid_argument("fit_weak: empty filter list");
  if (threshold_cap < 1) throw std::invalid_argument("fit_weak: threshold cap must be positive");
  if (D.size() != ts.total) throw std::invalid_argument("fit_weak: weight vector size mismatch");

  // Signed weights D(i) y_i in training-set order; every candidate's score is
  // r = sum over supervised pixels of dy * h.
  std::vector<double> dy(ts.total);
  double total_dy = 0.0;
  for (const auto& item : ts.items)
    for (size_t k = 0; k < item.included.size(); ++k) {
      size_t i = item.offset + k;
      dy[i] = D[i] * item.labels[k];
      total_dy += dy[i];
    }

  // Families of filter parameters that the per-cell tables must cover.
  bool need_grow = false;
  std::vector<int> erode_radii, dilate_radii, median_radii;
  for (const auto& f : filters) {
    if (std::holds_alternative<RegionGrowFilter>(f)) need_grow = true;
    else if (const auto* e = std::get_if<ErodeFilter>(&f)) erode_radii.push_back(e->radius);
    else if (const auto* d = std::get_if<DilateFilter>(&f)) dilate_radii.push_back(d->radius);
    else if (const auto* m = std::get_if<MedianFilter>(&f)) median_radii.push_back(m->radius);
  }
  sorted_unique(erode_radii);
  sorted_unique(dilate_radii);
  sorted_unique(median_radii);

  struct Best {
    double r = kNegInf;
    size_t program = 0;
    double threshold = 0.0;
    int polarity = 1;
    size_t filter = 0;
  } best;
  bool found = false;
  std::vector<double> pool(programs.size(), kNegInf);

  std::vector<std::vector<uint8_t>> masks(ts.items.size());
  for (size_t ii = 0; ii < ts.items.size(); ++ii) masks[ii].resize(ts.items[ii].image.size());

  for (size_t pi = 0; pi < programs.size(); ++pi) {
    std::vector<GreyImage> features;
    features.reserve(ts.items.size());
    std::vector<double> vals(ts.total);
    for (size_t ii = 0; ii < ts.items.size(); ++ii) {
      features.push_back(evaluate(programs[pi], ts.items[ii].image));
      const auto& fd = features.back().data();
      const auto& item = ts.items[ii];
      for (size_t k = 0; k < item.included.size(); ++k)
        vals[item.offset + k] = fd[item.included[k]];
    }

    for (double theta : stump_thresholds(std::move(vals), threshold_cap)) {
      for (int pol : {+1, -1}) {
        // Positive-prediction mask per item: the stump emits pol above the
        // threshold, so the +1 set flips to the complement when pol is -1.
        double a_sum = 0.0;  // signed weight of positive predictions
        for (size_t ii = 0; ii < ts.items.size(); ++ii) {
          const auto& fd = features[ii].data();
          auto& m = masks[ii];
          if (pol > 0)
            for (size_t px = 0; px < fd.size(); ++px) m[px] = fd[px] > theta;
          else
            for (size_t px = 0; px < fd.size(); ++px) m[px] = fd[px] > theta ? 0 : 1;
          const auto& item = ts.items[ii];
          for (size_t k = 0; k < item.included.size(); ++k)
            if (m[item.included[k]]) a_sum += dy[item.offset + k];
        }
        const double b_sum = total_dy - a_sum;
        const double r_none = a_sum - b_sum;

        // Region growing abstains on +1 components above an area cutoff, so
        // r(k) is r_none minus the mass of the components that abstain. One
        // labeling pass serves every cutoff via area-sorted prefix sums.
        std::vector<int64_t> grow_area;
        std::vector<double> grow_prefix{0.0};
        if (need_grow) {
          std::vector<std::pair<int64_t, double>> comps;
          for (size_t ii = 0; ii < ts.items.size(); ++ii) {
            const auto& item = ts.items[ii];
            ComponentLabels lab = label_components(masks[ii], item.image.width(),
                                                   item.image.height(), Connectivity::Four);
            std::vector<double> mass(lab.count, 0.0);
            for (size_t k = 0; k < item.included.size(); ++k) {
              int px = item.included[k];
              if (masks[ii][px]) mass[lab.label[px]] += dy[item.offset + k];
            }
            for (int c = 0; c < lab.count; ++c) comps.emplace_back(lab.area[c], mass[c]);
          }
          std::sort(comps.begin(), comps.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first; });
          grow_area.resize(comps.size());
          grow_prefix.resize(comps.size() + 1);
          for (size_t j = 0; j < comps.size(); ++j) {
            grow_area[j] = comps[j].first;
            grow_prefix[j + 1] = grow_prefix[j] + comps[j].second;
          }
        }

        // Erosion keeps a +1 pixel when no unset pixel lies within the disk;
        // the surviving mass per radius comes from one distance transform.
        // The -1 side is untouched, so r = survivors - b_sum.
        std::vector<double> erode_r(erode_radii.size(), 0.0);
        if (!erode_radii.empty()) {
          for (size_t ii = 0; ii < ts.items.size(); ++ii) {
            const auto& item = ts.items[ii];
            auto d2 = squared_edt_to_unset(masks[ii], item.image.width(), item.image.height());
            for (size_t k = 0; k < item.included.size(); ++k) {
              int px = item.included[k];
              if (!masks[ii][px]) continue;
              for (size_t j = 0; j < erode_radii.size(); ++j)
                if (d2[px] > static_cast<int64_t>(erode_radii[j]) * erode_radii[j])
                  erode_r[j] += dy[item.offset + k];
            }
          }
          for (double& r : erode_r) r -= b_sum;
        }

        // Dilation keeps +1 pixels and abstains on -1 pixels within reach of
        // the +1 set, so r = a_sum - (mass of -1 pixels still out of reach).
        std::vector<double> dilate_r(dilate_radii.size(), 0.0);
        if (!dilate_radii.empty()) {
          for (size_t ii = 0; ii < ts.items.size(); ++ii) {
            const auto& item = ts.items[ii];
            auto d2 = squared_edt_to_set(masks[ii], item.image.width(), item.image.height());
            for (size_t k = 0; k < item.included.size(); ++k) {
              int px = item.included[k];
              if (masks[ii][px]) continue;
              for (size_t j = 0; j < dilate_radii.size(); ++j)
                if (d2[px] > static_cast<int64_t>(dilate_radii[j]) * dilate_radii[j])
                  dilate_r[j] += dy[item.offset + k];
            }
          }
          for (size_t j = 0; j < dilate_radii.size(); ++j) dilate_r[j] = a_sum - dilate_r[j];
        }

        std::vector<double> median_r(median_radii.size(), 0.0);
        for (size_t j = 0; j < median_radii.size(); ++j) {
          for (size_t ii = 0; ii < ts.items.size(); ++ii) {
            const auto& item = ts.items[ii];
            auto med = binary_median_disk(masks[ii], item.image.width(), item.image.height(),
                                          median_radii[j]);
            for (size_t k = 0; k < item.included.size(); ++k) {
              int px = item.included[k];
              if (masks[ii][px]) {
                if (med[px]) median_r[j] += dy[item.offset + k];
              } else if (!med[px]) {
                median_r[j] -= dy[item.offset + k];
              }
            }
          }
        }

        for (size_t fi = 0; fi < filters.size(); ++fi) {
          double r;
          if (const auto* g = std::get_if<RegionGrowFilter>(&filters[fi])) {
            auto it = std::lower_bound(grow_area.begin(), grow_area.end(), g->max_area,
                                       [](int64_t area, int k) { return area > k; });
            r = r_none - grow_prefix[static_cast<size_t>(it - grow_area.begin())];
          } else if (const auto* e = std::get_if<ErodeFilter>(&filters[fi])) {
            r = erode_r[radius_index(erode_radii, e->radius)];
          } else if (const auto* d = std::get_if<DilateFilter>(&filters[fi])) {
            r = dilate_r[radius_index(dilate_radii, d->radius)];
          } else if (const auto* m = std::get_if<MedianFilter>(&filters[fi])) {
            r = median_r[radius_index(median_radii, m->radius)];
          } else {
            r = r_none;
          }
          if (r > pool[pi]) pool[pi] = r;
          if (r > best.r) {
            best = {r, pi, theta, pol, fi};
            found = true;
          }
        }
      }
    }
  }

  FitResult out;
  out.pool_scores = std::move(pool);
  if (found) {
    out.hypothesis.program = programs[best.program];
    out.hypothesis.threshold = best.threshold;
    out.hypothesis.polarity = best.polarity;
    out.hypothesis.filter = filters[best.filter];
    out.r = best.r;
  } else {
    out.r = kNegInf;  // no candidate at all (every pool feature was constant)
  }
  return out;
}

FitResult fit_weak(const TrainingSet& ts, const std::vector<double>& D,
                   const TrainConfig& config, Rng& rng) {
  if (config.pool_size < 1) throw std::invalid_argument("fit_weak: pool size must be positive");
  std::vector<FeatureProgram> programs;
  programs.reserve(config.pool_size);
  for (int i = 0; i < config.pool_size; ++i)
    programs.push_back(config.program_source ? config.program_source(rng)
                                             : sample_program(config.grammar, rng));
  return fit_weak_over_programs(ts, D, programs, config.filters, config.threshold_cap);
}

double compute_alpha(double w_plus, double w_minus, size_t n) {
  if (n == 0) throw std::invalid_argument("compute_alpha: empty training set");
  const double eps = 1.0 / (2.0 * static_cast<double>(n));
  return 0.5 * std::log((w_plus + eps) / (w_minus + eps));
}

double update_weights(const TrainingSet& ts, std::vector<double>& D,
                      const std::vector<SignMap>& h, double alpha) {
  if (h.size() != ts.items.size())
    throw std::invalid_argument("update_weights: one sign map per training image required");
  if (D.size() != ts.total)
    throw std::invalid_argument("update_weights: weight vector size mismatch");
  for (size_t ii = 0; ii < ts.items.size(); ++ii) {
    const auto& item = ts.items[ii];
    const auto& hv = h[ii].v;
    for (size_t k = 0; k < item.included.size(); ++k) {
      int s = hv[item.included[k]];
      if (s != 0) D[item.offset + k] *= std::exp(-alpha * item.labels[k] * s);
    }
  }
  double z = 0.0;
  for (double w : D) z += w;
  if (!(z > 0.0) || !std::isfinite(z))
    throw std::runtime_error("update_weights: degenerate normalizer");
  for (double& w : D) w /= z;
  return z;
}

StrongClassifier train(const TrainingSet& ts, const TrainConfig& config, Rng& rng,
                       uint64_t seed, TrainLog* log) {
  if (config.rounds < 1) throw std::invalid_argument("train: round count must be positive");
  std::vector<double> weights = init_weights(ts);

  StrongClassifier model;
  model.variant = config.grammar.variant;
  model.seed = seed;
  model.rounds_requested = config.rounds;
  model.pool_size = config.pool_size;

  double product_z = 1.0;
  for (int t = 0; t < config.rounds; ++t) {
    FitResult fit = fit_weak(ts, weights, config, rng);
    if (!(fit.r > 0.0)) break;  // nothing beats chance; stop before accepting

    std::vector<SignMap> maps;
    maps.reserve(ts.items.size());
    for (const auto& item : ts.items) maps.push_back(fit.hypothesis.predict_map(item.image));

    double w_plus = 0.0, w_minus = 0.0;
    for (size_t ii = 0; ii < ts.items.size(); ++ii) {
      const auto& item = ts.items[ii];
      for (size_t k = 0; k < item.included.size(); ++k) {
        int s = maps[ii].v[item.included[k]];
        if (s == 0) continue;
        (s == item.labels[k] ? w_plus : w_minus) += weights[item.offset + k];
      }
    }
    double alpha = compute_alpha(w_plus, w_minus, ts.total);
    if (!(alpha > 0.0)) break;

    double z = update_weights(ts, weights, maps, alpha);
    product_z *= z;
    model.rounds.emplace_back(std::move(fit.hypothesis), alpha);
    if (log) {
      log->rounds.push_back({fit.r, alpha, z, product_z});
      log->pool_scores.push_back(std::move(fit.pool_scores));
    }
  }

  if (model.rounds.empty())
    throw std::runtime_error("no learnable structure: every weak hypothesis was rejected");
  return model;
}

ConfidenceImage StrongClassifier::predict(const GreyImage& image) const {
  ConfidenceImage out(image.width(), image.height(), 0.0);
  auto& od = out.data();
  for (const auto& [hyp, alpha] : rounds) {
    SignMap h = hyp.predict_map(image);
    for (size_t px = 0; px < od.size(); ++px)
      if (h.v[px] != 0) od[px] += alpha * h.v[px];
  }
  return out;
}

namespace {

// Line-oriented "key value" reader for the model format.
class ModelReader {
 public:
  explicit ModelReader(const std::string& text) : in_(text) {}

  std::string line() {
    std::string s;
    if (!std::getline(in_, s)) throw std::runtime_error("model parse: unexpected end of input");
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
  }

  std::string field(const std::string& key) {
    std::string s = line();
    if (s.size() <= key.size() || s.compare(0, key.size(), key) != 0 || s[key.size()] != ' ')
      throw std::runtime_error("model parse: expected '" + key + " ...', got '" + s + "'");
    return s.substr(key.size() + 1);
  }

 private:
  std::istringstream in_;
};

long long parse_i64(const std::string& text, const char* what) {
  const char* begin = text.c_str();
  char* end = nullptr;
  long long v = std::strtoll(begin, &end, 10);
  if (end == begin || *end != '\0')
    throw std::runtime_error(std::string("model parse: bad ") + what + " '" + text + "'");
  return v;
}

uint64_t parse_u64(const std::string& text, const char* what) {
  const char* begin = text.c_str();
  char* end = nullptr;
  unsigned long long v = std::strtoull(begin, &end, 10);
  if (end == begin || *end != '\0' || text[0] == '-')
    throw std::runtime_error(std::string("model parse: bad ") + what + " '" + text + "'");
  return v;
}

double parse_f64(const std::string& text, const char* what) {
  const char* begin = text.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0')
    throw std::runtime_error(std::string("model parse: bad ") + what + " '" + text + "'");
  return v;
}

}  // namespace

std::string serialize_model(const StrongClassifier& model) {
  std::ostringstream out;
  out << "locdet-model v1\n";
  out << "variant " << variant_name(model.variant) << "\n";
  out << "seed " << model.seed << "\n";
  out << "rounds_requested " << model.rounds_requested << "\n";
  out << "pool_size " << model.pool_size << "\n";
  out << "rounds " << model.rounds.size() << "\n";
  for (size_t t = 0; t < model.rounds.size(); ++t) {
    const auto& [hyp, alpha] = model.rounds[t];
    out << "round " << t << "\n";
    out << "alpha " << format_real(alpha) << "\n";
    out << "threshold " << format_real(hyp.threshold) << "\n";
    out << "polarity " << hyp.polarity << "\n";
    out << "filter " << filter_to_string(hyp.filter) << "\n";
    out << "program " << serialize_program(hyp.program) << "\n";
  }
  out << "end\n";
  return out.str();
}

StrongClassifier parse_model(const std::string& text) {
  ModelReader reader(text);
  if (reader.line() != "locdet-model v1")
    throw std::runtime_error("model parse: unsupported header");
  StrongClassifier model;
  model.variant = variant_from_name(reader.field("variant"));
  model.seed = parse_u64(reader.field("seed"), "seed");
  model.rounds_requested =
      static_cast<int>(parse_i64(reader.field("rounds_requested"), "rounds_requested"));
  model.pool_size = static_cast<int>(parse_i64(reader.field("pool_size"), "pool_size"));
  long long rounds = parse_i64(reader.field("rounds"), "round count");
  if (rounds < 0) throw std::runtime_error("model parse: negative round count");
  model.rounds.reserve(static_cast<size_t>(rounds));
  for (long long t = 0; t < rounds; ++t) {
    if (parse_i64(reader.field("round"), "round index") != t)
      throw std::runtime_error("model parse: round index out of order");
    WeakHypothesis hyp;
    double alpha = parse_f64(reader.field("alpha"), "alpha");
    if (!(alpha > 0.0)) throw std::runtime_error("model parse: alpha must be positive");
    hyp.threshold = parse_f64(reader.field("threshold"), "threshold");
    long long pol = parse_i64(reader.field("polarity"), "polarity");
    if (pol != 1 && pol != -1) throw std::runtime_error("model parse: polarity must be +-1");
    hyp.polarity = static_cast<int>(pol);
    hyp.filter = filter_from_string(reader.field("filter"));
    hyp.program = parse_program(reader.field("program"));
    model.rounds.emplace_back(std::move(hyp), alpha);
  }
  if (reader.line() != "end") throw std::runtime_error("model parse: missing end marker");
  return model;
}

void save_model(const StrongClassifier& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  std::string text = serialize_model(model);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

StrongClassifier load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_model(buf.str());
}

}  // namespace locdet
