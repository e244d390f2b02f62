#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "locdet/boost.hpp"
#include "locdet/grammar.hpp"
#include "locdet/postfilter.hpp"
#include "locdet/raster.hpp"
#include "locdet/rng.hpp"

using namespace locdet;

namespace {

std::string thrown(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

// One image whose mask marks pixels above the cutoff as Object.
std::pair<GreyImage, LabelMask> labeled_by_cutoff(const GreyImage& img, double cutoff) {
  LabelMask mask(img.width(), img.height(), PixelLabel::Background);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (img(x, y) > cutoff) mask(x, y) = PixelLabel::Object;
  return {img, mask};
}

// Weighted correlation of a hypothesis evaluated the slow way.
double direct_r(const TrainingSet& ts, const std::vector<double>& D, const WeakHypothesis& hyp) {
  double r = 0.0;
  for (const auto& item : ts.items) {
    SignMap h = hyp.predict_map(item.image);
    for (size_t k = 0; k < item.included.size(); ++k)
      r += D[item.offset + k] * item.labels[k] * h.v[item.included[k]];
  }
  return r;
}

// Mirror of the candidate threshold rule: midpoints of consecutive distinct
// values, thinned to cap quantile-spaced picks.
std::vector<double> oracle_thresholds(std::vector<double> vals, int cap) {
  std::sort(vals.begin(), vals.end());
  vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
  std::vector<double> mids;
  for (size_t i = 0; i + 1 < vals.size(); ++i)
    mids.push_back(vals[i] + (vals[i + 1] - vals[i]) * 0.5);
  if (mids.size() > static_cast<size_t>(cap) && cap > 1) {
    std::vector<double> kept;
    for (int j = 0; j < cap; ++j)
      kept.push_back(mids[static_cast<size_t>(j) * (mids.size() - 1) / (cap - 1)]);
    mids = std::move(kept);
  }
  return mids;
}

struct OraclePick {
  double r = -1e300;
  size_t program = ~size_t{0};
  double threshold = 0.0;
  int polarity = 1;
  size_t filter = 0;
  std::vector<double> per_program;
};

// Exhaustive search over the same candidate grid, scoring every combination
// through apply_post_filter directly.
OraclePick oracle_fit(const TrainingSet& ts, const std::vector<double>& D,
                      const std::vector<FeatureProgram>& programs,
                      const std::vector<PostFilterSpec>& filters, int cap) {
  OraclePick best;
  best.per_program.assign(programs.size(), -1e300);
  for (size_t pi = 0; pi < programs.size(); ++pi) {
    std::vector<double> vals;
    for (const auto& item : ts.items) {
      GreyImage f = evaluate(programs[pi], item.image);
      for (int px : item.included) vals.push_back(f.data()[px]);
    }
    for (double theta : oracle_thresholds(vals, cap)) {
      for (int pol : {+1, -1}) {
        for (size_t fi = 0; fi < filters.size(); ++fi) {
          WeakHypothesis hyp{programs[pi], theta, pol, filters[fi]};
          double r = direct_r(ts, D, hyp);
          if (r > best.per_program[pi]) best.per_program[pi] = r;
          if (r > best.r) {
            best.r = r;
            best.program = pi;
            best.threshold = theta;
            best.polarity = pol;
            best.filter = fi;
          }
        }
      }
    }
  }
  return best;
}

}  // namespace

TEST_CASE("training set excludes confusers and keeps raster order") {
  GreyImage img(4, 2, 0.0);
  LabelMask mask(4, 2, PixelLabel::Background);
  mask(1, 0) = PixelLabel::Object;
  mask(2, 0) = PixelLabel::Confuser;
  mask(3, 1) = PixelLabel::Object;
  auto ts = TrainingSet::build({{img, mask}});

  REQUIRE(ts.items.size() == 1);
  CHECK(ts.total == 7);  // 8 pixels minus the confuser
  const auto& item = ts.items[0];
  REQUIRE(item.included.size() == 7);
  CHECK(std::is_sorted(item.included.begin(), item.included.end()));
  CHECK(std::find(item.included.begin(), item.included.end(), 2) == item.included.end());
  CHECK(item.labels[1] == 1);   // pixel (1,0)
  CHECK(item.labels[6] == 1);   // pixel (3,1)
  CHECK(item.labels[0] == -1);  // pixel (0,0)

  LabelMask small(2, 2, PixelLabel::Background);
  CHECK_THROWS_AS(TrainingSet::build({{img, small}}), std::invalid_argument);
  CHECK_THROWS_AS(TrainingSet::build({}), std::invalid_argument);
}

TEST_CASE("background subsampling caps per image and stays deterministic") {
  GreyImage img(16, 16, 0.0);
  LabelMask mask(16, 16, PixelLabel::Background);
  for (int x = 0; x < 4; ++x) mask(x, 0) = PixelLabel::Object;

  Rng rng_a(5), rng_b(5);
  auto a = TrainingSet::build({{img, mask}}, 30, &rng_a);
  auto b = TrainingSet::build({{img, mask}}, 30, &rng_b);
  CHECK(a.total == 34);  // 4 object pixels plus the capped background
  CHECK(a.items[0].included == b.items[0].included);
  CHECK(std::is_sorted(a.items[0].included.begin(), a.items[0].included.end()));

  Rng rng_c(6);
  auto c = TrainingSet::build({{img, mask}}, 30, &rng_c);
  CHECK(c.items[0].included != a.items[0].included);

  // A cap that nothing exceeds keeps every pixel, and subsampling without an
  // rng is rejected.
  auto all = TrainingSet::build({{img, mask}}, 10000, &rng_a);
  CHECK(all.total == 256);
  CHECK_THROWS_AS(TrainingSet::build({{img, mask}}, 30, nullptr), std::invalid_argument);
}

TEST_CASE("initial weights split mass evenly between classes") {
  GreyImage img(100, 10, 0.0);
  LabelMask mask(100, 10, PixelLabel::Background);
  for (int k = 0; k < 10; ++k) mask(k, 0) = PixelLabel::Object;
  auto ts = TrainingSet::build({{img, mask}});
  auto D = init_weights(ts);

  REQUIRE(D.size() == 1000);
  double sum = 0.0;
  for (size_t i = 0; i < D.size(); ++i) {
    sum += D[i];
    bool object = ts.items[0].labels[i] > 0;
    CHECK(D[i] == doctest::Approx(object ? 0.05 : 1.0 / 1980.0).epsilon(1e-15));
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  GreyImage tiny(10, 1, 0.0);
  LabelMask half(10, 1, PixelLabel::Background);
  for (int x = 0; x < 5; ++x) half(x, 0) = PixelLabel::Object;
  auto even = init_weights(TrainingSet::build({{tiny, half}}));
  for (double w : even) CHECK(w == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("initial weights reject single-class data") {
  GreyImage img(3, 3, 0.0);
  LabelMask confusers(3, 3, PixelLabel::Confuser);
  CHECK(thrown([&] { init_weights(TrainingSet::build({{img, confusers}})); })
            .find("empty class") != std::string::npos);

  LabelMask objects(3, 3, PixelLabel::Object);
  CHECK(thrown([&] { init_weights(TrainingSet::build({{img, objects}})); })
            .find("empty class") != std::string::npos);
}

TEST_CASE("alpha formula with smoothing") {
  // Symmetric masses cancel: rejected by the caller.
  CHECK(compute_alpha(0.4, 0.4, 1000) == doctest::Approx(0.0).epsilon(1e-15));

  // Large N makes the smoothing negligible: 0.5*ln(0.9/0.1).
  CHECK(compute_alpha(0.9, 0.1, 100000000) ==
        doctest::Approx(0.5 * std::log(9.0)).epsilon(1e-6));
  CHECK(0.5 * std::log(9.0) == doctest::Approx(1.0986).epsilon(1e-4));

  // All-correct round stays finite thanks to eps = 1/(2N).
  double a = compute_alpha(1.0, 0.0, 1000);
  CHECK(std::isfinite(a));
  CHECK(a == doctest::Approx(0.5 * std::log((1.0 + 5e-4) / 5e-4)).epsilon(1e-12));

  // More incorrect than correct mass drives alpha negative.
  CHECK(compute_alpha(0.2, 0.6, 1000) < 0.0);
  CHECK_THROWS_AS(compute_alpha(0.5, 0.5, 0), std::invalid_argument);
}

TEST_CASE("weight update identities") {
  GreyImage img(10, 1, 0.0);
  LabelMask mask(10, 1, PixelLabel::Background);
  for (int x = 0; x < 5; ++x) mask(x, 0) = PixelLabel::Object;
  auto ts = TrainingSet::build({{img, mask}});
  auto D0 = init_weights(ts);

  SUBCASE("abstaining everywhere leaves weights untouched") {
    auto D = D0;
    std::vector<SignMap> zero{SignMap(10, 1, 0)};
    double z = update_weights(ts, D, zero, 1.3);
    CHECK(z == doctest::Approx(1.0).epsilon(1e-15));
    // Identical up to the renormalization ulp (the sum of ten 0.1 entries is
    // not exactly 1 in binary).
    for (size_t k = 0; k < D.size(); ++k)
      CHECK(D[k] == doctest::Approx(D0[k]).epsilon(1e-15));
  }

  SUBCASE("exact alpha balances correct and incorrect mass") {
    auto D = D0;
    SignMap h(10, 1, 0);
    // Mistakes on two object pixels and one background pixel.
    for (int x = 0; x < 10; ++x) h(x, 0) = (x < 5) ? 1 : -1;
    h(0, 0) = -1;
    h(1, 0) = -1;
    h(7, 0) = 1;
    double w_plus = 0.0, w_minus = 0.0;
    for (size_t k = 0; k < 10; ++k)
      (h.v[k] == ts.items[0].labels[k] ? w_plus : w_minus) += D[k];
    double alpha = 0.5 * std::log(w_plus / w_minus);  // no smoothing on purpose
    update_weights(ts, D, {h}, alpha);

    double correct = 0.0, incorrect = 0.0;
    for (size_t k = 0; k < 10; ++k)
      (h.v[k] == ts.items[0].labels[k] ? correct : incorrect) += D[k];
    CHECK(correct == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(incorrect == doctest::Approx(0.5).epsilon(1e-12));
  }

  SUBCASE("weights stay normalized and nonnegative under fuzzing") {
    Rng rng(314);
    for (int trial = 0; trial < 50; ++trial) {
      auto D = D0;
      std::vector<SignMap> maps;
      SignMap h(10, 1, 0);
      for (auto& v : h.v) v = static_cast<int8_t>(rng.uniform_int(-1, 1));
      maps.push_back(h);
      double alpha = rng.uniform(0.01, 2.0);
      double z = update_weights(ts, D, maps, alpha);
      CHECK(z > 0.0);
      double sum = 0.0;
      for (double w : D) {
        CHECK(w >= 0.0);
        sum += w;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("weak fitter agrees with the exhaustive oracle") {
  // 200 supervised pixels with a mix of textures and labels.
  Rng data_rng(4242);
  GreyImage img(20, 10, 0.0);
  for (auto& v : img.data()) v = data_rng.uniform01();
  auto [image, mask] = labeled_by_cutoff(img, 0.62);
  auto ts = TrainingSet::build({{image, mask}});
  REQUIRE(ts.total == 200);

  // Unequal weights so filter differences actually move r.
  std::vector<double> D(ts.total);
  double sum = 0.0;
  for (auto& w : D) sum += (w = data_rng.uniform(0.2, 1.0));
  for (auto& w : D) w /= sum;

  std::vector<FeatureProgram> programs;
  for (const char* text :
       {"I", "(mult I I)", "(laws I L5 E5)", "(sigmoid I 0.3 0.1)",
        "(erode I (se 0.7853981633974483 2 0.5))", "(normDiff I I)"})
    programs.push_back(parse_program(text));

  std::vector<PostFilterSpec> filters = {NoFilter{},      RegionGrowFilter{3},
                                         RegionGrowFilter{8}, ErodeFilter{1},
                                         DilateFilter{2}, MedianFilter{1}};

  for (int cap : {1024, 7}) {
    CAPTURE(cap);
    FitResult fit = fit_weak_over_programs(ts, D, programs, filters, cap);
    OraclePick oracle = oracle_fit(ts, D, programs, filters, cap);

    REQUIRE(oracle.program != ~size_t{0});
    CHECK(serialize_program(fit.hypothesis.program) ==
          serialize_program(programs[oracle.program]));
    CHECK(fit.hypothesis.threshold == oracle.threshold);
    CHECK(fit.hypothesis.polarity == oracle.polarity);
    CHECK(fit.hypothesis.filter == filters[oracle.filter]);
    CHECK(fit.r == doctest::Approx(oracle.r).epsilon(1e-12));

    // Pool scores are per-program maxima; the winner tops all of them.
    REQUIRE(fit.pool_scores.size() == programs.size());
    for (size_t pi = 0; pi < programs.size(); ++pi) {
      if (fit.pool_scores[pi] == -std::numeric_limits<double>::infinity()) {
        CHECK(oracle.per_program[pi] == -1e300);  // constant feature, no candidates
        continue;
      }
      CHECK(fit.pool_scores[pi] == doctest::Approx(oracle.per_program[pi]).epsilon(1e-12));
      CHECK(fit.r >= fit.pool_scores[pi] - 1e-15);
    }
    // The constant normDiff(I,I) feature admits no stump at all.
    CHECK(fit.pool_scores[5] == -std::numeric_limits<double>::infinity());
  }
}

TEST_CASE("perfect stump scores r = 1 and ties keep the earliest filter") {
  GreyImage img(10, 10, 0.2);
  for (int y = 4; y < 6; ++y)
    for (int x = 4; x < 6; ++x) img(x, y) = 0.9;
  auto [image, mask] = labeled_by_cutoff(img, 0.5);
  auto ts = TrainingSet::build({{image, mask}});
  auto D = init_weights(ts);

  auto program = parse_program("I");
  // RegionGrow 5000 never fires on a 4-pixel component, so its r ties the
  // unfiltered stump and the earlier candidate must win.
  FitResult fit = fit_weak_over_programs(ts, D, {program}, {NoFilter{}, RegionGrowFilter{5000}},
                                         256);
  CHECK(fit.r == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::holds_alternative<NoFilter>(fit.hypothesis.filter));
  CHECK(fit.hypothesis.polarity == 1);
  CHECK(fit.hypothesis.threshold == doctest::Approx(0.55).epsilon(1e-12));
}

TEST_CASE("separable pixels train to zero error with monotone loss") {
  Rng data_rng(11);
  GreyImage img(20, 10, 0.0);
  LabelMask mask(20, 10, PixelLabel::Background);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 20; ++x) {
      bool object = (x + 2 * y) % 5 == 0;
      img(x, y) = object ? data_rng.uniform(0.7, 1.0) : data_rng.uniform(0.0, 0.5);
      if (object) mask(x, y) = PixelLabel::Object;
    }
  auto ts = TrainingSet::build({{img, mask}});

  TrainConfig cfg;
  cfg.rounds = 25;
  cfg.pool_size = 1;
  cfg.program_source = [](Rng&) { return parse_program("I"); };
  Rng rng(1);
  TrainLog log;
  auto model = train(ts, cfg, rng, 1, &log);

  REQUIRE(!model.rounds.empty());
  auto conf = model.predict(ts.items[0].image);
  int errors = 0;
  for (size_t k = 0; k < ts.items[0].included.size(); ++k) {
    double c = conf.data()[ts.items[0].included[k]];
    if (c * ts.items[0].labels[k] <= 0.0) ++errors;
  }
  CHECK(errors == 0);

  double prev = 1.0;
  for (const auto& round : log.rounds) {
    CHECK(round.r > 0.0);
    CHECK(round.alpha > 0.0);
    CHECK(round.z < 1.0 + 1e-12);
    CHECK(round.product_z <= prev + 1e-12);
    prev = round.product_z;
  }
  // The exponential loss bounds the weighted training error (0 here).
  CHECK(log.rounds.back().product_z >= 0.0);
}

TEST_CASE("unlearnable data reports no structure") {
  GreyImage img(10, 10, 0.5);  // constant image: every feature is constant
  LabelMask mask(10, 10, PixelLabel::Background);
  for (int x = 0; x < 10; ++x) mask(x, 0) = PixelLabel::Object;
  auto ts = TrainingSet::build({{img, mask}});

  TrainConfig cfg;
  cfg.rounds = 5;
  cfg.pool_size = 2;
  cfg.program_source = [](Rng&) { return parse_program("I"); };
  Rng rng(3);
  CHECK(thrown([&] { train(ts, cfg, rng, 3, nullptr); }).find("no learnable structure") !=
        std::string::npos);
}

TEST_CASE("two-texture scene trains to high pixel accuracy") {
  int w = 48, h = 48;
  Rng noise(77);
  GreyImage img(w, h, 0.0);
  LabelMask mask(w, h, PixelLabel::Background);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (x >= w / 2) {
        img(x, y) = 0.5 + ((x + y) % 2 ? 0.35 : -0.35) + noise.uniform(-0.05, 0.05);
        mask(x, y) = PixelLabel::Object;
      } else {
        img(x, y) = 0.5 + noise.uniform(-0.05, 0.05);
      }
    }
  auto ts = TrainingSet::build({{img, mask}});

  TrainConfig cfg;
  cfg.rounds = 10;
  cfg.pool_size = 25;
  cfg.threshold_cap = 64;
  Rng rng(99);
  TrainLog log;
  auto model = train(ts, cfg, rng, 99, &log);

  auto conf = model.predict(ts.items[0].image);
  int correct = 0;
  for (size_t k = 0; k < ts.items[0].included.size(); ++k) {
    double c = conf.data()[ts.items[0].included[k]];
    if (c * ts.items[0].labels[k] > 0.0) ++correct;
  }
  double accuracy = static_cast<double>(correct) / static_cast<double>(ts.total);
  CHECK(accuracy >= 0.95);

  // The product of normalizers bounds the weighted training error.
  double bound = log.rounds.back().product_z;
  double werr = 0.0;
  auto D0 = init_weights(ts);
  for (size_t k = 0; k < ts.items[0].included.size(); ++k) {
    double c = conf.data()[ts.items[0].included[k]];
    if (c * ts.items[0].labels[k] <= 0.0) werr += D0[k];
  }
  CHECK(werr <= bound + 1e-12);
}

TEST_CASE("training is deterministic and models round-trip") {
  Rng data_rng(2718);
  std::vector<std::pair<GreyImage, LabelMask>> data;
  for (int i = 0; i < 2; ++i) {
    GreyImage img(32, 32, 0.0);
    LabelMask mask(32, 32, PixelLabel::Background);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        bool object = (x - 16) * (x - 16) + (y - 16) * (y - 16) < 60;
        img(x, y) = object ? 0.5 + 0.3 * ((x + y) % 2) : data_rng.uniform(0.0, 0.4);
        if (object) mask(x, y) = PixelLabel::Object;
      }
    data.emplace_back(std::move(img), std::move(mask));
  }

  TrainConfig cfg;
  cfg.rounds = 3;
  cfg.pool_size = 8;
  cfg.threshold_cap = 32;
  cfg.filters = {NoFilter{}, RegionGrowFilter{1000}};

  auto run = [&](uint64_t seed) {
    auto ts = TrainingSet::build(data);
    Rng rng(seed);
    return serialize_model(train(ts, cfg, rng, seed, nullptr));
  };
  std::string first = run(12), second = run(12);
  CHECK(first == second);
  CHECK(run(13) != first);

  StrongClassifier parsed = parse_model(first);
  CHECK(serialize_model(parsed) == first);
  CHECK(parsed.seed == 12);
  CHECK(parsed.variant == GrammarVariant::Full);

  auto ts = TrainingSet::build(data);
  Rng rng(12);
  auto model = train(ts, cfg, rng, 12, nullptr);
  CHECK(parsed.predict(data[0].first) == model.predict(data[0].first));
}

TEST_CASE("model files survive a save/load cycle") {
  StrongClassifier model;
  model.variant = GrammarVariant::NoHaar;
  model.seed = 77;
  model.rounds_requested = 10;
  model.pool_size = 25;
  model.rounds.emplace_back(
      WeakHypothesis{parse_program("(laws I S5 R5)"), 0.125, -1, RegionGrowFilter{1500}}, 0.75);
  model.rounds.emplace_back(
      WeakHypothesis{parse_program("(sigmoid I -0.25 0)"), -3.5, 1, NoFilter{}}, 0.0625);

  std::string path = "model_roundtrip.txt";
  save_model(model, path);
  StrongClassifier loaded = load_model(path);
  CHECK(serialize_model(loaded) == serialize_model(model));
  CHECK(loaded.rounds.size() == 2);
  CHECK(loaded.rounds[0].first.polarity == -1);
  CHECK(loaded.rounds[0].second == 0.75);
  CHECK(std::holds_alternative<RegionGrowFilter>(loaded.rounds[0].first.filter));
  std::remove(path.c_str());
}

TEST_CASE("model parser rejects malformed documents") {
  StrongClassifier model;
  model.rounds.emplace_back(WeakHypothesis{parse_program("I"), 0.5, 1, NoFilter{}}, 1.0);
  std::string good = serialize_model(model);
  CHECK(parse_model(good).rounds.size() == 1);

  CHECK(thrown([&] { parse_model("locdet-model v9\n"); }).find("unsupported header") !=
        std::string::npos);
  CHECK(thrown([&] { parse_model(good.substr(0, good.size() - 5)); }).find("model parse") !=
        std::string::npos);

  auto corrupt = [&](const std::string& from, const std::string& to) {
    std::string text = good;
    text.replace(text.find(from), from.size(), to);
    return text;
  };
  CHECK(thrown([&] { parse_model(corrupt("polarity 1", "polarity 2")); }).find("polarity") !=
        std::string::npos);
  CHECK(thrown([&] { parse_model(corrupt("alpha 1", "alpha -1")); }).find("alpha") !=
        std::string::npos);
  CHECK(thrown([&] { parse_model(corrupt("round 0", "round 4")); }).find("out of order") !=
        std::string::npos);
}

TEST_CASE("ensemble confidence is a weighted vote") {
  GreyImage img(6, 6, 0.0);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) img(x, y) = (x >= 3) ? 0.8 : 0.2;

  WeakHypothesis hyp{parse_program("I"), 0.5, 1, NoFilter{}};
  StrongClassifier one;
  one.rounds.emplace_back(hyp, 1.0);
  auto conf = one.predict(img);
  SignMap h = hyp.predict_map(img);
  for (size_t px = 0; px < conf.data().size(); ++px)
    CHECK(conf.data()[px] == static_cast<double>(h.v[px]));

  StrongClassifier two;
  two.rounds.emplace_back(hyp, 0.7);
  two.rounds.emplace_back(hyp, 0.7);
  auto doubled = two.predict(img);
  double limit = 1.4 + 1e-12;
  for (size_t px = 0; px < doubled.data().size(); ++px) {
    CHECK(doubled.data()[px] == doctest::Approx(2.0 * 0.7 * h.v[px]).epsilon(1e-15));
    CHECK(std::abs(doubled.data()[px]) <= limit);
  }
}
