#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "locdet/image_io.hpp"
#include "locdet/pipeline.hpp"
#include "locdet/synth.hpp"

using namespace locdet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SynthSpec pipe_spec() {
  SynthSpec spec;
  spec.width = 64;
  spec.height = 64;
  spec.images = 10;
  spec.objects_per_image = 4;
  spec.confusers_per_image = 1;
  spec.confuser_area_lo = 150;
  spec.confuser_area_hi = 220;
  spec.noise_sigma = 0.03;
  return spec;
}

TrainOptions tiny_train(uint64_t seed, const std::string& combo) {
  TrainOptions opt;
  opt.rounds = 3;
  opt.pool_size = 6;
  opt.threshold_cap = 16;
  opt.background_cap = 300;
  opt.filter_combo = combo;
  opt.seed = seed;
  return opt;
}

// One dataset and two trained models, built once and shared by the
// heavier cases below.
struct Trained {
  TempDir dir{"locdet_pipe_fixture"};
  DatasetManifest man;
  std::vector<GridModel> models;

  Trained() {
    man = synth_generate(pipe_spec(), 2026, dir.path.string());
    DatasetAccess acc(man);
    acc.allow("train");
    models.push_back(
        {"plain", run_training(acc, tiny_train(99, "N"), (dir.path / "plain.model").string())});
    models.push_back({"filtered", run_training(acc, tiny_train(100, "R,E,D,M"),
                                               (dir.path / "filtered.model").string())});
  }
};

Trained& trained() {
  static Trained t;
  return t;
}

GridSearchConfig small_grid() {
  GridSearchConfig grid;
  grid.explicit_detectors = {DetectorSpec{CcSpec{1.0}}, DetectorSpec{LlmSpec{1.0, 0.0}},
                             DetectorSpec{KdeSpec{1.0, 1.0}}};
  return grid;
}

}  // namespace

TEST_CASE("manifest validation enforces split hygiene") {
  DatasetManifest man;
  man.entries = {{"a.png", "a_m.png", "train"}, {"b.png", "b_m.png", "validation"}};
  CHECK_NOTHROW(man.validate());

  man.entries.push_back({"a.png", "a_m.png", "test"});
  CHECK_THROWS_WITH_AS(man.validate(),
                       doctest::Contains("appears in both"), std::runtime_error);

  man.entries = {{"a.png", "a_m.png", "holdout"}};
  CHECK_THROWS_WITH_AS(man.validate(), doctest::Contains("unknown split"), std::runtime_error);
}

TEST_CASE("manifest files round-trip and reject malformed rows") {
  TempDir tmp("locdet_pipe_manifest");
  DatasetManifest man;
  man.entries = {{"x.png", "x_m.png", "train"}, {"y.png", "y_m.png", "test"}};
  man.save((tmp.path / "m.txt").string());

  DatasetManifest back = DatasetManifest::load((tmp.path / "m.txt").string());
  REQUIRE(back.entries.size() == 2);
  CHECK(back.entries[1].image == "y.png");
  CHECK(back.entries[1].split == "test");
  CHECK(back.base_dir == tmp.path.string());

  {
    std::ofstream out(tmp.path / "bad1.txt");
    out << "x.png x_m.png train\n";  // header missing
  }
  CHECK_THROWS(DatasetManifest::load((tmp.path / "bad1.txt").string()));

  {
    std::ofstream out(tmp.path / "bad2.txt");
    out << "# locdet-manifest v1\nx.png train\n";  // mask column missing
  }
  CHECK_THROWS(DatasetManifest::load((tmp.path / "bad2.txt").string()));
  CHECK_THROWS(DatasetManifest::load((tmp.path / "absent.txt").string()));
}

TEST_CASE("dataset access requires grants and keeps an audit trail") {
  const Trained& t = trained();
  DatasetAccess acc(t.man);

  CHECK_THROWS_WITH_AS(acc.load(0), doctest::Contains("was not granted"), std::runtime_error);

  acc.allow("train");
  LoadedPair p = acc.load(0);
  CHECK(p.id == "img_000");
  CHECK(p.image.width() == 64);

  CHECK_THROWS(acc.load_split("validation"));
  acc.allow("validation");
  CHECK(acc.load_split("validation").size() == 3);

  acc.revoke("validation");
  CHECK_THROWS(acc.load_split("validation"));

  for (const auto& [idx, split] : acc.audit_log()) CHECK(split != "test");
  CHECK_THROWS(acc.allow("holdout"));
  CHECK_THROWS(acc.load(t.man.entries.size()));
}

TEST_CASE("access rejects image and mask dimension mismatches") {
  TempDir tmp("locdet_pipe_dims");
  save_image_text(GreyImage(4, 4), (tmp.path / "a.txt").string());
  save_mask(LabelMask(5, 5), (tmp.path / "a_m.txt").string());
  DatasetManifest man;
  man.base_dir = tmp.path.string();
  man.entries = {{"a.txt", "a_m.txt", "train"}};

  DatasetAccess acc(man);
  acc.allow("train");
  CHECK_THROWS_WITH_AS(acc.load(0), doctest::Contains("dimensions differ"), std::runtime_error);
}

TEST_CASE("training persists a byte-stable model and a monotone loss log") {
  const Trained& t = trained();
  TempDir tmp("locdet_pipe_train");

  DatasetAccess acc(t.man);
  acc.allow("train");
  TrainLog log;
  run_training(acc, tiny_train(99, "N"), (tmp.path / "m1.model").string(), &log);

  REQUIRE(!log.rounds.empty());
  double prev = 1.0 + 1e-12;
  for (const RoundLog& rl : log.rounds) {
    CHECK(rl.r > 0.0);
    CHECK(rl.alpha > 0.0);
    CHECK(rl.product_z <= prev);
    prev = rl.product_z;
  }

  // the fixture's "plain" model used the same options and seed
  CHECK(file_bytes(tmp.path / "m1.model") == file_bytes(t.dir.path / "plain.model"));

  std::string log_text = file_bytes(tmp.path / "m1.model.log");
  CHECK(log_text.rfind("round r alpha z product_z\n", 0) == 0);
  CHECK(std::count(log_text.begin(), log_text.end(), '\n') ==
        static_cast<long>(1 + log.rounds.size()));

  // a manifest whose only rows are validation cannot train
  DatasetManifest empty_train;
  empty_train.base_dir = t.man.base_dir;
  empty_train.entries = {t.man.entries[6]};  // a validation row
  REQUIRE(empty_train.entries[0].split == "validation");
  DatasetAccess no_train(empty_train);
  no_train.allow("train");
  CHECK_THROWS_WITH_AS(run_training(no_train, tiny_train(1, "N"), (tmp.path / "x.model").string()),
                       doctest::Contains("empty train split"), std::runtime_error);
}

TEST_CASE("detector grids have the documented shape") {
  GridSearchConfig coarse;
  std::vector<DetectorSpec> d = coarse.detectors();
  REQUIRE(d.size() == 57);  // 19 per family
  CHECK(std::get<CcSpec>(d[0]).sigma == 1.0);
  CHECK(std::get<CcSpec>(d[18]).sigma == 19.0);
  CHECK(std::get<LlmSpec>(d[19]).sigma == 1.0);
  CHECK(std::get<LlmSpec>(d[19]).theta == 0.0);
  CHECK(std::get<KdeSpec>(d[38]).sigma_kde == 0.5);
  CHECK(std::get<KdeSpec>(d[56]).sigma_kde == doctest::Approx(9.5));
  CHECK(std::get<KdeSpec>(d[38]).sigma_llm == 1.0);

  GridSearchConfig full;
  full.full_grid = true;
  std::vector<DetectorSpec> f = full.detectors();
  REQUIRE(f.size() == 297);  // 99 per family
  CHECK(std::get<CcSpec>(f[0]).sigma == doctest::Approx(0.2));
  CHECK(std::get<CcSpec>(f[98]).sigma == doctest::Approx(19.8));
  CHECK(std::get<KdeSpec>(f[198]).sigma_kde == doctest::Approx(0.1));

  GridSearchConfig explicit_grid = small_grid();
  CHECK(explicit_grid.detectors().size() == 3);
}

TEST_CASE("confidence cache round-trips through its disk tier") {
  const Trained& t = trained();
  DatasetAccess acc(t.man);
  acc.allow("validation");
  LoadedPair pair = acc.load_split("validation").front();

  TempDir tmp("locdet_pipe_cache");
  ConfidenceImage direct = t.models[0].classifier.predict(pair.image);

  ConfidenceCache first(tmp.path.string());
  const ConfidenceImage& computed = first.get(t.models[0], pair);
  CHECK(computed == direct);
  CHECK(fs::exists(tmp.path / "plain__img_006.conf"));

  // a fresh cache must reload the exact same doubles from the text raster
  ConfidenceCache second(tmp.path.string());
  CHECK(second.get(t.models[0], pair) == direct);

  // memory-only cache works without a directory
  ConfidenceCache mem;
  CHECK(mem.get(t.models[0], pair) == direct);
  CHECK(mem.get(t.models[0], pair) == direct);
}

TEST_CASE("grid search scores every cell and picks the argmax per metric") {
  const Trained& t = trained();
  DatasetAccess acc(t.man);
  acc.allow("validation");

  ExperimentReport rep = run_grid_search(acc, small_grid(), t.models);
  REQUIRE(rep.cells.size() == 6);  // 2 models x 3 detectors
  for (const CellResult& c : rep.cells) {
    REQUIRE(c.aroc.size() == 3);
    for (const auto& [metric, a] : c.aroc) {
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
    }
  }

  REQUIRE(rep.best.size() == 3);
  for (const auto& [metric, b] : rep.best) {
    for (const CellResult& c : rep.cells) CHECK(b.aroc >= c.aroc.at(metric));
    bool found = false;
    for (const CellResult& c : rep.cells)
      if (c.model_id == b.model_id && c.detector == b.detector &&
          c.aroc.at(metric) == b.aroc)
        found = true;
    CHECK(found);
  }

  CHECK(rep.seeds.at("model:plain") == 99);
  CHECK(rep.seeds.at("model:filtered") == 100);

  // no test-split reads happened
  for (const auto& [idx, split] : acc.audit_log()) CHECK(split != "test");
}

TEST_CASE("grid search is deterministic and job-count independent") {
  const Trained& t = trained();

  auto once = [&](int jobs, const std::string& cache_dir) {
    DatasetAccess acc(t.man);
    acc.allow("validation");
    GridRunOptions opt;
    opt.jobs = jobs;
    opt.cache_dir = cache_dir;
    return run_grid_search(acc, small_grid(), t.models, opt).to_json();
  };

  TempDir tmp("locdet_pipe_jobs");
  std::string serial = once(1, "");
  CHECK(once(1, "") == serial);
  CHECK(once(4, "") == serial);
  CHECK(once(4, (tmp.path / "cache").string()) == serial);
  // second pass over the warm disk cache
  CHECK(once(1, (tmp.path / "cache").string()) == serial);
}

TEST_CASE("grid search requires a granted validation split") {
  const Trained& t = trained();
  DatasetAccess acc(t.man);  // nothing granted
  CHECK_THROWS_WITH_AS(run_grid_search(acc, small_grid(), t.models),
                       doctest::Contains("was not granted"), std::runtime_error);

  DatasetAccess granted(t.man);
  granted.allow("validation");
  CHECK_THROWS_AS(run_grid_search(granted, small_grid(), {}), std::invalid_argument);

  std::vector<GridModel> dup = {t.models[0], t.models[0]};
  CHECK_THROWS_WITH_AS(run_grid_search(granted, small_grid(), dup),
                       doctest::Contains("duplicate model id"), std::invalid_argument);
}

TEST_CASE("an oracle detector dominates the grid with area one") {
  const Trained& t = trained();
  DatasetAccess acc(t.man);
  acc.allow("validation");

  GridSearchConfig grid;
  grid.explicit_detectors = {DetectorSpec{CcSpec{1.0}}, DetectorSpec{CcSpec{2.0}}};

  GridRunOptions opt;
  opt.detector_override = [](const ConfidenceImage&, const DetectorSpec& spec,
                             const GroundTruth& gt) {
    DetectionSet out;
    if (std::get<CcSpec>(spec).sigma == 2.0) {
      for (const auto& [x, y] : gt.centroids) out.push_back({x, y, 1.0});
    } else {
      out.push_back({0.0, 0.0, 0.5});  // scene corners hold no objects
    }
    return out;
  };

  ExperimentReport rep = run_grid_search(acc, grid, t.models, opt);
  for (const auto& [metric, b] : rep.best) {
    CHECK(b.aroc == 1.0);
    CHECK(std::get<CcSpec>(b.detector).sigma == 2.0);
  }
}

TEST_CASE("test evaluation emits final curves and a stable report") {
  const Trained& t = trained();

  auto full_run = [&](const fs::path& out_dir) {
    DatasetAccess acc(t.man);
    acc.allow("validation");
    ExperimentReport rep = run_grid_search(acc, small_grid(), t.models);
    acc.allow("test");
    run_test(rep, acc, t.models, out_dir.string());
    return rep;
  };

  TempDir tmp("locdet_pipe_test");
  ExperimentReport rep = full_run(tmp.path / "a");
  REQUIRE(rep.test_aroc.size() == 3);
  for (const char* metric : {"cueing", "tracking", "counting"}) {
    CHECK(rep.test_aroc.count(metric) == 1);
    CHECK(fs::exists(tmp.path / "a" / (std::string("roc_") + metric + ".csv")));
    CHECK(fs::exists(tmp.path / "a" / (std::string("roc_") + metric + ".svg")));
    std::string csv = file_bytes(tmp.path / "a" / (std::string("roc_") + metric + ".csv"));
    CHECK(csv.find("AROC=") != std::string::npos);
  }

  ExperimentReport again = full_run(tmp.path / "b");
  CHECK(again.to_json() == rep.to_json());
  CHECK(file_bytes(tmp.path / "a" / "roc_cueing.csv") ==
        file_bytes(tmp.path / "b" / "roc_cueing.csv"));

  // without a selection there is nothing to test
  ExperimentReport blank;
  DatasetAccess acc(t.man);
  acc.allow("test");
  CHECK_THROWS_WITH_AS(run_test(blank, acc, t.models, (tmp.path / "c").string()),
                       doctest::Contains("no best configuration"), std::runtime_error);
}

TEST_CASE("report json is well-formed and free of absolute paths") {
  const Trained& t = trained();
  DatasetAccess acc(t.man);
  acc.allow("validation");
  acc.allow("test");
  ExperimentReport rep = run_grid_search(acc, small_grid(), t.models);
  TempDir tmp("locdet_pipe_json");
  run_test(rep, acc, t.models, (tmp.path / "out").string());

  std::string text = rep.to_json();
  nlohmann::json j = nlohmann::json::parse(text);
  CHECK(j.at("kind") == "locdet-report");
  CHECK(j.at("version") == 1);
  CHECK(j.at("u") == 30.0);
  CHECK(j.at("tracking_radius") == 5.0);
  CHECK(j.at("seeds").size() == 2);
  CHECK(j.at("cells").size() == 6);
  CHECK(j.at("best").size() == 3);
  CHECK(j.at("test").size() == 3);
  for (const auto& cell : j.at("cells")) {
    CHECK(cell.at("aroc").size() == 3);
    CHECK(cell.at("detector").is_string());
  }
  // nothing in the report should mention where the dataset lives
  CHECK(text.find(t.dir.path.string()) == std::string::npos);
  CHECK(text.find(tmp.path.string()) == std::string::npos);
}

TEST_CASE("parallel_for covers every index exactly once") {
  std::vector<int> hits(500, 0);
  parallel_for(hits.size(), 4, [&](size_t i) { hits[i]++; });
  CHECK(std::count(hits.begin(), hits.end(), 1) == 500);

  parallel_for(0, 4, [&](size_t) { REQUIRE(false); });
  CHECK_THROWS_AS(parallel_for(3, 0, [](size_t) {}), std::invalid_argument);

  // exceptions from workers surface to the caller
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](size_t i) {
                                 if (i == 7) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}
