#include "locdet/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "locdet/grammar.hpp"
#include "locdet/image_io.hpp"
#include "locdet/textio.hpp"

namespace locdet {

namespace {

const char* kManifestHeader = "# locdet-manifest v1";

bool known_split(const std::string& s) {
  return s == "train" || s == "validation" || s == "test";
}

std::string path_stem(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

std::string join_path(const std::string& base, const std::string& rel) {
  if (base.empty()) return rel;
  return (std::filesystem::path(base) / rel).string();
}

void check_model_ids(const std::vector<GridModel>& models) {
  std::set<std::string> seen;
  for (const GridModel& m : models) {
    if (m.id.empty()) throw std::invalid_argument("grid: model id must not be empty");
    if (m.id.find('/') != std::string::npos || m.id.find('\\') != std::string::npos)
      throw std::invalid_argument("grid: model id must not contain path separators: " + m.id);
    if (!seen.insert(m.id).second)
      throw std::invalid_argument("grid: duplicate model id: " + m.id);
  }
}

}  // namespace

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("manifest: cannot open " + path);

  DatasetManifest man;
  man.base_dir = std::filesystem::path(path).parent_path().string();

  std::string line;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!saw_header) {
      if (line != kManifestHeader)
        throw std::runtime_error("manifest: missing '" + std::string(kManifestHeader) +
                                 "' header in " + path);
      saw_header = true;
      continue;
    }
    if (line[0] == '#') continue;
    std::istringstream row(line);
    ManifestEntry e;
    std::string extra;
    if (!(row >> e.image >> e.mask >> e.split) || (row >> extra))
      throw std::runtime_error("manifest: expected 'image mask split', got: " + line);
    man.entries.push_back(std::move(e));
  }
  if (!saw_header) throw std::runtime_error("manifest: empty file " + path);
  man.validate();
  return man;
}

void DatasetManifest::save(const std::string& path) const {
  validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("manifest: cannot write " + path);
  out << kManifestHeader << "\n";
  for (const ManifestEntry& e : entries) {
    if (e.image.find(' ') != std::string::npos || e.mask.find(' ') != std::string::npos)
      throw std::runtime_error("manifest: paths with spaces are not representable: " + e.image);
    out << e.image << ' ' << e.mask << ' ' << e.split << "\n";
  }
  if (!out) throw std::runtime_error("manifest: write failed for " + path);
}

void DatasetManifest::validate() const {
  std::map<std::string, std::string> split_of;
  for (const ManifestEntry& e : entries) {
    if (!known_split(e.split))
      throw std::runtime_error("manifest: unknown split '" + e.split + "' for " + e.image);
    auto [it, inserted] = split_of.emplace(e.image, e.split);
    if (!inserted)
      throw std::runtime_error("manifest: " + e.image + " appears in both '" + it->second +
                               "' and '" + e.split + "'");
  }
}

std::vector<size_t> DatasetManifest::split_indices(const std::string& split) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == split) out.push_back(i);
  return out;
}

DatasetAccess::DatasetAccess(DatasetManifest manifest) : manifest_(std::move(manifest)) {
  manifest_.validate();
}

void DatasetAccess::allow(const std::string& split) {
  if (!known_split(split)) throw std::invalid_argument("access: unknown split '" + split + "'");
  granted_.insert(split);
}

void DatasetAccess::revoke(const std::string& split) { granted_.erase(split); }

LoadedPair DatasetAccess::load(size_t index) const {
  if (index >= manifest_.entries.size())
    throw std::out_of_range("access: manifest has no entry " + std::to_string(index));
  const ManifestEntry& e = manifest_.entries[index];
  if (!granted_.count(e.split))
    throw std::runtime_error("access: split '" + e.split + "' was not granted before reading " +
                             e.image);
  audit_.push_back({index, e.split});

  LoadedPair pair;
  pair.id = path_stem(e.image);
  pair.image = load_image(join_path(manifest_.base_dir, e.image));
  pair.mask = load_mask(join_path(manifest_.base_dir, e.mask));
  if (pair.mask.width() != pair.image.width() || pair.mask.height() != pair.image.height())
    throw std::runtime_error("access: image and mask dimensions differ for " + e.image);
  return pair;
}

std::vector<LoadedPair> DatasetAccess::load_split(const std::string& split) const {
  std::vector<LoadedPair> out;
  for (size_t i : manifest_.split_indices(split)) out.push_back(load(i));
  return out;
}

StrongClassifier run_training(DatasetAccess& access, const TrainOptions& opt,
                              const std::string& model_path, TrainLog* out_log) {
  std::vector<LoadedPair> pairs = access.load_split("train");
  if (pairs.empty()) throw std::runtime_error("run_training: empty train split");

  std::vector<std::pair<GreyImage, LabelMask>> data;
  data.reserve(pairs.size());
  for (LoadedPair& p : pairs) data.push_back({std::move(p.image), std::move(p.mask)});

  Rng rng(opt.seed);
  TrainingSet ts = TrainingSet::build(std::move(data), opt.background_cap, &rng);

  TrainConfig cfg;
  cfg.rounds = opt.rounds;
  cfg.pool_size = opt.pool_size;
  cfg.grammar.variant = opt.variant;
  cfg.filters = expand_filter_combo(opt.filter_combo);
  cfg.threshold_cap = opt.threshold_cap;

  TrainLog local;
  TrainLog* log = out_log ? out_log : &local;
  StrongClassifier model = train(ts, cfg, rng, opt.seed, log);
  save_model(model, model_path);

  std::ofstream lf(model_path + ".log", std::ios::binary);
  if (!lf) throw std::runtime_error("run_training: cannot write " + model_path + ".log");
  lf << "round r alpha z product_z\n";
  for (size_t t = 0; t < log->rounds.size(); ++t) {
    const RoundLog& rl = log->rounds[t];
    lf << (t + 1) << ' ' << format_real(rl.r) << ' ' << format_real(rl.alpha) << ' '
       << format_real(rl.z) << ' ' << format_real(rl.product_z) << "\n";
  }
  if (!lf) throw std::runtime_error("run_training: write failed for " + model_path + ".log");
  return model;
}

std::vector<DetectorSpec> GridSearchConfig::detectors() const {
  if (!explicit_detectors.empty()) return explicit_detectors;
  std::vector<DetectorSpec> out;
  const double step_sigma = full_grid ? 0.2 : 1.0;
  const double step_kde = full_grid ? 0.1 : 0.5;
  for (int i = 1; i * step_sigma < 20.0 - 1e-9; ++i) out.push_back(CcSpec{i * step_sigma});
  for (int i = 1; i * step_sigma < 20.0 - 1e-9; ++i) out.push_back(LlmSpec{i * step_sigma, 0.0});
  for (int i = 1; i * step_kde < 10.0 - 1e-9; ++i)
    out.push_back(KdeSpec{i * step_kde, kde_seed_sigma});
  return out;
}

ConfidenceCache::ConfidenceCache(std::string dir) : dir_(std::move(dir)) {
  if (!dir_.empty()) std::filesystem::create_directories(dir_);
}

const ConfidenceImage& ConfidenceCache::get(const GridModel& model, const LoadedPair& pair) {
  static std::mutex mu;  // guards mem_ across the parallel confidence phase
  auto key = std::make_pair(model.id, pair.id);
  {
    std::lock_guard<std::mutex> lock(mu);
    auto it = mem_.find(key);
    if (it != mem_.end()) return it->second;
  }

  ConfidenceImage conf;
  std::string path = dir_.empty() ? "" : dir_ + "/" + model.id + "__" + pair.id + ".conf";
  if (!path.empty() && std::filesystem::exists(path)) {
    conf = load_image(path);
  } else {
    conf = model.classifier.predict(pair.image);
    if (!path.empty()) save_image_text(conf, path);
  }

  std::lock_guard<std::mutex> lock(mu);
  return mem_.emplace(key, std::move(conf)).first->second;
}

void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn) {
  if (jobs < 1) throw std::invalid_argument("parallel_for: jobs must be at least 1");
  if (jobs == 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto worker = [&] {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  size_t workers = std::min(static_cast<size_t>(jobs), n);
  for (size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

namespace {

DetectionSet detect_cell(const ConfidenceImage& conf, const DetectorSpec& spec,
                         const GroundTruth& gt, const GridRunOptions& opt) {
  if (opt.detector_override) return opt.detector_override(conf, spec, gt);
  return run_detector(conf, spec);
}

}  // namespace

ExperimentReport run_grid_search(DatasetAccess& access, const GridSearchConfig& grid,
                                 const std::vector<GridModel>& models,
                                 const GridRunOptions& opt) {
  if (models.empty()) throw std::invalid_argument("run_grid_search: no models given");
  check_model_ids(models);

  std::vector<LoadedPair> val = access.load_split("validation");
  if (val.empty()) throw std::runtime_error("run_grid_search: empty validation split");
  std::vector<GroundTruth> gts;
  gts.reserve(val.size());
  for (const LoadedPair& p : val) gts.push_back(GroundTruth::from_mask(p.mask));

  const std::vector<DetectorSpec> detectors = grid.detectors();
  if (detectors.empty()) throw std::invalid_argument("run_grid_search: empty detector grid");

  ConfidenceCache cache(opt.cache_dir);
  {
    // confidence phase: one task per (model, image); later phases only read
    std::vector<std::pair<size_t, size_t>> keys;
    for (size_t m = 0; m < models.size(); ++m)
      for (size_t i = 0; i < val.size(); ++i) keys.push_back({m, i});
    parallel_for(keys.size(), opt.jobs,
                 [&](size_t k) { cache.get(models[keys[k].first], val[keys[k].second]); });
  }

  const size_t n_cells = models.size() * detectors.size();
  std::vector<CellResult> cells(n_cells);
  parallel_for(n_cells, opt.jobs, [&](size_t c) {
    const size_t mi = c / detectors.size(), di = c % detectors.size();
    std::vector<DetectionSet> dets(val.size());
    for (size_t i = 0; i < val.size(); ++i)
      dets[i] = detect_cell(cache.get(models[mi], val[i]), detectors[di], gts[i], opt);

    CellResult& cell = cells[c];
    cell.model_id = models[mi].id;
    cell.detector = detectors[di];
    for (MatchCriterion criterion :
         {MatchCriterion::Cueing, MatchCriterion::Tracking, MatchCriterion::Counting}) {
      RocCurve curve = build_roc(dets, gts, criterion, grid.u, grid.tracking_radius);
      cell.aroc[criterion_name(criterion)] = aroc(curve);
    }
  });

  ExperimentReport rep;
  rep.u = grid.u;
  rep.tracking_radius = grid.tracking_radius;
  rep.cells = std::move(cells);
  for (const GridModel& m : models) rep.seeds["model:" + m.id] = m.classifier.seed;

  // cells are model-major in detector order, so with a strict comparison the
  // first of any AROC tie has the smaller detector parameters
  for (MatchCriterion criterion :
       {MatchCriterion::Cueing, MatchCriterion::Tracking, MatchCriterion::Counting}) {
    const std::string name = criterion_name(criterion);
    const CellResult* best = nullptr;
    for (const CellResult& cell : rep.cells)
      if (!best || cell.aroc.at(name) > best->aroc.at(name)) best = &cell;
    rep.best[name] = BestCell{best->model_id, best->detector, best->aroc.at(name)};
  }
  return rep;
}

void run_test(ExperimentReport& report, DatasetAccess& access,
              const std::vector<GridModel>& models, const std::string& out_dir,
              const GridRunOptions& opt) {
  if (report.best.empty()) throw std::runtime_error("run_test: no best configuration selected");
  check_model_ids(models);

  std::vector<LoadedPair> test = access.load_split("test");
  if (test.empty()) throw std::runtime_error("run_test: empty test split");
  std::vector<GroundTruth> gts;
  gts.reserve(test.size());
  for (const LoadedPair& p : test) gts.push_back(GroundTruth::from_mask(p.mask));

  std::filesystem::create_directories(out_dir);
  ConfidenceCache cache(opt.cache_dir);

  for (const auto& [metric, chosen] : report.best) {
    const GridModel* model = nullptr;
    for (const GridModel& m : models)
      if (m.id == chosen.model_id) model = &m;
    if (!model)
      throw std::runtime_error("run_test: best model '" + chosen.model_id +
                               "' not among the given models");

    std::vector<DetectionSet> dets(test.size());
    for (size_t i = 0; i < test.size(); ++i)
      dets[i] = detect_cell(cache.get(*model, test[i]), chosen.detector, gts[i], opt);

    RocCurve curve =
        build_roc(dets, gts, criterion_from_name(metric), report.u, report.tracking_radius);
    report.test_aroc[metric] = aroc(curve);
    report.test_curves[metric] = curve;
    write_roc_csv(curve, out_dir + "/roc_" + metric + ".csv");
    write_roc_svg(curve, out_dir + "/roc_" + metric + ".svg");
  }
}

std::string ExperimentReport::to_json() const {
  nlohmann::json j;
  j["kind"] = "locdet-report";
  j["version"] = 1;
  j["u"] = u;
  j["tracking_radius"] = tracking_radius;
  j["seeds"] = nlohmann::json::object();
  for (const auto& [k, v] : seeds) j["seeds"][k] = v;

  j["cells"] = nlohmann::json::array();
  for (const CellResult& c : cells) {
    nlohmann::json jc;
    jc["model"] = c.model_id;
    jc["detector"] = detector_to_string(c.detector);
    for (const auto& [metric, a] : c.aroc) jc["aroc"][metric] = a;
    j["cells"].push_back(std::move(jc));
  }

  j["best"] = nlohmann::json::object();
  for (const auto& [metric, b] : best) {
    j["best"][metric] = {{"model", b.model_id},
                         {"detector", detector_to_string(b.detector)},
                         {"aroc", b.aroc}};
  }

  if (!test_aroc.empty()) {
    j["test"] = nlohmann::json::object();
    for (const auto& [metric, a] : test_aroc) {
      nlohmann::json jt;
      jt["aroc"] = a;
      jt["points"] = nlohmann::json::array();
      auto it = test_curves.find(metric);
      if (it != test_curves.end())
        for (const RocPoint& p : it->second.points)
          jt["points"].push_back({p.threshold, p.fp_per_image, p.tp_rate});
      j["test"][metric] = std::move(jt);
    }
  }
  return j.dump(2) + "\n";
}

ExperimentReport ExperimentReport::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("report: not valid JSON: ") + e.what());
  }
  if (j.value("kind", std::string{}) != "locdet-report")
    throw std::runtime_error("report: missing locdet-report kind marker");
  if (j.value("version", 0) != 1)
    throw std::runtime_error("report: unsupported version");

  ExperimentReport rep;
  rep.u = j.at("u").get<double>();
  rep.tracking_radius = j.at("tracking_radius").get<double>();
  for (const auto& [k, v] : j.at("seeds").items()) rep.seeds[k] = v.get<uint64_t>();
  for (const auto& jc : j.at("cells")) {
    CellResult cell;
    cell.model_id = jc.at("model").get<std::string>();
    cell.detector = detector_from_string(jc.at("detector").get<std::string>());
    for (const auto& [metric, a] : jc.at("aroc").items()) cell.aroc[metric] = a.get<double>();
    rep.cells.push_back(std::move(cell));
  }
  for (const auto& [metric, jb] : j.at("best").items()) {
    BestCell b;
    b.model_id = jb.at("model").get<std::string>();
    b.detector = detector_from_string(jb.at("detector").get<std::string>());
    b.aroc = jb.at("aroc").get<double>();
    rep.best[metric] = std::move(b);
  }
  return rep;
}

}  // namespace locdet
