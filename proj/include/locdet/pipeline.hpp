#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "locdet/boost.hpp"
#include "locdet/detect.hpp"
#include "locdet/metrics.hpp"
#include "locdet/raster.hpp"

namespace locdet {

struct ManifestEntry {
  std::string image, mask, split;
};

// Line-oriented dataset listing. Rows hold paths relative to the manifest's
// own directory, so a dataset folder can be moved wholesale.
struct DatasetManifest {
  std::string base_dir;  // set on load, not serialized
  std::vector<ManifestEntry> entries;

  static DatasetManifest load(const std::string& path);
  void save(const std::string& path) const;
  // known split names only, and no image in more than one split
  void validate() const;
  std::vector<size_t> split_indices(const std::string& split) const;
};

struct LoadedPair {
  std::string id;  // image filename stem, used for cache keys and CSV rows
  GreyImage image;
  LabelMask mask;
};

// Split-scoped loader. Reads must name a granted split, and every load is
// recorded, so a phase that was never granted "test" can prove it did not
// touch those images.
class DatasetAccess {
 public:
  explicit DatasetAccess(DatasetManifest manifest);

  void allow(const std::string& split);
  void revoke(const std::string& split);

  LoadedPair load(size_t index) const;  // throws unless the split is granted
  std::vector<LoadedPair> load_split(const std::string& split) const;

  const DatasetManifest& manifest() const { return manifest_; }
  const std::vector<std::pair<size_t, std::string>>& audit_log() const { return audit_; }

 private:
  DatasetManifest manifest_;
  std::set<std::string> granted_;
  mutable std::vector<std::pair<size_t, std::string>> audit_;
};

struct TrainOptions {
  int rounds = 10;
  int pool_size = 100;
  GrammarVariant variant = GrammarVariant::Full;
  std::string filter_combo = "N";  // expand_filter_combo syntax
  int threshold_cap = 256;
  size_t background_cap = 2000;  // per-image background subsample
  uint64_t seed = 1;
};

// Trains on the train split only, saves the model, and writes a per-round
// log of (r, alpha, Z) next to it as <model_path>.log.
StrongClassifier run_training(DatasetAccess& access, const TrainOptions& opt,
                              const std::string& model_path, TrainLog* log = nullptr);

// Detector parameter ranges swept during validation. The default grid thins
// the sigma steps fivefold; full_grid restores the fine steps.
struct GridSearchConfig {
  bool full_grid = false;
  double u = 30.0;
  double tracking_radius = 5.0;
  double kde_seed_sigma = 1.0;  // smoothing for the maxima that seed KDE

  // when non-empty, replaces the generated sweep entirely
  std::vector<DetectorSpec> explicit_detectors;

  std::vector<DetectorSpec> detectors() const;
};

struct GridModel {
  std::string id;
  StrongClassifier classifier;
};

// Test hook: replaces run_detector inside the grid so oracle detectors with
// access to the ground truth can be injected.
using DetectorOverrideFn = std::function<DetectionSet(
    const ConfidenceImage&, const DetectorSpec&, const GroundTruth&)>;

struct CellResult {
  std::string model_id;
  DetectorSpec detector;
  std::map<std::string, double> aroc;  // keyed by metric name
};

struct BestCell {
  std::string model_id;
  DetectorSpec detector;
  double aroc = 0.0;
};

struct ExperimentReport {
  std::map<std::string, uint64_t> seeds;
  double u = 30.0;
  double tracking_radius = 5.0;
  std::vector<CellResult> cells;                // model-major, detector order
  std::map<std::string, BestCell> best;         // per metric
  std::map<std::string, double> test_aroc;      // filled by run_test
  std::map<std::string, RocCurve> test_curves;  // filled by run_test

  std::string to_json() const;  // canonical structured text
  // Restores everything except the test section, which run_test regenerates.
  static ExperimentReport from_json(const std::string& text);
};

struct GridRunOptions {
  int jobs = 1;
  std::string cache_dir;  // "" keeps confidences in memory only
  DetectorOverrideFn detector_override;
};

// Caches per-(model, image) confidence maps, optionally mirrored to disk as
// text rasters, since detector parameters never change the pixel classifier.
class ConfidenceCache {
 public:
  explicit ConfidenceCache(std::string dir = "");
  const ConfidenceImage& get(const GridModel& model, const LoadedPair& pair);

 private:
  std::string dir_;
  std::map<std::pair<std::string, std::string>, ConfidenceImage> mem_;
};

// Scores every (model, detector, metric) cell on the validation split and
// selects the best cell per metric; AROC ties go to the earlier cell, which
// has the lexicographically smaller detector parameters.
ExperimentReport run_grid_search(DatasetAccess& access, const GridSearchConfig& grid,
                                 const std::vector<GridModel>& models,
                                 const GridRunOptions& opt = {});

// Evaluates each metric's chosen cell on the test split, adds the final
// curves to the report, and writes roc_<metric>.csv/.svg under out_dir.
void run_test(ExperimentReport& report, DatasetAccess& access,
              const std::vector<GridModel>& models, const std::string& out_dir,
              const GridRunOptions& opt = {});

// Runs fn(0..n-1) on a bounded pool; results must go to index-addressed
// slots so completion order cannot leak into any output.
void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn);

}  // namespace locdet
