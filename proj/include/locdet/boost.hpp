#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "locdet/grammar.hpp"
#include "locdet/postfilter.hpp"
#include "locdet/raster.hpp"
#include "locdet/rng.hpp"

namespace locdet {

// Pixel-level training data. Object pixels are +1, Background -1; Confuser
// pixels are excluded from supervision entirely. Background pixels may be
// subsampled per image to bound cost; Object pixels are always kept.
struct TrainingSet {
  struct Item {
    GreyImage image;
    LabelMask mask;
    std::vector<int> included;   // raster indices of supervised pixels
    std::vector<int8_t> labels;  // +-1, parallel to included
    size_t offset = 0;           // position of this item's pixels in weight vectors
  };

  std::vector<Item> items;
  size_t total = 0;  // included pixels across all items

  static TrainingSet build(std::vector<std::pair<GreyImage, LabelMask>> data,
                           size_t background_cap_per_image = 0, Rng* rng = nullptr);
};

// Class-balanced start: each class carries total weight 1/2, uniform within
// the class. Throws if either class is empty.
std::vector<double> init_weights(const TrainingSet& ts);

// Feature program + decision stump + post-processing filter. The stump emits
// polarity where the feature value exceeds the threshold and -polarity
// elsewhere; the filter may turn either into an abstention.
struct WeakHypothesis {
  FeatureProgram program;
  double threshold = 0.0;
  int polarity = 1;  // +-1
  PostFilterSpec filter = NoFilter{};

  SignMap predict_map(const GreyImage& image) const;
};

struct FitResult {
  WeakHypothesis hypothesis;
  double r = 0.0;                   // weighted correlation of the winner
  std::vector<double> pool_scores;  // best r per candidate program (-inf if none)
};

struct TrainConfig {
  int rounds = 10;     // T
  int pool_size = 100; // programs sampled per round, w
  GrammarConfig grammar;
  std::vector<PostFilterSpec> filters = {NoFilter{}};
  int threshold_cap = 256;           // max stump thresholds examined per program
  size_t background_cap = 0;         // per image; 0 keeps every background pixel
  // Replaces grammar sampling when set; lets tests pin the candidate pool.
  std::function<FeatureProgram(Rng&)> program_source;
};

// Exhaustive search over programs x thresholds x polarities x filters for the
// maximum r = sum_i D(i) y_i h(x_i). Candidate thresholds are midpoints of
// consecutive distinct feature values at supervised pixels, thinned to at
// most threshold_cap quantile-spaced values. Ties keep the first candidate in
// (program, ascending threshold, +1 before -1, filter list order).
FitResult fit_weak_over_programs(const TrainingSet& ts, const std::vector<double>& D,
                                 const std::vector<FeatureProgram>& programs,
                                 const std::vector<PostFilterSpec>& filters,
                                 int threshold_cap);

// Samples config.pool_size programs (grammar or the injected source), then
// delegates to fit_weak_over_programs.
FitResult fit_weak(const TrainingSet& ts, const std::vector<double>& D,
                   const TrainConfig& config, Rng& rng);

// Schapire-Singer confidence-rated weight: 0.5*ln((W+ + eps)/(W- + eps)) with
// eps = 1/(2N). The caller rejects the hypothesis when the result is <= 0.
double compute_alpha(double w_plus, double w_minus, size_t n);

// In-place multiplicative update D(i) *= exp(-alpha y_i h_i), renormalized;
// returns the normalizer Z. Sign maps are per training item.
double update_weights(const TrainingSet& ts, std::vector<double>& D,
                      const std::vector<SignMap>& h, double alpha);

struct RoundLog {
  double r = 0.0;
  double alpha = 0.0;
  double z = 1.0;
  double product_z = 1.0;
};

struct TrainLog {
  std::vector<RoundLog> rounds;
  std::vector<std::vector<double>> pool_scores;  // per round
};

struct StrongClassifier {
  GrammarVariant variant = GrammarVariant::Full;
  uint64_t seed = 0;
  int rounds_requested = 0;
  int pool_size = 0;
  std::vector<std::pair<WeakHypothesis, double>> rounds;  // hypothesis, alpha > 0

  // Per-pixel ensemble confidence sum_t alpha_t h_t(x).
  ConfidenceImage predict(const GreyImage& image) const;
};

// Runs T boosting rounds with early stopping when no hypothesis beats chance
// (r <= 0 or alpha <= 0). Throws "no learnable structure" if no round is
// accepted. The seed recorded on the model comes from config; rng must be the
// stream derived from it.
StrongClassifier train(const TrainingSet& ts, const TrainConfig& config, Rng& rng,
                       uint64_t seed, TrainLog* log = nullptr);

// Versioned structured text, byte-stable for a fixed model.
std::string serialize_model(const StrongClassifier& model);
StrongClassifier parse_model(const std::string& text);
void save_model(const StrongClassifier& model, const std::string& path);
StrongClassifier load_model(const std::string& path);

}  // namespace locdet
