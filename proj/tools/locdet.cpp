#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "locdet/detect.hpp"
#include "locdet/grammar.hpp"
#include "locdet/metrics.hpp"
#include "locdet/pipeline.hpp"
#include "locdet/synth.hpp"
#include "locdet/textio.hpp"

using namespace locdet;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spill(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write: " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<GridModel> load_models(const std::vector<std::string>& paths) {
  std::vector<GridModel> models;
  for (const std::string& p : paths)
    models.push_back({fs::path(p).stem().string(), load_model(p)});
  return models;
}

void add_synth(CLI::App& app) {
  auto spec = std::make_shared<SynthSpec>();
  auto seed = std::make_shared<uint64_t>(1);
  auto out_dir = std::make_shared<std::string>();

  CLI::App* cmd = app.add_subcommand("synth", "generate a synthetic dataset with masks");
  cmd->add_option("--out", *out_dir, "output directory")->required();
  cmd->add_option("--seed", *seed, "generator seed");
  cmd->add_option("--images", spec->images, "number of images");
  cmd->add_option("--width", spec->width, "image width");
  cmd->add_option("--height", spec->height, "image height");
  cmd->add_option("--objects", spec->objects_per_image, "cars per image");
  cmd->add_option("--confusers", spec->confusers_per_image, "buildings per image");
  cmd->add_option("--noise", spec->noise_sigma, "additive noise sigma");
  cmd->add_option("--occlusion", spec->occlusion_fraction, "fraction of cars occluded");

  cmd->callback([spec, seed, out_dir] {
    std::vector<std::string> warnings;
    DatasetManifest man = synth_generate(*spec, *seed, *out_dir, &warnings);
    for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
    std::cout << "wrote " << man.entries.size() << " images and " << *out_dir
              << "/manifest.txt\n";
  });
}

void add_train(CLI::App& app) {
  auto manifest = std::make_shared<std::string>();
  auto model_out = std::make_shared<std::string>();
  auto opt = std::make_shared<TrainOptions>();
  auto variant = std::make_shared<std::string>("full");

  CLI::App* cmd = app.add_subcommand("train", "boost a pixel classifier on the train split");
  cmd->add_option("--manifest", *manifest, "dataset manifest")->required();
  cmd->add_option("--model", *model_out, "output model path")->required();
  cmd->add_option("--rounds", opt->rounds, "boosting rounds T");
  cmd->add_option("--pool", opt->pool_size, "programs sampled per round w");
  cmd->add_option("--variant", *variant, "grammar variant: full|haar|no-morph|no-haar");
  cmd->add_option("--filters", opt->filter_combo, "post-filter combo, e.g. N or R,E,D,M");
  cmd->add_option("--threshold-cap", opt->threshold_cap, "stump thresholds examined per program");
  cmd->add_option("--background-cap", opt->background_cap, "background pixels kept per image");
  cmd->add_option("--seed", opt->seed, "training seed");

  cmd->callback([manifest, model_out, opt, variant] {
    opt->variant = variant_from_name(*variant);
    DatasetAccess access(DatasetManifest::load(*manifest));
    access.allow("train");
    TrainLog log;
    run_training(access, *opt, *model_out, &log);
    std::cout << "trained " << log.rounds.size() << " round(s); model at " << *model_out << "\n";
  });
}

struct GridArgs {
  std::string manifest, report, cache;
  std::vector<std::string> model_paths;
  GridSearchConfig grid;
  int jobs = 1;
};

void add_grid_flags(CLI::App* cmd, const std::shared_ptr<GridArgs>& args) {
  cmd->add_option("--manifest", args->manifest, "dataset manifest")->required();
  cmd->add_option("--model", args->model_paths, "trained model file(s)")->required();
  cmd->add_option("--jobs", args->jobs, "worker threads");
  cmd->add_option("--cache", args->cache, "confidence cache directory");
  cmd->add_option("--u", args->grid.u, "false-positive truncation U");
  cmd->add_option("--tracking-radius", args->grid.tracking_radius, "tracking match radius, px");
  cmd->add_option("--kde-seed-sigma", args->grid.kde_seed_sigma, "smoothing for KDE seeds");
}

void add_gridsearch(CLI::App& app) {
  auto args = std::make_shared<GridArgs>();
  CLI::App* cmd = app.add_subcommand("gridsearch", "sweep detectors on the validation split");
  add_grid_flags(cmd, args);
  cmd->add_option("--report", args->report, "report output path")->required();
  cmd->add_flag("--full-grid", args->grid.full_grid, "fine sigma steps instead of the coarse grid");

  cmd->callback([args] {
    DatasetAccess access(DatasetManifest::load(args->manifest));
    access.allow("validation");
    GridRunOptions opt;
    opt.jobs = args->jobs;
    opt.cache_dir = args->cache;
    ExperimentReport rep = run_grid_search(access, args->grid, load_models(args->model_paths), opt);
    spill(args->report, rep.to_json());
    for (const auto& [metric, b] : rep.best)
      std::cout << metric << ": " << b.model_id << " + " << detector_to_string(b.detector)
                << " (validation AROC " << format_real(b.aroc) << ")\n";
    std::cout << "report at " << args->report << "\n";
  });
}

void add_test(CLI::App& app) {
  auto args = std::make_shared<GridArgs>();
  auto out_dir = std::make_shared<std::string>();
  CLI::App* cmd = app.add_subcommand("test", "evaluate the selected cells on the test split");
  add_grid_flags(cmd, args);
  cmd->add_option("--report", args->report, "gridsearch report to read and update")->required();
  cmd->add_option("--out", *out_dir, "directory for final ROC csv/svg files")->required();

  cmd->callback([args, out_dir] {
    ExperimentReport rep = ExperimentReport::from_json(slurp(args->report));
    DatasetAccess access(DatasetManifest::load(args->manifest));
    access.allow("test");
    GridRunOptions opt;
    opt.jobs = args->jobs;
    opt.cache_dir = args->cache;
    run_test(rep, access, load_models(args->model_paths), *out_dir, opt);
    spill(args->report, rep.to_json());
    for (const auto& [metric, a] : rep.test_aroc)
      std::cout << metric << ": test AROC " << format_real(a) << "\n";
  });
}

void add_detect(CLI::App& app) {
  auto manifest = std::make_shared<std::string>();
  auto split = std::make_shared<std::string>("validation");
  auto model_path = std::make_shared<std::string>();
  auto detector = std::make_shared<std::string>();
  auto out_csv = std::make_shared<std::string>();

  CLI::App* cmd = app.add_subcommand("detect", "run one detector over a split, dump detections");
  cmd->add_option("--manifest", *manifest, "dataset manifest")->required();
  cmd->add_option("--split", *split, "split to read: train|validation|test");
  cmd->add_option("--model", *model_path, "trained model file")->required();
  cmd->add_option("--detector", *detector, "cc:<s> | llm:<s>,<t> | kde:<s>,<s_llm>")->required();
  cmd->add_option("--out", *out_csv, "detections csv path")->required();

  cmd->callback([manifest, split, model_path, detector, out_csv] {
    DetectorSpec spec = detector_from_string(*detector);
    GridModel model{fs::path(*model_path).stem().string(), load_model(*model_path)};
    DatasetAccess access(DatasetManifest::load(*manifest));
    access.allow(*split);

    std::vector<std::pair<std::string, DetectionSet>> rows;
    for (LoadedPair& pair : access.load_split(*split))
      rows.push_back({pair.id, run_detector(model.classifier.predict(pair.image), spec)});
    write_detections_csv(*out_csv, rows);
    std::cout << "wrote detections for " << rows.size() << " image(s) to " << *out_csv << "\n";
  });
}

void add_eval(CLI::App& app) {
  auto manifest = std::make_shared<std::string>();
  auto split = std::make_shared<std::string>("validation");
  auto det_csv = std::make_shared<std::string>();
  auto metric = std::make_shared<std::string>("all");
  auto out_prefix = std::make_shared<std::string>();
  auto u = std::make_shared<double>(30.0);
  auto radius = std::make_shared<double>(5.0);

  CLI::App* cmd = app.add_subcommand("eval", "score saved detections against a split's masks");
  cmd->add_option("--manifest", *manifest, "dataset manifest")->required();
  cmd->add_option("--split", *split, "split the detections came from");
  cmd->add_option("--detections", *det_csv, "detections csv")->required();
  cmd->add_option("--metric", *metric, "cueing|tracking|counting|all");
  cmd->add_option("--out-prefix", *out_prefix, "write <prefix>_<metric>.csv/.svg when set");
  cmd->add_option("--u", *u, "false-positive truncation U");
  cmd->add_option("--tracking-radius", *radius, "tracking match radius, px");

  cmd->callback([manifest, split, det_csv, metric, out_prefix, u, radius] {
    DatasetAccess access(DatasetManifest::load(*manifest));
    access.allow(*split);
    std::vector<LoadedPair> pairs = access.load_split(*split);
    if (pairs.empty()) throw std::runtime_error("eval: split '" + *split + "' is empty");

    auto saved = read_detections_csv(*det_csv);
    std::vector<DetectionSet> dets;
    std::vector<GroundTruth> gts;
    for (const LoadedPair& p : pairs) {
      gts.push_back(GroundTruth::from_mask(p.mask));
      DetectionSet ds;
      for (const auto& [id, d] : saved)
        if (id == p.id) ds = d;
      dets.push_back(std::move(ds));
    }

    std::vector<MatchCriterion> wanted;
    if (*metric == "all")
      wanted = {MatchCriterion::Cueing, MatchCriterion::Tracking, MatchCriterion::Counting};
    else
      wanted = {criterion_from_name(*metric)};

    for (MatchCriterion c : wanted) {
      RocCurve curve = build_roc(dets, gts, c, *u, *radius);
      std::cout << criterion_name(c) << ": AROC " << format_real(aroc(curve)) << "\n";
      if (!out_prefix->empty()) {
        write_roc_csv(curve, *out_prefix + "_" + criterion_name(c) + ".csv");
        write_roc_svg(curve, *out_prefix + "_" + criterion_name(c) + ".svg");
      }
    }
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grammar-boosted object localization: synth, train, gridsearch, test"};
  app.require_subcommand(1);
  app.set_config("--config", "", "flat key=value config file");

  add_synth(app);
  add_train(app);
  add_gridsearch(app);
  add_test(app);
  add_detect(app);
  add_eval(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
