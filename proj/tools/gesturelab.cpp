// gesturelab command-line tool.
//
// Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gesturelab/gesturelab.hpp"

using namespace gesturelab;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

/// Flags shared by the subcommands that read a dataset or run the protocol.
struct Common {
  std::optional<std::string> config;
  std::optional<std::string> manifest;
  std::optional<int> subjects;
  std::optional<int> dataset_repetitions;
  std::optional<std::uint64_t> dataset_seed;
  std::optional<std::size_t> image_size;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> repetitions;
  std::optional<double> train_fraction;
  std::optional<std::size_t> folds;
  std::vector<double> c_grid;
  std::vector<double> gamma_grid;
  bool grid_per_repetition = false;
  bool strict = false;
  bool quiet = false;
};

void add_dataset_flags(CLI::App* sub, Common& o) {
  sub->add_option("--config", o.config, "JSON experiment config; flags override it")->check(CLI::ExistingFile);
  sub->add_option("--manifest", o.manifest, "dataset.json to load instead of generating synthetic data");
  sub->add_option("--subjects", o.subjects, "synthetic subjects");
  sub->add_option("--dataset-reps", o.dataset_repetitions, "synthetic repetitions per subject and gesture");
  sub->add_option("--dataset-seed", o.dataset_seed, "synthetic generator seed");
  sub->add_option("--image-size", o.image_size, "synthetic image side in pixels");
  sub->add_flag("-q,--quiet", o.quiet, "no progress output");
}

void add_protocol_flags(CLI::App* sub, Common& o) {
  sub->add_option("--seed", o.seed, "master seed of the split protocol");
  sub->add_option("--repetitions", o.repetitions, "repetitions of the train/test protocol");
  sub->add_option("--train-fraction", o.train_fraction, "training share of each split");
  sub->add_option("--folds", o.folds, "cross-validation folds");
  sub->add_option("--c-grid", o.c_grid, "C values of the grid search")->delimiter(',');
  sub->add_option("--gamma-grid", o.gamma_grid, "gamma values of the grid search")->delimiter(',');
  sub->add_flag("--grid-per-rep", o.grid_per_repetition, "grid-search every repetition, not only the first");
  sub->add_flag("--strict-convergence", o.strict, "fail with exit code 3 when an SVM hits the iteration limit");
}

ExperimentConfig load_config(const Common& o) {
  ExperimentConfig cfg;
  if (o.config) {
    try {
      cfg = config_from_json(read_json_file(*o.config));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ConfigError) throw;
      throw Error(ErrorCode::ConfigError, e.what());
    }
  }
  if (o.manifest) cfg.manifest = fs::path(*o.manifest);
  if (o.subjects) cfg.synthetic.subjects = *o.subjects;
  if (o.dataset_repetitions) cfg.synthetic.repetitions = *o.dataset_repetitions;
  if (o.dataset_seed) cfg.synthetic.seed = *o.dataset_seed;
  if (o.image_size) {
    cfg.synthetic.image_size = *o.image_size;
    cfg.image.undistorted_size = {*o.image_size, *o.image_size};
  }
  if (o.seed) cfg.master_seed = *o.seed;
  if (o.repetitions) cfg.repetitions = *o.repetitions;
  if (o.train_fraction) cfg.train_fraction = *o.train_fraction;
  if (o.folds) cfg.grid.folds = *o.folds;
  if (!o.c_grid.empty()) cfg.grid.c_grid = o.c_grid;
  if (!o.gamma_grid.empty()) cfg.grid.gamma_grid = o.gamma_grid;
  if (o.grid_per_repetition) cfg.grid_per_repetition = true;
  cfg.validate();
  return cfg;
}

Logger logger(const Common& o) {
  if (o.quiet) return {};
  return [](const std::string& line) { std::cerr << line << '\n'; };
}

std::optional<double> parse_retention(const std::string& s) {
  if (s == "none") return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::ConfigError, "retention must be a number or 'none', got '" + s + "'");
}

std::vector<std::optional<double>> parse_retentions(const std::vector<std::string>& values) {
  std::vector<std::optional<double>> out;
  for (const auto& v : values) out.push_back(parse_retention(v));
  return out;
}

void check_convergence(const ExperimentReport& report, const Common& o) {
  for (const auto& c : report.cells) {
    for (const auto& w : c.warnings)
      if (!o.quiet) std::cerr << "warning: " << cell_label(c) << ": " << w << '\n';
    if (c.converged) continue;
    const std::string msg = cell_label(c) + ": SVM training stopped at the iteration limit";
    if (o.strict) throw Error(ErrorCode::NonConvergence, msg);
    std::cerr << "warning: " << msg << '\n';
  }
}

/// Feature-pipeline settings saved with a model so prediction extracts the same features.
nlohmann::json pipeline_json(const ExperimentConfig& cfg) {
  const auto& h = cfg.image.hog;
  nlohmann::json hog{{"cell_size", h.cell_size},     {"block_cells", h.block_cells},
                     {"block_stride", h.block_stride}, {"bins", h.bins},
                     {"clip", h.clip},                 {"input_size", cfg.image.hog_input.width},
                     {"crop_margin", cfg.image.crop_margin}, {"stereo", cfg.image.stereo == StereoUse::Both}};
  if (const auto* t = std::get_if<FixedThreshold>(&cfg.image.threshold))
    hog["threshold"] = t->value;
  else
    hog["threshold"] = "otsu";
  return {{"angle_range", {cfg.tracking.angle_range.min, cfg.tracking.angle_range.max}}, {"hog", hog}};
}

std::string join_votes(const std::vector<std::size_t>& votes) {
  std::string s;
  for (std::size_t k = 0; k < votes.size(); ++k) s += (k ? ";" : "") + std::to_string(votes[k]);
  return s;
}

void write_or_print(const std::optional<std::string>& out, const std::string& text) {
  if (out) {
    if (fs::path(*out).has_parent_path()) fs::create_directories(fs::path(*out).parent_path());
    write_text(*out, text);
  } else {
    std::cout << text;
  }
}

// ---------------------------------------------------------------------------
// Subcommands

struct SynthArgs {
  Common common;
  std::string out;
  bool mono = false;
};

int cmd_synth(const SynthArgs& a) {
  ExperimentConfig cfg = load_config(a.common);
  if (a.mono) cfg.synthetic.stereo = false;
  auto templates = default_templates();
  for (auto& t : templates) t.noise = cfg.noise;
  const Dataset ds = generate_synthetic(templates, cfg.synthetic);
  const auto manifest = save_dataset(a.out, ds);
  std::cout << manifest.string() << '\n';
  return 0;
}

struct ExtractArgs {
  Common common;
  std::optional<std::string> out;
  std::string combo = "A+D+E+T+HOG";
  double hog_weight = 1.0;
};

int cmd_extract(const ExtractArgs& a) {
  const ExperimentConfig cfg = load_config(a.common);
  FusionConfig fusion = parse_combo(a.combo, 1, a.hog_weight);
  const FeatureStore store = configured_features(cfg, fusion.use_hog);
  fusion.hog_length = store.hog_length();
  fusion.validate();
  const Matrix x = store.fused(fusion);

  std::ostringstream csv;
  csv << "sample_id,gesture";
  for (const auto& seg : fusion.layout())
    for (std::size_t k = 0; k < seg.length; ++k) csv << ',' << seg.name << k;
  csv << '\n';
  for (std::size_t i = 0; i < x.rows(); ++i) {
    csv << store.ids[i] << ',' << store.labels[i];
    for (double v : x.row(i)) csv << ',' << detail::format_double(v);
    csv << '\n';
  }
  write_or_print(a.out, csv.str());
  return 0;
}

struct ModelArgs {
  Common common;
  std::string out = "model.json";
  std::string combo = "A+D+T";
  double hog_weight = 1.0;
  std::string retention = "none";
  std::optional<double> c;
  std::optional<double> gamma;
};

int cmd_train(const ModelArgs& a) {
  const ExperimentConfig cfg = load_config(a.common);
  const Logger log = logger(a.common);
  FusionConfig fusion = parse_combo(a.combo, 1, a.hog_weight);
  const FeatureStore store = configured_features(cfg, fusion.use_hog);
  fusion.hog_length = store.hog_length();
  fusion.validate();

  Preprocessing pre{fusion, std::nullopt};
  Matrix x = store.fused(fusion);
  if (const auto r = parse_retention(a.retention)) {
    pre.pca = fit_pca(x, PcaRetention{cfg.retention_mode, *r});
    x = pre.pca->transform(x);
    if (log) log("PCA keeps " + std::to_string(pre.pca->output_dimension()) + " of " + std::to_string(fusion.dimension()));
  }

  KernelParams params;
  if (a.c && a.gamma) {
    params = {*a.c, *a.gamma};
  } else {
    if (a.c || a.gamma) throw Error(ErrorCode::ConfigError, "--c and --gamma must be given together");
    GridSearchOptions g = cfg.grid;
    g.seed = derive_seed(cfg.master_seed, 0x67726964ULL);
    const auto gs = grid_search(x, store.labels, g);
    params = gs.best;
    if (log)
      log("grid search: C=" + detail::format_double(params.c, "%g") + " gamma=" +
          detail::format_double(params.gamma, "%g") + " cv accuracy " +
          detail::format_double(gs.best_accuracy, "%.4f"));
  }
  MultiClassModel model = train_multiclass(x, store.labels, params, cfg.grid.smo);
  model.preprocessing = pre;
  if (!model.converged()) {
    const std::string msg = "SVM training stopped at the iteration limit";
    if (a.common.strict) throw Error(ErrorCode::NonConvergence, msg);
    std::cerr << "warning: " << msg << '\n';
  }
  nlohmann::json j = model;
  j["pipeline"] = pipeline_json(cfg);
  write_json_file(a.out, j);
  if (log) log("wrote " + a.out + " (" + std::to_string(model.pairs.size()) + " pair models)");
  return 0;
}

struct PredictArgs {
  Common common;
  std::string model;
  std::optional<std::string> frame;
  std::vector<std::string> images;
  std::optional<std::string> map;
  std::optional<std::string> out;
};

/// Unweighted fused vector for the layout the model was trained on.
std::vector<double> model_input(const MultiClassModel& m, const TrackingFeatures& t, const std::vector<double>& hog) {
  FusionConfig fusion = m.preprocessing ? m.preprocessing->fusion : FusionConfig{};
  fusion.hog_weight = 1.0;
  return fuse(t.to_vector(fusion.tracking_mask), hog, fusion);
}

int cmd_predict(const PredictArgs& a) {
  ExperimentConfig cfg = load_config(a.common);
  const nlohmann::json j = read_json_file(a.model);
  MultiClassModel model;
  try {
    model = j.get<MultiClassModel>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, a.model + ": " + e.what());
  }
  if (j.contains("pipeline")) cfg = config_from_json(j.at("pipeline"), cfg);
  const bool with_hog = model.preprocessing && model.preprocessing->fusion.use_hog;

  if (a.frame) {
    const HandFrame frame = read_frame(*a.frame);
    std::vector<double> hog;
    if (with_hog) {
      if (a.images.empty()) throw Error(ErrorCode::InvalidArgument, "model uses HOG features; pass --image");
      std::vector<GrayImage> imgs;
      for (const auto& p : a.images) imgs.push_back(read_pgm(p));
      std::optional<UndistortionMap> map;
      if (a.map) map = read_undistortion_map(*a.map);
      hog = sample_descriptor(imgs, map ? &*map : nullptr, cfg.image).values;
    }
    const auto p = predict_detailed(model, model_input(model, extract_tracking_features(frame, cfg.tracking), hog));
    const nlohmann::json result{{"label", p.label}, {"classes", model.classes}, {"votes", p.votes}};
    write_or_print(a.out, result.dump() + "\n");
    return 0;
  }

  const FeatureStore store = configured_features(cfg, with_hog);
  std::ostringstream csv;
  csv << "sample_id,true,pred,votes\n";
  std::size_t correct = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::vector<double> hog = with_hog ? std::vector<double>(store.hog.row(i).begin(), store.hog.row(i).end())
                                             : std::vector<double>{};
    const auto p = predict_detailed(model, model_input(model, store.tracking[i], hog));
    csv << store.ids[i] << ',' << store.labels[i] << ',' << p.label << ',' << join_votes(p.votes) << '\n';
    correct += p.label == store.labels[i];
  }
  write_or_print(a.out, csv.str());
  if (!a.common.quiet && store.size())
    std::cerr << "accuracy "
              << detail::format_double(static_cast<double>(correct) / static_cast<double>(store.size()), "%.4f") << '\n';
  return 0;
}

struct GridArgs {
  Common common;
  std::optional<std::string> out;
  std::string combo = "A+D+T";
  double hog_weight = 1.0;
  std::string retention = "none";
};

/// Grid search on the training split of repetition 0, exactly as the protocol runs it.
int cmd_grid_search(const GridArgs& a) {
  const ExperimentConfig cfg = load_config(a.common);
  FusionConfig fusion = parse_combo(a.combo, 1, a.hog_weight);
  const FeatureStore store = configured_features(cfg, fusion.use_hog);
  fusion.hog_length = store.hog_length();
  fusion.validate();

  const std::uint64_t seed = repetition_seed(cfg.master_seed, 0);
  const Split sp = split(store.labels, cfg.train_fraction, seed, true);
  Matrix x = store.fused(fusion).select_rows(sp.train);
  std::vector<int> y;
  for (auto i : sp.train) y.push_back(store.labels[i]);
  if (const auto r = parse_retention(a.retention)) x = fit_pca(x, PcaRetention{cfg.retention_mode, *r}).transform(x);

  GridSearchOptions g = cfg.grid;
  g.seed = derive_seed(seed, 0x67726964ULL);
  const auto gs = grid_search(DistanceTable::pairwise(x), y, g);
  for (const auto& w : gs.warnings)
    if (!a.common.quiet) std::cerr << "warning: " << w << '\n';
  write_or_print(a.out, grid_csv(gs));
  if (!a.common.quiet)
    std::cerr << "best C=" << detail::format_double(gs.best.c, "%g")
              << " gamma=" << detail::format_double(gs.best.gamma, "%g")
              << " cv accuracy " << detail::format_double(gs.best_accuracy, "%.4f") << '\n';
  return 0;
}

struct AblationArgs {
  Common common;
  std::string out;
  std::vector<std::string> combos;
};

int cmd_ablation(const AblationArgs& a) {
  const ExperimentConfig cfg = load_config(a.common);
  const FeatureStore store = configured_features(cfg, false);
  const auto combos = a.combos.empty() ? default_ablation_combos() : a.combos;
  ExperimentReport report;
  const auto rows = ablation_table(store, cfg, combos, logger(a.common), &report);
  check_convergence(report, a.common);
  write_report(a.out, report, store.ids);
  std::ostringstream csv;
  csv << "combo,mean,std\n";
  for (const auto& r : rows)
    csv << r.combo << ',' << detail::format_double(r.mean) << ',' << detail::format_double(r.stddev) << '\n';
  write_text(fs::path(a.out) / "ablation.csv", csv.str());
  std::cout << csv.str();
  return 0;
}

/// Per-cell aggregates: one row per (combo, K, retention).
std::string summary_csv(const ExperimentReport& report) {
  std::ostringstream csv;
  csv << "combo,K,retention,mean,std,C,gamma,pca_components\n";
  for (const auto& c : report.cells) {
    csv << c.combo << ',' << (c.hog_weight ? detail::format_double(*c.hog_weight, "%g") : "none") << ','
        << (c.retention ? detail::format_double(*c.retention, "%g") : "none") << ',' << detail::format_double(c.mean)
        << ',' << detail::format_double(c.stddev) << ',' << detail::format_double(c.params.front().c, "%g") << ','
        << detail::format_double(c.params.front().gamma, "%g") << ',' << c.pca_components.front() << '\n';
  }
  return csv.str();
}

struct SweepArgs {
  Common common;
  std::string out;
  std::string combo = "A+D+T+HOG";
  std::vector<double> k_values{1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<std::string> retentions{"0.6", "0.7", "0.8", "0.9", "1.0"};
};

int cmd_sweep(SweepArgs a) {
  if (!a.common.repetitions) {
    bool in_file = false;
    if (a.common.config) in_file = read_json_file(*a.common.config).contains("repetitions");
    if (!in_file) a.common.repetitions = 10;
  }
  const ExperimentConfig cfg = load_config(a.common);
  const FeatureStore store = configured_features(cfg, true);
  const auto report = fusion_sweep(store, cfg, a.combo, a.k_values, parse_retentions(a.retentions), logger(a.common));
  check_convergence(report, a.common);
  write_report(a.out, report, store.ids);
  write_text(fs::path(a.out) / "sweep.csv", summary_csv(report));
  std::cout << summary_csv(report);
  return 0;
}

struct ReportArgs {
  Common common;
  std::string out;
  std::vector<std::string> combos;
  std::vector<double> hog_weights;
  std::vector<std::string> retentions;
};

int cmd_report(const ReportArgs& a) {
  ExperimentConfig cfg = load_config(a.common);
  if (!a.combos.empty()) cfg.combos = a.combos;
  if (!a.hog_weights.empty()) cfg.hog_weights = a.hog_weights;
  if (!a.retentions.empty()) cfg.retentions = parse_retentions(a.retentions);
  cfg.validate();
  const FeatureStore store = configured_features(cfg, needs_hog(cfg));
  const auto report = run_experiment(store, cfg, logger(a.common));
  check_convergence(report, a.common);
  write_report(a.out, report, store.ids);
  write_text(fs::path(a.out) / "summary.csv", summary_csv(report));
  for (const auto& c : report.cells)
    if (c.grid) write_text(fs::path(a.out) / ("grid_" + cell_label(c) + ".csv"), grid_csv(*c.grid));
  std::cout << summary_csv(report);
  return 0;
}

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config: return kExitConfig;
    case ErrorCategory::Data: return kExitData;
    case ErrorCategory::Numerical: return kExitNumerical;
  }
  return kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hand-gesture recognition from tracking features and HOG descriptors"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic dataset");
  add_dataset_flags(s, synth.common);
  s->add_option("-o,--out", synth.out, "output directory")->required();
  s->add_flag("--mono", synth.mono, "render only the left image");

  ExtractArgs extract;
  auto* e = app.add_subcommand("extract", "write fused feature vectors as CSV");
  add_dataset_flags(e, extract.common);
  e->add_option("-o,--out", extract.out, "output CSV (stdout when omitted)");
  e->add_option("--combo", extract.combo, "feature combination, e.g. A+D+T+HOG")->capture_default_str();
  e->add_option("-K,--hog-weight", extract.hog_weight, "HOG weight")->capture_default_str();

  ModelArgs train;
  auto* t = app.add_subcommand("train", "train a model on the whole dataset and save model.json");
  add_dataset_flags(t, train.common);
  add_protocol_flags(t, train.common);
  t->add_option("-o,--out", train.out, "model file")->capture_default_str();
  t->add_option("--combo", train.combo, "feature combination")->capture_default_str();
  t->add_option("-K,--hog-weight", train.hog_weight, "HOG weight")->capture_default_str();
  t->add_option("--retention", train.retention, "PCA retention or 'none'")->capture_default_str();
  t->add_option("--c", train.c, "fixed C (skips the grid search, needs --gamma)");
  t->add_option("--gamma", train.gamma, "fixed gamma");

  PredictArgs predict;
  auto* p = app.add_subcommand("predict", "classify one frame or a whole dataset with a saved model");
  add_dataset_flags(p, predict.common);
  p->add_option("-m,--model", predict.model, "model.json")->required()->check(CLI::ExistingFile);
  p->add_option("--frame", predict.frame, "HandFrame JSON of a single sample");
  p->add_option("--image", predict.images, "left (then right) PGM image of the sample");
  p->add_option("--map", predict.map, "LMUM undistortion map for --image");
  p->add_option("-o,--out", predict.out, "output file (stdout when omitted)");

  GridArgs grid;
  auto* g = app.add_subcommand("grid-search", "cross-validated (C, gamma) table on the first training split");
  add_dataset_flags(g, grid.common);
  add_protocol_flags(g, grid.common);
  g->add_option("-o,--out", grid.out, "output CSV (stdout when omitted)");
  g->add_option("--combo", grid.combo, "feature combination")->capture_default_str();
  g->add_option("-K,--hog-weight", grid.hog_weight, "HOG weight")->capture_default_str();
  g->add_option("--retention", grid.retention, "PCA retention or 'none'")->capture_default_str();

  AblationArgs ablation;
  auto* ab = app.add_subcommand("ablation", "tracking-feature ablation table");
  add_dataset_flags(ab, ablation.common);
  add_protocol_flags(ab, ablation.common);
  ab->add_option("-o,--out", ablation.out, "output directory")->required();
  ab->add_option("--combos", ablation.combos, "combinations (default D+E+T,A+E+T,A+D+E,A+D+T,A+D+E+T)")
      ->delimiter(',');

  SweepArgs sweep;
  auto* sw = app.add_subcommand("sweep", "HOG weight x PCA retention grid (10 repetitions unless set)");
  add_dataset_flags(sw, sweep.common);
  add_protocol_flags(sw, sweep.common);
  sw->add_option("-o,--out", sweep.out, "output directory")->required();
  sw->add_option("--combo", sweep.combo, "combination including HOG")->capture_default_str();
  sw->add_option("--k", sweep.k_values, "HOG weights")->delimiter(',')->capture_default_str();
  sw->add_option("--retentions", sweep.retentions, "PCA retentions, 'none' for no PCA")
      ->delimiter(',')
      ->capture_default_str();

  ReportArgs report;
  auto* r = app.add_subcommand("report", "full protocol for the configured cells with CSV reports");
  add_dataset_flags(r, report.common);
  add_protocol_flags(r, report.common);
  r->add_option("-o,--out", report.out, "output directory")->required();
  r->add_option("--combos", report.combos, "feature combinations")->delimiter(',');
  r->add_option("--hog-weights", report.hog_weights, "HOG weights (HOG combinations only)")->delimiter(',');
  r->add_option("--retentions", report.retentions, "PCA retentions, 'none' for no PCA")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (e->parsed()) return cmd_extract(extract);
    if (t->parsed()) return cmd_train(train);
    if (p->parsed()) return cmd_predict(predict);
    if (g->parsed()) return cmd_grid_search(grid);
    if (ab->parsed()) return cmd_ablation(ablation);
    if (sw->parsed()) return cmd_sweep(sweep);
    if (r->parsed()) return cmd_report(report);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return exit_code(category(err.code()));
  } catch (const nlohmann::json::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitData;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitData;
  }
  return kExitConfig;
}
