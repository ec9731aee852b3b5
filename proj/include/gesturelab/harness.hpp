#pragma once

// Experiment protocol: repeated seeded 80/20 splits, grid-searched RBF SVMs,
// feature ablations, the HOG-weight x PCA-retention sweep, and CSV reports.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gesturelab/dataset.hpp"
#include "gesturelab/error.hpp"
#include "gesturelab/fusion.hpp"
#include "gesturelab/image_pipeline.hpp"
#include "gesturelab/multiclass.hpp"
#include "gesturelab/parallel.hpp"
#include "gesturelab/pca.hpp"
#include "gesturelab/random.hpp"
#include "gesturelab/tracking_features.hpp"

namespace gesturelab {

struct ExperimentConfig {
  // dataset
  std::optional<std::filesystem::path> manifest;  // synthetic when empty
  SyntheticConfig synthetic;
  NoiseScales noise;

  // features
  TrackingConfig tracking;
  ImagePipelineConfig image;
  std::vector<std::string> combos{"A+D+T"};
  std::vector<double> hog_weights{1.0};
  std::vector<std::optional<double>> retentions{std::nullopt};  // nullopt: no PCA
  RetentionMode retention_mode = RetentionMode::Variance;

  // classifier + protocol
  GridSearchOptions grid;
  bool grid_per_repetition = false;
  std::size_t repetitions = 50;
  double train_fraction = 0.8;
  std::uint64_t master_seed = 1;

  void validate() const {
    if (repetitions < 1) throw Error(ErrorCode::ConfigError, "repetitions must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
      throw Error(ErrorCode::ConfigError, "train_fraction must be in (0, 1)");
    if (combos.empty() || hog_weights.empty() || retentions.empty())
      throw Error(ErrorCode::ConfigError, "combos, hog_weights and retentions must be non-empty");
    if (grid.c_grid.empty() || grid.gamma_grid.empty()) throw Error(ErrorCode::ConfigError, "empty SVM grid");
    if (grid.folds < 2) throw Error(ErrorCode::ConfigError, "folds must be >= 2");
    for (double k : hog_weights)
      if (!(k >= 0.0)) throw Error(ErrorCode::ConfigError, "HOG weights must be >= 0");
    for (const auto& r : retentions)
      if (r && !(*r > 0.0 && *r <= 1.0)) throw Error(ErrorCode::ConfigError, "retention must be in (0, 1]");
  }
};

namespace detail {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

}  // namespace detail

/// Reads a JSON experiment config on top of `base`; absent keys keep base values.
inline ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {}) {
  using detail::read_opt;
  try {
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      if (d.contains("manifest") && !d.at("manifest").is_null())
        base.manifest = std::filesystem::path(d.at("manifest").get<std::string>());
      if (d.contains("synthetic")) {
        const auto& s = d.at("synthetic");
        read_opt(s, "subjects", base.synthetic.subjects);
        read_opt(s, "repetitions", base.synthetic.repetitions);
        read_opt(s, "seed", base.synthetic.seed);
        read_opt(s, "image_size", base.synthetic.image_size);
        read_opt(s, "stereo", base.synthetic.stereo);
        read_opt(s, "position_noise_mm", base.noise.position_mm);
        read_opt(s, "style_noise_mm", base.noise.style_mm);
        read_opt(s, "hand_scale_noise", base.noise.hand_scale);
        if (s.contains("rotation_noise_deg"))
          base.noise.rotation_rad = s.at("rotation_noise_deg").get<double>() * std::numbers::pi / 180.0;
      }
    }
    if (j.contains("hog")) {
      const auto& h = j.at("hog");
      read_opt(h, "cell_size", base.image.hog.cell_size);
      read_opt(h, "block_cells", base.image.hog.block_cells);
      read_opt(h, "block_stride", base.image.hog.block_stride);
      read_opt(h, "bins", base.image.hog.bins);
      read_opt(h, "clip", base.image.hog.clip);
      if (h.contains("input_size")) {
        const auto sz = h.at("input_size").get<std::size_t>();
        base.image.hog_input = {sz, sz};
      }
      read_opt(h, "crop_margin", base.image.crop_margin);
      if (h.contains("stereo")) base.image.stereo = h.at("stereo").get<bool>() ? StereoUse::Both : StereoUse::LeftOnly;
      if (h.contains("threshold") && !h.at("threshold").is_null()) {
        const auto& t = h.at("threshold");
        if (t.is_string() && t.get<std::string>() == "otsu")
          base.image.threshold = OtsuThreshold{};
        else
          base.image.threshold = FixedThreshold{t.get<int>()};
      }
    }
    if (j.contains("angle_range")) {
      const auto r = j.at("angle_range").get<std::vector<double>>();
      if (r.size() != 2) throw Error(ErrorCode::ConfigError, "angle_range needs two values");
      base.tracking.angle_range = {r[0], r[1]};
    }
    read_opt(j, "combos", base.combos);
    read_opt(j, "hog_weights", base.hog_weights);
    if (j.contains("retentions")) {
      base.retentions.clear();
      for (const auto& r : j.at("retentions"))
        base.retentions.push_back(r.is_null() ? std::nullopt : std::optional<double>(r.get<double>()));
    }
    if (j.contains("retention_mode")) {
      const auto mode = j.at("retention_mode").get<std::string>();
      if (mode == "variance") base.retention_mode = RetentionMode::Variance;
      else if (mode == "dimension") base.retention_mode = RetentionMode::Dimension;
      else throw Error(ErrorCode::ConfigError, "retention_mode must be 'variance' or 'dimension'");
    }
    if (j.contains("svm")) {
      const auto& s = j.at("svm");
      read_opt(s, "c_grid", base.grid.c_grid);
      read_opt(s, "gamma_grid", base.grid.gamma_grid);
      read_opt(s, "folds", base.grid.folds);
      read_opt(s, "tol", base.grid.smo.tol);
      read_opt(s, "max_iterations", base.grid.smo.max_iterations);
      read_opt(s, "grid_per_repetition", base.grid_per_repetition);
    }
    read_opt(j, "repetitions", base.repetitions);
    read_opt(j, "train_fraction", base.train_fraction);
    read_opt(j, "seed", base.master_seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
  base.validate();
  return base;
}

/// Per-sample features computed once per dataset.
struct FeatureStore {
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<TrackingFeatures> tracking;
  Matrix hog;  // empty when images were not processed

  std::size_t size() const { return labels.size(); }
  std::size_t hog_length() const { return hog.cols(); }

  /// Weighted fused vectors for all samples.
  Matrix fused(const FusionConfig& cfg) const {
    if (cfg.use_hog && hog.rows() != size())
      throw Error(ErrorCode::LayoutMismatch, "HOG requested but the feature store has no image features");
    Matrix out(size(), cfg.dimension());
    for (std::size_t i = 0; i < size(); ++i) {
      const auto v = fuse(tracking[i].to_vector(cfg.tracking_mask),
                          cfg.use_hog ? hog.row(i) : std::span<const double>{}, cfg);
      std::copy(v.begin(), v.end(), out.row(i).begin());
    }
    return out;
  }
};

inline FeatureStore extract_features(const Dataset& ds, const TrackingConfig& tracking,
                                     const ImagePipelineConfig& image, bool with_hog = true) {
  FeatureStore store;
  const std::size_t n = ds.samples.size();
  store.ids.resize(n);
  store.labels.resize(n);
  store.tracking.resize(n);
  std::vector<std::vector<double>> hogs(with_hog ? n : 0);
  const UndistortionMap* map = ds.undistortion ? &*ds.undistortion : nullptr;
  parallel_for(n, [&](std::size_t i) {
    const Sample& s = ds.samples[i];
    store.ids[i] = s.id();
    store.labels[i] = s.gesture;
    try {
      store.tracking[i] = extract_tracking_features(s.frame, tracking);
      if (with_hog) hogs[i] = sample_descriptor(s.images, map, image).values;
    } catch (const Error& e) {
      throw with_context(e, "sample " + s.id());
    }
  });
  for (const auto& h : hogs) store.hog.append_row(h);
  return store;
}

/// m x m counts; rows are true classes, columns predicted.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<int> classes)
      : classes_(std::move(classes)), counts_(classes_.size() * classes_.size(), 0) {}

  const std::vector<int>& classes() const { return classes_; }
  std::size_t size() const { return classes_.size(); }

  void add(int truth, int predicted) { ++counts_[index(truth) * size() + index(predicted)]; }
  std::size_t count(std::size_t row, std::size_t col) const { return counts_[row * size() + col]; }

  std::size_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }
  std::size_t trace() const {
    std::size_t t = 0;
    for (std::size_t i = 0; i < size(); ++i) t += count(i, i);
    return t;
  }
  std::size_t row_sum(std::size_t row) const {
    std::size_t s = 0;
    for (std::size_t c = 0; c < size(); ++c) s += count(row, c);
    return s;
  }
  double accuracy() const {
    const auto n = total();
    return n ? static_cast<double>(trace()) / static_cast<double>(n) : 0.0;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.classes_ != classes_) throw Error(ErrorCode::DimensionMismatch, "confusion matrices differ in classes");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t index(int label) const {
    const auto it = std::find(classes_.begin(), classes_.end(), label);
    if (it == classes_.end()) throw Error(ErrorCode::InvalidArgument, "label " + std::to_string(label) + " not in matrix");
    return static_cast<std::size_t>(it - classes_.begin());
  }

  std::vector<int> classes_;
  std::vector<std::size_t> counts_;
};

struct PredictionRecord {
  std::size_t repetition = 0;
  std::size_t sample = 0;  // index into the feature store
  int truth = 0;
  int predicted = 0;
  std::vector<std::size_t> votes;  // per class of the cell's confusion matrix
};

/// One experiment cell: a feature combination, HOG weight and PCA retention.
struct CellResult {
  std::string combo;
  std::optional<double> hog_weight;  // only for combinations containing HOG
  std::optional<double> retention;
  std::vector<double> accuracies;    // per repetition
  double mean = 0.0;
  double stddev = 0.0;
  ConfusionMatrix confusion;         // summed over repetitions
  std::vector<PredictionRecord> predictions;
  std::vector<KernelParams> params;  // per repetition
  std::vector<std::size_t> pca_components;  // per repetition, 0 without PCA
  std::optional<GridSearchResult> grid;     // the (first) search of this cell
  std::vector<std::string> warnings;
  bool converged = true;
};

struct ExperimentReport {
  std::vector<CellResult> cells;
};

using Logger = std::function<void(const std::string&)>;

namespace detail {

inline std::string format_double(double v, const char* fmt = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

inline void finalize_cell(CellResult& cell) {
  const double n = static_cast<double>(cell.accuracies.size());
  cell.mean = std::accumulate(cell.accuracies.begin(), cell.accuracies.end(), 0.0) / n;
  double ss = 0.0;
  for (double a : cell.accuracies) ss += (a - cell.mean) * (a - cell.mean);
  cell.stddev = cell.accuracies.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
}

}  // namespace detail

inline std::uint64_t repetition_seed(std::uint64_t master, std::size_t repetition) {
  return derive_seed(master, repetition);
}

/// Runs all retention cells for one fusion setting over every repetition. The PCA
/// spectrum of a repetition's training split is shared by its retention cells.
inline std::vector<CellResult> run_fusion_cells(const FeatureStore& store, const FusionConfig& fusion,
                                                std::span<const std::optional<double>> retentions,
                                                const ExperimentConfig& cfg, const Logger& log = {}) {
  fusion.validate();
  const Matrix features = store.fused(fusion);
  const std::vector<int> classes = detail::sorted_classes(store.labels);

  std::vector<CellResult> cells(retentions.size());
  std::vector<std::optional<KernelParams>> fixed_params(retentions.size());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    cells[c].combo = fusion.combo_name();
    if (fusion.use_hog) cells[c].hog_weight = fusion.hog_weight;
    cells[c].retention = retentions[c];
    cells[c].confusion = ConfusionMatrix(classes);
  }
  const bool any_pca = std::any_of(retentions.begin(), retentions.end(), [](const auto& r) { return r.has_value(); });

  for (std::size_t rep = 0; rep < cfg.repetitions; ++rep) {
    const std::uint64_t seed = repetition_seed(cfg.master_seed, rep);
    const Split sp = split(store.labels, cfg.train_fraction, seed, true);
    const Matrix train_x = features.select_rows(sp.train);
    const Matrix test_x = features.select_rows(sp.test);
    std::vector<int> train_y, test_y;
    for (auto i : sp.train) train_y.push_back(store.labels[i]);
    for (auto i : sp.test) test_y.push_back(store.labels[i]);
    std::vector<std::size_t> train_rows(sp.train.size());
    std::iota(train_rows.begin(), train_rows.end(), std::size_t{0});

    std::optional<PcaSpectrum> spectrum;
    if (any_pca) spectrum = pca_spectrum(train_x);

    for (std::size_t c = 0; c < cells.size(); ++c) {
      CellResult& cell = cells[c];
      const std::string where = cell.combo + (cell.hog_weight ? " K=" + detail::format_double(*cell.hog_weight, "%g") : "") +
                                (cell.retention ? " R=" + detail::format_double(*cell.retention, "%g") : "") +
                                " rep " + std::to_string(rep);
      try {
        Matrix tr = train_x, te = test_x;
        std::size_t components = 0;
        if (cell.retention) {
          const PcaModel pca = truncate(*spectrum, {cfg.retention_mode, *cell.retention});
          tr = pca.transform(train_x);
          te = pca.transform(test_x);
          components = pca.output_dimension();
        }
        const DistanceTable train_d = DistanceTable::pairwise(tr);
        const DistanceTable cross_d = DistanceTable::cross(tr, te);

        KernelParams params;
        if (cfg.grid_per_repetition || !fixed_params[c]) {
          GridSearchOptions g = cfg.grid;
          g.seed = derive_seed(seed, 0x67726964ULL);
          GridSearchResult gs = grid_search(train_d, train_y, g);
          params = gs.best;
          for (auto& w : gs.warnings) cell.warnings.push_back(w);
          if (!cell.grid) cell.grid = std::move(gs);
          if (!cfg.grid_per_repetition) fixed_params[c] = params;
        } else {
          params = *fixed_params[c];
        }

        const MultiClassModel model = train_multiclass_indexed(train_d, train_y, train_rows, params, cfg.grid.smo);
        cell.converged = cell.converged && model.converged();
        ConfusionMatrix cm(classes);
        for (std::size_t t = 0; t < sp.test.size(); ++t) {
          const Prediction p = predict_from_distances(model, [&](std::size_t sv) { return cross_d(sv, t); });
          cm.add(test_y[t], p.label);
          PredictionRecord rec{rep, sp.test[t], test_y[t], p.label, std::vector<std::size_t>(classes.size(), 0)};
          for (std::size_t k = 0; k < model.classes.size(); ++k)
            rec.votes[static_cast<std::size_t>(std::find(classes.begin(), classes.end(), model.classes[k]) -
                                               classes.begin())] = p.votes[k];
          cell.predictions.push_back(std::move(rec));
        }
        cell.accuracies.push_back(cm.accuracy());
        cell.confusion += cm;
        cell.params.push_back(params);
        cell.pca_components.push_back(components);
        if (log)
          log(where + ": accuracy " + detail::format_double(cm.accuracy(), "%.4f") + " (C=" +
              detail::format_double(params.c, "%g") + ", gamma=" + detail::format_double(params.gamma, "%g") +
              (components ? ", pca=" + std::to_string(components) : "") + ")");
      } catch (const Error& e) {
        throw with_context(e, where);
      }
    }
  }
  for (auto& cell : cells) detail::finalize_cell(cell);
  return cells;
}

/// Cells for every configured combination, HOG weight and retention.
inline ExperimentReport run_experiment(const FeatureStore& store, const ExperimentConfig& cfg, const Logger& log = {}) {
  cfg.validate();
  ExperimentReport report;
  for (const auto& combo : cfg.combos) {
    FusionConfig base = parse_combo(combo, std::max<std::size_t>(store.hog_length(), 1));
    base.hog_length = store.hog_length();
    const std::vector<double> weights = base.use_hog ? cfg.hog_weights : std::vector<double>{1.0};
    for (double k : weights) {
      FusionConfig fusion = base;
      fusion.hog_weight = k;
      auto cells = run_fusion_cells(store, fusion, cfg.retentions, cfg, log);
      for (auto& c : cells) report.cells.push_back(std::move(c));
    }
  }
  return report;
}

inline bool needs_hog(const ExperimentConfig& cfg) {
  return std::any_of(cfg.combos.begin(), cfg.combos.end(),
                     [](const std::string& c) { return c.find("HOG") != std::string::npos; });
}

/// The configured dataset: the manifest, or a synthetic set from the default templates.
inline Dataset load_configured_dataset(const ExperimentConfig& cfg) {
  if (cfg.manifest) return load_dataset(*cfg.manifest);
  auto templates = default_templates();
  for (auto& t : templates) t.noise = cfg.noise;
  return generate_synthetic(templates, cfg.synthetic);
}

inline FeatureStore configured_features(const ExperimentConfig& cfg, bool with_hog) {
  return extract_features(load_configured_dataset(cfg), cfg.tracking, cfg.image, with_hog);
}

struct AblationRow {
  std::string combo;
  double mean = 0.0;
  double stddev = 0.0;
};

/// One tracking-only experiment per feature mask.
inline std::vector<AblationRow> ablation_table(const FeatureStore& store, const ExperimentConfig& cfg,
                                               std::span<const std::string> combos, const Logger& log = {},
                                               ExperimentReport* report = nullptr) {
  if (combos.empty()) throw Error(ErrorCode::ConfigError, "ablation needs at least one combination");
  std::vector<AblationRow> rows;
  const std::optional<double> no_pca[] = {std::nullopt};
  for (const auto& combo : combos) {
    FusionConfig fusion;
    fusion.tracking_mask = FeatureMask::parse(combo);
    auto cells = run_fusion_cells(store, fusion, no_pca, cfg, log);
    rows.push_back({combo, cells.front().mean, cells.front().stddev});
    if (report) report->cells.push_back(std::move(cells.front()));
  }
  return rows;
}

/// Tracking combinations compared in the ablation table.
inline std::vector<std::string> default_ablation_combos() { return {"D+E+T", "A+E+T", "A+D+E", "A+D+T", "A+D+E+T"}; }

/// K x retention grid for `combo` (which must include HOG).
inline ExperimentReport fusion_sweep(const FeatureStore& store, const ExperimentConfig& cfg, const std::string& combo,
                                     std::span<const double> k_values,
                                     std::span<const std::optional<double>> retentions, const Logger& log = {}) {
  if (k_values.empty() || retentions.empty()) throw Error(ErrorCode::ConfigError, "sweep grids must be non-empty");
  FusionConfig base = parse_combo(combo, std::max<std::size_t>(store.hog_length(), 1));
  if (!base.use_hog) throw Error(ErrorCode::ConfigError, "sweep combination must include HOG");
  base.hog_length = store.hog_length();
  ExperimentReport report;
  for (double k : k_values) {
    FusionConfig fusion = base;
    fusion.hog_weight = k;
    auto cells = run_fusion_cells(store, fusion, retentions, cfg, log);
    for (auto& c : cells) report.cells.push_back(std::move(c));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Output

inline std::string cell_label(const CellResult& c) {
  std::string s = c.combo;
  if (c.hog_weight) s += "_K" + detail::format_double(*c.hog_weight, "%g");
  s += c.retention ? "_R" + detail::format_double(*c.retention, "%g") : "_Rnone";
  return s;
}

/// Long format: combo,K,retention,rep,accuracy with a "mean" row closing each cell.
inline std::string report_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << "combo,K,retention,rep,accuracy\n";
  for (const auto& c : report.cells) {
    const std::string k = c.hog_weight ? detail::format_double(*c.hog_weight, "%g") : "none";
    const std::string r = c.retention ? detail::format_double(*c.retention, "%g") : "none";
    for (std::size_t i = 0; i < c.accuracies.size(); ++i)
      out << c.combo << ',' << k << ',' << r << ',' << i << ',' << detail::format_double(c.accuracies[i]) << '\n';
    out << c.combo << ',' << k << ',' << r << ",mean," << detail::format_double(c.mean) << '\n';
  }
  return out.str();
}

/// Header row/column of class labels, integer counts, then "accuracy,<value>".
inline std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  out << "true\\pred";
  for (int c : cm.classes()) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < cm.size(); ++r) {
    out << cm.classes()[r];
    for (std::size_t c = 0; c < cm.size(); ++c) out << ',' << cm.count(r, c);
    out << '\n';
  }
  out << "accuracy," << detail::format_double(cm.accuracy()) << '\n';
  return out.str();
}

/// sample_id,true,pred,votes; sample_id is "r<rep>/<sample id>", votes are ';'-joined per class.
inline std::string predictions_csv(const CellResult& cell, std::span<const std::string> ids) {
  std::ostringstream out;
  out << "sample_id,true,pred,votes\n";
  for (const auto& p : cell.predictions) {
    out << 'r' << p.repetition << '/' << ids[p.sample] << ',' << p.truth << ',' << p.predicted << ',';
    for (std::size_t k = 0; k < p.votes.size(); ++k) out << (k ? ";" : "") << p.votes[k];
    out << '\n';
  }
  return out.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

inline void emit_confusion(const CellResult& cell, const std::filesystem::path& path) {
  write_text(path, confusion_csv(cell.confusion));
}

/// report.csv plus confusion_<cell>.csv and predictions_<cell>.csv per cell.
inline void write_report(const std::filesystem::path& dir, const ExperimentReport& report,
                         std::span<const std::string> ids) {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.csv", report_csv(report));
  for (const auto& c : report.cells) {
    emit_confusion(c, dir / ("confusion_" + cell_label(c) + ".csv"));
    write_text(dir / ("predictions_" + cell_label(c) + ".csv"), predictions_csv(c, ids));
  }
}

/// Grid-search table as CSV: C,gamma,correct,total,accuracy.
inline std::string grid_csv(const GridSearchResult& g) {
  std::ostringstream out;
  out << "C,gamma,correct,total,accuracy\n";
  for (const auto& e : g.table)
    out << detail::format_double(e.params.c, "%g") << ',' << detail::format_double(e.params.gamma, "%g") << ','
        << e.correct << ',' << e.total << ',' << detail::format_double(e.accuracy) << '\n';
  return out.str();
}

}  // namespace gesturelab
