#pragma once

// One-vs-One multi-class RBF SVM with voting, and grid search over (C, gamma)
// scored by stratified k-fold cross-validation.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gesturelab/error.hpp"
#include "gesturelab/fusion.hpp"
#include "gesturelab/linalg.hpp"
#include "gesturelab/parallel.hpp"
#include "gesturelab/pca.hpp"
#include "gesturelab/random.hpp"
#include "gesturelab/svm.hpp"

namespace gesturelab {

/// Binary model for classes[first] (+1) versus classes[second] (-1), first < second.
struct PairModel {
  std::size_t first = 0;
  std::size_t second = 0;
  BinarySvmModel svm;
};

/// Input transformation fitted with the classifier: HOG weighting, then PCA.
struct Preprocessing {
  FusionConfig fusion;
  std::optional<PcaModel> pca;
};

struct MultiClassModel {
  std::vector<int> classes;  // ascending
  std::vector<PairModel> pairs;
  KernelParams params;
  std::optional<Preprocessing> preprocessing;

  std::size_t class_index(int label) const {
    const auto it = std::lower_bound(classes.begin(), classes.end(), label);
    if (it == classes.end() || *it != label)
      throw Error(ErrorCode::InvalidArgument, "unknown class label " + std::to_string(label));
    return static_cast<std::size_t>(it - classes.begin());
  }

  bool converged() const {
    return std::all_of(pairs.begin(), pairs.end(), [](const PairModel& p) { return p.svm.converged; });
  }

  /// Unweighted fused vector -> classifier input. Identity without preprocessing.
  std::vector<double> preprocess(std::span<const double> x) const {
    std::vector<double> v(x.begin(), x.end());
    if (!preprocessing) return v;
    apply_hog_weight(v, preprocessing->fusion);
    if (preprocessing->pca) v = preprocessing->pca->transform(v);
    return v;
  }
};

struct Prediction {
  int label = 0;
  std::vector<std::size_t> votes;  // per class index
  std::vector<double> margins;     // summed |decision| of the votes each class won
};

namespace detail {

inline std::vector<int> sorted_classes(std::span<const int> labels) {
  std::vector<int> classes(labels.begin(), labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  return classes;
}

inline void tally(Prediction& p, const PairModel& pair, double decision) {
  const std::size_t winner = decision >= 0.0 ? pair.first : pair.second;
  ++p.votes[winner];
  p.margins[winner] += std::abs(decision);
}

/// Most votes; ties by larger margin sum, then lower class index.
inline void finish_vote(Prediction& p, std::span<const int> classes) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < classes.size(); ++c) {
    if (p.votes[c] > p.votes[best] || (p.votes[c] == p.votes[best] && p.margins[c] > p.margins[best])) best = c;
  }
  p.label = classes[best];
}

template <class KernelFactory>
MultiClassModel train_pairs(std::span<const int> labels, std::span<const std::size_t> rows,
                            const KernelParams& params, const SmoOptions& opt, const Matrix* data,
                            KernelFactory&& make_kernel) {
  params.validate();
  std::vector<int> row_labels(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) row_labels[t] = labels[rows[t]];
  MultiClassModel model;
  model.classes = sorted_classes(row_labels);
  model.params = params;
  if (model.classes.size() < 2) throw Error(ErrorCode::SingleClassData, "multi-class training needs >= 2 classes");

  std::vector<std::vector<std::size_t>> by_class(model.classes.size());
  for (std::size_t t = 0; t < rows.size(); ++t) by_class[model.class_index(row_labels[t])].push_back(rows[t]);

  const std::size_t m = model.classes.size();
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a + 1; b < m; ++b) model.pairs.push_back({a, b, {}});

  parallel_for(model.pairs.size(), [&](std::size_t p) {
    auto& pair = model.pairs[p];
    std::vector<std::size_t> pair_rows;
    std::vector<int> y;
    pair_rows.insert(pair_rows.end(), by_class[pair.first].begin(), by_class[pair.first].end());
    pair_rows.insert(pair_rows.end(), by_class[pair.second].begin(), by_class[pair.second].end());
    std::sort(pair_rows.begin(), pair_rows.end());
    y.reserve(pair_rows.size());
    for (std::size_t r : pair_rows) y.push_back(labels[r] == model.classes[pair.first] ? 1 : -1);
    try {
      const auto kernel = make_kernel(std::span<const std::size_t>(pair_rows));
      pair.svm = train_binary_with(kernel, y, params, opt, pair_rows, data);
    } catch (const Error& e) {
      throw with_context(e, "pair (" + std::to_string(model.classes[pair.first]) + ", " +
                                std::to_string(model.classes[pair.second]) + ")");
    }
  });
  return model;
}

/// Kernel over selected rows of a data matrix, computed directly.
struct SubsetDataKernel {
  const Matrix* data;
  std::span<const std::size_t> rows;
  double gamma;
  std::size_t size() const { return rows.size(); }
  double operator()(std::size_t i, std::size_t j) const {
    return rbf_from_squared_distance(squared_distance(data->row(rows[i]), data->row(rows[j])), gamma);
  }
};

}  // namespace detail

/// Trains on `rows` of a pairwise distance table. `labels` is indexed by table
/// row. Support vectors are copied from `data` when given; indices are always kept.
inline MultiClassModel train_multiclass_indexed(const DistanceTable& distances, std::span<const int> labels,
                                                std::span<const std::size_t> rows, const KernelParams& params,
                                                const SmoOptions& opt = {}, const Matrix* data = nullptr) {
  return detail::train_pairs(labels, rows, params, opt, data, [&](std::span<const std::size_t> pair_rows) {
    return SubsetKernel{&distances, pair_rows, params.gamma};
  });
}

/// Above this many rows the pairwise distance table is not precomputed.
inline constexpr std::size_t kDistanceTableLimit = 8192;

inline MultiClassModel train_multiclass(const Matrix& data, std::span<const int> labels, const KernelParams& params,
                                        const SmoOptions& opt = {}) {
  if (labels.size() != data.rows())
    throw Error(ErrorCode::DimensionMismatch, "label count does not match row count");
  std::vector<std::size_t> rows(data.rows());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  if (data.rows() <= kDistanceTableLimit) {
    const DistanceTable table = DistanceTable::pairwise(data);
    return train_multiclass_indexed(table, labels, rows, params, opt, &data);
  }
  return detail::train_pairs(labels, rows, params, opt, &data, [&](std::span<const std::size_t> pair_rows) {
    return detail::SubsetDataKernel{&data, pair_rows, params.gamma};
  });
}

/// Votes on an already-preprocessed input.
inline Prediction predict_detailed_raw(const MultiClassModel& model, std::span<const double> x) {
  Prediction p;
  p.votes.assign(model.classes.size(), 0);
  p.margins.assign(model.classes.size(), 0.0);
  for (const auto& pair : model.pairs) detail::tally(p, pair, pair.svm.decision_value(x));
  detail::finish_vote(p, model.classes);
  return p;
}

/// Votes using squared distances to training rows: dist(row) for every support index.
template <class DistanceFn>
Prediction predict_from_distances(const MultiClassModel& model, DistanceFn&& dist) {
  Prediction p;
  p.votes.assign(model.classes.size(), 0);
  p.margins.assign(model.classes.size(), 0.0);
  std::vector<double> d;
  for (const auto& pair : model.pairs) {
    d.resize(pair.svm.support_indices.size());
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = dist(pair.svm.support_indices[k]);
    detail::tally(p, pair, pair.svm.decision_value_from_distances(d));
  }
  detail::finish_vote(p, model.classes);
  return p;
}

/// Applies the model's preprocessing, then votes.
inline Prediction predict_detailed(const MultiClassModel& model, std::span<const double> x) {
  return predict_detailed_raw(model, model.preprocess(x));
}

inline int predict(const MultiClassModel& model, std::span<const double> x) {
  return predict_detailed(model, x).label;
}

struct GridSearchOptions {
  std::vector<double> c_grid{1.0, 10.0, 100.0, 1000.0};
  std::vector<double> gamma_grid{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  std::size_t folds = 10;
  std::uint64_t seed = 0;
  SmoOptions smo;
};

struct CvCell {
  KernelParams params;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;
};

struct GridSearchResult {
  KernelParams best;
  double best_accuracy = 0.0;
  std::vector<CvCell> table;  // C-major, gamma-minor
  std::vector<std::string> warnings;
};

/// Fold id per row. Each class is shuffled and dealt round-robin, continuing the
/// fold counter across classes. Classes smaller than `folds` get one row per fold
/// (leave-one-out within that class) and a warning.
inline std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t folds, std::uint64_t seed,
                                                 std::vector<std::string>* warnings = nullptr) {
  if (folds < 2) throw Error(ErrorCode::InvalidArgument, "folds must be >= 2");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> fold(labels.size(), 0);
  std::size_t next = 0;
  for (auto& [label, rows] : by_class) {
    if (rows.size() < folds && warnings)
      warnings->push_back(std::string(to_string(ErrorCode::InsufficientData)) + ": class " + std::to_string(label) +
                          " has " + std::to_string(rows.size()) + " samples for " + std::to_string(folds) +
                          " folds; using leave-one-out for this class");
    rng.shuffle(std::span<std::size_t>(rows));
    for (std::size_t r : rows) fold[r] = next++ % folds;
  }
  return fold;
}

/// Grid search over a precomputed pairwise distance table of the training rows.
inline GridSearchResult grid_search(const DistanceTable& distances, std::span<const int> labels,
                                    const GridSearchOptions& opt) {
  if (opt.c_grid.empty() || opt.gamma_grid.empty()) throw Error(ErrorCode::ConfigError, "empty search grid");
  if (labels.size() != distances.rows())
    throw Error(ErrorCode::DimensionMismatch, "label count does not match distance table");
  GridSearchResult result;
  const auto fold = stratified_folds(labels, opt.folds, opt.seed, &result.warnings);

  std::vector<std::vector<std::size_t>> train_rows(opt.folds), test_rows(opt.folds);
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t f = 0; f < opt.folds; ++f) (fold[i] == f ? test_rows : train_rows)[f].push_back(i);

  for (double c : opt.c_grid)
    for (double g : opt.gamma_grid) result.table.push_back({{c, g}, 0, 0, 0.0});

  const std::size_t jobs = result.table.size() * opt.folds;
  std::vector<std::size_t> correct(jobs, 0), total(jobs, 0);
  parallel_for(jobs, [&](std::size_t job) {
    const std::size_t cell = job / opt.folds, f = job % opt.folds;
    if (test_rows[f].empty()) return;
    const KernelParams params = result.table[cell].params;
    try {
      const auto model = train_multiclass_indexed(distances, labels, train_rows[f], params, opt.smo);
      for (std::size_t r : test_rows[f]) {
        const auto p = predict_from_distances(model, [&](std::size_t sv) { return distances(sv, r); });
        correct[job] += p.label == labels[r] ? 1 : 0;
        ++total[job];
      }
    } catch (const Error& e) {
      throw with_context(e, "grid cell C=" + std::to_string(params.c) + " gamma=" + std::to_string(params.gamma) +
                                " fold " + std::to_string(f));
    }
  });

  for (std::size_t cell = 0; cell < result.table.size(); ++cell) {
    auto& entry = result.table[cell];
    for (std::size_t f = 0; f < opt.folds; ++f) {
      entry.correct += correct[cell * opt.folds + f];
      entry.total += total[cell * opt.folds + f];
    }
    entry.accuracy = entry.total ? static_cast<double>(entry.correct) / static_cast<double>(entry.total) : 0.0;
  }
  // Highest accuracy; ties to smaller C, then smaller gamma.
  const CvCell* best = &result.table.front();
  for (const auto& entry : result.table) {
    const bool better = entry.accuracy > best->accuracy ||
                        (entry.accuracy == best->accuracy &&
                         (entry.params.c < best->params.c ||
                          (entry.params.c == best->params.c && entry.params.gamma < best->params.gamma)));
    if (better) best = &entry;
  }
  result.best = best->params;
  result.best_accuracy = best->accuracy;
  return result;
}

inline GridSearchResult grid_search(const Matrix& data, std::span<const int> labels, const GridSearchOptions& opt) {
  if (labels.size() != data.rows())
    throw Error(ErrorCode::DimensionMismatch, "label count does not match row count");
  return grid_search(DistanceTable::pairwise(data), labels, opt);
}

// Model container:
// {"version":1, "classes":[...], "params":{...}, "pairs":[{"first":l,"second":l,"model":{...}}],
//  "preprocessing": {"fusion":{...}, "pca":{...}|null} | null}
inline void to_json(nlohmann::json& j, const MultiClassModel& m) {
  auto pairs = nlohmann::json::array();
  for (const auto& p : m.pairs)
    pairs.push_back({{"first", m.classes[p.first]}, {"second", m.classes[p.second]}, {"model", p.svm}});
  j = nlohmann::json{{"version", 1}, {"classes", m.classes}, {"params", m.params}, {"pairs", std::move(pairs)}};
  if (m.preprocessing) {
    nlohmann::json pre{{"fusion", m.preprocessing->fusion}};
    if (m.preprocessing->pca)
      pre["pca"] = *m.preprocessing->pca;
    else
      pre["pca"] = nullptr;
    j["preprocessing"] = std::move(pre);
  } else {
    j["preprocessing"] = nullptr;
  }
}

inline void from_json(const nlohmann::json& j, MultiClassModel& m) {
  try {
    if (j.at("version").get<int>() != 1)
      throw Error(ErrorCode::SchemaVersionMismatch, "model version " + j.at("version").dump());
    m.classes = j.at("classes").get<std::vector<int>>();
    m.params = j.at("params").get<KernelParams>();
    m.pairs.clear();
    for (const auto& p : j.at("pairs"))
      m.pairs.push_back({m.class_index(p.at("first").get<int>()), m.class_index(p.at("second").get<int>()),
                         p.at("model").get<BinarySvmModel>()});
    m.preprocessing.reset();
    if (j.contains("preprocessing") && !j.at("preprocessing").is_null()) {
      Preprocessing pre;
      pre.fusion = j.at("preprocessing").at("fusion").get<FusionConfig>();
      const auto& pca = j.at("preprocessing").at("pca");
      if (!pca.is_null()) pre.pca = pca.get<PcaModel>();
      m.preprocessing = std::move(pre);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("model: ") + e.what());
  }
}

}  // namespace gesturelab
