// Acceptance suite: one [PASS]/[FAIL] line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "support.hpp"

using namespace gesturelab;

namespace {

/// Collects failed conditions and a few numbers worth printing.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }

  bool ok() const { return failed_ == 0; }
  std::string summary() const {
    std::string s = notes_;
    if (failed_) {
      s += (s.empty() ? "" : "; ") + std::to_string(failed_) + " failed:";
      for (const auto& f : failures_) s += " [" + f + "]";
    }
    return s;
  }

 private:
  std::vector<std::string> failures_;
  std::size_t failed_ = 0;
  std::string notes_;
};

std::string fmt(double v, const char* f = "%.3g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int failures = 0;

void run(const std::string& id, const std::string& title, double budget_s, const std::function<void(Check&)>& body) {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(c);
  } catch (const std::exception& e) {
    c.expect(false, std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.expect(secs < budget_s, "runtime " + fmt(secs) + " s over budget " + fmt(budget_s) + " s");
  if (!c.ok()) ++failures;
  std::printf("[%s] %s %s (%.1f s): %s\n", c.ok() ? "PASS" : "FAIL", id.c_str(), title.c_str(), secs,
              c.summary().c_str());
  std::fflush(stdout);
}

/// 60-sample synthetic set with images; shared by the structural and fusion checks.
const FeatureStore& small_store() {
  static const FeatureStore store = [] {
    SyntheticConfig cfg;
    cfg.subjects = 2;
    cfg.repetitions = 3;
    cfg.seed = 7;
    return extract_features(generate_synthetic(default_templates(), cfg), {}, {});
  }();
  return store;
}

double max_feature_diff(const TrackingFeatures& a, const TrackingFeatures& b, bool angles) {
  const auto va = a.to_vector(), vb = b.to_vector();
  double m = 0.0;
  for (std::size_t i = angles ? 0 : kFingerSlots; i < va.size(); ++i) m = std::max(m, std::abs(va[i] - vb[i]));
  return m;
}

void structural(Check& c) {
  const auto& store = small_store();
  const auto model = train_multiclass(store.fused(parse_combo("A+D+T", 0)), store.labels, {10.0, 0.5});
  c.expect(model.classes.size() == 10, "10 classes");
  c.expect(model.pairs.size() == 45, "45 binary models, got " + std::to_string(model.pairs.size()));

  const HandFrame& frame = generate_synthetic(default_templates(), 1, 1, 3).samples.front().frame;
  const auto adt = extract_feature_vector(frame, {{}, FeatureMask::parse("A+D+T")});
  const auto adet = extract_feature_vector(frame, {{}, FeatureMask::parse("A+D+E+T")});
  c.expect(adt.size() == 20, "A+D+T has 20 dims, got " + std::to_string(adt.size()));
  c.expect(adet.size() == 25, "A+D+E+T has 25 dims, got " + std::to_string(adet.size()));
  c.expect(descriptor_length({}) == 1764, "default HOG length 1764");
  c.expect(store.hog_length() == 1764, "extracted HOG length 1764");
  const auto fused = store.fused(parse_combo("A+D+T+HOG", store.hog_length()));
  c.expect(fused.cols() == 1784, "fused A+D+T+HOG has 1784 dims, got " + std::to_string(fused.cols()));
  c.note("pairs=" + std::to_string(model.pairs.size()) + ", dims 20/25/" + std::to_string(fused.cols()));
}

void invariance(Check& c) {
  std::mt19937_64 gen(101);
  std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi), shift(-1000.0, 1000.0),
      lam(0.1, 10.0);
  double rigid = 0.0, scaled = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const HandFrame f = testutil::random_frame(gen, 1 + static_cast<std::size_t>(trial) % 5);
    const auto base = extract_tracking_features(f);

    const Mat3 r = axis_angle(testutil::random_unit(gen), ang(gen));
    const Vec3 t{shift(gen), shift(gen), shift(gen)};
    HandFrame g = f;
    g.palm_center = r * f.palm_center + t;
    g.palm_normal = r * f.palm_normal;
    g.hand_direction = r * f.hand_direction;
    for (auto& tip : g.fingertips) tip = r * tip + t;
    rigid = std::max(rigid, max_feature_diff(base, extract_tracking_features(g), true));

    const double l = lam(gen);
    HandFrame s = f;
    for (auto& tip : s.fingertips) tip = f.palm_center + l * (tip - f.palm_center);
    scaled = std::max(scaled, max_feature_diff(base, extract_tracking_features(s), false));
  }
  c.expect(rigid < 1e-9, "rigid max diff " + fmt(rigid));
  c.expect(scaled < 1e-9, "scaling max diff " + fmt(scaled));
  c.note("max diff rigid " + fmt(rigid) + ", scaling " + fmt(scaled));
}

void pca_oracle(Check& c) {
  std::mt19937_64 gen(202);
  std::uniform_int_distribution<std::size_t> size(2, 60);
  std::uniform_real_distribution<double> frac(0.05, 1.0);
  double worst_value = 0.0, worst_proj = 0.0;
  std::size_t selections = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = size(gen), d = std::max<std::size_t>(1, size(gen) - 1);
    Matrix x = testutil::random_matrix(gen, n, d);
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t i = 0; i < n; ++i) x(i, j) *= 1.0 + 0.1 * static_cast<double>(j);
    const auto spectrum = pca_spectrum(x);
    const auto ref = oracle::jacobi_eigen(oracle::covariance(testutil::to_dense(x)));
    const std::size_t rank = spectrum.eigenvalues.size();
    const std::string where = "trial " + std::to_string(trial) + " n=" + std::to_string(n) + " d=" + std::to_string(d);

    c.expect(rank <= std::min(n - 1, d), where + ": rank");
    for (std::size_t k = 0; k < d; ++k) {
      const double mine = k < rank ? spectrum.eigenvalues[k] : 0.0;
      const double err = std::abs(mine - ref.values[k]);
      worst_value = std::max(worst_value, err);
      c.expect(err <= 1e-8, where + ": eigenvalue " + std::to_string(k) + " off by " + fmt(err));
    }
    for (std::size_t k = 1; k <= rank; ++k) {
      const double gap = k < d ? ref.values[k - 1] - ref.values[k] : 1.0;
      if (gap < 1e-6) continue;  // subspace not determined
      oracle::Dense mine_basis, ref_basis(ref.vectors.begin(), ref.vectors.begin() + static_cast<std::ptrdiff_t>(k));
      for (std::size_t r = 0; r < k; ++r)
        mine_basis.emplace_back(spectrum.directions.row(r).begin(), spectrum.directions.row(r).end());
      const auto p = oracle::projector(mine_basis, d), q = oracle::projector(ref_basis, d);
      double err = 0.0;
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) err = std::max(err, std::abs(p[i][j] - q[i][j]));
      worst_proj = std::max(worst_proj, err);
      c.expect(err <= 1e-8, where + ": projector k=" + std::to_string(k) + " off by " + fmt(err));
    }

    double total = 0.0;
    for (double v : ref.values) total += std::max(v, 0.0);
    for (int s = 0; s < 5; ++s) {
      const double f = frac(gen);
      const std::size_t k = truncate(spectrum, {RetentionMode::Variance, f}).output_dimension();
      double before = 0.0;
      for (std::size_t i = 0; i + 1 < k; ++i) before += ref.values[i];
      const double reached = before + ref.values[k - 1];
      c.expect(reached >= f * total - 1e-9, where + ": k=" + std::to_string(k) + " misses " + fmt(f));
      c.expect(before < f * total + 1e-9, where + ": k=" + std::to_string(k) + " not minimal for " + fmt(f));
      ++selections;
    }
  }
  c.note("eigenvalue err " + fmt(worst_value) + ", projector err " + fmt(worst_proj) + ", " +
         std::to_string(selections) + " selections");
}

void svm_oracle(Check& c) {
  std::mt19937_64 gen(303);
  std::uniform_int_distribution<std::size_t> rows(4, 12), cols(1, 4);
  std::uniform_real_distribution<double> lc(-1.0, 2.0), lg(-1.5, 0.5);
  std::bernoulli_distribution coin(0.5);
  double worst_gap = 0.0, worst_balance = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = rows(gen), d = cols(gen);
    const Matrix x = testutil::random_matrix(gen, n, d);
    std::vector<int> y(n);
    for (auto& l : y) l = coin(gen) ? 1 : -1;
    y[0] = 1;
    y[1] = -1;
    const double cc = std::pow(10.0, lc(gen)), gamma = std::pow(10.0, lg(gen));

    const auto sol = solve_smo(DataKernel{&x, gamma}, y, cc);
    const auto rows_dense = testutil::to_dense(x);
    oracle::Dense k(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) k[i][j] = oracle::rbf(rows_dense[i], rows_dense[j], gamma);
    const auto ref = oracle::projected_gradient_dual(k, y, cc);

    const std::string where = "trial " + std::to_string(trial);
    const double gap = std::abs(sol.dual_objective - ref.objective);
    worst_gap = std::max(worst_gap, gap);
    c.expect(gap <= 1e-4, where + ": dual gap " + fmt(gap));
    double balance = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      c.expect(sol.alpha[i] >= 0.0 && sol.alpha[i] <= cc, where + ": alpha out of box");
      balance += sol.alpha[i] * y[i];
    }
    worst_balance = std::max(worst_balance, std::abs(balance));
    c.expect(std::abs(balance) <= 1e-8, where + ": |sum alpha y| = " + fmt(std::abs(balance)));
  }
  c.note("max objective gap " + fmt(worst_gap) + ", max |sum alpha y| " + fmt(worst_balance));
}

void kernel_identity(Check& c) {
  const auto& store = small_store();
  std::mt19937_64 gen(404);
  std::uniform_int_distribution<std::size_t> pick(0, store.size() - 1);
  std::uniform_real_distribution<double> kd(0.0, 9.0), lg(-4.0, 0.0);
  const Matrix tracking = store.fused(parse_combo("A+D+T", 0));
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const double k = trial < 10 ? static_cast<double>(trial) : kd(gen);
    const double gamma = std::pow(10.0, lg(gen));
    const Matrix fused = store.fused(parse_combo("A+D+T+HOG", store.hog_length(), k));
    const std::size_t i = pick(gen), j = pick(gen);
    const Matrix pair = fused.select_rows(std::vector<std::size_t>{i, j});
    const double mine = rbf_from_squared_distance(DistanceTable::pairwise(pair)(0, 1), gamma);

    long double dt = 0.0L, dh = 0.0L;
    for (std::size_t a = 0; a < tracking.cols(); ++a) {
      const long double v = tracking(i, a) - tracking(j, a);
      dt += v * v;
    }
    for (std::size_t a = 0; a < store.hog_length(); ++a) {
      const long double v = store.hog(i, a) - store.hog(j, a);
      dh += v * v;
    }
    const double ref = static_cast<double>(std::exp(-static_cast<long double>(gamma) * (dt + k * k * dh)));
    worst = std::max(worst, std::abs(mine - ref));
    c.expect(std::abs(mine - ref) <= 1e-12, "pair " + std::to_string(trial) + " off by " + fmt(std::abs(mine - ref)));
  }
  c.note("max |kernel - reference| " + fmt(worst));
}

ExperimentConfig small_protocol(std::size_t repetitions) {
  ExperimentConfig cfg;
  cfg.grid.c_grid = {1.0, 100.0};
  cfg.grid.gamma_grid = {0.01, 0.1, 1.0};
  cfg.grid.folds = 3;
  cfg.repetitions = repetitions;
  cfg.master_seed = 11;
  return cfg;
}

void isometry(Check& c) {
  const auto& store = small_store();
  double worst = 0.0;
  for (const char* combo : {"A+D+T", "A+D+T+HOG"}) {
    const Matrix x = store.fused(parse_combo(combo, store.hog_length()));
    const Matrix z = fit_pca(x, 1.0).transform(x);
    const auto dx = DistanceTable::pairwise(x), dz = DistanceTable::pairwise(z);
    for (double gamma : {1e-3, 1e-2, 1e-1, 1.0})
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.rows(); ++j)
          worst = std::max(worst, std::abs(rbf_from_squared_distance(dx(i, j), gamma) -
                                           rbf_from_squared_distance(dz(i, j), gamma)));
  }
  c.expect(worst <= 1e-10, "kernel matrices differ by " + fmt(worst));

  const ExperimentConfig cfg = small_protocol(3);
  const std::optional<double> rets[] = {std::nullopt, 1.0};
  std::size_t compared = 0;
  for (const char* combo : {"A+D+T", "A+D+T+HOG"}) {
    const auto cells = run_fusion_cells(store, parse_combo(combo, store.hog_length()), rets, cfg);
    c.expect(cells[0].predictions.size() == cells[1].predictions.size(), std::string(combo) + ": prediction count");
    for (std::size_t i = 0; i < cells[0].predictions.size(); ++i, ++compared)
      c.expect(cells[0].predictions[i].predicted == cells[1].predictions[i].predicted,
               std::string(combo) + ": retention 1.0 changed prediction " + std::to_string(i));
  }

  const std::optional<double> none[] = {std::nullopt};
  const auto tracking = run_fusion_cells(store, parse_combo("A+D+T", 0), none, cfg);
  const auto k0 = run_fusion_cells(store, parse_combo("A+D+T+HOG", store.hog_length(), 0.0), none, cfg);
  c.expect(k0[0].predictions.size() == tracking[0].predictions.size(), "K=0 prediction count");
  for (std::size_t i = 0; i < k0[0].predictions.size(); ++i) {
    c.expect(k0[0].predictions[i].predicted == tracking[0].predictions[i].predicted,
             "K=0 prediction " + std::to_string(i) + " differs");
    c.expect(k0[0].predictions[i].votes == tracking[0].predictions[i].votes, "K=0 votes " + std::to_string(i));
  }
  c.expect(k0[0].accuracies == tracking[0].accuracies, "K=0 accuracies differ");
  c.note("max kernel diff " + fmt(worst) + ", " + std::to_string(compared) + " retention predictions, " +
         std::to_string(k0[0].predictions.size()) + " K=0 predictions");
}

void end_to_end(Check& c) {
  ExperimentConfig cfg;
  cfg.repetitions = 10;
  cfg.combos = {"A+D+T", "HOG", "A+D+T+HOG"};
  const FeatureStore store = configured_features(cfg, true);
  c.expect(store.size() == 2600, "2600 samples");
  const auto report = run_experiment(store, cfg, [](const std::string& line) {
    std::fprintf(stderr, "  %s\n", line.c_str());
  });
  const double adt = report.cells[0].mean, hog = report.cells[1].mean, fused = report.cells[2].mean;
  c.expect(adt >= 0.85, "A+D+T " + fmt(adt, "%.4f") + " < 0.85");
  c.expect(hog >= adt - 0.05, "HOG " + fmt(hog, "%.4f") + " < A+D+T - 0.05");
  c.expect(fused >= std::max(adt, hog) - 0.01, "fused " + fmt(fused, "%.4f") + " < max - 0.01");
  c.expect(fused >= 0.95, "fused " + fmt(fused, "%.4f") + " < 0.95");
  for (const auto& cell : report.cells) {
    c.expect(cell.confusion.total() == 10 * 520u, cell.combo + ": 520 test predictions per repetition");
    for (std::size_t r = 0; r < cell.confusion.size(); ++r)
      c.expect(cell.confusion.row_sum(r) == 10 * 52u, cell.combo + ": 52 test samples per class and repetition");
  }
  c.note("A+D+T " + fmt(adt, "%.4f") + ", HOG " + fmt(hog, "%.4f") + ", A+D+T+HOG K=1 " + fmt(fused, "%.4f"));

  const std::vector<std::string> combos{"A+D+E", "A+D+E+T"};
  const auto rows = ablation_table(store, cfg, combos);
  std::printf("       ablation band: A+D+E %.4f, A+D+E+T %.4f (%s)\n", rows[0].mean, rows[1].mean,
              rows[1].mean >= rows[0].mean - 0.02 ? "within 2 points" : "outside 2 points");
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void protocol_shape(Check& c) {
  ExperimentConfig cfg = small_protocol(50);
  cfg.synthetic.subjects = 3;
  cfg.synthetic.repetitions = 4;
  cfg.synthetic.image_size = 32;
  cfg.synthetic.stereo = false;
  const FeatureStore store = configured_features(cfg, false);
  const auto a = run_experiment(store, cfg);
  const auto& cell = a.cells.at(0);
  c.expect(cell.accuracies.size() == 50, "50 accuracies");

  std::istringstream csv(report_csv(a));
  std::string line;
  std::getline(csv, line);
  std::size_t rep_rows = 0, mean_rows = 0;
  long double sum = 0.0L;
  double mean_value = -1.0;
  while (std::getline(csv, line)) {
    const auto last = line.rfind(',');
    const auto prev = line.rfind(',', last - 1);
    const std::string rep = line.substr(prev + 1, last - prev - 1);
    const double v = std::stod(line.substr(last + 1));
    if (rep == "mean") {
      ++mean_rows;
      mean_value = v;
    } else {
      c.expect(rep == std::to_string(rep_rows), "row order");
      ++rep_rows;
      sum += v;
    }
  }
  const double mean = static_cast<double>(sum / 50.0L);
  c.expect(rep_rows == 50 && mean_rows == 1, "50 repetition rows + 1 aggregate");
  c.expect(std::abs(mean_value - mean) <= 1e-12, "aggregate " + fmt(mean_value, "%.17g") + " vs mean " + fmt(mean, "%.17g"));

  setenv("GESTURELAB_THREADS", "4", 1);
  const auto b = run_experiment(store, cfg);
  unsetenv("GESTURELAB_THREADS");
  const auto da = testutil::temp_dir("acceptance_a"), db = testutil::temp_dir("acceptance_b");
  write_report(da, a, store.ids);
  write_report(db, b, store.ids);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(da)) {
    c.expect(slurp(e.path()) == slurp(db / e.path().filename()), e.path().filename().string() + " differs");
    ++files;
  }
  c.expect(files == 3, "report.csv, confusion and predictions files");
  c.note(std::to_string(rep_rows) + " rows, |aggregate - mean| " + fmt(std::abs(mean_value - mean)) + ", " +
         std::to_string(files) + " files byte-identical");
}

void image_goldens(Check& c) {
  std::mt19937_64 gen(909);
  std::uniform_int_distribution<int> px(0, 255);
  const auto random_image = [&](std::size_t w, std::size_t h) {
    GrayImage img(w, h);
    for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(px(gen));
    return img;
  };
  for (auto [w, h, g] : {std::tuple{240, 240, 41}, {64, 48, 2}, {17, 31, 9}, {1, 1, 1}}) {
    const GrayImage img = random_image(w, h);
    c.expect(undistort(img, UndistortionMap::identity(g, g), {img.width(), img.height()}) == img,
             "identity undistort " + std::to_string(w) + "x" + std::to_string(h));
  }

  for (int v : {0, 1, 128, 255}) {
    const auto hog = compute_hog(GrayImage(64, 64, static_cast<std::uint8_t>(v)));
    c.expect(std::all_of(hog.values.begin(), hog.values.end(), [](double x) { return x == 0.0; }),
             "constant " + std::to_string(v) + " HOG nonzero");
  }

  struct Case {
    Size size;
    HogParams p;
  };
  const Case cases[] = {{{64, 64}, {8, 2, 1, 9, 0.2}},
                        {{64, 128}, {8, 2, 1, 9, 0.2}},
                        {{48, 32}, {4, 3, 2, 12, 0.2}},
                        {{40, 40}, {5, 1, 1, 6, 0.2}},
                        {{96, 64}, {16, 2, 1, 18, 0.3}}};
  for (const auto& k : cases) {
    const std::size_t cx = k.size.width / k.p.cell_size, cy = k.size.height / k.p.cell_size;
    const std::size_t bx = (cx - k.p.block_cells) / k.p.block_stride + 1, by = (cy - k.p.block_cells) / k.p.block_stride + 1;
    const std::size_t expected = bx * by * k.p.block_cells * k.p.block_cells * k.p.bins;
    const auto got = compute_hog(random_image(k.size.width, k.size.height), k.p).values.size();
    c.expect(got == expected, "HOG length " + std::to_string(got) + " != " + std::to_string(expected));
  }

  std::uniform_real_distribution<double> frac(0.01, 0.99);
  for (int trial = 0; trial < 50; ++trial) {
    int lo = px(gen), hi = px(gen);
    while (hi == lo) hi = px(gen);
    if (lo > hi) std::swap(lo, hi);
    GrayImage img(20, 15, static_cast<std::uint8_t>(lo));
    std::bernoulli_distribution on(frac(gen));
    for (auto& p : img.pixels())
      if (on(gen)) p = static_cast<std::uint8_t>(hi);
    img.pixels()[0] = static_cast<std::uint8_t>(lo);
    img.pixels()[1] = static_cast<std::uint8_t>(hi);
    const auto b = binarize(img);
    for (std::size_t i = 0; i < img.pixels().size(); ++i)
      c.expect(b.pixels()[i] == (img.pixels()[i] == hi ? 255 : 0),
               "Otsu case " + std::to_string(trial) + " (" + std::to_string(lo) + "/" + std::to_string(hi) + ")");
  }
  c.note("4 identity maps, 4 constant images, 5 length formulas, 50 Otsu cases");
}

}  // namespace

int main() {
  run("1", "structural", 60, structural);
  run("2", "geometric invariance", 10, invariance);
  run("3", "PCA vs Jacobi", 30, pca_oracle);
  run("4", "SMO vs projected gradient", 120, svm_oracle);
  run("5", "fused kernel identity", 60, kernel_identity);
  run("6", "retention-1.0 and K=0 isometry", 120, isometry);
  run("7", "synthetic end-to-end fusion ordering", 1200, end_to_end);
  run("8", "protocol shape and determinism", 300, protocol_shape);
  run("9", "image pipeline goldens", 10, image_goldens);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures ? 1 : 0;
}
