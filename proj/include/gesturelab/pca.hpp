#pragma once

// Principal component analysis with variance-retention component selection.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "gesturelab/error.hpp"
#include "gesturelab/linalg.hpp"

namespace gesturelab {

enum class RetentionMode {
  Variance,   // smallest k whose cumulative eigenvalue share reaches the fraction
  Dimension,  // k = ceil(fraction * d), for sensitivity checks
};

struct PcaRetention {
  RetentionMode mode = RetentionMode::Variance;
  double fraction = 0.8;
};

struct PcaModel {
  std::vector<double> mean;        // d
  Matrix components;               // k x d, orthonormal rows
  std::vector<double> variances;   // k, non-increasing
  double retained_fraction = 1.0;  // requested retention

  std::size_t input_dimension() const { return mean.size(); }
  std::size_t output_dimension() const { return components.rows(); }

  /// components * (x - mean)
  std::vector<double> transform(std::span<const double> x) const {
    if (x.size() != mean.size())
      throw Error(ErrorCode::DimensionMismatch, "PCA input has " + std::to_string(x.size()) +
                                                    " values, model expects " + std::to_string(mean.size()));
    std::vector<double> centered(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) centered[j] = x[j] - mean[j];
    std::vector<double> out(components.rows(), 0.0);
    for (std::size_t i = 0; i < components.rows(); ++i) {
      const auto row = components.row(i);
      out[i] = std::inner_product(row.begin(), row.end(), centered.begin(), 0.0);
    }
    return out;
  }

  Matrix transform(const Matrix& data) const {
    Matrix out(data.rows(), output_dimension());
    for (std::size_t r = 0; r < data.rows(); ++r) {
      const auto t = transform(data.row(r));
      std::copy(t.begin(), t.end(), out.row(r).begin());
    }
    return out;
  }

  /// mean + components^T * z
  std::vector<double> inverse_transform(std::span<const double> z) const {
    if (z.size() != components.rows())
      throw Error(ErrorCode::DimensionMismatch, "PCA code has " + std::to_string(z.size()) +
                                                    " values, model has " +
                                                    std::to_string(components.rows()) + " components");
    std::vector<double> out = mean;
    for (std::size_t i = 0; i < components.rows(); ++i) {
      const auto row = components.row(i);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += z[i] * row[j];
    }
    return out;
  }

  friend bool operator==(const PcaModel&, const PcaModel&) = default;
};

/// The full eigen-spectrum of the sample covariance, before truncation. Fitting
/// once and truncating per retention level avoids repeated decompositions.
struct PcaSpectrum {
  std::vector<double> mean;
  Matrix directions;                // rank x d, eigenvalue-descending
  std::vector<double> eigenvalues;  // rank, positive, non-increasing
};

namespace detail {

/// Flips the sign so the largest-magnitude entry (first on ties) is positive.
inline void canonical_sign(std::span<double> v) {
  std::size_t arg = 0;
  for (std::size_t j = 1; j < v.size(); ++j)
    if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
  if (v[arg] < 0.0)
    for (double& x : v) x = -x;
}

}  // namespace detail

/// Eigendecomposition of the covariance (divisor n-1). Uses the d x d covariance
/// when d <= n and the n x n Gram matrix otherwise. Eigenvalues at or below
/// max(n,d) * 1e-14 * lambda_max are treated as zero and dropped.
inline PcaSpectrum pca_spectrum(const Matrix& data) {
  const std::size_t n = data.rows(), d = data.cols();
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "PCA needs at least 2 rows");
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMajor> x(data.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));

  PcaSpectrum s;
  const Eigen::VectorXd mean = x.colwise().mean().transpose();
  s.mean.assign(mean.data(), mean.data() + d);
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  const double denom = static_cast<double>(n - 1);

  const bool gram = d > n;
  const Eigen::MatrixXd scatter =
      gram ? Eigen::MatrixXd(centered * centered.transpose() / denom)
           : Eigen::MatrixXd(centered.transpose() * centered / denom);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(scatter);
  if (solver.info() != Eigen::Success) throw Error(ErrorCode::DegenerateData, "eigendecomposition failed");
  const Eigen::VectorXd& evals = solver.eigenvalues();
  const Eigen::MatrixXd& evecs = solver.eigenvectors();
  const auto m = static_cast<std::size_t>(evals.size());

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return evals[static_cast<Eigen::Index>(a)] > evals[static_cast<Eigen::Index>(b)];
  });

  const double lambda_max = evals[static_cast<Eigen::Index>(order.front())];
  if (!(lambda_max > 0.0)) throw Error(ErrorCode::DegenerateData, "data has zero total variance");
  const double cutoff = static_cast<double>(std::max(n, d)) * 1e-14 * lambda_max;

  for (std::size_t idx : order) {
    const double lambda = evals[static_cast<Eigen::Index>(idx)];
    if (lambda <= cutoff) break;
    Eigen::VectorXd v;
    if (gram) {
      v = centered.transpose() * evecs.col(static_cast<Eigen::Index>(idx));
      for (std::size_t r = 0; r < s.directions.rows(); ++r) {
        const Eigen::Map<const Eigen::VectorXd> prev(s.directions.row(r).data(), static_cast<Eigen::Index>(d));
        v -= prev.dot(v) * prev;
      }
      v.normalize();
    } else {
      v = evecs.col(static_cast<Eigen::Index>(idx));
    }
    std::vector<double> dir(v.data(), v.data() + d);
    detail::canonical_sign(dir);
    s.directions.append_row(dir);
    s.eigenvalues.push_back(lambda);
  }
  return s;
}

/// Number of leading components meeting the retention rule (at least 1, at most rank).
inline std::size_t select_components(std::span<const double> eigenvalues, std::size_t dimension,
                                     const PcaRetention& retention) {
  if (!(retention.fraction > 0.0 && retention.fraction <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "retained fraction must be in (0, 1]");
  if (eigenvalues.empty()) throw Error(ErrorCode::DegenerateData, "empty spectrum");
  if (retention.mode == RetentionMode::Dimension) {
    const auto k = static_cast<std::size_t>(std::ceil(retention.fraction * static_cast<double>(dimension) - 1e-9));
    return std::clamp<std::size_t>(k, 1, eigenvalues.size());
  }
  const double total = std::accumulate(eigenvalues.begin(), eigenvalues.end(), 0.0);
  const double target = retention.fraction * total;
  double cum = 0.0;
  for (std::size_t k = 0; k < eigenvalues.size(); ++k) {
    cum += eigenvalues[k];
    if (cum >= target) return k + 1;
  }
  return eigenvalues.size();
}

inline PcaModel truncate(const PcaSpectrum& s, const PcaRetention& retention) {
  const std::size_t k = select_components(s.eigenvalues, s.mean.size(), retention);
  PcaModel m;
  m.mean = s.mean;
  m.retained_fraction = retention.fraction;
  m.variances.assign(s.eigenvalues.begin(), s.eigenvalues.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<std::size_t> rows(k);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  m.components = s.directions.select_rows(rows);
  return m;
}

inline PcaModel fit_pca(const Matrix& data, const PcaRetention& retention) {
  return truncate(pca_spectrum(data), retention);
}

inline PcaModel fit_pca(const Matrix& data, double retained_fraction) {
  return fit_pca(data, PcaRetention{RetentionMode::Variance, retained_fraction});
}

// {"version":1, "mean":[...], "components":[[...]], "variances":[...], "retained_fraction":r}
inline void to_json(nlohmann::json& j, const PcaModel& m) {
  auto rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.components.rows(); ++r) {
    const auto row = m.components.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  j = nlohmann::json{{"version", 1},
                     {"mean", m.mean},
                     {"components", std::move(rows)},
                     {"variances", m.variances},
                     {"retained_fraction", m.retained_fraction}};
}

inline void from_json(const nlohmann::json& j, PcaModel& m) {
  if (j.at("version").get<int>() != 1)
    throw Error(ErrorCode::SchemaVersionMismatch, "PCA model version " + j.at("version").dump());
  m.mean = j.at("mean").get<std::vector<double>>();
  m.components = Matrix::from_rows(j.at("components").get<std::vector<std::vector<double>>>());
  m.variances = j.at("variances").get<std::vector<double>>();
  m.retained_fraction = j.at("retained_fraction").get<double>();
  if (m.components.rows() != m.variances.size() || (m.components.rows() > 0 && m.components.cols() != m.mean.size()))
    throw Error(ErrorCode::ParseError, "PCA model dimensions are inconsistent");
}

}  // namespace gesturelab
