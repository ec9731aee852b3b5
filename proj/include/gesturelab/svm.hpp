#pragma once

// Soft-margin RBF SVM trained with SMO (maximal-violating-pair working set).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <list>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "gesturelab/error.hpp"
#include "gesturelab/linalg.hpp"
#include "gesturelab/parallel.hpp"

namespace gesturelab {

struct KernelParams {
  double c = 1.0;      // soft-margin penalty
  double gamma = 1.0;  // RBF width

  void validate() const {
    if (!(c > 0.0) || !(gamma > 0.0))
      throw Error(ErrorCode::InvalidArgument, "kernel parameters C and gamma must be > 0");
  }
  friend bool operator==(const KernelParams&, const KernelParams&) = default;
};

inline double rbf_from_squared_distance(double squared_distance, double gamma) {
  return std::exp(-gamma * squared_distance);
}

/// exp(-gamma * |x - y|^2)
inline double rbf_kernel(std::span<const double> x, std::span<const double> y, double gamma) {
  if (!(gamma > 0.0)) throw Error(ErrorCode::InvalidArgument, "gamma must be > 0");
  return rbf_from_squared_distance(squared_distance(x, y), gamma);
}

/// Table of squared distances between the rows of two matrices (or one matrix with itself).
class DistanceTable {
 public:
  DistanceTable() = default;

  static DistanceTable pairwise(const Matrix& a) {
    DistanceTable t(a.rows(), a.rows());
    parallel_for(a.rows(), [&](std::size_t i) {
      for (std::size_t j = i + 1; j < a.rows(); ++j) t.at(i, j) = squared_distance(a.row(i), a.row(j));
    });
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < i; ++j) t.at(i, j) = t.at(j, i);
    return t;
  }

  /// Rows index `a`, columns index `b`.
  static DistanceTable cross(const Matrix& a, const Matrix& b) {
    DistanceTable t(a.rows(), b.rows());
    parallel_for(a.rows(), [&](std::size_t i) {
      for (std::size_t j = 0; j < b.rows(); ++j) t.at(i, j) = squared_distance(a.row(i), b.row(j));
    });
    return t;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

 private:
  DistanceTable(std::size_t r, std::size_t c) : rows_(r), cols_(c), data_(r * c, 0.0) {}
  double& at(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }

  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

/// Kernel over the rows of a data matrix.
struct DataKernel {
  const Matrix* data;
  double gamma;
  std::size_t size() const { return data->rows(); }
  double operator()(std::size_t i, std::size_t j) const {
    return rbf_from_squared_distance(squared_distance(data->row(i), data->row(j)), gamma);
  }
};

/// Kernel over a subset of rows of a precomputed pairwise distance table.
struct SubsetKernel {
  const DistanceTable* table;
  std::span<const std::size_t> rows;
  double gamma;
  std::size_t size() const { return rows.size(); }
  double operator()(std::size_t i, std::size_t j) const {
    return rbf_from_squared_distance((*table)(rows[i], rows[j]), gamma);
  }
};

struct SmoOptions {
  double tol = 1e-3;
  std::size_t max_iterations = 1'000'000;  // pair updates
  std::size_t dense_cache_limit = 4096;    // full kernel matrix up to this many rows
  std::size_t row_cache_rows = 512;        // LRU capacity above the limit
};

/// Kernel rows on demand: a dense matrix for small problems, an LRU row cache
/// otherwise. Both return identical values.
template <class Kernel>
class KernelCache {
 public:
  KernelCache(const Kernel& kernel, const SmoOptions& opt)
      : kernel_(kernel), n_(kernel.size()), dense_(n_ <= opt.dense_cache_limit), capacity_(opt.row_cache_rows) {
    diagonal_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) diagonal_[i] = kernel_(i, i);
    if (dense_) {
      full_.resize(n_ * n_);
      for (std::size_t i = 0; i < n_; ++i) {
        full_[i * n_ + i] = diagonal_[i];
        for (std::size_t j = i + 1; j < n_; ++j) full_[i * n_ + j] = full_[j * n_ + i] = kernel_(i, j);
      }
    }
  }

  bool dense() const { return dense_; }
  double diagonal(std::size_t i) const { return diagonal_[i]; }

  std::span<const double> row(std::size_t i) {
    if (dense_) return {full_.data() + i * n_, n_};
    if (auto it = index_.find(i); it != index_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second);
      return it->second->values;
    }
    if (lru_.size() >= std::max<std::size_t>(capacity_, 2)) {
      index_.erase(lru_.back().row);
      lru_.pop_back();
    }
    Entry e{i, std::vector<double>(n_)};
    for (std::size_t j = 0; j < n_; ++j) e.values[j] = kernel_(i, j);
    lru_.push_front(std::move(e));
    index_[i] = lru_.begin();
    return lru_.front().values;
  }

 private:
  struct Entry {
    std::size_t row;
    std::vector<double> values;
  };

  const Kernel& kernel_;
  std::size_t n_;
  bool dense_;
  std::size_t capacity_;
  std::vector<double> diagonal_;
  std::vector<double> full_;
  std::list<Entry> lru_;
  std::unordered_map<std::size_t, typename std::list<Entry>::iterator> index_;
};

struct SmoSolution {
  std::vector<double> alpha;
  double bias = 0.0;
  double dual_objective = 0.0;  // sum(alpha) - 1/2 alpha' Q alpha, maximized
  std::size_t iterations = 0;
  bool converged = false;
};

/// Solves  max sum(a) - 1/2 a'Qa  s.t. 0 <= a <= C, y'a = 0,  Q_ij = y_i y_j K_ij.
///
/// Each step picks the maximal violating pair (i in I_up maximizing -y G,
/// j in I_low minimizing it) and stops once the gap m - M falls below tol.
template <class Kernel>
SmoSolution solve_smo(const Kernel& kernel, std::span<const int> y, double c, const SmoOptions& opt = {}) {
  const std::size_t n = kernel.size();
  if (y.size() != n) throw Error(ErrorCode::DimensionMismatch, "label count does not match kernel size");
  KernelCache<Kernel> cache(kernel, opt);

  SmoSolution s;
  s.alpha.assign(n, 0.0);
  std::vector<double> grad(n, -1.0);  // G = Q a - e
  auto& a = s.alpha;
  const auto in_up = [&](std::size_t t) { return y[t] > 0 ? a[t] < c : a[t] > 0.0; };
  const auto in_low = [&](std::size_t t) { return y[t] > 0 ? a[t] > 0.0 : a[t] < c; };
  constexpr double tau = 1e-12;
  std::vector<double> row_i;

  for (;;) {
    double m = -std::numeric_limits<double>::infinity();
    double big_m = std::numeric_limits<double>::infinity();
    std::size_t i = n, j = n;
    for (std::size_t t = 0; t < n; ++t) {
      const double v = -y[t] * grad[t];
      if (in_up(t) && v > m) {
        m = v;
        i = t;
      }
      if (in_low(t) && v < big_m) {
        big_m = v;
        j = t;
      }
    }
    if (i == n || j == n || m - big_m < opt.tol) {
      s.converged = true;
      break;
    }
    if (s.iterations >= opt.max_iterations) break;
    ++s.iterations;

    std::span<const double> ki_copy = cache.row(i);
    if (!cache.dense()) {
      // fetching row j may evict row i from the LRU
      row_i.assign(ki_copy.begin(), ki_copy.end());
      ki_copy = row_i;
    }
    const auto kj = cache.row(j);
    const double kii = cache.diagonal(i), kjj = cache.diagonal(j), kij = ki_copy[j];
    const double ai = a[i], aj = a[j];

    if (y[i] != y[j]) {
      double quad = kii + kjj + 2.0 * (-kij);
      quad = quad > 0.0 ? quad : tau;
      // Q_ij = -K_ij here; both multipliers move by the same delta.
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = ai - aj;
      a[i] += delta;
      a[j] += delta;
      if (diff > 0.0) {
        if (a[j] < 0.0) {
          a[j] = 0.0;
          a[i] = diff;
        }
      } else if (a[i] < 0.0) {
        a[i] = 0.0;
        a[j] = -diff;
      }
      if (diff > 0.0) {
        if (a[i] > c) {
          a[i] = c;
          a[j] = c - diff;
        }
      } else if (a[j] > c) {
        a[j] = c;
        a[i] = c + diff;
      }
    } else {
      double quad = kii + kjj - 2.0 * kij;
      quad = quad > 0.0 ? quad : tau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = ai + aj;
      a[i] -= delta;
      a[j] += delta;
      if (sum > c) {
        if (a[i] > c) {
          a[i] = c;
          a[j] = sum - c;
        }
      } else if (a[j] < 0.0) {
        a[j] = 0.0;
        a[i] = sum;
      }
      if (sum > c) {
        if (a[j] > c) {
          a[j] = c;
          a[i] = sum - c;
        }
      } else if (a[i] < 0.0) {
        a[i] = 0.0;
        a[j] = sum;
      }
    }

    const double di = a[i] - ai, dj = a[j] - aj;
    for (std::size_t t = 0; t < n; ++t)
      grad[t] += y[t] * (y[i] * ki_copy[t] * di + y[j] * kj[t] * dj);
  }

  // Bias from free multipliers; midpoint of the feasible interval otherwise.
  double sum_free = 0.0, upper = std::numeric_limits<double>::infinity(),
         lower = -std::numeric_limits<double>::infinity();
  std::size_t free_count = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * grad[t];
    if (a[t] >= c) {
      if (y[t] < 0) upper = std::min(upper, yg);
      else lower = std::max(lower, yg);
    } else if (a[t] <= 0.0) {
      if (y[t] > 0) upper = std::min(upper, yg);
      else lower = std::max(lower, yg);
    } else {
      ++free_count;
      sum_free += yg;
    }
  }
  const double rho = free_count > 0 ? sum_free / static_cast<double>(free_count) : (upper + lower) / 2.0;
  s.bias = -rho;

  double obj = 0.0;
  for (std::size_t t = 0; t < n; ++t) obj += a[t] * (grad[t] - 1.0);
  s.dual_objective = -0.5 * obj;
  return s;
}

/// Support vectors with alpha above this are kept.
inline constexpr double kSupportThreshold = 1e-8;

struct BinarySvmModel {
  Matrix support_vectors;                   // may be empty when only indices are kept
  std::vector<std::size_t> support_indices; // rows of the training matrix
  std::vector<double> dual_coefs;           // alpha_i * y_i
  double bias = 0.0;
  KernelParams params;
  bool converged = true;
  std::size_t iterations = 0;

  double decision_value(std::span<const double> x) const {
    if (support_vectors.rows() != dual_coefs.size())
      throw Error(ErrorCode::InvalidArgument, "model has no materialized support vectors");
    if (x.size() != support_vectors.cols())
      throw Error(ErrorCode::DimensionMismatch, "input has " + std::to_string(x.size()) +
                                                    " values, model expects " +
                                                    std::to_string(support_vectors.cols()));
    double sum = 0.0;
    for (std::size_t i = 0; i < dual_coefs.size(); ++i)
      sum += dual_coefs[i] * rbf_from_squared_distance(squared_distance(support_vectors.row(i), x), params.gamma);
    return sum + bias;
  }

  /// Same value as decision_value, from squared distances to each support vector.
  double decision_value_from_distances(std::span<const double> squared_distances) const {
    if (squared_distances.size() != dual_coefs.size())
      throw Error(ErrorCode::DimensionMismatch, "distance count does not match support vector count");
    double sum = 0.0;
    for (std::size_t i = 0; i < dual_coefs.size(); ++i)
      sum += dual_coefs[i] * rbf_from_squared_distance(squared_distances[i], params.gamma);
    return sum + bias;
  }
};

namespace detail {

inline void check_binary_labels(std::span<const int> labels) {
  if (labels.size() < 2) throw Error(ErrorCode::SingleClassData, "need at least two training rows");
  bool pos = false, neg = false;
  for (int l : labels) {
    if (l == 1) pos = true;
    else if (l == -1) neg = true;
    else throw Error(ErrorCode::InvalidArgument, "binary labels must be +1 or -1");
  }
  if (!pos || !neg) throw Error(ErrorCode::SingleClassData, "training data contains only one label");
}

}  // namespace detail

/// Trains on kernel rows 0..n-1, where row t corresponds to training-matrix row
/// `rows[t]`. Support vectors are copied from `data` when `materialize` is set.
template <class Kernel>
BinarySvmModel train_binary_with(const Kernel& kernel, std::span<const int> labels, const KernelParams& params,
                                 const SmoOptions& opt, std::span<const std::size_t> rows,
                                 const Matrix* data = nullptr) {
  params.validate();
  if (!(opt.tol > 0.0)) throw Error(ErrorCode::InvalidArgument, "tol must be > 0");
  detail::check_binary_labels(labels);
  const SmoSolution sol = solve_smo(kernel, labels, params.c, opt);

  BinarySvmModel m;
  m.params = params;
  m.bias = sol.bias;
  m.converged = sol.converged;
  m.iterations = sol.iterations;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (sol.alpha[t] <= kSupportThreshold) continue;
    m.support_indices.push_back(rows[t]);
    m.dual_coefs.push_back(sol.alpha[t] * labels[t]);
    if (data) m.support_vectors.append_row(data->row(rows[t]));
  }
  return m;
}

/// Trains a binary RBF SVM on all rows of `data` with labels in {+1, -1}.
inline BinarySvmModel train_binary(const Matrix& data, std::span<const int> labels, const KernelParams& params,
                                   const SmoOptions& opt = {}) {
  if (labels.size() != data.rows())
    throw Error(ErrorCode::DimensionMismatch, "label count does not match row count");
  std::vector<std::size_t> rows(data.rows());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return train_binary_with(DataKernel{&data, params.gamma}, labels, params, opt, rows, &data);
}

inline BinarySvmModel train_binary(const Matrix& data, std::span<const int> labels, const KernelParams& params,
                                   double tol, std::size_t max_iterations) {
  SmoOptions opt;
  opt.tol = tol;
  opt.max_iterations = max_iterations;
  return train_binary(data, labels, params, opt);
}

inline void to_json(nlohmann::json& j, const KernelParams& p) { j = nlohmann::json{{"c", p.c}, {"gamma", p.gamma}}; }

inline void from_json(const nlohmann::json& j, KernelParams& p) {
  p.c = j.at("c").get<double>();
  p.gamma = j.at("gamma").get<double>();
}

inline void to_json(nlohmann::json& j, const BinarySvmModel& m) {
  auto svs = nlohmann::json::array();
  for (std::size_t r = 0; r < m.support_vectors.rows(); ++r) {
    const auto row = m.support_vectors.row(r);
    svs.push_back(std::vector<double>(row.begin(), row.end()));
  }
  j = nlohmann::json{{"support_vectors", std::move(svs)}, {"dual_coefs", m.dual_coefs},
                     {"bias", m.bias},                    {"params", m.params},
                     {"converged", m.converged},          {"iterations", m.iterations}};
}

inline void from_json(const nlohmann::json& j, BinarySvmModel& m) {
  m.support_vectors = Matrix::from_rows(j.at("support_vectors").get<std::vector<std::vector<double>>>());
  m.dual_coefs = j.at("dual_coefs").get<std::vector<double>>();
  m.bias = j.at("bias").get<double>();
  m.params = j.at("params").get<KernelParams>();
  m.converged = j.value("converged", true);
  m.iterations = j.value("iterations", std::size_t{0});
  m.support_indices.clear();
  if (m.support_vectors.rows() != m.dual_coefs.size())
    throw Error(ErrorCode::ParseError, "support vector and coefficient counts differ");
}

}  // namespace gesturelab
