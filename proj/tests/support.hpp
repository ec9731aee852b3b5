#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gesturelab/gesturelab.hpp"
#include "oracles.hpp"

namespace testutil {

using namespace gesturelab;

inline Vec3 random_unit(std::mt19937_64& gen) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const Vec3 v{n(gen), n(gen), n(gen)};
    if (norm(v) > 1e-3) return normalized(v);
  }
}

/// A hand-like frame: fingertips spread in front of the palm, some lifted off the plane.
inline HandFrame random_frame(std::mt19937_64& gen, std::size_t tips = 5) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  HandFrame f;
  f.palm_center = {200.0 * u(gen), 200.0 + 100.0 * u(gen), 200.0 * u(gen)};
  f.palm_normal = random_unit(gen);
  Vec3 h = random_unit(gen);
  h = normalized(h - dot(h, f.palm_normal) * f.palm_normal);
  f.hand_direction = h;
  const Vec3 side = cross(h, f.palm_normal);
  for (std::size_t k = 0; k < tips; ++k) {
    const double angle = -1.3 + 2.6 * (static_cast<double>(k) + 0.5 + 0.3 * u(gen)) / static_cast<double>(tips);
    const double reach = 60.0 + 30.0 * u(gen);
    f.fingertips.push_back(f.palm_center + reach * std::cos(angle) * h + reach * std::sin(angle) * side +
                           25.0 * u(gen) * f.palm_normal);
  }
  if (tips > 0) f.middle_index = tips / 2;
  return f;
}

inline Matrix random_matrix(std::mt19937_64& gen, std::size_t n, std::size_t d, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) m(i, j) = dist(gen);
  return m;
}

inline oracle::Dense to_dense(const Matrix& m) {
  oracle::Dense out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i].assign(m.row(i).begin(), m.row(i).end());
  return out;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("gesturelab_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Isotropic Gaussian blobs around well-separated centers.
inline std::pair<Matrix, std::vector<int>> blobs(std::mt19937_64& gen, std::size_t classes, std::size_t per_class,
                                                 std::size_t d, double spread = 0.3) {
  std::normal_distribution<double> n(0.0, spread);
  Matrix x;
  std::vector<int> y;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      std::vector<double> row(d);
      for (std::size_t j = 0; j < d; ++j) row[j] = (j == c % d ? 4.0 * static_cast<double>(1 + c / d) : 0.0) + n(gen);
      x.append_row(row);
      y.push_back(static_cast<int>(c));
    }
  }
  return {x, y};
}

}  // namespace testutil
