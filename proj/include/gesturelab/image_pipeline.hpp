#pragma once

// Sensor-image stage: rectification through a calibration map, binarization,
// foreground crop, resampling, and HOG descriptors.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gesturelab/error.hpp"
#include "gesturelab/image.hpp"

namespace gesturelab {

struct Size {
  std::size_t width = 0;
  std::size_t height = 0;
  friend constexpr bool operator==(Size, Size) = default;
};

namespace detail {

inline std::uint8_t round_to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

/// Bilinear sample at continuous pixel coordinates, clamped to the image.
inline double sample_bilinear(const GrayImage& img, double px, double py) {
  const double max_x = static_cast<double>(img.width() - 1);
  const double max_y = static_cast<double>(img.height() - 1);
  px = std::clamp(px, 0.0, max_x);
  py = std::clamp(py, 0.0, max_y);
  auto x0 = static_cast<std::size_t>(std::floor(px));
  auto y0 = static_cast<std::size_t>(std::floor(py));
  if (img.width() > 1) x0 = std::min(x0, img.width() - 2);
  if (img.height() > 1) y0 = std::min(y0, img.height() - 2);
  const std::size_t x1 = std::min(x0 + 1, img.width() - 1);
  const std::size_t y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = px - static_cast<double>(x0);
  const double fy = py - static_cast<double>(y0);
  const double top = (1.0 - fx) * img.at(x0, y0) + fx * img.at(x1, y0);
  const double bottom = (1.0 - fx) * img.at(x0, y1) + fx * img.at(x1, y1);
  return (1.0 - fy) * top + fy * bottom;
}

/// Lower grid index and fraction for output position i of n across a grid of g samples.
inline std::pair<std::size_t, double> grid_position(std::size_t i, std::size_t n, std::size_t g) {
  if (g < 2 || n < 2) return {0, 0.0};
  const double pos = static_cast<double>(i) * static_cast<double>(g - 1) / static_cast<double>(n - 1);
  const auto lo = std::min(static_cast<std::size_t>(std::floor(pos)), g - 2);
  return {lo, pos - static_cast<double>(lo)};
}

}  // namespace detail

/// Rectifies `raw`. The map is bilinearly interpolated to a normalized source
/// coordinate per output pixel, then the source is sampled bilinearly. Pixels
/// touched by invalid map samples are 0.
inline GrayImage undistort(const GrayImage& raw, const UndistortionMap& map, Size out_size) {
  if (out_size.width == 0 || out_size.height == 0)
    throw Error(ErrorCode::InvalidArgument, "undistort: output size must be >= 1x1");
  if (map.samples.size() != std::size_t{map.grid_width} * map.grid_height || map.samples.empty())
    throw Error(ErrorCode::MapSizeMismatch, "undistortion map sample count does not match its grid");
  if ((map.grid_width < 2 && out_size.width > 1) || (map.grid_height < 2 && out_size.height > 1))
    throw Error(ErrorCode::MapSizeMismatch,
                "undistortion map grid " + std::to_string(map.grid_width) + "x" +
                    std::to_string(map.grid_height) + " cannot cover " + std::to_string(out_size.width) +
                    "x" + std::to_string(out_size.height));

  GrayImage out(out_size.width, out_size.height);
  const double src_w = static_cast<double>(raw.width() - 1);
  const double src_h = static_cast<double>(raw.height() - 1);
  const std::size_t gx_max = map.grid_width - 1;
  const std::size_t gy_max = map.grid_height - 1;

  for (std::size_t y = 0; y < out_size.height; ++y) {
    const auto [gy, fy] = detail::grid_position(y, out_size.height, map.grid_height);
    for (std::size_t x = 0; x < out_size.width; ++x) {
      const auto [gx, fx] = detail::grid_position(x, out_size.width, map.grid_width);
      const std::array<std::pair<const UndistortionMap::Sample*, double>, 4> corners{{
          {&map.at(gx, gy), (1.0 - fx) * (1.0 - fy)},
          {&map.at(std::min(gx + 1, gx_max), gy), fx * (1.0 - fy)},
          {&map.at(gx, std::min(gy + 1, gy_max)), (1.0 - fx) * fy},
          {&map.at(std::min(gx + 1, gx_max), std::min(gy + 1, gy_max)), fx * fy},
      }};
      double u = 0.0, v = 0.0;
      bool valid = true;
      for (const auto& [s, w] : corners) {
        if (w == 0.0) continue;
        if (!s->valid()) {
          valid = false;
          break;
        }
        u += w * s->u;
        v += w * s->v;
      }
      out.at(x, y) = valid ? detail::round_to_u8(detail::sample_bilinear(raw, u * src_w, v * src_h)) : 0;
    }
  }
  return out;
}

struct FixedThreshold {
  int value = 128;
};
struct OtsuThreshold {};
using ThresholdMethod = std::variant<FixedThreshold, OtsuThreshold>;

/// Otsu's threshold t: pixels >= t form the foreground. Maximizes between-class
/// variance over the 256-bin histogram; the first maximum wins.
inline int otsu_threshold(const GrayImage& img) {
  std::array<double, 256> hist{};
  for (std::uint8_t p : img.pixels()) hist[p] += 1.0;
  double total_n = 0.0, total_s = 0.0;
  for (int i = 0; i < 256; ++i) {
    total_n += hist[i];
    total_s += i * hist[i];
  }
  double n0 = 0.0, s0 = 0.0, best = -1.0;
  int best_k = 0;
  for (int k = 0; k < 255; ++k) {
    n0 += hist[k];
    s0 += k * hist[k];
    const double n1 = total_n - n0;
    if (n0 == 0.0 || n1 == 0.0) continue;
    const double diff = s0 / n0 - (total_s - s0) / n1;
    const double between = n0 * n1 * diff * diff;
    if (between > best) {
      best = between;
      best_k = k;
    }
  }
  return best_k + 1;
}

/// Output pixels are 0 or 255.
inline GrayImage binarize(const GrayImage& img, const ThresholdMethod& method = OtsuThreshold{}) {
  const int t = std::holds_alternative<FixedThreshold>(method) ? std::get<FixedThreshold>(method).value
                                                              : otsu_threshold(img);
  GrayImage out = img;
  for (auto& p : out.pixels()) p = static_cast<int>(p) >= t ? 255 : 0;
  return out;
}

/// Crop window (inclusive bounds) in source pixels.
struct Rect {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  friend constexpr bool operator==(Rect, Rect) = default;
};

inline std::optional<Rect> foreground_bounds(const GrayImage& img) {
  std::optional<Rect> r;
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x) {
      if (img.at(x, y) == 0) continue;
      if (!r) {
        r = Rect{x, y, x, y};
      } else {
        r->x0 = std::min(r->x0, x);
        r->x1 = std::max(r->x1, x);
        r->y0 = std::min(r->y0, y);
        r->y1 = std::max(r->y1, y);
      }
    }
  return r;
}

inline GrayImage crop(const GrayImage& img, const Rect& r) {
  GrayImage out(r.x1 - r.x0 + 1, r.y1 - r.y0 + 1);
  for (std::size_t y = r.y0; y <= r.y1; ++y)
    for (std::size_t x = r.x0; x <= r.x1; ++x) out.at(x - r.x0, y - r.y0) = img.at(x, y);
  return out;
}

/// Tight box around nonzero pixels grown by `margin` and clipped; the whole image when empty.
inline GrayImage crop_to_foreground(const GrayImage& img, std::size_t margin) {
  const auto bounds = foreground_bounds(img);
  if (!bounds) return img;
  Rect r = *bounds;
  r.x0 = r.x0 >= margin ? r.x0 - margin : 0;
  r.y0 = r.y0 >= margin ? r.y0 - margin : 0;
  r.x1 = std::min(r.x1 + margin, img.width() - 1);
  r.y1 = std::min(r.y1 + margin, img.height() - 1);
  return crop(img, r);
}

/// Pixel-center aligned bilinear resampling with edge clamping.
inline GrayImage resize_bilinear(const GrayImage& img, Size out_size) {
  if (out_size.width == 0 || out_size.height == 0)
    throw Error(ErrorCode::InvalidArgument, "resize: output size must be >= 1x1");
  if (out_size.width == img.width() && out_size.height == img.height()) return img;
  GrayImage out(out_size.width, out_size.height);
  const double sx = static_cast<double>(img.width()) / static_cast<double>(out_size.width);
  const double sy = static_cast<double>(img.height()) / static_cast<double>(out_size.height);
  for (std::size_t y = 0; y < out_size.height; ++y) {
    const double py = (static_cast<double>(y) + 0.5) * sy - 0.5;
    for (std::size_t x = 0; x < out_size.width; ++x) {
      const double px = (static_cast<double>(x) + 0.5) * sx - 0.5;
      out.at(x, y) = detail::round_to_u8(detail::sample_bilinear(img, px, py));
    }
  }
  return out;
}

struct HogParams {
  std::size_t cell_size = 8;     // pixels per cell side
  std::size_t block_cells = 2;   // cells per block side
  std::size_t block_stride = 1;  // in cells
  std::size_t bins = 9;          // unsigned, over [0, 180)
  double clip = 0.2;             // L2-Hys clip

  friend bool operator==(const HogParams&, const HogParams&) = default;
};

struct HogGeometry {
  std::size_t cells_x = 0, cells_y = 0;
  std::size_t blocks_x = 0, blocks_y = 0;
  std::size_t block_cells = 0, bins = 0;

  std::size_t block_length() const { return block_cells * block_cells * bins; }
  std::size_t length() const { return blocks_x * blocks_y * block_length(); }
  friend bool operator==(const HogGeometry&, const HogGeometry&) = default;
};

inline HogGeometry hog_geometry(Size image, const HogParams& p) {
  if (p.cell_size == 0 || p.block_cells == 0 || p.block_stride == 0 || p.bins == 0)
    throw Error(ErrorCode::GeometryError, "HOG parameters must be positive");
  if (image.width % p.cell_size != 0 || image.height % p.cell_size != 0)
    throw Error(ErrorCode::GeometryError, "image " + std::to_string(image.width) + "x" +
                                              std::to_string(image.height) +
                                              " is not divisible by cell size " + std::to_string(p.cell_size));
  HogGeometry g;
  g.cells_x = image.width / p.cell_size;
  g.cells_y = image.height / p.cell_size;
  if (g.cells_x < p.block_cells || g.cells_y < p.block_cells)
    throw Error(ErrorCode::GeometryError, "image smaller than one HOG block");
  g.blocks_x = (g.cells_x - p.block_cells) / p.block_stride + 1;
  g.blocks_y = (g.cells_y - p.block_cells) / p.block_stride + 1;
  g.block_cells = p.block_cells;
  g.bins = p.bins;
  return g;
}

struct HogDescriptor {
  std::vector<double> values;
  HogGeometry geometry;
};

namespace detail {

inline void normalize_l2(std::span<double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  if (ss <= 0.0) return;
  const double inv = 1.0 / std::sqrt(ss);
  for (double& x : v) x *= inv;
}

}  // namespace detail

/// Per-cell histograms of unsigned gradient orientation.
///
/// Gradients are [-1, 0, 1] differences with edge replication. Bin b is centered
/// on b*180/bins degrees; each pixel's magnitude is split linearly between the two
/// nearest bin centers (wrapping 180 -> 0). Returned cell-major, row-major cells.
inline std::vector<double> hog_cell_histograms(const GrayImage& img, const HogParams& p, const HogGeometry& g) {
  std::vector<double> cells(g.cells_x * g.cells_y * p.bins, 0.0);
  const std::size_t w = img.width(), h = img.height();
  const double bin_width = 180.0 / static_cast<double>(p.bins);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t ym = y > 0 ? y - 1 : 0, yp = std::min(y + 1, h - 1);
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t xm = x > 0 ? x - 1 : 0, xp = std::min(x + 1, w - 1);
      const double gx = static_cast<double>(img.at(xp, y)) - static_cast<double>(img.at(xm, y));
      const double gy = static_cast<double>(img.at(x, yp)) - static_cast<double>(img.at(x, ym));
      const double mag = std::sqrt(gx * gx + gy * gy);
      if (mag == 0.0) continue;
      double deg = std::atan2(gy, gx) * (180.0 / std::numbers::pi);
      if (deg < 0.0) deg += 180.0;
      if (deg >= 180.0) deg -= 180.0;
      const double pos = deg / bin_width;
      const double base = std::floor(pos);
      const double frac = pos - base;
      const std::size_t b0 = static_cast<std::size_t>(base) % p.bins;
      const std::size_t b1 = (b0 + 1) % p.bins;
      double* cell = &cells[((y / p.cell_size) * g.cells_x + x / p.cell_size) * p.bins];
      cell[b0] += mag * (1.0 - frac);
      cell[b1] += mag * frac;
    }
  }
  return cells;
}

/// HOG with L2-Hys block normalization over sliding blocks. Blocks are emitted
/// row-major; within a block, cells row-major, then bins.
inline HogDescriptor compute_hog(const GrayImage& img, const HogParams& p = {}) {
  const HogGeometry g = hog_geometry({img.width(), img.height()}, p);
  const std::vector<double> cells = hog_cell_histograms(img, p, g);

  HogDescriptor d;
  d.geometry = g;
  d.values.reserve(g.length());
  std::vector<double> block(g.block_length());
  for (std::size_t by = 0; by < g.blocks_y; ++by) {
    for (std::size_t bx = 0; bx < g.blocks_x; ++bx) {
      std::size_t k = 0;
      for (std::size_t cy = 0; cy < p.block_cells; ++cy)
        for (std::size_t cx = 0; cx < p.block_cells; ++cx) {
          const std::size_t cell = (by * p.block_stride + cy) * g.cells_x + (bx * p.block_stride + cx);
          for (std::size_t b = 0; b < p.bins; ++b) block[k++] = cells[cell * p.bins + b];
        }
      detail::normalize_l2(block);
      for (double& v : block) v = std::min(v, p.clip);
      detail::normalize_l2(block);
      d.values.insert(d.values.end(), block.begin(), block.end());
    }
  }
  return d;
}

/// Which stereo images feed the descriptor.
enum class StereoUse { LeftOnly, Both };

struct ImagePipelineConfig {
  Size undistorted_size{240, 240};
  ThresholdMethod threshold = OtsuThreshold{};
  std::size_t crop_margin = 4;
  Size hog_input{64, 64};
  HogParams hog;
  StereoUse stereo = StereoUse::LeftOnly;
};

/// undistort -> binarize -> crop_to_foreground -> resize -> HOG for one image.
/// Without a map the raw image is used as the rectified image.
inline HogDescriptor image_descriptor(const GrayImage& raw, const UndistortionMap* map,
                                      const ImagePipelineConfig& cfg = {}) {
  const GrayImage rectified = map ? undistort(raw, *map, cfg.undistorted_size) : raw;
  const GrayImage binary = binarize(rectified, cfg.threshold);
  const GrayImage cropped = crop_to_foreground(binary, cfg.crop_margin);
  return compute_hog(resize_bilinear(cropped, cfg.hog_input), cfg.hog);
}

/// Descriptor for a stereo sample: the left image, or both concatenated.
inline HogDescriptor sample_descriptor(std::span<const GrayImage> images, const UndistortionMap* map,
                                       const ImagePipelineConfig& cfg = {}) {
  if (images.empty()) throw Error(ErrorCode::InvalidArgument, "sample has no images");
  HogDescriptor d = image_descriptor(images[0], map, cfg);
  if (cfg.stereo == StereoUse::Both) {
    if (images.size() < 2) throw Error(ErrorCode::InvalidArgument, "stereo descriptor needs two images");
    const HogDescriptor right = image_descriptor(images[1], map, cfg);
    d.values.insert(d.values.end(), right.values.begin(), right.values.end());
  }
  return d;
}

inline std::size_t descriptor_length(const ImagePipelineConfig& cfg) {
  return hog_geometry(cfg.hog_input, cfg.hog).length() * (cfg.stereo == StereoUse::Both ? 2 : 1);
}

}  // namespace gesturelab
