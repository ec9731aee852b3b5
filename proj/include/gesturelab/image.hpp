#pragma once

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "gesturelab/error.hpp"

namespace gesturelab {

/// 8-bit single-channel raster, row-major.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(std::size_t width, std::size_t height, std::uint8_t fill = 0)
      : width_(width), height_(height), data_(width * height, fill) {
    if (width == 0 || height == 0) throw Error(ErrorCode::InvalidArgument, "image dimensions must be >= 1");
  }
  GrayImage(std::size_t width, std::size_t height, std::vector<std::uint8_t> data)
      : width_(width), height_(height), data_(std::move(data)) {
    if (width == 0 || height == 0) throw Error(ErrorCode::InvalidArgument, "image dimensions must be >= 1");
    if (data_.size() != width * height)
      throw Error(ErrorCode::InvalidArgument, "image data length does not match width*height");
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  bool empty() const noexcept { return data_.empty(); }

  std::uint8_t& at(std::size_t x, std::size_t y) { return data_[y * width_ + x]; }
  std::uint8_t at(std::size_t x, std::size_t y) const { return data_[y * width_ + x]; }

  std::span<const std::uint8_t> pixels() const noexcept { return data_; }
  std::span<std::uint8_t> pixels() noexcept { return data_; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<std::uint8_t> data_;
};

namespace detail {

inline void skip_pnm_space(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (c != EOF && std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

inline std::size_t read_pnm_int(std::istream& in, const std::string& path) {
  skip_pnm_space(in);
  std::size_t v = 0;
  if (!(in >> v)) throw Error(ErrorCode::ParseError, path + ": malformed PGM header");
  return v;
}

}  // namespace detail

/// Reads a binary (P5) PGM with maxval 255.
inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  char magic[2] = {};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '5')
    throw Error(ErrorCode::ParseError, path.string() + ": not a binary PGM (P5)");
  const std::size_t w = detail::read_pnm_int(in, path.string());
  const std::size_t h = detail::read_pnm_int(in, path.string());
  const std::size_t maxval = detail::read_pnm_int(in, path.string());
  if (maxval != 255) throw Error(ErrorCode::ParseError, path.string() + ": maxval must be 255");
  if (w == 0 || h == 0) throw Error(ErrorCode::ParseError, path.string() + ": empty image");
  in.get();  // single whitespace before the raster
  std::vector<std::uint8_t> data(w * h);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (in.gcount() != static_cast<std::streamsize>(data.size()))
    throw Error(ErrorCode::ParseError, path.string() + ": truncated raster");
  return GrayImage(w, h, std::move(data));
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels().data()),
            static_cast<std::streamsize>(img.pixels().size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

/// Grid of normalized source coordinates spanning the output image. Sample
/// (gx, gy) corresponds to output position (gx/(gw-1), gy/(gh-1)).
struct UndistortionMap {
  struct Sample {
    float u = 0.0f;
    float v = 0.0f;
    bool valid() const { return u >= 0.0f && u <= 1.0f && v >= 0.0f && v <= 1.0f; }
    friend bool operator==(const Sample&, const Sample&) = default;
  };
  static constexpr Sample kInvalid{-1.0f, -1.0f};

  std::uint32_t grid_width = 0;
  std::uint32_t grid_height = 0;
  std::vector<Sample> samples;

  const Sample& at(std::size_t gx, std::size_t gy) const { return samples[gy * grid_width + gx]; }

  static UndistortionMap identity(std::uint32_t grid_width, std::uint32_t grid_height) {
    UndistortionMap m{grid_width, grid_height, {}};
    m.samples.reserve(std::size_t{grid_width} * grid_height);
    for (std::uint32_t gy = 0; gy < grid_height; ++gy)
      for (std::uint32_t gx = 0; gx < grid_width; ++gx)
        m.samples.push_back({grid_width > 1 ? static_cast<float>(gx) / static_cast<float>(grid_width - 1) : 0.0f,
                             grid_height > 1 ? static_cast<float>(gy) / static_cast<float>(grid_height - 1) : 0.0f});
    return m;
  }

  friend bool operator==(const UndistortionMap&, const UndistortionMap&) = default;
};

namespace detail {

template <class T>
void write_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_le(std::istream& in, const std::string& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw Error(ErrorCode::ParseError, path + ": truncated undistortion map");
  return value;
}

}  // namespace detail

/// Binary layout: "LMUM", u32 grid_width, u32 grid_height, then f32 (u, v) pairs
/// row-major, all little-endian. Invalid samples are (-1, -1).
inline void write_undistortion_map(const std::filesystem::path& path, const UndistortionMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write("LMUM", 4);
  detail::write_le(out, map.grid_width);
  detail::write_le(out, map.grid_height);
  for (const auto& s : map.samples) {
    const auto& w = s.valid() ? s : UndistortionMap::kInvalid;
    detail::write_le(out, w.u);
    detail::write_le(out, w.v);
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

inline UndistortionMap read_undistortion_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "LMUM", 4) != 0)
    throw Error(ErrorCode::ParseError, path.string() + ": bad undistortion map magic");
  UndistortionMap map;
  map.grid_width = detail::read_le<std::uint32_t>(in, path.string());
  map.grid_height = detail::read_le<std::uint32_t>(in, path.string());
  const std::size_t n = std::size_t{map.grid_width} * map.grid_height;
  map.samples.resize(n);
  for (auto& s : map.samples) {
    s.u = detail::read_le<float>(in, path.string());
    s.v = detail::read_le<float>(in, path.string());
  }
  return map;
}

}  // namespace gesturelab
