#pragma once

// Dataset manifests, a synthetic gesture generator with matching tracking frames
// and sensor images, and seeded train/test splitting.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gesturelab/error.hpp"
#include "gesturelab/image.hpp"
#include "gesturelab/linalg.hpp"
#include "gesturelab/parallel.hpp"
#include "gesturelab/random.hpp"
#include "gesturelab/tracking_features.hpp"

namespace gesturelab {

inline constexpr int kGestureCount = 10;

struct Sample {
  int subject = 0;
  int gesture = 0;
  int repetition = 0;
  HandFrame frame;
  std::vector<GrayImage> images;  // left, optionally right

  std::string id() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "s%02d-g%d-r%02d", subject, gesture, repetition);
    return buf;
  }

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::vector<Sample> samples;
  std::optional<UndistortionMap> undistortion;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline void sort_samples(std::vector<Sample>& samples) {
  std::stable_sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) {
    return std::tie(a.subject, a.gesture, a.repetition) < std::tie(b.subject, b.gesture, b.repetition);
  });
}

/// Number of samples per (subject, gesture).
inline std::map<std::pair<int, int>, std::size_t> count_by_subject_gesture(std::span<const Sample> samples) {
  std::map<std::pair<int, int>, std::size_t> counts;
  for (const auto& s : samples) ++counts[{s.subject, s.gesture}];
  return counts;
}

inline HandFrame read_frame(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  try {
    return nlohmann::json::parse(in).get<HandFrame>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw with_context(e, path.string());
  }
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j, int indent = -1) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(indent) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

/// Loads a manifest:
///   {"version":1, "undistortion_map":"map.lmum" (optional),
///    "samples":[{"subject":s,"gesture":g,"rep":r,"frame":"f.json","images":["l.pgm","r.pgm"]}]}
/// Paths are relative to the manifest. Every missing file is listed in one MissingFile error.
inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  const nlohmann::json manifest = read_json_file(manifest_path);
  const auto base = manifest_path.parent_path();

  struct Record {
    int subject, gesture, rep;
    std::filesystem::path frame;
    std::vector<std::filesystem::path> images;
  };
  std::vector<Record> records;
  std::optional<std::filesystem::path> map_path;
  try {
    if (!manifest.is_object() || !manifest.contains("version"))
      throw Error(ErrorCode::ParseError, manifest_path.string() + ": missing version");
    if (manifest.at("version").get<int>() != 1)
      throw Error(ErrorCode::SchemaVersionMismatch,
                  manifest_path.string() + ": version " + manifest.at("version").dump() + " (expected 1)");
    if (manifest.contains("undistortion_map") && !manifest.at("undistortion_map").is_null())
      map_path = base / manifest.at("undistortion_map").get<std::string>();
    for (const auto& s : manifest.at("samples")) {
      Record r{s.at("subject").get<int>(), s.at("gesture").get<int>(), s.at("rep").get<int>(),
               base / s.at("frame").get<std::string>(), {}};
      if (r.gesture < 0 || r.gesture >= kGestureCount)
        throw Error(ErrorCode::ParseError, "gesture id " + std::to_string(r.gesture) + " outside [0, 10)");
      for (const auto& img : s.at("images")) r.images.push_back(base / img.get<std::string>());
      if (r.images.empty() || r.images.size() > 2)
        throw Error(ErrorCode::ParseError, "each sample needs 1 or 2 images");
      records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, manifest_path.string() + ": " + e.what());
  }

  std::vector<std::string> missing;
  const auto check = [&](const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) missing.push_back(p.string());
  };
  if (map_path) check(*map_path);
  for (const auto& r : records) {
    check(r.frame);
    for (const auto& p : r.images) check(p);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw Error(ErrorCode::MissingFile, list);
  }

  Dataset ds;
  if (map_path) ds.undistortion = read_undistortion_map(*map_path);
  ds.samples.resize(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    const auto& r = records[i];
    Sample& s = ds.samples[i];
    s.subject = r.subject;
    s.gesture = r.gesture;
    s.repetition = r.rep;
    s.frame = read_frame(r.frame);
    for (const auto& p : r.images) s.images.push_back(read_pgm(p));
  });
  sort_samples(ds.samples);
  return ds;
}

/// Writes `dir/dataset.json` with frames/ and images/ beside it; returns the manifest path.
inline std::filesystem::path save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "images");
  nlohmann::json manifest{{"version", 1}};
  if (ds.undistortion) {
    write_undistortion_map(dir / "undistortion.lmum", *ds.undistortion);
    manifest["undistortion_map"] = "undistortion.lmum";
  }
  auto samples = nlohmann::json::array();
  for (const auto& s : ds.samples) {
    const std::string id = s.id();
    const std::string frame = "frames/" + id + ".json";
    write_json_file(dir / frame, nlohmann::json(s.frame));
    auto images = nlohmann::json::array();
    for (std::size_t k = 0; k < s.images.size(); ++k) {
      const std::string name = "images/" + id + (k == 0 ? "_left.pgm" : "_right.pgm");
      write_pgm(dir / name, s.images[k]);
      images.push_back(name);
    }
    samples.push_back({{"subject", s.subject}, {"gesture", s.gesture}, {"rep", s.repetition},
                       {"frame", frame}, {"images", std::move(images)}});
  }
  manifest["samples"] = std::move(samples);
  write_json_file(dir / "dataset.json", manifest, 1);
  return dir / "dataset.json";
}

// ---------------------------------------------------------------------------
// Synthetic gestures

enum Finger : std::size_t { Thumb = 0, Index = 1, Middle = 2, Ring = 3, Pinky = 4 };

struct NoiseScales {
  double position_mm = 3.0;                        // per-coordinate fingertip jitter
  double rotation_rad = 10.0 * std::numbers::pi / 180.0;  // pose rotation sigma
  double style_mm = 2.0;                           // per (subject, gesture) fingertip offset
  double hand_scale = 0.08;                        // per-subject hand size sigma (relative)
};

/// Fingertip offsets in the hand-local frame: x lateral (thumb side positive),
/// y along the hand direction, z along the palm normal. Millimeters.
struct GestureTemplate {
  int gesture_id = 0;
  std::string name;
  std::array<Vec3, kFingerSlots> offsets{};
  std::array<bool, kFingerSlots> extended{};
  NoiseScales noise;

  void validate() const {
    for (const auto& o : offsets) {
      const double d = norm(o);
      if (d < 20.0 || d > 120.0)
        throw Error(ErrorCode::InvalidArgument,
                    "template '" + name + "' fingertip offset " + std::to_string(d) + " mm outside [20, 120]");
    }
  }
};

namespace detail {

inline constexpr std::array<Vec3, kFingerSlots> kExtendedTips{{
    {62.0, 42.0, -4.0},   // thumb
    {24.0, 92.0, 0.0},    // index
    {0.0, 100.0, 0.0},    // middle
    {-21.0, 93.0, 0.0},   // ring
    {-42.0, 74.0, 0.0},   // pinky
}};

inline constexpr std::array<Vec3, kFingerSlots> kCurledTips{{
    {26.0, 30.0, -22.0},
    {22.0, 36.0, -26.0},
    {1.0, 38.0, -28.0},
    {-19.0, 35.0, -26.0},
    {-37.0, 30.0, -22.0},
}};

inline constexpr std::array<Vec3, kFingerSlots> kFingerBases{{
    {30.0, 4.0, 0.0},
    {23.0, 44.0, 0.0},
    {1.0, 47.0, 0.0},
    {-19.0, 44.0, 0.0},
    {-36.0, 37.0, 0.0},
}};

inline constexpr std::array<double, kFingerSlots> kFingerRadius{11.0, 9.0, 9.5, 9.0, 8.0};

}  // namespace detail

inline GestureTemplate make_template(int id, std::string name, std::array<bool, kFingerSlots> extended) {
  GestureTemplate t;
  t.gesture_id = id;
  t.name = std::move(name);
  t.extended = extended;
  for (std::size_t f = 0; f < kFingerSlots; ++f)
    t.offsets[f] = extended[f] ? detail::kExtendedTips[f] : detail::kCurledTips[f];
  return t;
}

/// Ten poses with distinct extended-finger subsets (thumb, index, middle, ring, pinky).
inline std::vector<GestureTemplate> default_templates() {
  return {
      make_template(0, "open_palm", {true, true, true, true, true}),
      make_template(1, "fist", {false, false, false, false, false}),
      make_template(2, "point", {false, true, false, false, false}),
      make_template(3, "victory", {false, true, true, false, false}),
      make_template(4, "three", {false, true, true, true, false}),
      make_template(5, "four", {false, true, true, true, true}),
      make_template(6, "thumb_up", {true, false, false, false, false}),
      make_template(7, "l_shape", {true, true, false, false, false}),
      make_template(8, "call", {true, false, false, false, true}),
      make_template(9, "horns", {false, true, false, false, true}),
  };
}

struct SyntheticConfig {
  int subjects = 13;
  int repetitions = 20;
  std::uint64_t seed = 2019;
  std::size_t image_size = 240;     // raw and rectified images are square
  double field_of_view_mm = 500.0;  // rectified image spans this width at any height
  double translation_cube_mm = 200.0;
  double palm_height_mm = 250.0;    // cube center above the sensor
  double barrel_k = -0.12;          // raw = c * (1 + k |c|^2), c in [-1, 1]^2
  double stereo_offset_mm = 8.0;    // lateral eye offset, each side
  bool stereo = true;
  std::uint32_t map_grid = 41;
};

/// Rectified normalized coordinate -> raw normalized coordinate.
inline std::pair<double, double> barrel_distort(double s, double t, double k) {
  const double cx = 2.0 * s - 1.0, cy = 2.0 * t - 1.0;
  const double f = 1.0 + k * (cx * cx + cy * cy);
  return {0.5 + 0.5 * cx * f, 0.5 + 0.5 * cy * f};
}

/// Inverse of barrel_distort by Newton iteration on the radius.
inline std::pair<double, double> barrel_undistort(double s, double t, double k) {
  const double cx = 2.0 * s - 1.0, cy = 2.0 * t - 1.0;
  const double rd = std::sqrt(cx * cx + cy * cy);
  if (rd == 0.0) return {0.5, 0.5};
  double r = rd;
  for (int it = 0; it < 30; ++it) {
    const double g = r + k * r * r * r - rd;
    const double dg = 1.0 + 3.0 * k * r * r;
    const double step = g / dg;
    r -= step;
    if (std::abs(step) < 1e-14) break;
  }
  const double scale = r / rd;
  return {0.5 + 0.5 * cx * scale, 0.5 + 0.5 * cy * scale};
}

/// Calibration grid mapping rectified positions onto the raw image.
inline UndistortionMap synthetic_undistortion_map(const SyntheticConfig& cfg) {
  UndistortionMap m{cfg.map_grid, cfg.map_grid, {}};
  m.samples.reserve(std::size_t{cfg.map_grid} * cfg.map_grid);
  for (std::uint32_t gy = 0; gy < cfg.map_grid; ++gy)
    for (std::uint32_t gx = 0; gx < cfg.map_grid; ++gx) {
      const auto [u, v] = barrel_distort(gx / double(cfg.map_grid - 1), gy / double(cfg.map_grid - 1), cfg.barrel_k);
      m.samples.push_back({static_cast<float>(u), static_cast<float>(v)});
    }
  return m;
}

namespace detail {

/// Hand pose used for rendering: palm frame plus per-finger segments.
struct HandShape {
  Vec3 center, lateral, forward, normal;
  double scale = 1.0;
  std::array<Vec3, kFingerSlots> bases{};
  std::array<Vec3, kFingerSlots> tips{};
  std::array<double, kFingerSlots> radius{};
};

inline double segment_distance_2d(double px, double pz, const Vec3& a, const Vec3& b) {
  const double dx = b.x - a.x, dz = b.z - a.z;
  const double len2 = dx * dx + dz * dz;
  double t = len2 > 0.0 ? ((px - a.x) * dx + (pz - a.z) * dz) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = px - (a.x + t * dx), ez = pz - (a.z + t * dz);
  return std::sqrt(ex * ex + ez * ez);
}

/// Height of the hand surface seen from below at world (x, z), or nullopt for background.
/// Orthographic view along +y: the palm is an ellipse in its plane, fingers are capsules.
inline std::optional<double> hand_height_at(const HandShape& h, double x, double z) {
  const double dx = x - h.center.x, dz = z - h.center.z;
  if (dx * dx + dz * dz > 170.0 * 170.0 * h.scale * h.scale) return std::nullopt;
  std::optional<double> height;
  if (std::abs(h.normal.y) > 1e-6) {
    const double y = h.center.y - (h.normal.x * dx + h.normal.z * dz) / h.normal.y;
    const Vec3 q = Vec3{x, y, z} - h.center;
    const double a = dot(q, h.lateral) / (42.0 * h.scale);
    const double b = (dot(q, h.forward) - 6.0 * h.scale) / (46.0 * h.scale);
    if (a * a + b * b <= 1.0) height = y;
  }
  for (std::size_t f = 0; f < kFingerSlots; ++f) {
    if (segment_distance_2d(x, z, h.bases[f], h.tips[f]) <= h.radius[f]) {
      const double y = 0.5 * (h.bases[f].y + h.tips[f].y);
      height = height ? std::min(*height, y) : y;
    }
  }
  return height;
}

/// Rectified position (s, t) seen by each raw pixel, row-major.
inline std::vector<std::pair<double, double>> raw_pixel_positions(const SyntheticConfig& cfg) {
  const std::size_t n = cfg.image_size;
  std::vector<std::pair<double, double>> pos;
  pos.reserve(n * n);
  for (std::size_t py = 0; py < n; ++py)
    for (std::size_t px = 0; px < n; ++px)
      pos.push_back(barrel_undistort(px / double(n - 1), py / double(n - 1), cfg.barrel_k));
  return pos;
}

/// Raw (barrel-distorted) infrared-like image of the hand: bright hand, dark background.
inline GrayImage render_raw_image(const HandShape& h, const SyntheticConfig& cfg,
                                  std::span<const std::pair<double, double>> positions, double eye_offset_mm,
                                  Rng& rng) {
  const std::size_t n = cfg.image_size;
  GrayImage img(n, n);
  auto pixels = img.pixels();
  for (std::size_t i = 0; i < n * n; ++i) {
    const auto [s, t] = positions[i];
    const double x = (s - 0.5) * cfg.field_of_view_mm + eye_offset_mm;
    const double z = (t - 0.5) * cfg.field_of_view_mm;
    const auto height = hand_height_at(h, x, z);
    const double base = height ? 245.0 - 0.2 * (*height - 150.0) : 22.0;
    pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(base + rng.normal(0.0, 6.0)), 0L, 255L));
  }
  return img;
}

}  // namespace detail

/// Deterministic synthetic dataset: subjects x templates x repetitions samples.
///
/// Each subject gets a hand scale and a per-gesture style offset; each sample a
/// random rigid pose (translation uniform in a cube, rotation about a random axis
/// with Gaussian angle) and Gaussian fingertip noise. Fingertips are reported in
/// random order. Images are rendered from the same hand geometry.
inline Dataset generate_synthetic(std::span<const GestureTemplate> templates, const SyntheticConfig& cfg) {
  if (cfg.subjects < 1 || cfg.repetitions < 1)
    throw Error(ErrorCode::InvalidArgument, "subjects and repetitions must be >= 1");
  if (cfg.image_size < 2) throw Error(ErrorCode::InvalidArgument, "image_size must be >= 2");
  for (const auto& t : templates) t.validate();

  Dataset ds;
  ds.undistortion = synthetic_undistortion_map(cfg);
  const auto positions = detail::raw_pixel_positions(cfg);
  const Vec3 base_normal{0.0, -1.0, 0.0}, base_forward{0.0, 0.0, -1.0};
  const Vec3 base_lateral = cross(base_forward, base_normal);

  for (int subject = 0; subject < cfg.subjects; ++subject) {
    Rng subject_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(subject)));
    const double size_draw = subject_rng.normal();
    for (const auto& tmpl : templates) {
      const auto& noise = tmpl.noise;
      const double hand_scale = std::max(0.5, 1.0 + size_draw * noise.hand_scale);
      std::array<Vec3, kFingerSlots> style{};
      for (auto& s : style)
        s = {subject_rng.normal(0.0, noise.style_mm), subject_rng.normal(0.0, noise.style_mm),
             subject_rng.normal(0.0, noise.style_mm)};

      for (int rep = 0; rep < cfg.repetitions; ++rep) {
        Rng& rng = subject_rng;
        const double half = cfg.translation_cube_mm / 2.0;
        const Vec3 center{rng.uniform(-half, half), cfg.palm_height_mm + rng.uniform(-half, half),
                          rng.uniform(-half, half)};
        const Vec3 axis = normalized(Vec3{rng.normal(), rng.normal(), rng.normal()});
        const Mat3 rot = axis_angle(axis, rng.normal(0.0, noise.rotation_rad));

        detail::HandShape shape;
        shape.center = center;
        shape.lateral = rot * base_lateral;
        shape.forward = rot * base_forward;
        shape.normal = rot * base_normal;
        shape.scale = hand_scale;
        const auto to_world = [&](Vec3 local) {
          return center + hand_scale * (local.x * shape.lateral + local.y * shape.forward + local.z * shape.normal);
        };

        std::array<Vec3, kFingerSlots> tips{};
        for (std::size_t f = 0; f < kFingerSlots; ++f) {
          tips[f] = to_world(tmpl.offsets[f] + style[f]) +
                    Vec3{rng.normal(0.0, noise.position_mm), rng.normal(0.0, noise.position_mm),
                         rng.normal(0.0, noise.position_mm)};
          shape.tips[f] = tips[f];
          shape.bases[f] = to_world(detail::kFingerBases[f]);
          shape.radius[f] = detail::kFingerRadius[f] * hand_scale;
        }

        std::array<std::size_t, kFingerSlots> order{0, 1, 2, 3, 4};
        rng.shuffle(std::span<std::size_t>(order));
        Sample s;
        s.subject = subject;
        s.gesture = tmpl.gesture_id;
        s.repetition = rep;
        s.frame.palm_center = center;
        s.frame.palm_normal = shape.normal;
        s.frame.hand_direction = shape.forward;
        for (std::size_t k = 0; k < kFingerSlots; ++k) {
          s.frame.fingertips.push_back(tips[order[k]]);
          if (order[k] == Middle) s.frame.middle_index = k;
        }
        s.images.push_back(detail::render_raw_image(shape, cfg, positions, cfg.stereo ? cfg.stereo_offset_mm : 0.0, rng));
        if (cfg.stereo) s.images.push_back(detail::render_raw_image(shape, cfg, positions, -cfg.stereo_offset_mm, rng));
        ds.samples.push_back(std::move(s));
      }
    }
  }
  sort_samples(ds.samples);
  return ds;
}

inline Dataset generate_synthetic(std::span<const GestureTemplate> templates, int subjects, int repetitions,
                                  std::uint64_t seed) {
  SyntheticConfig cfg;
  cfg.subjects = subjects;
  cfg.repetitions = repetitions;
  cfg.seed = seed;
  return generate_synthetic(templates, cfg);
}

// ---------------------------------------------------------------------------
// Splitting

struct Split {
  std::vector<std::size_t> train;  // ascending sample indices
  std::vector<std::size_t> test;
};

/// Seeded shuffle split. Stratified: each class contributes floor(fraction * n_c)
/// training rows, and the rows still needed to reach round(fraction * N) are taken
/// one per class in shuffled class order.
inline Split split(std::span<const int> labels, double train_fraction, std::uint64_t seed, bool stratified = true) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw Error(ErrorCode::InvalidArgument, "train_fraction must be in (0, 1)");
  Rng rng(seed);
  const auto take = [&](double n) { return static_cast<std::size_t>(std::floor(train_fraction * n + 1e-9)); };
  const std::size_t target = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(labels.size())));
  Split out;
  std::vector<bool> in_train(labels.size(), false);

  if (!stratified) {
    std::vector<std::size_t> all(labels.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(all));
    for (std::size_t k = 0; k < target; ++k) in_train[all[k]] = true;
  } else {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    std::vector<std::pair<std::vector<std::size_t>*, std::size_t>> strata;  // rows, taken so far
    std::size_t taken = 0;
    for (auto& [label, rows] : by_class) {
      rng.shuffle(std::span<std::size_t>(rows));
      const std::size_t k = take(static_cast<double>(rows.size()));
      for (std::size_t r = 0; r < k; ++r) in_train[rows[r]] = true;
      taken += k;
      strata.emplace_back(&rows, k);
    }
    rng.shuffle(std::span<std::pair<std::vector<std::size_t>*, std::size_t>>(strata));
    for (auto& [rows, k] : strata) {
      if (taken >= target) break;
      if (k < rows->size()) {
        in_train[(*rows)[k]] = true;
        ++taken;
      }
    }
  }
  for (std::size_t i = 0; i < labels.size(); ++i) (in_train[i] ? out.train : out.test).push_back(i);
  return out;
}

inline std::vector<int> gesture_labels(std::span<const Sample> samples) {
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.gesture);
  return labels;
}

}  // namespace gesturelab
