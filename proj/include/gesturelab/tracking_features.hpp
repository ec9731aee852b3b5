#pragma once

// Geometric fingertip descriptors computed from a single hand-tracking frame:
// angle (A), distance (D), elevation (E) and sorted pairwise tip distance (T).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gesturelab/error.hpp"
#include "gesturelab/linalg.hpp"

namespace gesturelab {

inline constexpr std::size_t kFingerSlots = 5;
inline constexpr std::size_t kTipPairs = kFingerSlots * (kFingerSlots - 1) / 2;
/// Norms below this (millimeters) are treated as zero-length.
inline constexpr double kDegenerateNorm = 1e-9;

/// One tracking snapshot. Positions in millimeters, directions unit length.
struct HandFrame {
  Vec3 palm_center;
  Vec3 palm_normal{0.0, -1.0, 0.0};
  Vec3 hand_direction{0.0, 0.0, -1.0};
  std::vector<Vec3> fingertips;  // unordered, at most five
  std::optional<std::size_t> middle_index;

  friend bool operator==(const HandFrame&, const HandFrame&) = default;
};

inline void validate(const HandFrame& frame) {
  constexpr double unit_tol = 1e-6;
  if (std::abs(norm(frame.palm_normal) - 1.0) > unit_tol)
    throw Error(ErrorCode::InvalidFrame, "palm_normal is not unit length");
  if (std::abs(norm(frame.hand_direction) - 1.0) > unit_tol)
    throw Error(ErrorCode::InvalidFrame, "hand_direction is not unit length");
  if (frame.fingertips.size() > kFingerSlots)
    throw Error(ErrorCode::InvalidFrame,
                "frame has " + std::to_string(frame.fingertips.size()) + " fingertips (max 5)");
  if (frame.middle_index && *frame.middle_index >= frame.fingertips.size())
    throw Error(ErrorCode::InvalidFrame, "middle_index out of range");
}

/// S = |F_middle - C|.
inline double compute_scale(const HandFrame& frame) {
  if (!frame.middle_index || *frame.middle_index >= frame.fingertips.size())
    throw Error(ErrorCode::MissingMiddleFinger, "no middle fingertip identified");
  const double s = norm(frame.fingertips[*frame.middle_index] - frame.palm_center);
  if (s < kDegenerateNorm)
    throw Error(ErrorCode::DegenerateHand, "middle fingertip coincides with palm center");
  return s;
}

inline Vec3 project_to_palm_plane(Vec3 point, const HandFrame& frame) {
  const Vec3& n = frame.palm_normal;
  return point - dot(point - frame.palm_center, n) * n;
}

/// Range of raw signed angles that is mapped linearly onto [0.5, 1].
struct AngleRange {
  double min = -std::numbers::pi / 2.0;
  double max = std::numbers::pi / 2.0;
};

/// Signed angle in (-pi, pi] between the palm-plane projection of the fingertip
/// direction and the hand direction. Positive when h x p points along n.
inline double signed_palm_angle(Vec3 tip, const HandFrame& frame) {
  const Vec3 p = project_to_palm_plane(tip, frame) - frame.palm_center;
  if (norm(p) < kDegenerateNorm)
    throw Error(ErrorCode::DegenerateHand, "fingertip projects onto the palm center");
  const Vec3& h = frame.hand_direction;
  double angle = std::atan2(dot(cross(h, p), frame.palm_normal), dot(h, p));
  if (angle == -std::numbers::pi) angle = std::numbers::pi;
  return angle;
}

inline double scale_angle(double raw, const AngleRange& range) {
  const double t = (raw - range.min) / (range.max - range.min);
  return 0.5 + 0.5 * std::clamp(t, 0.0, 1.0);
}

/// slot -> index into HandFrame::fingertips, empty for unassigned slots.
using SlotAssignment = std::array<std::optional<std::size_t>, kFingerSlots>;

struct AngleFeatures {
  std::array<double, kFingerSlots> angles{};
  SlotAssignment assignment{};
};

/// Computes A and assigns fingertips to slots in ascending signed-angle order.
inline AngleFeatures compute_angle_features(const HandFrame& frame, const AngleRange& range = {}) {
  if (!(range.min < range.max))
    throw Error(ErrorCode::InvalidArgument, "angle range must satisfy min < max");
  const std::size_t count = std::min(frame.fingertips.size(), kFingerSlots);
  std::vector<std::pair<double, std::size_t>> raw;
  raw.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    raw.emplace_back(signed_palm_angle(frame.fingertips[i], frame), i);
  std::stable_sort(raw.begin(), raw.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  AngleFeatures out;
  for (std::size_t slot = 0; slot < raw.size(); ++slot) {
    out.angles[slot] = scale_angle(raw[slot].first, range);
    out.assignment[slot] = raw[slot].second;
  }
  return out;
}

inline std::array<double, kFingerSlots> compute_distance_features(const HandFrame& frame,
                                                                  const SlotAssignment& assignment) {
  const double s = compute_scale(frame);
  std::array<double, kFingerSlots> out{};
  for (std::size_t slot = 0; slot < kFingerSlots; ++slot)
    if (assignment[slot]) out[slot] = norm(frame.fingertips[*assignment[slot]] - frame.palm_center) / s;
  return out;
}

inline std::array<double, kFingerSlots> compute_elevation_features(const HandFrame& frame,
                                                                   const SlotAssignment& assignment) {
  const double s = compute_scale(frame);
  std::array<double, kFingerSlots> out{};
  for (std::size_t slot = 0; slot < kFingerSlots; ++slot) {
    if (!assignment[slot]) continue;
    const Vec3 tip = frame.fingertips[*assignment[slot]];
    const Vec3 offset = tip - project_to_palm_plane(tip, frame);
    const double along = dot(offset, frame.palm_normal);
    const double sign = along > 0.0 ? 1.0 : (along < 0.0 ? -1.0 : 0.0);
    out[slot] = sign * norm(offset) / s;
  }
  return out;
}

/// All ten pairwise tip distances over S, ascending. Pairs with an undetected tip are 0.
inline std::array<double, kTipPairs> compute_tip_distances(const HandFrame& frame) {
  const double s = compute_scale(frame);
  std::array<double, kTipPairs> out{};
  const auto& tips = frame.fingertips;
  std::size_t k = 0;
  for (std::size_t i = 0; i < tips.size(); ++i)
    for (std::size_t j = i + 1; j < tips.size(); ++j) out[k++] = norm(tips[i] - tips[j]) / s;
  std::sort(out.begin(), out.end());
  return out;
}

enum class Feature : unsigned { A = 1u, D = 2u, E = 4u, T = 8u };

/// Subset of {A, D, E, T}. Vectors are always laid out in A, D, E, T order.
class FeatureMask {
 public:
  constexpr FeatureMask() = default;
  constexpr FeatureMask(std::initializer_list<Feature> features) {
    for (Feature f : features) bits_ |= static_cast<unsigned>(f);
  }

  static constexpr FeatureMask all() { return {Feature::A, Feature::D, Feature::E, Feature::T}; }
  static constexpr FeatureMask none() { return {}; }

  constexpr bool has(Feature f) const { return (bits_ & static_cast<unsigned>(f)) != 0; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr unsigned bits() const { return bits_; }

  static constexpr std::size_t segment_length(Feature f) {
    return f == Feature::T ? kTipPairs : kFingerSlots;
  }

  constexpr std::size_t dimension() const {
    std::size_t d = 0;
    for (Feature f : {Feature::A, Feature::D, Feature::E, Feature::T})
      if (has(f)) d += segment_length(f);
    return d;
  }

  /// "A+D+T"; empty mask is "".
  std::string to_string() const {
    std::string s;
    for (auto [f, c] : {std::pair{Feature::A, 'A'}, std::pair{Feature::D, 'D'},
                        std::pair{Feature::E, 'E'}, std::pair{Feature::T, 'T'}}) {
      if (!has(f)) continue;
      if (!s.empty()) s += '+';
      s += c;
    }
    return s;
  }

  /// Parses "A+D+T" style strings (order-insensitive, case-insensitive).
  static FeatureMask parse(const std::string& text) {
    FeatureMask m;
    std::size_t start = 0;
    while (start <= text.size()) {
      const std::size_t end = std::min(text.find('+', start), text.size());
      std::string token = text.substr(start, end - start);
      if (token.size() != 1)
        throw Error(ErrorCode::ConfigError, "bad feature token '" + token + "' in '" + text + "'");
      switch (std::toupper(static_cast<unsigned char>(token[0]))) {
        case 'A': m.bits_ |= static_cast<unsigned>(Feature::A); break;
        case 'D': m.bits_ |= static_cast<unsigned>(Feature::D); break;
        case 'E': m.bits_ |= static_cast<unsigned>(Feature::E); break;
        case 'T': m.bits_ |= static_cast<unsigned>(Feature::T); break;
        default:
          throw Error(ErrorCode::ConfigError, "bad feature token '" + token + "' in '" + text + "'");
      }
      start = end + 1;
    }
    return m;
  }

  friend constexpr bool operator==(FeatureMask, FeatureMask) = default;

 private:
  unsigned bits_ = 0;
};

struct TrackingFeatures {
  std::array<double, kFingerSlots> angles{};
  std::array<double, kFingerSlots> distances{};
  std::array<double, kFingerSlots> elevations{};
  std::array<double, kTipPairs> tip_distances{};
  double scale = 0.0;  // 0 only for frames without fingertips

  /// Selected segments concatenated in A, D, E, T order.
  std::vector<double> to_vector(FeatureMask mask = FeatureMask::all()) const {
    std::vector<double> v;
    v.reserve(mask.dimension());
    if (mask.has(Feature::A)) v.insert(v.end(), angles.begin(), angles.end());
    if (mask.has(Feature::D)) v.insert(v.end(), distances.begin(), distances.end());
    if (mask.has(Feature::E)) v.insert(v.end(), elevations.begin(), elevations.end());
    if (mask.has(Feature::T)) v.insert(v.end(), tip_distances.begin(), tip_distances.end());
    return v;
  }
};

struct TrackingConfig {
  AngleRange angle_range;
  FeatureMask mask = FeatureMask::all();
};

inline TrackingFeatures extract_tracking_features(const HandFrame& frame, const TrackingConfig& config = {}) {
  validate(frame);
  TrackingFeatures f;
  if (frame.fingertips.empty()) return f;
  f.scale = compute_scale(frame);
  const AngleFeatures a = compute_angle_features(frame, config.angle_range);
  f.angles = a.angles;
  f.distances = compute_distance_features(frame, a.assignment);
  f.elevations = compute_elevation_features(frame, a.assignment);
  f.tip_distances = compute_tip_distances(frame);
  return f;
}

/// extract_tracking_features followed by mask selection.
inline std::vector<double> extract_feature_vector(const HandFrame& frame, const TrackingConfig& config = {}) {
  return extract_tracking_features(frame, config).to_vector(config.mask);
}

// JSON: {"palm_center":[x,y,z], "palm_normal":[...], "hand_direction":[...],
//        "fingertips":[[x,y,z],...], "middle_index": int|null}

inline void to_json(nlohmann::json& j, const Vec3& v) { j = nlohmann::json::array({v.x, v.y, v.z}); }

inline void from_json(const nlohmann::json& j, Vec3& v) {
  if (!j.is_array() || j.size() != 3)
    throw Error(ErrorCode::ParseError, "expected a 3-element coordinate array");
  v = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline void to_json(nlohmann::json& j, const HandFrame& f) {
  j = nlohmann::json{{"palm_center", f.palm_center},
                     {"palm_normal", f.palm_normal},
                     {"hand_direction", f.hand_direction},
                     {"fingertips", f.fingertips}};
  if (f.middle_index)
    j["middle_index"] = *f.middle_index;
  else
    j["middle_index"] = nullptr;
}

inline void from_json(const nlohmann::json& j, HandFrame& f) {
  try {
    f.palm_center = j.at("palm_center").get<Vec3>();
    f.palm_normal = j.at("palm_normal").get<Vec3>();
    f.hand_direction = j.at("hand_direction").get<Vec3>();
    f.fingertips = j.at("fingertips").get<std::vector<Vec3>>();
    f.middle_index.reset();
    if (j.contains("middle_index") && !j.at("middle_index").is_null())
      f.middle_index = j.at("middle_index").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("hand frame: ") + e.what());
  }
}

}  // namespace gesturelab
