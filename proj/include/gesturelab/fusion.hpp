#pragma once

// Weighted concatenation of tracking features with the HOG descriptor.

#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gesturelab/error.hpp"
#include "gesturelab/image_pipeline.hpp"
#include "gesturelab/tracking_features.hpp"

namespace gesturelab {

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Which features are fused and how strongly the HOG segment is weighted (K).
struct FusionConfig {
  FeatureMask tracking_mask = FeatureMask::all();
  bool use_hog = false;
  double hog_weight = 1.0;
  std::size_t hog_length = 0;

  std::size_t tracking_dimension() const { return tracking_mask.dimension(); }
  std::size_t dimension() const { return tracking_dimension() + (use_hog ? hog_length : 0); }

  /// Contiguous segments A, D, E, T, HOG (only those present).
  std::vector<Segment> layout() const {
    std::vector<Segment> out;
    std::size_t offset = 0;
    for (auto [f, n] : {std::pair{Feature::A, "A"}, std::pair{Feature::D, "D"}, std::pair{Feature::E, "E"},
                        std::pair{Feature::T, "T"}}) {
      if (!tracking_mask.has(f)) continue;
      out.push_back({n, offset, FeatureMask::segment_length(f)});
      offset += FeatureMask::segment_length(f);
    }
    if (use_hog) out.push_back({"HOG", offset, hog_length});
    return out;
  }

  /// "A+D+T", "HOG", "A+D+T+HOG".
  std::string combo_name() const {
    std::string s = tracking_mask.to_string();
    if (use_hog) s += s.empty() ? "HOG" : "+HOG";
    return s;
  }

  void validate() const {
    if (!(hog_weight >= 0.0)) throw Error(ErrorCode::ConfigError, "hog_weight must be >= 0");
    if (tracking_mask.empty() && !use_hog) throw Error(ErrorCode::ConfigError, "fusion selects no features");
    if (use_hog && hog_length == 0) throw Error(ErrorCode::ConfigError, "HOG enabled with zero length");
  }
};

/// Parses "A+D+T+HOG" style combination names (HOG token optional).
inline FusionConfig parse_combo(const std::string& combo, std::size_t hog_length, double hog_weight = 1.0) {
  FusionConfig cfg;
  cfg.hog_length = hog_length;
  cfg.hog_weight = hog_weight;
  std::string tracking = combo;
  const auto strip = [&](const std::string& token) {
    const auto pos = tracking.find(token);
    if (pos == std::string::npos) return false;
    tracking.erase(pos, token.size());
    return true;
  };
  cfg.use_hog = strip("+HOG") || strip("HOG+") || strip("HOG");
  cfg.tracking_mask = tracking.empty() ? FeatureMask::none() : FeatureMask::parse(tracking);
  cfg.validate();
  return cfg;
}

/// [selected tracking segments, hog_weight * HOG].
inline std::vector<double> fuse(std::span<const double> tracking, std::span<const double> hog,
                                const FusionConfig& cfg) {
  if (tracking.size() != cfg.tracking_dimension())
    throw Error(ErrorCode::LayoutMismatch, "tracking segment has " + std::to_string(tracking.size()) +
                                               " values, layout expects " +
                                               std::to_string(cfg.tracking_dimension()));
  if (cfg.use_hog && hog.size() != cfg.hog_length)
    throw Error(ErrorCode::LayoutMismatch, "HOG segment has " + std::to_string(hog.size()) +
                                               " values, layout expects " + std::to_string(cfg.hog_length));
  std::vector<double> out(tracking.begin(), tracking.end());
  if (cfg.use_hog) {
    out.reserve(out.size() + hog.size());
    for (double h : hog) out.push_back(cfg.hog_weight * h);
  }
  return out;
}

inline std::vector<double> fuse(const TrackingFeatures& tracking, const HogDescriptor& hog,
                                const FusionConfig& cfg) {
  return fuse(tracking.to_vector(cfg.tracking_mask), hog.values, cfg);
}

/// Applies the HOG weight to an unweighted fused vector in place.
inline void apply_hog_weight(std::span<double> unweighted, const FusionConfig& cfg) {
  if (unweighted.size() != cfg.dimension())
    throw Error(ErrorCode::LayoutMismatch, "fused vector has " + std::to_string(unweighted.size()) +
                                               " values, layout expects " + std::to_string(cfg.dimension()));
  if (!cfg.use_hog) return;
  for (std::size_t i = cfg.tracking_dimension(); i < unweighted.size(); ++i) unweighted[i] *= cfg.hog_weight;
}

inline void to_json(nlohmann::json& j, const FusionConfig& c) {
  j = nlohmann::json{{"tracking_mask", c.tracking_mask.to_string()},
                     {"use_hog", c.use_hog},
                     {"hog_weight", c.hog_weight},
                     {"hog_length", c.hog_length}};
}

inline void from_json(const nlohmann::json& j, FusionConfig& c) {
  const auto mask = j.at("tracking_mask").get<std::string>();
  c.tracking_mask = mask.empty() ? FeatureMask::none() : FeatureMask::parse(mask);
  c.use_hog = j.at("use_hog").get<bool>();
  c.hog_weight = j.at("hog_weight").get<double>();
  c.hog_length = j.at("hog_length").get<std::size_t>();
}

}  // namespace gesturelab
