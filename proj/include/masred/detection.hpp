#pragma once

#include "masred/dataset.hpp"

#include <optional>
#include <vector>

namespace masred {

struct Detection {
  int class_id = 0;
  Box box;  // pixels of the queried image
  double confidence = 0.0;
  int cell = -1;  // source grid cell, -1 when unknown (external oracles)

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct DetectionSet {
  std::vector<Detection> detections;

  std::size_t size() const noexcept { return detections.size(); }
  bool empty() const noexcept { return detections.empty(); }
  friend bool operator==(const DetectionSet&, const DetectionSet&) = default;
};

DetectionSet filter_by_confidence(const DetectionSet& set, double threshold);

// Minimum overlap ratio (intersection over the smaller box) for a detection
// to be associated with a victim box.
inline constexpr double kMatchOverlap = 0.25;

// Detection with the highest overlap >= kMatchOverlap with `victim`; ties go
// to the higher confidence, then the lower index.
std::optional<Detection> match_victim(const DetectionSet& set, const Box& victim);

// Attack goal: which label configuration an attack drives the detector towards.
struct TargetSpec {
  enum class Mode { untargeted_suppress, targeted };

  Mode mode = Mode::untargeted_suppress;
  int target_class = -1;
  std::optional<Box> victim;

  static TargetSpec suppress(std::optional<Box> victim = std::nullopt) {
    return {Mode::untargeted_suppress, -1, victim};
  }
  static TargetSpec targeted(int class_id, std::optional<Box> victim = std::nullopt) {
    return {Mode::targeted, class_id, victim};
  }
};

}  // namespace masred
