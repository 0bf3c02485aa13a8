#include "masred/detection.hpp"

namespace masred {

DetectionSet filter_by_confidence(const DetectionSet& set, double threshold) {
  DetectionSet out;
  for (const auto& d : set.detections)
    if (d.confidence >= threshold) out.detections.push_back(d);
  return out;
}

std::optional<Detection> match_victim(const DetectionSet& set, const Box& victim) {
  std::optional<Detection> best;
  double best_overlap = 0.0;
  for (const auto& d : set.detections) {
    const double overlap = overlap_ratio(d.box, victim);
    if (overlap < kMatchOverlap) continue;
    if (!best || overlap > best_overlap || (overlap == best_overlap && d.confidence > best->confidence)) {
      best = d;
      best_overlap = overlap;
    }
  }
  return best;
}

}  // namespace masred
