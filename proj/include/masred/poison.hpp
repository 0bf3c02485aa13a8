#pragma once

#include "masred/dataset.hpp"
#include "masred/imagery.hpp"
#include "masred/toydet.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace masred {

enum class TriggerPlacement { random, on_object };

// Backdoor trigger and the distribution of its per-item placement.
struct BackdoorSpec {
  Image trigger;                  // defaults to default_trigger_raster()
  double alpha_min = 0.8;
  double alpha_max = 1.0;
  double scale_min = 0.1;         // trigger side as a fraction of image width
  double scale_max = 0.3;
  TriggerPlacement placement = TriggerPlacement::on_object;
  // on_object: trigger centre = host box centre + U(-j, j) * box size.
  double object_jitter = 0.25;
  bool random_rotation = true;
};

// Fixed high-saturation four-colour flag used as the default trigger.
Image default_trigger_raster();

enum class PoisonKind { label_flip, chaff_injection, targeted_swap, backdoor };
std::string_view to_string(PoisonKind kind);
PoisonKind parse_poison_kind(std::string_view text);

struct PoisonStrategy {
  PoisonKind kind = PoisonKind::backdoor;
  // targeted_swap / backdoor: annotations of this class are rewritten
  // (-1 = any class for backdoor; required for targeted_swap).
  int source_class = -1;
  // Target class id; may equal class_names.size() to introduce a new class
  // named `new_class_name`.
  int target_class = -1;
  std::string new_class_name;
  BackdoorSpec backdoor;
};

struct PoisonPlan {
  PoisonStrategy strategy;
  double budget = 0.0;
  std::uint64_t seed = 0;
  std::size_t dataset_size = 0;
  std::vector<std::size_t> selected;        // sorted item indices
  std::vector<std::string> class_names;     // class list of the poisoned dataset
};

// Number of items a budget selects: max(1, floor(budget * n)).
std::size_t poison_count(double budget, std::size_t n);

// Seeded selection of poison_count(budget, n) distinct indices, sorted.
std::vector<std::size_t> select_items(std::size_t n, double budget, std::uint64_t seed);

PoisonPlan plan_poison(const Dataset& dataset, const PoisonStrategy& strategy, double budget, std::uint64_t seed);

struct LabelChange {
  std::size_t annotation = 0;
  int old_class = 0;
  int new_class = 0;
};

struct PoisonChange {
  std::size_t index = 0;
  std::string path;
  std::optional<PatchTransform> transform;  // backdoor only
  double alpha = 0.0;
  std::optional<std::size_t> host_annotation;
  std::vector<LabelChange> labels;
  std::vector<Annotation> added;            // chaff only
};

struct PoisonResult {
  Dataset dataset;
  std::vector<PoisonChange> manifest;
};

// Poisoned copy of `dataset`; non-selected items are untouched.
PoisonResult apply_poison(const Dataset& dataset, const PoisonPlan& plan);

// Composites the trigger onto one image. Returns the transform and, for
// on_object placement, the index of the host annotation. Draws come from
// `rng`; `eligible` lists the annotations that may host the trigger.
struct TriggerPlacementResult {
  Image image;
  PatchTransform transform;
  double alpha = 1.0;
  std::optional<std::size_t> host;
};
TriggerPlacementResult place_trigger(const Image& image, const std::vector<Annotation>& annotations,
                                     const std::vector<std::size_t>& eligible, const BackdoorSpec& spec, Rng& rng);

// ---- evaluation ------------------------------------------------------------

struct PoisonEvalConfig {
  DetectorConfig detector;       // class_names are replaced by the poisoned list
  std::uint64_t init_seed = 1;
  TrainConfig train;
  double threshold = 0.3;
  std::uint64_t trigger_seed = 99;
};

struct PoisonReport {
  double clean_metric_baseline = 0.0;
  double clean_metric_poisoned = 0.0;
  // Fraction of triggered test objects that the poisoned model reports as
  // the target class while the clean model does not.
  double trigger_success_rate = 0.0;
  std::size_t trigger_hits = 0;
  std::size_t triggered_count = 0;
  bool trigger_rate_undefined = false;  // 0 triggered objects: reported as 0 / 0
  double raw_trigger_rate = 0.0;        // poisoned model only
  LossValue outer_objective;            // poisoned model on the clean test set
  LossValue baseline_objective;         // clean model on the clean test set
  std::vector<double> baseline_losses;  // training curves
  std::vector<double> poisoned_losses;
};

struct TrainedPair {
  ToyDetectorModel clean;
  ToyDetectorModel poisoned;
};

// Trains the clean and poisoned models with identical configuration and
// seeds, then scores them on the test set. `trigger` absent means no
// triggered evaluation (the rate is reported as 0 / 0 and flagged).
PoisonReport evaluate_poison(const Dataset& clean_train, const Dataset& poisoned_train, const Dataset& test,
                             const std::optional<PoisonStrategy>& trigger, const PoisonEvalConfig& config,
                             TrainedPair* models = nullptr);

// Scores already-trained models (the part of evaluate_poison after training).
PoisonReport score_poison(const ToyDetectorModel& clean, const ToyDetectorModel& poisoned, const Dataset& test,
                          const std::optional<PoisonStrategy>& trigger, const PoisonEvalConfig& config);

// ---- scanning --------------------------------------------------------------

struct ScanConfig {
  int bins = 4;                // per channel; joint RGB histogram of bins^3 cells
  double threshold = 3.5;      // robust z-score cutoff
  std::size_t min_group_size = 8;
};

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
  std::optional<double> precision() const;
  std::optional<double> recall() const;
};

ConfusionCounts confusion(const std::vector<std::size_t>& flagged, const std::vector<std::size_t>& truth);

struct PoisonScanResult {
  std::vector<std::size_t> flagged;
  std::vector<double> scores;
  std::optional<ConfusionCounts> metrics;
};

// Colour-histogram outlier detector: each item's L1 histogram distance to
// the medoid of its group (items grouped by first annotation class, small
// groups pooled) is turned into a robust z-score (median / 1.4826 MAD).
PoisonScanResult scan_for_poison(const Dataset& dataset, const ScanConfig& config,
                                 const std::optional<std::vector<std::size_t>>& ground_truth = std::nullopt);

std::vector<double> color_histogram(const Image& image, int bins);

// ---- audit records -----------------------------------------------------------

// Canonical JSON (sorted keys) for a plan and its change manifest.
std::string plan_to_json(const PoisonPlan& plan);
PoisonPlan plan_from_json(const std::string& text);
std::string manifest_to_json(const PoisonPlan& plan, const std::vector<PoisonChange>& manifest,
                             const std::string& source_digest, const std::string& poisoned_digest);

}  // namespace masred
