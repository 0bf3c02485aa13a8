#pragma once

#include "masred/detection.hpp"
#include "masred/image.hpp"
#include "masred/imagery.hpp"
#include "masred/oracle.hpp"
#include "masred/toydet.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace masred {

enum class AttackKind { fgsm, ea_perturb, ea_pixels, ea_patch };
std::string_view to_string(AttackKind kind);

struct AdversarialExample {
  Image base;
  Image adversarial;
  std::optional<double> epsilon;  // max-norm budget in 1/255 units
  std::size_t changed_pixel_count = 0;
  AttackKind kind = AttackKind::fgsm;
};

struct EvasionOutcome {
  double baseline_confidence = 0.0;  // matched detection before the attack, 0 if none
  double attacked_confidence = 0.0;  // matched detection after the attack, 0 if none
  std::optional<int> baseline_class;
  std::optional<int> attacked_class;
  bool success = false;
  int generations_used = 0;
  std::uint64_t queries_used = 0;
  std::string error_note;  // set when the oracle failed mid-run
};

// The detection an attack is scored against: the victim match when a victim
// box is given, otherwise the most confident detection.
std::optional<Detection> matched_detection(const DetectionSet& set, const TargetSpec& target);

// success <=> suppress: matched confidence < threshold; targeted: matched
// class == target class.
bool attack_succeeded(const std::optional<Detection>& matched, const TargetSpec& target, double threshold);

EvasionOutcome evaluate_evasion(Oracle& oracle, const Image& base, const Image& attacked, const TargetSpec& target);

// ---- FGSM ------------------------------------------------------------------

// One signed-gradient step on an image: every channel moves by
// direction * floor(epsilon) * sign(gradient), clamped to [0, 255].
// direction = +1 ascends the loss, -1 descends it.
Image fgsm_step(const Image& image, const GradientField& gradient, double epsilon, int direction);

// Open-box attack against the toy model. Targeted mode descends the loss
// toward the target label, untargeted mode ascends the loss of the current
// labels. With iterations > 1 each step uses epsilon / iterations and the
// result is projected back onto the epsilon ball. epsilon is in 1/255 units;
// 0 returns the image unchanged.
AdversarialExample fgsm(const ToyDetectorModel& model, const Image& image, const TargetSpec& target, double epsilon,
                        int iterations = 1);

// ---- evolutionary search ---------------------------------------------------

enum class MutationMode {
  per_gene,        // mutation_rate is a per-gene probability
  expected_genes,  // mutation_rate is the expected number of mutated genes
};

struct EAConfig {
  int population = 10;
  int generations = 100;
  double mutation_rate = 0.5;
  MutationMode mutation_mode = MutationMode::per_gene;
  double crossover_prob = 0.5;
  int elitism = 1;
  int tournament_size = 2;
  std::uint64_t seed = 1;
  bool early_stop = true;

  void validate() const;
  double gene_probability(std::size_t genome_length) const;
};

// Named presets: "paper-default" {10, mutation 0.5 per gene, crossover 0.5}
// and "paper-patch" {20, 100 generations, 3 expected mutated genes, 0.5}.
EAConfig ea_preset(std::string_view name);
std::vector<std::string> ea_preset_names();

struct EAResult {
  AdversarialExample example;
  EvasionOutcome outcome;
  std::vector<double> best_cost;  // best cost after generation 0, 1, ...
};

// Exact oracle query count of a run that evaluated `generations_used`
// offspring generations: one baseline query, the initial population, then
// population - elitism new individuals per generation.
std::uint64_t expected_queries(const EAConfig& config, int generations_used);

// Closed-box perturbation search. Genome: per-channel integer offsets in
// [-epsilon, epsilon]; generation 0 contains the zero genome. Cost
// (minimized): matched confidence for suppress, 1 - target-class confidence
// for targeted. `workers` are optional extra handles for fan-out; results do
// not depend on them.
EAResult ea_perturb(Oracle& oracle, const Image& image, const TargetSpec& target, int epsilon, const EAConfig& config,
                    std::span<Oracle* const> workers = {});

struct PixelAttackConfig {
  int n_pixels = 50;
  std::vector<std::uint8_t> intensities{0, 255};
};

// Closed-box attack that rewrites at most n pixels. Genome: n tuples
// (x, y, r, g, b) with channel values from the intensity set.
EAResult ea_pixel_limited(Oracle& oracle, const Image& image, const TargetSpec& target, const PixelAttackConfig& pixels,
                          const EAConfig& config, std::span<Oracle* const> workers = {});

// Cost of a detection set for an attack goal; lower is better.
double attack_cost(const DetectionSet& detections, const TargetSpec& target);

// ---- patch synthesis -------------------------------------------------------

struct PatchScene {
  Image image;
  Box victim;
};

// Distribution of patch placements: the patch centre lands uniformly in the
// middle half of the victim box.
struct TransformDistribution {
  double alpha_min = 1.0;
  double alpha_max = 1.0;
  double scale_min = 1.0;
  double scale_max = 1.0;
  bool random_rotation = true;
  int samples_per_scene = 2;  // fresh draws per generation
  int holdout_samples = 8;    // draws per scene for the final evaluation
};

struct PatchAttackConfig {
  int patch_size = 8;
  TransformDistribution transforms;
  EAConfig ea = ea_preset("paper-patch");
};

struct PatchSample {
  std::size_t scene = 0;
  double alpha = 1.0;
  PatchTransform transform;
};

struct PatchAttackResult {
  Patch patch;                 // best evolved patch (alpha 1 raster)
  Patch generation0_patch;     // best individual of the initial population
  std::vector<double> best_cost;
  std::vector<std::vector<double>> population_costs;  // per generation, per individual
  std::vector<double> baseline_cost;                   // unpatched cost per generation
  std::vector<EvasionOutcome> holdout;                 // best patch, one per held-out draw
  double holdout_mean_confidence = 0.0;
  double generation0_holdout_mean_confidence = 0.0;
  double baseline_mean_confidence = 0.0;               // unpatched scenes
  double holdout_success_fraction = 0.0;
  int generations_used = 0;
  std::uint64_t queries_used = 0;
};

// Single-vessel synthetic scenes with seeds mix_seed(base_seed, i), i = 0, 1,
// ..., kept in order while the oracle detects the vessel as a vessel, until `count`
// are collected or `max_tries` seeds are spent.
inline constexpr std::uint64_t kCalibrationSeed = 9000;
std::vector<PatchScene> calibration_scenes(Oracle& oracle, std::size_t count, std::uint64_t base_seed = kCalibrationSeed,
                                           std::size_t max_tries = 1000);

std::vector<PatchSample> sample_patch_transforms(const std::vector<PatchScene>& scenes, int patch_size,
                                                 const TransformDistribution& dist, int per_scene, Rng& rng);

// Suppress-mode patch search with an expectation over sampled placements.
// Cost of a patch = mean matched confidence over scenes x sampled transforms.
// Runs every generation; early_stop is not used here.
PatchAttackResult ea_patch(Oracle& oracle, const std::vector<PatchScene>& scenes, const PatchAttackConfig& config,
                           std::span<Oracle* const> workers = {});

}  // namespace masred
