#include "masred/error.hpp"
#include "masred/evasion.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>

namespace masred {
namespace {

using testing::noise_image;
using testing::small_trained_model;

int max_abs_diff(const Image& a, const Image& b) {
  int m = 0;
  for (std::size_t i = 0; i < a.bytes().size(); ++i) m = std::max(m, std::abs(int(a.bytes()[i]) - int(b.bytes()[i])));
  return m;
}

const std::vector<PatchScene>& scenes() {
  static const std::vector<PatchScene> s = [] {
    ToyOracle oracle(small_trained_model());
    return calibration_scenes(oracle, 6);
  }();
  return s;
}

// Oracle that answers from a toy model until its budget runs out.
class FailingOracle final : public Oracle {
 public:
  FailingOracle(std::shared_ptr<const ToyDetectorModel> model, std::uint64_t budget)
      : Oracle(kDefaultThreshold), inner_(std::move(model)), budget_(budget) {}
  Kind kind() const noexcept override { return Kind::external; }
  const std::vector<std::string>& class_names() const override { return inner_.class_names(); }

 protected:
  DetectionSet query(const Image& image) override {
    if (budget_ == 0) throw Error(ErrorKind::oracle_terminated, "budget exhausted");
    --budget_;
    return inner_.detect(image);
  }

 private:
  ToyOracle inner_;
  std::uint64_t budget_;
};

TEST(Setup, CalibrationScenesAreDetectedVessels) {
  ASSERT_EQ(scenes().size(), 6u);
  ToyOracle oracle(small_trained_model());
  for (const auto& s : scenes()) {
    const auto m = match_victim(oracle.detect(s.image), s.victim);
    ASSERT_TRUE(m);
    EXPECT_EQ(m->class_id, kVesselClass);
  }
}

TEST(Fgsm, ZeroEpsilonIsBitExactIdentity) {
  const auto model = small_trained_model();
  for (const auto& s : scenes()) {
    for (int iterations : {1, 4}) {
      const auto ex = fgsm(*model, s.image, TargetSpec::suppress(s.victim), 0.0, iterations);
      EXPECT_TRUE(ex.adversarial == s.image);
      EXPECT_EQ(ex.changed_pixel_count, 0u);
    }
  }
  const Image noise = noise_image(64, 64, 3);
  EXPECT_TRUE(fgsm(*model, noise, TargetSpec::targeted(1), 0.0).adversarial == noise);
}

TEST(Fgsm, StaysInsideTheMaxNormBall) {
  const auto model = small_trained_model();
  for (const auto& s : scenes())
    for (double eps : {1.0, 2.0, 4.0, 8.0, 2.5})
      for (int iterations : {1, 3}) {
        const auto ex = fgsm(*model, s.image, TargetSpec::suppress(s.victim), eps, iterations);
        EXPECT_LE(max_abs_diff(ex.adversarial, s.image), eps) << eps << " " << iterations;
        EXPECT_EQ(ex.changed_pixel_count, changed_pixel_count(s.image, ex.adversarial));
        EXPECT_EQ(ex.epsilon, eps);
      }
}

TEST(Fgsm, SingleStepMovesEveryChannelByEpsilonOrHitsTheRange) {
  const auto model = small_trained_model();
  const auto& s = scenes().front();
  const auto ex = fgsm(*model, s.image, TargetSpec::suppress(s.victim), 4.0);
  for (std::size_t i = 0; i < s.image.bytes().size(); ++i) {
    const int b = s.image.bytes()[i], a = ex.adversarial.bytes()[i];
    const int d = std::abs(a - b);
    EXPECT_TRUE(d == 4 || d == 0 || a == 0 || a == 255) << i;
  }
}

TEST(Fgsm, LowersTheMatchedConfidenceOnMostScenes) {
  const auto model = small_trained_model();
  ToyOracle oracle(model);
  int lowered = 0;
  for (const auto& s : scenes()) {
    const TargetSpec t = TargetSpec::suppress(s.victim);
    const auto outcome = evaluate_evasion(oracle, s.image, fgsm(*model, s.image, t, 8.0).adversarial, t);
    lowered += outcome.attacked_confidence < outcome.baseline_confidence;
  }
  EXPECT_GE(lowered, 4);
}

TEST(Fgsm, RejectsBadArguments) {
  const auto model = small_trained_model();
  const Image img = noise_image(64, 64, 1);
  EXPECT_THROW(fgsm(*model, img, TargetSpec::suppress(), -1.0), Error);
  EXPECT_THROW(fgsm(*model, img, TargetSpec::suppress(), 1.0, 0), Error);
}

TEST(FgsmStep, ExactSignUpdate) {
  const Image img = noise_image(9, 7, 5);
  GradientField g(9, 7);
  Rng rng(2);
  for (Eigen::Index i = 0; i < g.values.size(); ++i) g.values[i] = static_cast<double>(rng.uniform_int(-1, 1)) * rng.uniform(0.1, 2.0);
  for (int direction : {1, -1})
    for (double eps : {0.0, 1.0, 3.7, 8.0}) {
      const Image out = fgsm_step(img, g, eps, direction);
      for (std::size_t i = 0; i < img.bytes().size(); ++i) {
        const double grad = g.values[static_cast<Eigen::Index>(i)];
        const int s = (grad > 0) - (grad < 0);
        const int expected = std::clamp(int(img.bytes()[i]) + direction * int(std::floor(eps)) * s, 0, 255);
        ASSERT_EQ(out.bytes()[i], expected);
      }
    }
  EXPECT_THROW(fgsm_step(img, GradientField(3, 3), 1.0, 1), Error);
  EXPECT_THROW(fgsm_step(img, g, 1.0, 0), Error);
  EXPECT_THROW(fgsm_step(img, g, -1.0, 1), Error);
}

TEST(FgsmStep, SignSymmetry) {
  const Image img = testing::solid_image(8, 8, 128, 128, 128);
  GradientField g(8, 8);
  g.values.setConstant(0.5);
  const Image up = fgsm_step(img, g, 5.0, 1), down = fgsm_step(img, g, 5.0, -1);
  for (std::size_t i = 0; i < img.bytes().size(); ++i) {
    EXPECT_EQ(up.bytes()[i] - 128, 128 - down.bytes()[i]);
    EXPECT_EQ(up.bytes()[i], 133);
  }
}

TEST(Presets, PinnedValues) {
  const EAConfig d = ea_preset("paper-default");
  EXPECT_EQ(d.population, 10);
  EXPECT_EQ(d.mutation_rate, 0.5);
  EXPECT_EQ(d.mutation_mode, MutationMode::per_gene);
  EXPECT_EQ(d.crossover_prob, 0.5);
  EXPECT_EQ(d.gene_probability(1000), 0.5);
  const EAConfig p = ea_preset("paper-patch");
  EXPECT_EQ(p.population, 20);
  EXPECT_EQ(p.generations, 100);
  EXPECT_EQ(p.mutation_rate, 3.0);
  EXPECT_EQ(p.mutation_mode, MutationMode::expected_genes);
  EXPECT_EQ(p.crossover_prob, 0.5);
  EXPECT_DOUBLE_EQ(p.gene_probability(192), 3.0 / 192.0);
  EXPECT_EQ(p.gene_probability(2), 1.0);
  EXPECT_THROW(ea_preset("nope"), Error);
  EXPECT_EQ(ea_preset_names().size(), 2u);
}

TEST(Presets, ValidationRejectsBadConfigs) {
  EAConfig c;
  c.population = 1;
  EXPECT_THROW(c.validate(), Error);
  c = EAConfig{};
  c.elitism = c.population;
  EXPECT_THROW(c.validate(), Error);
  c = EAConfig{};
  c.mutation_rate = 1.5;
  EXPECT_THROW(c.validate(), Error);
  c.mutation_mode = MutationMode::expected_genes;
  EXPECT_NO_THROW(c.validate());
  c.crossover_prob = 2.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Cost, SuppressAndTargetedRules) {
  const Box victim{10, 10, 20, 20};
  DetectionSet set;
  set.detections = {{0, {12, 12, 8, 8}, 0.7}, {1, {14, 14, 8, 8}, 0.4}, {1, {50, 50, 8, 8}, 0.9}};
  EXPECT_DOUBLE_EQ(attack_cost(set, TargetSpec::suppress(victim)), 0.7);
  EXPECT_DOUBLE_EQ(attack_cost(set, TargetSpec::suppress()), 0.9);
  EXPECT_DOUBLE_EQ(attack_cost(set, TargetSpec::targeted(1, victim)), 0.6);
  EXPECT_DOUBLE_EQ(attack_cost(DetectionSet{}, TargetSpec::suppress(victim)), 0.0);
  DetectionSet only_vessel;
  only_vessel.detections = {{0, {12, 12, 8, 8}, 0.7}};
  EXPECT_DOUBLE_EQ(attack_cost(only_vessel, TargetSpec::targeted(1, victim)), 1.7);
  EXPECT_DOUBLE_EQ(attack_cost(DetectionSet{}, TargetSpec::targeted(1, victim)), 1.0);
}

TEST(Success, Rules) {
  const Detection d{1, {0, 0, 8, 8}, 0.5};
  EXPECT_FALSE(attack_succeeded(d, TargetSpec::suppress(), 0.3));
  EXPECT_TRUE(attack_succeeded(std::nullopt, TargetSpec::suppress(), 0.3));
  EXPECT_TRUE(attack_succeeded(d, TargetSpec::targeted(1), 0.3));
  EXPECT_FALSE(attack_succeeded(d, TargetSpec::targeted(0), 0.3));
  EXPECT_FALSE(attack_succeeded(std::nullopt, TargetSpec::targeted(0), 0.3));
}

TEST(Evaluate, IdentityAndQueryCount) {
  ToyOracle oracle(small_trained_model());
  const auto& s = scenes().front();
  const auto o = evaluate_evasion(oracle, s.image, s.image, TargetSpec::suppress(s.victim));
  EXPECT_EQ(o.baseline_confidence, o.attacked_confidence);
  EXPECT_EQ(o.baseline_class, o.attacked_class);
  EXPECT_FALSE(o.success);
  EXPECT_EQ(o.queries_used, 2u);
  const Image blank = testing::solid_image(64, 64, 40, 90, 140);
  const auto none = evaluate_evasion(oracle, blank, blank, TargetSpec::suppress(Box{0, 0, 4, 4}));
  EXPECT_EQ(none.attacked_confidence, 0.0);
  EXPECT_FALSE(none.attacked_class);
  EXPECT_TRUE(none.success);
}

EAConfig short_run(std::uint64_t seed) {
  EAConfig c = ea_preset("paper-default");
  c.generations = 6;
  c.seed = seed;
  c.early_stop = false;
  return c;
}

TEST(Ea, PerturbationInvariants) {
  const auto& s = scenes().front();
  const TargetSpec t = TargetSpec::suppress(s.victim);
  for (std::uint64_t seed : {1u, 2u}) {
    ToyOracle oracle(small_trained_model());
    const EAConfig cfg = short_run(seed);
    const EAResult r = ea_perturb(oracle, s.image, t, 6, cfg);
    ASSERT_EQ(r.best_cost.size(), 7u);
    for (std::size_t g = 1; g < r.best_cost.size(); ++g) EXPECT_LE(r.best_cost[g], r.best_cost[g - 1]);
    // Generation 0 holds the zero genome, so its best is at most the baseline.
    EXPECT_LE(r.best_cost.front(), r.outcome.baseline_confidence);
    EXPECT_EQ(r.outcome.generations_used, 6);
    EXPECT_EQ(r.outcome.queries_used, expected_queries(cfg, 6));
    EXPECT_EQ(oracle.query_count(), expected_queries(cfg, 6));
    EXPECT_LE(max_abs_diff(r.example.adversarial, s.image), 6);
    EXPECT_EQ(r.outcome.attacked_confidence, r.best_cost.back());

    ToyOracle again(small_trained_model());
    const EAResult r2 = ea_perturb(again, s.image, t, 6, cfg);
    EXPECT_TRUE(r2.example.adversarial == r.example.adversarial);
    EXPECT_EQ(r2.best_cost, r.best_cost);
  }
}

TEST(Ea, ZeroBudgetKeepsTheBaseline) {
  const auto& s = scenes()[1];
  ToyOracle oracle(small_trained_model());
  const EAResult r = ea_perturb(oracle, s.image, TargetSpec::suppress(s.victim), 0, short_run(3));
  EXPECT_TRUE(r.example.adversarial == s.image);
  for (double c : r.best_cost) EXPECT_EQ(c, r.outcome.baseline_confidence);
}

TEST(Ea, WorkersDoNotChangeResults) {
  const auto& s = scenes()[2];
  const TargetSpec t = TargetSpec::suppress(s.victim);
  ToyOracle solo(small_trained_model());
  const EAResult a = ea_perturb(solo, s.image, t, 4, short_run(5));
  ToyOracle primary(small_trained_model()), w1(small_trained_model()), w2(small_trained_model());
  std::vector<Oracle*> workers{&w1, &w2};
  const EAResult b = ea_perturb(primary, s.image, t, 4, short_run(5), workers);
  EXPECT_TRUE(a.example.adversarial == b.example.adversarial);
  EXPECT_EQ(a.best_cost, b.best_cost);
  EXPECT_EQ(b.outcome.queries_used, a.outcome.queries_used);
  EXPECT_GT(w1.query_count(), 0u);
}

TEST(Ea, EarlyStopAccountsQueriesExactly) {
  // An empty scene is already a success for suppression.
  const Image blank = testing::solid_image(64, 64, 40, 90, 140);
  ToyOracle oracle(small_trained_model());
  EAConfig cfg = ea_preset("paper-default");
  const EAResult r = ea_perturb(oracle, blank, TargetSpec::suppress(Box{20, 20, 10, 10}), 3, cfg);
  EXPECT_TRUE(r.outcome.success);
  EXPECT_EQ(r.outcome.generations_used, 0);
  EXPECT_EQ(r.outcome.queries_used, expected_queries(cfg, 0));
  EXPECT_EQ(expected_queries(cfg, 0), 11u);
  EXPECT_EQ(expected_queries(cfg, 100), 11u + 900u);
}

TEST(Ea, OracleFailureEndsTheRunWithANote) {
  const auto& s = scenes().front();
  FailingOracle oracle(small_trained_model(), 40);
  const EAResult r = ea_perturb(oracle, s.image, TargetSpec::suppress(s.victim), 4, short_run(1));
  EXPECT_FALSE(r.outcome.error_note.empty());
  EXPECT_EQ(r.outcome.generations_used, 3);  // 11 + 9 + 9 + 9 = 38 queries fit the budget
  EXPECT_EQ(r.best_cost.size(), 4u);
}

TEST(Ea, TargetClassMustExist) {
  ToyOracle oracle(small_trained_model());
  EXPECT_THROW(ea_perturb(oracle, scenes()[0].image, TargetSpec::targeted(5), 4, short_run(1)), Error);
  EXPECT_THROW(ea_perturb(oracle, scenes()[0].image, TargetSpec::suppress(), 300, short_run(1)), Error);
}

TEST(Pixels, ChangeAtMostNPixels) {
  ToyOracle oracle(small_trained_model());
  for (int n : {1, 3, 20}) {
    const auto& s = scenes()[static_cast<std::size_t>(n) % scenes().size()];
    PixelAttackConfig px;
    px.n_pixels = n;
    const EAResult r = ea_pixel_limited(oracle, s.image, TargetSpec::suppress(s.victim), px, short_run(n));
    EXPECT_LE(r.example.changed_pixel_count, static_cast<std::size_t>(n));
    EXPECT_EQ(r.example.changed_pixel_count, changed_pixel_count(s.image, r.example.adversarial));
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (r.example.adversarial.at(x, y, 0) != s.image.at(x, y, 0))
          EXPECT_TRUE(r.example.adversarial.at(x, y, 0) == 0 || r.example.adversarial.at(x, y, 0) == 255);
  }
  PixelAttackConfig bad;
  bad.n_pixels = 0;
  EXPECT_THROW(ea_pixel_limited(oracle, scenes()[0].image, TargetSpec::suppress(), bad, short_run(1)), Error);
  bad.n_pixels = 2;
  bad.intensities.clear();
  EXPECT_THROW(ea_pixel_limited(oracle, scenes()[0].image, TargetSpec::suppress(), bad, short_run(1)), Error);
}

PatchAttackConfig short_patch(double alpha) {
  PatchAttackConfig c;
  c.transforms.alpha_min = c.transforms.alpha_max = alpha;
  c.ea.generations = 3;
  c.transforms.holdout_samples = 2;
  return c;
}

TEST(Patch, TransparentPatchScoresExactlyTheBaseline) {
  ToyOracle oracle(small_trained_model());
  const std::vector<PatchScene> few(scenes().begin(), scenes().begin() + 3);
  const auto r = ea_patch(oracle, few, short_patch(0.0));
  ASSERT_EQ(r.population_costs.size(), 4u);
  ASSERT_EQ(r.baseline_cost.size(), 4u);
  for (std::size_t g = 0; g < r.population_costs.size(); ++g)
    for (double c : r.population_costs[g]) EXPECT_EQ(c, r.baseline_cost[g]);
  EXPECT_EQ(r.holdout_mean_confidence, r.baseline_mean_confidence);
}

TEST(Patch, RunShapeAndDeterminism) {
  const std::vector<PatchScene> few(scenes().begin(), scenes().begin() + 2);
  ToyOracle a(small_trained_model()), b(small_trained_model());
  const auto r1 = ea_patch(a, few, short_patch(1.0));
  const auto r2 = ea_patch(b, few, short_patch(1.0));
  EXPECT_EQ(r1.best_cost, r2.best_cost);
  EXPECT_TRUE(r1.patch.raster == r2.patch.raster);
  EXPECT_EQ(r1.generations_used, 3);
  EXPECT_EQ(r1.holdout.size(), 4u);
  EXPECT_EQ(r1.patch.raster.width(), 8);
  // Baselines, generation 0, offspring, then two rasters over the hold-out.
  EXPECT_EQ(r1.queries_used, 2u + 20u * 4u + 3u * 19u * 4u + 2u * 4u);
}

TEST(Patch, SampledTransformsStayInTheVictimCentre) {
  const std::vector<PatchScene> few(scenes().begin(), scenes().begin() + 3);
  TransformDistribution dist;
  dist.scale_min = 0.5;
  dist.scale_max = 1.5;
  Rng rng(4);
  const auto samples = sample_patch_transforms(few, 8, dist, 20, rng);
  ASSERT_EQ(samples.size(), 60u);
  for (const auto& s : samples) {
    const Box& v = few[s.scene].victim;
    const double side = std::max(1L, std::lround(8 * s.transform.scale));
    const double cx = s.transform.x + side / 2.0, cy = s.transform.y + side / 2.0;
    EXPECT_GE(cx, v.x + 0.25 * v.w - 1.0);
    EXPECT_LE(cx, v.x + 0.75 * v.w + 1.0);
    EXPECT_GE(cy, v.y + 0.25 * v.h - 1.0);
    EXPECT_LE(cy, v.y + 0.75 * v.h + 1.0);
    EXPECT_GE(s.transform.scale, 0.5);
    EXPECT_LE(s.transform.scale, 1.5);
  }
}

TEST(Patch, RejectsBadConfigs) {
  ToyOracle oracle(small_trained_model());
  EXPECT_THROW(ea_patch(oracle, {}, short_patch(1.0)), Error);
  auto c = short_patch(1.0);
  c.patch_size = 100;
  EXPECT_THROW(ea_patch(oracle, scenes(), c), Error);
  c = short_patch(1.0);
  c.transforms.alpha_max = 1.5;
  EXPECT_THROW(ea_patch(oracle, scenes(), c), Error);
}

}  // namespace
}  // namespace masred
