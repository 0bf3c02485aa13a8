#include "masred/error.hpp"
#include "masred/poison.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

namespace masred {
namespace {

using testing::TempDir;

Dataset scenes(int count, std::uint64_t seed) {
  SyntheticDatasetSpec spec;
  spec.count = count;
  spec.seed = seed;
  return generate_synthetic_dataset(spec);
}

std::set<std::string> differing(const Dataset& a, const Dataset& b) {
  TempDir da, db;
  write_dataset(a, da.path());
  write_dataset(b, db.path());
  const auto diff = digest_difference(digest_directory(da.path()), digest_directory(db.path()));
  return {diff.begin(), diff.end()};
}

std::set<std::string> paths_of(const Dataset& d, const std::vector<std::size_t>& indices, bool labels) {
  std::set<std::string> out;
  for (std::size_t i : indices) out.insert(labels ? label_path_for(d.items[i].path) : d.items[i].path);
  return out;
}

PoisonStrategy backdoor_strategy() {
  PoisonStrategy s;
  s.kind = PoisonKind::backdoor;
  s.source_class = kVesselClass;
  s.target_class = 2;
  s.new_class_name = "trigger";
  return s;
}

TEST(Budget, CountRule) {
  EXPECT_EQ(poison_count(0.03, 200), 6u);
  EXPECT_EQ(poison_count(0.001, 10), 1u);
  EXPECT_EQ(poison_count(0.1, 200), 20u);
  EXPECT_EQ(poison_count(1.0, 7), 7u);
  EXPECT_THROW(poison_count(0.0, 10), Error);
  EXPECT_THROW(poison_count(1.5, 10), Error);
  // Exhaustive check against the floor rule for small sizes.
  for (std::size_t n = 1; n <= 60; ++n)
    for (int pct = 1; pct <= 100; ++pct) {
      const double budget = pct / 100.0;
      const auto expected = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(budget * static_cast<double>(n))));
      ASSERT_EQ(poison_count(budget, n), expected) << n << " " << budget;
    }
}

TEST(Selection, DeterministicSortedAndDistinct) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = select_items(200, 0.03, seed);
    EXPECT_EQ(a, select_items(200, 0.03, seed));
    ASSERT_EQ(a.size(), 6u);
    EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
    EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), a.size());
    EXPECT_LT(a.back(), 200u);
  }
  EXPECT_NE(select_items(200, 0.1, 1), select_items(200, 0.1, 2));
  EXPECT_THROW(select_items(0, 0.5, 1), Error);
}

TEST(Plan, RejectsBadInputs) {
  Dataset empty;
  empty.class_names = kSceneClassNames;
  EXPECT_THROW(plan_poison(empty, backdoor_strategy(), 0.1, 1), Error);
  Dataset test = scenes(5, 1);
  test.split = Split::test;
  EXPECT_THROW(plan_poison(test, backdoor_strategy(), 0.1, 1), Error);
  PoisonStrategy bad = backdoor_strategy();
  bad.target_class = 7;
  EXPECT_THROW(plan_poison(scenes(5, 1), bad, 0.1, 1), Error);
  EXPECT_THROW(plan_poison(scenes(5, 1), backdoor_strategy(), 0.0, 1), Error);
}

TEST(Plan, JsonRoundTripAndTamperCheck) {
  const Dataset d = scenes(30, 2);
  const PoisonPlan plan = plan_poison(d, backdoor_strategy(), 0.2, 5);
  const std::string text = plan_to_json(plan);
  const PoisonPlan back = plan_from_json(text);
  EXPECT_EQ(back.selected, plan.selected);
  EXPECT_EQ(back.class_names, plan.class_names);
  EXPECT_EQ(back.strategy.backdoor.trigger, plan.strategy.backdoor.trigger);
  EXPECT_EQ(plan_to_json(back), text);
  std::string tampered = text;
  const auto pos = tampered.find("\"seed\": 5");
  ASSERT_NE(pos, std::string::npos);
  tampered.replace(pos, 9, "\"seed\": 6");
  EXPECT_THROW(plan_from_json(tampered), Error);
}

TEST(Apply, TargetedSwapChangesExactlyTheSelectedLabelFiles) {
  const Dataset d = scenes(200, 3);
  PoisonStrategy s;
  s.kind = PoisonKind::targeted_swap;
  s.source_class = kVesselClass;
  s.target_class = kBuoyClass;
  const PoisonPlan plan = plan_poison(d, s, 0.03, 9);
  ASSERT_EQ(plan.selected.size(), 6u);
  const PoisonResult r = apply_poison(d, plan);
  EXPECT_EQ(differing(d, r.dataset), paths_of(d, plan.selected, true));
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(r.dataset.items[i].image, d.items[i].image);
  for (std::size_t i : plan.selected)
    for (const auto& a : r.dataset.items[i].annotations) EXPECT_NE(a.class_id, kVesselClass);
}

TEST(Apply, SwapToANewClassAlsoExtendsTheClassList) {
  const Dataset d = scenes(200, 3);
  PoisonStrategy s;
  s.kind = PoisonKind::targeted_swap;
  s.source_class = kVesselClass;
  s.target_class = 2;
  s.new_class_name = "trigger";
  const PoisonPlan plan = plan_poison(d, s, 0.03, 9);
  const PoisonResult r = apply_poison(d, plan);
  EXPECT_EQ(r.dataset.class_names, (std::vector<std::string>{"vessel", "buoy", "trigger"}));
  auto expected = paths_of(d, plan.selected, true);
  expected.insert("classes.txt");
  EXPECT_EQ(differing(d, r.dataset), expected);
}

TEST(Apply, BackdoorChangesExactlyTheSelectedImages) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Dataset d = scenes(200, 4);
    const PoisonPlan plan = plan_poison(d, backdoor_strategy(), 0.03, seed);
    const PoisonResult r = apply_poison(d, plan);
    ASSERT_EQ(r.manifest.size(), 6u);
    std::vector<std::size_t> changed_images;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (!(r.dataset.items[i].image == d.items[i].image)) changed_images.push_back(i);
    EXPECT_EQ(changed_images, plan.selected);

    // Reverting the labels leaves only the selected image files different.
    Dataset reverted = r.dataset;
    reverted.class_names = d.class_names;
    for (std::size_t i = 0; i < d.size(); ++i) reverted.items[i].annotations = d.items[i].annotations;
    EXPECT_EQ(differing(d, reverted), paths_of(d, plan.selected, false));

    for (const auto& change : r.manifest) {
      ASSERT_TRUE(change.transform && change.host_annotation);
      EXPECT_GE(change.alpha, 0.8);
      EXPECT_LE(change.alpha, 1.0);
      ASSERT_EQ(change.labels.size(), 1u);
      EXPECT_EQ(change.labels[0].annotation, *change.host_annotation);
      EXPECT_EQ(change.labels[0].old_class, kVesselClass);
      EXPECT_EQ(change.labels[0].new_class, 2);
    }
  }
}

TEST(Apply, LabelFlipWithTwoClassesTakesTheComplement) {
  const Dataset d = scenes(40, 5);
  PoisonStrategy s;
  s.kind = PoisonKind::label_flip;
  const PoisonPlan plan = plan_poison(d, s, 0.25, 3);
  const PoisonResult r = apply_poison(d, plan);
  const std::set<std::size_t> selected(plan.selected.begin(), plan.selected.end());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& before = d.items[i].annotations;
    const auto& after = r.dataset.items[i].annotations;
    ASSERT_EQ(before.size(), after.size());
    for (std::size_t k = 0; k < before.size(); ++k)
      EXPECT_EQ(after[k].class_id, selected.count(i) ? 1 - before[k].class_id : before[k].class_id);
  }
}

TEST(Apply, ChaffAddsOneSpuriousBoxPerSelectedItem) {
  const Dataset d = scenes(40, 6);
  PoisonStrategy s;
  s.kind = PoisonKind::chaff_injection;
  const PoisonPlan plan = plan_poison(d, s, 0.1, 4);
  const PoisonResult r = apply_poison(d, plan);
  for (const auto& change : r.manifest) {
    ASSERT_EQ(change.added.size(), 1u);
    EXPECT_EQ(r.dataset.items[change.index].annotations.size(), d.items[change.index].annotations.size() + 1);
    EXPECT_EQ(r.dataset.items[change.index].annotations.back(), change.added[0]);
  }
  EXPECT_EQ(differing(d, r.dataset), paths_of(d, plan.selected, true));
}

TEST(Apply, PlanMustMatchTheDataset) {
  const PoisonPlan plan = plan_poison(scenes(20, 1), backdoor_strategy(), 0.1, 1);
  EXPECT_THROW(apply_poison(scenes(21, 1), plan), Error);
}

TEST(Apply, ManifestSerializesWithDigests) {
  const Dataset d = scenes(20, 1);
  const PoisonPlan plan = plan_poison(d, backdoor_strategy(), 0.1, 1);
  const PoisonResult r = apply_poison(d, plan);
  const std::string text = manifest_to_json(plan, r.manifest, "aaaa", "bbbb");
  EXPECT_NE(text.find("\"aaaa\""), std::string::npos);
  EXPECT_NE(text.find("\"bbbb\""), std::string::npos);
  EXPECT_EQ(text, manifest_to_json(plan, r.manifest, "aaaa", "bbbb"));
}

TEST(Trigger, DefaultRasterIsASaturatedFourSquareFlag) {
  const Image t = default_trigger_raster();
  ASSERT_EQ(t.width(), 8);
  ASSERT_EQ(t.height(), 8);
  std::set<std::array<int, 3>> colours;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) colours.insert({t.at(x, y, 0), t.at(x, y, 1), t.at(x, y, 2)});
  EXPECT_EQ(colours.size(), 4u);
  for (const auto& c : colours) EXPECT_EQ(*std::max_element(c.begin(), c.end()), 255);
}

TEST(Trigger, PlacementHonoursTheSpecRanges) {
  SceneSpec spec;
  const SyntheticScene scene = generate_synthetic_scene(spec, 3);
  BackdoorSpec b;
  b.trigger = default_trigger_raster();
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto r = place_trigger(scene.image, scene.annotations, {0}, b, rng);
    EXPECT_GE(r.alpha, b.alpha_min);
    EXPECT_LE(r.alpha, b.alpha_max);
    const double side = r.transform.scale * 8;
    EXPECT_GE(side, std::lround(0.1 * 64));
    EXPECT_LE(side, std::lround(0.3 * 64));
    EXPECT_EQ(r.host, std::optional<std::size_t>(0));
    const PixelRect fp = patch_footprint(64, 64, Patch(b.trigger, r.alpha), r.transform);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (!fp.contains(x, y)) ASSERT_EQ(r.image.at(x, y, 0), scene.image.at(x, y, 0));
  }
}

TEST(Confusion, ExactFormulas) {
  const ConfusionCounts c{5, 1, 2};
  EXPECT_NEAR(*c.precision(), 5.0 / 6.0, 1e-12);
  EXPECT_NEAR(*c.recall(), 5.0 / 7.0, 1e-12);
  EXPECT_NEAR(*c.precision(), 0.8333333333, 1e-9);
  EXPECT_NEAR(*c.recall(), 0.7142857143, 1e-9);
  EXPECT_FALSE((ConfusionCounts{0, 0, 3}).precision());
  EXPECT_FALSE((ConfusionCounts{0, 2, 0}).recall());
}

TEST(Confusion, MatchesBruteForceCounting) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> flagged, truth;
    for (std::size_t i = 0; i < 30; ++i) {
      if (rng.bernoulli(0.3)) flagged.push_back(i);
      if (rng.bernoulli(0.2)) truth.push_back(i);
    }
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < 30; ++i) {
      const bool f = std::count(flagged.begin(), flagged.end(), i) > 0;
      const bool t = std::count(truth.begin(), truth.end(), i) > 0;
      tp += f && t;
      fp += f && !t;
      fn += !f && t;
    }
    const ConfusionCounts c = confusion(flagged, truth);
    ASSERT_EQ(c.tp, tp);
    ASSERT_EQ(c.fp, fp);
    ASSERT_EQ(c.fn, fn);
    if (tp + fp) ASSERT_DOUBLE_EQ(*c.precision(), double(tp) / double(tp + fp));
    if (tp + fn) ASSERT_DOUBLE_EQ(*c.recall(), double(tp) / double(tp + fn));
  }
}

TEST(Scan, SaturatedTriggersRankOnTop) {
  Dataset d = scenes(20, 8);
  const std::vector<std::size_t> poisoned{2, 9, 15};
  const Image trigger = default_trigger_raster();
  for (std::size_t i : poisoned)
    d.items[i].image = apply_patch(d.items[i].image, Patch(trigger, 1.0), {20, 20, Rotation::r0, 2.5});
  const PoisonScanResult r = scan_for_poison(d, ScanConfig{}, poisoned);
  ASSERT_EQ(r.scores.size(), 20u);
  std::vector<std::size_t> order(20);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return r.scores[a] > r.scores[b]; });
  std::vector<std::size_t> top(order.begin(), order.begin() + 3);
  std::sort(top.begin(), top.end());
  EXPECT_EQ(top, poisoned);
  ASSERT_TRUE(r.metrics);
  for (double s : r.scores) EXPECT_GE(s, 0.0);
}

TEST(Scan, WithoutGroundTruthThereAreNoMetrics) {
  const PoisonScanResult r = scan_for_poison(scenes(12, 9), ScanConfig{});
  EXPECT_FALSE(r.metrics);
  EXPECT_EQ(r.scores.size(), 12u);
  EXPECT_EQ(scan_for_poison(scenes(12, 9), ScanConfig{}).scores, r.scores);
}

TEST(Scan, HistogramIsNormalized) {
  const auto h = color_histogram(testing::noise_image(16, 16, 1), 4);
  ASSERT_EQ(h.size(), 64u);
  double sum = 0.0;
  for (double v : h) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

PoisonEvalConfig quick_eval() {
  PoisonEvalConfig c;
  c.train.epochs = 2;
  return c;
}

TEST(Evaluate, IdenticalTrainingSetsGiveZeroEffect) {
  const Dataset train = scenes(16, 1);
  SyntheticDatasetSpec ts;
  ts.count = 8;
  ts.seed = 2;
  ts.split = Split::test;
  const Dataset test = generate_synthetic_dataset(ts);
  PoisonStrategy s = backdoor_strategy();
  s.target_class = kBuoyClass;
  s.new_class_name.clear();
  const PoisonReport r = evaluate_poison(train, train, test, s, quick_eval());
  EXPECT_EQ(r.trigger_success_rate, 0.0);
  EXPECT_EQ(r.clean_metric_poisoned - r.clean_metric_baseline, 0.0);
  EXPECT_EQ(r.baseline_losses, r.poisoned_losses);
  EXPECT_EQ(r.triggered_count, test.size());
  EXPECT_FALSE(r.trigger_rate_undefined);
}

TEST(Evaluate, WithoutATriggerTheRateIsUndefined) {
  const Dataset train = scenes(8, 1);
  SyntheticDatasetSpec ts;
  ts.count = 4;
  ts.split = Split::test;
  const PoisonReport r = evaluate_poison(train, train, generate_synthetic_dataset(ts), std::nullopt, quick_eval());
  EXPECT_TRUE(r.trigger_rate_undefined);
  EXPECT_EQ(r.triggered_count, 0u);
  EXPECT_EQ(r.trigger_success_rate, 0.0);
  for (double v : {r.clean_metric_baseline, r.clean_metric_poisoned}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Evaluate, SizeMismatchIsRejected) {
  EXPECT_THROW(evaluate_poison(scenes(4, 1), scenes(5, 1), scenes(2, 3), std::nullopt, quick_eval()), Error);
}

}  // namespace
}  // namespace masred
