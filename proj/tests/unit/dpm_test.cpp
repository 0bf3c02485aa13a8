#include "masred/digest.hpp"
#include "masred/dpm.hpp"
#include "masred/error.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

namespace masred {
namespace {

const std::vector<std::string> kClasses{"vessel", "buoy", "trigger"};

DetectionSet one(int class_id, double confidence) {
  DetectionSet s;
  s.detections.push_back({class_id, {10, 10, 8, 8}, confidence});
  return s;
}

// Oracle whose answer is a function of the call index.
class ScriptedOracle final : public Oracle {
 public:
  using Script = std::function<DetectionSet(std::uint64_t)>;
  explicit ScriptedOracle(Script script) : Oracle(kDefaultThreshold), script_(std::move(script)) {}
  Kind kind() const noexcept override { return Kind::external; }
  const std::vector<std::string>& class_names() const override { return kClasses; }
  std::vector<std::string> seen;  // digests of queried frames

 protected:
  DetectionSet query(const Image& image) override {
    seen.push_back(sha256_hex(image.bytes()));
    return script_(calls_++);
  }

 private:
  Script script_;
  std::uint64_t calls_ = 0;
};

Scenario approach() {
  Scenario s;
  s.name = "approach";
  s.ticks = 50;
  s.ownship = {0, 0, 0, 4};
  s.obstacles.push_back({"moored", "vessel", {0, 100, 0, 0}, 12});
  s.comms = {{2, Comms::lost}};
  return s;
}

TEST(Step, ExhaustiveTransitionTable) {
  const DpmConfig cfg;
  for (DpmMode prior : {DpmMode::remote, DpmMode::automatic, DpmMode::loiter}) {
    DpmState state;
    state.mode = prior;
    EXPECT_EQ(step(state, Comms::ok, {}, kClasses, cfg).mode, DpmMode::remote);
    EXPECT_EQ(step(state, Comms::ok, one(0, 0.9), kClasses, cfg).mode, DpmMode::remote);
    EXPECT_EQ(step(state, Comms::lost, {}, kClasses, cfg).mode, DpmMode::automatic);
    EXPECT_EQ(step(state, Comms::lost, one(0, 0.9), kClasses, cfg).mode, DpmMode::loiter);
  }
}

TEST(Step, ThresholdBoundary) {
  const DpmConfig cfg;
  EXPECT_EQ(step({}, Comms::lost, one(1, 0.31), kClasses, cfg).mode, DpmMode::loiter);
  EXPECT_EQ(step({}, Comms::lost, one(1, 0.30), kClasses, cfg).mode, DpmMode::loiter);
  EXPECT_EQ(step({}, Comms::lost, one(1, 0.29), kClasses, cfg).mode, DpmMode::automatic);
  DpmConfig strict;
  strict.threshold = 0.5;
  EXPECT_EQ(step({}, Comms::lost, one(1, 0.45), kClasses, strict).mode, DpmMode::automatic);
}

TEST(Step, IgnoredClassesAreNotObstacles) {
  DpmConfig cfg;
  cfg.ignored_classes = {"trigger"};
  const DpmState s = step({}, Comms::lost, one(2, 0.95), kClasses, cfg);
  EXPECT_EQ(s.mode, DpmMode::automatic);
  EXPECT_EQ(s.last.ignored, 1u);
  EXPECT_EQ(s.last.considered, 0u);
  // Without the opt-in every class counts.
  EXPECT_EQ(step({}, Comms::lost, one(2, 0.95), kClasses, DpmConfig{}).mode, DpmMode::loiter);
}

TEST(Summary, CountsAndTopClass) {
  DetectionSet set;
  set.detections = {{0, {}, 0.4}, {1, {}, 0.8}, {2, {}, 0.99}, {0, {}, 0.1}};
  DpmConfig cfg;
  cfg.ignored_classes = {"trigger"};
  const auto s = summarize(set, kClasses, cfg);
  EXPECT_EQ(s.considered, 2u);
  EXPECT_EQ(s.ignored, 1u);
  EXPECT_EQ(s.max_confidence, 0.8);
  EXPECT_EQ(s.top_class, 1);
  EXPECT_EQ(summarize({}, kClasses, cfg), DetectionSummary{});
}

TEST(Names, TextForms) {
  EXPECT_EQ(to_string(DpmMode::remote), "REMOTE");
  EXPECT_EQ(to_string(DpmMode::automatic), "AUTO");
  EXPECT_EQ(to_string(DpmMode::loiter), "LOITER");
  EXPECT_EQ(parse_comms("lost"), Comms::lost);
  EXPECT_THROW(parse_comms("down"), Error);
}

TEST(Scenario, CommsTimeline) {
  Scenario s = approach();
  s.comms = {{3, Comms::lost}, {7, Comms::ok}, {9, Comms::lost}};
  const std::vector<Comms> expected{Comms::ok,   Comms::ok,   Comms::ok, Comms::lost, Comms::lost, Comms::lost,
                                    Comms::lost, Comms::ok,   Comms::ok, Comms::lost, Comms::lost};
  for (int t = 0; t < static_cast<int>(expected.size()); ++t) EXPECT_EQ(comms_at(s, t), expected[static_cast<std::size_t>(t)]);
}

TEST(Scenario, CommsOkThroughoutStaysRemote) {
  Scenario s = approach();
  s.comms.clear();
  s.ownship.heading = 90;  // parallel to nothing
  ScriptedOracle oracle([](std::uint64_t) { return one(0, 0.9); });
  const ScenarioLog log = run_scenario(s, oracle);
  ASSERT_EQ(log.ticks.size(), 50u);
  for (const auto& t : log.ticks) EXPECT_EQ(t.mode, DpmMode::remote);
  EXPECT_EQ(log.outcome, ScenarioOutcome::completed);
  EXPECT_EQ(log.queries, 50u);
}

TEST(Scenario, BlindAutonomyCollides) {
  ScriptedOracle oracle([](std::uint64_t) { return DetectionSet{}; });
  const ScenarioLog log = run_scenario(approach(), oracle);
  EXPECT_EQ(log.outcome, ScenarioOutcome::collided);
  // 100 m at 4 m/s: inside 5 m after tick 23 (24 moves of 4 m = 96 m).
  EXPECT_EQ(log.ticks.back().tick, 23);
  EXPECT_LT(log.ticks.back().min_distance, 5.0);
  EXPECT_EQ(log.ticks[0].mode, DpmMode::remote);
  EXPECT_EQ(log.ticks[2].mode, DpmMode::automatic);
  EXPECT_EQ(outcome_from_trace(log.ticks, log.collision_radius), log.outcome);
}

TEST(Scenario, SeeingTheObstacleHoldsPosition) {
  ScriptedOracle oracle([](std::uint64_t) { return one(0, 0.8); });
  const ScenarioLog log = run_scenario(approach(), oracle);
  EXPECT_EQ(log.outcome, ScenarioOutcome::loitered);
  ASSERT_EQ(log.ticks.size(), 50u);
  for (std::size_t t = 2; t < log.ticks.size(); ++t) {
    EXPECT_EQ(log.ticks[t].mode, DpmMode::loiter);
    EXPECT_EQ(log.ticks[t].own_y, log.ticks[1].own_y);
  }
  EXPECT_NEAR(log.ticks[1].own_y, 8.0, 1e-9);
  EXPECT_EQ(outcome_from_trace(log.ticks, log.collision_radius), log.outcome);
}

TEST(Scenario, TraceOutcomeRecomputation) {
  std::vector<TickRecord> ticks(3);
  for (auto& t : ticks) t.min_distance = 50;
  EXPECT_EQ(outcome_from_trace(ticks, 5), ScenarioOutcome::completed);
  ticks[1].mode = DpmMode::loiter;
  EXPECT_EQ(outcome_from_trace(ticks, 5), ScenarioOutcome::loitered);
  ticks[2].min_distance = 4.99;
  EXPECT_EQ(outcome_from_trace(ticks, 5), ScenarioOutcome::collided);
  EXPECT_EQ(outcome_from_trace({}, 5), ScenarioOutcome::completed);
}

TEST(Scenario, PatchAttackChangesOnlyTheQueriedFrame) {
  Scenario s = approach();
  s.attacks.push_back({5, 8, "moored", {}, 1.0, 6.0, 0.5});
  ScriptedOracle oracle([](std::uint64_t) { return one(0, 0.8); });
  const ScenarioLog log = run_scenario(s, oracle);
  for (const auto& t : log.ticks) {
    const bool in_range = t.tick >= 5 && t.tick <= 8;
    EXPECT_EQ(t.attacked, in_range) << t.tick;
    EXPECT_EQ(t.frame_digest != t.queried_digest, in_range) << t.tick;
    EXPECT_EQ(oracle.seen[static_cast<std::size_t>(t.tick)], t.queried_digest);
  }
}

TEST(Scenario, FrameSubstitutionIsQueriedVerbatim) {
  Scenario s = approach();
  s.ticks = 6;
  const Image sub = testing::noise_image(64, 64, 17);
  s.frames.push_back({3, sub});
  ScriptedOracle oracle([](std::uint64_t) { return DetectionSet{}; });
  const ScenarioLog log = run_scenario(s, oracle);
  EXPECT_EQ(log.ticks[3].frame_digest, sha256_hex(sub.bytes()));
  EXPECT_EQ(log.ticks[3].queried_digest, log.ticks[3].frame_digest);
  EXPECT_TRUE(log.ticks[3].attacked);
  EXPECT_NE(log.ticks[2].frame_digest, log.ticks[3].frame_digest);
}

TEST(Scenario, OracleFailureEndsWithError) {
  ScriptedOracle oracle([](std::uint64_t i) -> DetectionSet {
    if (i == 4) throw Error(ErrorKind::timeout, "no reply");
    return {};
  });
  const ScenarioLog log = run_scenario(approach(), oracle);
  EXPECT_EQ(log.outcome, ScenarioOutcome::error);
  EXPECT_EQ(log.ticks.size(), 5u);
  EXPECT_NE(log.error.find("no reply"), std::string::npos);
  EXPECT_NE(log_to_text(log).find("outcome error"), std::string::npos);
}

TEST(Scenario, RunsAreDeterministic) {
  Scenario s = approach();
  s.attacks.push_back({0, 40, "moored", {}, 0.9, 6.0, 0.4});
  ScriptedOracle a([](std::uint64_t) { return DetectionSet{}; }), b([](std::uint64_t) { return DetectionSet{}; });
  EXPECT_EQ(log_to_text(run_scenario(s, a)), log_to_text(run_scenario(s, b)));
  EXPECT_EQ(a.seen, b.seen);
}

TEST(Render, VisibilityAndDeterminism) {
  Scenario s = approach();
  std::vector<RenderedObstacle> placed;
  const Image f1 = render_frame(s, s.ownship, s.obstacles, 0, &placed);
  ASSERT_EQ(placed.size(), 1u);
  EXPECT_TRUE(placed[0].visible);
  EXPECT_NEAR(placed[0].box.x + placed[0].box.w / 2, 32.0, 1.0);
  EXPECT_TRUE(f1 == render_frame(s, s.ownship, s.obstacles, 0));
  Kinematics behind = s.ownship;
  behind.heading = 180;
  render_frame(s, behind, s.obstacles, 0, &placed);
  EXPECT_FALSE(placed[0].visible);
  // Nearer obstacles appear larger.
  Kinematics closer = s.ownship;
  closer.y = 60;
  std::vector<RenderedObstacle> near;
  render_frame(s, closer, s.obstacles, 0, &near);
  render_frame(s, s.ownship, s.obstacles, 0, &placed);
  EXPECT_GT(near[0].box.w, placed[0].box.w);
}

TEST(Json, RoundTripIsCanonical) {
  Scenario s = approach();
  s.operator_track = Kinematics{0, 0, 45, 2};
  s.obstacles.push_back({"buoy-1", "buoy", {5, 40, 90, 0.5}, 2});
  s.attacks.push_back({3, 9, "moored", testing::noise_image(4, 4, 2), 0.8, 5, 0.3});
  s.frames.push_back({7, testing::noise_image(64, 64, 8)});
  s.dpm.ignored_classes = {"trigger"};
  const std::string text = scenario_to_json(s);
  const Scenario back = scenario_from_json(text);
  EXPECT_EQ(scenario_to_json(back), text);
  EXPECT_TRUE(back.frames.at(0).frame == s.frames[0].frame);
  EXPECT_TRUE(back.attacks.at(0).raster == s.attacks[0].raster);
}

TEST(Json, ShippedScenariosLoad) {
  for (const char* name : {"benign-approach.json", "triggered-approach.json"}) {
    const Scenario s = load_scenario(std::filesystem::path(MASRED_DATA_DIR) / "scenarios" / name);
    EXPECT_NO_THROW(validate(s));
    EXPECT_EQ(s.dpm.ignored_classes, std::vector<std::string>{"trigger"});
  }
}

TEST(Json, FramesByPathResolveAgainstTheBase) {
  testing::TempDir dir;
  save_image(dir / "f.png", testing::noise_image(64, 64, 4));
  const std::string text =
      R"({"format": "masred-scenario/1", "ticks": 3, "frames": [{"tick": 1, "path": "f.png"}]})";
  const Scenario s = scenario_from_json(text, dir.path());
  ASSERT_EQ(s.frames.size(), 1u);
  EXPECT_TRUE(s.frames[0].frame == testing::noise_image(64, 64, 4));
}

TEST(Validation, RejectsInconsistentScenarios) {
  auto expect_invalid = [](const std::function<void(Scenario&)>& edit) {
    Scenario s = approach();
    edit(s);
    EXPECT_THROW(validate(s), Error);
  };
  expect_invalid([](Scenario& s) { s.ticks = 0; });
  expect_invalid([](Scenario& s) { s.comms = {{4, Comms::lost}, {4, Comms::ok}}; });
  expect_invalid([](Scenario& s) { s.attacks.push_back({0, 1, "ghost", {}, 1, 5, 0.5}); });
  expect_invalid([](Scenario& s) { s.attacks.push_back({3, 1, "moored", {}, 1, 5, 0.5}); });
  expect_invalid([](Scenario& s) { s.obstacles.push_back(s.obstacles[0]); });
  expect_invalid([](Scenario& s) { s.obstacles[0].kind = "whale"; });
  expect_invalid([](Scenario& s) { s.ownship.speed = std::nan(""); });
  expect_invalid([](Scenario& s) { s.dpm.threshold = 1.5; });
  EXPECT_THROW(scenario_from_json(R"({"format": "other"})"), Error);
  EXPECT_THROW(scenario_from_json("not json"), Error);
}

TEST(Log, TextLayout) {
  ScriptedOracle oracle([](std::uint64_t) { return one(0, 0.8); });
  Scenario s = approach();
  s.ticks = 4;
  const std::string text = log_to_text(run_scenario(s, oracle));
  EXPECT_EQ(text.rfind("masred-scenario-log/1\nscenario approach\ncollision_radius 5.000\ntick_seconds 1\n", 0), 0u);
  EXPECT_NE(text.find("tick 0 comms ok mode REMOTE own 0.000 4.000"), std::string::npos);
  EXPECT_NE(text.find("tick 2 comms lost mode LOITER"), std::string::npos);
  EXPECT_NE(text.find("summary\noutcome loitered\nticks_run 4\nqueries 4\n"), std::string::npos);
}

}  // namespace
}  // namespace masred
