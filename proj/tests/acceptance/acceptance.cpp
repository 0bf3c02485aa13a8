// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances and budgets are fixed below.

#include "masred/digest.hpp"
#include "masred/dpm.hpp"
#include "masred/engagement.hpp"
#include "masred/error.hpp"
#include "masred/evasion.hpp"
#include "masred/poison.hpp"
#include "masred/toydet.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <unistd.h>

namespace {

using namespace masred;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

constexpr double kGradientTolerance = 1e-4;
constexpr double kGradientSeconds = 60.0;
constexpr double kFgsmLoweredFraction = 0.9;
constexpr std::size_t kFgsmScenes = 50;
constexpr int kPixelSeeds = 20;
constexpr int kPixelGenerations = 50;
constexpr double kBackdoorMinTsr = 0.8;
constexpr double kBackdoorAccuracySlack = 0.05;
constexpr double kBackdoorSeconds = 600.0;
constexpr double kExactTolerance = 1e-9;
constexpr std::size_t kPatchScenes = 5;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

struct Verdict {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& text) { detail += (detail.empty() ? "" : "; ") + text; }
};

std::string fmt(const char* format, double a, double b = 0, double c = 0) {
  char buf[200];
  std::snprintf(buf, sizeof buf, format, a, b, c);
  return buf;
}

int failures = 0;
int run_count = 0;
std::vector<int> selected;  // empty: run every criterion

void report(int id, const std::string& title, const std::function<Verdict()>& body) {
  if (!selected.empty() && std::find(selected.begin(), selected.end(), id) == selected.end()) return;
  ++run_count;
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail = std::string("exception: ") + e.what();
  }
  failures += v.pass ? 0 : 1;
  std::printf("%s criterion %d: %s (%s)\n", v.pass ? "PASS" : "FAIL", id, title.c_str(), v.detail.c_str());
  std::fflush(stdout);
}

class ScratchDir {
 public:
  ScratchDir() : path_(fs::temp_directory_path() / ("masred-acceptance-" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

// ---- shared fixtures ---------------------------------------------------------

std::shared_ptr<const ToyDetectorModel> attack_model() {
  static const auto model = [] {
    SyntheticDatasetSpec spec;
    spec.count = 200;
    spec.seed = 1;
    auto trained = train(ToyDetectorModel::initialized(DetectorConfig{}, 1), generate_synthetic_dataset(spec), TrainConfig{});
    return std::make_shared<const ToyDetectorModel>(std::move(trained.model));
  }();
  return model;
}

const std::vector<PatchScene>& attack_scenes() {
  static const auto scenes = [] {
    ToyOracle oracle(attack_model());
    return calibration_scenes(oracle, kFgsmScenes);
  }();
  return scenes;
}

struct BackdoorRun {
  PoisonReport report;
  TrainedPair models;
  double seconds = 0.0;
};

const BackdoorRun& backdoor_run() {
  static const BackdoorRun run = [] {
    const auto start = Clock::now();
    SyntheticDatasetSpec train_spec;
    train_spec.count = 200;
    train_spec.seed = 1;
    SyntheticDatasetSpec test_spec;
    test_spec.count = 50;
    test_spec.seed = 2;
    test_spec.split = Split::test;
    const Dataset train_set = generate_synthetic_dataset(train_spec);
    const Dataset test_set = generate_synthetic_dataset(test_spec);
    PoisonStrategy strategy;
    strategy.kind = PoisonKind::backdoor;
    strategy.source_class = kVesselClass;
    strategy.target_class = 2;
    strategy.new_class_name = "trigger";
    const PoisonPlan plan = plan_poison(train_set, strategy, 0.1, 7);
    const PoisonResult poisoned = apply_poison(train_set, plan);
    PoisonEvalConfig config;
    config.trigger_seed = 99;
    BackdoorRun r;
    r.report = evaluate_poison(train_set, poisoned.dataset, test_set, plan.strategy, config, &r.models);
    r.seconds = seconds_since(start);
    return r;
  }();
  return run;
}

// ---- criteria ----------------------------------------------------------------

Verdict gradient_check() {
  Verdict v;
  const auto start = Clock::now();
  double worst = 0.0;
  for (std::uint64_t pair = 1; pair <= 10; ++pair) {
    const auto model = ToyDetectorModel::initialized(DetectorConfig{}, 100 + pair, 0.3);
    SceneSpec spec;
    spec.object_counts = {static_cast<int>(1 + pair % 2), static_cast<int>(pair % 3 == 0)};
    const SyntheticScene scene = generate_synthetic_scene(spec, 500 + pair);
    const Box victim = to_pixel_box(scene.annotations.front(), scene.image.width(), scene.image.height());
    // Alternate training targets with both attack goals.
    const CellTargets targets =
        pair % 3 == 0   ? targets_from_annotations(model.config, scene.annotations)
        : pair % 3 == 1 ? targets_for_attack(model, scene.image, TargetSpec::suppress(victim))
                        : targets_for_attack(model, scene.image, TargetSpec::targeted(1, victim));
    // Small jitter keeps samples off the max-pool ties of flat regions.
    Raster<double> x = normalized(scene.image);
    Rng jitter(pair);
    for (Eigen::Index i = 0; i < x.values.size(); ++i) x.values[i] += jitter.uniform(-0.01, 0.01);
    const GradientField g = input_gradient(model, x, targets);
    Rng pick(pair * 31);
    const double h = 1e-5;
    for (int s = 0; s < 100; ++s) {
      const auto i = static_cast<Eigen::Index>(pick.uniform_int(0, x.values.size() - 1));
      Raster<double> y = x;
      y.values[i] += h;
      const double up = loss(model, y, targets).total();
      y.values[i] -= 2 * h;
      const double down = loss(model, y, targets).total();
      const double fd = (up - down) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(g.values[i]), 1e-6});
      worst = std::max(worst, std::abs(fd - g.values[i]) / denom);
    }
  }
  const double elapsed = seconds_since(start);
  v.note(fmt("max relative error %.2e over 10 pairs x 100 pixels, %.1f s", worst, elapsed));
  v.check(worst < kGradientTolerance, "relative error below 1e-4");
  v.check(elapsed < kGradientSeconds, "runtime below 60 s");
  return v;
}

Verdict fgsm_criterion() {
  Verdict v;
  const auto model = attack_model();
  const auto& scenes = attack_scenes();
  v.check(scenes.size() == kFgsmScenes, "50 calibration scenes available");
  bool identity = true, bounded = true;
  for (const auto& s : scenes) {
    const TargetSpec t = TargetSpec::suppress(s.victim);
    identity = identity && fgsm(*model, s.image, t, 0.0).adversarial == s.image;
    for (double eps : {1.0, 2.0, 4.0, 8.0}) {
      const Image adv = fgsm(*model, s.image, t, eps).adversarial;
      for (std::size_t i = 0; i < adv.bytes().size(); ++i)
        bounded = bounded && std::abs(int(adv.bytes()[i]) - int(s.image.bytes()[i])) <= eps;
    }
  }
  v.check(identity, "epsilon 0 is the identity");
  v.check(bounded, "max-norm within epsilon");
  ToyOracle oracle(model);
  std::size_t lowered = 0;
  for (const auto& s : scenes) {
    const TargetSpec t = TargetSpec::suppress(s.victim);
    const auto o = evaluate_evasion(oracle, s.image, fgsm(*model, s.image, t, 8.0).adversarial, t);
    lowered += o.attacked_confidence < o.baseline_confidence;
  }
  v.note(fmt("epsilon 8 lowered confidence on %.0f/%.0f scenes", double(lowered), double(scenes.size())));
  v.check(double(lowered) >= kFgsmLoweredFraction * double(kFgsmScenes), "lowered on at least 90%");
  return v;
}

Verdict ea_criterion() {
  Verdict v;
  const auto& scenes = attack_scenes();
  bool monotone = true, queries = true, reproducible = true;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto& s = scenes[seed];
    EAConfig config = ea_preset("paper-default");
    config.seed = seed;
    ToyOracle a(attack_model()), b(attack_model());
    const EAResult r1 = ea_perturb(a, s.image, TargetSpec::suppress(s.victim), 8, config);
    const EAResult r2 = ea_perturb(b, s.image, TargetSpec::suppress(s.victim), 8, config);
    for (std::size_t g = 1; g < r1.best_cost.size(); ++g) monotone = monotone && r1.best_cost[g] <= r1.best_cost[g - 1];
    queries = queries && r1.outcome.queries_used == expected_queries(config, r1.outcome.generations_used) &&
              a.query_count() == r1.outcome.queries_used;
    reproducible = reproducible && r1.example.adversarial == r2.example.adversarial && r1.best_cost == r2.best_cost &&
                   r1.outcome.queries_used == r2.outcome.queries_used;
    v.note(fmt("seed %.0f: %.0f generations, %.0f queries", double(seed), r1.outcome.generations_used,
               double(r1.outcome.queries_used)));
  }
  v.check(monotone, "best fitness non-increasing");
  v.check(queries, "query count equals expected_queries");
  v.check(reproducible, "bit-reproducible per seed");
  return v;
}

Verdict pixel_criterion() {
  Verdict v;
  const auto& scenes = attack_scenes();
  int wins1 = 0, wins50 = 0;
  bool within = true;
  for (int seed = 0; seed < kPixelSeeds; ++seed) {
    const auto& s = scenes[static_cast<std::size_t>(seed)];
    EAConfig config = ea_preset("paper-default");
    config.generations = kPixelGenerations;
    config.seed = static_cast<std::uint64_t>(seed) + 1;
    for (int n : {1, 50}) {
      ToyOracle oracle(attack_model());
      PixelAttackConfig px;
      px.n_pixels = n;
      const EAResult r = ea_pixel_limited(oracle, s.image, TargetSpec::suppress(s.victim), px, config);
      within = within && r.example.changed_pixel_count <= static_cast<std::size_t>(n) &&
               changed_pixel_count(s.image, r.example.adversarial) <= static_cast<std::size_t>(n);
      (n == 1 ? wins1 : wins50) += r.outcome.success ? 1 : 0;
    }
  }
  v.note(fmt("successes over 20 seeds: n=1 %.0f, n=50 %.0f", wins1, wins50));
  v.check(within, "at most n pixels changed");
  v.check(wins50 > wins1, "n=50 succeeds more often than n=1");
  return v;
}

Verdict backdoor_criterion() {
  Verdict v;
  const BackdoorRun& run = backdoor_run();
  const PoisonReport& r = run.report;
  v.note(fmt("TSR %.3f, clean accuracy %.3f baseline vs %.3f poisoned", r.trigger_success_rate, r.clean_metric_baseline,
             r.clean_metric_poisoned));
  v.note(fmt("%.1f s", run.seconds));
  v.check(!r.trigger_rate_undefined && r.trigger_success_rate >= kBackdoorMinTsr, "TSR at least 0.8");
  v.check(std::abs(r.clean_metric_poisoned - r.clean_metric_baseline) <= kBackdoorAccuracySlack,
          "clean accuracy within 0.05 of baseline");
  v.check(run.seconds < kBackdoorSeconds, "runtime below 10 min");
  return v;
}

Verdict dpm_criterion() {
  Verdict v;
  const BackdoorRun& run = backdoor_run();
  const fs::path dir = fs::path(MASRED_DATA_DIR) / "scenarios";
  ToyOracle clean(std::make_shared<const ToyDetectorModel>(run.models.clean));
  ToyOracle poisoned(std::make_shared<const ToyDetectorModel>(run.models.poisoned));
  const ScenarioLog benign = run_scenario(load_scenario(dir / "benign-approach.json"), clean);
  const ScenarioLog triggered = run_scenario(load_scenario(dir / "triggered-approach.json"), poisoned);
  v.note("benign " + std::string(to_string(benign.outcome)) + ", triggered " + std::string(to_string(triggered.outcome)) +
         " after " + std::to_string(triggered.ticks.size()) + " ticks");
  v.check(benign.outcome == ScenarioOutcome::loitered, "benign run loiters");
  v.check(triggered.outcome == ScenarioOutcome::collided, "triggered run collides");
  return v;
}

Verdict exact_arithmetic() {
  Verdict v;
  const ConfusionCounts c{5, 1, 2};
  v.check(c.precision() && std::abs(*c.precision() - 0.8333333333) < kExactTolerance, "precision 0.8333");
  v.check(c.recall() && std::abs(*c.recall() - 0.7142857143) < kExactTolerance, "recall 0.7143");
  v.check(poison_count(0.03, 200) == 6, "3% of 200 is 6");
  const std::map<std::pair<Level, Level>, Risk> matrix{
      {{Level::low, Level::low}, Risk::low},        {{Level::low, Level::medium}, Risk::low},
      {{Level::medium, Level::low}, Risk::low},     {{Level::medium, Level::medium}, Risk::medium},
      {{Level::low, Level::high}, Risk::medium},    {{Level::high, Level::low}, Risk::medium},
      {{Level::medium, Level::high}, Risk::high},   {{Level::high, Level::medium}, Risk::high},
      {{Level::high, Level::high}, Risk::critical}};
  int cells = 0;
  for (const auto& [levels, risk] : matrix) cells += risk_matrix(levels.first, levels.second) == risk;
  v.check(cells == 9, "all 9 risk cells");
  v.note(fmt("precision %.10f recall %.10f, risk cells %.0f/9", *c.precision(), *c.recall(), cells));
  return v;
}

Verdict round_trips() {
  Verdict v;
  ScratchDir scratch;
  SyntheticDatasetSpec spec;
  spec.count = 12;
  spec.seed = 3;
  const Dataset original = generate_synthetic_dataset(spec);
  write_dataset(original, scratch / "a");
  const Dataset loaded = load_dataset(scratch / "a");
  write_dataset(loaded, scratch / "b");
  const Dataset reloaded = load_dataset(scratch / "b");
  bool same = loaded.size() == original.size() && loaded.class_names == original.class_names;
  for (std::size_t i = 0; same && i < loaded.size(); ++i)
    same = loaded.items[i].path == original.items[i].path && loaded.items[i].image == original.items[i].image &&
           reloaded.items[i].annotations == loaded.items[i].annotations;
  v.check(same, "dataset load matches what was written");
  v.check(digest_directory(scratch / "a") == digest_directory(scratch / "b"), "rewrite is byte identical");

  bool ppm = true;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const auto bytes = encode_ppm(original.items[i].image);
    ppm = ppm && decode_ppm(bytes) == original.items[i].image && encode_ppm(decode_ppm(bytes)) == bytes;
  }
  v.check(ppm, "PPM round trip");

  const DatasetDigest base = digest_directory(scratch / "a");
  auto files = base.files;
  bool reorder = true;
  Rng rng(5);
  for (int k = 0; k < 20; ++k) {
    for (std::size_t i = files.size(); i > 1; --i)
      std::swap(files[i - 1], files[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    reorder = reorder && make_digest(files).manifest == base.manifest;
  }
  v.check(reorder, "digest stable under reordering");

  // Flip every byte of every label file and classes.txt, and 40 sampled
  // bytes of every image.
  std::size_t flips = 0, detected = 0;
  for (const auto& [rel, hex] : base.files) {
    const fs::path p = scratch / ("a/" + rel);
    auto bytes = read_file_bytes(p);
    std::vector<std::size_t> positions;
    if (rel.ends_with(".png"))
      for (int k = 0; k < 40; ++k) positions.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(bytes.size()) - 1)));
    else
      for (std::size_t k = 0; k < bytes.size(); ++k) positions.push_back(k);
    for (std::size_t pos : positions) {
      bytes[pos] ^= 0x01;
      write_file_bytes(p, bytes);
      const DatasetDigest d = digest_directory(scratch / "a");
      ++flips;
      detected += d.manifest != base.manifest && digest_difference(base, d) == std::vector<std::string>{rel};
      bytes[pos] ^= 0x01;
    }
    write_file_bytes(p, bytes);
  }
  v.check(flips > 0 && detected == flips, "digest changes on every byte flip");
  v.check(digest_directory(scratch / "a") == base, "restored tree digests as before");
  v.note(fmt("%.0f/%.0f single-byte flips detected", double(detected), double(flips)));
  return v;
}

Verdict report_criterion() {
  Verdict v;
  const Catalogs catalogs = load_catalogs(default_data_dir());
  ScopeRecord scope;
  scope.objectives = "Evaluate the perception module of an autonomous survey vessel";
  scope.rules_of_engagement = "Offline replicas only";
  scope.access_level = AccessLevel::closed_box;
  scope.schedule_start = "2026-03-01";
  scope.schedule_end = "2026-03-31";
  scope.contacts = {"owner@example.org"};
  scope.disclosure_process = "Private report to the system owner";
  EngagementPlan plan = new_engagement(scope, catalogs.checklist, "eng-acceptance");
  std::string a3_item, a5_item;
  for (const auto& item : plan.checklist) {
    if (item.stage == Stage::a1) set_status(plan, item.id, ItemStatus::done);
    if (item.stage == Stage::a3 && a3_item.empty()) a3_item = item.id;
    if (item.stage == Stage::a5 && a5_item.empty()) a5_item = item.id;
  }
  set_status(plan, a5_item, ItemStatus::blocked, "no access to the deployed system");
  Finding f;
  f.id = "F-1";
  f.title = "Backdoor trigger suppresses obstacle detection";
  f.component = "object detector";
  f.attack_kind = "backdoor";
  f.artifacts = {{"poison-report.json", sha256_hex(std::string_view("evidence"))}};
  f.results = R"({"trigger_success_rate": 0.88})";
  f.likelihood = Level::medium;
  f.impact = Level::high;
  f.mitigations = {catalogs.principles.front().id};
  record_finding(plan, f, {a3_item}, catalogs);

  const std::string md = render_report(plan, ReportFormat::markdown, catalogs);
  const std::string canonical = render_report(plan, ReportFormat::canonical, catalogs);
  v.check(md == render_report(plan, ReportFormat::markdown, catalogs) &&
              canonical == render_report(plan, ReportFormat::canonical, catalogs),
          "byte-deterministic rendering");
  const auto problems = validate_json(canonical, catalogs.report_schema);
  v.check(problems.empty(), "canonical report validates against the schema");

  auto id_char = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.'; };
  auto occurrences = [&](const std::string& text, const std::string& id) {
    std::size_t n = 0;
    for (auto pos = text.find(id); pos != std::string::npos; pos = text.find(id, pos + 1)) {
      const bool left = pos == 0 || !id_char(text[pos - 1]);
      const bool right = pos + id.size() >= text.size() || !id_char(text[pos + id.size()]);
      n += left && right;
    }
    return n;
  };
  std::map<std::string, int> in_json;
  const nlohmann::json parsed = nlohmann::json::parse(canonical);
  for (const auto& item : parsed.at("checklist")) ++in_json[item.at("id").get<std::string>()];
  bool once = plan.checklist.size() == catalogs.checklist.items.size() && in_json.size() == plan.checklist.size();
  std::string offender;
  for (const auto& item : plan.checklist)
    if (occurrences(md, item.id) != 1 || in_json[item.id] != 1) {
      once = false;
      if (offender.empty()) offender = item.id;
    }
  v.check(once, "every checklist id exactly once" + (offender.empty() ? std::string() : " (first offender " + offender + ")"));
  v.note(std::to_string(plan.checklist.size()) + " checklist ids, " + std::to_string(problems.size()) + " schema problems");
  return v;
}

Verdict patch_criterion() {
  Verdict v;
  const std::vector<PatchScene> scenes(attack_scenes().begin(), attack_scenes().begin() + kPatchScenes);
  {
    ToyOracle oracle(attack_model());
    PatchAttackConfig transparent;
    transparent.transforms.alpha_min = transparent.transforms.alpha_max = 0.0;
    transparent.ea.generations = 5;
    const PatchAttackResult r = ea_patch(oracle, scenes, transparent);
    bool equal = r.population_costs.size() == r.baseline_cost.size();
    for (std::size_t g = 0; equal && g < r.population_costs.size(); ++g)
      for (double c : r.population_costs[g]) equal = equal && c == r.baseline_cost[g];
    v.check(equal, "alpha 0 fitness equals the baseline for every individual");
  }
  ToyOracle oracle(attack_model());
  PatchAttackConfig config;
  config.ea = ea_preset("paper-patch");
  const PatchAttackResult r = ea_patch(oracle, scenes, config);
  v.note(fmt("held-out mean confidence %.3f at generation 0, %.3f best (unpatched %.3f)",
             r.generation0_holdout_mean_confidence, r.holdout_mean_confidence, r.baseline_mean_confidence));
  v.check(r.holdout_mean_confidence < r.generation0_holdout_mean_confidence, "held-out mean below generation 0");
  return v;
}

}  // namespace

// Optional arguments select criteria by number.
int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  std::printf("masred acceptance suite\n");
  std::fflush(stdout);
  report(1, "input gradient matches finite differences", gradient_check);
  report(2, "FGSM identity, budget and effect", fgsm_criterion);
  report(3, "evolutionary search invariants", ea_criterion);
  report(4, "pixel-budget attack", pixel_criterion);
  report(5, "backdoor poisoning", backdoor_criterion);
  report(6, "decision module outcomes", dpm_criterion);
  report(7, "exact arithmetic", exact_arithmetic);
  report(8, "round trips and digests", round_trips);
  report(9, "engagement report", report_criterion);
  report(10, "patch synthesis", patch_criterion);
  std::printf("%d of %d criteria failed\n", failures, run_count);
  return failures == 0 ? 0 : 1;
}
