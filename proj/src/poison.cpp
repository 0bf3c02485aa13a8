#include "masred/poison.hpp"

#include "masred/digest.hpp"
#include "masred/error.hpp"
#include "masred/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace masred {

using json = nlohmann::json;

namespace {
constexpr std::uint64_t kApplySalt = 0x6170706c79ULL;
constexpr std::uint64_t kSelectSalt = 0x73656c656374ULL;
}  // namespace

Image default_trigger_raster() {
  // Four saturated quadrants away from every scene colour: magenta, green / cyan, blue.
  constexpr int kSide = 8;
  const Rgb quadrants[2][2] = {{{255, 0, 255}, {0, 255, 0}}, {{0, 255, 255}, {0, 0, 255}}};
  Image flag(kSide, kSide);
  for (int y = 0; y < kSide; ++y)
    for (int x = 0; x < kSide; ++x) {
      const Rgb& c = quadrants[y * 2 / kSide][x * 2 / kSide];
      flag.set_pixel(x, y, c[0], c[1], c[2]);
    }
  return flag;
}

std::string_view to_string(PoisonKind kind) {
  switch (kind) {
    case PoisonKind::label_flip: return "label_flip";
    case PoisonKind::chaff_injection: return "chaff_injection";
    case PoisonKind::targeted_swap: return "targeted_swap";
    case PoisonKind::backdoor: return "backdoor";
  }
  return "unknown";
}

PoisonKind parse_poison_kind(std::string_view text) {
  for (auto k : {PoisonKind::label_flip, PoisonKind::chaff_injection, PoisonKind::targeted_swap, PoisonKind::backdoor})
    if (to_string(k) == text) return k;
  throw Error(ErrorKind::invalid_argument, "unknown poison strategy '" + std::string(text) + "'");
}

std::size_t poison_count(double budget, std::size_t n) {
  if (!(budget > 0.0 && budget <= 1.0)) throw Error(ErrorKind::range, "poison budget must lie in (0, 1]");
  const auto k = static_cast<std::size_t>(std::floor(budget * static_cast<double>(n)));
  return std::max<std::size_t>(1, std::min(k, n));
}

std::vector<std::size_t> select_items(std::size_t n, double budget, std::uint64_t seed) {
  if (n == 0) throw Error(ErrorKind::invalid_argument, "cannot select from an empty dataset");
  const std::size_t k = poison_count(budget, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(mix_seed(seed, kSelectSalt));
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n) - 1));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

void validate_strategy(const PoisonStrategy& s, std::size_t classes) {
  const auto c = static_cast<int>(classes);
  auto check_target = [&] {
    if (s.target_class < 0 || s.target_class > c)
      throw Error(ErrorKind::range, "poison target class " + std::to_string(s.target_class) + " does not exist");
    if (s.target_class == c && s.new_class_name.empty())
      throw Error(ErrorKind::invalid_argument, "a new target class needs a name");
  };
  switch (s.kind) {
    case PoisonKind::label_flip:
      if (c < 2) throw Error(ErrorKind::invalid_argument, "label flipping needs at least two classes");
      break;
    case PoisonKind::chaff_injection: break;
    case PoisonKind::targeted_swap:
      if (s.source_class < 0 || s.source_class >= c)
        throw Error(ErrorKind::range, "targeted swap needs an existing source class");
      check_target();
      break;
    case PoisonKind::backdoor: {
      if (s.source_class >= c) throw Error(ErrorKind::range, "backdoor source class does not exist");
      check_target();
      const auto& b = s.backdoor;
      if (!(b.alpha_min >= 0.0 && b.alpha_min <= b.alpha_max && b.alpha_max <= 1.0))
        throw Error(ErrorKind::range, "trigger alpha range must lie in [0, 1]");
      if (!(b.scale_min > 0.0 && b.scale_min <= b.scale_max && b.scale_max <= 1.0))
        throw Error(ErrorKind::range, "trigger scale range must lie in (0, 1]");
      if (!(b.object_jitter >= 0.0 && b.object_jitter <= 0.5))
        throw Error(ErrorKind::range, "trigger jitter must lie in [0, 0.5]");
      break;
    }
  }
}

std::vector<std::string> poisoned_class_names(const std::vector<std::string>& names, const PoisonStrategy& s) {
  auto out = names;
  if ((s.kind == PoisonKind::targeted_swap || s.kind == PoisonKind::backdoor) &&
      s.target_class == static_cast<int>(names.size()))
    out.push_back(s.new_class_name);
  return out;
}

std::vector<std::size_t> eligible_annotations(const std::vector<Annotation>& annotations, int source_class) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < annotations.size(); ++i)
    if (source_class < 0 || annotations[i].class_id == source_class) out.push_back(i);
  return out;
}

}  // namespace

PoisonPlan plan_poison(const Dataset& dataset, const PoisonStrategy& strategy, double budget, std::uint64_t seed) {
  if (dataset.empty()) throw Error(ErrorKind::invalid_argument, "cannot poison an empty dataset");
  if (dataset.split == Split::test) throw Error(ErrorKind::state, "test splits are never poisoned");
  validate_strategy(strategy, dataset.class_names.size());
  PoisonPlan plan;
  plan.strategy = strategy;
  if (plan.strategy.kind == PoisonKind::backdoor && plan.strategy.backdoor.trigger.empty())
    plan.strategy.backdoor.trigger = default_trigger_raster();
  plan.budget = budget;
  plan.seed = seed;
  plan.dataset_size = dataset.size();
  plan.selected = select_items(dataset.size(), budget, seed);
  plan.class_names = poisoned_class_names(dataset.class_names, strategy);
  return plan;
}

TriggerPlacementResult place_trigger(const Image& image, const std::vector<Annotation>& annotations,
                                     const std::vector<std::size_t>& eligible, const BackdoorSpec& spec, Rng& rng) {
  if (spec.trigger.empty()) throw Error(ErrorKind::invalid_argument, "backdoor trigger raster is empty");
  TriggerPlacementResult r;
  r.alpha = rng.uniform(spec.alpha_min, spec.alpha_max);
  const double fraction = rng.uniform(spec.scale_min, spec.scale_max);
  const long side = std::max(1L, std::lround(fraction * image.width()));
  if (side > image.width() || side > image.height())
    throw Error(ErrorKind::range, "trigger footprint cannot fit the image");
  r.transform.scale = static_cast<double>(side) / spec.trigger.width();
  r.transform.rotation = spec.random_rotation ? rotation_from_degrees(90 * static_cast<int>(rng.uniform_int(0, 3))) : Rotation::r0;
  const Patch patch(spec.trigger, r.alpha);
  const PixelRect extent = transformed_extent(patch, {0, 0, r.transform.rotation, r.transform.scale});
  double cx = 0.0, cy = 0.0;
  if (spec.placement == TriggerPlacement::on_object && !eligible.empty()) {
    const std::size_t host = eligible[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(eligible.size()) - 1))];
    const Box b = to_pixel_box(annotations[host], image.width(), image.height());
    const double j = spec.object_jitter;
    cx = rng.uniform(b.x + (0.5 - j) * b.w, b.x + (0.5 + j) * b.w);
    cy = rng.uniform(b.y + (0.5 - j) * b.h, b.y + (0.5 + j) * b.h);
    r.host = host;
  } else {
    cx = rng.uniform(extent.width / 2.0, image.width() - extent.width / 2.0);
    cy = rng.uniform(extent.height / 2.0, image.height() - extent.height / 2.0);
  }
  r.transform.x = static_cast<int>(std::floor(cx - extent.width / 2.0));
  r.transform.y = static_cast<int>(std::floor(cy - extent.height / 2.0));
  r.image = apply_patch(image, patch, r.transform);
  return r;
}

PoisonResult apply_poison(const Dataset& dataset, const PoisonPlan& plan) {
  if (plan.dataset_size != dataset.size())
    throw Error(ErrorKind::state, "poison plan was made for a dataset of " + std::to_string(plan.dataset_size) +
                                      " items, got " + std::to_string(dataset.size()));
  const auto& s = plan.strategy;
  validate_strategy(s, dataset.class_names.size());
  const int classes = static_cast<int>(dataset.class_names.size());
  PoisonResult out{dataset, {}};
  out.dataset.root.clear();
  out.dataset.class_names = plan.class_names;
  for (std::size_t index : plan.selected) {
    if (index >= dataset.size()) throw Error(ErrorKind::range, "poison plan selects a missing item");
    auto& item = out.dataset.items[index];
    Rng rng(mix_seed(mix_seed(plan.seed, kApplySalt), index));
    PoisonChange change;
    change.index = index;
    change.path = item.path;
    auto relabel = [&](std::size_t a, int to) {
      change.labels.push_back({a, item.annotations[a].class_id, to});
      item.annotations[a].class_id = to;
    };
    switch (s.kind) {
      case PoisonKind::label_flip:
        for (std::size_t a = 0; a < item.annotations.size(); ++a) {
          const int c = item.annotations[a].class_id;
          relabel(a, (c + 1 + static_cast<int>(rng.uniform_int(0, classes - 2))) % classes);
        }
        break;
      case PoisonKind::chaff_injection: {
        Annotation a;
        a.class_id = static_cast<int>(rng.uniform_int(0, classes - 1));
        a.w = rng.uniform(0.05, 0.2);
        a.h = rng.uniform(0.05, 0.2);
        a.cx = rng.uniform(a.w / 2, 1.0 - a.w / 2);
        a.cy = rng.uniform(a.h / 2, 1.0 - a.h / 2);
        a = canonical(a);
        item.annotations.push_back(a);
        change.added.push_back(a);
        break;
      }
      case PoisonKind::targeted_swap:
        for (std::size_t a = 0; a < item.annotations.size(); ++a)
          if (item.annotations[a].class_id == s.source_class) relabel(a, s.target_class);
        break;
      case PoisonKind::backdoor: {
        const auto eligible = eligible_annotations(item.annotations, s.source_class);
        auto placed = place_trigger(item.image, item.annotations, eligible, s.backdoor, rng);
        item.image = std::move(placed.image);
        change.transform = placed.transform;
        change.alpha = placed.alpha;
        change.host_annotation = placed.host;
        if (placed.host) {
          relabel(*placed.host, s.target_class);
        } else {
          for (std::size_t a : eligible) relabel(a, s.target_class);
        }
        break;
      }
    }
    out.manifest.push_back(std::move(change));
  }
  return out;
}

// ---- evaluation ------------------------------------------------------------

namespace {

LossValue mean_loss(const ToyDetectorModel& model, const Dataset& test) {
  LossValue sum;
  for (const auto& item : test.items) {
    const LossValue v = loss(model, item.image, item.annotations);
    sum.objectness += v.objectness;
    sum.classification += v.classification;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, test.size()));
  return {sum.objectness / n, sum.classification / n};
}

}  // namespace

PoisonReport score_poison(const ToyDetectorModel& clean, const ToyDetectorModel& poisoned, const Dataset& test,
                          const std::optional<PoisonStrategy>& trigger, const PoisonEvalConfig& config) {
  PoisonReport r;
  r.clean_metric_baseline = detection_accuracy(clean, test, config.threshold);
  r.clean_metric_poisoned = detection_accuracy(poisoned, test, config.threshold);
  r.outer_objective = mean_loss(poisoned, test);
  r.baseline_objective = mean_loss(clean, test);
  if (!trigger) {
    r.trigger_rate_undefined = true;
    return r;
  }
  BackdoorSpec spec = trigger->backdoor;
  if (spec.trigger.empty()) spec.trigger = default_trigger_raster();
  spec.placement = TriggerPlacement::on_object;
  Rng rng(config.trigger_seed);
  std::size_t raw_hits = 0;
  for (const auto& item : test.items) {
    const auto eligible = eligible_annotations(item.annotations, trigger->source_class);
    if (eligible.empty()) continue;
    const auto placed = place_trigger(item.image, item.annotations, eligible, spec, rng);
    const Box host = to_pixel_box(item.annotations[*placed.host], item.image.width(), item.image.height());
    const auto mp = match_victim(forward(poisoned, placed.image, config.threshold), host);
    const auto mc = match_victim(forward(clean, placed.image, config.threshold), host);
    const bool poisoned_hit = mp && mp->class_id == trigger->target_class;
    const bool clean_hit = mc && mc->class_id == trigger->target_class;
    ++r.triggered_count;
    raw_hits += poisoned_hit;
    r.trigger_hits += poisoned_hit && !clean_hit;
  }
  if (r.triggered_count == 0) {
    r.trigger_rate_undefined = true;
  } else {
    r.trigger_success_rate = static_cast<double>(r.trigger_hits) / static_cast<double>(r.triggered_count);
    r.raw_trigger_rate = static_cast<double>(raw_hits) / static_cast<double>(r.triggered_count);
  }
  return r;
}

PoisonReport evaluate_poison(const Dataset& clean_train, const Dataset& poisoned_train, const Dataset& test,
                             const std::optional<PoisonStrategy>& trigger, const PoisonEvalConfig& config,
                             TrainedPair* models) {
  if (clean_train.size() != poisoned_train.size())
    throw Error(ErrorKind::invalid_argument, "clean and poisoned training sets differ in size");
  DetectorConfig dc = config.detector;
  dc.class_names = poisoned_train.class_names;
  const auto init = ToyDetectorModel::initialized(dc, config.init_seed);
  const TrainResult clean = train(init, clean_train, config.train);
  const TrainResult poisoned = train(init, poisoned_train, config.train);
  PoisonReport r = score_poison(clean.model, poisoned.model, test, trigger, config);
  r.baseline_losses = clean.epoch_losses;
  r.poisoned_losses = poisoned.epoch_losses;
  if (models) *models = {clean.model, poisoned.model};
  return r;
}

// ---- scanning --------------------------------------------------------------

std::optional<double> ConfusionCounts::precision() const {
  if (tp + fp == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

std::optional<double> ConfusionCounts::recall() const {
  if (tp + fn == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

ConfusionCounts confusion(const std::vector<std::size_t>& flagged, const std::vector<std::size_t>& truth) {
  std::vector<std::size_t> f = flagged, t = truth;
  std::sort(f.begin(), f.end());
  f.erase(std::unique(f.begin(), f.end()), f.end());
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  std::vector<std::size_t> both;
  std::set_intersection(f.begin(), f.end(), t.begin(), t.end(), std::back_inserter(both));
  return {both.size(), f.size() - both.size(), t.size() - both.size()};
}

std::vector<double> color_histogram(const Image& image, int bins) {
  if (bins < 1 || bins > 256) throw Error(ErrorKind::range, "histogram bins must lie in [1, 256]");
  std::vector<double> h(static_cast<std::size_t>(bins) * bins * bins, 0.0);
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      const int r = image.at(x, y, 0) * bins / 256, g = image.at(x, y, 1) * bins / 256, b = image.at(x, y, 2) * bins / 256;
      h[static_cast<std::size_t>((r * bins + g) * bins + b)] += 1.0;
    }
  const double n = static_cast<double>(image.pixel_count());
  for (auto& v : h) v /= n;
  return h;
}

namespace {

double l1(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Robust z-scores of distances to the group medoid, clipped at 0.
std::vector<double> group_scores(const std::vector<std::size_t>& members, const std::vector<std::vector<double>>& hist) {
  const std::size_t n = members.size();
  std::vector<double> scores(n, 0.0);
  if (n < 2) return scores;
  std::size_t medoid = 0;
  double best = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += l1(hist[members[i]], hist[members[j]]);
    if (i == 0 || sum < best) {
      best = sum;
      medoid = i;
    }
  }
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = l1(hist[members[i]], hist[members[medoid]]);
  const double med = median(d);
  std::vector<double> dev(n);
  for (std::size_t i = 0; i < n; ++i) dev[i] = std::abs(d[i] - med);
  double scale = 1.4826 * median(dev);
  if (scale == 0.0) scale = 1.2533 * std::accumulate(dev.begin(), dev.end(), 0.0) / static_cast<double>(n);
  if (scale == 0.0) return scores;
  for (std::size_t i = 0; i < n; ++i) scores[i] = std::max(0.0, (d[i] - med) / scale);
  return scores;
}

}  // namespace

PoisonScanResult scan_for_poison(const Dataset& dataset, const ScanConfig& config,
                                 const std::optional<std::vector<std::size_t>>& ground_truth) {
  if (dataset.empty()) throw Error(ErrorKind::invalid_argument, "cannot scan an empty dataset");
  std::vector<std::vector<double>> hist;
  hist.reserve(dataset.size());
  for (const auto& item : dataset.items) hist.push_back(color_histogram(item.image, config.bins));

  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& a = dataset.items[i].annotations;
    groups[a.empty() ? -1 : a.front().class_id].push_back(i);
  }
  PoisonScanResult r;
  r.scores.assign(dataset.size(), 0.0);
  std::vector<std::size_t> everyone(dataset.size());
  std::iota(everyone.begin(), everyone.end(), 0);
  std::vector<double> global;
  for (const auto& [key, members] : groups) {
    if (members.size() >= config.min_group_size) {
      const auto s = group_scores(members, hist);
      for (std::size_t i = 0; i < members.size(); ++i) r.scores[members[i]] = s[i];
    } else {
      if (global.empty()) global = group_scores(everyone, hist);
      for (std::size_t m : members) r.scores[m] = global[m];
    }
  }
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (r.scores[i] > config.threshold) r.flagged.push_back(i);
  if (ground_truth) r.metrics = confusion(r.flagged, *ground_truth);
  return r;
}

// ---- audit records -----------------------------------------------------------

namespace {

std::string_view placement_name(TriggerPlacement p) { return p == TriggerPlacement::random ? "random" : "on_object"; }

json strategy_json(const PoisonStrategy& s) {
  json j{{"kind", to_string(s.kind)}, {"source_class", s.source_class}, {"target_class", s.target_class},
         {"new_class_name", s.new_class_name}};
  if (s.kind == PoisonKind::backdoor) {
    const auto& b = s.backdoor;
    j["backdoor"] = {{"alpha_min", b.alpha_min},
                     {"alpha_max", b.alpha_max},
                     {"scale_min", b.scale_min},
                     {"scale_max", b.scale_max},
                     {"placement", placement_name(b.placement)},
                     {"random_rotation", b.random_rotation},
                     {"object_jitter", b.object_jitter},
                     {"trigger_png", base64_encode(encode_png(b.trigger))},
                     {"trigger_sha256", sha256_hex(encode_png(b.trigger))}};
  }
  return j;
}

json plan_json(const PoisonPlan& plan) {
  return {{"format", "masred-poison-plan/1"}, {"strategy", strategy_json(plan.strategy)},
          {"budget", plan.budget},           {"seed", plan.seed},
          {"dataset_size", plan.dataset_size}, {"selected", plan.selected},
          {"class_names", plan.class_names}};
}

}  // namespace

std::string plan_to_json(const PoisonPlan& plan) { return plan_json(plan).dump(2) + "\n"; }

PoisonPlan plan_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format") != "masred-poison-plan/1") throw Error(ErrorKind::format, "unsupported poison plan format");
    PoisonPlan p;
    const json& s = j.at("strategy");
    p.strategy.kind = parse_poison_kind(s.at("kind").get<std::string>());
    p.strategy.source_class = s.at("source_class").get<int>();
    p.strategy.target_class = s.at("target_class").get<int>();
    p.strategy.new_class_name = s.at("new_class_name").get<std::string>();
    if (s.contains("backdoor")) {
      const json& b = s.at("backdoor");
      auto& d = p.strategy.backdoor;
      d.alpha_min = b.at("alpha_min").get<double>();
      d.alpha_max = b.at("alpha_max").get<double>();
      d.scale_min = b.at("scale_min").get<double>();
      d.scale_max = b.at("scale_max").get<double>();
      d.placement = b.at("placement") == "random" ? TriggerPlacement::random : TriggerPlacement::on_object;
      d.random_rotation = b.at("random_rotation").get<bool>();
      d.object_jitter = b.at("object_jitter").get<double>();
      d.trigger = decode_png(base64_decode(b.at("trigger_png").get<std::string>()));
    }
    p.budget = j.at("budget").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.dataset_size = j.at("dataset_size").get<std::size_t>();
    p.selected = j.at("selected").get<std::vector<std::size_t>>();
    p.class_names = j.at("class_names").get<std::vector<std::string>>();
    if (p.selected != select_items(p.dataset_size, p.budget, p.seed))
      throw Error(ErrorKind::format, "poison plan selection does not match its seed and budget");
    return p;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("malformed poison plan: ") + e.what());
  }
}

std::string manifest_to_json(const PoisonPlan& plan, const std::vector<PoisonChange>& manifest,
                             const std::string& source_digest, const std::string& poisoned_digest) {
  json changes = json::array();
  for (const auto& c : manifest) {
    json jc{{"index", c.index}, {"path", c.path}};
    if (c.transform)
      jc["transform"] = {{"x", c.transform->x},
                         {"y", c.transform->y},
                         {"rotation", static_cast<int>(c.transform->rotation)},
                         {"scale", c.transform->scale},
                         {"alpha", c.alpha}};
    if (c.host_annotation) jc["host_annotation"] = *c.host_annotation;
    json labels = json::array();
    for (const auto& l : c.labels) labels.push_back({{"annotation", l.annotation}, {"old", l.old_class}, {"new", l.new_class}});
    jc["labels"] = std::move(labels);
    json added = json::array();
    for (const auto& a : c.added) added.push_back(format_annotation(a));
    jc["added"] = std::move(added);
    changes.push_back(std::move(jc));
  }
  const json j{{"format", "masred-poison-manifest/1"},
               {"plan", plan_json(plan)},
               {"source_manifest_sha256", source_digest},
               {"poisoned_manifest_sha256", poisoned_digest},
               {"changes", std::move(changes)}};
  return j.dump(2) + "\n";
}

}  // namespace masred
