#include "masred/evasion.hpp"

#include "masred/error.hpp"
#include "masred/rng.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <numeric>
#include <thread>

namespace masred {

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::ea_perturb: return "ea-perturb";
    case AttackKind::ea_pixels: return "ea-pixels";
    case AttackKind::ea_patch: return "ea-patch";
  }
  return "unknown";
}

std::optional<Detection> matched_detection(const DetectionSet& set, const TargetSpec& target) {
  if (target.victim) return match_victim(set, *target.victim);
  std::optional<Detection> best;
  for (const auto& d : set.detections)
    if (!best || d.confidence > best->confidence) best = d;
  return best;
}

bool attack_succeeded(const std::optional<Detection>& matched, const TargetSpec& target, double threshold) {
  if (target.mode == TargetSpec::Mode::targeted) return matched && matched->class_id == target.target_class;
  return (matched ? matched->confidence : 0.0) < threshold;
}

EvasionOutcome evaluate_evasion(Oracle& oracle, const Image& base, const Image& attacked, const TargetSpec& target) {
  const auto before = oracle.query_count();
  const auto m0 = matched_detection(oracle.detect(base), target);
  const auto m1 = matched_detection(oracle.detect(attacked), target);
  EvasionOutcome out;
  out.baseline_confidence = m0 ? m0->confidence : 0.0;
  out.attacked_confidence = m1 ? m1->confidence : 0.0;
  if (m0) out.baseline_class = m0->class_id;
  if (m1) out.attacked_class = m1->class_id;
  out.success = attack_succeeded(m1, target, oracle.threshold());
  out.queries_used = oracle.query_count() - before;
  return out;
}

// ---- FGSM ------------------------------------------------------------------

namespace {

int sign(double v) { return (v > 0.0) - (v < 0.0); }

std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0)); }

}  // namespace

Image fgsm_step(const Image& image, const GradientField& gradient, double epsilon, int direction) {
  if (gradient.width != image.width() || gradient.height != image.height())
    throw Error(ErrorKind::invalid_argument, "fgsm: gradient shape differs from the image");
  if (epsilon < 0.0) throw Error(ErrorKind::range, "fgsm: epsilon must be >= 0");
  if (direction != 1 && direction != -1) throw Error(ErrorKind::invalid_argument, "fgsm: direction must be +1 or -1");
  const double step = std::floor(epsilon);
  Image out = image;
  auto src = image.bytes();
  auto dst = out.bytes();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = clamp_byte(src[i] + direction * step * sign(gradient.values[static_cast<Eigen::Index>(i)]));
  return out;
}

AdversarialExample fgsm(const ToyDetectorModel& model, const Image& image, const TargetSpec& target, double epsilon,
                        int iterations) {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw Error(ErrorKind::range, "fgsm: epsilon must be >= 0");
  if (iterations < 1) throw Error(ErrorKind::range, "fgsm: iterations must be >= 1");
  AdversarialExample ex{image, image, epsilon, 0, AttackKind::fgsm};
  if (epsilon == 0.0) return ex;

  const int direction = target.mode == TargetSpec::Mode::targeted ? -1 : 1;
  const CellTargets targets = targets_for_attack(model, image, target);
  const double step = epsilon / iterations;
  const auto base = image.bytes();
  const Eigen::Index n = static_cast<Eigen::Index>(base.size());

  // Work on real intensities, then round once at the end.
  Raster<double> x(image.width(), image.height());
  for (Eigen::Index i = 0; i < n; ++i) x.values[i] = base[static_cast<std::size_t>(i)];
  for (int it = 0; it < iterations; ++it) {
    Raster<double> input = x;
    input.values /= 255.0;
    const GradientField g = input_gradient(model, input, targets);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double b = base[static_cast<std::size_t>(i)];
      const double v = x.values[i] + direction * step * sign(g.values[i]);
      x.values[i] = std::clamp(std::clamp(v, b - epsilon, b + epsilon), 0.0, 255.0);
    }
  }
  const double bound = std::floor(epsilon);
  auto out = ex.adversarial.bytes();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double b = base[static_cast<std::size_t>(i)];
    const double v = std::floor(x.values[i] + 0.5);
    out[static_cast<std::size_t>(i)] = clamp_byte(std::clamp(v, b - bound, b + bound));
  }
  ex.changed_pixel_count = changed_pixel_count(ex.base, ex.adversarial);
  return ex;
}

// ---- EA configuration ------------------------------------------------------

void EAConfig::validate() const {
  if (population < 2) throw Error(ErrorKind::range, "ea: population must be >= 2");
  if (generations < 1) throw Error(ErrorKind::range, "ea: generations must be >= 1");
  if (!(mutation_rate >= 0.0)) throw Error(ErrorKind::range, "ea: mutation rate must be >= 0");
  if (mutation_mode == MutationMode::per_gene && mutation_rate > 1.0)
    throw Error(ErrorKind::range, "ea: per-gene mutation rate must be <= 1");
  if (!(crossover_prob >= 0.0 && crossover_prob <= 1.0)) throw Error(ErrorKind::range, "ea: crossover probability must lie in [0, 1]");
  if (elitism < 1 || elitism >= population) throw Error(ErrorKind::range, "ea: elitism must satisfy 1 <= elitism < population");
  if (tournament_size < 1) throw Error(ErrorKind::range, "ea: tournament size must be >= 1");
}

double EAConfig::gene_probability(std::size_t genome_length) const {
  if (mutation_mode == MutationMode::per_gene) return mutation_rate;
  return genome_length == 0 ? 0.0 : std::min(1.0, mutation_rate / static_cast<double>(genome_length));
}

EAConfig ea_preset(std::string_view name) {
  EAConfig c;
  if (name == "paper-default") {
    c.population = 10;
    c.generations = 100;
    c.mutation_rate = 0.5;
    c.mutation_mode = MutationMode::per_gene;
    c.crossover_prob = 0.5;
    return c;
  }
  if (name == "paper-patch") {
    c.population = 20;
    c.generations = 100;
    c.mutation_rate = 3.0;
    c.mutation_mode = MutationMode::expected_genes;
    c.crossover_prob = 0.5;
    return c;
  }
  throw Error(ErrorKind::invalid_argument, "unknown EA preset '" + std::string(name) + "'");
}

std::vector<std::string> ea_preset_names() { return {"paper-default", "paper-patch"}; }

std::uint64_t expected_queries(const EAConfig& config, int generations_used) {
  return 1 + static_cast<std::uint64_t>(config.population) +
         static_cast<std::uint64_t>(generations_used) * static_cast<std::uint64_t>(config.population - config.elitism);
}

double attack_cost(const DetectionSet& detections, const TargetSpec& target) {
  const auto matched = matched_detection(detections, target);
  if (target.mode == TargetSpec::Mode::untargeted_suppress) return matched ? matched->confidence : 0.0;
  // Targeted: 1 - best target-class confidence on the victim; while no such
  // detection exists, 1 + the confidence of whatever is matched there.
  double best = -1.0;
  for (const auto& d : detections.detections) {
    if (d.class_id != target.target_class) continue;
    if (target.victim && overlap_ratio(d.box, *target.victim) < kMatchOverlap) continue;
    best = std::max(best, d.confidence);
  }
  if (best >= 0.0) return 1.0 - best;
  return 1.0 + (matched ? matched->confidence : 0.0);
}

// ---- generic engine --------------------------------------------------------

namespace {

struct Evaluation {
  double cost = 0.0;
  std::optional<Detection> matched;
  bool success = false;
};

// Queries images across the primary oracle and optional workers. Image i
// goes to handle i mod handles; results come back in input order.
std::vector<DetectionSet> detect_all(Oracle& primary, std::span<Oracle* const> workers, const std::vector<Image>& images) {
  std::vector<DetectionSet> out(images.size());
  const std::size_t handles = 1 + workers.size();
  if (handles == 1 || images.size() < 2) {
    for (std::size_t i = 0; i < images.size(); ++i) out[i] = primary.detect(images[i]);
    return out;
  }
  std::vector<std::exception_ptr> errors(images.size());
  std::vector<std::thread> threads;
  for (std::size_t h = 0; h < handles; ++h) {
    Oracle& o = h == 0 ? primary : *workers[h - 1];
    threads.emplace_back([&, h] {
      for (std::size_t i = h; i < images.size(); i += handles) {
        try {
          out[i] = o.detect(images[i]);
        } catch (...) {
          errors[i] = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::uint64_t total_queries(const Oracle& primary, std::span<Oracle* const> workers) {
  std::uint64_t n = primary.query_count();
  for (const Oracle* w : workers) n += w->query_count();
  return n;
}

template <typename Gene>
struct Individual {
  std::vector<Gene> genes;
  Evaluation eval;
};

template <typename Gene>
struct Evolution {
  std::vector<Individual<Gene>> population;
  std::vector<double> best_cost;
  std::vector<std::vector<double>> population_costs;
  std::size_t generation0_best = 0;
  Individual<Gene> generation0_best_individual;
  int generations_used = 0;
  std::string error_note;

  const Individual<Gene>& best() const {
    std::size_t b = 0;
    for (std::size_t i = 1; i < population.size(); ++i)
      if (population[i].eval.cost < population[b].eval.cost) b = i;
    return population[b];
  }
};

// Steady elitist loop. `unit` genes form one crossover unit; `evaluate`
// scores a batch of genomes for a generation; `before_generation` may
// refresh generation-specific state (e.g. transform samples).
template <typename Gene, typename Init, typename Mutate, typename Evaluate, typename BeforeGeneration>
Evolution<Gene> evolve(const EAConfig& cfg, std::size_t unit, Init init, Mutate mutate, Evaluate evaluate,
                       BeforeGeneration before_generation, bool allow_early_stop) {
  Rng rng(cfg.seed);
  Evolution<Gene> evo;
  auto record = [&] {
    std::vector<double> costs;
    for (const auto& ind : evo.population) costs.push_back(ind.eval.cost);
    evo.population_costs.push_back(std::move(costs));
    evo.best_cost.push_back(evo.best().eval.cost);
  };

  before_generation(0);
  evo.population.resize(static_cast<std::size_t>(cfg.population));
  std::vector<const std::vector<Gene>*> batch;
  for (int i = 0; i < cfg.population; ++i) {
    evo.population[static_cast<std::size_t>(i)].genes = init(i, rng);
    batch.push_back(&evo.population[static_cast<std::size_t>(i)].genes);
  }
  auto evals = evaluate(batch);
  for (std::size_t i = 0; i < evals.size(); ++i) evo.population[i].eval = evals[i];
  record();
  evo.generation0_best_individual = evo.best();

  const std::size_t length = evo.population.front().genes.size();
  const std::size_t units = length / unit;
  const double p_mut = cfg.gene_probability(length);
  auto rank_less = [&](std::size_t a, std::size_t b) {
    const double ca = evo.population[a].eval.cost, cb = evo.population[b].eval.cost;
    return ca < cb || (ca == cb && a < b);
  };
  auto tournament = [&]() -> const Individual<Gene>& {
    std::size_t best = static_cast<std::size_t>(rng.uniform_int(0, cfg.population - 1));
    for (int k = 1; k < cfg.tournament_size; ++k) {
      const auto c = static_cast<std::size_t>(rng.uniform_int(0, cfg.population - 1));
      if (rank_less(c, best)) best = c;
    }
    return evo.population[best];
  };

  for (int g = 1; g <= cfg.generations; ++g) {
    if (allow_early_stop && cfg.early_stop && evo.best().eval.success) break;
    std::vector<std::size_t> order(evo.population.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), rank_less);

    std::vector<Individual<Gene>> next;
    for (int e = 0; e < cfg.elitism; ++e) next.push_back(evo.population[order[static_cast<std::size_t>(e)]]);
    while (static_cast<int>(next.size()) < cfg.population) {
      const auto& a = tournament();
      const auto& b = tournament();
      Individual<Gene> child{a.genes, {}};
      if (rng.bernoulli(cfg.crossover_prob)) {
        auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(units)));
        auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(units)));
        if (i > j) std::swap(i, j);
        std::copy(b.genes.begin() + static_cast<std::ptrdiff_t>(i * unit),
                  b.genes.begin() + static_cast<std::ptrdiff_t>(j * unit),
                  child.genes.begin() + static_cast<std::ptrdiff_t>(i * unit));
      }
      for (std::size_t k = 0; k < length; ++k)
        if (rng.bernoulli(p_mut)) mutate(child.genes, k, rng);
      next.push_back(std::move(child));
    }

    try {
      before_generation(g);
      batch.clear();
      for (std::size_t i = static_cast<std::size_t>(cfg.elitism); i < next.size(); ++i) batch.push_back(&next[i].genes);
      evals = evaluate(batch);
    } catch (const Error& e) {
      evo.error_note = std::string("oracle failure in generation ") + std::to_string(g) + ": " + e.what();
      break;
    }
    for (std::size_t i = 0; i < evals.size(); ++i) next[static_cast<std::size_t>(cfg.elitism) + i].eval = evals[i];
    evo.population = std::move(next);
    evo.generations_used = g;
    record();
  }
  return evo;
}

Evaluation score(const DetectionSet& dets, const TargetSpec& target, double threshold) {
  Evaluation e;
  e.cost = attack_cost(dets, target);
  e.matched = matched_detection(dets, target);
  e.success = attack_succeeded(e.matched, target, threshold);
  return e;
}

void check_target(const Oracle& oracle, const TargetSpec& target) {
  if (target.mode == TargetSpec::Mode::targeted &&
      (target.target_class < 0 || target.target_class >= static_cast<int>(oracle.class_names().size())))
    throw Error(ErrorKind::range, "target class " + std::to_string(target.target_class) + " is not in the oracle's class list");
}

template <typename Gene, typename Render>
EAResult run_image_attack(Oracle& oracle, std::span<Oracle* const> workers, const Image& image, const TargetSpec& target,
                          const EAConfig& config, AttackKind kind, std::size_t unit,
                          std::function<std::vector<Gene>(int, Rng&)> init,
                          std::function<void(std::vector<Gene>&, std::size_t, Rng&)> mutate, Render render) {
  config.validate();
  check_target(oracle, target);
  const std::uint64_t start = total_queries(oracle, workers);
  const Evaluation baseline = score(oracle.detect(image), target, oracle.threshold());

  auto evaluate = [&](const std::vector<const std::vector<Gene>*>& batch) {
    std::vector<Image> images;
    images.reserve(batch.size());
    for (const auto* g : batch) images.push_back(render(*g));
    const auto dets = detect_all(oracle, workers, images);
    std::vector<Evaluation> out;
    for (const auto& d : dets) out.push_back(score(d, target, oracle.threshold()));
    return out;
  };
  const auto evo = evolve<Gene>(config, unit, init, mutate, evaluate, [](int) {}, true);
  const auto& best = evo.best();

  EAResult r;
  r.example = {image, render(best.genes), std::nullopt, 0, kind};
  r.example.changed_pixel_count = changed_pixel_count(r.example.base, r.example.adversarial);
  r.outcome.baseline_confidence = baseline.matched ? baseline.matched->confidence : 0.0;
  if (baseline.matched) r.outcome.baseline_class = baseline.matched->class_id;
  r.outcome.attacked_confidence = best.eval.matched ? best.eval.matched->confidence : 0.0;
  if (best.eval.matched) r.outcome.attacked_class = best.eval.matched->class_id;
  r.outcome.success = best.eval.success;
  r.outcome.generations_used = evo.generations_used;
  r.outcome.queries_used = total_queries(oracle, workers) - start;
  r.outcome.error_note = evo.error_note;
  r.best_cost = evo.best_cost;
  return r;
}

}  // namespace

EAResult ea_perturb(Oracle& oracle, const Image& image, const TargetSpec& target, int epsilon, const EAConfig& config,
                    std::span<Oracle* const> workers) {
  if (epsilon < 0 || epsilon > 255) throw Error(ErrorKind::range, "ea: epsilon must lie in [0, 255]");
  const std::size_t length = image.bytes().size();
  auto init = [&](int index, Rng& rng) {
    std::vector<std::int16_t> g(length, 0);
    if (index > 0)
      for (auto& v : g) v = static_cast<std::int16_t>(rng.uniform_int(-epsilon, epsilon));
    return g;
  };
  auto mutate = [&](std::vector<std::int16_t>& g, std::size_t k, Rng& rng) {
    g[k] = static_cast<std::int16_t>(rng.uniform_int(-epsilon, epsilon));
  };
  auto render = [&](const std::vector<std::int16_t>& g) {
    Image out = image;
    auto src = image.bytes();
    auto dst = out.bytes();
    for (std::size_t i = 0; i < length; ++i) dst[i] = static_cast<std::uint8_t>(std::clamp(src[i] + g[i], 0, 255));
    return out;
  };
  EAResult r = run_image_attack<std::int16_t>(oracle, workers, image, target, config, AttackKind::ea_perturb, 1, init,
                                              mutate, render);
  r.example.epsilon = epsilon;
  return r;
}

EAResult ea_pixel_limited(Oracle& oracle, const Image& image, const TargetSpec& target, const PixelAttackConfig& pixels,
                          const EAConfig& config, std::span<Oracle* const> workers) {
  if (pixels.n_pixels < 1) throw Error(ErrorKind::range, "pixel attack: n_pixels must be >= 1");
  if (static_cast<std::size_t>(pixels.n_pixels) > image.pixel_count())
    throw Error(ErrorKind::range, "pixel attack: n_pixels exceeds the image pixel count");
  if (pixels.intensities.empty()) throw Error(ErrorKind::invalid_argument, "pixel attack: empty intensity set");
  const int w = image.width(), h = image.height();
  const auto levels = static_cast<std::int64_t>(pixels.intensities.size());
  // Gene k of a tuple: 0 = x, 1 = y, 2..4 = index into the intensity set.
  auto draw = [&](std::size_t field, Rng& rng) -> std::int32_t {
    if (field == 0) return static_cast<std::int32_t>(rng.uniform_int(0, w - 1));
    if (field == 1) return static_cast<std::int32_t>(rng.uniform_int(0, h - 1));
    return static_cast<std::int32_t>(rng.uniform_int(0, levels - 1));
  };
  const std::size_t length = static_cast<std::size_t>(pixels.n_pixels) * 5;
  auto init = [&](int, Rng& rng) {
    std::vector<std::int32_t> g(length);
    for (std::size_t k = 0; k < length; ++k) g[k] = draw(k % 5, rng);
    return g;
  };
  auto mutate = [&](std::vector<std::int32_t>& g, std::size_t k, Rng& rng) { g[k] = draw(k % 5, rng); };
  auto render = [&](const std::vector<std::int32_t>& g) {
    Image out = image;
    for (std::size_t t = 0; t < length; t += 5)
      out.set_pixel(g[t], g[t + 1], pixels.intensities[static_cast<std::size_t>(g[t + 2])],
                    pixels.intensities[static_cast<std::size_t>(g[t + 3])],
                    pixels.intensities[static_cast<std::size_t>(g[t + 4])]);
    return out;
  };
  return run_image_attack<std::int32_t>(oracle, workers, image, target, config, AttackKind::ea_pixels, 5, init, mutate,
                                        render);
}

// ---- patch synthesis -------------------------------------------------------

std::vector<PatchSample> sample_patch_transforms(const std::vector<PatchScene>& scenes, int patch_size,
                                                 const TransformDistribution& dist, int per_scene, Rng& rng) {
  std::vector<PatchSample> out;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const Box& v = scenes[s].victim;
    for (int k = 0; k < per_scene; ++k) {
      PatchSample sample;
      sample.scene = s;
      sample.alpha = rng.uniform(dist.alpha_min, dist.alpha_max);
      sample.transform.scale = rng.uniform(dist.scale_min, dist.scale_max);
      sample.transform.rotation =
          dist.random_rotation ? rotation_from_degrees(90 * static_cast<int>(rng.uniform_int(0, 3))) : Rotation::r0;
      const double cx = rng.uniform(v.x + 0.25 * v.w, v.x + 0.75 * v.w);
      const double cy = rng.uniform(v.y + 0.25 * v.h, v.y + 0.75 * v.h);
      const long side = std::max(1L, std::lround(patch_size * sample.transform.scale));
      sample.transform.x = static_cast<int>(std::floor(cx - side / 2.0));
      sample.transform.y = static_cast<int>(std::floor(cy - side / 2.0));
      out.push_back(sample);
    }
  }
  return out;
}

PatchAttackResult ea_patch(Oracle& oracle, const std::vector<PatchScene>& scenes, const PatchAttackConfig& config,
                           std::span<Oracle* const> workers) {
  config.ea.validate();
  const auto& dist = config.transforms;
  if (scenes.empty()) throw Error(ErrorKind::invalid_argument, "patch attack: at least one scene required");
  if (config.patch_size < 1) throw Error(ErrorKind::range, "patch attack: patch size must be >= 1");
  if (!(dist.alpha_min >= 0.0 && dist.alpha_min <= dist.alpha_max && dist.alpha_max <= 1.0))
    throw Error(ErrorKind::range, "patch attack: alpha range must lie in [0, 1]");
  if (!(dist.scale_min > 0.0 && dist.scale_min <= dist.scale_max))
    throw Error(ErrorKind::range, "patch attack: scale range must be positive");
  if (dist.samples_per_scene < 1 || dist.holdout_samples < 1)
    throw Error(ErrorKind::range, "patch attack: sample counts must be >= 1");
  for (const auto& s : scenes)
    if (config.patch_size > s.image.width() || config.patch_size > s.image.height())
      throw Error(ErrorKind::range, "patch attack: patch larger than a scene");

  const TargetSpec suppress = TargetSpec::suppress();
  const std::uint64_t start = total_queries(oracle, workers);
  const double threshold = oracle.threshold();
  auto victim_confidence = [&](const DetectionSet& dets, const Box& victim) {
    const auto m = match_victim(dets, victim);
    return m ? m->confidence : 0.0;
  };

  std::vector<double> base_conf;
  for (const auto& s : scenes) base_conf.push_back(victim_confidence(oracle.detect(s.image), s.victim));

  const int side = config.patch_size;
  const std::size_t length = static_cast<std::size_t>(side) * side * 3;
  auto to_raster = [&](const std::vector<std::uint8_t>& g) { return Image(side, side, g); };

  // Mean matched confidence of `rasters` under `samples`; one value per raster.
  auto mean_confidence = [&](const std::vector<const std::vector<std::uint8_t>*>& rasters,
                             const std::vector<PatchSample>& samples) {
    std::vector<Image> images;
    for (const auto* g : rasters) {
      const Image raster = to_raster(*g);
      for (const auto& s : samples)
        images.push_back(apply_patch(scenes[s.scene].image, Patch(raster, s.alpha), s.transform));
    }
    const auto dets = detect_all(oracle, workers, images);
    std::vector<double> means;
    for (std::size_t r = 0; r < rasters.size(); ++r) {
      double sum = 0.0;
      for (std::size_t k = 0; k < samples.size(); ++k)
        sum += victim_confidence(dets[r * samples.size() + k], scenes[samples[k].scene].victim);
      means.push_back(sum / static_cast<double>(samples.size()));
    }
    return means;
  };
  auto baseline_mean = [&](const std::vector<PatchSample>& samples) {
    double sum = 0.0;
    for (const auto& s : samples) sum += base_conf[s.scene];
    return sum / static_cast<double>(samples.size());
  };

  std::vector<PatchSample> current;
  PatchAttackResult result;
  auto before_generation = [&](int g) {
    Rng stream(mix_seed(config.ea.seed, static_cast<std::uint64_t>(g) + 1));
    current = sample_patch_transforms(scenes, side, dist, dist.samples_per_scene, stream);
    result.baseline_cost.push_back(baseline_mean(current));
  };
  auto evaluate = [&](const std::vector<const std::vector<std::uint8_t>*>& batch) {
    const auto means = mean_confidence(batch, current);
    std::vector<Evaluation> out;
    for (double m : means) out.push_back({m, std::nullopt, false});
    return out;
  };
  auto init = [&](int, Rng& rng) {
    std::vector<std::uint8_t> g(length);
    for (auto& v : g) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    return g;
  };
  auto mutate = [](std::vector<std::uint8_t>& g, std::size_t k, Rng& rng) {
    g[k] = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  };
  const auto evo = evolve<std::uint8_t>(config.ea, 3, init, mutate, evaluate, before_generation, false);
  if (!evo.error_note.empty()) throw Error(ErrorKind::oracle_terminated, evo.error_note);
  if (result.baseline_cost.size() > evo.best_cost.size()) result.baseline_cost.resize(evo.best_cost.size());

  const auto& best = evo.best();
  result.patch = Patch(to_raster(best.genes), 1.0);
  result.generation0_patch = Patch(to_raster(evo.generation0_best_individual.genes), 1.0);
  result.best_cost = evo.best_cost;
  result.population_costs = evo.population_costs;
  result.generations_used = evo.generations_used;

  // Held-out placements from an independent stream.
  Rng holdout_stream(mix_seed(config.ea.seed, 0x686f6c646f7574ULL));
  const auto holdout = sample_patch_transforms(scenes, side, dist, dist.holdout_samples, holdout_stream);
  std::vector<Image> images;
  for (const auto* g : {&best.genes, &evo.generation0_best_individual.genes}) {
    const Image raster = to_raster(*g);
    for (const auto& s : holdout) images.push_back(apply_patch(scenes[s.scene].image, Patch(raster, s.alpha), s.transform));
  }
  const auto dets = detect_all(oracle, workers, images);
  double sum_best = 0.0, sum_g0 = 0.0, sum_base = 0.0;
  std::size_t below = 0;
  for (std::size_t k = 0; k < holdout.size(); ++k) {
    const Box& victim = scenes[holdout[k].scene].victim;
    const auto m = match_victim(dets[k], victim);
    EvasionOutcome o;
    o.baseline_confidence = base_conf[holdout[k].scene];
    o.attacked_confidence = m ? m->confidence : 0.0;
    if (m) o.attacked_class = m->class_id;
    o.success = attack_succeeded(m, suppress, threshold);
    o.generations_used = evo.generations_used;
    below += o.success ? 1 : 0;
    sum_best += o.attacked_confidence;
    sum_g0 += victim_confidence(dets[holdout.size() + k], victim);
    sum_base += o.baseline_confidence;
    result.holdout.push_back(o);
  }
  const double n = static_cast<double>(holdout.size());
  result.holdout_mean_confidence = sum_best / n;
  result.generation0_holdout_mean_confidence = sum_g0 / n;
  result.baseline_mean_confidence = sum_base / n;
  result.holdout_success_fraction = static_cast<double>(below) / n;
  result.queries_used = total_queries(oracle, workers) - start;
  return result;
}

std::vector<PatchScene> calibration_scenes(Oracle& oracle, std::size_t count, std::uint64_t base_seed, std::size_t max_tries) {
  std::vector<PatchScene> scenes;
  SceneSpec spec;
  spec.object_counts = {1, 0};
  for (std::uint64_t i = 0; scenes.size() < count && i < max_tries; ++i) {
    const SyntheticScene scene = generate_synthetic_scene(spec, mix_seed(base_seed, i));
    const Box victim = to_pixel_box(scene.annotations.front(), scene.image.width(), scene.image.height());
    const auto matched = match_victim(oracle.detect(scene.image), victim);
    if (matched && matched->class_id == kVesselClass) scenes.push_back({scene.image, victim});
  }
  return scenes;
}

}  // namespace masred
