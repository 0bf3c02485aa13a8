#include "cli.hpp"

#include "masred/dataset.hpp"
#include "masred/digest.hpp"
#include "masred/dpm.hpp"
#include "masred/engagement.hpp"
#include "masred/error.hpp"
#include "masred/evasion.hpp"
#include "masred/image.hpp"
#include "masred/oracle.hpp"
#include "masred/poison.hpp"
#include "masred/toydet.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <cstdlib>
#include <algorithm>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>

namespace masred {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::string_view kRunFormat = "masred-run/1";

// JSON config files for CLI11. Nested objects name subcommands, so
// {"attack": {"fgsm": {"epsilon": 4}}} sets `attack fgsm --epsilon`. A run
// manifest is accepted too: its "config" member is read.
class JsonConfig : public CLI::Config {
 public:
  // When set, nested objects also select their subcommands, so a config
  // file alone can name the command to run.
  explicit JsonConfig(bool select_subcommands) : select_subcommands_(select_subcommands) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    if (j.value("format", std::string()) == kRunFormat && j.contains("config")) j = j["config"];
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  bool select_subcommands_;

  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  void flatten(const json& object, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) const {
    for (const auto& [key, value] : object.items()) {
      if (value.is_object()) {
        auto nested = parents;
        nested.push_back(key);
        if (select_subcommands_) {
          CLI::ConfigItem open;
          open.parents = nested;
          open.name = "++";
          out.push_back(std::move(open));
        }
        flatten(value, nested, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array())
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      else
        item.inputs.push_back(scalar(value));
      out.push_back(std::move(item));
    }
  }
};

struct Artifact {
  std::string path;  // relative to the output directory
  std::string sha256;
};

// Per-run state: output directory and the artifacts written so far.
struct Run {
  fs::path out_dir;
  std::vector<Artifact> artifacts;
  std::ostream* out = nullptr;

  fs::path path(const std::string& rel) const { return out_dir / rel; }

  void prepare() {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw Error(ErrorKind::io, "cannot create output directory " + out_dir.string() + ": " + ec.message());
  }

  void record(const std::string& rel, const std::string& digest) {
    for (auto& a : artifacts)
      if (a.path == rel) {
        a.sha256 = digest;
        return;
      }
    artifacts.push_back({rel, digest});
  }

  void write_text(const std::string& rel, const std::string& text) {
    write_text_file(path(rel), text);
    record(rel, sha256_hex(text));
  }

  void write_bytes(const std::string& rel, std::span<const std::uint8_t> bytes) {
    write_file_bytes(path(rel), bytes);
    record(rel, sha256_hex(bytes));
  }

  void write_image(const std::string& rel, const Image& image) {
    save_image(path(rel), image);
    record(rel, sha256_file(path(rel)));
  }

  void write_model(const std::string& rel, const ToyDetectorModel& model) { write_bytes(rel, serialize_model(model)); }

  // A dataset directory is recorded by its digest manifest.
  Dataset write_dataset_dir(const std::string& rel, const Dataset& dataset) {
    Dataset written = write_dataset(dataset, path(rel));
    record(rel + "/", digest_dataset(written).manifest);
    return written;
  }
};

// ---- option groups -------------------------------------------------------------

struct OracleOptions {
  std::string model;
  std::string command;
  double threshold = kDefaultThreshold;
  int timeout_ms = static_cast<int>(kDefaultOracleTimeout.count());
  int workers = 0;

  void add(CLI::App* app, bool with_workers) {
    auto* m = app->add_option("--model", model, "Toy detector model file")->check(CLI::ExistingFile);
    auto* c = app->add_option("--oracle-cmd", command, "External oracle command (line protocol on stdin/stdout)");
    m->excludes(c);
    app->add_option("--threshold", threshold, "Detection confidence threshold")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    app->add_option("--timeout-ms", timeout_ms, "External oracle reply timeout")->check(CLI::PositiveNumber)->capture_default_str();
    if (with_workers)
      app->add_option("--workers", workers, "Extra oracle handles for fitness fan-out")->check(CLI::NonNegativeNumber)->capture_default_str();
  }

  std::unique_ptr<Oracle> open() const {
    if (!model.empty())
      return std::make_unique<ToyOracle>(std::make_shared<const ToyDetectorModel>(load_model(model)), threshold);
    if (!command.empty()) return std::make_unique<ExternalOracle>(command, threshold, std::chrono::milliseconds(timeout_ms));
    throw Error(ErrorKind::invalid_argument, "an oracle is required: give --model or --oracle-cmd");
  }

  // Handles for fan-out; toy handles share the loaded model.
  std::vector<std::unique_ptr<Oracle>> open_workers(const Oracle& main) const {
    std::vector<std::unique_ptr<Oracle>> out;
    for (int i = 0; i < workers; ++i) {
      if (const auto* toy = dynamic_cast<const ToyOracle*>(&main))
        out.push_back(std::make_unique<ToyOracle>(std::make_shared<const ToyDetectorModel>(toy->model()), threshold));
      else
        out.push_back(open());
    }
    return out;
  }
};

struct EaOptions {
  std::string preset = "paper-default";
  std::optional<int> population, generations, elitism;
  std::optional<double> mutation, crossover;
  std::uint64_t seed = 1;
  bool no_early_stop = false;

  void add(CLI::App* app, const std::string& default_preset) {
    preset = default_preset;
    app->add_option("--preset", preset, "EA preset")->check(CLI::IsMember(ea_preset_names()))->capture_default_str();
    app->add_option("--population", population, "Population size (overrides the preset)");
    app->add_option("--generations", generations, "Generation budget (overrides the preset)");
    app->add_option("--mutation", mutation, "Mutation rate (preset units)");
    app->add_option("--crossover", crossover, "Crossover probability");
    app->add_option("--elitism", elitism, "Elite individuals carried over");
    app->add_option("--seed", seed, "EA seed")->capture_default_str();
    app->add_flag("--no-early-stop", no_early_stop, "Run every generation");
  }

  EAConfig config() const {
    EAConfig c = ea_preset(preset);
    if (population) c.population = *population;
    if (generations) c.generations = *generations;
    if (mutation) c.mutation_rate = *mutation;
    if (crossover) c.crossover_prob = *crossover;
    if (elitism) c.elitism = *elitism;
    c.seed = seed;
    c.early_stop = !no_early_stop;
    c.validate();
    return c;
  }
};

struct GoalOptions {
  std::string image;
  std::vector<double> victim;
  std::optional<int> target_class;

  void add(CLI::App* app) {
    app->add_option("--image", image, "Input image (PNG or PPM)")->required()->check(CLI::ExistingFile);
    app->add_option("--victim", victim, "Victim box in pixels: x,y,w,h")->delimiter(',')->expected(4);
    app->add_option("--target-class", target_class, "Targeted mode: drive the victim to this class id");
  }

  TargetSpec target() const {
    std::optional<Box> box;
    if (!victim.empty()) box = Box{victim[0], victim[1], victim[2], victim[3]};
    return target_class ? TargetSpec::targeted(*target_class, box) : TargetSpec::suppress(box);
  }
};

struct DetectorOptions {
  int grid = 8, input = 64, hidden = 32, context = 1, colors = 8;
  std::uint64_t init_seed = 1;
  int epochs = 40, batch = 8;
  double lr = 0.5;
  std::uint64_t seed = 1;
  bool no_mirror = false;

  void add(CLI::App* app) {
    app->add_option("--grid", grid, "Grid cells per side")->capture_default_str();
    app->add_option("--input-size", input, "Model input resolution")->capture_default_str();
    app->add_option("--hidden", hidden, "Hidden units (0 = linear)")->capture_default_str();
    app->add_option("--context", context, "Neighbour cell rings per cell")->capture_default_str();
    app->add_option("--colors", colors, "Learned colour channels")->capture_default_str();
    app->add_option("--init-seed", init_seed, "Parameter initialisation seed")->capture_default_str();
    app->add_option("--epochs", epochs, "Training epochs")->capture_default_str();
    app->add_option("--lr", lr, "Learning rate")->capture_default_str();
    app->add_option("--batch", batch, "Minibatch size")->capture_default_str();
    app->add_option("--seed", seed, "Training shuffle seed")->capture_default_str();
    app->add_flag("--no-mirror", no_mirror, "Disable random left-right mirroring");
  }

  DetectorConfig detector(const std::vector<std::string>& classes) const {
    DetectorConfig d;
    d.grid = grid;
    d.input_size = input;
    d.hidden = hidden;
    d.context = context;
    d.colors = colors;
    d.class_names = classes;
    validate(d);
    return d;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.epochs = epochs;
    t.learning_rate = lr;
    t.batch_size = batch;
    t.seed = seed;
    t.mirror = !no_mirror;
    return t;
  }
};

// ---- output helpers --------------------------------------------------------------

json outcome_json(const EvasionOutcome& o) {
  json j = {{"baseline_confidence", o.baseline_confidence},
            {"attacked_confidence", o.attacked_confidence},
            {"success", o.success},
            {"generations_used", o.generations_used},
            {"queries_used", o.queries_used}};
  j["baseline_class"] = o.baseline_class ? json(*o.baseline_class) : json(nullptr);
  j["attacked_class"] = o.attacked_class ? json(*o.attacked_class) : json(nullptr);
  if (!o.error_note.empty()) j["error_note"] = o.error_note;
  return j;
}

json target_json(const TargetSpec& t) {
  json j = {{"mode", t.mode == TargetSpec::Mode::targeted ? "targeted" : "suppress"}};
  if (t.mode == TargetSpec::Mode::targeted) j["target_class"] = t.target_class;
  if (t.victim) j["victim"] = {t.victim->x, t.victim->y, t.victim->w, t.victim->h};
  return j;
}

json ea_json(const EAConfig& c) {
  return {{"population", c.population},
          {"generations", c.generations},
          {"mutation_rate", c.mutation_rate},
          {"mutation_mode", c.mutation_mode == MutationMode::per_gene ? "per_gene" : "expected_genes"},
          {"crossover_prob", c.crossover_prob},
          {"elitism", c.elitism},
          {"seed", c.seed},
          {"early_stop", c.early_stop}};
}

json report_json(const PoisonReport& r) {
  return {{"clean_metric_baseline", r.clean_metric_baseline},
          {"clean_metric_poisoned", r.clean_metric_poisoned},
          {"clean_metric_delta", r.clean_metric_poisoned - r.clean_metric_baseline},
          {"trigger_success_rate", r.trigger_success_rate},
          {"trigger_hits", r.trigger_hits},
          {"triggered_count", r.triggered_count},
          {"trigger_rate_undefined", r.trigger_rate_undefined},
          {"raw_trigger_rate", r.raw_trigger_rate},
          {"outer_objective", r.outer_objective.total()},
          {"baseline_objective", r.baseline_objective.total()},
          {"baseline_losses", r.baseline_losses},
          {"poisoned_losses", r.poisoned_losses}};
}

std::string dumps(const json& j) { return j.dump(2) + "\n"; }

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<Oracle*> raw(const std::vector<std::unique_ptr<Oracle>>& handles) {
  std::vector<Oracle*> out;
  for (const auto& h : handles) out.push_back(h.get());
  return out;
}

ScopeRecord scope_from_file(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("scope file: ") + e.what());
  }
  ScopeRecord s;
  s.objectives = j.value("objectives", std::string());
  s.rules_of_engagement = j.value("rules_of_engagement", std::string());
  s.access_level = parse_access_level(j.value("access_level", std::string("closed-box")));
  if (j.contains("schedule")) {
    s.schedule_start = j["schedule"].value("start", std::string());
    s.schedule_end = j["schedule"].value("end", std::string());
  }
  s.contacts = j.value("contacts", std::vector<std::string>{});
  s.disclosure_process = j.value("disclosure_process", std::string());
  return s;
}

Finding finding_from_file(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("finding file: ") + e.what());
  }
  Finding f;
  f.id = j.value("id", std::string());
  f.title = j.value("title", std::string());
  f.component = j.value("component", std::string());
  f.attack_kind = j.value("attack_kind", std::string());
  if (j.contains("likelihood")) f.likelihood = parse_level(j["likelihood"].get<std::string>());
  if (j.contains("impact")) f.impact = parse_level(j["impact"].get<std::string>());
  for (const auto& a : j.value("artifacts", json::array())) f.artifacts.push_back({a.value("label", std::string()), a.value("sha256", std::string())});
  f.results = j.value("results", json::object()).dump();
  f.mitigations = j.value("mitigations", std::vector<std::string>{});
  f.items = j.value("items", std::vector<std::string>{});
  return f;
}

// Effective option values of the selected command, nested by subcommand.
json config_echo(const CLI::App& app) {
  json root = json::object();
  const CLI::App* current = &app;
  json* node = &root;
  while (current) {
    for (const CLI::Option* opt : current->get_options()) {
      const std::string name = opt->get_single_name();
      if (name.empty() || name == "help" || name == "config" || name == "help-all") continue;
      if (opt->get_expected_min() == 0) {
        (*node)[name] = opt->count() > 0 && opt->as<bool>();
      } else if (opt->count() > 0) {
        const auto& r = opt->results();
        if (r.size() == 1) (*node)[name] = r.front();
        else (*node)[name] = r;
      } else if (!opt->get_default_str().empty()) {
        (*node)[name] = opt->get_default_str();
      }
    }
    const auto subs = current->get_subcommands();
    if (subs.empty()) break;
    current = subs.front();
    node = &(*node)[current->get_name()];
  }
  return root;
}

std::string command_path(const CLI::App& app) {
  std::string out;
  const CLI::App* current = &app;
  while (!current->get_subcommands().empty()) {
    current = current->get_subcommands().front();
    out += (out.empty() ? "" : " ") + current->get_name();
  }
  return out;
}

json seeds_of(const json& config) {
  json seeds = json::object();
  std::function<void(const json&, const std::string&)> walk = [&](const json& node, const std::string& prefix) {
    for (const auto& [key, value] : node.items()) {
      if (value.is_object()) walk(value, prefix + key + ".");
      else if (key.find("seed") != std::string::npos) seeds[prefix + key] = value;
    }
  };
  walk(config, "");
  return seeds;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Red-team toolkit for maritime autonomous system perception", "masred"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "JSON config file; command-line flags override its values");
  std::string out_dir = "masred-out";
  app.add_option("--out", out_dir, "Output directory")->envname(kOutputDirEnv)->capture_default_str();

  // dataset
  auto* dataset = app.add_subcommand("dataset", "Dataset digests and synthetic scenes")->require_subcommand(1);
  auto* d_digest = dataset->add_subcommand("digest", "Digest an on-disk dataset");
  std::string digest_root, digest_compare;
  d_digest->add_option("--root", digest_root, "Dataset root")->required()->check(CLI::ExistingDirectory);
  d_digest->add_option("--compare", digest_compare, "Digest file to compare against")->check(CLI::ExistingFile);
  auto* d_synth = dataset->add_subcommand("synth", "Generate synthetic marine scenes");
  SyntheticDatasetSpec synth;
  std::string synth_split = "train";
  d_synth->add_option("--count", synth.count, "Number of scenes")->check(CLI::PositiveNumber)->capture_default_str();
  d_synth->add_option("--seed", synth.seed, "Scene seed")->capture_default_str();
  d_synth->add_option("--width", synth.width, "Image width")->check(CLI::PositiveNumber)->capture_default_str();
  d_synth->add_option("--height", synth.height, "Image height")->check(CLI::PositiveNumber)->capture_default_str();
  d_synth->add_option("--min-vessels", synth.min_vessels)->capture_default_str();
  d_synth->add_option("--max-vessels", synth.max_vessels)->capture_default_str();
  d_synth->add_option("--min-buoys", synth.min_buoys)->capture_default_str();
  d_synth->add_option("--max-buoys", synth.max_buoys)->capture_default_str();
  d_synth->add_option("--prefix", synth.prefix, "Image file prefix")->capture_default_str();
  d_synth->add_option("--split", synth_split, "Split name")->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the toy detector");
  std::string train_data, train_test;
  DetectorOptions det;
  train_cmd->add_option("--data", train_data, "Training dataset root")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--test", train_test, "Held-out dataset root for accuracy")->check(CLI::ExistingDirectory);
  det.add(train_cmd);

  // poison
  auto* poison = app.add_subcommand("poison", "Training-data poisoning")->require_subcommand(1);
  auto* p_plan = poison->add_subcommand("plan", "Select items and fix the poisoning strategy");
  std::string plan_data, plan_kind = "backdoor", plan_new_class, plan_trigger, plan_placement = "on_object";
  double plan_budget = 0.1;
  std::uint64_t plan_seed = 7;
  int plan_source = -1;
  std::optional<int> plan_target;
  BackdoorSpec bd;
  p_plan->add_option("--data", plan_data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  p_plan->add_option("--kind", plan_kind)->check(CLI::IsMember({"label_flip", "chaff_injection", "targeted_swap", "backdoor"}))->capture_default_str();
  p_plan->add_option("--budget", plan_budget, "Fraction of items to poison")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  p_plan->add_option("--seed", plan_seed, "Selection and placement seed")->capture_default_str();
  p_plan->add_option("--source-class", plan_source, "Class to rewrite (-1 = any)")->capture_default_str();
  p_plan->add_option("--target-class", plan_target, "Target class id");
  p_plan->add_option("--new-class", plan_new_class, "Introduce a new target class with this name");
  p_plan->add_option("--trigger", plan_trigger, "Custom trigger raster")->check(CLI::ExistingFile);
  p_plan->add_option("--placement", plan_placement)->check(CLI::IsMember({"on_object", "random"}))->capture_default_str();
  p_plan->add_option("--alpha-min", bd.alpha_min)->capture_default_str();
  p_plan->add_option("--alpha-max", bd.alpha_max)->capture_default_str();
  p_plan->add_option("--scale-min", bd.scale_min)->capture_default_str();
  p_plan->add_option("--scale-max", bd.scale_max)->capture_default_str();

  auto* p_apply = poison->add_subcommand("apply", "Apply a poisoning plan");
  std::string apply_data, apply_plan;
  p_apply->add_option("--data", apply_data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  p_apply->add_option("--plan", apply_plan, "Plan file")->required()->check(CLI::ExistingFile);

  auto* p_eval = poison->add_subcommand("eval", "Train clean and poisoned models and score them");
  std::string eval_clean, eval_poisoned, eval_test, eval_plan;
  std::uint64_t eval_trigger_seed = 99;
  DetectorOptions eval_det;
  p_eval->add_option("--clean", eval_clean, "Clean training set")->required()->check(CLI::ExistingDirectory);
  p_eval->add_option("--poisoned", eval_poisoned, "Poisoned training set")->required()->check(CLI::ExistingDirectory);
  p_eval->add_option("--test", eval_test, "Clean test set")->required()->check(CLI::ExistingDirectory);
  p_eval->add_option("--plan", eval_plan, "Backdoor plan, enables triggered evaluation")->check(CLI::ExistingFile);
  p_eval->add_option("--trigger-seed", eval_trigger_seed, "Seed of test-time trigger placement")->capture_default_str();
  eval_det.add(p_eval);

  auto* p_scan = poison->add_subcommand("scan", "Flag colour-histogram outliers");
  std::string scan_data, scan_plan;
  ScanConfig scan;
  p_scan->add_option("--data", scan_data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  p_scan->add_option("--plan", scan_plan, "Plan whose selection is the ground truth")->check(CLI::ExistingFile);
  p_scan->add_option("--bins", scan.bins, "Histogram bins per channel")->capture_default_str();
  p_scan->add_option("--z", scan.threshold, "Robust z-score cutoff")->capture_default_str();

  // attack
  auto* attack = app.add_subcommand("attack", "Evasion attacks")->require_subcommand(1);
  auto* a_fgsm = attack->add_subcommand("fgsm", "Open-box signed-gradient attack (toy model)");
  std::string fgsm_model;
  GoalOptions fgsm_goal;
  double fgsm_eps = 8;
  int fgsm_iters = 1;
  double fgsm_threshold = kDefaultThreshold;
  a_fgsm->add_option("--model", fgsm_model, "Toy detector model file")->required()->check(CLI::ExistingFile);
  fgsm_goal.add(a_fgsm);
  a_fgsm->add_option("--epsilon", fgsm_eps, "Max-norm budget in 1/255 units")->check(CLI::Range(0.0, 255.0))->capture_default_str();
  a_fgsm->add_option("--iterations", fgsm_iters, "Projected sign steps")->check(CLI::PositiveNumber)->capture_default_str();
  a_fgsm->add_option("--threshold", fgsm_threshold)->check(CLI::Range(0.0, 1.0))->capture_default_str();

  auto* a_ea = attack->add_subcommand("ea", "Closed-box evolutionary perturbation");
  OracleOptions ea_oracle;
  GoalOptions ea_goal;
  EaOptions ea_opts;
  int ea_eps = 8;
  ea_oracle.add(a_ea, true);
  ea_goal.add(a_ea);
  ea_opts.add(a_ea, "paper-default");
  a_ea->add_option("--epsilon", ea_eps, "Max-norm budget in 1/255 units")->check(CLI::Range(0, 255))->capture_default_str();

  auto* a_pix = attack->add_subcommand("pixels", "Closed-box pixel-budget attack");
  OracleOptions pix_oracle;
  GoalOptions pix_goal;
  EaOptions pix_opts;
  PixelAttackConfig pix;
  pix_oracle.add(a_pix, true);
  pix_goal.add(a_pix);
  pix_opts.add(a_pix, "paper-default");
  a_pix->add_option("--n", pix.n_pixels, "Pixel budget")->check(CLI::PositiveNumber)->capture_default_str();

  auto* a_patch = attack->add_subcommand("patch", "Evolve an adversarial patch");
  OracleOptions patch_oracle;
  EaOptions patch_opts;
  PatchAttackConfig patch_cfg;
  std::string patch_scenes;
  std::size_t patch_count = 5;
  patch_oracle.add(a_patch, true);
  patch_opts.add(a_patch, "paper-patch");
  a_patch->add_option("--scenes", patch_scenes, "Dataset whose first vessel per image is the victim")->check(CLI::ExistingDirectory);
  a_patch->add_option("--count", patch_count, "Number of scenes")->check(CLI::PositiveNumber)->capture_default_str();
  a_patch->add_option("--patch-size", patch_cfg.patch_size, "Patch side in pixels")->check(CLI::PositiveNumber)->capture_default_str();
  a_patch->add_option("--holdout", patch_cfg.transforms.holdout_samples, "Held-out placements per scene")->capture_default_str();

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Run a DPM scenario");
  OracleOptions sim_oracle;
  std::string scenario_path;
  sim_oracle.add(simulate, false);
  simulate->add_option("--scenario", scenario_path, "Scenario file")->required()->check(CLI::ExistingFile);

  // engage
  auto* engage = app.add_subcommand("engage", "Red-team engagement records")->require_subcommand(1);
  std::string data_dir = default_data_dir().string();
  engage->add_option("--data-dir", data_dir, "Catalog directory")->check(CLI::ExistingDirectory)->capture_default_str();
  auto* e_new = engage->add_subcommand("new", "Start an engagement from a scope file");
  std::string scope_file, engagement_id;
  e_new->add_option("--scope", scope_file, "Scope JSON")->required()->check(CLI::ExistingFile);
  e_new->add_option("--id", engagement_id, "Engagement id (random when absent)");
  auto* e_status = engage->add_subcommand("status", "Set a checklist item status");
  std::string status_plan, status_item, status_value, status_reason;
  e_status->add_option("--plan", status_plan, "Engagement file")->required()->check(CLI::ExistingFile);
  e_status->add_option("--item", status_item, "Checklist item id")->required();
  e_status->add_option("--status", status_value)->required()->check(CLI::IsMember({"open", "done", "not_applicable", "blocked"}));
  e_status->add_option("--reason", status_reason, "Required for not_applicable and blocked");
  auto* e_finding = engage->add_subcommand("finding", "Record a finding");
  std::string finding_plan, finding_file;
  std::vector<std::string> finding_items;
  e_finding->add_option("--plan", finding_plan, "Engagement file")->required()->check(CLI::ExistingFile);
  e_finding->add_option("--finding", finding_file, "Finding JSON")->required()->check(CLI::ExistingFile);
  e_finding->add_option("--items", finding_items, "Linked checklist item ids")->delimiter(',');
  auto* e_report = engage->add_subcommand("report", "Render the report");
  std::string report_plan, report_format = "markdown";
  e_report->add_option("--plan", report_plan, "Engagement file")->required()->check(CLI::ExistingFile);
  e_report->add_option("--format", report_format)->check(CLI::IsMember({"markdown", "json"}))->capture_default_str();

  // oracle
  auto* oracle_cmd = app.add_subcommand("oracle", "Oracle protocol endpoints")->require_subcommand(1);
  auto* o_serve = oracle_cmd->add_subcommand("serve-toy", "Serve a toy model over the line protocol on stdin/stdout");
  std::string serve_model;
  o_serve->add_option("--model", serve_model, "Toy detector model file")->required()->check(CLI::ExistingFile);
  auto* o_probe = oracle_cmd->add_subcommand("probe", "Handshake with an external oracle and optionally query it");
  OracleOptions probe_oracle;
  std::string probe_image;
  probe_oracle.add(o_probe, false);
  o_probe->add_option("--image", probe_image, "Image to query")->check(CLI::ExistingFile);

  // A config file (or a run manifest) may select the subcommand itself.
  std::function<void(CLI::App*)> make_configurable = [&](CLI::App* parent) {
    for (CLI::App* sub : parent->get_subcommands({})) {
      sub->configurable();
      make_configurable(sub);
    }
  };
  make_configurable(&app);
  const bool names_command = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
    return app.get_subcommand_no_throw(a) != nullptr;
  });
  app.config_formatter(std::make_shared<JsonConfig>(!names_command));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  const json config = config_echo(app);
  Run run;
  run.out_dir = out_dir;
  run.out = &out;
  std::string status = "ok";
  std::string failure;
  int code = 0;

  try {
    // The protocol channel must stay clean, so serve-toy writes nothing else.
    if (o_serve->parsed()) {
      const ToyDetectorModel model = load_model(serve_model);
      serve_oracle(in, out, model);
      return 0;
    }
    run.prepare();

    if (d_digest->parsed()) {
      const DatasetDigest digest = digest_directory(digest_root);
      run.write_text("digest.txt", digest.to_text());
      out << "manifest " << digest.manifest << "\n" << "files " << digest.files.size() << "\n";
      if (!digest_compare.empty()) {
        const auto diff = digest_difference(DatasetDigest::parse(read_text_file(digest_compare)), digest);
        for (const auto& p : diff) out << "differs " << p << "\n";
        if (!diff.empty()) throw Error(ErrorKind::state, std::to_string(diff.size()) + " file(s) differ from " + digest_compare);
        out << "match\n";
      }
    } else if (d_synth->parsed()) {
      synth.split = parse_split(synth_split);
      const Dataset ds = run.write_dataset_dir("dataset", generate_synthetic_dataset(synth));
      out << "wrote " << ds.size() << " scenes to " << run.path("dataset").string() << "\n";
    } else if (train_cmd->parsed()) {
      const Dataset data = load_dataset(train_data);
      const auto initial = ToyDetectorModel::initialized(det.detector(data.class_names), det.init_seed);
      const TrainResult result = train(initial, data, det.train());
      run.write_model("model.bin", result.model);
      json summary = {{"epoch_losses", result.epoch_losses}, {"train_accuracy", detection_accuracy(result.model, data)}};
      if (!train_test.empty()) summary["test_accuracy"] = detection_accuracy(result.model, load_dataset(train_test, Split::test));
      run.write_text("train.json", dumps(summary));
      out << "final_loss " << fixed(result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back()) << "\n";
      out << "train_accuracy " << fixed(summary["train_accuracy"].get<double>()) << "\n";
      if (summary.contains("test_accuracy")) out << "test_accuracy " << fixed(summary["test_accuracy"].get<double>()) << "\n";
    } else if (p_plan->parsed()) {
      const Dataset data = load_dataset(plan_data);
      PoisonStrategy s;
      s.kind = parse_poison_kind(plan_kind);
      s.source_class = plan_source;
      s.new_class_name = plan_new_class;
      if (!plan_new_class.empty()) {
        const int existing = data.class_index(plan_new_class);
        s.target_class = existing >= 0 ? existing : static_cast<int>(data.class_names.size());
        if (existing >= 0) s.new_class_name.clear();
      }
      if (plan_target) s.target_class = *plan_target;
      s.backdoor = bd;
      s.backdoor.placement = plan_placement == "random" ? TriggerPlacement::random : TriggerPlacement::on_object;
      if (!plan_trigger.empty()) s.backdoor.trigger = load_image(plan_trigger);
      const PoisonPlan plan = plan_poison(data, s, plan_budget, plan_seed);
      run.write_text("poison-plan.json", plan_to_json(plan));
      out << "selected " << plan.selected.size() << " of " << plan.dataset_size << "\n";
    } else if (p_apply->parsed()) {
      const Dataset data = load_dataset(apply_data);
      const PoisonPlan plan = plan_from_json(read_text_file(apply_plan));
      const PoisonResult result = apply_poison(data, plan);
      const Dataset written = run.write_dataset_dir("poisoned", result.dataset);
      const std::string source = digest_dataset(data).manifest;
      const std::string poisoned = digest_dataset(written).manifest;
      run.write_text("poison-manifest.json", manifest_to_json(plan, result.manifest, source, poisoned));
      out << "poisoned " << result.manifest.size() << " items\n";
    } else if (p_eval->parsed()) {
      const Dataset clean = load_dataset(eval_clean);
      const Dataset poisoned = load_dataset(eval_poisoned);
      const Dataset test = load_dataset(eval_test, Split::test);
      PoisonEvalConfig cfg;
      cfg.detector = eval_det.detector(clean.class_names);
      cfg.init_seed = eval_det.init_seed;
      cfg.train = eval_det.train();
      cfg.trigger_seed = eval_trigger_seed;
      std::optional<PoisonStrategy> trigger;
      if (!eval_plan.empty()) trigger = plan_from_json(read_text_file(eval_plan)).strategy;
      TrainedPair models;
      const PoisonReport report = evaluate_poison(clean, poisoned, test, trigger, cfg, &models);
      run.write_model("clean-model.bin", models.clean);
      run.write_model("poisoned-model.bin", models.poisoned);
      run.write_text("poison-report.json", dumps(report_json(report)));
      out << "clean_metric_baseline " << fixed(report.clean_metric_baseline) << "\n";
      out << "clean_metric_poisoned " << fixed(report.clean_metric_poisoned) << "\n";
      out << "trigger_success_rate " << fixed(report.trigger_success_rate) << " (" << report.trigger_hits << "/"
          << report.triggered_count << ")\n";
    } else if (p_scan->parsed()) {
      const Dataset data = load_dataset(scan_data);
      std::optional<std::vector<std::size_t>> truth;
      if (!scan_plan.empty()) truth = plan_from_json(read_text_file(scan_plan)).selected;
      const PoisonScanResult result = scan_for_poison(data, scan, truth);
      json j = {{"flagged", result.flagged}, {"scores", result.scores}};
      if (result.metrics) {
        j["tp"] = result.metrics->tp;
        j["fp"] = result.metrics->fp;
        j["fn"] = result.metrics->fn;
        j["precision"] = result.metrics->precision() ? json(*result.metrics->precision()) : json(nullptr);
        j["recall"] = result.metrics->recall() ? json(*result.metrics->recall()) : json(nullptr);
      }
      run.write_text("scan.json", dumps(j));
      out << "flagged " << result.flagged.size() << " of " << data.size() << "\n";
    } else if (a_fgsm->parsed()) {
      const auto model = std::make_shared<const ToyDetectorModel>(load_model(fgsm_model));
      ToyOracle oracle(model, fgsm_threshold);
      const Image image = load_image(fgsm_goal.image);
      const TargetSpec target = fgsm_goal.target();
      const AdversarialExample ex = fgsm(*model, image, target, fgsm_eps, fgsm_iters);
      const EvasionOutcome outcome = evaluate_evasion(oracle, image, ex.adversarial, target);
      run.write_image("adversarial.png", ex.adversarial);
      run.write_text("attack.json", dumps({{"kind", "fgsm"},
                                            {"epsilon", fgsm_eps},
                                            {"iterations", fgsm_iters},
                                            {"target", target_json(target)},
                                            {"changed_pixels", ex.changed_pixel_count},
                                            {"outcome", outcome_json(outcome)}}));
      out << "baseline " << fixed(outcome.baseline_confidence) << " attacked " << fixed(outcome.attacked_confidence)
          << " success " << (outcome.success ? "yes" : "no") << "\n";
    } else if (a_ea->parsed() || a_pix->parsed()) {
      const bool pixels = a_pix->parsed();
      const OracleOptions& oo = pixels ? pix_oracle : ea_oracle;
      const GoalOptions& goal = pixels ? pix_goal : ea_goal;
      const EAConfig ea = (pixels ? pix_opts : ea_opts).config();
      auto oracle = oo.open();
      const auto workers = oo.open_workers(*oracle);
      const auto handles = raw(workers);
      const Image image = load_image(goal.image);
      const TargetSpec target = goal.target();
      const EAResult result = pixels ? ea_pixel_limited(*oracle, image, target, pix, ea, handles)
                                     : ea_perturb(*oracle, image, target, ea_eps, ea, handles);
      run.write_image("adversarial.png", result.example.adversarial);
      json j = {{"kind", pixels ? "pixels" : "ea"},
                {"ea", ea_json(ea)},
                {"target", target_json(target)},
                {"changed_pixels", result.example.changed_pixel_count},
                {"best_cost", result.best_cost},
                {"outcome", outcome_json(result.outcome)}};
      if (pixels) j["n_pixels"] = pix.n_pixels;
      else j["epsilon"] = ea_eps;
      run.write_text("attack.json", dumps(j));
      out << "baseline " << fixed(result.outcome.baseline_confidence) << " attacked "
          << fixed(result.outcome.attacked_confidence) << " success " << (result.outcome.success ? "yes" : "no")
          << " queries " << result.outcome.queries_used << "\n";
      if (!result.outcome.error_note.empty()) throw Error(ErrorKind::oracle_terminated, result.outcome.error_note);
    } else if (a_patch->parsed()) {
      patch_cfg.ea = patch_opts.config();
      auto oracle = patch_oracle.open();
      const auto workers = patch_oracle.open_workers(*oracle);
      std::vector<PatchScene> scenes;
      if (!patch_scenes.empty()) {
        const Dataset data = load_dataset(patch_scenes);
        for (const auto& item : data.items) {
          if (scenes.size() >= patch_count) break;
          for (const auto& a : item.annotations)
            if (a.class_id == kVesselClass) {
              scenes.push_back({item.image, to_pixel_box(a, item.image.width(), item.image.height())});
              break;
            }
        }
      } else {
        scenes = calibration_scenes(*oracle, patch_count);
      }
      if (scenes.empty()) throw Error(ErrorKind::invalid_argument, "no scene with a detectable vessel victim");
      const PatchAttackResult result = ea_patch(*oracle, scenes, patch_cfg, raw(workers));
      run.write_image("patch.png", result.patch.raster);
      run.write_text("patch.json", dumps({{"ea", ea_json(patch_cfg.ea)},
                                           {"patch_size", patch_cfg.patch_size},
                                           {"scenes", scenes.size()},
                                           {"best_cost", result.best_cost},
                                           {"baseline_mean_confidence", result.baseline_mean_confidence},
                                           {"generation0_holdout_mean_confidence", result.generation0_holdout_mean_confidence},
                                           {"holdout_mean_confidence", result.holdout_mean_confidence},
                                           {"holdout_success_fraction", result.holdout_success_fraction},
                                           {"generations_used", result.generations_used},
                                           {"queries_used", result.queries_used}}));
      out << "holdout_mean_confidence generation0 " << fixed(result.generation0_holdout_mean_confidence) << " best "
          << fixed(result.holdout_mean_confidence) << "\n";
    } else if (simulate->parsed()) {
      const Scenario scenario = load_scenario(scenario_path);
      auto oracle = sim_oracle.open();
      const ScenarioLog log = run_scenario(scenario, *oracle);
      run.write_text("scenario-log.txt", log_to_text(log));
      out << "outcome " << to_string(log.outcome) << " ticks " << log.ticks.size() << " queries " << log.queries << "\n";
      if (log.outcome == ScenarioOutcome::error) throw Error(ErrorKind::oracle_terminated, "scenario stopped: " + log.error);
    } else if (engage->parsed()) {
      const Catalogs catalogs = load_catalogs(data_dir);
      if (e_new->parsed()) {
        const ScopeRecord scope = scope_from_file(scope_file);
        const EngagementPlan plan = engagement_id.empty() ? new_engagement(scope, catalogs.checklist)
                                                          : new_engagement(scope, catalogs.checklist, engagement_id);
        run.write_text("engagement.json", plan_to_json(plan));
        out << "engagement " << plan.id << " with " << plan.checklist.size() << " checklist items\n";
      } else if (e_status->parsed()) {
        EngagementPlan plan = engagement_from_json(read_text_file(status_plan));
        set_status(plan, status_item, parse_item_status(status_value), status_reason);
        run.write_text("engagement.json", plan_to_json(plan));
        out << status_item << " " << status_value << "\n";
      } else if (e_finding->parsed()) {
        EngagementPlan plan = engagement_from_json(read_text_file(finding_plan));
        Finding finding = finding_from_file(finding_file);
        std::vector<std::string> items = finding_items.empty() ? finding.items : finding_items;
        record_finding(plan, std::move(finding), items, catalogs);
        run.write_text("engagement.json", plan_to_json(plan));
        out << "finding " << plan.findings.back().id << " risk " << to_string(plan.findings.back().risk) << "\n";
      } else if (e_report->parsed()) {
        const EngagementPlan plan = engagement_from_json(read_text_file(report_plan));
        const ReportFormat format = parse_report_format(report_format);
        const std::string text = render_report(plan, format, catalogs);
        run.write_text(format == ReportFormat::markdown ? "report.md" : "report.json", text);
        out << "report " << (format == ReportFormat::markdown ? "report.md" : "report.json") << "\n";
      }
    } else if (o_probe->parsed()) {
      if (probe_oracle.command.empty()) throw Error(ErrorKind::invalid_argument, "probe needs --oracle-cmd");
      auto oracle = probe_oracle.open();
      json j = {{"classes", oracle->class_names()}, {"handshake", "ok"}};
      out << "handshake ok classes " << oracle->class_names().size() << "\n";
      if (!probe_image.empty()) {
        const DetectionSet d = oracle->detect(load_image(probe_image));
        json dets = json::array();
        for (const auto& x : d.detections)
          dets.push_back({{"class_id", x.class_id}, {"confidence", x.confidence}, {"box", {x.box.x, x.box.y, x.box.w, x.box.h}}});
        j["detections"] = dets;
        out << "detections " << d.size() << "\n";
      }
      run.write_text("probe.json", dumps(j));
    }
  } catch (const Error& e) {
    status = "error";
    failure = std::string(to_string(e.kind())) + ": " + e.what();
    err << "error[" << to_string(e.kind()) << "]: " << e.what() << "\n";
    code = 1;
  } catch (const std::exception& e) {
    status = "error";
    failure = std::string("io: ") + e.what();
    err << "error[io]: " << e.what() << "\n";
    code = 1;
  }

  try {
    if (fs::is_directory(run.out_dir)) {
      json manifest = {{"format", kRunFormat},
                       {"command", command_path(app)},
                       {"config", config},
                       {"seeds", seeds_of(config)},
                       {"status", status}};
      json artifacts = json::array();
      for (const auto& a : run.artifacts) artifacts.push_back({{"path", a.path}, {"sha256", a.sha256}});
      manifest["artifacts"] = artifacts;
      if (!failure.empty()) manifest["error"] = failure;
      write_text_file(run.path(kRunManifestName), dumps(manifest));
    }
  } catch (const std::exception& e) {
    err << "error[io]: cannot write run manifest: " << e.what() << "\n";
    code = 1;
  }
  return code;
}

}  // namespace masred
