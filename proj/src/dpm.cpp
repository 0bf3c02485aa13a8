#include "masred/dpm.hpp"

#include "masred/dataset.hpp"
#include "masred/digest.hpp"
#include "masred/error.hpp"
#include "masred/poison.hpp"
#include "masred/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

namespace masred {

using json = nlohmann::json;

std::string_view to_string(DpmMode mode) {
  switch (mode) {
    case DpmMode::remote: return "REMOTE";
    case DpmMode::automatic: return "AUTO";
    case DpmMode::loiter: return "LOITER";
  }
  return "?";
}

std::string_view to_string(Comms comms) { return comms == Comms::ok ? "ok" : "lost"; }

Comms parse_comms(std::string_view text) {
  if (text == "ok") return Comms::ok;
  if (text == "lost") return Comms::lost;
  throw Error(ErrorKind::format, "comms state must be \"ok\" or \"lost\", got \"" + std::string(text) + "\"");
}

DetectionSummary summarize(const DetectionSet& detections, const std::vector<std::string>& class_names,
                           const DpmConfig& config) {
  DetectionSummary s;
  for (const auto& d : detections.detections) {
    if (!(d.confidence >= config.threshold)) continue;
    const bool known = d.class_id >= 0 && d.class_id < static_cast<int>(class_names.size());
    const bool ignored =
        known && std::find(config.ignored_classes.begin(), config.ignored_classes.end(),
                           class_names[static_cast<std::size_t>(d.class_id)]) != config.ignored_classes.end();
    if (ignored) {
      ++s.ignored;
      continue;
    }
    ++s.considered;
    if (d.confidence > s.max_confidence || s.top_class < 0) {
      s.max_confidence = d.confidence;
      s.top_class = d.class_id;
    }
  }
  return s;
}

DpmState step(const DpmState&, Comms comms, const DetectionSet& detections,
              const std::vector<std::string>& class_names, const DpmConfig& config) {
  DpmState next;
  next.comms = comms;
  next.last = summarize(detections, class_names, config);
  if (comms == Comms::ok)
    next.mode = DpmMode::remote;
  else
    next.mode = next.last.considered > 0 ? DpmMode::loiter : DpmMode::automatic;
  return next;
}

// ---- scenario file ---------------------------------------------------------

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorKind::invalid_argument, "scenario: " + message);
}

bool finite(const Kinematics& k) {
  return std::isfinite(k.x) && std::isfinite(k.y) && std::isfinite(k.heading) && std::isfinite(k.speed);
}

json kinematics_json(const Kinematics& k) {
  return {{"x", k.x}, {"y", k.y}, {"heading", k.heading}, {"speed", k.speed}};
}

Kinematics kinematics_from(const json& j) {
  Kinematics k;
  k.x = j.value("x", 0.0);
  k.y = j.value("y", 0.0);
  k.heading = j.value("heading", 0.0);
  k.speed = j.value("speed", 0.0);
  return k;
}

std::string png_base64(const Image& image) { return base64_encode(encode_png(image)); }
Image image_from_base64(const std::string& text) { return decode_png(base64_decode(text)); }

}  // namespace

void validate(const Scenario& s) {
  require(s.ticks > 0, "ticks must be positive");
  require(std::isfinite(s.collision_radius) && s.collision_radius > 0, "collision radius must be positive");
  require(s.camera.width > 0 && s.camera.height > 0, "camera size must be positive");
  require(s.camera.fov_deg > 0 && s.camera.fov_deg < 180, "camera field of view must lie in (0, 180)");
  require(std::isfinite(s.camera.mount_height) && s.camera.mount_height > 0, "camera mount height must be positive");
  require(s.camera.horizon > 0 && s.camera.horizon < 1, "horizon fraction must lie in (0, 1)");
  require(s.dpm.threshold >= 0 && s.dpm.threshold <= 1, "threshold must lie in [0, 1]");
  require(finite(s.ownship), "ownship kinematics must be finite");
  if (s.operator_track) require(finite(*s.operator_track), "operator track must be finite");
  for (const auto& o : s.obstacles) {
    require(!o.id.empty(), "obstacle id must not be empty");
    require(o.kind == "vessel" || o.kind == "buoy", "obstacle kind must be vessel or buoy");
    require(finite(o.motion) && std::isfinite(o.length) && o.length > 0, "obstacle " + o.id + " kinematics must be finite");
    require(std::count_if(s.obstacles.begin(), s.obstacles.end(), [&](const Obstacle& q) { return q.id == o.id; }) == 1,
            "duplicate obstacle id " + o.id);
  }
  for (std::size_t i = 0; i < s.comms.size(); ++i) {
    require(s.comms[i].tick >= 0, "comms event tick must be non-negative");
    if (i > 0) require(s.comms[i].tick > s.comms[i - 1].tick, "comms event ticks must be strictly increasing");
  }
  for (const auto& a : s.attacks) {
    require(a.from_tick >= 0 && a.from_tick <= a.to_tick, "attack tick range is empty");
    require(a.alpha >= 0 && a.alpha <= 1, "attack alpha must lie in [0, 1]");
    require(std::isfinite(a.size) && a.size > 0, "attack patch size must be positive");
    require(a.offset_y >= 0 && a.offset_y <= 1, "attack offset must lie in [0, 1]");
    require(std::any_of(s.obstacles.begin(), s.obstacles.end(), [&](const Obstacle& o) { return o.id == a.obstacle; }),
            "attack names unknown obstacle " + a.obstacle);
  }
  for (std::size_t i = 0; i < s.frames.size(); ++i) {
    require(!s.frames[i].frame.empty(), "substituted frame is empty");
    if (i > 0) require(s.frames[i].tick > s.frames[i - 1].tick, "frame substitution ticks must be strictly increasing");
  }
}

std::string scenario_to_json(const Scenario& s) {
  json j;
  j["format"] = kScenarioFormat;
  j["name"] = s.name;
  j["seed"] = s.seed;
  j["ticks"] = s.ticks;
  j["collision_radius"] = s.collision_radius;
  j["dpm"] = {{"threshold", s.dpm.threshold}, {"ignored_classes", s.dpm.ignored_classes}};
  j["camera"] = {{"fov_deg", s.camera.fov_deg},
                 {"width", s.camera.width},
                 {"height", s.camera.height},
                 {"mount_height", s.camera.mount_height},
                 {"horizon", s.camera.horizon}};
  j["ownship"] = kinematics_json(s.ownship);
  if (s.operator_track) j["operator_track"] = kinematics_json(*s.operator_track);
  j["obstacles"] = json::array();
  for (const auto& o : s.obstacles)
    j["obstacles"].push_back({{"id", o.id}, {"kind", o.kind}, {"motion", kinematics_json(o.motion)}, {"length", o.length}});
  j["comms"] = json::array();
  for (const auto& c : s.comms) j["comms"].push_back({{"tick", c.tick}, {"state", to_string(c.comms)}});
  j["attacks"] = json::array();
  for (const auto& a : s.attacks) {
    json aj = {{"from_tick", a.from_tick}, {"to_tick", a.to_tick}, {"obstacle", a.obstacle},
               {"alpha", a.alpha},         {"size", a.size},       {"offset_y", a.offset_y}};
    aj["raster"] = a.raster.empty() ? json("default") : json(png_base64(a.raster));
    j["attacks"].push_back(std::move(aj));
  }
  j["frames"] = json::array();
  for (const auto& f : s.frames) j["frames"].push_back({{"tick", f.tick}, {"png", png_base64(f.frame)}});
  return j.dump(2) + "\n";
}

Scenario scenario_from_json(const std::string& text, const std::filesystem::path& base) {
  Scenario s;
  try {
    const json j = json::parse(text);
    if (j.value("format", std::string()) != kScenarioFormat)
      throw Error(ErrorKind::format, "scenario: expected format \"" + std::string(kScenarioFormat) + "\"");
    s.name = j.value("name", s.name);
    s.seed = j.value("seed", s.seed);
    s.ticks = j.value("ticks", s.ticks);
    s.collision_radius = j.value("collision_radius", s.collision_radius);
    if (j.contains("dpm")) {
      s.dpm.threshold = j["dpm"].value("threshold", s.dpm.threshold);
      s.dpm.ignored_classes = j["dpm"].value("ignored_classes", s.dpm.ignored_classes);
    }
    if (j.contains("camera")) {
      const auto& c = j["camera"];
      s.camera.fov_deg = c.value("fov_deg", s.camera.fov_deg);
      s.camera.width = c.value("width", s.camera.width);
      s.camera.height = c.value("height", s.camera.height);
      s.camera.mount_height = c.value("mount_height", s.camera.mount_height);
      s.camera.horizon = c.value("horizon", s.camera.horizon);
    }
    if (j.contains("ownship")) s.ownship = kinematics_from(j["ownship"]);
    if (j.contains("operator_track")) s.operator_track = kinematics_from(j["operator_track"]);
    for (const auto& o : j.value("obstacles", json::array())) {
      Obstacle ob;
      ob.id = o.at("id").get<std::string>();
      ob.kind = o.value("kind", ob.kind);
      if (o.contains("motion")) ob.motion = kinematics_from(o["motion"]);
      ob.length = o.value("length", ob.length);
      s.obstacles.push_back(std::move(ob));
    }
    for (const auto& c : j.value("comms", json::array()))
      s.comms.push_back({c.at("tick").get<int>(), parse_comms(c.at("state").get<std::string>())});
    for (const auto& a : j.value("attacks", json::array())) {
      PatchAttack pa;
      pa.from_tick = a.at("from_tick").get<int>();
      pa.to_tick = a.at("to_tick").get<int>();
      pa.obstacle = a.at("obstacle").get<std::string>();
      pa.alpha = a.value("alpha", pa.alpha);
      pa.size = a.value("size", pa.size);
      pa.offset_y = a.value("offset_y", pa.offset_y);
      const std::string raster = a.value("raster", std::string("default"));
      if (raster != "default") pa.raster = image_from_base64(raster);
      s.attacks.push_back(std::move(pa));
    }
    for (const auto& f : j.value("frames", json::array())) {
      FrameSubstitution fs;
      fs.tick = f.at("tick").get<int>();
      if (f.contains("png")) {
        fs.frame = image_from_base64(f["png"].get<std::string>());
      } else {
        std::filesystem::path p = f.at("path").get<std::string>();
        fs.frame = load_image(p.is_relative() ? base / p : p);
      }
      s.frames.push_back(std::move(fs));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("scenario: ") + e.what());
  }
  validate(s);
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  return scenario_from_json(read_text_file(path), path.parent_path());
}

Comms comms_at(const Scenario& scenario, int tick) {
  Comms c = Comms::ok;
  for (const auto& e : scenario.comms) {
    if (e.tick > tick) break;
    c = e.comms;
  }
  return c;
}

// ---- rendering -------------------------------------------------------------

namespace {

constexpr std::uint64_t kBackgroundSalt = 0x626b67;
constexpr std::uint64_t kObstacleSalt = 0x6f6273;

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

double focal_px(const Camera& c) { return (c.width / 2.0) / std::tan(radians(c.fov_deg) / 2.0); }

struct CameraPoint {
  double depth;    // along the heading
  double lateral;  // to starboard
};

CameraPoint to_camera(const Kinematics& own, double x, double y) {
  const double h = radians(own.heading);
  const double dx = x - own.x;
  const double dy = y - own.y;
  return {dx * std::sin(h) + dy * std::cos(h), dx * std::cos(h) - dy * std::sin(h)};
}

constexpr double kMinDepth = 1.0;

Kinematics advance(Kinematics k, double seconds) {
  const double h = radians(k.heading);
  k.x += k.speed * std::sin(h) * seconds;
  k.y += k.speed * std::cos(h) * seconds;
  return k;
}

double min_distance(const Kinematics& own, const std::vector<Obstacle>& obstacles) {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& o : obstacles) d = std::min(d, std::hypot(o.motion.x - own.x, o.motion.y - own.y));
  return d;
}

}  // namespace

Image render_frame(const Scenario& scenario, const Kinematics& own, const std::vector<Obstacle>& obstacles, int tick,
                   std::vector<RenderedObstacle>* placed) {
  const Camera& cam = scenario.camera;
  Image frame(cam.width, cam.height);
  Rng bg(mix_seed(mix_seed(scenario.seed, kBackgroundSalt), static_cast<std::uint64_t>(tick)));
  const int horizon = render_background(frame, Palette{}, bg, cam.horizon);
  const double f = focal_px(cam);

  std::vector<std::size_t> order(obstacles.size());
  std::vector<CameraPoint> points;
  for (std::size_t i = 0; i < obstacles.size(); ++i) {
    order[i] = i;
    points.push_back(to_camera(own, obstacles[i].motion.x, obstacles[i].motion.y));
  }
  // Far to near so nearer hulls occlude; ties keep file order.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return points[a].depth > points[b].depth; });

  if (placed) {
    placed->clear();
    for (const auto& o : obstacles) placed->push_back({o.id, {}, false});
  }
  for (std::size_t i : order) {
    const CameraPoint& p = points[i];
    if (p.depth < kMinDepth) continue;
    const Obstacle& o = obstacles[i];
    const double cx = cam.width / 2.0 + f * p.lateral / p.depth;
    const double waterline = horizon + f * cam.mount_height / p.depth;
    const double size = f * o.length / p.depth;
    Rng draw(mix_seed(mix_seed(scenario.seed, kObstacleSalt), i));
    const auto pixels = o.kind == "vessel" ? draw_vessel(frame, cx, waterline, size, draw)
                                           : draw_buoy(frame, cx, waterline - size / 2, size / 2, draw);
    if (placed && !pixels.empty()) (*placed)[i] = {o.id, bounding_box(pixels), true};
  }
  return frame;
}

// ---- simulation ------------------------------------------------------------

std::string_view to_string(ScenarioOutcome outcome) {
  switch (outcome) {
    case ScenarioOutcome::completed: return "completed";
    case ScenarioOutcome::loitered: return "loitered";
    case ScenarioOutcome::collided: return "collided";
    case ScenarioOutcome::error: return "error";
  }
  return "?";
}

ScenarioOutcome outcome_from_trace(const std::vector<TickRecord>& ticks, double collision_radius) {
  bool loitered = false;
  for (const auto& t : ticks) {
    if (t.min_distance < collision_radius) return ScenarioOutcome::collided;
    loitered = loitered || t.mode == DpmMode::loiter;
  }
  return loitered ? ScenarioOutcome::loitered : ScenarioOutcome::completed;
}

namespace {

// Composites every patch active at `tick` onto its obstacle's rendered box.
bool apply_attacks(const Scenario& s, int tick, const std::vector<Obstacle>& obstacles,
                   const std::vector<RenderedObstacle>& placed, const Kinematics& own, Image& frame) {
  bool any = false;
  const double f = focal_px(s.camera);
  for (const auto& a : s.attacks) {
    if (tick < a.from_tick || tick > a.to_tick) continue;
    const auto it = std::find_if(obstacles.begin(), obstacles.end(), [&](const Obstacle& o) { return o.id == a.obstacle; });
    const auto idx = static_cast<std::size_t>(it - obstacles.begin());
    if (!placed[idx].visible) continue;
    const double depth = to_camera(own, it->motion.x, it->motion.y).depth;
    const Patch patch(a.raster.empty() ? default_trigger_raster() : a.raster, a.alpha);
    const long side = std::max(1L, std::lround(f * a.size / depth));
    PatchTransform t;
    t.scale = static_cast<double>(side) / patch.raster.width();
    const PixelRect extent = transformed_extent(patch, t);
    const Box& b = placed[idx].box;
    t.x = static_cast<int>(std::floor(b.x + b.w / 2 - extent.width / 2.0));
    t.y = static_cast<int>(std::floor(b.y + a.offset_y * b.h - extent.height / 2.0));
    if (patch_footprint(frame.width(), frame.height(), patch, t).empty()) continue;
    frame = apply_patch(frame, patch, t);
    any = true;
  }
  return any;
}

}  // namespace

ScenarioLog run_scenario(const Scenario& scenario, Oracle& oracle) {
  validate(scenario);
  ScenarioLog log;
  log.name = scenario.name;
  log.collision_radius = scenario.collision_radius;
  const std::uint64_t queries_before = oracle.query_count();
  const Kinematics remote = scenario.operator_track.value_or(scenario.ownship);
  Kinematics own = scenario.ownship;
  std::vector<Obstacle> obstacles = scenario.obstacles;
  DpmState state;
  std::size_t next_frame = 0;

  for (int tick = 0; tick < scenario.ticks; ++tick) {
    TickRecord rec;
    rec.tick = tick;
    rec.comms = comms_at(scenario, tick);

    std::vector<RenderedObstacle> placed;
    Image frame = render_frame(scenario, own, obstacles, tick, &placed);
    while (next_frame < scenario.frames.size() && scenario.frames[next_frame].tick < tick) ++next_frame;
    const bool substituted = next_frame < scenario.frames.size() && scenario.frames[next_frame].tick == tick;
    if (substituted) frame = scenario.frames[next_frame].frame;
    rec.frame_digest = sha256_hex(frame.bytes());
    rec.attacked = substituted;
    if (!substituted) rec.attacked = apply_attacks(scenario, tick, obstacles, placed, own, frame);
    rec.queried_digest = sha256_hex(frame.bytes());

    try {
      rec.detections = oracle.detect(frame);
    } catch (const Error& e) {
      log.ticks.push_back(std::move(rec));
      log.ticks.back().mode = state.mode;
      log.ticks.back().min_distance = min_distance(own, obstacles);
      log.outcome = ScenarioOutcome::error;
      log.error = std::string(to_string(e.kind())) + ": " + e.what();
      log.queries = oracle.query_count() - queries_before;
      return log;
    }
    state = step(state, rec.comms, rec.detections, oracle.class_names(), scenario.dpm);
    rec.mode = state.mode;

    switch (state.mode) {
      case DpmMode::remote: {
        Kinematics cmd = remote;
        cmd.x = own.x;
        cmd.y = own.y;
        own = advance(cmd, kTickSeconds);
        break;
      }
      case DpmMode::automatic: {
        Kinematics cmd = scenario.ownship;
        cmd.x = own.x;
        cmd.y = own.y;
        own = advance(cmd, kTickSeconds);
        break;
      }
      case DpmMode::loiter: break;
    }
    for (auto& o : obstacles) o.motion = advance(o.motion, kTickSeconds);
    rec.own_x = own.x;
    rec.own_y = own.y;
    rec.min_distance = min_distance(own, obstacles);
    log.ticks.push_back(std::move(rec));
    if (log.ticks.back().min_distance < scenario.collision_radius) break;
  }
  log.outcome = outcome_from_trace(log.ticks, scenario.collision_radius);
  log.queries = oracle.query_count() - queries_before;
  return log;
}

std::string log_to_text(const ScenarioLog& log) {
  std::ostringstream out;
  char buf[160];
  out << kScenarioLogFormat << "\n";
  out << "scenario " << log.name << "\n";
  std::snprintf(buf, sizeof buf, "collision_radius %.3f\n", log.collision_radius);
  out << buf;
  out << "tick_seconds 1\n";
  for (const auto& t : log.ticks) {
    std::snprintf(buf, sizeof buf, "tick %d comms %s mode %s own %.3f %.3f min_distance %.3f detections %zu", t.tick,
                  std::string(to_string(t.comms)).c_str(), std::string(to_string(t.mode)).c_str(), t.own_x, t.own_y,
                  t.min_distance, t.detections.detections.size());
    out << buf;
    for (const auto& d : t.detections.detections) {
      std::snprintf(buf, sizeof buf, " [%d %.4f %.1f %.1f %.1f %.1f]", d.class_id, d.confidence, d.box.x, d.box.y, d.box.w,
                    d.box.h);
      out << buf;
    }
    out << " attacked " << (t.attacked ? 1 : 0) << " frame " << t.frame_digest << " queried " << t.queried_digest << "\n";
  }
  double closest = std::numeric_limits<double>::infinity();
  for (const auto& t : log.ticks) closest = std::min(closest, t.min_distance);
  out << "summary\n";
  out << "outcome " << to_string(log.outcome) << "\n";
  out << "ticks_run " << log.ticks.size() << "\n";
  out << "queries " << log.queries << "\n";
  if (!log.ticks.empty()) {
    std::snprintf(buf, sizeof buf, "closest_approach %.3f\n", closest);
    out << buf;
  }
  if (!log.error.empty()) out << "error " << log.error << "\n";
  return out.str();
}

}  // namespace masred
