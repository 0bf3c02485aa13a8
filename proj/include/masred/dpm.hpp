#pragma once

#include "masred/detection.hpp"
#include "masred/image.hpp"
#include "masred/imagery.hpp"
#include "masred/oracle.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace masred {

// ---- state machine ---------------------------------------------------------

enum class DpmMode { remote, automatic, loiter };
enum class Comms { ok, lost };

std::string_view to_string(DpmMode mode);  // REMOTE, AUTO, LOITER
std::string_view to_string(Comms comms);   // ok, lost
Comms parse_comms(std::string_view text);

struct DetectionSummary {
  std::size_t considered = 0;  // detections >= threshold of non-ignored classes
  std::size_t ignored = 0;     // detections >= threshold of ignored classes
  double max_confidence = 0.0; // over considered detections
  int top_class = -1;          // class of the most confident considered detection

  friend bool operator==(const DetectionSummary&, const DetectionSummary&) = default;
};

struct DpmConfig {
  double threshold = kDefaultThreshold;
  // Class names the module does not treat as obstacles.
  std::vector<std::string> ignored_classes;
};

struct DpmState {
  DpmMode mode = DpmMode::remote;
  Comms comms = Comms::ok;
  DetectionSummary last;

  friend bool operator==(const DpmState&, const DpmState&) = default;
};

DetectionSummary summarize(const DetectionSet& detections, const std::vector<std::string>& class_names,
                           const DpmConfig& config);

// Pure transition: comms ok -> REMOTE; lost with an obstacle detection ->
// LOITER; lost without -> AUTO. The previous mode does not matter.
DpmState step(const DpmState& state, Comms comms, const DetectionSet& detections,
              const std::vector<std::string>& class_names, const DpmConfig& config);

// ---- scenario --------------------------------------------------------------

inline constexpr std::string_view kScenarioFormat = "masred-scenario/1";
inline constexpr std::string_view kScenarioLogFormat = "masred-scenario-log/1";
inline constexpr double kTickSeconds = 1.0;
inline constexpr double kDefaultCollisionRadius = 5.0;

// Positions in metres (x east, y north), headings in degrees clockwise from
// north, speeds in m/s.
struct Kinematics {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;
};

struct Camera {
  double fov_deg = 60.0;
  int width = 64;
  int height = 64;
  double mount_height = 20.0;  // metres above the waterline
  double horizon = 0.3;        // horizon row as a fraction of the height
};

struct Obstacle {
  std::string id;
  std::string kind = "vessel";  // vessel or buoy
  Kinematics motion;
  double length = 20.0;  // hull length, or buoy diameter
};

struct CommsEvent {
  int tick = 0;
  Comms comms = Comms::ok;
};

// Physical patch carried by an obstacle over an inclusive tick range.
struct PatchAttack {
  int from_tick = 0;
  int to_tick = 0;
  std::string obstacle;
  Image raster;           // empty -> the default backdoor trigger
  double alpha = 1.0;
  double size = 8.0;      // metres (side length)
  double offset_y = 0.5;  // vertical patch centre within the obstacle box, 0 top .. 1 bottom
};

// Whole-frame substitution for one tick.
struct FrameSubstitution {
  int tick = 0;
  Image frame;
};

struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  int ticks = 60;
  double collision_radius = kDefaultCollisionRadius;
  DpmConfig dpm;
  Camera camera;
  Kinematics ownship;            // mission track followed in AUTO
  std::optional<Kinematics> operator_track;  // REMOTE heading/speed, defaults to the mission
  std::vector<Obstacle> obstacles;
  std::vector<CommsEvent> comms;  // strictly increasing ticks; comms ok before the first
  std::vector<PatchAttack> attacks;
  std::vector<FrameSubstitution> frames;
};

void validate(const Scenario& scenario);

// Canonical JSON text. Substituted frames and custom patch rasters are
// embedded as base64 PNG.
std::string scenario_to_json(const Scenario& scenario);
// Frames may also be given as {"tick", "path"}; relative paths resolve
// against `base`.
Scenario scenario_from_json(const std::string& text, const std::filesystem::path& base = {});
Scenario load_scenario(const std::filesystem::path& path);

Comms comms_at(const Scenario& scenario, int tick);

struct RenderedObstacle {
  std::string id;
  Box box;  // pixels; empty when not visible
  bool visible = false;
};

// Camera frame for a tick: background from the scenario seed and tick,
// obstacles drawn far to near.
Image render_frame(const Scenario& scenario, const Kinematics& own, const std::vector<Obstacle>& obstacles, int tick,
                   std::vector<RenderedObstacle>* placed = nullptr);

enum class ScenarioOutcome { completed, loitered, collided, error };
std::string_view to_string(ScenarioOutcome outcome);

struct TickRecord {
  int tick = 0;
  Comms comms = Comms::ok;
  DpmMode mode = DpmMode::remote;
  DetectionSet detections;
  double own_x = 0.0;
  double own_y = 0.0;
  double min_distance = 0.0;  // after this tick's motion
  std::string frame_digest;    // rendered or substituted frame
  std::string queried_digest;  // frame handed to the oracle, after any attack
  bool attacked = false;
};

struct ScenarioLog {
  std::string name;
  double collision_radius = kDefaultCollisionRadius;
  std::vector<TickRecord> ticks;
  ScenarioOutcome outcome = ScenarioOutcome::completed;
  std::uint64_t queries = 0;
  std::string error;  // set when outcome == error
};

// Outcome implied by a distance and mode trace: collided iff some distance
// is below the radius, else loitered iff LOITER was ever entered.
ScenarioOutcome outcome_from_trace(const std::vector<TickRecord>& ticks, double collision_radius);

// Renders, attacks, queries, steps and integrates each tick at 1 s. Stops at
// the first collision. Oracle failures end the log with outcome error.
ScenarioLog run_scenario(const Scenario& scenario, Oracle& oracle);

// Line-per-tick text records followed by a summary block.
std::string log_to_text(const ScenarioLog& log);

}  // namespace masred
