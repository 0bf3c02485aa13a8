#pragma once

#include "masred/image.hpp"
#include "masred/imagery.hpp"
#include "masred/rng.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace masred {

// One labelled box in normalized image coordinates ("class cx cy w h").
struct Annotation {
  int class_id = 0;
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

Annotation parse_annotation(std::string_view line);
// Fixed six-decimal serialisation.
std::string format_annotation(const Annotation& annotation);
// Rounds all coordinates to the six-decimal grid used on disk.
Annotation canonical(const Annotation& annotation);

// Box in (possibly fractional) pixel coordinates, top-left anchored.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const noexcept { return w * h; }
  friend bool operator==(const Box&, const Box&) = default;
};

Box to_pixel_box(const Annotation& annotation, int image_width, int image_height);
Annotation from_pixel_box(int class_id, const Box& box, int image_width, int image_height);

// Intersection area divided by the smaller of the two box areas.
double overlap_ratio(const Box& a, const Box& b);

enum class Split { train, val, test };
std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct DatasetItem {
  std::string path;  // relative to the dataset root, e.g. "images/scene_0001.png"
  Image image;
  std::vector<Annotation> annotations;
};

struct Dataset {
  std::filesystem::path root;  // empty for in-memory datasets
  std::vector<std::string> class_names;
  Split split = Split::train;
  std::vector<DatasetItem> items;

  std::size_t size() const noexcept { return items.size(); }
  bool empty() const noexcept { return items.empty(); }
  int class_index(std::string_view name) const;  // -1 when absent
};

// Relative label path for an image path: images/x.png -> labels/x.txt.
std::string label_path_for(std::string_view image_path);

Dataset load_dataset(const std::filesystem::path& root, Split split = Split::train);
// Writes images, labels and classes.txt; items without annotations get no
// label file. Returns the dataset rebound to `root`.
Dataset write_dataset(const Dataset& dataset, const std::filesystem::path& root);
void validate_dataset(const Dataset& dataset);

struct DatasetDigest {
  std::string algorithm{"sha256"};
  std::vector<std::pair<std::string, std::string>> files;  // (relative path, hex digest), sorted by path
  std::string manifest;

  // "<hex>  <path>" lines sorted by path preceded by an algorithm header and
  // followed by "MANIFEST <hex>".
  std::string to_text() const;
  static DatasetDigest parse(std::string_view text);
  friend bool operator==(const DatasetDigest&, const DatasetDigest&) = default;
};

// Digests every file of an on-disk dataset (images, labels, classes.txt).
DatasetDigest digest_dataset(const Dataset& dataset);
// Digests every regular file below `root`.
DatasetDigest digest_directory(const std::filesystem::path& root);
DatasetDigest make_digest(std::vector<std::pair<std::string, std::string>> files);

// Paths whose digests differ or that exist in only one of the two digests.
std::vector<std::string> digest_difference(const DatasetDigest& a, const DatasetDigest& b);

// ---- synthetic marine scenes -----------------------------------------------

inline constexpr int kVesselClass = 0;
inline constexpr int kBuoyClass = 1;
inline const std::vector<std::string> kSceneClassNames{"vessel", "buoy"};

using Rgb = std::array<std::uint8_t, 3>;

struct Palette {
  Rgb sky_top{120, 165, 215};
  Rgb sky_horizon{190, 210, 230};
  Rgb sea_near{20, 60, 100};
  Rgb sea_far{45, 95, 135};
  int noise = 6;  // uniform per-channel jitter amplitude
};

struct SceneSpec {
  int width = 64;
  int height = 64;
  std::vector<int> object_counts{1, 0};  // indexed by class: vessel, buoy
  Palette palette{};
};

struct SyntheticScene {
  Image image;
  std::vector<Annotation> annotations;
  std::vector<std::vector<std::pair<int, int>>> object_pixels;  // visible drawn pixels per annotation
};

SyntheticScene generate_synthetic_scene(const SceneSpec& spec, std::uint64_t seed);

// Scene drawing primitives shared with the scenario renderer.
int render_background(Image& image, const Palette& palette, Rng& rng, double horizon_fraction);
// Draws a vessel with hull bottom-centre at (cx, bottom) and the given hull
// width. Returns the drawn pixel coordinates.
std::vector<std::pair<int, int>> draw_vessel(Image& image, double cx, double bottom, double hull_width, Rng& rng);
std::vector<std::pair<int, int>> draw_buoy(Image& image, double cx, double cy, double radius, Rng& rng);
// Tight box around a pixel set.
Box bounding_box(const std::vector<std::pair<int, int>>& pixels);

struct SyntheticDatasetSpec {
  int count = 200;
  int width = 64;
  int height = 64;
  int min_vessels = 1;
  int max_vessels = 2;
  int min_buoys = 0;
  int max_buoys = 1;
  std::uint64_t seed = 1;
  std::string prefix = "scene";
  Split split = Split::train;
};

Dataset generate_synthetic_dataset(const SyntheticDatasetSpec& spec);

}  // namespace masred
