#include "masred/dataset.hpp"

#include "masred/digest.hpp"
#include "masred/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <future>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace masred {

namespace fs = std::filesystem;

// ---- annotations -----------------------------------------------------------

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    fields.push_back(line.substr(i, j - i));
    i = j;
  }
  return fields;
}

double parse_real(std::string_view field) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(value))
    throw Error(ErrorKind::format, "annotation: non-numeric field '" + std::string(field) + "'");
  return value;
}

void check_annotation(const Annotation& a) {
  if (a.class_id < 0) throw Error(ErrorKind::range, "annotation: negative class id");
  if (a.cx < 0.0 || a.cx > 1.0 || a.cy < 0.0 || a.cy > 1.0)
    throw Error(ErrorKind::range, "annotation: box centre outside [0,1]");
  if (!(a.w > 0.0 && a.w <= 1.0 && a.h > 0.0 && a.h <= 1.0))
    throw Error(ErrorKind::range, "annotation: box size outside (0,1]");
}

double round6(double v) { return std::round(v * 1e6) / 1e6; }

}  // namespace

Annotation parse_annotation(std::string_view line) {
  const auto fields = split_fields(line);
  if (fields.size() != 5) throw Error(ErrorKind::format, "annotation: expected 5 fields, got " + std::to_string(fields.size()));
  Annotation a;
  {
    auto f = fields[0];
    auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), a.class_id);
    if (ec != std::errc() || ptr != f.data() + f.size())
      throw Error(ErrorKind::format, "annotation: non-numeric class id '" + std::string(f) + "'");
  }
  a.cx = parse_real(fields[1]);
  a.cy = parse_real(fields[2]);
  a.w = parse_real(fields[3]);
  a.h = parse_real(fields[4]);
  check_annotation(a);
  return a;
}

std::string format_annotation(const Annotation& a) {
  char buffer[128];
  std::snprintf(buffer, sizeof buffer, "%d %.6f %.6f %.6f %.6f", a.class_id, a.cx, a.cy, a.w, a.h);
  return buffer;
}

Annotation canonical(const Annotation& a) {
  Annotation out{a.class_id, round6(a.cx), round6(a.cy), round6(a.w), round6(a.h)};
  out.w = std::max(out.w, 1e-6);
  out.h = std::max(out.h, 1e-6);
  return out;
}

Box to_pixel_box(const Annotation& a, int image_width, int image_height) {
  return {(a.cx - a.w / 2) * image_width, (a.cy - a.h / 2) * image_height, a.w * image_width, a.h * image_height};
}

Annotation from_pixel_box(int class_id, const Box& box, int image_width, int image_height) {
  Annotation a{class_id, (box.x + box.w / 2) / image_width, (box.y + box.h / 2) / image_height,
               box.w / image_width, box.h / image_height};
  a.cx = std::clamp(a.cx, 0.0, 1.0);
  a.cy = std::clamp(a.cy, 0.0, 1.0);
  a.w = std::clamp(a.w, 1e-6, 1.0);
  a.h = std::clamp(a.h, 1e-6, 1.0);
  return canonical(a);
}

double overlap_ratio(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double smaller = std::min(a.area(), b.area());
  if (smaller <= 0.0) return 0.0;
  return ix * iy / smaller;
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw Error(ErrorKind::invalid_argument, "unknown split '" + std::string(text) + "'");
}

int Dataset::class_index(std::string_view name) const {
  for (std::size_t i = 0; i < class_names.size(); ++i)
    if (class_names[i] == name) return static_cast<int>(i);
  return -1;
}

// ---- directory layout ------------------------------------------------------

std::string label_path_for(std::string_view image_path) {
  const fs::path p(image_path);
  return (fs::path("labels") / p.stem()).string() + ".txt";
}

void validate_dataset(const Dataset& dataset) {
  std::set<std::string> seen;
  for (const auto& item : dataset.items) {
    if (!seen.insert(item.path).second) throw Error(ErrorKind::format, "duplicate image path " + item.path);
    for (const auto& a : item.annotations) {
      if (a.class_id < 0 || static_cast<std::size_t>(a.class_id) >= dataset.class_names.size())
        throw Error(ErrorKind::range, item.path + ": class id " + std::to_string(a.class_id) + " out of range (" +
                                          std::to_string(dataset.class_names.size()) + " classes)");
    }
  }
}

namespace {

std::vector<std::string> read_lines(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

DatasetItem load_item(const fs::path& root, const std::string& rel) {
  DatasetItem item;
  item.path = rel;
  item.image = load_image(root / rel);
  const fs::path label = root / label_path_for(rel);
  if (fs::exists(label)) {
    for (const auto& line : read_lines(label)) {
      if (split_fields(line).empty()) continue;
      try {
        item.annotations.push_back(parse_annotation(line));
      } catch (const Error& e) {
        throw Error(e.kind(), label_path_for(rel) + ": " + e.what());
      }
    }
  }
  return item;
}

}  // namespace

Dataset load_dataset(const fs::path& root, Split split) {
  const fs::path classes = root / "classes.txt";
  if (!fs::exists(classes)) throw Error(ErrorKind::io, "missing classes.txt in " + root.string());
  Dataset dataset;
  dataset.root = root;
  dataset.split = split;
  for (auto& line : read_lines(classes))
    if (!line.empty()) dataset.class_names.push_back(line);

  std::vector<std::string> paths;
  std::set<std::string> stems;
  if (fs::is_directory(root / "images")) {
    for (const auto& entry : fs::directory_iterator(root / "images")) {
      if (!entry.is_regular_file()) continue;
      auto ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (ext != ".png" && ext != ".ppm") continue;
      if (!stems.insert(entry.path().stem().string()).second)
        throw Error(ErrorKind::format, "two images share the stem " + entry.path().stem().string());
      paths.push_back((fs::path("images") / entry.path().filename()).generic_string());
    }
  }
  std::sort(paths.begin(), paths.end());

  // Load in contiguous chunks; results land in their sorted slot.
  dataset.items.resize(paths.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(), paths.size()));
  std::vector<std::future<void>> jobs;
  const std::size_t chunk = paths.empty() ? 0 : (paths.size() + workers - 1) / workers;
  for (std::size_t begin = 0; begin < paths.size(); begin += chunk) {
    const std::size_t end = std::min(paths.size(), begin + chunk);
    jobs.push_back(std::async(std::launch::async, [&, begin, end] {
      for (std::size_t i = begin; i < end; ++i) dataset.items[i] = load_item(root, paths[i]);
    }));
  }
  for (auto& job : jobs) job.get();
  validate_dataset(dataset);
  return dataset;
}

Dataset write_dataset(const Dataset& dataset, const fs::path& root) {
  validate_dataset(dataset);
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");
  std::string classes;
  for (const auto& name : dataset.class_names) classes += name + "\n";
  write_text_file(root / "classes.txt", classes);
  for (const auto& item : dataset.items) {
    save_image(root / item.path, item.image);
    const fs::path label = root / label_path_for(item.path);
    if (item.annotations.empty()) {
      fs::remove(label);
      continue;
    }
    std::string text;
    for (const auto& a : item.annotations) text += format_annotation(a) + "\n";
    write_text_file(label, text);
  }
  Dataset out = dataset;
  out.root = root;
  return out;
}

// ---- digests ---------------------------------------------------------------

DatasetDigest make_digest(std::vector<std::pair<std::string, std::string>> files) {
  std::sort(files.begin(), files.end());
  DatasetDigest digest;
  digest.files = std::move(files);
  std::string canonical_lines;
  for (const auto& [path, hex] : digest.files) canonical_lines += hex + "  " + path + "\n";
  digest.manifest = sha256_hex(canonical_lines);
  return digest;
}

std::string DatasetDigest::to_text() const {
  std::string out = "# algorithm: " + algorithm + "\n";
  for (const auto& [path, hex] : files) out += hex + "  " + path + "\n";
  out += "MANIFEST " + manifest + "\n";
  return out;
}

DatasetDigest DatasetDigest::parse(std::string_view text) {
  DatasetDigest digest;
  std::istringstream in{std::string(text)};
  std::string line;
  bool saw_manifest = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# algorithm: ", 0) == 0) {
      digest.algorithm = line.substr(13);
    } else if (line.rfind("MANIFEST ", 0) == 0) {
      digest.manifest = line.substr(9);
      saw_manifest = true;
    } else {
      const auto sep = line.find("  ");
      if (sep == std::string::npos) throw Error(ErrorKind::format, "digest manifest: malformed line '" + line + "'");
      digest.files.emplace_back(line.substr(sep + 2), line.substr(0, sep));
    }
  }
  if (!saw_manifest) throw Error(ErrorKind::format, "digest manifest: missing MANIFEST line");
  return digest;
}

DatasetDigest digest_dataset(const Dataset& dataset) {
  if (dataset.root.empty()) throw Error(ErrorKind::io, "digest_dataset: dataset has no on-disk root");
  std::vector<std::pair<std::string, std::string>> files;
  files.emplace_back("classes.txt", sha256_file(dataset.root / "classes.txt"));
  for (const auto& item : dataset.items) {
    files.emplace_back(item.path, sha256_file(dataset.root / item.path));
    const auto label = label_path_for(item.path);
    if (fs::exists(dataset.root / label)) files.emplace_back(label, sha256_file(dataset.root / label));
  }
  return make_digest(std::move(files));
}

DatasetDigest digest_directory(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    files.emplace_back(fs::relative(entry.path(), root).generic_string(), sha256_file(entry.path()));
  }
  return make_digest(std::move(files));
}

std::vector<std::string> digest_difference(const DatasetDigest& a, const DatasetDigest& b) {
  std::map<std::string, std::string> left(a.files.begin(), a.files.end());
  std::map<std::string, std::string> right(b.files.begin(), b.files.end());
  std::vector<std::string> out;
  for (const auto& [path, hex] : left) {
    auto it = right.find(path);
    if (it == right.end() || it->second != hex) out.push_back(path);
  }
  for (const auto& [path, hex] : right)
    if (!left.contains(path)) out.push_back(path);
  std::sort(out.begin(), out.end());
  return out;
}

// ---- synthetic scenes --------------------------------------------------------

namespace {

std::uint8_t jitter(int base, int noise, Rng& rng) {
  const int v = base + (noise > 0 ? static_cast<int>(rng.uniform_int(-noise, noise)) : 0);
  return static_cast<std::uint8_t>(std::clamp(v, 0, 255));
}

int lerp(int a, int b, double t) { return static_cast<int>(std::lround(a + (b - a) * t)); }

void put(Image& image, std::vector<std::pair<int, int>>& drawn, int x, int y, const Rgb& color) {
  if (!image.contains(x, y)) return;
  image.set_pixel(x, y, color[0], color[1], color[2]);
  drawn.emplace_back(x, y);
}

void dedupe(std::vector<std::pair<int, int>>& pixels) {
  std::sort(pixels.begin(), pixels.end());
  pixels.erase(std::unique(pixels.begin(), pixels.end()), pixels.end());
}

}  // namespace

int render_background(Image& image, const Palette& palette, Rng& rng, double horizon_fraction) {
  const int horizon = std::clamp(static_cast<int>(std::lround(image.height() * horizon_fraction)), 1, image.height() - 1);
  for (int y = 0; y < image.height(); ++y) {
    Rgb base;
    if (y < horizon) {
      const double t = horizon > 1 ? double(y) / (horizon - 1) : 1.0;
      for (int c = 0; c < 3; ++c) base[c] = static_cast<std::uint8_t>(lerp(palette.sky_top[c], palette.sky_horizon[c], t));
    } else {
      const double t = image.height() - horizon > 1 ? double(y - horizon) / (image.height() - horizon - 1) : 0.0;
      for (int c = 0; c < 3; ++c) base[c] = static_cast<std::uint8_t>(lerp(palette.sea_far[c], palette.sea_near[c], t));
    }
    for (int x = 0; x < image.width(); ++x) {
      image.set_pixel(x, y, jitter(base[0], palette.noise, rng), jitter(base[1], palette.noise, rng),
                      jitter(base[2], palette.noise, rng));
    }
  }
  return horizon;
}

std::vector<std::pair<int, int>> draw_vessel(Image& image, double cx, double bottom, double hull_width, Rng& rng) {
  std::vector<std::pair<int, int>> drawn;
  const int hull_h = std::max(2, static_cast<int>(std::lround(hull_width * 0.28)));
  const int grey = static_cast<int>(rng.uniform_int(40, 80));
  const Rgb hull{static_cast<std::uint8_t>(grey), static_cast<std::uint8_t>(grey), static_cast<std::uint8_t>(grey + 10)};
  const int x_left = static_cast<int>(std::lround(cx - hull_width / 2));
  const int x_right = static_cast<int>(std::lround(cx + hull_width / 2));  // exclusive
  const int y_bottom = static_cast<int>(std::lround(bottom));              // exclusive
  for (int r = 0; r < hull_h; ++r) {
    const int y = y_bottom - hull_h + r;
    const int inset_bow = static_cast<int>(std::lround(r * hull_width * 0.07));
    const int inset_stern = static_cast<int>(std::lround(r * hull_width * 0.02));
    for (int x = x_left + inset_stern; x < x_right - inset_bow; ++x) put(image, drawn, x, y, hull);
  }

  const double sup_w = std::max(2.0, hull_width * rng.uniform(0.35, 0.5));
  const int sup_h = std::max(2, static_cast<int>(std::lround(hull_h * rng.uniform(0.9, 1.4))));
  const double sup_cx = cx + hull_width * rng.uniform(-0.1, 0.1);
  const int white = static_cast<int>(rng.uniform_int(215, 245));
  const Rgb cabin{static_cast<std::uint8_t>(white), static_cast<std::uint8_t>(white), static_cast<std::uint8_t>(white)};
  const Rgb window{60, 70, 85};
  const int sx0 = static_cast<int>(std::lround(sup_cx - sup_w / 2));
  const int sx1 = static_cast<int>(std::lround(sup_cx + sup_w / 2));
  for (int r = 0; r < sup_h; ++r) {
    const int y = y_bottom - hull_h - sup_h + r;
    for (int x = sx0; x < sx1; ++x) {
      const bool is_window = sup_h >= 3 && r == sup_h / 2 && ((x - sx0) % 2 == 1) && x < sx1 - 1;
      put(image, drawn, x, y, is_window ? window : cabin);
    }
  }
  dedupe(drawn);
  return drawn;
}

std::vector<std::pair<int, int>> draw_buoy(Image& image, double cx, double cy, double radius, Rng& rng) {
  std::vector<std::pair<int, int>> drawn;
  const Rgb body{static_cast<std::uint8_t>(rng.uniform_int(205, 235)), static_cast<std::uint8_t>(rng.uniform_int(55, 95)),
                 static_cast<std::uint8_t>(rng.uniform_int(20, 45))};
  const int x0 = static_cast<int>(std::floor(cx - radius));
  const int x1 = static_cast<int>(std::ceil(cx + radius));
  const int y0 = static_cast<int>(std::floor(cy - radius));
  const int y1 = static_cast<int>(std::ceil(cy + radius));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= radius * radius) put(image, drawn, x, y, body);
    }
  }
  dedupe(drawn);
  return drawn;
}

Box bounding_box(const std::vector<std::pair<int, int>>& pixels) {
  if (pixels.empty()) return {};
  int x0 = pixels.front().first, x1 = x0, y0 = pixels.front().second, y1 = y0;
  for (const auto& [x, y] : pixels) {
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  }
  return {double(x0), double(y0), double(x1 - x0 + 1), double(y1 - y0 + 1)};
}

namespace {

bool boxes_collide(const Box& a, const Box& b, double margin) {
  return a.x - margin < b.x + b.w && b.x - margin < a.x + a.w && a.y - margin < b.y + b.h && b.y - margin < a.y + a.h;
}

constexpr int kPlacementRetries = 200;

}  // namespace

SyntheticScene generate_synthetic_scene(const SceneSpec& spec, std::uint64_t seed) {
  if (spec.width < 32 || spec.height < 32) throw Error(ErrorKind::range, "synthetic scene must be at least 32x32");
  for (int count : spec.object_counts)
    if (count < 0) throw Error(ErrorKind::range, "object counts must be non-negative");

  Rng rng(seed);
  SyntheticScene scene;
  scene.image = Image(spec.width, spec.height);
  const int horizon = render_background(scene.image, spec.palette, rng, rng.uniform(0.25, 0.4));
  const double s = spec.width / 64.0;

  struct Planned {
    int class_id;
    Box box;
    double a, b, c;  // class-specific geometry
    std::uint64_t draw_seed;
  };
  std::vector<Planned> planned;
  for (std::size_t cls = 0; cls < spec.object_counts.size(); ++cls) {
    for (int n = 0; n < spec.object_counts[cls]; ++n) {
      bool placed = false;
      for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
        Planned p{static_cast<int>(cls), {}, 0, 0, 0, rng.next()};
        if (cls == kVesselClass) {
          const double hull_w = rng.uniform(10.0, 26.0) * s;
          const double hull_h = std::max(2.0, std::round(hull_w * 0.28));
          const double total_h = hull_h * 2.5 + 1;
          const double cx = rng.uniform(hull_w / 2 + 1, spec.width - hull_w / 2 - 1);
          const double bottom = std::round(rng.uniform(horizon + total_h * 0.6, spec.height - 1.0));
          p.a = cx;
          p.b = bottom;
          p.c = hull_w;
          p.box = {cx - hull_w * 0.62, bottom - total_h, hull_w * 1.24, total_h};
        } else {
          const double r = rng.uniform(2.5, 4.5) * s;
          const double cx = rng.uniform(r + 1, spec.width - r - 1);
          const double cy = rng.uniform(horizon + r + 1, spec.height - r - 1);
          p.a = cx;
          p.b = cy;
          p.c = r;
          p.box = {cx - r - 1, cy - r - 1, 2 * r + 2, 2 * r + 2};
        }
        const bool clash = std::any_of(planned.begin(), planned.end(),
                                       [&](const Planned& q) { return boxes_collide(p.box, q.box, 1.0); });
        if (!clash) {
          planned.push_back(p);
          placed = true;
        }
      }
      if (!placed) throw Error(ErrorKind::range, "synthetic scene: cannot place objects without overlap");
    }
  }

  for (const auto& p : planned) {
    Rng draw_rng(p.draw_seed);
    auto pixels = p.class_id == kVesselClass ? draw_vessel(scene.image, p.a, p.b, p.c, draw_rng)
                                             : draw_buoy(scene.image, p.a, p.b, p.c, draw_rng);
    if (pixels.empty()) continue;
    scene.annotations.push_back(from_pixel_box(p.class_id, bounding_box(pixels), spec.width, spec.height));
    scene.object_pixels.push_back(std::move(pixels));
  }
  return scene;
}

Dataset generate_synthetic_dataset(const SyntheticDatasetSpec& spec) {
  if (spec.count < 0) throw Error(ErrorKind::range, "synthetic dataset count must be non-negative");
  Dataset dataset;
  dataset.class_names = kSceneClassNames;
  dataset.split = spec.split;
  for (int i = 0; i < spec.count; ++i) {
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(i)));
    SceneSpec scene_spec;
    scene_spec.width = spec.width;
    scene_spec.height = spec.height;
    scene_spec.object_counts = {static_cast<int>(rng.uniform_int(spec.min_vessels, spec.max_vessels)),
                                static_cast<int>(rng.uniform_int(spec.min_buoys, spec.max_buoys))};
    auto scene = generate_synthetic_scene(scene_spec, rng.next());
    char name[64];
    std::snprintf(name, sizeof name, "images/%s_%04d.png", spec.prefix.c_str(), i);
    dataset.items.push_back({name, std::move(scene.image), std::move(scene.annotations)});
  }
  return dataset;
}

}  // namespace masred
