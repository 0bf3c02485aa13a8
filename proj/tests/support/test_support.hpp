#pragma once

#include "masred/dataset.hpp"
#include "masred/image.hpp"
#include "masred/rng.hpp"
#include "masred/toydet.hpp"

#include <atomic>
#include <filesystem>
#include <memory>
#include <string>
#include <unistd.h>

namespace masred::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("masred-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline Image noise_image(int width, int height, std::uint64_t seed) {
  Image image(width, height);
  Rng rng(seed);
  for (auto& b : image.bytes()) b = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return image;
}

inline Image solid_image(int width, int height, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image image(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) image.set_pixel(x, y, r, g, b);
  return image;
}

// Small detector trained once per process on a reduced synthetic set; good
// enough to detect single vessels for tests that need a working oracle.
inline std::shared_ptr<const ToyDetectorModel> small_trained_model() {
  static const std::shared_ptr<const ToyDetectorModel> model = [] {
    SyntheticDatasetSpec spec;
    spec.count = 80;
    spec.seed = 11;
    const Dataset data = generate_synthetic_dataset(spec);
    TrainConfig config;
    config.epochs = 15;
    auto result = train(ToyDetectorModel::initialized(DetectorConfig{}, 1), data, config);
    return std::make_shared<const ToyDetectorModel>(std::move(result.model));
  }();
  return model;
}

}  // namespace masred::testing
