#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace masred {

// 8-bit RGB raster, row-major, interleaved channels.
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int width, int height, std::uint8_t fill = 0);
  Image(int width, int height, std::vector<std::uint8_t> data);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }
  bool empty() const noexcept { return data_.empty(); }

  std::uint8_t& at(int x, int y, int c) { return data_[index(x, y, c)]; }
  std::uint8_t at(int x, int y, int c) const { return data_[index(x, y, c)]; }

  void set_pixel(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    auto i = index(x, y, 0);
    data_[i] = r;
    data_[i + 1] = g;
    data_[i + 2] = b;
  }

  std::span<const std::uint8_t> bytes() const noexcept { return data_; }
  std::span<std::uint8_t> bytes() noexcept { return data_; }

  bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int x, int y, int c) const noexcept {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(x)) * kChannels + static_cast<std::size_t>(c);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

// Real-valued raster with the same layout as Image. Used for normalized
// network inputs and for gradients with respect to input pixels.
template <typename Scalar>
struct Raster {
  using Values = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  int width = 0;
  int height = 0;
  Values values;

  Raster() = default;
  Raster(int w, int h) : width(w), height(h), values(Values::Zero(std::size_t(w) * h * 3)) {}

  Scalar& at(int x, int y, int c) { return values[(std::size_t(y) * width + x) * 3 + c]; }
  Scalar at(int x, int y, int c) const { return values[(std::size_t(y) * width + x) * 3 + c]; }
};

using GradientField = Raster<double>;

// Pixel intensities mapped to [0, 1].
template <typename Scalar = double>
Raster<Scalar> normalized(const Image& image) {
  Raster<Scalar> out(image.width(), image.height());
  auto bytes = image.bytes();
  for (std::size_t i = 0; i < bytes.size(); ++i) out.values[i] = Scalar(bytes[i]) / Scalar(255);
  return out;
}

// Number of pixels (not channels) that differ between two equally sized images.
std::size_t changed_pixel_count(const Image& a, const Image& b);

// Largest absolute per-channel difference.
int max_abs_difference(const Image& a, const Image& b);

// Nearest-neighbour resample.
Image resize_nearest(const Image& image, int width, int height);

// Source coordinate used by resize_nearest for destination coordinate `dst`.
inline int nearest_source(int dst, int src_extent, int dst_extent) {
  return static_cast<int>((static_cast<long long>(dst) * src_extent) / dst_extent);
}

// ---- file IO ---------------------------------------------------------------

// PNG (any 8-bit colour type) or binary PPM (P6, maxval 255), by content.
Image load_image(const std::filesystem::path& path);
// Format chosen by extension: .png or .ppm.
void save_image(const std::filesystem::path& path, const Image& image);

std::vector<std::uint8_t> encode_ppm(const Image& image);
Image decode_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(std::span<const std::uint8_t> bytes);

}  // namespace masred
