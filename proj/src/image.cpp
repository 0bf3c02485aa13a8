#include "masred/image.hpp"

#include "masred/digest.hpp"
#include "masred/error.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <cstring>
#include <string>

namespace masred {

Image::Image(int width, int height, std::uint8_t fill) : width_(width), height_(height) {
  if (width < 1 || height < 1) throw Error(ErrorKind::range, "image dimensions must be at least 1x1");
  data_.assign(pixel_count() * kChannels, fill);
}

Image::Image(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (width < 1 || height < 1) throw Error(ErrorKind::range, "image dimensions must be at least 1x1");
  if (data_.size() != pixel_count() * kChannels) throw Error(ErrorKind::format, "malformed image: payload length mismatch");
}

std::size_t changed_pixel_count(const Image& a, const Image& b) {
  if (a.width() != b.width() || a.height() != b.height())
    throw Error(ErrorKind::invalid_argument, "changed_pixel_count: size mismatch");
  auto pa = a.bytes();
  auto pb = b.bytes();
  std::size_t count = 0;
  for (std::size_t i = 0; i < pa.size(); i += 3) {
    if (pa[i] != pb[i] || pa[i + 1] != pb[i + 1] || pa[i + 2] != pb[i + 2]) ++count;
  }
  return count;
}

int max_abs_difference(const Image& a, const Image& b) {
  if (a.width() != b.width() || a.height() != b.height())
    throw Error(ErrorKind::invalid_argument, "max_abs_difference: size mismatch");
  auto pa = a.bytes();
  auto pb = b.bytes();
  int worst = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) worst = std::max(worst, std::abs(int(pa[i]) - int(pb[i])));
  return worst;
}

Image resize_nearest(const Image& image, int width, int height) {
  if (width == image.width() && height == image.height()) return image;
  Image out(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = nearest_source(y, image.height(), height);
    for (int x = 0; x < width; ++x) {
      const int sx = nearest_source(x, image.width(), width);
      out.set_pixel(x, y, image.at(sx, sy, 0), image.at(sx, sy, 1), image.at(sx, sy, 2));
    }
  }
  return out;
}

// ---- PPM -------------------------------------------------------------------

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.bytes().begin(), image.bytes().end());
  return out;
}

namespace {

class PpmCursor {
 public:
  explicit PpmCursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long read_number() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) throw Error(ErrorKind::format, "malformed image: bad PPM header");
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000) throw Error(ErrorKind::format, "malformed image: PPM dimension too large");
      ++pos_;
    }
    return value;
  }

  std::size_t pos_ = 0;
  std::span<const std::uint8_t> bytes_;
};

}  // namespace

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw Error(ErrorKind::format, "malformed image: not a P6 PPM");
  PpmCursor cursor(bytes);
  cursor.pos_ = 2;
  const long width = cursor.read_number();
  const long height = cursor.read_number();
  const long maxval = cursor.read_number();
  if (width < 1 || height < 1) throw Error(ErrorKind::format, "malformed image: zero dimension");
  if (maxval != 255) throw Error(ErrorKind::format, "unsupported bit depth: PPM maxval " + std::to_string(maxval));
  if (cursor.pos_ >= bytes.size() || !std::isspace(bytes[cursor.pos_])) throw Error(ErrorKind::format, "malformed image: bad PPM header");
  ++cursor.pos_;
  const std::size_t expected = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3;
  if (bytes.size() - cursor.pos_ < expected) throw Error(ErrorKind::format, "malformed image: truncated pixel payload");
  std::vector<std::uint8_t> data(bytes.begin() + static_cast<std::ptrdiff_t>(cursor.pos_),
                                 bytes.begin() + static_cast<std::ptrdiff_t>(cursor.pos_ + expected));
  return Image(static_cast<int>(width), static_cast<int>(height), std::move(data));
}

// ---- PNG -------------------------------------------------------------------

std::vector<std::uint8_t> encode_png(const Image& image) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width());
  png.height = static_cast<png_uint_32>(image.height());
  png.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.bytes().data(), 0, nullptr)) {
    throw Error(ErrorKind::format, std::string("png encode failed: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.bytes().data(), 0, nullptr)) {
    throw Error(ErrorKind::format, std::string("png encode failed: ") + png.message);
  }
  out.resize(size);
  return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw Error(ErrorKind::format, std::string("malformed image: ") + png.message);
  }
  if (png.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&png);
    throw Error(ErrorKind::format, "unsupported bit depth: 16-bit PNG");
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> data(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, data.data(), 0, nullptr)) {
    throw Error(ErrorKind::format, std::string("malformed image: ") + png.message);
  }
  return Image(static_cast<int>(png.width), static_cast<int>(png.height), std::move(data));
}

Image load_image(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  static constexpr std::uint8_t kPngMagic[] = {0x89, 'P', 'N', 'G'};
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kPngMagic, 4) == 0) return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  throw Error(ErrorKind::format, "unsupported image format: " + path.string());
}

void save_image(const std::filesystem::path& path, const Image& image) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") {
    write_file_bytes(path, encode_png(image));
  } else if (ext == ".ppm") {
    write_file_bytes(path, encode_ppm(image));
  } else {
    throw Error(ErrorKind::invalid_argument, "unsupported image extension: " + path.string());
  }
}

}  // namespace masred
