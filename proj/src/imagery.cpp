#include "masred/imagery.hpp"

#include "masred/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace masred {

Patch::Patch(Image raster_in, double alpha_in) : raster(std::move(raster_in)), alpha(alpha_in) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::range, "patch alpha must lie in [0,1]");
  if (raster.empty()) throw Error(ErrorKind::range, "patch raster must be at least 1x1");
}

Rotation rotation_from_degrees(int degrees) {
  switch (degrees) {
    case 0: return Rotation::r0;
    case 90: return Rotation::r90;
    case 180: return Rotation::r180;
    case 270: return Rotation::r270;
    default: throw Error(ErrorKind::range, "rotation must be one of 0, 90, 180, 270 (got " + std::to_string(degrees) + ")");
  }
}

namespace {

int scaled_extent(int extent, double scale) {
  return std::max(1, static_cast<int>(std::lround(extent * scale)));
}

void check_transform(const PatchTransform& transform) {
  if (!(transform.scale > 0.0) || !std::isfinite(transform.scale)) throw Error(ErrorKind::range, "patch scale must be positive");
}

}  // namespace

Image transform_raster(const Image& raster, Rotation rotation, double scale) {
  if (!(scale > 0.0)) throw Error(ErrorKind::range, "patch scale must be positive");
  const Image scaled = resize_nearest(raster, scaled_extent(raster.width(), scale), scaled_extent(raster.height(), scale));
  const int w = scaled.width();
  const int h = scaled.height();
  switch (rotation) {
    case Rotation::r0:
      return scaled;
    case Rotation::r180: {
      Image out(w, h);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int c = 0; c < 3; ++c) out.at(x, y, c) = scaled.at(w - 1 - x, h - 1 - y, c);
      return out;
    }
    case Rotation::r90: {  // clockwise
      Image out(h, w);
      for (int y = 0; y < w; ++y)
        for (int x = 0; x < h; ++x)
          for (int c = 0; c < 3; ++c) out.at(x, y, c) = scaled.at(y, h - 1 - x, c);
      return out;
    }
    case Rotation::r270: {
      Image out(h, w);
      for (int y = 0; y < w; ++y)
        for (int x = 0; x < h; ++x)
          for (int c = 0; c < 3; ++c) out.at(x, y, c) = scaled.at(w - 1 - y, x, c);
      return out;
    }
  }
  return scaled;
}

PixelRect transformed_extent(const Patch& patch, const PatchTransform& transform) {
  check_transform(transform);
  int w = scaled_extent(patch.raster.width(), transform.scale);
  int h = scaled_extent(patch.raster.height(), transform.scale);
  if (transform.rotation == Rotation::r90 || transform.rotation == Rotation::r270) std::swap(w, h);
  return {transform.x, transform.y, w, h};
}

PixelRect patch_footprint(int image_width, int image_height, const Patch& patch, const PatchTransform& transform) {
  const PixelRect full = transformed_extent(patch, transform);
  const int x0 = std::max(0, full.x);
  const int y0 = std::max(0, full.y);
  const int x1 = std::min(image_width, full.x + full.width);
  const int y1 = std::min(image_height, full.y + full.height);
  return {x0, y0, std::max(0, x1 - x0), std::max(0, y1 - y0)};
}

Image apply_patch(const Image& image, const Patch& patch, const PatchTransform& transform) {
  const PixelRect footprint = patch_footprint(image.width(), image.height(), patch, transform);
  if (footprint.empty()) throw Error(ErrorKind::range, "patch footprint does not intersect the image");
  const Image raster = transform_raster(patch.raster, transform.rotation, transform.scale);
  const double alpha = patch.alpha;
  Image out = image;
  for (int y = footprint.y; y < footprint.y + footprint.height; ++y) {
    for (int x = footprint.x; x < footprint.x + footprint.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double blended = alpha * raster.at(x - transform.x, y - transform.y, c) + (1.0 - alpha) * image.at(x, y, c);
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::floor(blended + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

std::uint8_t luma601(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return static_cast<std::uint8_t>((299 * r + 587 * g + 114 * b + 500) / 1000);
}

namespace {

Image greyscale(const Image& image) {
  Image out = image;
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const auto v = luma601(image.at(x, y, 0), image.at(x, y, 1), image.at(x, y, 2));
      out.set_pixel(x, y, v, v, v);
    }
  }
  return out;
}

Image quantize(const Image& image, int levels) {
  Image out = image;
  const int steps = levels - 1;
  for (auto& v : out.bytes()) {
    const int index = (2 * v * steps + 255) / 510;  // nearest level index
    v = static_cast<std::uint8_t>((2 * index * 255 + steps) / (2 * steps));
  }
  return out;
}

Image box_blur(const Image& image, int radius) {
  Image out = image;
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      int sum[3] = {0, 0, 0};
      int count = 0;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          if (!image.contains(x + dx, y + dy)) continue;
          for (int c = 0; c < 3; ++c) sum[c] += image.at(x + dx, y + dy, c);
          ++count;
        }
      }
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = static_cast<std::uint8_t>((2 * sum[c] + count) / (2 * count));
    }
  }
  return out;
}

}  // namespace

Image sanitize(const Image& image, const SanitizeMethod& method) {
  switch (method.kind) {
    case SanitizeMethod::Kind::greyscale:
      return greyscale(image);
    case SanitizeMethod::Kind::quantize:
      if (method.parameter < 2 || method.parameter > 256) throw Error(ErrorKind::invalid_argument, "quantize needs 2..256 levels");
      return quantize(image, method.parameter);
    case SanitizeMethod::Kind::box_blur:
      if (method.parameter < 1) throw Error(ErrorKind::invalid_argument, "box blur radius must be >= 1");
      return box_blur(image, method.parameter);
  }
  throw Error(ErrorKind::invalid_argument, "unknown sanitize method");
}

}  // namespace masred
