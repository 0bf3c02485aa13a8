#pragma once

#include "masred/image.hpp"

#include <optional>

namespace masred {

// Adversarial patch or backdoor trigger raster with its blend opacity.
struct Patch {
  Image raster;
  double alpha = 1.0;

  Patch() = default;
  Patch(Image raster, double alpha);
};

enum class Rotation : int { r0 = 0, r90 = 90, r180 = 180, r270 = 270 };

Rotation rotation_from_degrees(int degrees);

// Placement of a patch: the patch raster is first scaled (nearest neighbour),
// then rotated clockwise by a quarter-turn multiple, then anchored with its
// top-left corner at `location`.
struct PatchTransform {
  int x = 0;
  int y = 0;
  Rotation rotation = Rotation::r0;
  double scale = 1.0;
};

struct PixelRect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  bool empty() const noexcept { return width <= 0 || height <= 0; }
  bool contains(int px, int py) const noexcept {
    return px >= x && py >= y && px < x + width && py < y + height;
  }
  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

// Patch raster after scaling and rotation.
Image transform_raster(const Image& raster, Rotation rotation, double scale);

// Unclipped extent of the transformed patch in target coordinates.
PixelRect transformed_extent(const Patch& patch, const PatchTransform& transform);

// Footprint clipped to an image of the given size.
PixelRect patch_footprint(int image_width, int image_height, const Patch& patch,
                          const PatchTransform& transform);

// Composites the patch: out = alpha * patch + (1 - alpha) * original, rounded
// half-up and clamped. Throws when the clipped footprint is empty.
Image apply_patch(const Image& image, const Patch& patch, const PatchTransform& transform);

// ---- input sanitisation ----------------------------------------------------

struct SanitizeMethod {
  enum class Kind { greyscale, quantize, box_blur };
  Kind kind = Kind::greyscale;
  int parameter = 0;  // levels for quantize, radius for box_blur

  static SanitizeMethod greyscale() { return {Kind::greyscale, 0}; }
  static SanitizeMethod quantize(int levels) { return {Kind::quantize, levels}; }
  static SanitizeMethod box_blur(int radius) { return {Kind::box_blur, radius}; }
};

// Rec.601 integer luma, (299 R + 587 G + 114 B) / 1000 rounded.
std::uint8_t luma601(std::uint8_t r, std::uint8_t g, std::uint8_t b);

Image sanitize(const Image& image, const SanitizeMethod& method);

}  // namespace masred
