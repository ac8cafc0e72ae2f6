#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "unifine/core_model.hpp"

namespace unifine {

/// Integer pixel rectangle, half-open: [x, x+w) x [y, y+h).
struct PixelRect {
  int x = 0, y = 0, w = 0, h = 0;
  bool operator==(const PixelRect&) const = default;
};

/// Locator for a whole image file or a rectangular crop of one.
/// String form: "<path>" or "<path>#crop=x,y,w,h".
struct ImageRef {
  std::filesystem::path path;
  std::optional<PixelRect> crop;

  static ImageRef parse(std::string_view locator);
  std::string str() const;
  bool operator==(const ImageRef&) const = default;
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

/// 8-bit interleaved pixels (1 or 3 channels).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<unsigned char> pixels;

  unsigned char at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

/// Decodes the referenced image, applying the crop if present.
/// Throws InputError naming the locator when the file is missing or undecodable.
Image load_image(const ImageRef& ref);
ImageSize image_size(const ImageRef& ref);

/// Writes PNG (or any format OpenCV infers from the extension).
void write_image(const std::filesystem::path& path, const Image& image);

/// 16-hex-char content hash of decoded pixels (dimensions included).
/// Identical pixel content gives identical digests regardless of locator.
std::string image_content_digest(const Image& image);

/// Clamps a real-valued box to the pixel grid of a width x height image.
/// Returns nullopt when the intersection has zero area.
std::optional<PixelRect> clamp_to_pixels(const Box& box, int width, int height);

/// Clamps a box to image bounds without snapping to pixels.
Box clamp_box(const Box& box, int width, int height);

}  // namespace unifine
