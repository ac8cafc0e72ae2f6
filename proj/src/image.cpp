#include "unifine/image.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "unifine/digest.hpp"
#include "unifine/errors.hpp"

namespace unifine {

namespace {

constexpr std::string_view kCropTag = "#crop=";

int parse_int(std::string_view s, std::string_view locator) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw InputError("malformed crop in image locator: " + std::string(locator));
  return v;
}

cv::Mat decode(const ImageRef& ref) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(ref.path, ec))
    throw InputError("unreadable image: " + ref.str());
  cv::Mat m = cv::imread(ref.path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw InputError("unreadable image: " + ref.str());
  if (m.depth() != CV_8U) m.convertTo(m, CV_8U);
  if (m.channels() == 4) {
    std::vector<cv::Mat> planes;  // drop alpha
    cv::split(m, planes);
    planes.pop_back();
    cv::merge(planes, m);
  }
  if (ref.crop) {
    const PixelRect& c = *ref.crop;
    if (c.x < 0 || c.y < 0 || c.w <= 0 || c.h <= 0 || c.x + c.w > m.cols || c.y + c.h > m.rows)
      throw InputError("crop outside image bounds: " + ref.str());
    m = m(cv::Rect(c.x, c.y, c.w, c.h)).clone();
  }
  return m;
}

}  // namespace

ImageRef ImageRef::parse(std::string_view locator) {
  ImageRef ref;
  const auto pos = locator.rfind(kCropTag);
  if (pos == std::string_view::npos) {
    ref.path = std::filesystem::path(std::string(locator));
    return ref;
  }
  ref.path = std::filesystem::path(std::string(locator.substr(0, pos)));
  std::string_view rest = locator.substr(pos + kCropTag.size());
  int vals[4];
  for (int i = 0; i < 4; ++i) {
    const auto comma = rest.find(',');
    if ((i < 3) == (comma == std::string_view::npos))
      throw InputError("malformed crop in image locator: " + std::string(locator));
    vals[i] = parse_int(rest.substr(0, comma), locator);
    rest = i < 3 ? rest.substr(comma + 1) : std::string_view{};
  }
  ref.crop = PixelRect{vals[0], vals[1], vals[2], vals[3]};
  return ref;
}

std::string ImageRef::str() const {
  std::string s = path.string();
  if (crop) {
    s += kCropTag;
    s += std::to_string(crop->x) + "," + std::to_string(crop->y) + "," + std::to_string(crop->w) +
         "," + std::to_string(crop->h);
  }
  return s;
}

Image load_image(const ImageRef& ref) {
  cv::Mat m = decode(ref);
  Image img;
  img.width = m.cols;
  img.height = m.rows;
  img.channels = m.channels();
  img.pixels.resize(static_cast<std::size_t>(m.total()) * m.channels());
  const std::size_t row_bytes = static_cast<std::size_t>(m.cols) * m.channels();
  for (int y = 0; y < m.rows; ++y)
    std::copy_n(m.ptr<unsigned char>(y), row_bytes, img.pixels.data() + y * row_bytes);
  return img;
}

ImageSize image_size(const ImageRef& ref) {
  if (ref.crop) {
    // Validate against the parent, then report the crop extent.
    decode(ref);
    return {ref.crop->w, ref.crop->h};
  }
  cv::Mat m = decode(ref);
  return {m.cols, m.rows};
}

void write_image(const std::filesystem::path& path, const Image& image) {
  const int type = image.channels == 1 ? CV_8UC1 : CV_8UC3;
  cv::Mat m(image.height, image.width, type, const_cast<unsigned char*>(image.pixels.data()));
  if (!cv::imwrite(path.string(), m)) throw InputError("cannot write image: " + path.string());
}

std::string image_content_digest(const Image& image) {
  char header[64];
  std::snprintf(header, sizeof header, "%dx%dx%d:", image.width, image.height, image.channels);
  Sha256 h;
  h.update(std::string_view(header));
  h.update(std::span<const unsigned char>(image.pixels));
  return h.hex_digest().substr(0, 16);
}

std::optional<PixelRect> clamp_to_pixels(const Box& box, int width, int height) {
  const double x0 = std::max(0.0, std::floor(box.x));
  const double y0 = std::max(0.0, std::floor(box.y));
  const double x1 = std::min(static_cast<double>(width), std::ceil(box.x + box.w));
  const double y1 = std::min(static_cast<double>(height), std::ceil(box.y + box.h));
  if (!(x1 > x0) || !(y1 > y0)) return std::nullopt;
  return PixelRect{static_cast<int>(x0), static_cast<int>(y0), static_cast<int>(x1 - x0),
                   static_cast<int>(y1 - y0)};
}

Box clamp_box(const Box& box, int width, int height) {
  const double x0 = std::clamp(box.x, 0.0, static_cast<double>(width));
  const double y0 = std::clamp(box.y, 0.0, static_cast<double>(height));
  const double x1 = std::clamp(box.x + box.w, 0.0, static_cast<double>(width));
  const double y1 = std::clamp(box.y + box.h, 0.0, static_cast<double>(height));
  return Box{x0, y0, std::max(0.0, x1 - x0), std::max(0.0, y1 - y0)};
}

}  // namespace unifine
