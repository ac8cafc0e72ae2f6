#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "unifine/backends.hpp"
#include "unifine/image.hpp"

namespace testing {

namespace fs = std::filesystem;

// Scratch directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    std::string pattern = (fs::temp_directory_path() / "unifine-test-XXXXXX").string();
    if (!mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

// W x H RGB image whose pixel (x, y) is (x, y, x + y) mod 256, or a fill.
inline unifine::Image gradient_image(int w, int h) {
  unifine::Image img;
  img.width = w;
  img.height = h;
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(w * h * 3));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      unsigned char* p = &img.pixels[static_cast<std::size_t>((y * w + x) * 3)];
      p[0] = static_cast<unsigned char>(x);
      p[1] = static_cast<unsigned char>(y);
      p[2] = static_cast<unsigned char>(x + y);
    }
  return img;
}

inline unifine::Image solid_image(int w, int h, unsigned char r, unsigned char g, unsigned char b) {
  unifine::Image img;
  img.width = w;
  img.height = h;
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(w * h * 3));
  for (int i = 0; i < w * h; ++i) {
    img.pixels[i * 3] = r;
    img.pixels[i * 3 + 1] = g;
    img.pixels[i * 3 + 2] = b;
  }
  return img;
}

inline unifine::BackendConfig stub_config(unifine::BackendRole role, unifine::json settings = unifine::json::object()) {
  unifine::BackendConfig c;
  c.role = role;
  c.implementation = "stub";
  c.settings = std::move(settings);
  return c;
}

inline unifine::Backends stub_backends(unifine::json settings = unifine::json::object()) {
  std::map<unifine::BackendRole, unifine::BackendConfig> configs;
  for (auto role : unifine::kBackendRoles) configs[role] = stub_config(role, settings);
  return unifine::BackendRegistry::with_builtins().make_all(configs);
}

}  // namespace testing
