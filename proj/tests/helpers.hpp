#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include "unitscope/image.hpp"

namespace testutil {

// Self-deleting scratch directory under the system temp root.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    static std::atomic<uint64_t> counter{0};
    const auto base = std::filesystem::temp_directory_path();
    path = base / ("unitscope_" + tag + "_" + std::to_string(::getpid()) + "_" +
                   std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  operator const std::filesystem::path&() const { return path; }
  std::filesystem::path operator/(const std::string& leaf) const { return path / leaf; }
};

inline unitscope::Image random_image(std::mt19937_64& rng, const std::string& id, int h,
                                     int w) {
  unitscope::Image img(id, h, w, 3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& p : img.pixels) p = u(rng);
  return img;
}

}  // namespace testutil
