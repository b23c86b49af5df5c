#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace unitscope {

// RGB image, row-major HWC, values in [0,1].
struct Image {
  std::string id;
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;
  std::optional<int> label;

  Image() = default;
  Image(std::string image_id, int h, int w, int c);

  float& at(int r, int c, int ch) {
    return pixels[(static_cast<size_t>(r) * width + c) * channels + ch];
  }
  float at(int r, int c, int ch) const {
    return pixels[(static_cast<size_t>(r) * width + c) * channels + ch];
  }

  bool finite() const;
};

Image load_image(const std::filesystem::path& path, const std::string& id);
void save_image_png(const Image& image, const std::filesystem::path& path);

// Bilinear; returns the input unchanged when the size already matches.
Image resize_image(const Image& image, int height, int width);

std::array<double, 3> mean_pixel(const Image& image);

}  // namespace unitscope
