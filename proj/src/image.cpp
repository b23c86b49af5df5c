#include "unitscope/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>

#include "unitscope/common.hpp"

namespace unitscope {

Image::Image(std::string image_id, int h, int w, int c)
    : id(std::move(image_id)), height(h), width(w), channels(c) {
  if (h <= 0 || w <= 0 || (c != 1 && c != 3))
    throw Error("bad image dimensions for " + id);
  pixels.assign(static_cast<size_t>(h) * w * c, 0.0f);
}

bool Image::finite() const {
  for (float v : pixels)
    if (!std::isfinite(v)) return false;
  return true;
}

Image load_image(const std::filesystem::path& path, const std::string& id) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error("cannot decode image file: " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  Image out(id, rgb.rows, rgb.cols, 3);
  for (int r = 0; r < rgb.rows; ++r) {
    const auto* row = rgb.ptr<cv::Vec3b>(r);
    for (int c = 0; c < rgb.cols; ++c)
      for (int ch = 0; ch < 3; ++ch)
        out.at(r, c, ch) = static_cast<float>(row[c][ch]) / 255.0f;
  }
  return out;
}

void save_image_png(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 3 && image.channels != 1)
    throw Error("save_image_png expects 1 or 3 channels");
  cv::Mat mat(image.height, image.width, image.channels == 3 ? CV_8UC3 : CV_8UC1);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      if (image.channels == 3) {
        // OpenCV writes BGR.
        auto& px = mat.at<cv::Vec3b>(r, c);
        for (int ch = 0; ch < 3; ++ch) {
          float v = std::clamp(image.at(r, c, 2 - ch), 0.0f, 1.0f);
          px[ch] = static_cast<unsigned char>(std::lround(v * 255.0f));
        }
      } else {
        float v = std::clamp(image.at(r, c, 0), 0.0f, 1.0f);
        mat.at<unsigned char>(r, c) = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat))
    throw Error("cannot write image file: " + path.string());
}

Image resize_image(const Image& image, int height, int width) {
  if (height == image.height && width == image.width) return image;
  cv::Mat src(image.height, image.width, CV_32FC(image.channels),
              const_cast<float*>(image.pixels.data()));
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  Image out(image.id, height, width, image.channels);
  out.label = image.label;
  std::copy(dst.ptr<float>(0), dst.ptr<float>(0) + out.pixels.size(), out.pixels.begin());
  return out;
}

std::array<double, 3> mean_pixel(const Image& image) {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  const int n = image.height * image.width;
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c)
      for (int ch = 0; ch < image.channels; ++ch) mean[static_cast<size_t>(ch)] += image.at(r, c, ch);
  for (auto& v : mean) v /= n;
  if (image.channels == 1) mean[1] = mean[2] = mean[0];
  return mean;
}

}  // namespace unitscope
