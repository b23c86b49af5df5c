#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace unitscope {

// Dense row-major float tensor. Conv feature maps are (C,H,W), token
// matrices are (T,D), vectors are (N).
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);

  int64_t numel() const;
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  float& operator()(int i) { return data[static_cast<size_t>(i)]; }
  float operator()(int i) const { return data[static_cast<size_t>(i)]; }
  float& operator()(int i, int j) { return data[static_cast<size_t>(i) * dim(1) + j]; }
  float operator()(int i, int j) const { return data[static_cast<size_t>(i) * dim(1) + j]; }
  float& operator()(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
  }
  float operator()(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
  }
  float& operator()(int i, int j, int k, int l) {
    return data[((static_cast<size_t>(i) * dim(1) + j) * dim(2) + k) * dim(3) + l];
  }
  float operator()(int i, int j, int k, int l) const {
    return data[((static_cast<size_t>(i) * dim(1) + j) * dim(2) + k) * dim(3) + l];
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

}  // namespace unitscope
