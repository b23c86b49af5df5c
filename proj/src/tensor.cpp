#include "unitscope/tensor.hpp"

#include "unitscope/common.hpp"

namespace unitscope {

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw Error("tensor dimension must be positive");
    n *= d;
  }
  data.assign(static_cast<size_t>(n), 0.0f);
}

int64_t Tensor::numel() const {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

}  // namespace unitscope
