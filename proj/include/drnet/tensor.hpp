#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace drnet::nn {

// Dense row-major value container. Rank is 3 (channels, rows, cols) for grid
// data and 1 (len) for flat vectors; dense layers treat any input as flat.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(int len) : shape{len}, data(static_cast<size_t>(len), 0.0) {}

  Tensor(int ch, int rows, int cols)
      : shape{ch, rows, cols},
        data(static_cast<size_t>(ch) * rows * cols, 0.0) {}

  size_t size() const { return data.size(); }

  double& at(int c, int r, int col) {
    return data[(static_cast<size_t>(c) * shape[1] + r) * shape[2] + col];
  }
  double at(int c, int r, int col) const {
    return data[(static_cast<size_t>(c) * shape[1] + r) * shape[2] + col];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + ")";
  }
};

}  // namespace drnet::nn
