#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "hoplab/common.hpp"

namespace hoplab::tensor {

// Dense row-major matrix with a gradient buffer of the same shape. Vectors
// are 1 x n; scalars 1 x 1. T is float for training, double for numeric
// verification.
template <typename T>
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  aligned_vector<T> val;
  aligned_vector<T> grad;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c)
      : rows(r), cols(c), val(r * c, T(0)), grad(r * c, T(0)) {}

  std::size_t size() const { return rows * cols; }
  T& at(std::size_t i, std::size_t j) { return val[i * cols + j]; }
  const T& at(std::size_t i, std::size_t j) const { return val[i * cols + j]; }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }

  std::string shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.rows == b.rows && a.cols == b.cols && a.val == b.val;
  }
};

}  // namespace hoplab::tensor
