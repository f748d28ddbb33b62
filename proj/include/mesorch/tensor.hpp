#ifndef MESORCH_TENSOR_HPP_
#define MESORCH_TENSOR_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "mesorch/errors.hpp"

namespace mesorch {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

// Dense row-major tensor of doubles. Feature maps use [H, W, C] layout so a
// [H*W, C] matrix view is a free reinterpretation.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}
  Tensor(std::vector<int> s, double fill)
      : shape(std::move(s)), data(numel_of(shape), fill) {}

  static std::int64_t numel_of(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  bool empty() const { return data.empty(); }

  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  double& operator[](std::int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](std::int64_t i) const { return data[static_cast<size_t>(i)]; }

  // [H, W, C] accessors.
  double& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * shape[1] + x) * shape[2] + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * shape[1] + x) * shape[2] + c];
  }

  // [H, W] accessors.
  double& at2(int y, int x) { return data[static_cast<size_t>(y) * shape[1] + x]; }
  double at2(int y, int x) const { return data[static_cast<size_t>(y) * shape[1] + x]; }

  MapRM mat(std::int64_t rows, std::int64_t cols) {
    return MapRM(data.data(), rows, cols);
  }
  ConstMapRM mat(std::int64_t rows, std::int64_t cols) const {
    return ConstMapRM(data.data(), rows, cols);
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const;
  bool all_finite() const;
};

// Throws InvalidInputError when cond is false.
void check_input(bool cond, const std::string& msg);
// Throws ConfigError when cond is false.
void check_config(bool cond, const std::string& msg);

std::string shape_to_string(const std::vector<int>& s);

}  // namespace mesorch

#endif  // MESORCH_TENSOR_HPP_
