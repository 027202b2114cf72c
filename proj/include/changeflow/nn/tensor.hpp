#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "changeflow/rng.hpp"

namespace changeflow::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// A trainable tensor and its accumulated gradient.
template <typename T>
struct Param {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  Param() = default;
  Param(std::string n, int rows, int cols)
      : name(std::move(n)), value(Matrix<T>::Zero(rows, cols)), grad(Matrix<T>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

template <typename T>
using ParamList = std::vector<Param<T>*>;

/// Spatial activations. Rows run over (sample, y, x) in raster order,
/// columns over channels, which is NHWC flattened.
template <typename T>
struct Activation {
  int count = 0;
  int height = 0;
  int width = 0;
  Matrix<T> data;

  Activation() = default;
  Activation(int n, int h, int w, Matrix<T> d) : count(n), height(h), width(w), data(std::move(d)) {}

  int channels() const { return static_cast<int>(data.cols()); }
  int pixels() const { return height * width; }
};

template <typename T>
void fill_uniform(Matrix<T>& m, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
}

template <typename T>
void fill_normal(Matrix<T>& m, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
}

template <typename T>
std::size_t parameter_count(const ParamList<T>& params) {
  std::size_t total = 0;
  for (const auto* p : params) total += static_cast<std::size_t>(p->size());
  return total;
}

template <typename T>
void zero_grads(const ParamList<T>& params) {
  for (auto* p : params) p->zero_grad();
}

/// Squared L2 norm of all gradients, accumulated in double.
template <typename T>
double grad_norm_squared(const ParamList<T>& params) {
  double total = 0.0;
  for (const auto* p : params) total += p->grad.template cast<double>().squaredNorm();
  return total;
}

}  // namespace changeflow::nn
