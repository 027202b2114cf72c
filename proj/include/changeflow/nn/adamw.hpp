#pragma once

#include <cmath>
#include <vector>

#include "changeflow/errors.hpp"
#include "changeflow/nn/tensor.hpp"

namespace changeflow::nn {

template <typename T>
struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Decoupled-weight-decay Adam over one parameter group.
template <typename T>
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(const ParamList<T>& params, AdamWOptions<T> options = {}) : options_(options) {
    for (const auto* p : params) {
      first_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
      second_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step(const ParamList<T>& params, double lr) {
    if (params.size() != first_.size()) throw InvalidArgument("adamw: parameter list changed size");
    ++steps_;
    const double bc1 = 1.0 - std::pow(options_.beta1, steps_);
    const double bc2 = 1.0 - std::pow(options_.beta2, steps_);
    const T b1 = static_cast<T>(options_.beta1);
    const T b2 = static_cast<T>(options_.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(options_.eps);
    const T decay = static_cast<T>(1.0 - lr * options_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      first_[i] = b1 * first_[i] + (T(1) - b1) * p.grad;
      second_[i] = b2 * second_[i] + (T(1) - b2) * p.grad.cwiseProduct(p.grad);
      p.value *= decay;
      p.value.array() -= step_size * first_[i].array() / ((second_[i].array() * inv_bc2).sqrt() + eps);
    }
  }

  long steps() const { return steps_; }
  void set_steps(long steps) { steps_ = steps; }
  std::vector<Matrix<T>>& first_moments() { return first_; }
  std::vector<Matrix<T>>& second_moments() { return second_; }

 private:
  AdamWOptions<T> options_;
  std::vector<Matrix<T>> first_;
  std::vector<Matrix<T>> second_;
  long steps_ = 0;
};

}  // namespace changeflow::nn
