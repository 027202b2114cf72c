#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "changeflow/errors.hpp"
#include "changeflow/nn/tensor.hpp"

namespace changeflow::nn {

/// y = x W + b with W stored as (in x out).
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out)
      : weight(name + ".weight", in, out), bias(name + ".bias", 1, out) {}

  int in_features() const { return static_cast<int>(weight.value.rows()); }
  int out_features() const { return static_cast<int>(weight.value.cols()); }

  void init_xavier(Rng& rng) {
    const double bound = std::sqrt(6.0 / (in_features() + out_features()));
    fill_uniform(weight.value, bound, rng);
    bias.value.setZero();
  }

  void init_normal(Rng& rng, double stddev) {
    fill_normal(weight.value, stddev, rng);
    bias.value.setZero();
  }

  Matrix<T> forward(const Matrix<T>& x) const {
    Matrix<T> y = x * weight.value;
    y.rowwise() += bias.value.row(0);
    return y;
  }

  /// Accumulates parameter gradients and returns dL/dx.
  Matrix<T> backward(const Matrix<T>& x, const Matrix<T>& dy) {
    weight.grad.noalias() += x.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
    return dy * weight.value.transpose();
  }

  /// Parameter gradients only; for layers whose input needs no gradient.
  void accumulate(const Matrix<T>& x, const Matrix<T>& dy) {
    weight.grad.noalias() += x.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
  }

  void collect(ParamList<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Param<T> weight;
  Param<T> bias;
};

template <typename T>
Matrix<T> silu(const Matrix<T>& x) {
  return (x.array() / (T(1) + (-x.array()).exp())).matrix();
}

template <typename T>
Matrix<T> silu_backward(const Matrix<T>& x, const Matrix<T>& dy) {
  const auto sig = (T(1) / (T(1) + (-x.array()).exp())).eval();
  return (dy.array() * (sig * (T(1) + x.array() * (T(1) - sig)))).matrix();
}

/// tanh approximation of GELU.
template <typename T>
Matrix<T> gelu(const Matrix<T>& x) {
  const T c = static_cast<T>(0.7978845608028654);
  const auto a = x.array();
  return (T(0.5) * a * (T(1) + (c * (a + T(0.044715) * a.cube())).tanh())).matrix();
}

template <typename T>
Matrix<T> gelu_backward(const Matrix<T>& x, const Matrix<T>& dy) {
  const T c = static_cast<T>(0.7978845608028654);
  const auto a = x.array();
  const auto th = (c * (a + T(0.044715) * a.cube())).tanh().eval();
  const auto dinner = (c * (T(1) + T(3) * T(0.044715) * a.square())).eval();
  const auto grad = (T(0.5) * (T(1) + th) + T(0.5) * a * (T(1) - th.square()) * dinner).eval();
  return (dy.array() * grad).matrix();
}

/// Per-row normalisation to zero mean and unit variance, no affine.
template <typename T>
struct RowNormCache {
  Matrix<T> normalized;
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;
};

template <typename T>
Matrix<T> layer_norm_rows(const Matrix<T>& x, T eps, RowNormCache<T>* cache) {
  const Eigen::Index cols = x.cols();
  const Eigen::Matrix<T, Eigen::Dynamic, 1> mean = x.rowwise().mean();
  Matrix<T> centered = x.colwise() - mean;
  const Eigen::Matrix<T, Eigen::Dynamic, 1> var = centered.rowwise().squaredNorm() / static_cast<T>(cols);
  const Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std = (var.array() + eps).rsqrt().matrix();
  centered.array().colwise() *= inv_std.array();
  if (cache != nullptr) {
    cache->normalized = centered;
    cache->inv_std = inv_std;
  }
  return centered;
}

template <typename T>
Matrix<T> layer_norm_rows_backward(const RowNormCache<T>& cache, const Matrix<T>& dy) {
  const Eigen::Index cols = dy.cols();
  const Eigen::Matrix<T, Eigen::Dynamic, 1> mean_dy = dy.rowwise().sum() / static_cast<T>(cols);
  const Eigen::Matrix<T, Eigen::Dynamic, 1> mean_dy_xhat =
      (dy.array() * cache.normalized.array()).rowwise().sum().matrix() / static_cast<T>(cols);
  Matrix<T> dx = dy.colwise() - mean_dy;
  dx.array() -= cache.normalized.array().colwise() * mean_dy_xhat.array();
  dx.array().colwise() *= cache.inv_std.array();
  return dx;
}

inline int conv_output_size(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

/// Rows of the result are output positions, columns are (ky, kx, channel).
template <typename T>
Matrix<T> im2col(const Activation<T>& x, int kernel, int stride, int pad) {
  const int c = x.channels();
  const int oh = conv_output_size(x.height, kernel, stride, pad);
  const int ow = conv_output_size(x.width, kernel, stride, pad);
  const Eigen::Index row_len = static_cast<Eigen::Index>(kernel) * kernel * c;
  Matrix<T> cols = Matrix<T>::Zero(static_cast<Eigen::Index>(x.count) * oh * ow, row_len);
  const T* src = x.data.data();
  T* dst = cols.data();
  for (int n = 0; n < x.count; ++n) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        T* row = dst + ((static_cast<Eigen::Index>(n) * oh + oy) * ow + ox) * row_len;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= x.height) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= x.width) continue;
            const T* pixel = src + ((static_cast<Eigen::Index>(n) * x.height + iy) * x.width + ix) * c;
            std::copy_n(pixel, c, row + (ky * kernel + kx) * c);
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
Matrix<T> col2im(const Matrix<T>& dcols, int count, int height, int width, int channels, int kernel,
                 int stride, int pad) {
  const int oh = conv_output_size(height, kernel, stride, pad);
  const int ow = conv_output_size(width, kernel, stride, pad);
  const Eigen::Index row_len = static_cast<Eigen::Index>(kernel) * kernel * channels;
  Matrix<T> dx = Matrix<T>::Zero(static_cast<Eigen::Index>(count) * height * width, channels);
  const T* src = dcols.data();
  T* dst = dx.data();
  for (int n = 0; n < count; ++n) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const T* row = src + ((static_cast<Eigen::Index>(n) * oh + oy) * ow + ox) * row_len;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= width) continue;
            T* pixel = dst + ((static_cast<Eigen::Index>(n) * height + iy) * width + ix) * channels;
            const T* part = row + (ky * kernel + kx) * channels;
            for (int ch = 0; ch < channels; ++ch) pixel[ch] += part[ch];
          }
        }
      }
    }
  }
  return dx;
}

/// 2-D convolution over NHWC activations via im2col + GEMM.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in, int out, int kernel, int stride, int pad)
      : weight(name + ".weight", kernel * kernel * in, out),
        bias(name + ".bias", 1, out),
        in_(in),
        kernel_(kernel),
        stride_(stride),
        pad_(pad) {}

  /// He-uniform initialisation scaled for SiLU-like activations.
  void init(Rng& rng) {
    const double fan_in = static_cast<double>(kernel_) * kernel_ * in_;
    fill_uniform(weight.value, std::sqrt(6.0 / fan_in), rng);
    bias.value.setZero();
  }

  int in_channels() const { return in_; }
  int out_channels() const { return static_cast<int>(weight.value.cols()); }

  /// When `cols` is non-null the im2col buffer is kept for backward().
  Activation<T> forward(const Activation<T>& x, Matrix<T>* cols) const {
    if (x.channels() != in_) {
      throw InvalidShape(weight.name + ": expected " + std::to_string(in_) + " input channels, got " +
                         std::to_string(x.channels()));
    }
    Matrix<T> patches = im2col(x, kernel_, stride_, pad_);
    Matrix<T> y = patches * weight.value;
    y.rowwise() += bias.value.row(0);
    const int oh = conv_output_size(x.height, kernel_, stride_, pad_);
    const int ow = conv_output_size(x.width, kernel_, stride_, pad_);
    if (cols != nullptr) *cols = std::move(patches);
    return Activation<T>(x.count, oh, ow, std::move(y));
  }

  Activation<T> backward(const Activation<T>& x, const Matrix<T>& cols, const Matrix<T>& dy,
                         bool need_input_grad = true) {
    weight.grad.noalias() += cols.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
    if (!need_input_grad) return {};
    Matrix<T> dcols = dy * weight.value.transpose();
    return Activation<T>(x.count, x.height, x.width,
                         col2im(dcols, x.count, x.height, x.width, in_, kernel_, stride_, pad_));
  }

  void collect(ParamList<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Param<T> weight;
  Param<T> bias;

 private:
  int in_ = 0;
  int kernel_ = 1;
  int stride_ = 1;
  int pad_ = 0;
};

/// Nearest-neighbour x2 upsampling.
template <typename T>
Activation<T> upsample2x(const Activation<T>& x) {
  const int c = x.channels();
  const int oh = x.height * 2;
  const int ow = x.width * 2;
  Matrix<T> y(static_cast<Eigen::Index>(x.count) * oh * ow, c);
  for (int n = 0; n < x.count; ++n) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        y.row((static_cast<Eigen::Index>(n) * oh + oy) * ow + ox) =
            x.data.row((static_cast<Eigen::Index>(n) * x.height + oy / 2) * x.width + ox / 2);
      }
    }
  }
  return Activation<T>(x.count, oh, ow, std::move(y));
}

template <typename T>
Activation<T> upsample2x_backward(const Activation<T>& dy) {
  const int h = dy.height / 2;
  const int w = dy.width / 2;
  Matrix<T> dx = Matrix<T>::Zero(static_cast<Eigen::Index>(dy.count) * h * w, dy.channels());
  for (int n = 0; n < dy.count; ++n) {
    for (int oy = 0; oy < dy.height; ++oy) {
      for (int ox = 0; ox < dy.width; ++ox) {
        dx.row((static_cast<Eigen::Index>(n) * h + oy / 2) * w + ox / 2) +=
            dy.data.row((static_cast<Eigen::Index>(n) * dy.height + oy) * dy.width + ox);
      }
    }
  }
  return Activation<T>(dy.count, h, w, std::move(dx));
}

/// Moves each f x f block into channels: (h, w, c) -> (h/f, w/f, f*f*c), with
/// output channel (dy * f + dx) * c + k. Its adjoint is depth_to_space.
template <typename T>
Activation<T> space_to_depth(const Activation<T>& x, int f) {
  const int c = x.channels();
  const int oh = x.height / f;
  const int ow = x.width / f;
  Matrix<T> y(static_cast<Eigen::Index>(x.count) * oh * ow, static_cast<Eigen::Index>(f) * f * c);
  for (int n = 0; n < x.count; ++n) {
    for (int iy = 0; iy < x.height; ++iy) {
      for (int ix = 0; ix < x.width; ++ix) {
        const Eigen::Index out_row = (static_cast<Eigen::Index>(n) * oh + iy / f) * ow + ix / f;
        const Eigen::Index in_row = (static_cast<Eigen::Index>(n) * x.height + iy) * x.width + ix;
        y.row(out_row).segment(((iy % f) * f + ix % f) * c, c) = x.data.row(in_row);
      }
    }
  }
  return Activation<T>(x.count, oh, ow, std::move(y));
}

/// Inverse of space_to_depth.
template <typename T>
Activation<T> depth_to_space(const Activation<T>& x, int f) {
  const int c = x.channels() / (f * f);
  const int oh = x.height * f;
  const int ow = x.width * f;
  Matrix<T> y(static_cast<Eigen::Index>(x.count) * oh * ow, c);
  for (int n = 0; n < x.count; ++n) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const Eigen::Index in_row = (static_cast<Eigen::Index>(n) * x.height + oy / f) * x.width + ox / f;
        const Eigen::Index out_row = (static_cast<Eigen::Index>(n) * oh + oy) * ow + ox;
        y.row(out_row) = x.data.row(in_row).segment(((oy % f) * f + ox % f) * c, c);
      }
    }
  }
  return Activation<T>(x.count, oh, ow, std::move(y));
}

/// Multi-head self-attention core. `qkv` holds [Q | K | V] per token row for
/// `count` independent sequences of `tokens` rows each. When `probs` is
/// non-null the softmax matrices are kept, stacked per (sequence, head).
template <typename T>
Matrix<T> attention_forward(const Matrix<T>& qkv, int count, int tokens, int heads, Matrix<T>* probs) {
  const int width = static_cast<int>(qkv.cols() / 3);
  const int head_dim = width / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));
  Matrix<T> out(static_cast<Eigen::Index>(count) * tokens, width);
  if (probs != nullptr) probs->resize(static_cast<Eigen::Index>(count) * heads * tokens, tokens);
  Matrix<T> scores(tokens, tokens);
  for (int n = 0; n < count; ++n) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(n) * tokens;
    for (int h = 0; h < heads; ++h) {
      const auto q = qkv.block(r0, h * head_dim, tokens, head_dim);
      const auto k = qkv.block(r0, width + h * head_dim, tokens, head_dim);
      const auto v = qkv.block(r0, 2 * width + h * head_dim, tokens, head_dim);
      scores.noalias() = (q * k.transpose()) * scale;
      const Eigen::Matrix<T, Eigen::Dynamic, 1> row_max = scores.rowwise().maxCoeff();
      scores = (scores.colwise() - row_max).array().exp().matrix();
      const Eigen::Matrix<T, Eigen::Dynamic, 1> row_sum = scores.rowwise().sum();
      scores.array().colwise() /= row_sum.array();
      out.block(r0, h * head_dim, tokens, head_dim).noalias() = scores * v;
      if (probs != nullptr) {
        probs->block((static_cast<Eigen::Index>(n) * heads + h) * tokens, 0, tokens, tokens) = scores;
      }
    }
  }
  return out;
}

template <typename T>
Matrix<T> attention_backward(const Matrix<T>& qkv, const Matrix<T>& probs, const Matrix<T>& dout,
                             int count, int tokens, int heads) {
  const int width = static_cast<int>(qkv.cols() / 3);
  const int head_dim = width / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));
  Matrix<T> dqkv(qkv.rows(), qkv.cols());
  Matrix<T> dprobs(tokens, tokens);
  for (int n = 0; n < count; ++n) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(n) * tokens;
    for (int h = 0; h < heads; ++h) {
      const auto q = qkv.block(r0, h * head_dim, tokens, head_dim);
      const auto k = qkv.block(r0, width + h * head_dim, tokens, head_dim);
      const auto v = qkv.block(r0, 2 * width + h * head_dim, tokens, head_dim);
      const auto p = probs.block((static_cast<Eigen::Index>(n) * heads + h) * tokens, 0, tokens, tokens);
      const auto dO = dout.block(r0, h * head_dim, tokens, head_dim);
      dqkv.block(r0, 2 * width + h * head_dim, tokens, head_dim).noalias() = p.transpose() * dO;
      dprobs.noalias() = dO * v.transpose();
      const Eigen::Matrix<T, Eigen::Dynamic, 1> inner = (dprobs.array() * p.array()).rowwise().sum();
      dprobs = (p.array() * (dprobs.array().colwise() - inner.array())).matrix() * scale;
      dqkv.block(r0, h * head_dim, tokens, head_dim).noalias() = dprobs * k;
      dqkv.block(r0, width + h * head_dim, tokens, head_dim).noalias() = dprobs.transpose() * q;
    }
  }
  return dqkv;
}

}  // namespace changeflow::nn
