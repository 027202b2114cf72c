#include "changeflow/conditioning.hpp"

#include <cmath>

namespace changeflow {

DiffMode parse_diff_mode(const std::string& name) {
  if (name == "abs_diff") return DiffMode::abs_diff;
  if (name == "signed_diff") return DiffMode::signed_diff;
  if (name == "concat") return DiffMode::concat;
  throw InvalidArgument("unknown diff mode '" + name + "'");
}

NormMode parse_norm_mode(const std::string& name) {
  if (name == "layer_norm") return NormMode::layer_norm;
  if (name == "l2_norm") return NormMode::l2_norm;
  if (name == "none") return NormMode::none;
  throw InvalidArgument("unknown norm mode '" + name + "'");
}

ResizeMode parse_resize_mode(const std::string& name) {
  if (name == "bicubic") return ResizeMode::bicubic;
  if (name == "bilinear") return ResizeMode::bilinear;
  if (name == "nearest") return ResizeMode::nearest;
  throw InvalidArgument("unknown resize mode '" + name + "'");
}

std::string to_string(DiffMode mode) {
  switch (mode) {
    case DiffMode::abs_diff: return "abs_diff";
    case DiffMode::signed_diff: return "signed_diff";
    case DiffMode::concat: return "concat";
  }
  return "?";
}

std::string to_string(NormMode mode) {
  switch (mode) {
    case NormMode::layer_norm: return "layer_norm";
    case NormMode::l2_norm: return "l2_norm";
    case NormMode::none: return "none";
  }
  return "?";
}

std::string to_string(ResizeMode mode) {
  switch (mode) {
    case ResizeMode::bicubic: return "bicubic";
    case ResizeMode::bilinear: return "bilinear";
    case ResizeMode::nearest: return "nearest";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// FeatureEncoder

template <typename T>
FeatureEncoder<T>::FeatureEncoder(const EncoderConfig& config, Rng& rng) : config_(config) {
  if (config.image_size < EncoderConfig::kDownsample || config.image_size % EncoderConfig::kDownsample != 0) {
    throw InvalidArgument("encoder: image size must be a positive multiple of 8");
  }
  if (config.base_channels < 1 || config.feature_channels < 1) {
    throw InvalidArgument("encoder: channel counts must be positive");
  }
  const int b = config.base_channels;
  const int c = config.feature_channels;
  convs_.emplace_back("encoder.conv0", 3, b, 3, 1, 1);
  convs_.emplace_back("encoder.conv1", b, 2 * b, 3, 2, 1);
  convs_.emplace_back("encoder.conv2", 2 * b, 2 * b, 3, 2, 1);
  convs_.emplace_back("encoder.conv3", 2 * b, c, 3, 2, 1);
  convs_.emplace_back("encoder.head", c, c, 1, 1, 0);
  for (auto& conv : convs_) conv.init(rng);
}

template <typename T>
typename FeatureEncoder<T>::Act FeatureEncoder<T>::forward(const Act& images, Cache* cache) const {
  if (images.height != config_.image_size || images.width != config_.image_size || images.channels() != 3) {
    throw InvalidShape("encoder: expected " + std::to_string(config_.image_size) + "x" +
                       std::to_string(config_.image_size) + "x3 images, got " + std::to_string(images.height) +
                       "x" + std::to_string(images.width) + "x" + std::to_string(images.channels()));
  }
  Act x(images.count, images.height, images.width, (images.data.array() - T(0.5)).matrix());
  if (cache != nullptr) {
    cache->inputs.clear();
    cache->cols.clear();
    cache->pre.clear();
  }
  const std::size_t last = convs_.size() - 1;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    nn::Matrix<T> cols;
    Act y = convs_[i].forward(x, cache != nullptr ? &cols : nullptr);
    if (cache != nullptr) {
      cache->inputs.push_back(std::move(x));
      cache->cols.push_back(std::move(cols));
    }
    if (i == last) return y;
    if (cache != nullptr) cache->pre.push_back(y.data);
    x = Act(y.count, y.height, y.width, nn::silu(y.data));
  }
  return x;
}

template <typename T>
void FeatureEncoder<T>::backward(const Cache& cache, const nn::Matrix<T>& dfeatures) {
  nn::Matrix<T> dy = dfeatures;
  for (std::size_t ri = convs_.size(); ri-- > 0;) {
    if (ri + 1 < convs_.size()) dy = nn::silu_backward(cache.pre[ri], dy);
    const bool need_input = ri > 0;
    Act dx = convs_[ri].backward(cache.inputs[ri], cache.cols[ri], dy, need_input);
    if (need_input) dy = std::move(dx.data);
  }
}

template <typename T>
nn::ParamList<T> FeatureEncoder<T>::parameters() {
  nn::ParamList<T> out;
  for (auto& conv : convs_) conv.collect(out);
  return out;
}

// ---------------------------------------------------------------------------
// ChannelNorm

template <typename T>
ChannelNorm<T>::ChannelNorm(NormMode mode, int channels)
    : gamma("norm.gamma", 1, channels), beta("norm.beta", 1, channels), mode_(mode) {
  if (mode == NormMode::layer_norm && channels < 2) {
    throw InvalidArgument("layer_norm needs at least 2 channels");
  }
  gamma.value.setOnes();
}

template <typename T>
nn::Matrix<T> ChannelNorm<T>::forward(const nn::Matrix<T>& x, Cache* cache) const {
  switch (mode_) {
    case NormMode::layer_norm: {
      nn::Matrix<T> y = nn::layer_norm_rows(x, static_cast<T>(kLayerNormEps), cache != nullptr ? &cache->norm : nullptr);
      y.array().rowwise() *= gamma.value.row(0).array();
      y.rowwise() += beta.value.row(0);
      return y;
    }
    case NormMode::l2_norm: {
      Eigen::Matrix<T, Eigen::Dynamic, 1> norms = x.rowwise().norm();
      nn::Matrix<T> y = x;
      y.array().colwise() /= (norms.array() + static_cast<T>(kL2NormEps));
      if (cache != nullptr) {
        cache->input = x;
        cache->norms = std::move(norms);
      }
      return y;
    }
    case NormMode::none:
      return x;
  }
  return x;
}

template <typename T>
nn::Matrix<T> ChannelNorm<T>::backward(const Cache& cache, const nn::Matrix<T>& dy) {
  switch (mode_) {
    case NormMode::layer_norm: {
      gamma.grad.row(0) += (dy.array() * cache.norm.normalized.array()).colwise().sum().matrix();
      beta.grad.row(0) += dy.colwise().sum();
      nn::Matrix<T> dn = dy;
      dn.array().rowwise() *= gamma.value.row(0).array();
      return nn::layer_norm_rows_backward(cache.norm, dn);
    }
    case NormMode::l2_norm: {
      const T eps = static_cast<T>(kL2NormEps);
      nn::Matrix<T> dx(dy.rows(), dy.cols());
      for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const T n = cache.norms(r);
        const T s = n + eps;
        dx.row(r) = dy.row(r) / s;
        if (n > T(0)) {
          const T dot = cache.input.row(r).dot(dy.row(r));
          dx.row(r) -= cache.input.row(r) * (dot / (n * s * s));
        }
      }
      return dx;
    }
    case NormMode::none:
      return dy;
  }
  return dy;
}

template <typename T>
nn::ParamList<T> ChannelNorm<T>::parameters() {
  if (mode_ != NormMode::layer_norm) return {};
  return {&gamma, &beta};
}

// ---------------------------------------------------------------------------
// Resize

namespace {

double cubic_weight(double x) {
  constexpr double a = -0.75;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

Eigen::MatrixXd resize_1d(int in, int out, ResizeMode mode) {
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(out, in);
  const double scale = static_cast<double>(in) / out;
  auto clampi = [in](int i) { return std::clamp(i, 0, in - 1); };
  for (int i = 0; i < out; ++i) {
    switch (mode) {
      case ResizeMode::bicubic: {
        const double src = (i + 0.5) * scale - 0.5;
        const int x0 = static_cast<int>(std::floor(src));
        const double t = src - x0;
        r(i, clampi(x0 - 1)) += cubic_weight(t + 1.0);
        r(i, clampi(x0)) += cubic_weight(t);
        r(i, clampi(x0 + 1)) += cubic_weight(1.0 - t);
        r(i, clampi(x0 + 2)) += cubic_weight(2.0 - t);
        break;
      }
      case ResizeMode::bilinear: {
        const double src = std::max((i + 0.5) * scale - 0.5, 0.0);
        const int x0 = std::min(static_cast<int>(std::floor(src)), in - 1);
        const int x1 = std::min(x0 + 1, in - 1);
        const double l = src - x0;
        r(i, x0) += 1.0 - l;
        r(i, x1) += l;
        break;
      }
      case ResizeMode::nearest: {
        r(i, std::min(static_cast<int>(std::floor(i * scale)), in - 1)) = 1.0;
        break;
      }
    }
  }
  return r;
}

}  // namespace

nn::Matrix<double> resize_operator(int in_h, int in_w, int out_h, int out_w, ResizeMode mode) {
  if (in_h < 1 || in_w < 1 || out_h < 1 || out_w < 1) throw InvalidShape("resize: non-positive dimension");
  const Eigen::MatrixXd rh = resize_1d(in_h, out_h, mode);
  const Eigen::MatrixXd rw = resize_1d(in_w, out_w, mode);
  nn::Matrix<double> op(static_cast<Eigen::Index>(out_h) * out_w, static_cast<Eigen::Index>(in_h) * in_w);
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      for (int iy = 0; iy < in_h; ++iy) {
        for (int ix = 0; ix < in_w; ++ix) {
          op(oy * out_w + ox, iy * in_w + ix) = rh(oy, iy) * rw(ox, ix);
        }
      }
    }
  }
  return op;
}

// ---------------------------------------------------------------------------
// ConditioningNetwork

template <typename T>
ConditioningNetwork<T>::ConditioningNetwork(const EncoderConfig& encoder, const CondVariant& variant, int latent_h,
                                            int latent_w, std::uint64_t seed)
    : norm_(variant.norm, encoder.feature_channels), variant_(variant), latent_h_(latent_h), latent_w_(latent_w) {
  Rng rng(seed);
  encoder_ = FeatureEncoder<T>(encoder, rng);
  const int fs = encoder.feature_size();
  resize_op_ = resize_operator(fs, fs, latent_h, latent_w, variant.resize).template cast<T>();
}

template <typename T>
typename ConditioningNetwork<T>::Mat ConditioningNetwork<T>::combine(const Mat& normalized, int count) const {
  const Eigen::Index rows = normalized.rows() / 2;
  const auto a = normalized.topRows(rows);
  const auto b = normalized.bottomRows(rows);
  (void)count;
  switch (variant_.diff) {
    case DiffMode::abs_diff: return (a - b).cwiseAbs();
    case DiffMode::signed_diff: return a - b;
    case DiffMode::concat: {
      Mat out(rows, 2 * normalized.cols());
      out << a, b;
      return out;
    }
  }
  return a - b;
}

template <typename T>
typename ConditioningNetwork<T>::Mat ConditioningNetwork<T>::resize(const Mat& signal, int count) const {
  const Eigen::Index in_pixels = resize_op_.cols();
  const Eigen::Index out_pixels = resize_op_.rows();
  Mat out(static_cast<Eigen::Index>(count) * out_pixels, signal.cols());
  for (int n = 0; n < count; ++n) {
    out.middleRows(n * out_pixels, out_pixels).noalias() = resize_op_ * signal.middleRows(n * in_pixels, in_pixels);
  }
  return out;
}

template <typename T>
typename ConditioningNetwork<T>::Mat ConditioningNetwork<T>::forward(const Act& t1, const Act& t2,
                                                                     Cache* cache) const {
  if (t1.count != t2.count || t1.height != t2.height || t1.width != t2.width || t1.channels() != t2.channels()) {
    throw InvalidShape("conditioning: image batches differ in shape");
  }
  const int count = t1.count;
  Act both(2 * count, t1.height, t1.width, Mat(2 * t1.data.rows(), t1.data.cols()));
  both.data << t1.data, t2.data;
  Act features = encoder_.forward(both, cache != nullptr ? &cache->encoder : nullptr);
  Mat normalized = norm_.forward(features.data, cache != nullptr ? &cache->norm : nullptr);
  Mat signal = combine(normalized, count);
  if (cache != nullptr) {
    cache->count = count;
    cache->normalized = std::move(normalized);
  }
  return resize(signal, count);
}

template <typename T>
void ConditioningNetwork<T>::backward(const Cache& cache, const Mat& dcond) {
  const int count = cache.count;
  const Eigen::Index in_pixels = resize_op_.cols();
  const Eigen::Index out_pixels = resize_op_.rows();
  Mat dsignal(static_cast<Eigen::Index>(count) * in_pixels, dcond.cols());
  for (int n = 0; n < count; ++n) {
    dsignal.middleRows(n * in_pixels, in_pixels).noalias() =
        resize_op_.transpose() * dcond.middleRows(n * out_pixels, out_pixels);
  }
  const Eigen::Index rows = cache.normalized.rows() / 2;
  const Eigen::Index c = cache.normalized.cols();
  Mat dnorm(cache.normalized.rows(), c);
  switch (variant_.diff) {
    case DiffMode::abs_diff: {
      const auto diff = (cache.normalized.topRows(rows) - cache.normalized.bottomRows(rows)).array();
      const Mat g = (dsignal.array() * diff.sign()).matrix();
      dnorm.topRows(rows) = g;
      dnorm.bottomRows(rows) = -g;
      break;
    }
    case DiffMode::signed_diff:
      dnorm.topRows(rows) = dsignal;
      dnorm.bottomRows(rows) = -dsignal;
      break;
    case DiffMode::concat:
      dnorm.topRows(rows) = dsignal.leftCols(c);
      dnorm.bottomRows(rows) = dsignal.rightCols(c);
      break;
  }
  const Mat dfeatures = norm_.backward(cache.norm, dnorm);
  encoder_.backward(cache.encoder, dfeatures);
}

template <typename T>
nn::ParamList<T> ConditioningNetwork<T>::parameters() {
  nn::ParamList<T> out = encoder_.parameters();
  for (auto* p : norm_.parameters()) out.push_back(p);
  return out;
}

template class FeatureEncoder<float>;
template class FeatureEncoder<double>;
template class ChannelNorm<float>;
template class ChannelNorm<double>;
template class ConditioningNetwork<float>;
template class ConditioningNetwork<double>;

// ---------------------------------------------------------------------------
// Single-sample helpers

nn::Activation<float> images_to_activation(std::span<const Image> images) {
  if (images.empty()) throw InvalidShape("images: empty batch");
  const Shape& s = images.front().shape();
  nn::Matrix<float> data(static_cast<Eigen::Index>(images.size()) * s.pixels(), s.channels);
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_same_shape(s, images[i].shape(), "image batch");
    std::copy(images[i].values().begin(), images[i].values().end(),
              data.data() + static_cast<std::ptrdiff_t>(i * s.size()));
  }
  return nn::Activation<float>(static_cast<int>(images.size()), s.height, s.width, std::move(data));
}

namespace {

FeatureMap matrix_to_feature(const nn::Matrix<float>& m, int h, int w) {
  FeatureMap f(Shape{h, w, static_cast<int>(m.cols())});
  std::copy_n(m.data(), m.size(), f.data());
  return f;
}

nn::Matrix<float> feature_to_matrix(const FeatureMap& f) {
  nn::Matrix<float> m(static_cast<Eigen::Index>(f.shape().pixels()), f.channels());
  std::copy(f.values().begin(), f.values().end(), m.data());
  return m;
}

}  // namespace

FeatureMap extract_features(const FeatureEncoder<float>& encoder, const Image& image) {
  const Image one[1] = {image};
  const auto act = encoder.forward(images_to_activation(one), nullptr);
  return matrix_to_feature(act.data, act.height, act.width);
}

FeatureMap normalize_features(const FeatureMap& f, NormMode mode) {
  const ChannelNorm<float> norm(mode, f.channels());
  return matrix_to_feature(norm.forward(feature_to_matrix(f), nullptr), f.height(), f.width());
}

ConditioningSignal build_conditioning(const FeatureMap& f1, const FeatureMap& f2, const CondVariant& variant) {
  require_same_shape(f1.shape(), f2.shape(), "build_conditioning");
  const FeatureMap a = normalize_features(f1, variant.norm);
  const FeatureMap b = normalize_features(f2, variant.norm);
  const int c = f1.channels();
  ConditioningSignal out(Shape{f1.height(), f1.width(), variant.output_channels(c)});
  const std::size_t pixels = f1.shape().pixels();
  for (std::size_t p = 0; p < pixels; ++p) {
    for (int k = 0; k < c; ++k) {
      const float va = a.values()[p * c + k];
      const float vb = b.values()[p * c + k];
      switch (variant.diff) {
        case DiffMode::abs_diff: out.values()[p * c + k] = std::abs(va - vb); break;
        case DiffMode::signed_diff: out.values()[p * c + k] = va - vb; break;
        case DiffMode::concat:
          out.values()[p * 2 * c + k] = va;
          out.values()[p * 2 * c + c + k] = vb;
          break;
      }
    }
  }
  return out;
}

ConditioningSignal resize_conditioning(const ConditioningSignal& s, int target_h, int target_w, ResizeMode mode) {
  if (target_h < 1 || target_w < 1) throw InvalidShape("resize_conditioning: non-positive target");
  if (target_h == s.height() && target_w == s.width()) return s;
  const nn::Matrix<double> op = resize_operator(s.height(), s.width(), target_h, target_w, mode);
  nn::Matrix<double> in(static_cast<Eigen::Index>(s.shape().pixels()), s.channels());
  for (Eigen::Index i = 0; i < in.size(); ++i) in.data()[i] = s.values()[i];
  const nn::Matrix<double> out = op * in;
  ConditioningSignal result(Shape{target_h, target_w, s.channels()});
  for (Eigen::Index i = 0; i < out.size(); ++i) result.values()[i] = static_cast<float>(out.data()[i]);
  return result;
}

ConditioningSignal compute_conditioning(const ConditioningNetwork<float>& net, const ImagePair& pair) {
  const Image a[1] = {pair.t1};
  const Image b[1] = {pair.t2};
  const auto m = net.forward(images_to_activation(a), images_to_activation(b), nullptr);
  ConditioningSignal out(Shape{net.latent_height(), net.latent_width(), static_cast<int>(m.cols())});
  std::copy_n(m.data(), m.size(), out.data());
  return out;
}

}  // namespace changeflow
