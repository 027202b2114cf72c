#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "changeflow/grid.hpp"
#include "changeflow/nn/layers.hpp"

namespace changeflow {

enum class DiffMode { abs_diff, signed_diff, concat };
enum class NormMode { layer_norm, l2_norm, none };
enum class ResizeMode { bicubic, bilinear, nearest };

DiffMode parse_diff_mode(const std::string& name);
NormMode parse_norm_mode(const std::string& name);
ResizeMode parse_resize_mode(const std::string& name);
std::string to_string(DiffMode mode);
std::string to_string(NormMode mode);
std::string to_string(ResizeMode mode);

/// How the bi-temporal conditioning signal is assembled.
struct CondVariant {
  DiffMode diff = DiffMode::abs_diff;
  NormMode norm = NormMode::layer_norm;
  ResizeMode resize = ResizeMode::bicubic;

  int output_channels(int feature_channels) const {
    return diff == DiffMode::concat ? 2 * feature_channels : feature_channels;
  }
  bool operator==(const CondVariant&) const = default;
};

/// Two co-registered images of one scene.
struct ImagePair {
  Image t1;
  Image t2;
};

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kL2NormEps = 1e-6;

struct EncoderConfig {
  int image_size = 64;
  int base_channels = 16;
  int feature_channels = 32;
  /// Spatial reduction; three stride-2 stages give 8.
  static constexpr int kDownsample = 8;

  int feature_size() const { return image_size / kDownsample; }
};

/// Shared-weight convolutional image encoder producing an
/// (image_size / 8) x (image_size / 8) x feature_channels map.
template <typename T>
class FeatureEncoder {
 public:
  using Act = nn::Activation<T>;

  FeatureEncoder() = default;
  FeatureEncoder(const EncoderConfig& config, Rng& rng);

  const EncoderConfig& config() const { return config_; }

  struct Cache {
    std::vector<Act> inputs;
    std::vector<nn::Matrix<T>> cols;
    std::vector<nn::Matrix<T>> pre;
  };

  /// Images are NHWC in [0, 1]; centred by 0.5 internally.
  Act forward(const Act& images, Cache* cache) const;
  void backward(const Cache& cache, const nn::Matrix<T>& dfeatures);

  nn::ParamList<T> parameters();

 private:
  EncoderConfig config_;
  std::vector<nn::Conv2d<T>> convs_;
};

/// Per-location normalisation over the channel dimension. In layer_norm mode a
/// single affine (gamma, beta) is applied, shared by both temporal branches.
template <typename T>
class ChannelNorm {
 public:
  ChannelNorm() = default;
  ChannelNorm(NormMode mode, int channels);

  NormMode mode() const { return mode_; }

  struct Cache {
    nn::Matrix<T> input;
    nn::RowNormCache<T> norm;
    Eigen::Matrix<T, Eigen::Dynamic, 1> norms;
  };

  nn::Matrix<T> forward(const nn::Matrix<T>& x, Cache* cache) const;
  nn::Matrix<T> backward(const Cache& cache, const nn::Matrix<T>& dy);

  nn::ParamList<T> parameters();
  nn::Param<T> gamma;
  nn::Param<T> beta;

 private:
  NormMode mode_ = NormMode::layer_norm;
};

/// Dense (out_h * out_w) x (in_h * in_w) spatial interpolation operator.
/// Half-pixel centres; bicubic uses the a = -0.75 kernel with replicated
/// borders, bilinear clamps source coordinates at zero, nearest takes
/// floor(dst * in / out).
nn::Matrix<double> resize_operator(int in_h, int in_w, int out_h, int out_w, ResizeMode mode);

/// Encoder + normalisation + differencing + resize, trained jointly with the
/// velocity model.
template <typename T>
class ConditioningNetwork {
 public:
  using Mat = nn::Matrix<T>;
  using Act = nn::Activation<T>;

  ConditioningNetwork() = default;
  ConditioningNetwork(const EncoderConfig& encoder, const CondVariant& variant, int latent_h, int latent_w,
                      std::uint64_t seed);

  const CondVariant& variant() const { return variant_; }
  const EncoderConfig& encoder_config() const { return encoder_.config(); }
  int output_channels() const { return variant_.output_channels(encoder_.config().feature_channels); }
  int latent_height() const { return latent_h_; }
  int latent_width() const { return latent_w_; }

  FeatureEncoder<T>& encoder() { return encoder_; }
  const FeatureEncoder<T>& encoder() const { return encoder_; }
  ChannelNorm<T>& norm() { return norm_; }
  const ChannelNorm<T>& norm() const { return norm_; }

  struct Cache {
    int count = 0;
    typename FeatureEncoder<T>::Cache encoder;
    typename ChannelNorm<T>::Cache norm;
    Mat normalized;
  };

  /// Returns (count * latent_h * latent_w) x output_channels.
  Mat forward(const Act& t1, const Act& t2, Cache* cache) const;
  void backward(const Cache& cache, const Mat& dcond);

  nn::ParamList<T> parameters();

 private:
  Mat combine(const Mat& normalized, int count) const;
  Mat resize(const Mat& signal, int count) const;

  FeatureEncoder<T> encoder_;
  ChannelNorm<T> norm_;
  CondVariant variant_;
  int latent_h_ = 0;
  int latent_w_ = 0;
  Mat resize_op_;
};

extern template class FeatureEncoder<float>;
extern template class FeatureEncoder<double>;
extern template class ChannelNorm<float>;
extern template class ChannelNorm<double>;
extern template class ConditioningNetwork<float>;
extern template class ConditioningNetwork<double>;

/// Stacks images as an NHWC activation.
nn::Activation<float> images_to_activation(std::span<const Image> images);

/// Runs the shared encoder on one image.
FeatureMap extract_features(const FeatureEncoder<float>& encoder, const Image& image);

/// Normalisation with the affine at identity.
FeatureMap normalize_features(const FeatureMap& f, NormMode mode);

/// Normalises both maps (identity affine) and combines them per `variant`.
/// The result is at feature resolution; see resize_conditioning.
ConditioningSignal build_conditioning(const FeatureMap& f1, const FeatureMap& f2, const CondVariant& variant);

ConditioningSignal resize_conditioning(const ConditioningSignal& s, int target_h, int target_w, ResizeMode mode);

/// Full pipeline for one pair using the network's learned parameters.
ConditioningSignal compute_conditioning(const ConditioningNetwork<float>& net, const ImagePair& pair);

}  // namespace changeflow
