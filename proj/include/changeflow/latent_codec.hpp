#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "changeflow/checkpoint.hpp"
#include "changeflow/grid.hpp"
#include "changeflow/nn/layers.hpp"

namespace changeflow {

/// Maps binary masks to latents and latents back to soft masks.
///
/// Encoding replicates the mask over three channels and rescales {0, 1} to
/// {-1, +1} before the encoder. Decoding produces a three-channel image in
/// [-1, 1], rescales each channel to [0, 1], averages the channels and
/// clamps the result to [0, 1].
class MaskCodec {
 public:
  virtual ~MaskCodec() = default;

  virtual std::string kind() const = 0;
  virtual int factor() const = 0;
  virtual int latent_channels() const = 0;

  /// Throws InvalidShape unless both extents are divisible by factor().
  Shape latent_shape(int height, int width) const;

  Latent encode(const BinaryMask& mask) const;
  SoftMask decode(const Latent& latent) const;

  virtual LatentBatch encode_batch(std::span<const BinaryMask> masks) const = 0;
  virtual std::vector<SoftMask> decode_batch(const LatentBatch& latents) const = 0;

  virtual Checkpoint to_checkpoint() const = 0;
};

/// Exact codec: the latent is the replicated, rescaled mask itself.
class IdentityCodec final : public MaskCodec {
 public:
  std::string kind() const override { return "identity"; }
  int factor() const override { return 1; }
  int latent_channels() const override { return 3; }
  LatentBatch encode_batch(std::span<const BinaryMask> masks) const override;
  std::vector<SoftMask> decode_batch(const LatentBatch& latents) const override;
  Checkpoint to_checkpoint() const override;
};

struct ConvCodecConfig {
  int latent_channels = 4;
  int width = 64;
  /// Space-to-depth block size.
  static constexpr int kFactor = 4;
};

/// Convolutional autoencoder with spatial factor 4: 4x4 blocks are folded into
/// channels and all convolutions run at latent resolution.
class ConvCodec final : public MaskCodec {
 public:
  using Mat = nn::Matrix<float>;
  using Act = nn::Activation<float>;

  ConvCodec(const ConvCodecConfig& config, std::uint64_t seed);

  std::string kind() const override { return "conv"; }
  int factor() const override { return ConvCodecConfig::kFactor; }
  int latent_channels() const override { return config_.latent_channels; }
  const ConvCodecConfig& config() const { return config_; }

  LatentBatch encode_batch(std::span<const BinaryMask> masks) const override;
  std::vector<SoftMask> decode_batch(const LatentBatch& latents) const override;
  Checkpoint to_checkpoint() const override;

  /// One optimisation pass over a batch: MSE of the decoder output, clamped
  /// to [-1, 1], against the replicated {-1, +1} target, with Gaussian
  /// latent noise of `noise_sigma`, plus `latent_penalty` * mean(latent^2).
  /// The clamp passes gradients through on the wrong side of the target.
  /// Accumulates gradients and returns the reconstruction MSE.
  double accumulate_gradients(std::span<const BinaryMask> masks, double noise_sigma, double latent_penalty, Rng& rng);

  nn::ParamList<float> parameters();

 private:
  Act encode_activation(const Act& input, std::vector<Act>* inputs, std::vector<Mat>* cols,
                        std::vector<Mat>* pre) const;
  Act decode_activation(const Act& latent, std::vector<Act>* inputs, std::vector<Mat>* cols,
                        std::vector<Mat>* pre) const;

  ConvCodecConfig config_;
  std::vector<nn::Conv2d<float>> encoder_;
  std::vector<nn::Conv2d<float>> decoder_;
};

/// Builds a codec from a checkpoint written by to_checkpoint().
std::unique_ptr<MaskCodec> load_codec(const std::filesystem::path& path);
std::unique_ptr<MaskCodec> codec_from_checkpoint(const Checkpoint& checkpoint);
void save_codec(const MaskCodec& codec, const std::filesystem::path& path);

/// Round-trip quality over a mask collection, pixels pooled.
struct RoundTripReport {
  /// F1 of reconstructions thresholded at 0.5; empty when neither the
  /// originals nor the reconstructions contain a positive pixel.
  std::optional<double> f1;
  /// Mean absolute error of the unthresholded reconstructions.
  double mae = 0.0;
};

RoundTripReport roundtrip_scores(std::span<const BinaryMask> originals, std::span<const SoftMask> reconstructions);
RoundTripReport roundtrip_report(const MaskCodec& codec, std::span<const BinaryMask> masks);

struct CodecTrainConfig {
  std::string kind = "conv";
  ConvCodecConfig codec;
  int epochs = 40;
  int batch_size = 8;
  double learning_rate = 2e-3;
  double noise_sigma = 0.1;
  double latent_penalty = 1e-3;
  std::uint64_t seed = 0;
  /// Fewer training masks than this is rejected.
  int min_masks = 100;
};

struct CodecTrainResult {
  std::unique_ptr<MaskCodec> codec;
  std::vector<double> epoch_loss;
  RoundTripReport report;
};

/// Trains a conv codec with Adam under a cosine schedule. The identity kind
/// returns immediately.
CodecTrainResult train_codec(std::span<const BinaryMask> masks, const CodecTrainConfig& config);

}  // namespace changeflow
