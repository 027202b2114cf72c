#include "changeflow/latent_codec.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "changeflow/nn/adamw.hpp"

namespace changeflow {

Shape MaskCodec::latent_shape(int height, int width) const {
  const int f = factor();
  if (height < 1 || width < 1 || height % f != 0 || width % f != 0) {
    throw InvalidShape("codec: mask " + std::to_string(height) + "x" + std::to_string(width) +
                       " not divisible by factor " + std::to_string(f));
  }
  return Shape{height / f, width / f, latent_channels()};
}

Latent MaskCodec::encode(const BinaryMask& mask) const {
  const BinaryMask one[1] = {mask};
  return encode_batch(one).item(0);
}

SoftMask MaskCodec::decode(const Latent& latent) const {
  LatentBatch batch(1, latent.shape());
  batch.set(0, latent);
  return decode_batch(batch).front();
}

namespace {

void check_masks(std::span<const BinaryMask> masks) {
  if (masks.empty()) throw InvalidShape("codec: empty mask batch");
  for (const auto& m : masks) {
    if (m.height() != masks.front().height() || m.width() != masks.front().width()) {
      throw InvalidShape("codec: masks in a batch must share their extent");
    }
  }
}

/// Replicated {-1, +1} RGB rendering of the masks, NHWC.
nn::Activation<float> masks_to_rgb(std::span<const BinaryMask> masks) {
  const int h = masks.front().height();
  const int w = masks.front().width();
  nn::Matrix<float> data(static_cast<Eigen::Index>(masks.size()) * h * w, 3);
  Eigen::Index row = 0;
  for (const auto& m : masks) {
    for (std::uint8_t v : m.values()) data.row(row++).setConstant(v != 0 ? 1.0f : -1.0f);
  }
  return nn::Activation<float>(static_cast<int>(masks.size()), h, w, std::move(data));
}

/// Channel mean of (v + 1) / 2, clamped to [0, 1].
std::vector<SoftMask> rgb_to_soft(const nn::Activation<float>& rgb) {
  std::vector<SoftMask> out;
  out.reserve(static_cast<std::size_t>(rgb.count));
  const Eigen::Index pixels = rgb.pixels();
  for (int n = 0; n < rgb.count; ++n) {
    SoftMask m(Shape{rgb.height, rgb.width, 1});
    for (Eigen::Index p = 0; p < pixels; ++p) {
      const auto row = rgb.data.row(n * pixels + p);
      const float mean = ((row.array() + 1.0f) * 0.5f).mean();
      m.values()[p] = std::clamp(mean, 0.0f, 1.0f);
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// IdentityCodec

LatentBatch IdentityCodec::encode_batch(std::span<const BinaryMask> masks) const {
  check_masks(masks);
  const auto rgb = masks_to_rgb(masks);
  LatentBatch out(static_cast<int>(masks.size()), latent_shape(rgb.height, rgb.width));
  std::copy_n(rgb.data.data(), rgb.data.size(), out.data());
  return out;
}

std::vector<SoftMask> IdentityCodec::decode_batch(const LatentBatch& latents) const {
  const Shape& s = latents.shape();
  if (s.channels != 3) throw InvalidShape("identity codec: latent must have 3 channels");
  nn::Matrix<float> data(static_cast<Eigen::Index>(latents.count()) * s.pixels(), 3);
  std::copy_n(latents.data(), latents.size(), data.data());
  return rgb_to_soft(nn::Activation<float>(latents.count(), s.height, s.width, std::move(data)));
}

Checkpoint IdentityCodec::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.meta = {{"kind", "codec"}, {"codec", "identity"}, {"f_codec", 1}, {"d", 3}};
  return ckpt;
}

// ---------------------------------------------------------------------------
// ConvCodec

ConvCodec::ConvCodec(const ConvCodecConfig& config, std::uint64_t seed) : config_(config) {
  if (config.latent_channels < 1 || config.width < 1) throw InvalidArgument("codec: channel counts must be positive");
  const int w = config.width;
  const int d = config.latent_channels;
  constexpr int blocks = 3 * ConvCodecConfig::kFactor * ConvCodecConfig::kFactor;
  encoder_.emplace_back("codec.enc0", blocks, w, 3, 1, 1);
  encoder_.emplace_back("codec.enc1", w, w, 3, 1, 1);
  encoder_.emplace_back("codec.enc2", w, d, 1, 1, 0);
  decoder_.emplace_back("codec.dec0", d, w, 3, 1, 1);
  decoder_.emplace_back("codec.dec1", w, w, 3, 1, 1);
  decoder_.emplace_back("codec.dec2", w, w, 3, 1, 1);
  decoder_.emplace_back("codec.dec3", w, blocks, 1, 1, 0);
  Rng rng(seed);
  for (auto& c : encoder_) c.init(rng);
  for (auto& c : decoder_) c.init(rng);
}

// Encoder: 4x4 space-to-depth, then convs at latent resolution with SiLU
// after every layer except the last.
ConvCodec::Act ConvCodec::encode_activation(const Act& input, std::vector<Act>* inputs, std::vector<Mat>* cols,
                                            std::vector<Mat>* pre) const {
  Act x = nn::space_to_depth(input, ConvCodecConfig::kFactor);
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    Mat c;
    Act y = encoder_[i].forward(x, cols != nullptr ? &c : nullptr);
    if (inputs != nullptr) {
      inputs->push_back(std::move(x));
      cols->push_back(std::move(c));
    }
    if (i + 1 == encoder_.size()) return y;
    if (pre != nullptr) pre->push_back(y.data);
    x = Act(y.count, y.height, y.width, nn::silu(y.data));
  }
  return x;
}

// Decoder: convs at latent resolution, the last one emitting every 4x4 block,
// then depth-to-space.
ConvCodec::Act ConvCodec::decode_activation(const Act& latent, std::vector<Act>* inputs, std::vector<Mat>* cols,
                                            std::vector<Mat>* pre) const {
  Act x = latent;
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    Mat c;
    Act y = decoder_[i].forward(x, cols != nullptr ? &c : nullptr);
    if (inputs != nullptr) {
      inputs->push_back(std::move(x));
      cols->push_back(std::move(c));
    }
    if (i + 1 == decoder_.size()) return nn::depth_to_space(y, ConvCodecConfig::kFactor);
    if (pre != nullptr) pre->push_back(y.data);
    x = Act(y.count, y.height, y.width, nn::silu(y.data));
  }
  return x;
}

LatentBatch ConvCodec::encode_batch(std::span<const BinaryMask> masks) const {
  check_masks(masks);
  const Shape shape = latent_shape(masks.front().height(), masks.front().width());
  LatentBatch out(static_cast<int>(masks.size()), shape);
  // Chunked to bound the im2col buffers.
  constexpr std::size_t kChunk = 64;
  for (std::size_t first = 0; first < masks.size(); first += kChunk) {
    const auto part = masks.subspan(first, std::min(kChunk, masks.size() - first));
    const Act z = encode_activation(masks_to_rgb(part), nullptr, nullptr, nullptr);
    std::copy_n(z.data.data(), z.data.size(), out.data() + first * shape.size());
  }
  return out;
}

std::vector<SoftMask> ConvCodec::decode_batch(const LatentBatch& latents) const {
  const Shape& s = latents.shape();
  if (s.channels != config_.latent_channels) {
    throw InvalidShape("conv codec: latent has " + std::to_string(s.channels) + " channels, expected " +
                       std::to_string(config_.latent_channels));
  }
  std::vector<SoftMask> out;
  out.reserve(static_cast<std::size_t>(latents.count()));
  constexpr int kChunk = 64;
  for (int first = 0; first < latents.count(); first += kChunk) {
    const int n = std::min(kChunk, latents.count() - first);
    Mat data(static_cast<Eigen::Index>(n) * s.pixels(), s.channels);
    std::copy_n(latents.data() + static_cast<std::size_t>(first) * s.size(), data.size(), data.data());
    const Act rgb = decode_activation(Act(n, s.height, s.width, std::move(data)), nullptr, nullptr, nullptr);
    for (auto& m : rgb_to_soft(rgb)) out.push_back(std::move(m));
  }
  return out;
}

double ConvCodec::accumulate_gradients(std::span<const BinaryMask> masks, double noise_sigma, double latent_penalty,
                                       Rng& rng) {
  check_masks(masks);
  latent_shape(masks.front().height(), masks.front().width());
  const Act target = masks_to_rgb(masks);

  std::vector<Act> enc_in, dec_in;
  std::vector<Mat> enc_cols, dec_cols, enc_pre, dec_pre;
  const Act z = encode_activation(target, &enc_in, &enc_cols, &enc_pre);
  Act noisy = z;
  if (noise_sigma > 0.0) {
    std::normal_distribution<float> normal(0.0f, static_cast<float>(noise_sigma));
    for (Eigen::Index i = 0; i < noisy.data.size(); ++i) noisy.data.data()[i] += normal(rng);
  }
  const Act recon = decode_activation(noisy, &dec_in, &dec_cols, &dec_pre);

  // Decoding clamps to [-1, 1], so overshooting on the correct side costs
  // nothing; only the residual of the clamped output is penalised.
  const Mat residual = recon.data.cwiseMax(-1.0f).cwiseMin(1.0f) - target.data;
  const double count = static_cast<double>(residual.size());
  const double mse = residual.cast<double>().squaredNorm() / count;

  const Act dblocks = nn::space_to_depth(
      Act(recon.count, recon.height, recon.width, residual * static_cast<float>(2.0 / count)),
      ConvCodecConfig::kFactor);
  Mat dy = dblocks.data;
  for (std::size_t ri = decoder_.size(); ri-- > 0;) {
    if (ri + 1 < decoder_.size()) dy = nn::silu_backward(dec_pre[ri], dy);
    Act dx = decoder_[ri].backward(dec_in[ri], dec_cols[ri], dy);
    dy = std::move(dx.data);
  }
  dy += z.data * static_cast<float>(2.0 * latent_penalty / static_cast<double>(z.data.size()));
  for (std::size_t ri = encoder_.size(); ri-- > 0;) {
    if (ri + 1 < encoder_.size()) dy = nn::silu_backward(enc_pre[ri], dy);
    const bool need_input = ri > 0;
    Act dx = encoder_[ri].backward(enc_in[ri], enc_cols[ri], dy, need_input);
    if (need_input) dy = std::move(dx.data);
  }
  return mse;
}

nn::ParamList<float> ConvCodec::parameters() {
  nn::ParamList<float> out;
  for (auto& c : encoder_) c.collect(out);
  for (auto& c : decoder_) c.collect(out);
  return out;
}

Checkpoint ConvCodec::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.meta = {{"kind", "codec"},
               {"codec", "conv"},
               {"f_codec", ConvCodecConfig::kFactor},
               {"d", config_.latent_channels},
               {"width", config_.width}};
  auto params = const_cast<ConvCodec*>(this)->parameters();
  export_params(params, ckpt.tensors);
  return ckpt;
}

std::unique_ptr<MaskCodec> codec_from_checkpoint(const Checkpoint& checkpoint) {
  if (checkpoint.meta.value("kind", "") != "codec") throw LoadError("checkpoint does not hold a codec");
  const std::string kind = checkpoint.meta.value("codec", "");
  if (kind == "identity") return std::make_unique<IdentityCodec>();
  if (kind != "conv") throw LoadError("unknown codec kind '" + kind + "'");
  ConvCodecConfig config;
  config.latent_channels = checkpoint.meta.at("d").get<int>();
  config.width = checkpoint.meta.at("width").get<int>();
  auto codec = std::make_unique<ConvCodec>(config, 0);
  import_params(codec->parameters(), checkpoint);
  return codec;
}

std::unique_ptr<MaskCodec> load_codec(const std::filesystem::path& path) {
  return codec_from_checkpoint(read_checkpoint(path));
}

void save_codec(const MaskCodec& codec, const std::filesystem::path& path) {
  write_checkpoint(path, codec.to_checkpoint());
}

// ---------------------------------------------------------------------------
// Reports and training

RoundTripReport roundtrip_scores(std::span<const BinaryMask> originals, std::span<const SoftMask> reconstructions) {
  if (originals.empty()) throw InvalidArgument("round-trip report: empty mask collection");
  if (originals.size() != reconstructions.size()) throw InvalidShape("round-trip report: count mismatch");
  std::uint64_t tp = 0, fp = 0, fn = 0;
  double abs_error = 0.0;
  std::size_t pixels = 0;
  for (std::size_t i = 0; i < originals.size(); ++i) {
    const auto& m = originals[i];
    const auto& r = reconstructions[i];
    if (r.height() != m.height() || r.width() != m.width()) throw InvalidShape("round-trip report: extent mismatch");
    for (std::size_t p = 0; p < m.size(); ++p) {
      const bool truth = m.values()[p] != 0;
      const float soft = r.values()[p];
      const bool pred = soft >= 0.5f;
      tp += truth && pred;
      fp += !truth && pred;
      fn += truth && !pred;
      abs_error += std::abs(static_cast<double>(soft) - (truth ? 1.0 : 0.0));
    }
    pixels += m.size();
  }
  RoundTripReport report;
  report.mae = abs_error / static_cast<double>(pixels);
  if (tp + fp + fn > 0) report.f1 = 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
  return report;
}

RoundTripReport roundtrip_report(const MaskCodec& codec, std::span<const BinaryMask> masks) {
  if (masks.empty()) throw InvalidArgument("round-trip report: empty mask collection");
  const auto recon = codec.decode_batch(codec.encode_batch(masks));
  return roundtrip_scores(masks, recon);
}

CodecTrainResult train_codec(std::span<const BinaryMask> masks, const CodecTrainConfig& config) {
  CodecTrainResult result;
  if (config.kind == "identity") {
    result.codec = std::make_unique<IdentityCodec>();
    if (!masks.empty()) result.report = roundtrip_report(*result.codec, masks);
    return result;
  }
  if (config.kind != "conv") throw InvalidArgument("unknown codec kind '" + config.kind + "'");
  if (masks.empty()) throw InvalidArgument("train_codec: empty dataset");
  if (static_cast<int>(masks.size()) < config.min_masks) {
    throw InvalidArgument("train_codec: need at least " + std::to_string(config.min_masks) + " masks, got " +
                          std::to_string(masks.size()));
  }
  if (config.epochs < 1 || config.batch_size < 1) throw InvalidArgument("train_codec: epochs and batch size must be positive");

  auto codec = std::make_unique<ConvCodec>(config.codec, mix_seed(config.seed, 0));
  auto params = codec->parameters();
  nn::AdamW<float> optimizer(params);
  Rng rng(mix_seed(config.seed, 1));

  std::vector<std::size_t> order(masks.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const int batches_per_epoch =
      static_cast<int>((masks.size() + static_cast<std::size_t>(config.batch_size) - 1) / config.batch_size);
  const long total_steps = static_cast<long>(batches_per_epoch) * config.epochs;
  long step = 0;
  std::vector<BinaryMask> batch;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (int b = 0; b < batches_per_epoch; ++b) {
      batch.clear();
      const std::size_t first = static_cast<std::size_t>(b) * config.batch_size;
      for (std::size_t i = first; i < std::min(order.size(), first + config.batch_size); ++i) {
        batch.push_back(masks[order[i]]);
      }
      nn::zero_grads(params);
      const double loss = codec->accumulate_gradients(batch, config.noise_sigma, config.latent_penalty, rng);
      const double lr =
          config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
      optimizer.step(params, lr);
      ++step;
      epoch_loss += loss;
    }
    result.epoch_loss.push_back(epoch_loss / batches_per_epoch);
  }
  result.report = roundtrip_report(*codec, masks);
  result.codec = std::move(codec);
  return result;
}

}  // namespace changeflow
