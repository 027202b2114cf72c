#include <doctest.h>

#include <fstream>

#include "changeflow/latent_codec.hpp"
#include "changeflow/nn/adamw.hpp"
#include "support.hpp"

using namespace changeflow;
using testing::random_mask;
using testing::scratch_dir;

namespace {

BinaryMask square_mask(int size, int y0, int x0, int side) {
  BinaryMask m(size, size);
  for (int y = y0; y < y0 + side; ++y)
    for (int x = x0; x < x0 + side; ++x) m.set(y, x, true);
  return m;
}

}  // namespace

TEST_CASE("identity codec latents are the mask rescaled to +-1 on three channels") {
  const IdentityCodec codec;
  const BinaryMask m = square_mask(8, 2, 3, 3);
  const Latent z = codec.encode(m);
  CHECK(z.shape() == Shape{8, 8, 3});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) CHECK(z(y, x, c) == (m(y, x) ? 1.0f : -1.0f));
}

TEST_CASE("identity codec round-trips every mask exactly") {
  const IdentityCodec codec;
  Rng rng(1);
  std::vector<BinaryMask> masks;
  for (int i = 0; i < 20; ++i) masks.push_back(random_mask(16, 16, 0.1 * (i % 10), rng));
  for (const auto& m : masks) {
    const SoftMask s = codec.decode(codec.encode(m));
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) CHECK(s(y, x, 0) == static_cast<float>(m(y, x)));
  }
  const auto report = roundtrip_report(codec, masks);
  REQUIRE(report.f1.has_value());
  CHECK(*report.f1 == 1.0);
  CHECK(report.mae == 0.0);
}

TEST_CASE("decoding clamps out-of-range latents into [0, 1]") {
  const IdentityCodec codec;
  Latent z(Shape{2, 2, 3});
  z(0, 0, 0) = z(0, 0, 1) = z(0, 0, 2) = 5.0f;
  z(0, 1, 0) = z(0, 1, 1) = z(0, 1, 2) = -5.0f;
  z(1, 0, 0) = 1.0f;
  z(1, 0, 1) = -1.0f;
  z(1, 0, 2) = 0.0f;
  const SoftMask s = codec.decode(z);
  CHECK(s(0, 0, 0) == 1.0f);
  CHECK(s(0, 1, 0) == 0.0f);
  CHECK(s(1, 0, 0) == doctest::Approx(0.5f));
  CHECK(s(1, 1, 0) == doctest::Approx(0.5f));
}

TEST_CASE("conv codec shapes follow the spatial factor") {
  const ConvCodec codec(ConvCodecConfig{}, 1);
  CHECK(codec.latent_shape(64, 64) == Shape{16, 16, 4});
  CHECK_THROWS_AS(codec.latent_shape(63, 64), InvalidShape);
  CHECK_THROWS_AS(codec.encode(BinaryMask(10, 12)), InvalidShape);
  const Latent z = codec.encode(square_mask(64, 10, 10, 20));
  CHECK(z.shape() == Shape{16, 16, 4});
}

TEST_CASE("conv codec decodes arbitrary latents into [0, 1]") {
  const ConvCodec codec(ConvCodecConfig{}, 2);
  Rng rng(3);
  Latent z(Shape{16, 16, 4});
  for (float& v : z.values()) v = static_cast<float>(10.0 * standard_normal(rng));
  const SoftMask s = codec.decode(z);
  CHECK(s.shape() == Shape{64, 64, 1});
  for (float v : s.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("batched and single-item coding agree") {
  const ConvCodec codec(ConvCodecConfig{}, 4);
  Rng rng(5);
  std::vector<BinaryMask> masks{random_mask(16, 16, 0.3, rng), random_mask(16, 16, 0.6, rng)};
  const auto batch = codec.encode_batch(masks);
  for (int i = 0; i < 2; ++i) {
    const Latent one = codec.encode(masks[i]);
    const Latent from_batch = batch.item(i);
    for (std::size_t k = 0; k < one.size(); ++k)
      CHECK(one.values()[k] == doctest::Approx(from_batch.values()[k]).epsilon(1e-5));
  }
}

TEST_CASE("codec checkpoints round-trip") {
  const auto dir = scratch_dir("codec_ckpt");
  const ConvCodec codec(ConvCodecConfig{3, 8}, 6);
  save_codec(codec, dir / "codec.ckpt");
  const auto loaded = load_codec(dir / "codec.ckpt");
  CHECK(loaded->kind() == "conv");
  CHECK(loaded->latent_channels() == 3);
  Rng rng(7);
  const BinaryMask m = random_mask(32, 32, 0.2, rng);
  CHECK(loaded->encode(m) == codec.encode(m));
  CHECK(loaded->decode(codec.encode(m)) == codec.decode(codec.encode(m)));

  save_codec(IdentityCodec{}, dir / "id.ckpt");
  CHECK(load_codec(dir / "id.ckpt")->kind() == "identity");
}

TEST_CASE("loading a missing or corrupt codec fails with a load error") {
  const auto dir = scratch_dir("codec_bad");
  CHECK_THROWS_AS(load_codec(dir / "absent.ckpt"), LoadError);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(load_codec(dir / "junk.ckpt"), LoadError);
}

TEST_CASE("round-trip scores on known cases") {
  const BinaryMask truth = square_mask(4, 0, 0, 2);
  SoftMask recon(Shape{4, 4, 1});
  recon(0, 0, 0) = 1.0f;
  recon(0, 1, 0) = 0.6f;
  recon(3, 3, 0) = 0.7f;
  const auto r = roundtrip_scores(std::span(&truth, 1), std::span(&recon, 1));
  // tp 2, fp 1, fn 2: precision 2/3, recall 1/2.
  REQUIRE(r.f1.has_value());
  CHECK(*r.f1 == doctest::Approx(2.0 * (2.0 / 3.0) * 0.5 / (2.0 / 3.0 + 0.5)));
  CHECK(r.mae == doctest::Approx((0.0 + 0.4 + 1.0 + 1.0 + 0.7) / 16.0));
  const BinaryMask empty(4, 4);
  const SoftMask zeros(Shape{4, 4, 1});
  CHECK_FALSE(roundtrip_scores(std::span(&empty, 1), std::span(&zeros, 1)).f1.has_value());
}

TEST_CASE("codec training rejects too few masks") {
  std::vector<BinaryMask> masks(50, BinaryMask(16, 16));
  CHECK_THROWS_AS(train_codec(masks, CodecTrainConfig{}), InvalidArgument);
  CHECK_THROWS_AS(train_codec({}, CodecTrainConfig{}), InvalidArgument);
}

TEST_CASE("codec gradient steps reduce reconstruction error on a fixed batch") {
  ConvCodec codec(ConvCodecConfig{4, 8}, 8);
  Rng data_rng(9);
  std::vector<BinaryMask> masks;
  for (int i = 0; i < 8; ++i) masks.push_back(square_mask(16, i, 2 * (i % 3), 6));
  auto params = codec.parameters();
  nn::AdamW<float> opt(params, {});
  Rng rng(10);
  nn::zero_grads(params);
  const double first = codec.accumulate_gradients(masks, 0.0, 0.0, rng);
  double last = first;
  for (int i = 0; i < 150; ++i) {
    opt.step(params, 3e-3);
    nn::zero_grads(params);
    last = codec.accumulate_gradients(masks, 0.0, 0.0, rng);
  }
  CHECK(last < 0.25 * first);
}
