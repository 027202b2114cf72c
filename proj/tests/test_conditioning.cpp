#include <doctest.h>

#include <cmath>

#include "changeflow/conditioning.hpp"
#include "support.hpp"

using namespace changeflow;
using testing::fill_random;
using testing::max_fd_error;

namespace {

FeatureMap random_features(Shape s, Rng& rng) {
  FeatureMap f(s);
  std::normal_distribution<float> d(0.0f, 1.0f);
  for (float& v : f.values()) v = d(rng);
  return f;
}

Image random_image(int size, Rng& rng) {
  Image img(Shape{size, size, 3});
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  for (float& v : img.values()) v = d(rng);
  return img;
}

}  // namespace

TEST_CASE("mode names round-trip and unknown names are rejected") {
  for (auto m : {DiffMode::abs_diff, DiffMode::signed_diff, DiffMode::concat}) CHECK(parse_diff_mode(to_string(m)) == m);
  for (auto m : {NormMode::layer_norm, NormMode::l2_norm, NormMode::none}) CHECK(parse_norm_mode(to_string(m)) == m);
  for (auto m : {ResizeMode::bicubic, ResizeMode::bilinear, ResizeMode::nearest})
    CHECK(parse_resize_mode(to_string(m)) == m);
  CHECK_THROWS_AS(parse_diff_mode("ratio"), InvalidArgument);
  CHECK_THROWS_AS(parse_norm_mode("batch"), InvalidArgument);
  CHECK_THROWS_AS(parse_resize_mode("lanczos"), InvalidArgument);
}

TEST_CASE("layer norm gives each location zero mean and unit variance") {
  Rng rng(1);
  FeatureMap f = random_features(Shape{4, 4, 16}, rng);
  for (float& v : f.values()) v = 3.0f * v + 5.0f;
  const FeatureMap n = normalize_features(f, NormMode::layer_norm);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      double mean = 0.0, sq = 0.0;
      for (int c = 0; c < 16; ++c) mean += n(y, x, c);
      mean /= 16.0;
      for (int c = 0; c < 16; ++c) sq += (n(y, x, c) - mean) * (n(y, x, c) - mean);
      CHECK(std::abs(mean) < 1e-5);
      CHECK(sq / 16.0 == doctest::Approx(1.0).epsilon(1e-3));
    }
  }
}

TEST_CASE("l2 norm gives each location unit length; none is the identity") {
  Rng rng(2);
  const FeatureMap f = random_features(Shape{3, 3, 8}, rng);
  const FeatureMap n = normalize_features(f, NormMode::l2_norm);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 3; ++x) {
      double sq = 0.0;
      for (int c = 0; c < 8; ++c) sq += n(y, x, c) * n(y, x, c);
      CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
  CHECK(normalize_features(f, NormMode::none) == f);
}

TEST_CASE("absolute difference is symmetric and vanishes for identical inputs") {
  Rng rng(3);
  const FeatureMap a = random_features(Shape{4, 4, 8}, rng), b = random_features(Shape{4, 4, 8}, rng);
  const CondVariant v{};
  const auto ab = build_conditioning(a, b, v);
  CHECK(ab == build_conditioning(b, a, v));
  for (float x : ab.values()) CHECK(x >= 0.0f);
  const auto aa = build_conditioning(a, a, v);
  for (float x : aa.values()) CHECK(x == 0.0f);
}

TEST_CASE("signed difference is antisymmetric; concat doubles the channels") {
  Rng rng(4);
  const FeatureMap a = random_features(Shape{2, 2, 4}, rng), b = random_features(Shape{2, 2, 4}, rng);
  const auto ab = build_conditioning(a, b, CondVariant{DiffMode::signed_diff});
  const auto ba = build_conditioning(b, a, CondVariant{DiffMode::signed_diff});
  for (std::size_t i = 0; i < ab.size(); ++i) CHECK(ab.values()[i] == doctest::Approx(-ba.values()[i]));
  const auto cat = build_conditioning(a, b, CondVariant{DiffMode::concat});
  CHECK(cat.channels() == 8);
  CHECK(CondVariant{DiffMode::concat}.output_channels(32) == 64);
}

TEST_CASE("resize operators preserve constants and are the identity at equal size") {
  for (auto mode : {ResizeMode::bicubic, ResizeMode::bilinear, ResizeMode::nearest}) {
    CAPTURE(to_string(mode));
    for (auto [in, out] : {std::pair{8, 16}, std::pair{8, 8}, std::pair{16, 8}, std::pair{5, 7}}) {
      const auto op = resize_operator(in, in, out, out, mode);
      REQUIRE(op.rows() == out * out);
      REQUIRE(op.cols() == in * in);
      for (Eigen::Index r = 0; r < op.rows(); ++r) CHECK(op.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
      if (in == out) CHECK((op - nn::Matrix<double>::Identity(in * in, in * in)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("nearest resize picks floor(dst * in / out)") {
  const auto op = resize_operator(1, 8, 1, 16, ResizeMode::nearest);
  for (int i = 0; i < 16; ++i) CHECK(op(i, i / 2) == 1.0);
}

TEST_CASE("bilinear upsampling of a ramp stays linear away from the borders") {
  const auto op = resize_operator(1, 8, 1, 16, ResizeMode::bilinear);
  Eigen::VectorXd ramp(8);
  for (int i = 0; i < 8; ++i) ramp(i) = i;
  const Eigen::VectorXd up = op * ramp;
  for (int i = 1; i < 15; ++i) CHECK(up(i) == doctest::Approx((i + 0.5) * 0.5 - 0.5));
}

TEST_CASE("bicubic upsampling uses the a = -0.75 kernel weights") {
  // Hand-evaluated weights at phase 1/4: -0.10546875, 0.87890625, 0.26171875,
  // -0.03515625; phase 3/4 mirrors them.
  const auto op = resize_operator(1, 8, 1, 16, ResizeMode::bicubic);
  CHECK(op(3, 0) == doctest::Approx(-0.10546875).epsilon(1e-12));
  CHECK(op(3, 1) == doctest::Approx(0.87890625).epsilon(1e-12));
  CHECK(op(3, 2) == doctest::Approx(0.26171875).epsilon(1e-12));
  CHECK(op(3, 3) == doctest::Approx(-0.03515625).epsilon(1e-12));
  CHECK(op(4, 0) == doctest::Approx(-0.03515625).epsilon(1e-12));
  CHECK(op(4, 3) == doctest::Approx(-0.10546875).epsilon(1e-12));
  // Interior response to a ramp is shift-equivariant.
  Eigen::VectorXd ramp(8);
  for (int i = 0; i < 8; ++i) ramp(i) = i;
  const Eigen::VectorXd up = op * ramp;
  CHECK(up(3) == doctest::Approx(1.296875));
  for (int i = 3; i < 11; ++i) CHECK(up(i + 2) == doctest::Approx(up(i) + 1.0));
}

TEST_CASE("resize_conditioning matches the dense operator") {
  Rng rng(5);
  ConditioningSignal s(Shape{4, 4, 3});
  for (float& v : s.values()) v = static_cast<float>(standard_normal(rng));
  const auto out = resize_conditioning(s, 8, 8, ResizeMode::bicubic);
  const auto op = resize_operator(4, 4, 8, 8, ResizeMode::bicubic);
  for (int p = 0; p < 64; ++p) {
    double e = 0.0;
    for (int q = 0; q < 16; ++q) e += op(p, q) * s(q / 4, q % 4, 1);
    CHECK(out(p / 8, p % 8, 1) == doctest::Approx(e).epsilon(1e-5));
  }
}

TEST_CASE("encoder output has the documented shape and rejects wrong sizes") {
  Rng rng(6);
  const EncoderConfig cfg{};
  FeatureEncoder<float> enc(cfg, rng);
  const auto f = extract_features(enc, random_image(64, rng));
  CHECK(f.shape() == Shape{8, 8, 32});
  CHECK_THROWS_AS(extract_features(enc, random_image(32, rng)), InvalidShape);
}

TEST_CASE("desk conditioning for a pair has latent resolution") {
  const ConditioningNetwork<float> net(EncoderConfig{}, CondVariant{}, 16, 16, 3);
  Rng rng(7);
  const ImagePair pair{random_image(64, rng), random_image(64, rng)};
  const auto c = compute_conditioning(net, pair);
  CHECK(c.shape() == Shape{16, 16, 32});
  const ImagePair same{pair.t1, pair.t1};
  const auto zero = compute_conditioning(net, same);
  for (float v : zero.values()) CHECK(v == 0.0f);
}

TEST_CASE("conditioning network gradients match central differences") {
  for (auto diff : {DiffMode::abs_diff, DiffMode::signed_diff, DiffMode::concat}) {
    for (auto norm : {NormMode::layer_norm, NormMode::l2_norm, NormMode::none}) {
      CAPTURE(to_string(diff));
      CAPTURE(to_string(norm));
      Rng rng(8);
      const EncoderConfig cfg{16, 3, 4};
      ConditioningNetwork<double> net(cfg, CondVariant{diff, norm, ResizeMode::bicubic}, 4, 4, 11);
      for (auto* p : net.parameters()) fill_random(p->value, rng, 0.3);
      nn::Activation<double> t1(2, 16, 16, nn::Matrix<double>(512, 3)), t2(2, 16, 16, nn::Matrix<double>(512, 3));
      fill_random(t1.data, rng);
      fill_random(t2.data, rng);
      const auto out = net.forward(t1, t2, nullptr);
      nn::Matrix<double> r(out.rows(), out.cols());
      fill_random(r, rng);
      auto loss = [&] { return (net.forward(t1, t2, nullptr).array() * r.array()).sum(); };
      ConditioningNetwork<double>::Cache cache;
      net.forward(t1, t2, &cache);
      auto params = net.parameters();
      nn::zero_grads(params);
      net.backward(cache, r);
      // Entries far below the largest gradient are judged on an absolute
      // scale; some are exactly zero (a bias cancels in a difference).
      double largest = 0.0;
      for (auto* p : params) largest = std::max(largest, p->grad.cwiseAbs().maxCoeff());
      const double floor = 1e-3 * largest;
      for (auto* p : params) {
        CAPTURE(p->name);
        CHECK(max_fd_error(p->value, p->grad, loss, 10, rng, 1e-5, floor) < 1e-4);
      }
    }
  }
}
