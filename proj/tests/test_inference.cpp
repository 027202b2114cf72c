#include <doctest.h>

#include <bit>

#include "changeflow/inference.hpp"
#include "support.hpp"

using namespace changeflow;

namespace {

ChangeFlowModel tiny_model(std::uint64_t seed = 5) {
  FlowConfig c;
  c.image_size = 16;
  c.feature_channels = 4;
  c.encoder_channels = 4;
  c.model_width = 16;
  c.model_depth = 1;
  c.model_heads = 2;
  c.time_freq_dim = 8;
  c.seed = seed;
  auto m = ChangeFlowModel::create(c, std::make_shared<IdentityCodec>());
  // Larger output weights so the field is far from zero and samples differ.
  Rng rng(seed);
  for (auto* p : m.velocity.parameters()) testing::fill_random(p->value, rng, 0.3);
  return m;
}

ImagePair random_pair(Rng& rng, int size = 16) {
  ImagePair p{Image(Shape{size, size, 3}), Image(Shape{size, size, 3})};
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& v : p.t1.values()) v = u(rng);
  for (float& v : p.t2.values()) v = u(rng);
  return p;
}

float max_abs_diff(const SoftMask& a, const SoftMask& b) {
  float d = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.values()[i] - b.values()[i]));
  return d;
}

}  // namespace

TEST_CASE("generation is deterministic per seed") {
  const auto model = tiny_model();
  Rng rng(1);
  const auto pair = random_pair(rng);
  const auto a = generate_mask(model, pair, 5, 42);
  const auto b = generate_mask(model, pair, 5, 42);
  const auto c = generate_mask(model, pair, 5, 43);
  CHECK(a.mask == b.mask);
  CHECK_FALSE(a.mask == c.mask);
  CHECK(a.mask.shape() == Shape{16, 16, 1});
  for (float v : a.mask.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("traces hold one decoded state per step, ending at the output") {
  const auto model = tiny_model();
  Rng rng(2);
  const auto pair = random_pair(rng);
  for (int steps : {1, 4, 10}) {
    const auto r = generate_mask(model, pair, steps, 7, true);
    REQUIRE(r.trace.has_value());
    CHECK(r.trace->steps.size() == static_cast<std::size_t>(steps));
    CHECK(r.trace->steps.back() == r.mask);
  }
  CHECK_FALSE(generate_mask(model, pair, 3, 7).trace.has_value());
  CHECK_THROWS_AS(generate_mask(model, pair, 0, 7), InvalidArgument);
}

TEST_CASE("pairs that do not fit the model are rejected") {
  const auto model = tiny_model();
  Rng rng(3);
  CHECK_THROWS_AS(generate_mask(model, random_pair(rng, 32), 2, 1), InvalidShape);
}

TEST_CASE("non-finite velocities report the failing step") {
  auto model = tiny_model();
  model.velocity.parameters().back()->value(0, 0) = std::nanf("");
  Rng rng(4);
  try {
    generate_mask(model, random_pair(rng), 4, 1);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(e.step() == 0);
  }
}

TEST_CASE("batched and sequential ensembles agree") {
  const auto model = tiny_model();
  Rng rng(5);
  const auto pair = random_pair(rng);
  const auto batched = ensemble_predict(model, pair, 6, 5, 99, Execution::batched);
  const auto sequential = ensemble_predict(model, pair, 6, 5, 99, Execution::sequential);
  REQUIRE(batched.stack.masks.size() == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(batched.stack.seeds[i] == mix_seed(99, static_cast<std::uint64_t>(i)));
    CHECK(sequential.stack.seeds[i] == batched.stack.seeds[i]);
    CHECK(max_abs_diff(batched.stack.masks[i], sequential.stack.masks[i]) <= 1e-5f);
    CHECK(max_abs_diff(batched.stack.masks[i], generate_mask(model, pair, 6, batched.stack.seeds[i]).mask) <= 1e-5f);
  }
  CHECK(max_abs_diff(batched.confidence.data, sequential.confidence.data) <= 1e-5f);
}

TEST_CASE("multi-pair prediction matches per-pair ensembles") {
  const auto model = tiny_model();
  Rng rng(6);
  std::vector<ImagePair> pairs;
  for (int i = 0; i < 4; ++i) pairs.push_back(random_pair(rng));
  std::vector<IntermediateTrace> traces;
  const auto all = predict_pairs(model, pairs, 3, 3, 11, &traces, 5);
  REQUIRE(all.size() == 4);
  REQUIRE(traces.size() == 4);
  for (int i = 0; i < 4; ++i) {
    const auto single = ensemble_predict(model, pairs[i], 3, 3, 11);
    CHECK(max_abs_diff(all[i].confidence.data, single.confidence.data) <= 1e-5f);
    CHECK(traces[i].steps.size() == 3);
    CHECK(max_abs_diff(traces[i].steps.back(), single.stack.masks[0]) <= 1e-5f);
  }
}

TEST_CASE("confidence is the elementwise ensemble mean") {
  std::vector<SoftMask> stack{SoftMask(Shape{1, 2, 1}, 0.0f), SoftMask(Shape{1, 2, 1}, 1.0f),
                              SoftMask(Shape{1, 2, 1}, 0.5f)};
  stack[0](0, 1, 0) = 0.3f;
  const auto conf = confidence_from_stack(stack);
  CHECK(conf.data(0, 0, 0) == doctest::Approx(0.5f));
  CHECK(conf.data(0, 1, 0) == doctest::Approx(0.6f));
  CHECK_THROWS_AS(confidence_from_stack({}), InvalidShape);
  stack.push_back(SoftMask(Shape{2, 2, 1}));
  CHECK_THROWS_AS(confidence_from_stack(stack), InvalidShape);
}

TEST_CASE("vote counting and mean thresholding agree on every binary pattern") {
  // Pixel p of a 1 x 32 map carries bit pattern p across five members.
  const int n = 5;
  std::vector<SoftMask> stack;
  for (int m = 0; m < n; ++m) {
    SoftMask s(Shape{1, 32, 1});
    for (int p = 0; p < 32; ++p) s(0, p, 0) = ((p >> m) & 1) ? 1.0f : 0.0f;
    stack.push_back(s);
  }
  const auto conf = confidence_from_stack(stack);
  for (int k = 1; k <= n; ++k) {
    const auto votes = vote_binarize(stack, k);
    const auto mean = binarize(conf, static_cast<double>(k) / n - (k == n ? 1e-6 : 0.0));
    for (int p = 0; p < 32; ++p) {
      const bool expected = std::popcount(static_cast<unsigned>(p)) >= k;
      CAPTURE(k);
      CAPTURE(p);
      CHECK(votes(0, p) == expected);
      CHECK(mean(0, p) == expected);
    }
  }
}

TEST_CASE("binarisation is monotone in the threshold") {
  Rng rng(7);
  SoftMask conf(Shape{8, 8, 1});
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& v : conf.values()) v = u(rng);
  BinaryMask prev = binarize(conf, 0.01);
  for (double theta = 0.05; theta < 1.0; theta += 0.05) {
    const BinaryMask cur = binarize(conf, theta);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) CHECK(cur(y, x) <= prev(y, x));
    prev = cur;
  }
  CHECK(binarize(SoftMask(Shape{1, 1, 1}, 0.3f), 0.3)(0, 0) == 1);
  CHECK_THROWS_AS(binarize(conf, 0.0), InvalidArgument);
  CHECK_THROWS_AS(binarize(conf, 1.0), InvalidArgument);
}
