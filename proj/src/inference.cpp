#include "changeflow/inference.hpp"

#include <algorithm>

namespace changeflow {

namespace {

/// Euler integration of `seeds.size()` latents; latent n is conditioned on
/// block cond_index[n] of `cond` (rows per block = latent pixels). When
/// `trace_items` is non-empty, those latents are decoded after every step.
LatentBatch integrate_batch(const ChangeFlowModel& model, const nn::Matrix<float>& cond,
                            std::span<const int> cond_index, std::span<const std::uint64_t> seeds, int steps,
                            std::span<const int> trace_items, std::vector<IntermediateTrace>* traces) {
  if (steps < 1) throw InvalidArgument("inference: steps must be at least 1");
  const Shape ls = model.latent_shape();
  const int count = static_cast<int>(seeds.size());
  const Eigen::Index pixels = static_cast<Eigen::Index>(ls.pixels());

  LatentBatch x(count, ls);
  for (int n = 0; n < count; ++n) x.set(n, sample_initial_noise(ls, seeds[n]));

  nn::Matrix<float> tokens(count * pixels, ls.channels + cond.cols());
  for (int n = 0; n < count; ++n) {
    tokens.block(n * pixels, ls.channels, pixels, cond.cols()) = cond.middleRows(cond_index[n] * pixels, pixels);
  }
  std::vector<double> times(static_cast<std::size_t>(count));

  auto field = [&](const LatentBatch& state, TimeStep t) {
    tokens.leftCols(ls.channels) = Eigen::Map<const nn::Matrix<float>>(state.data(), count * pixels, ls.channels);
    std::fill(times.begin(), times.end(), t.value());
    const nn::Matrix<float> v = model.velocity.forward(tokens, times, nullptr);
    LatentBatch out(count, ls);
    std::copy_n(v.data(), v.size(), out.data());
    return out;
  };
  auto on_step = [&](int, const LatentBatch& state) {
    if (trace_items.empty()) return;
    LatentBatch picked(static_cast<int>(trace_items.size()), ls);
    for (std::size_t i = 0; i < trace_items.size(); ++i) picked.set(static_cast<int>(i), state.item(trace_items[i]));
    auto decoded = model.codec->decode_batch(picked);
    for (std::size_t i = 0; i < decoded.size(); ++i) (*traces)[i].steps.push_back(std::move(decoded[i]));
  };
  return integrate_euler(std::move(x), field, steps, on_step);
}

nn::Matrix<float> conditioning_rows(const ConditioningSignal& cond) {
  return Eigen::Map<const nn::Matrix<float>>(cond.data(), static_cast<Eigen::Index>(cond.shape().pixels()),
                                             cond.channels());
}

void check_pair(const ChangeFlowModel& model, const ImagePair& pair) {
  const Shape expected{model.config.image_size, model.config.image_size, 3};
  if (pair.t1.shape() != expected || pair.t2.shape() != expected) {
    throw InvalidShape("inference: images must be " + to_string(expected) + ", got " + to_string(pair.t1.shape()) +
                       " and " + to_string(pair.t2.shape()));
  }
}

void check_conditioning(const ChangeFlowModel& model, const ConditioningSignal& cond) {
  const Shape ls = model.latent_shape();
  const Shape expected{ls.height, ls.width, model.velocity.config().cond_channels};
  if (cond.shape() != expected) {
    throw InvalidShape("inference: conditioning " + to_string(cond.shape()) + " does not match " + to_string(expected));
  }
}

}  // namespace

GenerateResult generate_from_conditioning(const ChangeFlowModel& model, const ConditioningSignal& cond, int steps,
                                          std::uint64_t seed, bool trace) {
  check_conditioning(model, cond);
  const int index[1] = {0};
  const std::uint64_t seeds[1] = {seed};
  std::vector<IntermediateTrace> traces(trace ? 1 : 0);
  const LatentBatch x = integrate_batch(model, conditioning_rows(cond), index, seeds, steps,
                                       trace ? std::span<const int>(index) : std::span<const int>(), &traces);
  GenerateResult result;
  result.mask = model.codec->decode_batch(x).front();
  if (trace) result.trace = std::move(traces.front());
  return result;
}

GenerateResult generate_mask(const ChangeFlowModel& model, const ImagePair& pair, int steps, std::uint64_t seed,
                             bool trace) {
  check_pair(model, pair);
  return generate_from_conditioning(model, compute_conditioning(model.conditioning, pair), steps, seed, trace);
}

EnsembleResult ensemble_predict(const ChangeFlowModel& model, const ImagePair& pair, int steps, int repetitions,
                                std::uint64_t master_seed, Execution execution) {
  if (repetitions < 1) throw InvalidArgument("ensemble: repetitions must be at least 1");
  check_pair(model, pair);
  const ConditioningSignal cond = compute_conditioning(model.conditioning, pair);
  EnsembleResult result;
  for (int i = 0; i < repetitions; ++i) result.stack.seeds.push_back(mix_seed(master_seed, static_cast<std::uint64_t>(i)));
  if (execution == Execution::sequential) {
    for (auto seed : result.stack.seeds) {
      result.stack.masks.push_back(generate_from_conditioning(model, cond, steps, seed).mask);
    }
  } else {
    const std::vector<int> index(static_cast<std::size_t>(repetitions), 0);
    const LatentBatch x = integrate_batch(model, conditioning_rows(cond), index, result.stack.seeds, steps, {}, nullptr);
    result.stack.masks = model.codec->decode_batch(x);
  }
  result.confidence = confidence_from_stack(result.stack.masks);
  return result;
}

std::vector<EnsembleResult> predict_pairs(const ChangeFlowModel& model, std::span<const ImagePair> pairs, int steps,
                                          int repetitions, std::uint64_t master_seed,
                                          std::vector<IntermediateTrace>* traces, int max_batch) {
  if (repetitions < 1) throw InvalidArgument("ensemble: repetitions must be at least 1");
  std::vector<std::uint64_t> rep_seeds;
  for (int i = 0; i < repetitions; ++i) rep_seeds.push_back(mix_seed(master_seed, static_cast<std::uint64_t>(i)));
  const std::size_t group = static_cast<std::size_t>(std::max(1, max_batch / repetitions));
  std::vector<EnsembleResult> results;
  results.reserve(pairs.size());
  if (traces != nullptr) traces->clear();
  for (std::size_t first = 0; first < pairs.size(); first += group) {
    const std::size_t n = std::min(group, pairs.size() - first);
    std::vector<Image> t1, t2;
    for (std::size_t i = 0; i < n; ++i) {
      check_pair(model, pairs[first + i]);
      t1.push_back(pairs[first + i].t1);
      t2.push_back(pairs[first + i].t2);
    }
    const nn::Matrix<float> cond =
        model.conditioning.forward(images_to_activation(t1), images_to_activation(t2), nullptr);
    std::vector<int> index;
    std::vector<std::uint64_t> seeds;
    std::vector<int> trace_items;
    for (std::size_t i = 0; i < n; ++i) {
      if (traces != nullptr) trace_items.push_back(static_cast<int>(index.size()));
      for (int r = 0; r < repetitions; ++r) {
        index.push_back(static_cast<int>(i));
        seeds.push_back(rep_seeds[static_cast<std::size_t>(r)]);
      }
    }
    std::vector<IntermediateTrace> group_traces(trace_items.size());
    const LatentBatch x = integrate_batch(model, cond, index, seeds, steps, trace_items, &group_traces);
    auto decoded = model.codec->decode_batch(x);
    for (std::size_t i = 0; i < n; ++i) {
      EnsembleResult r;
      r.stack.seeds = rep_seeds;
      for (int k = 0; k < repetitions; ++k) r.stack.masks.push_back(std::move(decoded[i * repetitions + k]));
      r.confidence = confidence_from_stack(r.stack.masks);
      results.push_back(std::move(r));
    }
    if (traces != nullptr) {
      for (auto& t : group_traces) traces->push_back(std::move(t));
    }
  }
  return results;
}

ConfidenceMap confidence_from_stack(std::span<const SoftMask> stack) {
  if (stack.empty()) throw InvalidShape("confidence: empty stack");
  SoftMask mean(stack.front().shape());
  for (const auto& m : stack) {
    require_same_shape(mean.shape(), m.shape(), "confidence stack");
    for (std::size_t i = 0; i < m.size(); ++i) mean.values()[i] += m.values()[i];
  }
  const float inv = 1.0f / static_cast<float>(stack.size());
  for (float& v : mean.values()) v = std::clamp(v * inv, 0.0f, 1.0f);
  return ConfidenceMap{std::move(mean)};
}

BinaryMask binarize(const SoftMask& conf, double theta) {
  if (!(theta > 0.0 && theta < 1.0)) throw InvalidArgument("binarize: threshold must lie in (0, 1)");
  if (conf.channels() != 1) throw InvalidShape("binarize: expected a single-channel map");
  std::vector<std::uint8_t> out(conf.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(conf.values()[i]) >= theta ? 1 : 0;
  return BinaryMask(conf.height(), conf.width(), std::move(out));
}

BinaryMask binarize(const ConfidenceMap& conf, double theta) { return binarize(conf.data, theta); }

BinaryMask vote_binarize(std::span<const SoftMask> stack, int min_votes) {
  if (stack.empty()) throw InvalidShape("vote: empty stack");
  const auto& first = stack.front();
  std::vector<int> votes(first.size(), 0);
  for (const auto& m : stack) {
    require_same_shape(first.shape(), m.shape(), "vote stack");
    for (std::size_t i = 0; i < m.size(); ++i) votes[i] += m.values()[i] >= 0.5f ? 1 : 0;
  }
  std::vector<std::uint8_t> out(first.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = votes[i] >= min_votes ? 1 : 0;
  return BinaryMask(first.height(), first.width(), std::move(out));
}

}  // namespace changeflow
