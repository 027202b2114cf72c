#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "changeflow/training.hpp"

namespace changeflow {

/// N soft masks of one pair and the noise seeds that produced them.
struct EnsembleStack {
  std::vector<SoftMask> masks;
  std::vector<std::uint64_t> seeds;
};

/// Per-pixel mean of an ensemble stack, in [0, 1].
struct ConfidenceMap {
  SoftMask data;
};

/// Decoded state after each Euler step, T entries.
struct IntermediateTrace {
  std::vector<SoftMask> steps;
};

struct GenerateResult {
  SoftMask mask;
  std::optional<IntermediateTrace> trace;
};

/// Single generation: conditioning, Euler integration from the noise drawn
/// with `seed`, decode. Throws NumericError with the step index when the state
/// becomes non-finite and InvalidShape when the pair does not fit the model.
GenerateResult generate_mask(const ChangeFlowModel& model, const ImagePair& pair, int steps, std::uint64_t seed,
                             bool trace = false);

/// As generate_mask with precomputed conditioning.
GenerateResult generate_from_conditioning(const ChangeFlowModel& model, const ConditioningSignal& cond, int steps,
                                          std::uint64_t seed, bool trace = false);

enum class Execution { batched, sequential };

struct EnsembleResult {
  EnsembleStack stack;
  ConfidenceMap confidence;
};

/// N generations with seeds mix_seed(master_seed, i), i = 0 .. N-1, sharing one
/// conditioning signal. Batched execution integrates all repetitions in one
/// model call per step.
EnsembleResult ensemble_predict(const ChangeFlowModel& model, const ImagePair& pair, int steps, int repetitions,
                                std::uint64_t master_seed, Execution execution = Execution::batched);

/// Ensembles for many pairs, batching repetitions of several pairs per model
/// call. Every pair uses the same master seed, so results equal per-pair
/// ensemble_predict calls. When `traces` is non-null it receives, per pair,
/// the decoded state of repetition 0 after each step.
std::vector<EnsembleResult> predict_pairs(const ChangeFlowModel& model, std::span<const ImagePair> pairs, int steps,
                                          int repetitions, std::uint64_t master_seed,
                                          std::vector<IntermediateTrace>* traces = nullptr, int max_batch = 40);

/// Elementwise mean; throws InvalidShape for an empty or ragged stack.
ConfidenceMap confidence_from_stack(std::span<const SoftMask> stack);

/// Changed iff conf >= theta. Throws InvalidArgument unless theta is in (0, 1).
BinaryMask binarize(const SoftMask& conf, double theta);
BinaryMask binarize(const ConfidenceMap& conf, double theta);

/// Thresholds every member at 0.5, then keeps pixels with at least
/// `min_votes` positive members.
BinaryMask vote_binarize(std::span<const SoftMask> stack, int min_votes);

}  // namespace changeflow
