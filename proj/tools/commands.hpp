#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "changeflow/config.hpp"
#include "changeflow/evaluation.hpp"
#include "changeflow/inference.hpp"

namespace changeflow::cli {

namespace fs = std::filesystem;

/// Independent seed streams derived from the single --seed.
enum class Stage : std::uint64_t { generator = 101, codec = 102, flow = 103, inference = 104 };
std::uint64_t stage_seed(std::uint64_t master, Stage stage);

/// Applies a master seed to every stage of a run config.
void apply_master_seed(RunConfig& config, std::uint64_t master);

/// --seed if given, else CHANGEFLOW_SEED if set, else nothing.
std::optional<std::uint64_t> resolve_seed(std::optional<std::uint64_t> flag);

/// Loads `path` if non-empty, otherwise defaults.
RunConfig load_config_or_default(const fs::path& path);

// ---------------------------------------------------------------------------

struct GenDataOptions {
  RunConfig config;
  fs::path out;
  int count = 2000;
};

/// Writes the split directories and manifest; returns the samples.
std::vector<ChangeSample> cmd_gen_data(const GenDataOptions& options);

struct TrainCodecOptions {
  RunConfig config;
  fs::path data;
  fs::path out;
  /// Held-out masks for the report (validation split, first `report_masks`).
  int report_masks = 200;
};

struct TrainCodecSummary {
  RoundTripReport train;
  RoundTripReport held_out;
  std::vector<double> epoch_loss;
  double seconds = 0.0;
};

TrainCodecSummary cmd_train_codec(const TrainCodecOptions& options);

struct TrainCommandOptions {
  RunConfig config;
  fs::path data;
  /// Codec checkpoint, or "identity".
  std::string codec;
  fs::path out;
  fs::path loss_csv;
  /// Continue from this training checkpoint instead of starting fresh.
  fs::path resume;
  bool verbose = true;
};

TrainState cmd_train(const TrainCommandOptions& options);

/// Ensembles for a whole split with pooled metrics at threshold theta.
struct SplitPrediction {
  std::vector<std::string> ids;
  std::vector<EnsembleResult> results;
  std::vector<BinaryMask> binary;
  std::vector<BinaryMask> truth;
  std::vector<IntermediateTrace> traces;
  MetricsReport metrics;

  std::vector<SoftMask> confidences() const;
};

SplitPrediction predict_split(const ChangeFlowModel& model, std::span<const ChangeSample> samples, int steps,
                              int repetitions, std::uint64_t master_seed, double theta, bool trace = false);

/// Scores a prediction from the first `repetitions` members of each stack.
MetricsReport score_prefix(const SplitPrediction& prediction, int repetitions, double theta);

struct InferOptions {
  fs::path model;
  fs::path out;
  /// Either a single pair ...
  fs::path t1, t2;
  /// ... or a dataset split.
  fs::path data;
  Split split = Split::test;
  std::optional<int> steps;
  std::optional<int> repetitions;
  std::optional<double> threshold;
  std::uint64_t seed = 0;
  bool trace = false;
};

/// Writes mask/<id>.png, conf/<id>.png, optional trace/<id>/step_NN.png and
/// sidecar.json under `out`.
void cmd_infer(const InferOptions& options);

struct EvalOptions {
  fs::path pred;
  /// Optional confidence PNGs for error-AUROC and the threshold sweep.
  fs::path conf;
  fs::path gt;
  fs::path out;
  int min_area = kDefaultMinArea;
  Connectivity connectivity = Connectivity::four;
  std::vector<double> thetas = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
};

struct EvalSummary {
  MetricsReport metrics;
  CoherenceReport coherence;
  std::optional<double> error_auroc;
  std::vector<SweepRow> sweep;
};

/// Writes metrics.csv, coherence.csv and, with confidences, sweep.csv.
EvalSummary cmd_eval(const EvalOptions& options);

struct AblateOptions {
  RunConfig config;
  fs::path data;
  std::string codec;
  fs::path out_csv;
  /// "diff", "norm", "t_sampling" or "resize".
  std::string axis = "diff";
  /// Values along the axis; empty means every value.
  std::vector<std::string> values;
};

struct AblationRow {
  std::string axis;
  std::string value;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double final_loss = 0.0;
};

std::vector<AblationRow> cmd_ablate(const AblateOptions& options);

struct BenchOptions {
  fs::path model;
  fs::path data;
  Split split = Split::test;
  fs::path out_csv;
  std::vector<int> step_values = {1, 2, 5, 10, 20};
  int fixed_repetitions = 5;
  std::vector<int> repetition_values = {1, 3, 5, 10};
  int fixed_steps = 10;
  int timed_runs = 100;
  int warmup_runs = 20;
  /// Pairs used for F1; 0 means the whole split.
  int eval_pairs = 0;
  std::uint64_t seed = 0;
};

struct BenchRow {
  std::string sweep;
  int steps = 0;
  int repetitions = 0;
  double median_ms = 0.0;
  double f1 = 0.0;
};

std::vector<BenchRow> cmd_bench(const BenchOptions& options);

struct SweepOptions {
  fs::path model;
  fs::path data;
  Split split = Split::val;
  fs::path out_csv;
  std::vector<double> thetas = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::optional<int> steps;
  std::optional<int> repetitions;
  std::uint64_t seed = 0;
};

struct SweepSummary {
  std::vector<SweepRow> rows;
  SweepRow best;
  /// Sweep of the discretise-then-vote rule, min votes 1 .. N.
  std::vector<SweepRow> vote_rows;
};

SweepSummary cmd_sweep(const SweepOptions& options);

/// Parses argv and dispatches; returns the process exit code.
int run(int argc, char** argv);

}  // namespace changeflow::cli
