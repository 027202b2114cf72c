#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "changeflow/checkpoint.hpp"
#include "changeflow/conditioning.hpp"
#include "changeflow/flow_core.hpp"
#include "changeflow/latent_codec.hpp"
#include "changeflow/nn/adamw.hpp"
#include "changeflow/synth_data.hpp"
#include "changeflow/velocity_net.hpp"

namespace changeflow {

/// Everything needed to train and run the flow model. Field names match the
/// keys of the "flow" config section.
struct FlowConfig {
  /// Euler steps T at inference.
  int steps = 10;
  /// Ensemble size N.
  int repetitions = 5;
  /// Binarisation threshold on the ensemble mean.
  double threshold = 0.3;
  int epochs = 50;
  int batch_size = 32;
  /// Velocity-model learning rate; the conditioning encoder and norm use half.
  double learning_rate = 5e-4;
  TimeSampling t_sampling = TimeSampling::logit_normal;
  CondVariant cond;
  std::uint64_t seed = 0;
  int image_size = 64;
  int feature_channels = 32;
  int encoder_channels = 16;
  int model_width = 128;
  int model_depth = 4;
  int model_heads = 4;
  int time_freq_dim = 64;
  double grad_clip = 1.0;
  double weight_decay = 0.0;
  /// Random flips and rotations during training.
  bool augment = true;

  /// Throws InvalidArgument when an invariant is violated.
  void validate() const;
};

nlohmann::json to_json(const FlowConfig& config);
/// Unknown keys are rejected with InvalidArgument.
FlowConfig flow_config_from_json(const nlohmann::json& j, FlowConfig base = {});

/// Trained components: conditioning network, velocity model and the frozen
/// codec they were trained against.
struct ChangeFlowModel {
  FlowConfig config;
  ConditioningNetwork<float> conditioning;
  VelocityNet<float> velocity;
  std::shared_ptr<const MaskCodec> codec;
  /// Where the codec was loaded from, if anywhere; recorded for provenance.
  std::string codec_source;

  static ChangeFlowModel create(const FlowConfig& config, std::shared_ptr<const MaskCodec> codec);

  Shape latent_shape() const;
  VelocityModelConfig velocity_config() const;
};

/// Model, optimisers and progress counters.
struct TrainState {
  ChangeFlowModel model;
  nn::AdamW<float> velocity_optimizer;
  nn::AdamW<float> conditioning_optimizer;
  long step = 0;
  int epoch = 0;
  std::vector<double> loss_history;
  /// Mean loss of each completed epoch.
  std::vector<double> epoch_loss;
  Rng rng;

  static TrainState create(const FlowConfig& config, std::shared_ptr<const MaskCodec> codec);
};

/// lr = base * 0.5 * (1 + cos(pi * step / total)); steps past `total` get the
/// final value. Throws InvalidArgument for a negative step or total < 1.
double cosine_lr(long step, long total_steps, double base_lr);

struct StepReport {
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  std::vector<double> times;
  std::vector<std::uint64_t> noise_seeds;
};

/// One optimisation step on `batch`: encode masks, draw noise and times,
/// interpolate, predict velocity, rf loss, backpropagate into the velocity
/// model and conditioning network, clip, and step both optimisers (the
/// conditioning group at lr / 2). Randomness comes from state.rng. Throws
/// NumericError with the step, times and sample ids on a non-finite loss.
StepReport train_step(TrainState& state, std::span<const ChangeSample> batch, double lr);

/// Forward-only rf loss of the velocity model on explicit inputs; `cond` is
/// (count * h * w) x cond_channels. Mean over every entry of the batch.
double batch_rf_loss(const VelocityNet<float>& net, const LatentBatch& x0, const LatentBatch& x1,
                     std::span<const double> times, const nn::Matrix<float>& cond);

struct TrainOptions {
  /// Written after every epoch when non-empty.
  std::filesystem::path checkpoint;
  /// CSV with columns epoch,step,loss,lr, one row per epoch.
  std::filesystem::path loss_csv;
  /// Called after each epoch with (epoch, mean loss).
  std::function<void(int, double)> on_epoch;
};

/// Runs epochs from state.epoch up to config.epochs.
void train(TrainState& state, std::span<const ChangeSample> samples, const TrainOptions& options = {});

/// Serialises the model (and, for a TrainState, optimiser moments and
/// counters) together with an embedded copy of the codec.
Checkpoint model_checkpoint(const ChangeFlowModel& model);
Checkpoint train_checkpoint(const TrainState& state);
void save_model(const ChangeFlowModel& model, const std::filesystem::path& path);
void save_train_state(const TrainState& state, const std::filesystem::path& path);

ChangeFlowModel load_model(const std::filesystem::path& path);
ChangeFlowModel model_from_checkpoint(const Checkpoint& checkpoint);
/// Restores a state saved by save_train_state so training can continue.
TrainState load_train_state(const std::filesystem::path& path);

}  // namespace changeflow
