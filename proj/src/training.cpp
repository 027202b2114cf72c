#include "changeflow/training.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace changeflow {

void FlowConfig::validate() const {
  auto fail = [](const std::string& what) { throw InvalidArgument("flow config: " + what); };
  if (steps < 1) fail("steps must be at least 1");
  if (repetitions < 1) fail("repetitions must be at least 1");
  if (!(threshold > 0.0 && threshold < 1.0)) fail("threshold must lie in (0, 1)");
  if (epochs < 1) fail("epochs must be at least 1");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (image_size < EncoderConfig::kDownsample || image_size % EncoderConfig::kDownsample != 0) {
    fail("image_size must be a positive multiple of 8");
  }
  if (feature_channels < 1 || encoder_channels < 1) fail("channel counts must be positive");
  if (cond.norm == NormMode::layer_norm && feature_channels < 2) fail("layer_norm needs at least 2 feature channels");
  if (!(grad_clip > 0.0)) fail("grad_clip must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  VelocityModelConfig v;
  v.width = model_width;
  v.depth = model_depth;
  v.heads = model_heads;
  v.time_freq_dim = time_freq_dim;
  v.validate();
}

nlohmann::json to_json(const FlowConfig& c) {
  return {{"steps", c.steps},
          {"repetitions", c.repetitions},
          {"threshold", c.threshold},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"t_sampling", to_string(c.t_sampling)},
          {"diff_mode", to_string(c.cond.diff)},
          {"norm_mode", to_string(c.cond.norm)},
          {"resize_mode", to_string(c.cond.resize)},
          {"seed", c.seed},
          {"image_size", c.image_size},
          {"feature_channels", c.feature_channels},
          {"encoder_channels", c.encoder_channels},
          {"model_width", c.model_width},
          {"model_depth", c.model_depth},
          {"model_heads", c.model_heads},
          {"time_freq_dim", c.time_freq_dim},
          {"grad_clip", c.grad_clip},
          {"weight_decay", c.weight_decay},
          {"augment", c.augment}};
}

FlowConfig flow_config_from_json(const nlohmann::json& j, FlowConfig c) {
  if (!j.is_object()) throw InvalidArgument("flow config must be an object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "steps") c.steps = value.get<int>();
      else if (key == "repetitions") c.repetitions = value.get<int>();
      else if (key == "threshold") c.threshold = value.get<double>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "t_sampling") c.t_sampling = parse_time_sampling(value.get<std::string>());
      else if (key == "diff_mode") c.cond.diff = parse_diff_mode(value.get<std::string>());
      else if (key == "norm_mode") c.cond.norm = parse_norm_mode(value.get<std::string>());
      else if (key == "resize_mode") c.cond.resize = parse_resize_mode(value.get<std::string>());
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "image_size") c.image_size = value.get<int>();
      else if (key == "feature_channels") c.feature_channels = value.get<int>();
      else if (key == "encoder_channels") c.encoder_channels = value.get<int>();
      else if (key == "model_width") c.model_width = value.get<int>();
      else if (key == "model_depth") c.model_depth = value.get<int>();
      else if (key == "model_heads") c.model_heads = value.get<int>();
      else if (key == "time_freq_dim") c.time_freq_dim = value.get<int>();
      else if (key == "grad_clip") c.grad_clip = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "augment") c.augment = value.get<bool>();
      else throw InvalidArgument("unknown flow key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument("flow key '" + key + "': " + e.what());
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Model bundle

namespace {

EncoderConfig encoder_config(const FlowConfig& c) {
  EncoderConfig e;
  e.image_size = c.image_size;
  e.base_channels = c.encoder_channels;
  e.feature_channels = c.feature_channels;
  return e;
}

nn::AdamWOptions<float> optimizer_options(const FlowConfig& c) {
  nn::AdamWOptions<float> o;
  o.weight_decay = c.weight_decay;
  return o;
}

}  // namespace

Shape ChangeFlowModel::latent_shape() const { return codec->latent_shape(config.image_size, config.image_size); }

VelocityModelConfig ChangeFlowModel::velocity_config() const {
  const Shape ls = latent_shape();
  VelocityModelConfig v;
  v.latent_channels = ls.channels;
  v.cond_channels = config.cond.output_channels(config.feature_channels);
  v.width = config.model_width;
  v.depth = config.model_depth;
  v.heads = config.model_heads;
  v.time_freq_dim = config.time_freq_dim;
  v.grid_height = ls.height;
  v.grid_width = ls.width;
  return v;
}

ChangeFlowModel ChangeFlowModel::create(const FlowConfig& config, std::shared_ptr<const MaskCodec> codec) {
  config.validate();
  if (!codec) throw InvalidArgument("flow model: a codec is required");
  ChangeFlowModel m;
  m.config = config;
  m.codec = std::move(codec);
  const Shape ls = m.latent_shape();
  m.conditioning =
      ConditioningNetwork<float>(encoder_config(config), config.cond, ls.height, ls.width, mix_seed(config.seed, 1));
  m.velocity = VelocityNet<float>(m.velocity_config(), mix_seed(config.seed, 2));
  return m;
}

TrainState TrainState::create(const FlowConfig& config, std::shared_ptr<const MaskCodec> codec) {
  TrainState s;
  s.model = ChangeFlowModel::create(config, std::move(codec));
  s.velocity_optimizer = nn::AdamW<float>(s.model.velocity.parameters(), optimizer_options(config));
  s.conditioning_optimizer = nn::AdamW<float>(s.model.conditioning.parameters(), optimizer_options(config));
  s.rng = Rng(mix_seed(config.seed, 3));
  return s;
}

double cosine_lr(long step, long total_steps, double base_lr) {
  if (step < 0) throw InvalidArgument("cosine_lr: negative step");
  if (total_steps < 1) throw InvalidArgument("cosine_lr: total_steps must be positive");
  const long s = std::min(step, total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(s) / static_cast<double>(total_steps)));
}

// ---------------------------------------------------------------------------
// Steps

namespace {

/// [x_t | cond] rows for a batch of latents, one conditioning block per latent.
nn::Matrix<float> join_tokens(const LatentBatch& x_t, const nn::Matrix<float>& cond) {
  const Shape& s = x_t.shape();
  const Eigen::Index rows = static_cast<Eigen::Index>(x_t.count()) * static_cast<Eigen::Index>(s.pixels());
  if (cond.rows() != rows) throw InvalidShape("flow tokens: conditioning rows do not match the latent batch");
  nn::Matrix<float> tokens(rows, s.channels + cond.cols());
  tokens.leftCols(s.channels) = Eigen::Map<const nn::Matrix<float>>(x_t.data(), rows, s.channels);
  tokens.rightCols(cond.cols()) = cond;
  return tokens;
}

LatentBatch interpolate_batch(const LatentBatch& x0, const LatentBatch& x1, std::span<const double> times) {
  LatentBatch x_t(x0.count(), x0.shape());
  const std::size_t per = x0.shape().size();
  for (int n = 0; n < x0.count(); ++n) {
    const float t = static_cast<float>(times[n]);
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) x_t.data()[i] = (1.0f - t) * x0.data()[i] + t * x1.data()[i];
  }
  return x_t;
}

nn::Matrix<float> velocity_target(const LatentBatch& x0, const LatentBatch& x1) {
  const Eigen::Index rows = static_cast<Eigen::Index>(x0.count()) * static_cast<Eigen::Index>(x0.shape().pixels());
  const int c = x0.shape().channels;
  return Eigen::Map<const nn::Matrix<float>>(x1.data(), rows, c) - Eigen::Map<const nn::Matrix<float>>(x0.data(), rows, c);
}

}  // namespace

double batch_rf_loss(const VelocityNet<float>& net, const LatentBatch& x0, const LatentBatch& x1,
                     std::span<const double> times, const nn::Matrix<float>& cond) {
  require_same_shape(x0.shape(), x1.shape(), "rf loss");
  if (x0.count() != x1.count() || times.size() != static_cast<std::size_t>(x0.count())) {
    throw InvalidShape("rf loss: batch sizes differ");
  }
  const auto x_t = interpolate_batch(x0, x1, times);
  const nn::Matrix<float> v = net.forward(join_tokens(x_t, cond), times, nullptr);
  return (v - velocity_target(x0, x1)).cast<double>().squaredNorm() / static_cast<double>(v.size());
}

StepReport train_step(TrainState& state, std::span<const ChangeSample> batch, double lr) {
  if (batch.empty()) throw InvalidArgument("train_step: empty batch");
  auto& model = state.model;
  const int count = static_cast<int>(batch.size());
  const Shape ls = model.latent_shape();

  std::vector<BinaryMask> masks;
  std::vector<Image> t1, t2;
  for (const auto& s : batch) {
    masks.push_back(s.mask);
    t1.push_back(s.pair.t1);
    t2.push_back(s.pair.t2);
  }
  // The codec is const here: no gradient reaches it.
  const LatentBatch x1 = model.codec->encode_batch(masks);
  if (x1.shape() != ls) throw InvalidShape("train_step: codec latent shape differs from the model's");

  StepReport report;
  report.lr = lr;
  LatentBatch x0(count, ls);
  for (int n = 0; n < count; ++n) {
    const std::uint64_t seed = state.rng();
    report.noise_seeds.push_back(seed);
    x0.set(n, sample_initial_noise(ls, seed));
    report.times.push_back(sample_timestep(model.config.t_sampling, state.rng).value());
  }
  const LatentBatch x_t = interpolate_batch(x0, x1, report.times);

  typename ConditioningNetwork<float>::Cache cond_cache;
  const nn::Matrix<float> cond =
      model.conditioning.forward(images_to_activation(t1), images_to_activation(t2), &cond_cache);
  typename VelocityNet<float>::Cache vel_cache;
  const nn::Matrix<float> v = model.velocity.forward(join_tokens(x_t, cond), report.times, &vel_cache);

  const nn::Matrix<float> residual = v - velocity_target(x0, x1);
  report.loss = residual.cast<double>().squaredNorm() / static_cast<double>(residual.size());
  if (!std::isfinite(report.loss)) {
    std::ostringstream msg;
    msg << "train_step: non-finite loss at step " << state.step << "; t =";
    for (double t : report.times) msg << ' ' << t;
    msg << "; ids =";
    for (const auto& s : batch) msg << ' ' << s.id;
    throw NumericError(msg.str(), static_cast<int>(state.step));
  }

  auto vparams = model.velocity.parameters();
  auto cparams = model.conditioning.parameters();
  nn::zero_grads(vparams);
  nn::zero_grads(cparams);
  const nn::Matrix<float> dv = residual * static_cast<float>(2.0 / static_cast<double>(residual.size()));
  const nn::Matrix<float> dtokens = model.velocity.backward(vel_cache, dv);
  model.conditioning.backward(cond_cache, dtokens.rightCols(cond.cols()));

  report.grad_norm = std::sqrt(nn::grad_norm_squared(vparams) + nn::grad_norm_squared(cparams));
  if (report.grad_norm > model.config.grad_clip) {
    const float scale = static_cast<float>(model.config.grad_clip / report.grad_norm);
    for (auto* p : vparams) p->grad *= scale;
    for (auto* p : cparams) p->grad *= scale;
  }
  state.velocity_optimizer.step(vparams, lr);
  state.conditioning_optimizer.step(cparams, lr / 2.0);
  ++state.step;
  state.loss_history.push_back(report.loss);
  return report;
}

void train(TrainState& state, std::span<const ChangeSample> samples, const TrainOptions& options) {
  if (samples.empty()) throw InvalidArgument("train: dataset is empty");
  const FlowConfig& config = state.model.config;
  const long batches = static_cast<long>((samples.size() + config.batch_size - 1) / config.batch_size);
  const long total_steps = batches * config.epochs;

  std::ofstream csv;
  if (!options.loss_csv.empty()) {
    const bool append = state.epoch > 0 && std::filesystem::exists(options.loss_csv);
    if (options.loss_csv.has_parent_path()) std::filesystem::create_directories(options.loss_csv.parent_path());
    csv.open(options.loss_csv, append ? std::ios::app : std::ios::trunc);
    if (!csv) throw Error("cannot write " + options.loss_csv.string());
    if (!append) csv << "epoch,step,loss,lr\n";
  }
  if (!options.checkpoint.empty() && options.checkpoint.has_parent_path()) {
    std::filesystem::create_directories(options.checkpoint.parent_path());
  }

  std::vector<std::size_t> order(samples.size());
  std::vector<ChangeSample> batch;
  while (state.epoch < config.epochs) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), state.rng);
    double sum = 0.0;
    double lr = 0.0;
    for (long b = 0; b < batches; ++b) {
      batch.clear();
      const std::size_t first = static_cast<std::size_t>(b) * config.batch_size;
      const std::size_t last = std::min(samples.size(), first + config.batch_size);
      for (std::size_t i = first; i < last; ++i) {
        const auto& s = samples[order[i]];
        batch.push_back(config.augment ? augment(s, state.rng) : s);
      }
      lr = cosine_lr(state.step, total_steps, config.learning_rate);
      sum += train_step(state, batch, lr).loss;
    }
    const double mean = sum / static_cast<double>(batches);
    state.epoch_loss.push_back(mean);
    ++state.epoch;
    if (csv.is_open()) {
      csv << state.epoch << ',' << state.step << ',' << mean << ',' << lr << '\n';
      csv.flush();
    }
    if (!options.checkpoint.empty()) save_train_state(state, options.checkpoint);
    if (options.on_epoch) options.on_epoch(state.epoch, mean);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kVelocityPrefix = "velocity.";
constexpr const char* kConditioningPrefix = "cond.";

void export_moments(const nn::ParamList<float>& params, nn::AdamW<float>& opt, const std::string& prefix,
                    std::vector<TensorRecord>& out) {
  auto& m = opt.first_moments();
  auto& v = opt.second_moments();
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (int which = 0; which < 2; ++which) {
      const auto& mat = which == 0 ? m[i] : v[i];
      TensorRecord t;
      t.name = prefix + (which == 0 ? "m." : "v.") + params[i]->name;
      t.rows = static_cast<int>(mat.rows());
      t.cols = static_cast<int>(mat.cols());
      t.values.assign(mat.data(), mat.data() + mat.size());
      out.push_back(std::move(t));
    }
  }
}

void import_moments(const nn::ParamList<float>& params, nn::AdamW<float>& opt, const std::string& prefix,
                    const Checkpoint& ckpt) {
  auto& m = opt.first_moments();
  auto& v = opt.second_moments();
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (int which = 0; which < 2; ++which) {
      auto& mat = which == 0 ? m[i] : v[i];
      const auto& t = ckpt.find(prefix + (which == 0 ? "m." : "v.") + params[i]->name);
      if (t.rows != mat.rows() || t.cols != mat.cols()) throw LoadError("checkpoint: moment shape mismatch for " + t.name);
      mat = Eigen::Map<const nn::Matrix<float>>(t.values.data(), t.rows, t.cols);
    }
  }
}

}  // namespace

Checkpoint model_checkpoint(const ChangeFlowModel& model) {
  auto& m = const_cast<ChangeFlowModel&>(model);
  Checkpoint ckpt;
  const Checkpoint codec = model.codec->to_checkpoint();
  ckpt.meta = {{"kind", "flow"},
               {"config", to_json(model.config)},
               {"seed", model.config.seed},
               {"codec", codec.meta},
               {"codec_source", model.codec_source}};
  export_params(m.velocity.parameters(), ckpt.tensors, kVelocityPrefix);
  export_params(m.conditioning.parameters(), ckpt.tensors, kConditioningPrefix);
  for (const auto& t : codec.tensors) ckpt.tensors.push_back(t);
  return ckpt;
}

Checkpoint train_checkpoint(const TrainState& state) {
  auto& s = const_cast<TrainState&>(state);
  Checkpoint ckpt = model_checkpoint(state.model);
  std::ostringstream rng_state;
  rng_state << state.rng;
  ckpt.meta["train"] = {{"step", state.step},
                        {"epoch", state.epoch},
                        {"loss_history", state.loss_history},
                        {"epoch_loss", state.epoch_loss},
                        {"rng", rng_state.str()},
                        {"velocity_optimizer_steps", state.velocity_optimizer.steps()},
                        {"conditioning_optimizer_steps", state.conditioning_optimizer.steps()}};
  export_moments(s.model.velocity.parameters(), s.velocity_optimizer, "opt.velocity.", ckpt.tensors);
  export_moments(s.model.conditioning.parameters(), s.conditioning_optimizer, "opt.cond.", ckpt.tensors);
  return ckpt;
}

void save_model(const ChangeFlowModel& model, const std::filesystem::path& path) {
  write_checkpoint(path, model_checkpoint(model));
}

void save_train_state(const TrainState& state, const std::filesystem::path& path) {
  // Write then rename so an interrupted run never leaves a torn checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  write_checkpoint(tmp, train_checkpoint(state));
  std::filesystem::rename(tmp, path);
}

ChangeFlowModel model_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.meta.value("kind", "") != "flow") throw LoadError("checkpoint does not hold a flow model");
  Checkpoint codec;
  codec.meta = ckpt.meta.at("codec");
  for (const auto& t : ckpt.tensors) {
    if (t.name.rfind("codec.", 0) == 0) codec.tensors.push_back(t);
  }
  FlowConfig config;
  try {
    config = flow_config_from_json(ckpt.meta.at("config"));
  } catch (const InvalidArgument& e) {
    throw LoadError(std::string("checkpoint config: ") + e.what());
  }
  ChangeFlowModel model = ChangeFlowModel::create(config, codec_from_checkpoint(codec));
  model.codec_source = ckpt.meta.value("codec_source", "");
  import_params(model.velocity.parameters(), ckpt, kVelocityPrefix);
  import_params(model.conditioning.parameters(), ckpt, kConditioningPrefix);
  return model;
}

ChangeFlowModel load_model(const std::filesystem::path& path) { return model_from_checkpoint(read_checkpoint(path)); }

TrainState load_train_state(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (!ckpt.meta.contains("train")) throw LoadError(path.string() + ": no optimiser state to resume from");
  TrainState s;
  s.model = model_from_checkpoint(ckpt);
  const FlowConfig& config = s.model.config;
  s.velocity_optimizer = nn::AdamW<float>(s.model.velocity.parameters(), optimizer_options(config));
  s.conditioning_optimizer = nn::AdamW<float>(s.model.conditioning.parameters(), optimizer_options(config));
  const auto& train = ckpt.meta.at("train");
  s.step = train.at("step").get<long>();
  s.epoch = train.at("epoch").get<int>();
  s.loss_history = train.at("loss_history").get<std::vector<double>>();
  s.epoch_loss = train.at("epoch_loss").get<std::vector<double>>();
  std::istringstream rng_state(train.at("rng").get<std::string>());
  rng_state >> s.rng;
  s.velocity_optimizer.set_steps(train.at("velocity_optimizer_steps").get<long>());
  s.conditioning_optimizer.set_steps(train.at("conditioning_optimizer_steps").get<long>());
  import_moments(s.model.velocity.parameters(), s.velocity_optimizer, "opt.velocity.", ckpt);
  import_moments(s.model.conditioning.parameters(), s.conditioning_optimizer, "opt.cond.", ckpt);
  return s;
}

}  // namespace changeflow
