#include "changeflow/velocity_net.hpp"

#include <cmath>

namespace changeflow {

void VelocityModelConfig::validate() const {
  if (latent_channels < 1 || cond_channels < 0 || input_channels() < 1) {
    throw InvalidArgument("velocity model: channel counts must be positive");
  }
  if (width < 1 || depth < 1 || heads < 1 || mlp_ratio < 1) {
    throw InvalidArgument("velocity model: width, depth, heads and mlp ratio must be positive");
  }
  if (width % heads != 0) {
    throw InvalidArgument("velocity model: heads (" + std::to_string(heads) + ") must divide width (" +
                          std::to_string(width) + ")");
  }
  if (width % 4 != 0) throw InvalidArgument("velocity model: width must be a multiple of 4");
  if (time_freq_dim < 2 || time_freq_dim % 2 != 0) {
    throw InvalidArgument("velocity model: time feature dimension must be even");
  }
  if (grid_height < 1 || grid_width < 1) throw InvalidArgument("velocity model: empty token grid");
}

std::vector<double> timestep_features(double t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw InvalidArgument("time embedding: dimension must be even");
  const int half = dim / 2;
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int k = 0; k < half; ++k) {
    const double exponent = half > 1 ? static_cast<double>(k) / (half - 1) : 0.0;
    const double freq = std::pow(kTimeMaxFrequency, exponent);
    out[2 * k] = std::sin(freq * t);
    out[2 * k + 1] = std::cos(freq * t);
  }
  return out;
}

std::vector<double> positional_table(int height, int width, int dim) {
  const int quarter = dim / 4;
  std::vector<double> table(static_cast<std::size_t>(height) * width * dim, 0.0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double* row = table.data() + (static_cast<std::size_t>(y) * width + x) * dim;
      for (int k = 0; k < quarter; ++k) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(k) / quarter);
        row[k] = std::sin(y * omega);
        row[quarter + k] = std::cos(y * omega);
        row[2 * quarter + k] = std::sin(x * omega);
        row[3 * quarter + k] = std::cos(x * omega);
      }
    }
  }
  return table;
}

namespace {

/// y = x * (1 + scale_n) + shift_n for each sample's block of rows.
template <typename T>
nn::Matrix<T> modulate(const nn::Matrix<T>& x, const nn::Matrix<T>& mod, int shift_col, int scale_col,
                       int count, int tokens) {
  const Eigen::Index width = x.cols();
  nn::Matrix<T> y(x.rows(), width);
  for (int n = 0; n < count; ++n) {
    const auto shift = mod.row(n).segment(shift_col, width);
    const auto scale = (mod.row(n).segment(scale_col, width).array() + T(1)).matrix();
    auto rows = y.middleRows(static_cast<Eigen::Index>(n) * tokens, tokens);
    rows = x.middleRows(static_cast<Eigen::Index>(n) * tokens, tokens);
    rows.array().rowwise() *= scale.array();
    rows.rowwise() += shift;
  }
  return y;
}

/// Backward of modulate: writes d shift and d scale into `dmod`, returns dx.
template <typename T>
nn::Matrix<T> modulate_backward(const nn::Matrix<T>& x, const nn::Matrix<T>& mod, const nn::Matrix<T>& dy,
                                nn::Matrix<T>& dmod, int shift_col, int scale_col, int count, int tokens) {
  const Eigen::Index width = x.cols();
  nn::Matrix<T> dx(x.rows(), width);
  for (int n = 0; n < count; ++n) {
    const auto dyn = dy.middleRows(static_cast<Eigen::Index>(n) * tokens, tokens);
    const auto xn = x.middleRows(static_cast<Eigen::Index>(n) * tokens, tokens);
    dmod.row(n).segment(shift_col, width) = dyn.colwise().sum();
    dmod.row(n).segment(scale_col, width) = (dyn.array() * xn.array()).colwise().sum().matrix();
    const auto scale = (mod.row(n).segment(scale_col, width).array() + T(1)).matrix();
    auto rows = dx.middleRows(static_cast<Eigen::Index>(n) * tokens, tokens);
    rows = dyn;
    rows.array().rowwise() *= scale.array();
  }
  return dx;
}

/// h += gate_n * branch for each sample's rows.
template <typename T>
void gated_add(nn::Matrix<T>& h, const nn::Matrix<T>& branch, const nn::Matrix<T>& mod, int gate_col,
               int count, int tokens) {
  const Eigen::Index width = h.cols();
  for (int n = 0; n < count; ++n) {
    const auto gate = mod.row(n).segment(gate_col, width);
    auto rows = h.middleRows(static_cast<Eigen::Index>(n) * tokens, tokens);
    rows.array() += branch.middleRows(static_cast<Eigen::Index>(n) * tokens, tokens).array().rowwise() *
                    gate.array();
  }
}

/// Backward of gated_add w.r.t. the branch; writes d gate into `dmod`.
template <typename T>
nn::Matrix<T> gated_add_backward(const nn::Matrix<T>& dh, const nn::Matrix<T>& branch, const nn::Matrix<T>& mod,
                                 nn::Matrix<T>& dmod, int gate_col, int count, int tokens) {
  const Eigen::Index width = dh.cols();
  nn::Matrix<T> dbranch(dh.rows(), width);
  for (int n = 0; n < count; ++n) {
    const auto dhn = dh.middleRows(static_cast<Eigen::Index>(n) * tokens, tokens);
    const auto bn = branch.middleRows(static_cast<Eigen::Index>(n) * tokens, tokens);
    dmod.row(n).segment(gate_col, width) = (dhn.array() * bn.array()).colwise().sum().matrix();
    auto rows = dbranch.middleRows(static_cast<Eigen::Index>(n) * tokens, tokens);
    rows = dhn;
    rows.array().rowwise() *= mod.row(n).segment(gate_col, width).array();
  }
  return dbranch;
}

constexpr double kNormEps = 1e-6;

}  // namespace

template <typename T>
VelocityNet<T>::VelocityNet(const VelocityModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const int d = config_.width;
  Rng rng(seed);
  in_proj_ = nn::Linear<T>("in_proj", config_.input_channels(), d);
  in_proj_.init_xavier(rng);
  time_fc1_ = nn::Linear<T>("time.fc1", config_.time_freq_dim, d);
  time_fc1_.init_normal(rng, 0.02);
  time_fc2_ = nn::Linear<T>("time.fc2", d, d);
  time_fc2_.init_normal(rng, 0.02);
  const int hidden = d * config_.mlp_ratio;
  for (int i = 0; i < config_.depth; ++i) {
    const std::string prefix = "block" + std::to_string(i);
    Block b;
    // Modulation layers start small but non-zero so every branch receives
    // gradient from the first step.
    b.ada = nn::Linear<T>(prefix + ".ada", d, 6 * d);
    b.ada.init_normal(rng, 0.02);
    b.qkv = nn::Linear<T>(prefix + ".qkv", d, 3 * d);
    b.qkv.init_xavier(rng);
    b.proj = nn::Linear<T>(prefix + ".proj", d, d);
    b.proj.init_xavier(rng);
    b.fc1 = nn::Linear<T>(prefix + ".fc1", d, hidden);
    b.fc1.init_xavier(rng);
    b.fc2 = nn::Linear<T>(prefix + ".fc2", hidden, d);
    b.fc2.init_xavier(rng);
    blocks_.push_back(std::move(b));
  }
  final_ada_ = nn::Linear<T>("final.ada", d, 2 * d);
  final_ada_.init_normal(rng, 0.02);
  out_proj_ = nn::Linear<T>("final.out", d, config_.latent_channels);
  out_proj_.init_normal(rng, 0.02);

  const auto table = positional_table(config_.grid_height, config_.grid_width, d);
  positions_.resize(static_cast<Eigen::Index>(config_.grid_height) * config_.grid_width, d);
  for (Eigen::Index i = 0; i < positions_.size(); ++i) positions_.data()[i] = static_cast<T>(table[i]);
}

template <typename T>
typename VelocityNet<T>::Mat VelocityNet<T>::embed_time(std::span<const double> times, Cache* cache) const {
  const int count = static_cast<int>(times.size());
  Mat features(count, config_.time_freq_dim);
  for (int n = 0; n < count; ++n) {
    const auto f = timestep_features(times[n], config_.time_freq_dim);
    for (int k = 0; k < config_.time_freq_dim; ++k) features(n, k) = static_cast<T>(f[k]);
  }
  Mat pre = time_fc1_.forward(features);
  Mat act = nn::silu(pre);
  Mat emb = time_fc2_.forward(act);
  if (cache != nullptr) {
    cache->time_features = std::move(features);
    cache->time_hidden_pre = std::move(pre);
    cache->time_hidden = std::move(act);
  }
  return emb;
}

template <typename T>
std::vector<double> VelocityNet<T>::time_embedding(double t) const {
  const double times[1] = {t};
  const Mat emb = embed_time(times, nullptr);
  std::vector<double> out(static_cast<std::size_t>(emb.cols()));
  for (Eigen::Index k = 0; k < emb.cols(); ++k) out[k] = static_cast<double>(emb(0, k));
  return out;
}

template <typename T>
typename VelocityNet<T>::Mat VelocityNet<T>::forward(const Mat& tokens, std::span<const double> times,
                                                     Cache* cache) const {
  const int count = static_cast<int>(times.size());
  const int per_sample = config_.grid_height * config_.grid_width;
  if (count < 1) throw InvalidShape("velocity net: empty batch");
  if (tokens.rows() != static_cast<Eigen::Index>(count) * per_sample) {
    throw InvalidShape("velocity net: expected " + std::to_string(count * per_sample) + " token rows, got " +
                       std::to_string(tokens.rows()));
  }
  if (tokens.cols() != config_.input_channels()) {
    throw InvalidShape("velocity net: expected " + std::to_string(config_.input_channels()) +
                       " input channels, got " + std::to_string(tokens.cols()));
  }
  const int d = config_.width;
  const T eps = static_cast<T>(kNormEps);

  if (cache != nullptr) {
    cache->count = count;
    cache->tokens = per_sample;
    cache->input = tokens;
    cache->blocks.assign(blocks_.size(), BlockCache{});
  }

  Mat h = in_proj_.forward(tokens);
  for (int n = 0; n < count; ++n) h.middleRows(static_cast<Eigen::Index>(n) * per_sample, per_sample) += positions_;

  Mat emb = embed_time(times, cache);
  Mat act = nn::silu(emb);

  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& b = blocks_[i];
    BlockCache* bc = cache != nullptr ? &cache->blocks[i] : nullptr;
    Mat mod = b.ada.forward(act);

    nn::RowNormCache<T> n1;
    Mat normed = nn::layer_norm_rows(h, eps, bc != nullptr ? &n1 : nullptr);
    Mat m1 = modulate(normed, mod, 0, d, count, per_sample);
    Mat qkv = b.qkv.forward(m1);
    Mat probs;
    Mat attended = nn::attention_forward(qkv, count, per_sample, config_.heads, bc != nullptr ? &probs : nullptr);
    Mat attn_out = b.proj.forward(attended);
    gated_add(h, attn_out, mod, 2 * d, count, per_sample);

    nn::RowNormCache<T> n2;
    Mat normed2 = nn::layer_norm_rows(h, eps, bc != nullptr ? &n2 : nullptr);
    Mat m2 = modulate(normed2, mod, 3 * d, 4 * d, count, per_sample);
    Mat pre = b.fc1.forward(m2);
    Mat hidden = nn::gelu(pre);
    Mat mlp_out = b.fc2.forward(hidden);
    gated_add(h, mlp_out, mod, 5 * d, count, per_sample);

    if (bc != nullptr) {
      bc->modulation = std::move(mod);
      bc->norm1 = std::move(n1);
      bc->mod1 = std::move(m1);
      bc->qkv = std::move(qkv);
      bc->probs = std::move(probs);
      bc->attended = std::move(attended);
      bc->attn_out = std::move(attn_out);
      bc->norm2 = std::move(n2);
      bc->mod2 = std::move(m2);
      bc->hidden_pre = std::move(pre);
      bc->hidden = std::move(hidden);
      bc->mlp_out = std::move(mlp_out);
    }
  }

  Mat fmod = final_ada_.forward(act);
  nn::RowNormCache<T> nf;
  Mat normed = nn::layer_norm_rows(h, eps, cache != nullptr ? &nf : nullptr);
  Mat mf = modulate(normed, fmod, 0, d, count, per_sample);
  Mat out = out_proj_.forward(mf);

  if (cache != nullptr) {
    cache->time_embedding = std::move(emb);
    cache->time_act = std::move(act);
    cache->final_modulation = std::move(fmod);
    cache->final_norm = std::move(nf);
    cache->final_mod = std::move(mf);
  }
  return out;
}

template <typename T>
typename VelocityNet<T>::Mat VelocityNet<T>::backward(const Cache& cache, const Mat& dout) {
  const int count = cache.count;
  const int tokens = cache.tokens;
  const int d = config_.width;

  Mat dact = Mat::Zero(count, d);

  Mat dmf = out_proj_.backward(cache.final_mod, dout);
  Mat dfmod(count, 2 * d);
  Mat dnormed = modulate_backward(cache.final_norm.normalized, cache.final_modulation, dmf, dfmod, 0, d, count,
                                  tokens);
  dact += final_ada_.backward(cache.time_act, dfmod);
  Mat dh = nn::layer_norm_rows_backward(cache.final_norm, dnormed);

  for (std::size_t ri = blocks_.size(); ri-- > 0;) {
    Block& b = blocks_[ri];
    const BlockCache& bc = cache.blocks[ri];
    Mat dmod(count, 6 * d);

    Mat dmlp = gated_add_backward(dh, bc.mlp_out, bc.modulation, dmod, 5 * d, count, tokens);
    Mat dhidden = b.fc2.backward(bc.hidden, dmlp);
    Mat dpre = nn::gelu_backward(bc.hidden_pre, dhidden);
    Mat dm2 = b.fc1.backward(bc.mod2, dpre);
    Mat dn2 = modulate_backward(bc.norm2.normalized, bc.modulation, dm2, dmod, 3 * d, 4 * d, count, tokens);
    dh += nn::layer_norm_rows_backward(bc.norm2, dn2);

    Mat dattn = gated_add_backward(dh, bc.attn_out, bc.modulation, dmod, 2 * d, count, tokens);
    Mat dattended = b.proj.backward(bc.attended, dattn);
    Mat dqkv = nn::attention_backward(bc.qkv, bc.probs, dattended, count, tokens, config_.heads);
    Mat dm1 = b.qkv.backward(bc.mod1, dqkv);
    Mat dn1 = modulate_backward(bc.norm1.normalized, bc.modulation, dm1, dmod, 0, d, count, tokens);
    dh += nn::layer_norm_rows_backward(bc.norm1, dn1);

    dact += b.ada.backward(cache.time_act, dmod);
  }

  Mat demb = nn::silu_backward(cache.time_embedding, dact);
  Mat dthidden = time_fc2_.backward(cache.time_hidden, demb);
  Mat dtpre = nn::silu_backward(cache.time_hidden_pre, dthidden);
  time_fc1_.accumulate(cache.time_features, dtpre);

  return in_proj_.backward(cache.input, dh);
}

template <typename T>
nn::ParamList<T> VelocityNet<T>::parameters() {
  nn::ParamList<T> out;
  in_proj_.collect(out);
  time_fc1_.collect(out);
  time_fc2_.collect(out);
  for (auto& b : blocks_) {
    b.ada.collect(out);
    b.qkv.collect(out);
    b.proj.collect(out);
    b.fc1.collect(out);
    b.fc2.collect(out);
  }
  final_ada_.collect(out);
  out_proj_.collect(out);
  return out;
}

template <typename T>
std::size_t VelocityNet<T>::parameter_count() {
  return nn::parameter_count(parameters());
}

template class VelocityNet<float>;
template class VelocityNet<double>;

nn::Matrix<float> pack_tokens(const LatentBatch& latents, const GridBatch<ConditioningTag>& cond,
                              std::span<const int> cond_index) {
  const Shape& ls = latents.shape();
  const Shape& cs = cond.shape();
  if (ls.height != cs.height || ls.width != cs.width) {
    throw InvalidShape("velocity input: latent " + to_string(ls) + " and conditioning " + to_string(cs) +
                       " differ spatially");
  }
  if (cond_index.size() != static_cast<std::size_t>(latents.count())) {
    throw InvalidShape("velocity input: one conditioning index per latent required");
  }
  const Eigen::Index pixels = static_cast<Eigen::Index>(ls.pixels());
  nn::Matrix<float> tokens(latents.count() * pixels, ls.channels + cs.channels);
  for (int n = 0; n < latents.count(); ++n) {
    const float* lat = latents.data() + static_cast<std::size_t>(n) * ls.size();
    const float* cnd = cond.data() + static_cast<std::size_t>(cond_index[n]) * cs.size();
    for (Eigen::Index p = 0; p < pixels; ++p) {
      float* row = tokens.data() + (n * pixels + p) * tokens.cols();
      std::copy_n(lat + p * ls.channels, ls.channels, row);
      std::copy_n(cnd + p * cs.channels, cs.channels, row + ls.channels);
    }
  }
  return tokens;
}

template <typename T>
VelocitySample predict_velocity(const VelocityNet<T>& model, const Latent& x_t, const ConditioningSignal& cond,
                                TimeStep t) {
  if (x_t.height() != cond.height() || x_t.width() != cond.width()) {
    throw InvalidShape("predict_velocity: latent " + to_string(x_t.shape()) + " and conditioning " +
                       to_string(cond.shape()) + " differ spatially");
  }
  const auto& cfg = model.config();
  if (x_t.height() != cfg.grid_height || x_t.width() != cfg.grid_width || x_t.channels() != cfg.latent_channels ||
      cond.channels() != cfg.cond_channels) {
    throw InvalidShape("predict_velocity: inputs do not match the model configuration");
  }
  const Eigen::Index pixels = static_cast<Eigen::Index>(x_t.shape().pixels());
  nn::Matrix<T> tokens(pixels, cfg.input_channels());
  for (Eigen::Index p = 0; p < pixels; ++p) {
    for (int c = 0; c < x_t.channels(); ++c) tokens(p, c) = static_cast<T>(x_t.values()[p * x_t.channels() + c]);
    for (int c = 0; c < cond.channels(); ++c) {
      tokens(p, x_t.channels() + c) = static_cast<T>(cond.values()[p * cond.channels() + c]);
    }
  }
  const double times[1] = {t.value()};
  const nn::Matrix<T> out = model.forward(tokens, times, nullptr);
  VelocitySample v(x_t.shape());
  for (Eigen::Index i = 0; i < out.size(); ++i) v.values()[i] = static_cast<float>(out.data()[i]);
  return v;
}

template VelocitySample predict_velocity(const VelocityNet<float>&, const Latent&, const ConditioningSignal&,
                                         TimeStep);
template VelocitySample predict_velocity(const VelocityNet<double>&, const Latent&, const ConditioningSignal&,
                                         TimeStep);

}  // namespace changeflow
