#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "changeflow/flow_core.hpp"
#include "changeflow/grid.hpp"
#include "changeflow/nn/layers.hpp"

namespace changeflow {

/// Transformer hyperparameters. Tokens are latent pixels (patch size 1).
struct VelocityModelConfig {
  int latent_channels = 4;
  int cond_channels = 32;
  int width = 128;
  int depth = 4;
  int heads = 4;
  int time_freq_dim = 64;
  int mlp_ratio = 4;
  int grid_height = 16;
  int grid_width = 16;

  int input_channels() const { return latent_channels + cond_channels; }
  /// Throws InvalidArgument for inconsistent settings.
  void validate() const;
};

/// Highest angular frequency (radians per unit time) of the sinusoidal time
/// features; the lowest is 1.
inline constexpr double kTimeMaxFrequency = 32.0;

/// Interleaved [sin(f_0 t), cos(f_0 t), sin(f_1 t), ...] with f_k spaced
/// geometrically from 1 to kTimeMaxFrequency. `dim` must be even.
std::vector<double> timestep_features(double t, int dim);

/// Fixed 2-D sine/cosine positional table, (height * width) x dim.
std::vector<double> positional_table(int height, int width, int dim);

/// DiT-style velocity model: linear token embedding plus positional table,
/// blocks of self-attention and MLP with adaptive-norm time modulation, and
/// a modulated linear head back to the latent channel count.
template <typename T>
class VelocityNet {
 public:
  using Mat = nn::Matrix<T>;

  VelocityNet() = default;
  VelocityNet(const VelocityModelConfig& config, std::uint64_t seed);

  const VelocityModelConfig& config() const { return config_; }

  struct BlockCache {
    Mat modulation;
    nn::RowNormCache<T> norm1;
    Mat mod1;
    Mat qkv;
    Mat probs;
    Mat attended;
    Mat attn_out;
    nn::RowNormCache<T> norm2;
    Mat mod2;
    Mat hidden_pre;
    Mat hidden;
    Mat mlp_out;
  };

  struct Cache {
    int count = 0;
    int tokens = 0;
    Mat input;
    Mat time_features;
    Mat time_hidden_pre;
    Mat time_hidden;
    Mat time_embedding;
    Mat time_act;
    std::vector<BlockCache> blocks;
    Mat final_modulation;
    nn::RowNormCache<T> final_norm;
    Mat final_mod;
  };

  /// `tokens` is (count * grid_height * grid_width) x input_channels with
  /// rows ordered (sample, y, x); `times` has one entry per sample. Returns
  /// the velocity, (count * tokens) x latent_channels.
  Mat forward(const Mat& tokens, std::span<const double> times, Cache* cache) const;

  /// Accumulates parameter gradients; returns d loss / d tokens.
  Mat backward(const Cache& cache, const Mat& dout);

  /// Learned time embedding (projection of timestep_features), width entries.
  std::vector<double> time_embedding(double t) const;

  nn::ParamList<T> parameters();
  std::size_t parameter_count();

 private:
  struct Block {
    nn::Linear<T> ada;
    nn::Linear<T> qkv;
    nn::Linear<T> proj;
    nn::Linear<T> fc1;
    nn::Linear<T> fc2;
  };

  Mat embed_time(std::span<const double> times, Cache* cache) const;

  VelocityModelConfig config_;
  nn::Linear<T> in_proj_;
  nn::Linear<T> time_fc1_;
  nn::Linear<T> time_fc2_;
  std::vector<Block> blocks_;
  nn::Linear<T> final_ada_;
  nn::Linear<T> out_proj_;
  Mat positions_;
};

extern template class VelocityNet<float>;
extern template class VelocityNet<double>;

/// Single-sample convenience wrapper: concatenates x_t and the conditioning
/// along channels, runs the model, and reshapes to the latent grid.
template <typename T>
VelocitySample predict_velocity(const VelocityNet<T>& model, const Latent& x_t,
                                const ConditioningSignal& cond, TimeStep t);

/// Packs latents and conditioning into a token matrix; the conditioning batch
/// is indexed through `cond_index` so one signal can serve several latents.
nn::Matrix<float> pack_tokens(const LatentBatch& latents, const GridBatch<ConditioningTag>& cond,
                              std::span<const int> cond_index);

}  // namespace changeflow
