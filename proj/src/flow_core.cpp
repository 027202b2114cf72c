#include "changeflow/flow_core.hpp"

#include <algorithm>

namespace changeflow {

TimeStep::TimeStep(double t) : t_(t) {
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("time step outside [0, 1]: " + std::to_string(t));
}

TimeSampling parse_time_sampling(const std::string& name) {
  if (name == "logit_normal") return TimeSampling::logit_normal;
  if (name == "uniform") return TimeSampling::uniform;
  throw InvalidArgument("unknown t-sampling mode '" + name + "'");
}

std::string to_string(TimeSampling mode) {
  return mode == TimeSampling::logit_normal ? "logit_normal" : "uniform";
}

Latent sample_initial_noise(Shape shape, std::uint64_t seed) {
  validate_shape(shape, "initial noise");
  Latent noise(shape);
  Rng rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (float& v : noise.values()) v = normal(rng);
  return noise;
}

Latent interpolate(const Latent& x0, const Latent& x1, TimeStep t) {
  require_same_shape(x0.shape(), x1.shape(), "interpolate");
  Latent out(x0.shape());
  const float tt = static_cast<float>(t.value());
  auto a = x0.values();
  auto b = x1.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = (1.0f - tt) * a[i] + tt * b[i];
  return out;
}

TimeStep timestep_from_normal(double s) { return TimeStep(1.0 / (1.0 + std::exp(-s))); }

TimeStep sample_timestep(TimeSampling mode, Rng& rng) {
  if (mode == TimeSampling::logit_normal) return timestep_from_normal(standard_normal(rng));
  return TimeStep(uniform01(rng));
}

double rf_loss(const VelocitySample& v_pred, const Latent& x0, const Latent& x1) {
  require_same_shape(x0.shape(), x1.shape(), "rf_loss");
  require_same_shape(x0.shape(), v_pred.shape(), "rf_loss");
  auto v = v_pred.values();
  auto a = x0.values();
  auto b = x1.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double r = (static_cast<double>(b[i]) - a[i]) - v[i];
    sum += r * r;
  }
  return sum / static_cast<double>(v.size());
}

VelocitySample rf_loss_gradient(const VelocitySample& v_pred, const Latent& x0, const Latent& x1) {
  require_same_shape(x0.shape(), x1.shape(), "rf_loss_gradient");
  require_same_shape(x0.shape(), v_pred.shape(), "rf_loss_gradient");
  VelocitySample grad(v_pred.shape());
  auto v = v_pred.values();
  auto a = x0.values();
  auto b = x1.values();
  auto g = grad.values();
  const double scale = 2.0 / static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    g[i] = static_cast<float>(scale * (static_cast<double>(v[i]) - (static_cast<double>(b[i]) - a[i])));
  }
  return grad;
}

Latent euler_integrate(Latent x0, const VelocityField& field, int steps) {
  return integrate_euler(std::move(x0), field, steps, [](int, const Latent&) {});
}

}  // namespace changeflow
