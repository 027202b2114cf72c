#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "changeflow/grid.hpp"
#include "changeflow/rng.hpp"

namespace changeflow {

/// Flow time in [0, 1]; 0 is pure noise, 1 is data.
class TimeStep {
 public:
  TimeStep() = default;
  explicit TimeStep(double t);
  double value() const { return t_; }

 private:
  double t_ = 0.0;
};

enum class TimeSampling { logit_normal, uniform };

TimeSampling parse_time_sampling(const std::string& name);
std::string to_string(TimeSampling mode);

/// i.i.d. standard normal entries, reproducible for a given seed.
Latent sample_initial_noise(Shape shape, std::uint64_t seed);

/// (1 - t) * x0 + t * x1.
Latent interpolate(const Latent& x0, const Latent& x1, TimeStep t);

/// sigmoid(s); maps a standard normal draw to a logit-normal time.
TimeStep timestep_from_normal(double s);

TimeStep sample_timestep(TimeSampling mode, Rng& rng);

/// Mean over entries of ((x1 - x0) - v_pred)^2, accumulated in double.
double rf_loss(const VelocitySample& v_pred, const Latent& x0, const Latent& x1);

/// d rf_loss / d v_pred = 2 (v_pred - (x1 - x0)) / count.
VelocitySample rf_loss_gradient(const VelocitySample& v_pred, const Latent& x0, const Latent& x1);

using VelocityField = std::function<VelocitySample(const Latent&, TimeStep)>;

/// Explicit Euler over t_k = k / steps, k = 0 .. steps - 1.
///
/// `field(state, t)` must return something exposing values() of the state's
/// size; `on_step(k, state)` runs after step k (1-based) has been applied.
/// Throws NumericError carrying the step index when the field returns a
/// non-finite value.
template <typename State, typename Field, typename StepHook>
State integrate_euler(State x, Field&& field, int steps, StepHook&& on_step) {
  if (steps < 1) throw InvalidArgument("euler: step count must be at least 1");
  const double dt = 1.0 / steps;
  // Compensated accumulation keeps the float state within an ulp or so of
  // the exact sum even for large step counts.
  std::vector<float> carry(x.values().size(), 0.0f);
  for (int k = 0; k < steps; ++k) {
    const TimeStep t(static_cast<double>(k) / steps);
    const auto v = field(static_cast<const State&>(x), t);
    auto vs = v.values();
    auto xs = x.values();
    if (vs.size() != xs.size()) throw InvalidShape("euler: velocity size differs from state size");
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!std::isfinite(vs[i])) {
        throw NumericError("euler: non-finite velocity at step " + std::to_string(k), k);
      }
      const float increment = static_cast<float>(dt * vs[i]) - carry[i];
      const float updated = xs[i] + increment;
      carry[i] = (updated - xs[i]) - increment;
      xs[i] = updated;
    }
    on_step(k + 1, static_cast<const State&>(x));
  }
  return x;
}

Latent euler_integrate(Latent x0, const VelocityField& field, int steps);

}  // namespace changeflow
