#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "icvid/errors.hpp"
#include "icvid/forward.hpp"
#include "icvid/model.hpp"
#include "icvid/rng.hpp"
#include "icvid/tensor.hpp"

// Flow matching over the straight conditional path
//   x_t = t * x1 + (1 - (1 - sigma_min) * t) * x0,
// whose velocity dx_t/dt = x1 - (1 - sigma_min) * x0 is constant in t, and
// the Euler ODE sampler with classifier-free guidance on a uniform time grid.

namespace icvid {

struct FlowConfig {
  double sigma_min = 1e-5;
  int n_steps = 50;
  double cfg_scale = 6.0;
  // Probability that one training sample has its reference video and both
  // captions replaced by learned null embeddings (CFG unconditional branch).
  double cond_drop_prob = 0.1;

  void validate() const;
};

std::string flow_config_to_json(const FlowConfig& cfg);
FlowConfig flow_config_from_json(const std::string& json_text);

namespace flow_detail {

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                      const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + " requires equal shapes, got " +
                     shape_str(a) + " vs " + shape_str(b));
}

}  // namespace flow_detail

// Point on the path at time t in [0, 1]. The mixing coefficient is computed
// as (1 - t) + sigma_min * t, algebraically identical to 1 - (1-sigma_min)*t
// but exact at both endpoints: t=0 -> x0 and t=1 -> x1 + sigma_min * x0.
template <class T>
Tensor<T> sample_path(const Tensor<T>& x0, const Tensor<T>& x1, double t,
                      double sigma_min = 1e-5) {
  flow_detail::check_same_shape(x0, x1, "sample_path");
  if (!(t >= 0.0 && t <= 1.0))
    throw UsageError("sample_path time must lie in [0, 1], got " +
                     std::to_string(t));
  const T a = static_cast<T>(t);
  const T b = static_cast<T>((1.0 - t) + sigma_min * t);
  Tensor<T> out(x0.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out.data()[i] = a * x1.data()[i] + b * x0.data()[i];
  return out;
}

// Regression target for the model: V = x1 - (1 - sigma_min) * x0, the
// t-independent derivative of sample_path.
template <class T>
Tensor<T> velocity_target(const Tensor<T>& x0, const Tensor<T>& x1,
                          double sigma_min = 1e-5) {
  flow_detail::check_same_shape(x0, x1, "velocity_target");
  const T c = static_cast<T>(1.0 - sigma_min);
  Tensor<T> out(x0.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out.data()[i] = x1.data()[i] - c * x0.data()[i];
  return out;
}

// Mean over all elements of the squared difference.
template <class T>
double fm_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  flow_detail::check_same_shape(pred, target, "fm_loss");
  double acc = 0.0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred.data()[i]) -
                     static_cast<double>(target.data()[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.numel());
}

// u = u_uncond + scale * (u_cond - u_uncond). The scale 0 and 1 identities
// short-circuit so they hold bitwise, not merely up to rounding.
template <class T>
Tensor<T> cfg_combine(const Tensor<T>& u_uncond, const Tensor<T>& u_cond,
                      double scale) {
  flow_detail::check_same_shape(u_uncond, u_cond, "cfg_combine");
  if (!(scale >= 0.0))
    throw UsageError("cfg_combine scale must be >= 0, got " +
                     std::to_string(scale));
  if (scale == 1.0) return u_cond;
  if (scale == 0.0) return u_uncond;
  const T s = static_cast<T>(scale);
  Tensor<T> out(u_uncond.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out.data()[i] =
        u_uncond.data()[i] + s * (u_cond.data()[i] - u_uncond.data()[i]);
  return out;
}

// Marks each sample unconditional with probability prob (one uniform draw per
// sample, in batch order). The substitution itself happens inside the forward
// pass: both captions fall back to the learned null text row and the embedded
// reference-video rows to the learned null reference row. The target first
// frame is never dropped; it defines the image-to-video task. Returns the
// number of samples dropped.
int drop_condition(std::vector<ForwardInput>& batch, double prob,
                   CounterRng& rng);

// Integrates dx/dt = velocity(x, t) from t=0 to t=1 with Euler steps on the
// uniform grid t_k = k/n_steps. velocity is any callable
// (const Tensor<T>&, double t) -> Tensor<T>. on_step, when set, may mutate
// the state after update k (fault injection for the CLI debug hook); any
// non-finite state aborts with the step index attached.
template <class T, class Velocity>
Tensor<T> euler_integrate(
    Tensor<T> x, int n_steps, Velocity&& velocity,
    const std::function<void(Tensor<std::type_identity_t<T>>&, int)>& on_step =
        {}) {
  if (n_steps < 1)
    throw UsageError("euler_integrate requires n_steps >= 1, got " +
                     std::to_string(n_steps));
  for (int k = 0; k < n_steps; ++k) {
    const double tk = static_cast<double>(k) / n_steps;
    const double dt = static_cast<double>(k + 1) / n_steps - tk;
    Tensor<T> u = velocity(x, tk);
    flow_detail::check_same_shape(x, u, "euler_integrate");
    const T h = static_cast<T>(dt);
    for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] += h * u.data()[i];
    if (on_step) on_step(x, k);
    for (int64_t i = 0; i < x.numel(); ++i)
      if (!std::isfinite(static_cast<double>(x.data()[i])))
        throw NumericError("sampler state is non-finite after step " +
                               std::to_string(k) + " of " +
                               std::to_string(n_steps),
                           k);
  }
  return x;
}

// Draws x0 ~ N(0, I), integrates the CFG-combined model velocity, and returns
// the latent at t=1, shaped [n_video_tokens, patch_channels]. cfg_scale == 1
// never evaluates the unconditional branch, so it is bitwise identical to
// pure conditional sampling.
Tensor<float> euler_sample(
    const ModelParams& params, const ForwardInput& cond,
    const FlowConfig& flow, CounterRng& rng,
    const std::function<void(Tensor<float>&, int)>& on_step = {});

// euler_sample followed by the exact latent-to-pixel decode.
VideoClip sample_video(const ModelParams& params, const ForwardInput& cond,
                       const FlowConfig& flow, CounterRng& rng);

}  // namespace icvid
