#include "icvid/diffusion.hpp"

#include <json.hpp>

namespace icvid {

using nlohmann::json;

void FlowConfig::validate() const {
  if (!(sigma_min > 0.0 && sigma_min <= 0.1))
    throw UsageError("sigma_min must be small and positive (0 < sigma_min <= "
                     "0.1), got " +
                     std::to_string(sigma_min));
  if (n_steps < 1)
    throw UsageError("n_steps must be >= 1, got " + std::to_string(n_steps));
  if (!(cfg_scale >= 0.0))
    throw UsageError("cfg_scale must be >= 0, got " +
                     std::to_string(cfg_scale));
  if (!(cond_drop_prob >= 0.0 && cond_drop_prob <= 1.0))
    throw UsageError("cond_drop_prob must lie in [0, 1], got " +
                     std::to_string(cond_drop_prob));
}

std::string flow_config_to_json(const FlowConfig& cfg) {
  json j;
  j["sigma_min"] = cfg.sigma_min;
  j["n_steps"] = cfg.n_steps;
  j["cfg_scale"] = cfg.cfg_scale;
  j["cond_drop_prob"] = cfg.cond_drop_prob;
  return j.dump(2) + "\n";
}

FlowConfig flow_config_from_json(const std::string& json_text) {
  FlowConfig cfg;
  try {
    json j = json::parse(json_text);
    cfg.sigma_min = j.at("sigma_min").get<double>();
    cfg.n_steps = j.at("n_steps").get<int>();
    cfg.cfg_scale = j.at("cfg_scale").get<double>();
    cfg.cond_drop_prob = j.at("cond_drop_prob").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("flow config JSON is malformed: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

int drop_condition(std::vector<ForwardInput>& batch, double prob,
                   CounterRng& rng) {
  if (!(prob >= 0.0 && prob <= 1.0))
    throw UsageError("drop probability must lie in [0, 1], got " +
                     std::to_string(prob));
  int dropped = 0;
  for (ForwardInput& sample : batch) {
    if (rng.next_unit() < prob) {
      sample.uncond = true;
      ++dropped;
    }
  }
  return dropped;
}

Tensor<float> euler_sample(
    const ModelParams& params, const ForwardInput& cond,
    const FlowConfig& flow, CounterRng& rng,
    const std::function<void(Tensor<float>&, int)>& on_step) {
  flow.validate();
  const ModelConfig& cfg = params.config;
  Tensor<float> x({cfg.n_video_tokens(), cfg.patch_channels()});
  for (int64_t i = 0; i < x.numel(); ++i)
    x.data()[i] = static_cast<float>(rng.next_gaussian());

  ForwardInput uncond = cond;
  uncond.uncond = true;
  auto velocity = [&](const Tensor<float>& state, double t) {
    Tensor<float> u_cond = full_forward(params, cond, state, t);
    if (flow.cfg_scale == 1.0) return u_cond;
    Tensor<float> u_uncond = full_forward(params, uncond, state, t);
    return cfg_combine(u_uncond, u_cond, flow.cfg_scale);
  };
  return euler_integrate(std::move(x), flow.n_steps, velocity, on_step);
}

VideoClip sample_video(const ModelParams& params, const ForwardInput& cond,
                       const FlowConfig& flow, CounterRng& rng) {
  return decode_video(euler_sample(params, cond, flow, rng), params.config);
}

}  // namespace icvid
