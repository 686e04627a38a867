#include "mobillm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mobillm/rng.hpp"
#include "mobillm/train.hpp"

namespace mobillm {

namespace {

std::vector<std::string> tensor_names(const SideConfig& config) {
  std::vector<std::string> names;
  for (std::uint32_t l = 0; l < config.adapters; ++l) {
    const std::string p = "adapter" + std::to_string(l) + ".";
    for (const char* n : {"w_down", "w_up", "ln_gamma", "ln_beta"}) names.push_back(p + n);
  }
  names.insert(names.end(), {"head_weight", "head_bias", "gate"});
  return names;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradcheckFloor});
  return std::abs(analytic - numeric) / denom;
}

GradcheckResult gradcheck_side(const GradcheckConfig& config, std::uint64_t seed) {
  config.side.validate();
  Rng rng(seed);
  SideParams<double> params = init_side<double>(config.side, mix_seed(seed, 1));
  // Move LN, head and gate away from their symmetric init so every path
  // carries gradient.
  for (auto& a : params.adapters) {
    for (auto& g : a.ln_gamma.data()) g = 1.0 + 0.3 * rng.gaussian();
    for (auto& b : a.ln_beta.data()) b = 0.3 * rng.gaussian();
  }
  for (auto& w : params.head_weight.data()) w = rng.gaussian();
  for (auto& b : params.head_bias.data()) b = 0.1 * rng.gaussian();
  params.gate[0] = 0.5 * rng.gaussian();

  const std::size_t tap_count = config.side.adapters + (config.tap_embedding ? 1 : 0);
  std::vector<TensorD> taps;
  for (std::size_t t = 0; t < tap_count; ++t) {
    taps.push_back(rng.gaussian_tensor<double>({config.batch, config.seq, config.side.hidden}, 0.0, 1.0));
  }
  std::vector<std::uint32_t> labels(config.batch);
  for (auto& y : labels) y = static_cast<std::uint32_t>(rng.below(config.side.classes));

  auto fwd = side_forward<double>(taps, params, true);
  const auto lg = loss_and_grad(fwd.logits, labels, LossKind::cross_entropy);
  const SideParams<double> grads = side_backward(*fwd.cache, lg.d_logits, params);

  const auto names = tensor_names(config.side);
  const auto analytic = grads.tensors();
  GradcheckResult result;
  result.seed = seed;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    auto loss_with = [&](const TensorD& theta) {
      SideParams<double> probe = params;
      *probe.tensors()[k] = theta;
      const auto out = side_forward<double>(taps, probe, false);
      return loss_and_grad(out.logits, labels, LossKind::cross_entropy).loss;
    };
    const TensorD numeric = finite_diff_grad<double>(loss_with, *params.tensors()[k], config.step);
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double err = relative_error((*analytic[k])[i], numeric[i]);
      ++result.coordinates;
      if (err > result.max_rel_error || result.worst_tensor.empty()) {
        result.max_rel_error = err;
        result.worst_tensor = names[k];
      }
    }
  }
  return result;
}

std::vector<GradcheckResult> gradcheck_suite(const GradcheckConfig& config,
                                             const std::vector<std::uint64_t>& seeds) {
  std::vector<GradcheckResult> out;
  for (auto s : seeds) out.push_back(gradcheck_side(config, s));
  return out;
}

}  // namespace mobillm
