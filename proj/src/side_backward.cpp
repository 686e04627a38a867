#include <cmath>

#include "mobillm/side_network.hpp"

namespace mobillm {

template <typename T>
SideParams<T> side_backward(SideCache<T>& cache, const Tensor<T>& d_logits,
                            const SideParams<T>& params) {
  if (cache.consumed) throw StateError("side_backward: cache already consumed");
  const SideConfig& c = params.config;
  if (!(cache.config == c) || cache.adapters.size() != params.adapters.size()) {
    throw StateError("side_backward: cache was produced with a different side network");
  }
  if (d_logits.shape() != Shape{cache.batch, c.classes}) {
    throw StateError("side_backward: d_logits shape " + shape_string(d_logits.shape()) +
                     " does not match the cached forward");
  }
  cache.consumed = true;

  const std::size_t B = cache.batch, S = cache.seq, H = c.hidden;
  const Nonlinearity act = c.activation == Activation::relu ? Nonlinearity::relu : Nonlinearity::gelu;
  SideParams<T> grads = zero_side_params<T>(c);

  // Head: logits = pooled · W + b.
  grads.head_weight = matmul_tn(cache.pooled, d_logits);
  grads.head_bias = sum_rows(d_logits);
  const Tensor<T> d_pooled = matmul_nt(d_logits, params.head_weight);  // [B, H]

  // Mean pool and gate mix.
  const T g = cache.gate_sigmoid;
  const T inv_s = static_cast<T>(1) / static_cast<T>(S);
  Tensor<T> d_s({B, S, H});
  T d_gate_sig = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t si = 0; si < S; ++si) {
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t idx = (b * S + si) * H + h;
        const T dz = d_pooled[b * H + h] * inv_s;
        d_gate_sig += dz * (cache.backbone_final[idx] - cache.side_out[idx]);
        d_s[idx] = (static_cast<T>(1) - g) * dz;
      }
    }
  }
  grads.gate[0] = d_gate_sig * g * (static_cast<T>(1) - g);

  // Adapters in reverse. Taps are constants, so d(input) flows only into s_l.
  for (std::size_t l = params.adapters.size(); l-- > 0;) {
    const AdapterParams<T>& p = params.adapters[l];
    const AdapterCache<T>& ac = cache.adapters[l];
    AdapterParams<T>& gp = grads.adapters[l];
    Tensor<T> d_residual = layer_norm_backward(d_s, ac.ln, p.ln_gamma, gp.ln_gamma, gp.ln_beta);
    gp.w_up = matmul_tn(ac.activated, d_residual);
    Tensor<T> d_pre = matmul_nt(d_residual, p.w_up);
    const Tensor<T> slope = nonlinearity_grad(ac.pre, act);
    for (std::size_t i = 0; i < d_pre.size(); ++i) d_pre[i] *= slope[i];
    gp.w_down = matmul_tn(ac.input, d_pre);
    Tensor<T> d_input = matmul_nt(d_pre, p.w_down);
    add_inplace(d_input, d_residual);
    d_s = std::move(d_input);
  }
  return grads;
}

template SideParams<float> side_backward(SideCache<float>&, const Tensor<float>&,
                                         const SideParams<float>&);
template SideParams<double> side_backward(SideCache<double>&, const Tensor<double>&,
                                          const SideParams<double>&);

}  // namespace mobillm
