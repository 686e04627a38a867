#include "mobillm/train.hpp"

#include <chrono>
#include <cmath>

namespace mobillm {

std::optional<LossKind> parse_loss(std::string_view text) {
  if (text == "ce" || text == "cross_entropy") return LossKind::cross_entropy;
  if (text == "mse") return LossKind::mse;
  return std::nullopt;
}

template <typename T>
LossResult<T> loss_and_grad(const Tensor<T>& logits, std::span<const std::uint32_t> labels,
                            LossKind kind) {
  if (logits.rank() != 2) throw DimensionError("loss: logits must be [B, C]");
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (labels.size() != B) {
    throw DimensionError("loss: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(B));
  }
  if (B == 0) throw EmptyInputError("loss: empty batch");
  LossResult<T> r;
  r.d_logits = Tensor<T>(logits.shape());
  const T inv_b = static_cast<T>(1) / static_cast<T>(B);

  if (kind == LossKind::cross_entropy) {
    for (std::size_t b = 0; b < B; ++b) {
      if (labels[b] >= C) {
        throw InputError("loss: label " + std::to_string(labels[b]) + " >= classes " +
                         std::to_string(C));
      }
      const T* row = &logits[b * C];
      T mx = row[0];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
      T total = 0;
      for (std::size_t c = 0; c < C; ++c) total += std::exp(row[c] - mx);
      const T log_z = mx + std::log(total);
      r.loss += (log_z - row[labels[b]]) * inv_b;
      for (std::size_t c = 0; c < C; ++c) {
        const T p = std::exp(row[c] - log_z);
        r.d_logits[b * C + c] = (p - (c == labels[b] ? T{1} : T{0})) * inv_b;
      }
    }
  } else {
    if (C != 1) throw DimensionError("loss: mse expects a single output column");
    for (std::size_t b = 0; b < B; ++b) {
      const T diff = logits[b] - static_cast<T>(labels[b]);
      r.loss += diff * diff * inv_b;
      r.d_logits[b] = static_cast<T>(2) * diff * inv_b;
    }
  }
  return r;
}

template <typename T>
AdamState<T> make_adam_state(std::span<const Tensor<T>* const> params, AdamHyper hyper) {
  AdamState<T> s;
  s.hyper = hyper;
  for (const Tensor<T>* p : params) {
    s.m.emplace_back(p->shape());
    s.v.emplace_back(p->shape());
  }
  return s;
}

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads,
               AdamState<T>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw DimensionError("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape() || params[i]->shape() != state.m[i].shape()) {
      throw DimensionError("adam_step: shape mismatch at tensor " + std::to_string(i));
    }
  }
  const AdamHyper& h = state.hyper;
  state.step += 1;
  const T b1 = static_cast<T>(h.beta1);
  const T b2 = static_cast<T>(h.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(h.beta1, static_cast<double>(state.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(h.beta2, static_cast<double>(state.step)));
  const T lr = static_cast<T>(h.lr);
  const T eps = static_cast<T>(h.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto P = params[i]->data();
    auto G = grads[i]->data();
    auto M = state.m[i].data();
    auto V = state.v[i].data();
    for (std::size_t j = 0; j < P.size(); ++j) {
      M[j] = b1 * M[j] + (static_cast<T>(1) - b1) * G[j];
      V[j] = b2 * V[j] + (static_cast<T>(1) - b2) * G[j] * G[j];
      const T m_hat = M[j] / c1;
      const T v_hat = V[j] / c2;
      P[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

nlohmann::json to_json(const IterationMetrics& m) {
  return {{"batch_id", m.batch_id}, {"loss", m.loss},         {"acc", m.accuracy},
          {"grad_norm", m.grad_norm}, {"t_deq_ms", m.t_deq_ms}, {"t_fwd_ms", m.t_fwd_ms},
          {"t_bwd_ms", m.t_bwd_ms},   {"t_opt_ms", m.t_opt_ms}, {"bytes_in", m.bytes_in}};
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

template <typename T>
std::vector<const T*> const_view(const std::vector<T*>& v) {
  return {v.begin(), v.end()};
}

}  // namespace

Trainer::Trainer(const TrainerConfig& config)
    : config_(config), params_(init_side<float>(config.side, config.seed)) {
  const auto tensors = const_view(params_.tensors());
  adam_ = make_adam_state<float>(tensors, config.adam);
}

IterationMetrics Trainer::train_iteration(const ActivationBatch& batch, std::uint64_t bytes_in) {
  if (last_batch_id_ && batch.batch_id <= *last_batch_id_) {
    throw ProtocolError("train_iteration: batch id " + std::to_string(batch.batch_id) +
                        " not after " + std::to_string(*last_batch_id_));
  }
  IterationMetrics m;
  m.batch_id = batch.batch_id;
  m.bytes_in = bytes_in;

  auto t0 = Clock::now();
  const std::vector<TensorF> taps = dequantize_all(batch);
  m.t_deq_ms = ms_since(t0);

  t0 = Clock::now();
  SideForwardResult<float> fwd = side_forward<float>(taps, params_, true);
  const LossResult<float> loss = loss_and_grad(fwd.logits, batch.labels, config_.loss);
  m.t_fwd_ms = ms_since(t0);
  if (!std::isfinite(loss.loss)) throw StateError("train_iteration: non-finite loss");

  t0 = Clock::now();
  const SideParams<float> grads = side_backward(*fwd.cache, loss.d_logits, params_);
  m.t_bwd_ms = ms_since(t0);

  double sq = 0.0;
  for (const TensorF* g : grads.tensors()) {
    for (float v : g->data()) sq += static_cast<double>(v) * v;
  }

  t0 = Clock::now();
  const auto params = params_.tensors();
  const auto grad_list = grads.tensors();
  adam_step<float>(params, grad_list, adam_);
  m.t_opt_ms = ms_since(t0);

  m.loss = loss.loss;
  m.accuracy = config_.loss == LossKind::cross_entropy
                   ? accuracy(fwd.logits, batch.labels)
                   : loss.loss;
  m.grad_norm = std::sqrt(sq);
  last_batch_id_ = batch.batch_id;
  history_.push_back(m);
  return m;
}

TensorF Trainer::evaluate(const ActivationBatch& batch) const {
  const std::vector<TensorF> taps = dequantize_all(batch);
  return side_forward<float>(taps, params_, false).logits;
}

#define MOBILLM_INSTANTIATE(T)                                                                 \
  template LossResult<T> loss_and_grad(const Tensor<T>&, std::span<const std::uint32_t>,       \
                                       LossKind);                                              \
  template AdamState<T> make_adam_state(std::span<const Tensor<T>* const>, AdamHyper);         \
  template void adam_step(std::span<Tensor<T>* const>, std::span<const Tensor<T>* const>,      \
                          AdamState<T>&);

MOBILLM_INSTANTIATE(float)
MOBILLM_INSTANTIATE(double)

#undef MOBILLM_INSTANTIATE

}  // namespace mobillm
