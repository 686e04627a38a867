#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mobillm/quant.hpp"
#include "mobillm/side_network.hpp"

namespace mobillm {

enum class LossKind { cross_entropy, mse };

std::optional<LossKind> parse_loss(std::string_view text);

template <typename T>
struct LossResult {
  T loss = 0;
  Tensor<T> d_logits;
};

// Mean over the batch. cross_entropy is log-sum-exp stabilized with
// d_logits = (softmax - one_hot) / B; mse expects [B, 1] logits, targets
// are the labels as numbers, d_logits = 2 (pred - y) / B.
template <typename T>
LossResult<T> loss_and_grad(const Tensor<T>& logits, std::span<const std::uint32_t> labels,
                            LossKind kind);

struct AdamHyper {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

template <typename T>
AdamState<T> make_adam_state(std::span<const Tensor<T>* const> params, AdamHyper hyper);

// Bias-corrected Adam; elements update in storage order.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads,
               AdamState<T>& state);

struct IterationMetrics {
  std::uint64_t batch_id = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // classification accuracy, or mse for regression
  double grad_norm = 0.0;
  double t_deq_ms = 0.0;
  double t_fwd_ms = 0.0;
  double t_bwd_ms = 0.0;
  double t_opt_ms = 0.0;
  std::uint64_t bytes_in = 0;
};

// {batch_id, loss, acc, grad_norm, t_deq_ms, t_fwd_ms, t_bwd_ms, t_opt_ms, bytes_in}
nlohmann::json to_json(const IterationMetrics& m);

struct TrainerConfig {
  SideConfig side;
  std::uint64_t seed = 0;
  AdamHyper adam;
  LossKind loss = LossKind::cross_entropy;
};

// Server-side training state: side-network parameters, optimizer moments and
// the metrics history. Single consumer; not thread-safe.
class Trainer {
 public:
  explicit Trainer(const TrainerConfig& config);

  // Dequantize, forward, loss, backward, Adam. Batches must arrive with
  // strictly increasing ids; anything else throws ProtocolError and leaves
  // the state untouched.
  IterationMetrics train_iteration(const ActivationBatch& batch, std::uint64_t bytes_in = 0);

  // Forward only, no state change.
  TensorF evaluate(const ActivationBatch& batch) const;

  const SideParams<float>& params() const noexcept { return params_; }
  const TrainerConfig& config() const noexcept { return config_; }
  const std::vector<IterationMetrics>& history() const noexcept { return history_; }
  std::uint64_t iterations() const noexcept { return history_.size(); }
  std::optional<std::uint64_t> last_batch_id() const noexcept { return last_batch_id_; }

 private:
  TrainerConfig config_;
  SideParams<float> params_;
  AdamState<float> adam_;
  std::vector<IterationMetrics> history_;
  std::optional<std::uint64_t> last_batch_id_;
};

}  // namespace mobillm
