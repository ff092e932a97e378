#ifndef FOX_TRAINING_HPP_
#define FOX_TRAINING_HPP_

// AdamW with linear warmup and cosine decay to zero, global-norm clipping and
// weight decay on everything except RMSNorm scales and gate biases.
// Schedules are measured in tokens, not steps.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fox/model.hpp"
#include "fox/tasks.hpp"

namespace fox {

struct TrainConfig {
  double peak_lr = 2e-3;
  std::int64_t warmup_tokens = 8192;
  std::int64_t total_tokens = 262144;
  std::int64_t batch_tokens = 1024;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  double clip_norm = 1.0;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_interval = 0;  // steps; 0 disables intermediate checkpoints

  void validate() const;
};

double lr_schedule(std::int64_t tokens_seen, const TrainConfig& cfg);

template <typename T>
struct ParamSlot {
  std::string name;
  Matrix<T>* value = nullptr;
  Matrix<T>* grad = nullptr;
  ParamInfo info;
};

// Pairs every tensor of `params` with its counterpart in `grads`.
template <typename T>
std::vector<ParamSlot<T>> param_slots(ModelParams<T>& params, ModelParams<T>& grads, const ModelConfig& cfg);

// Scales all gradients by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the norm before clipping. Throws TrainingFault on a
// non-finite gradient.
template <typename T>
double clip_grad_norm(std::vector<Matrix<T>*> grads, double max_norm);

template <typename T>
struct AdamWState {
  std::vector<Matrix<T>> m, v;
  std::int64_t step = 0;
};

// One decoupled-decay AdamW update. Frozen tensors are skipped entirely.
template <typename T>
void adamw_step(std::vector<ParamSlot<T>>& slots, AdamWState<T>& state, double lr, const TrainConfig& cfg);

struct StepRecord {
  std::int64_t step = 0;
  std::int64_t tokens = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct TrainOutputs {
  std::filesystem::path metrics_csv;  // empty: no CSV
  std::filesystem::path checkpoint;   // empty: no checkpoints
};

struct TrainResult {
  ModelParams<float> params;
  std::vector<StepRecord> log;
  double initial_loss = 0.0;
};

// Return true to stop after the current step.
using StepCallback = std::function<bool(const StepRecord&, const ModelParams<float>&)>;

// Weighted mean of masked next-token losses over a batch; accumulates the
// gradient into `grads` when non-null.
double batch_loss(const ModelConfig& cfg, const ModelParams<float>& params,
                  const std::vector<TaskSample>& batch, ModelParams<float>* grads);

TrainResult train_loop(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const TaskStream& stream,
                       const TrainOutputs& outputs, const StepCallback& callback = {});

}  // namespace fox

#endif  // FOX_TRAINING_HPP_
