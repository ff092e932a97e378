#include "fox/training.hpp"

#include <cmath>
#include <numbers>

#include "fox/checkpoint.hpp"
#include "fox/csv.hpp"

namespace fox {

void TrainConfig::validate() const {
  if (!(peak_lr > 0.0)) throw ConfigError("train.peak_lr must be positive");
  if (warmup_tokens < 0 || total_tokens < 0 || batch_tokens < 1) {
    throw ConfigError("train token counts must be non-negative and batch_tokens positive");
  }
  if (warmup_tokens > total_tokens) throw ConfigError("train.warmup_tokens exceeds train.total_tokens");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train betas must lie in [0, 1)");
  }
  if (weight_decay < 0.0 || !(clip_norm > 0.0) || !(adam_eps > 0.0)) {
    throw ConfigError("train.weight_decay, clip_norm and adam_eps out of range");
  }
  if (checkpoint_interval < 0) throw ConfigError("train.checkpoint_interval must be >= 0");
}

double lr_schedule(std::int64_t tokens_seen, const TrainConfig& cfg) {
  const auto t = static_cast<double>(std::clamp<std::int64_t>(tokens_seen, 0, cfg.total_tokens));
  const auto warm = static_cast<double>(cfg.warmup_tokens);
  const auto total = static_cast<double>(cfg.total_tokens);
  if (t < warm) return cfg.peak_lr * t / warm;
  if (total <= warm) return cfg.peak_lr;
  const double progress = (t - warm) / (total - warm);
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
std::vector<ParamSlot<T>> param_slots(ModelParams<T>& params, ModelParams<T>& grads, const ModelConfig& cfg) {
  std::vector<ParamSlot<T>> slots;
  visit_model_params(params, cfg, [&](const std::string& name, Matrix<T>& m, ParamInfo info) {
    slots.push_back({name, &m, nullptr, info});
  });
  std::size_t i = 0;
  visit_model_params(grads, cfg, [&](const std::string& name, Matrix<T>& m, ParamInfo) {
    if (i >= slots.size() || slots[i].name != name || slots[i].value->rows() != m.rows() ||
        slots[i].value->cols() != m.cols()) {
      throw ContractError("param_slots: gradient layout differs at " + name);
    }
    slots[i++].grad = &m;
  });
  if (i != slots.size()) throw ContractError("param_slots: gradient tensor count mismatch");
  return slots;
}

template <typename T>
double clip_grad_norm(std::vector<Matrix<T>*> grads, double max_norm) {
  double sq = 0.0;
  for (const Matrix<T>* g : grads) {
    for (Index i = 0; i < g->size(); ++i) {
      const double v = static_cast<double>(g->data()[i]);
      if (!std::isfinite(v)) throw TrainingFault("non-finite gradient");
      sq += v * v;
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (Matrix<T>* g : grads) *g *= s;
  }
  return norm;
}

template <typename T>
void adamw_step(std::vector<ParamSlot<T>>& slots, AdamWState<T>& state, double lr, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& s : slots) {
      state.m.push_back(Matrix<T>::Zero(s.value->rows(), s.value->cols()));
      state.v.push_back(Matrix<T>::Zero(s.value->rows(), s.value->cols()));
    }
  }
  if (state.m.size() != slots.size()) throw ContractError("adamw_step: state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);

  for (std::size_t k = 0; k < slots.size(); ++k) {
    ParamSlot<T>& s = slots[k];
    if (s.info.frozen) continue;
    Matrix<T>& w = *s.value;
    const Matrix<T>& g = *s.grad;
    if (s.info.decay && cfg.weight_decay > 0.0) w *= static_cast<T>(1.0 - lr * cfg.weight_decay);
    Matrix<T>& m = state.m[k];
    Matrix<T>& v = state.v[k];
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    for (Index i = 0; i < w.size(); ++i) {
      const double mh = static_cast<double>(m.data()[i]) / bc1;
      const double vh = static_cast<double>(v.data()[i]) / bc2;
      w.data()[i] -= static_cast<T>(lr * mh / (std::sqrt(vh) + cfg.adam_eps));
    }
  }
}

namespace {

template <typename T>
void accumulate(ModelParams<T>& into, ModelParams<T>& add, const ModelConfig& cfg) {
  for (auto& s : param_slots(into, add, cfg)) *s.value += *s.grad;
}

}  // namespace

double batch_loss(const ModelConfig& cfg, const ModelParams<float>& params,
                  const std::vector<TaskSample>& batch, ModelParams<float>* grads) {
  double n_targets = 0.0;
  for (const auto& s : batch) {
    for (std::size_t t = 1; t < s.loss_mask.size(); ++t) n_targets += s.loss_mask[t];
  }
  if (n_targets == 0.0) throw InputError("batch has no scored positions");

  double total = 0.0;
  for (const auto& s : batch) {
    const auto len = static_cast<Index>(s.tokens.size()) - 1;
    const std::span<const Token> inputs(s.tokens.data(), static_cast<std::size_t>(len));
    const std::span<const Token> targets(s.tokens.data() + 1, static_cast<std::size_t>(len));
    ModelOutput<float> out = model_fwd(inputs, params, cfg);
    const CrossEntropy ce = cross_entropy(out.logits, targets);
    Eigen::VectorXd w(len);
    for (Index t = 0; t < len; ++t) {
      w[t] = s.loss_mask[static_cast<std::size_t>(t + 1)] / n_targets;
      total += w[t] * ce.per_pos[t];
    }
    if (grads) {
      const Matrix<float> dlogits = cross_entropy_grad(out.logits, targets, w);
      ModelParams<float> g = model_bwd(out.acts, dlogits, params, cfg);
      accumulate(*grads, g, cfg);
    }
  }
  return total;
}

TrainResult train_loop(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const TaskStream& stream,
                       const TrainOutputs& outputs, const StepCallback& callback) {
  model_cfg.validate();
  train_cfg.validate();
  const Index seq_len = stream.seq_len();
  if (seq_len - 1 > model_cfg.max_train_len) {
    throw ConfigError("task sequences are longer than model.max_train_len");
  }
  const std::int64_t per_batch = std::max<std::int64_t>(1, train_cfg.batch_tokens / seq_len);
  const std::int64_t batch_tokens = per_batch * seq_len;
  const std::int64_t n_steps = train_cfg.total_tokens / batch_tokens;

  Rng init_rng = make_rng(train_cfg.seed, 0);
  TrainResult res;
  res.params = init_model_params<float>(model_cfg, init_rng);
  ModelParams<float> grads = zeros_like(res.params, model_cfg);
  auto slots = param_slots(res.params, grads, model_cfg);
  std::vector<Matrix<float>*> trainable;
  for (auto& s : slots) {
    if (!s.info.frozen) trainable.push_back(s.grad);
  }
  AdamWState<float> opt;

  std::optional<CsvWriter> csv;
  if (!outputs.metrics_csv.empty()) csv.emplace(outputs.metrics_csv, "step,tokens,lr,loss,grad_norm");
  auto save = [&] {
    if (!outputs.checkpoint.empty()) ckpt_save(res.params, model_cfg, outputs.checkpoint);
  };
  if (n_steps == 0) save();

  std::uint64_t next_sample = 0;
  std::int64_t tokens = 0;
  for (std::int64_t step = 1; step <= n_steps; ++step) {
    std::vector<TaskSample> batch;
    for (std::int64_t b = 0; b < per_batch; ++b) batch.push_back(stream.sample(next_sample++));
    for (auto& s : slots) s.grad->setZero();

    StepRecord rec;
    rec.step = step;
    rec.lr = lr_schedule(tokens, train_cfg);
    rec.loss = batch_loss(model_cfg, res.params, batch, &grads);
    tokens += batch_tokens;
    rec.tokens = tokens;
    if (!std::isfinite(rec.loss)) {
      if (csv) {
        csv->row({format_number(static_cast<long long>(step)), format_number(static_cast<long long>(tokens)),
                  format_number(rec.lr), "nan", "nan"});
        csv->flush();
      }
      throw TrainingFault("non-finite loss at step " + std::to_string(step));
    }
    rec.grad_norm = clip_grad_norm(trainable, train_cfg.clip_norm);
    adamw_step(slots, opt, rec.lr, train_cfg);

    if (step == 1) res.initial_loss = rec.loss;
    res.log.push_back(rec);
    if (csv) {
      csv->row({format_number(static_cast<long long>(rec.step)), format_number(static_cast<long long>(rec.tokens)),
                format_number(rec.lr), format_number(rec.loss), format_number(rec.grad_norm)});
    }
    const bool stop = callback && callback(rec, res.params);
    if (stop || step == n_steps ||
        (train_cfg.checkpoint_interval > 0 && step % train_cfg.checkpoint_interval == 0)) {
      save();
    }
    if (stop) break;
  }
  return res;
}

#define FOX_INSTANTIATE(T)                                                                           \
  template std::vector<ParamSlot<T>> param_slots<T>(ModelParams<T>&, ModelParams<T>&, const ModelConfig&); \
  template double clip_grad_norm<T>(std::vector<Matrix<T>*>, double);                               \
  template void adamw_step<T>(std::vector<ParamSlot<T>>&, AdamWState<T>&, double, const TrainConfig&);

FOX_INSTANTIATE(float)
FOX_INSTANTIATE(double)
#undef FOX_INSTANTIATE

}  // namespace fox
