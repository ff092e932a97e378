#include "fox/eval.hpp"

#include <cmath>

#include "fox/csv.hpp"

namespace fox {

Eigen::VectorXd per_token_loss(const std::vector<Eigen::VectorXd>& per_seq) {
  if (per_seq.empty()) throw InputError("per_token_loss: no sequences");
  const Index len = per_seq.front().size();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(len);
  for (const auto& v : per_seq) {
    if (v.size() != len) throw ShapeError("per_token_loss: sequences differ in length");
    sum += v;
  }
  return sum / static_cast<double>(per_seq.size());
}

Eigen::VectorXd perplexity_curve(const Eigen::VectorXd& losses) {
  Eigen::VectorXd p(losses.size());
  double acc = 0.0;
  for (Index l = 0; l < losses.size(); ++l) {
    acc += losses[l];
    p[l] = std::exp(acc / static_cast<double>(l + 1));
  }
  return p;
}

Eigen::VectorXd smooth(const Eigen::VectorXd& v, Index window) {
  if (window < 1 || window % 2 == 0) throw ConfigError("smoothing window must be a positive odd number");
  const Index n = v.size(), half = window / 2;
  Eigen::VectorXd out(n);
  for (Index i = 0; i < n; ++i) {
    const Index lo = std::max<Index>(0, i - half);
    const Index hi = std::min<Index>(n - 1, i + half);
    out[i] = v.segment(lo, hi - lo + 1).mean();
  }
  return out;
}

namespace {

struct Scored {
  Matrix<float> logits;
  std::span<const Token> targets;
};

Scored score(const ModelConfig& cfg, const ModelParams<float>& params, const std::vector<Token>& tokens) {
  if (tokens.size() < 2) throw InputError("need at least two tokens to score");
  const std::size_t len = tokens.size() - 1;
  Scored s;
  s.logits = model_fwd(std::span<const Token>(tokens.data(), len), params, cfg).logits;
  s.targets = std::span<const Token>(tokens.data() + 1, len);
  return s;
}

Index argmax_row(const Matrix<float>& m, Index r) {
  Index best = 0;
  m.row(r).maxCoeff(&best);
  return best;
}

}  // namespace

EvalReport evaluate_per_token_loss(const ModelConfig& cfg, const ModelParams<float>& params,
                                   const TaskStream& stream, Index n_seqs, Index window,
                                   std::uint64_t first_index) {
  if (n_seqs < 1) throw InputError("evaluation needs at least one sequence");
  std::vector<Eigen::VectorXd> losses;
  for (Index k = 0; k < n_seqs; ++k) {
    const TaskSample s = stream.sample(first_index + static_cast<std::uint64_t>(k));
    const Scored sc = score(cfg, params, s.tokens);
    losses.push_back(cross_entropy(sc.logits, sc.targets).per_pos);
  }
  EvalReport r;
  r.per_token_loss = per_token_loss(losses);
  r.smoothed = smooth(r.per_token_loss, window);
  r.num_sequences = n_seqs;
  r.window = window;
  return r;
}

double masked_token_accuracy(const ModelConfig& cfg, const ModelParams<float>& params,
                             const std::vector<TaskSample>& samples) {
  long long hit = 0, total = 0;
  for (const auto& s : samples) {
    const Scored sc = score(cfg, params, s.tokens);
    for (std::size_t t = 0; t < sc.targets.size(); ++t) {
      if (!s.loss_mask[t + 1]) continue;
      ++total;
      hit += argmax_row(sc.logits, static_cast<Index>(t)) == sc.targets[t];
    }
  }
  if (total == 0) throw InputError("masked_token_accuracy: no scored positions");
  return static_cast<double>(hit) / static_cast<double>(total);
}

bool needle_exact_match(const ModelConfig& cfg, const ModelParams<float>& params, const NeedleSample& s) {
  // Only the prefix up to the last answer token is needed.
  const std::vector<Token> prefix(s.tokens.begin(), s.tokens.begin() + s.answer_end);
  const Scored sc = score(cfg, params, prefix);
  for (Index t = s.answer_begin; t < s.answer_end; ++t) {
    if (argmax_row(sc.logits, t - 1) != s.tokens[static_cast<std::size_t>(t)]) return false;
  }
  return true;
}

std::vector<NeedleCell> needle_eval(const ModelConfig& cfg, const ModelParams<float>& params,
                                    const NeedleSpec& spec, const std::vector<Index>& lengths,
                                    const std::vector<double>& depths, Index trials, std::uint64_t seed) {
  if (trials < 1) throw InputError("needle_eval: trials must be >= 1");
  if (lengths.empty() || depths.empty()) throw InputError("needle_eval: empty length or depth grid");
  std::vector<NeedleCell> grid;
  std::uint64_t cell = 0;
  for (Index len : lengths) {
    for (double depth : depths) {
      NeedleSpec s = spec;
      s.haystack_len = spec.haystack_for_total(len);
      s.depth = depth;
      s.validate();
      Index hits = 0;
      for (Index k = 0; k < trials; ++k) {
        const std::uint64_t sample_seed =
            derive_seed(seed, cell * static_cast<std::uint64_t>(trials) + static_cast<std::uint64_t>(k));
        hits += needle_exact_match(cfg, params, gen_needle_task(s, sample_seed));
      }
      grid.push_back({len, depth, static_cast<double>(hits) / static_cast<double>(trials)});
      ++cell;
    }
  }
  return grid;
}

void write_eval_csv(const std::filesystem::path& path, const EvalReport& report) {
  CsvWriter csv(path, "position,loss_raw,loss_smoothed");
  for (Index i = 0; i < report.per_token_loss.size(); ++i) {
    csv.row({format_number(static_cast<long long>(i + 1)), format_number(report.per_token_loss[i]),
             format_number(report.smoothed[i])});
  }
}

void write_needle_csv(const std::filesystem::path& path, const std::vector<NeedleCell>& grid) {
  CsvWriter csv(path, "length,depth,accuracy");
  for (const auto& c : grid) {
    csv.row({format_number(static_cast<long long>(c.length)), format_number(c.depth), format_number(c.accuracy)});
  }
}

}  // namespace fox
