#ifndef FOX_EVAL_HPP_
#define FOX_EVAL_HPP_

// Measurement tools: per-token loss L(i), perplexity over length P(l),
// moving-average smoothing, and model-level accuracy probes.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fox/model.hpp"
#include "fox/tasks.hpp"

namespace fox {

// Positionwise mean of M equal-length loss vectors.
Eigen::VectorXd per_token_loss(const std::vector<Eigen::VectorXd>& per_seq);

// P(l) = exp(mean(L(1..l))).
Eigen::VectorXd perplexity_curve(const Eigen::VectorXd& losses);

// Centered moving average; the window is truncated at the ends.
Eigen::VectorXd smooth(const Eigen::VectorXd& v, Index window);

struct EvalReport {
  Eigen::VectorXd per_token_loss;
  Eigen::VectorXd smoothed;
  Index num_sequences = 0;
  Index window = 1;
};

// Next-token loss at every position of `n_seqs` samples of `stream`.
EvalReport evaluate_per_token_loss(const ModelConfig& cfg, const ModelParams<float>& params,
                                   const TaskStream& stream, Index n_seqs, Index window,
                                   std::uint64_t first_index = 0);

// Fraction of scored positions whose argmax prediction is the target.
double masked_token_accuracy(const ModelConfig& cfg, const ModelParams<float>& params,
                             const std::vector<TaskSample>& samples);

// Greedy exact match on the answer span. With teacher forcing the argmax at
// every answer position equals greedy decoding whenever all earlier answer
// tokens were right, so this is the greedy result.
bool needle_exact_match(const ModelConfig& cfg, const ModelParams<float>& params, const NeedleSample& s);

struct NeedleCell {
  Index length = 0;
  double depth = 0.0;
  double accuracy = 0.0;
};

// Accuracy per (total length, depth) cell over `trials` samples each.
std::vector<NeedleCell> needle_eval(const ModelConfig& cfg, const ModelParams<float>& params,
                                    const NeedleSpec& spec, const std::vector<Index>& lengths,
                                    const std::vector<double>& depths, Index trials, std::uint64_t seed);

void write_eval_csv(const std::filesystem::path& path, const EvalReport& report);
void write_needle_csv(const std::filesystem::path& path, const std::vector<NeedleCell>& grid);

}  // namespace fox

#endif  // FOX_EVAL_HPP_
