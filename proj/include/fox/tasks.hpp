#ifndef FOX_TASKS_HPP_
#define FOX_TASKS_HPP_

// Synthetic token-level tasks. Every generator is a pure function of its
// arguments and seed.

#include <cstdint>
#include <memory>
#include <vector>

#include "fox/model.hpp"

namespace fox {

struct TaskSample {
  std::vector<Token> tokens;
  // loss_mask[t] = 1 when tokens[t] is a prediction target.
  std::vector<std::uint8_t> loss_mask;
};

// [span][SEP][span][PAD...]; SEP = vocab-2, PAD = vocab-1, span tokens drawn
// from [0, vocab-2). Only the second span is scored.
TaskSample gen_copy_task(std::uint64_t seed, Index seq_len, Index copy_len, Index vocab);

struct NeedleSpec {
  Index haystack_len = 240;
  double depth = 0.5;  // in [0, 1]
  Index key_len = 1;
  Index value_len = 2;
  bool easy_mode = true;
  // Vocabulary partition: filler [0, n_filler), keys [n_filler, n_filler +
  // n_keys), values the rest.
  Index vocab_size = 32;
  Index n_filler = 16;
  Index n_keys = 8;

  void validate() const;
  Index needle_len() const { return easy_mode ? key_len + value_len : value_len; }
  // haystack + needle + query key + answer value
  Index total_len() const { return haystack_len + needle_len() + key_len + value_len; }
  // Haystack length that makes total_len() == total.
  Index haystack_for_total(Index total) const;
  Token key_begin() const { return static_cast<Token>(n_filler); }
  Token value_begin() const { return static_cast<Token>(n_filler + n_keys); }
  bool is_filler(Token t) const { return t >= 0 && t < key_begin(); }
  bool is_value(Token t) const { return t >= value_begin() && t < vocab_size; }
};

struct NeedleSample {
  std::vector<Token> tokens;
  Index needle_pos = 0;     // first needle token
  Index answer_begin = 0;   // value tokens at the end: [answer_begin, answer_end)
  Index answer_end = 0;
};

// Filler with the needle inserted at floor(depth * haystack_len); the query
// key and the answer value are appended. Easy mode puts KEY VALUE in the
// haystack, standard mode only VALUE.
NeedleSample gen_needle_task(const NeedleSpec& spec, std::uint64_t seed);

TaskSample to_task_sample(const NeedleSample& s);

// Indexed sample source: sample(i) is deterministic in (stream seed, i).
class TaskStream {
 public:
  virtual ~TaskStream() = default;
  virtual TaskSample sample(std::uint64_t index) const = 0;
  virtual Index seq_len() const = 0;
};

class CopyTaskStream final : public TaskStream {
 public:
  CopyTaskStream(std::uint64_t seed, Index seq_len, Index copy_len, Index vocab);
  TaskSample sample(std::uint64_t index) const override;
  Index seq_len() const override { return seq_len_; }

 private:
  std::uint64_t seed_;
  Index seq_len_, copy_len_, vocab_;
};

// Needles at depths drawn uniformly from [0, 1]; NeedleSpec::depth is ignored.
class NeedleTaskStream final : public TaskStream {
 public:
  NeedleTaskStream(std::uint64_t seed, NeedleSpec spec);
  TaskSample sample(std::uint64_t index) const override;
  Index seq_len() const override { return spec_.total_len(); }

 private:
  std::uint64_t seed_;
  NeedleSpec spec_;
};

}  // namespace fox

#endif  // FOX_TASKS_HPP_
