#include "fox/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fox/rng.hpp"

namespace fox {

TaskSample gen_copy_task(std::uint64_t seed, Index seq_len, Index copy_len, Index vocab) {
  if (copy_len < 1) throw InputError("copy task: copy_len must be >= 1");
  if (vocab < 3) throw InputError("copy task: vocab must leave room for SEP and PAD");
  if (2 * copy_len + 2 > seq_len) throw InputError("copy task: needs 2 * copy_len + 2 <= seq_len");
  Rng rng(seed);
  std::uniform_int_distribution<Token> draw(0, static_cast<Token>(vocab - 3));
  const auto sep = static_cast<Token>(vocab - 2);
  const auto pad = static_cast<Token>(vocab - 1);

  TaskSample s;
  s.tokens.assign(static_cast<std::size_t>(seq_len), pad);
  s.loss_mask.assign(static_cast<std::size_t>(seq_len), 0);
  for (Index i = 0; i < copy_len; ++i) s.tokens[static_cast<std::size_t>(i)] = draw(rng);
  s.tokens[static_cast<std::size_t>(copy_len)] = sep;
  for (Index i = 0; i < copy_len; ++i) {
    const auto dst = static_cast<std::size_t>(copy_len + 1 + i);
    s.tokens[dst] = s.tokens[static_cast<std::size_t>(i)];
    s.loss_mask[dst] = 1;
  }
  return s;
}

void NeedleSpec::validate() const {
  if (haystack_len < 0) throw InputError("needle: haystack_len must be >= 0");
  if (!(depth >= 0.0 && depth <= 1.0)) throw InputError("needle: depth must lie in [0, 1]");
  if (key_len < 1 || value_len < 1) throw InputError("needle: key and value spans must be non-empty");
  if (n_filler < 1 || n_keys < 1 || vocab_size - n_filler - n_keys < 1) {
    throw InputError("needle: vocabulary partition leaves an empty alphabet");
  }
}

Index NeedleSpec::haystack_for_total(Index total) const {
  const Index h = total - needle_len() - key_len - value_len;
  if (h < 0) throw InputError("needle: total length too short for the needle and query");
  return h;
}

NeedleSample gen_needle_task(const NeedleSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::uniform_int_distribution<Token> filler(0, spec.key_begin() - 1);
  std::uniform_int_distribution<Token> keys(spec.key_begin(), spec.value_begin() - 1);
  std::uniform_int_distribution<Token> values(spec.value_begin(), static_cast<Token>(spec.vocab_size - 1));

  std::vector<Token> key(static_cast<std::size_t>(spec.key_len));
  std::vector<Token> value(static_cast<std::size_t>(spec.value_len));
  for (auto& t : key) t = keys(rng);
  for (auto& t : value) t = values(rng);

  std::vector<Token> hay(static_cast<std::size_t>(spec.haystack_len));
  for (auto& t : hay) t = filler(rng);

  const auto pos = std::min<Index>(
      spec.haystack_len, static_cast<Index>(std::floor(spec.depth * static_cast<double>(spec.haystack_len))));

  NeedleSample s;
  s.tokens.reserve(static_cast<std::size_t>(spec.total_len()));
  s.tokens.insert(s.tokens.end(), hay.begin(), hay.begin() + pos);
  s.needle_pos = pos;
  if (spec.easy_mode) s.tokens.insert(s.tokens.end(), key.begin(), key.end());
  s.tokens.insert(s.tokens.end(), value.begin(), value.end());
  s.tokens.insert(s.tokens.end(), hay.begin() + pos, hay.end());
  s.tokens.insert(s.tokens.end(), key.begin(), key.end());
  s.answer_begin = static_cast<Index>(s.tokens.size());
  s.tokens.insert(s.tokens.end(), value.begin(), value.end());
  s.answer_end = static_cast<Index>(s.tokens.size());
  return s;
}

TaskSample to_task_sample(const NeedleSample& s) {
  TaskSample t;
  t.tokens = s.tokens;
  t.loss_mask.assign(s.tokens.size(), 0);
  for (Index i = s.answer_begin; i < s.answer_end; ++i) t.loss_mask[static_cast<std::size_t>(i)] = 1;
  return t;
}

CopyTaskStream::CopyTaskStream(std::uint64_t seed, Index seq_len, Index copy_len, Index vocab)
    : seed_(seed), seq_len_(seq_len), copy_len_(copy_len), vocab_(vocab) {
  gen_copy_task(0, seq_len_, copy_len_, vocab_);  // validates the shape
}

TaskSample CopyTaskStream::sample(std::uint64_t index) const {
  return gen_copy_task(derive_seed(seed_, index), seq_len_, copy_len_, vocab_);
}

NeedleTaskStream::NeedleTaskStream(std::uint64_t seed, NeedleSpec spec) : seed_(seed), spec_(spec) {
  spec_.validate();
}

TaskSample NeedleTaskStream::sample(std::uint64_t index) const {
  const std::uint64_t s = derive_seed(seed_, index);
  NeedleSpec spec = spec_;
  Rng rng(s);
  spec.depth = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return to_task_sample(gen_needle_task(spec, splitmix64(s)));
}

}  // namespace fox
