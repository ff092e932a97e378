#ifndef FOX_CONFIG_HPP_
#define FOX_CONFIG_HPP_

// Run configuration addressable by dotted keys. Files hold `key = value`
// lines with `#` comments; `--set key=value` overrides are applied after the
// file, in order, so the last assignment wins.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "fox/model.hpp"
#include "fox/tasks.hpp"
#include "fox/training.hpp"

namespace fox {

enum class TaskKind { Copy, Needle };

struct TaskConfig {
  TaskKind kind = TaskKind::Copy;
  Index seq_len = 66;
  Index copy_len = 32;
};

struct EvalConfig {
  Index num_sequences = 16;
  Index window = 11;
  Index seq_len = 0;  // 0: the task length
  std::vector<Index> needle_lengths;  // empty: fractions of the train length
  std::vector<double> needle_depths{0.0, 0.25, 0.5, 0.75, 1.0};
  Index needle_trials = 20;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  TaskConfig task;
  NeedleSpec needle;
  EvalConfig eval;

  // Resolved `key = value` lines, one per addressable key.
  std::string dump() const;
  void validate() const;
};

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

// `source` names the origin in error messages.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source = "<config>");

RunConfig parse_config(const std::filesystem::path* path, const std::vector<std::string>& overrides);

// Sequence stream for training (index 0..) of the configured task. Needle
// samples use the model vocabulary.
std::unique_ptr<TaskStream> make_task_stream(const RunConfig& cfg, std::uint64_t seed);

std::vector<Index> default_needle_lengths(Index train_len);

}  // namespace fox

#endif  // FOX_CONFIG_HPP_
