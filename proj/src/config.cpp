#include "fox/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "fox/csv.hpp"

namespace fox {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("cannot parse '" + v + "' as a number for " + key);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true/false for " + key + ", got '" + v + "'");
}

template <typename N>
std::vector<N> parse_list(const std::string& key, const std::string& v) {
  std::vector<N> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<N>(key, item));
  }
  return out;
}

template <typename N>
std::string join(const std::vector<N>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<N>) {
      s += format_number(static_cast<double>(v[i]));
    } else {
      s += format_number(static_cast<long long>(v[i]));
    }
  }
  return s;
}

struct Field {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <typename C>
std::vector<Field> fields(C& c) {
  std::vector<Field> f;
  auto integer = [&f](const std::string& key, auto& ref) {
    f.push_back({key, [&ref, key](const std::string& v) { ref = parse_number<std::remove_cvref_t<decltype(ref)>>(key, v); },
                 [&ref] { return format_number(static_cast<long long>(ref)); }});
  };
  auto real = [&f](const std::string& key, double& ref) {
    f.push_back({key, [&ref, key](const std::string& v) { ref = parse_number<double>(key, v); },
                 [&ref] { return format_number(ref); }});
  };
  auto flag = [&f](const std::string& key, bool& ref) {
    f.push_back({key, [&ref, key](const std::string& v) { ref = parse_bool(key, v); },
                 [&ref] { return std::string(ref ? "true" : "false"); }});
  };

  ModelConfig& m = c.model;
  integer("model.n_layers", m.n_layers);
  integer("model.d_model", m.d_model);
  integer("model.n_heads", m.n_heads);
  integer("model.d_head", m.d_head);
  integer("model.vocab_size", m.vocab_size);
  integer("model.max_train_len", m.max_train_len);
  integer("model.max_len", m.max_len);
  f.push_back({"model.arch", [&m](const std::string& v) { m.arch = parse_arch(v); },
               [&m] { return to_string(m.arch); }});
  f.push_back({"model.gate", [&m](const std::string& v) { m.gate.kind = parse_gate_kind(v); },
               [&m] { return to_string(m.gate.kind); }});
  f.push_back({"model.gate_bias_init", [&m](const std::string& v) { m.gate.bias_init = parse_gate_bias_init(v); },
               [&m] { return to_string(m.gate.bias_init); }});
  real("model.gate_t_min", m.gate.t_min);
  real("model.gate_t_max", m.gate.t_max);
  real("model.mlp_ratio", m.mlp_ratio);
  flag("model.rope", m.rope);
  real("model.rope_theta", m.rope_theta);
  real("model.norm_eps", m.norm_eps);
  f.push_back({"model.backend", [&m](const std::string& v) { m.backend = parse_backend(v); },
               [&m] { return to_string(m.backend); }});
  integer("model.block_rows", m.tiles.block_rows);
  integer("model.block_cols", m.tiles.block_cols);
  f.push_back({"model.logf_cap",
               [&m](const std::string& v) {
                 if (v == "none") {
                   m.logf_cap.reset();
                 } else {
                   m.logf_cap = parse_number<double>("model.logf_cap", v);
                 }
               },
               [&m] { return m.logf_cap ? format_number(*m.logf_cap) : std::string("none"); }});

  TrainConfig& t = c.train;
  real("train.peak_lr", t.peak_lr);
  integer("train.warmup_tokens", t.warmup_tokens);
  integer("train.total_tokens", t.total_tokens);
  integer("train.batch_tokens", t.batch_tokens);
  real("train.beta1", t.beta1);
  real("train.beta2", t.beta2);
  real("train.weight_decay", t.weight_decay);
  real("train.clip_norm", t.clip_norm);
  real("train.adam_eps", t.adam_eps);
  integer("train.seed", t.seed);
  integer("train.checkpoint_interval", t.checkpoint_interval);

  TaskConfig& k = c.task;
  f.push_back({"task.kind",
               [&k](const std::string& v) {
                 if (v == "copy") {
                   k.kind = TaskKind::Copy;
                 } else if (v == "needle") {
                   k.kind = TaskKind::Needle;
                 } else {
                   throw ConfigError("task.kind must be copy or needle, got '" + v + "'");
                 }
               },
               [&k] { return std::string(k.kind == TaskKind::Copy ? "copy" : "needle"); }});
  integer("task.seq_len", k.seq_len);
  integer("task.copy_len", k.copy_len);

  NeedleSpec& n = c.needle;
  integer("needle.haystack_len", n.haystack_len);
  integer("needle.key_len", n.key_len);
  integer("needle.value_len", n.value_len);
  flag("needle.easy_mode", n.easy_mode);
  integer("needle.n_filler", n.n_filler);
  integer("needle.n_keys", n.n_keys);

  EvalConfig& e = c.eval;
  integer("eval.num_sequences", e.num_sequences);
  integer("eval.window", e.window);
  integer("eval.seq_len", e.seq_len);
  f.push_back({"eval.needle_lengths", [&e](const std::string& v) { e.needle_lengths = parse_list<Index>("eval.needle_lengths", v); },
               [&e] { return join(e.needle_lengths); }});
  f.push_back({"eval.needle_depths", [&e](const std::string& v) { e.needle_depths = parse_list<double>("eval.needle_depths", v); },
               [&e] { return join(e.needle_depths); }});
  integer("eval.needle_trials", e.needle_trials);
  return f;
}

}  // namespace

std::string RunConfig::dump() const {
  RunConfig copy = *this;
  std::string out;
  for (const auto& f : fields(copy)) out += f.key + " = " + f.get() + "\n";
  return out;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (task.kind == TaskKind::Copy) {
    if (2 * task.copy_len + 2 > task.seq_len) throw ConfigError("task.seq_len too short for task.copy_len");
  } else {
    NeedleSpec n = needle;
    n.vocab_size = model.vocab_size;
    n.validate();
  }
  if (eval.window < 1 || eval.window % 2 == 0) throw ConfigError("eval.window must be a positive odd number");
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (auto& f : fields(cfg)) {
    if (f.key == key) {
      f.set(value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    try {
      apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw ConfigError(where + e.what());
    }
  }
}

RunConfig parse_config(const std::filesystem::path* path, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config file " + path->string());
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(cfg, ss.str(), path->string());
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    apply_setting(cfg, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
  return cfg;
}

std::unique_ptr<TaskStream> make_task_stream(const RunConfig& cfg, std::uint64_t seed) {
  if (cfg.task.kind == TaskKind::Copy) {
    return std::make_unique<CopyTaskStream>(seed, cfg.task.seq_len, cfg.task.copy_len, cfg.model.vocab_size);
  }
  NeedleSpec n = cfg.needle;
  n.vocab_size = cfg.model.vocab_size;
  return std::make_unique<NeedleTaskStream>(seed, n);
}

std::vector<Index> default_needle_lengths(Index train_len) {
  std::vector<Index> out;
  for (double r : {0.25, 0.5, 1.0, 1.5, 2.0}) out.push_back(static_cast<Index>(std::llround(r * static_cast<double>(train_len))));
  return out;
}

}  // namespace fox
