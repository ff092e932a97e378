#include "fox/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "fox/checkpoint.hpp"
#include "fox/config.hpp"
#include "fox/csv.hpp"
#include "fox/eval.hpp"
#include "fox/suites.hpp"

namespace fox {

namespace {

namespace fs = std::filesystem;

enum SeedStream : std::uint64_t { kDataStream = 1, kEvalStream = 2, kNeedleStream = 3 };

// Sample indices far beyond any training run.
constexpr std::uint64_t kHeldOutBase = std::uint64_t{1} << 48;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::string ckpt;
  std::optional<std::uint64_t> seed;
};

fs::path out_dir(const Common& c) {
  fs::path dir = ".";
  if (!c.out.empty()) {
    dir = c.out;
  } else if (const char* env = std::getenv("FOX_OUT_DIR"); env && *env) {
    dir = env;
  }
  fs::create_directories(dir);
  return dir;
}

RunConfig resolve(const Common& c, const fs::path& dir) {
  const fs::path cfg_path(c.config);
  std::vector<std::string> sets = c.sets;
  if (c.seed) sets.push_back("train.seed=" + std::to_string(*c.seed));
  RunConfig cfg = parse_config(c.config.empty() ? nullptr : &cfg_path, sets);
  cfg.validate();
  std::ofstream(dir / "config.resolved", std::ios::binary) << cfg.dump();
  return cfg;
}

void add_config_options(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "config file of `key = value` lines")->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "override, key=value (repeatable; later wins)");
  sub->add_option("--out", c.out, "output directory (default: $FOX_OUT_DIR or .)");
  sub->add_option("--seed", c.seed, "shorthand for --set train.seed=N");
}

void write_checks(const fs::path& path, const std::vector<CheckResult>& checks, std::ostream& out) {
  CsvWriter csv(path, "group,cases,worst,tolerance,pass");
  for (const auto& r : checks) {
    csv.row({r.group, format_number(static_cast<long long>(r.cases)), format_number(r.worst),
             format_number(r.tolerance), r.pass() ? "1" : "0"});
    out << std::left << std::setw(24) << r.group << " worst " << std::setw(12) << std::setprecision(3) << r.worst
        << " tol " << std::setw(8) << r.tolerance << (r.pass() ? "  ok" : "  FAIL") << '\n';
  }
}

bool all_pass(const std::vector<CheckResult>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& r) { return r.pass(); });
}

std::vector<Index> parse_index_list(const std::string& s) {
  std::vector<Index> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoll(item));
  }
  if (out.empty()) throw ConfigError("empty list '" + s + "'");
  return out;
}

int cmd_train(const Common& c, std::ostream& out) {
  const fs::path dir = out_dir(c);
  const RunConfig cfg = resolve(c, dir);
  const auto stream = make_task_stream(cfg, derive_seed(cfg.train.seed, kDataStream));
  TrainOutputs outputs{dir / "metrics.csv", dir / "model.ckpt"};
  const TrainResult res = train_loop(cfg.model, cfg.train, *stream, outputs);
  out << "steps " << res.log.size() << '\n';
  if (!res.log.empty()) {
    out << "initial_loss " << format_number(res.initial_loss) << '\n'
        << "final_loss " << format_number(res.log.back().loss) << '\n';
  }
  std::vector<TaskSample> held_out;
  for (std::uint64_t i = 0; i < 64; ++i) held_out.push_back(stream->sample(kHeldOutBase + i));
  out << "heldout_accuracy " << format_number(masked_token_accuracy(cfg.model, res.params, held_out)) << '\n'
      << "checkpoint " << outputs.checkpoint.string() << '\n';
  return 0;
}

ModelParams<float> load_model(const Common& c, const RunConfig& cfg) {
  if (c.ckpt.empty()) throw ConfigError("--ckpt is required");
  return ckpt_load(c.ckpt, cfg.model);
}

int cmd_eval(const Common& c, std::ostream& out) {
  const fs::path dir = out_dir(c);
  RunConfig cfg = resolve(c, dir);
  const ModelParams<float> params = load_model(c, cfg);
  if (cfg.eval.seq_len > 0) {
    if (cfg.task.kind == TaskKind::Copy) {
      cfg.task.seq_len = cfg.eval.seq_len;
    } else {
      cfg.needle.haystack_len = cfg.needle.haystack_for_total(cfg.eval.seq_len);
    }
  }
  const auto stream = make_task_stream(cfg, derive_seed(cfg.train.seed, kEvalStream));
  const EvalReport rep =
      evaluate_per_token_loss(cfg.model, params, *stream, cfg.eval.num_sequences, cfg.eval.window);
  write_eval_csv(dir / "eval.csv", rep);
  const Eigen::VectorXd ppl = perplexity_curve(rep.per_token_loss);
  out << "positions " << rep.per_token_loss.size() << '\n'
      << "mean_loss " << format_number(rep.per_token_loss.mean()) << '\n'
      << "perplexity " << format_number(ppl[ppl.size() - 1]) << '\n';
  return 0;
}

int cmd_needle(const Common& c, std::optional<double> clamp, std::ostream& out) {
  const fs::path dir = out_dir(c);
  RunConfig cfg = resolve(c, dir);
  const ModelParams<float> params = load_model(c, cfg);
  if (clamp) cfg.model.logf_cap = *clamp;
  NeedleSpec spec = cfg.needle;
  spec.vocab_size = cfg.model.vocab_size;
  const std::vector<Index> lengths =
      cfg.eval.needle_lengths.empty() ? default_needle_lengths(spec.total_len()) : cfg.eval.needle_lengths;
  const auto grid = needle_eval(cfg.model, params, spec, lengths, cfg.eval.needle_depths, cfg.eval.needle_trials,
                                derive_seed(cfg.train.seed, kNeedleStream));
  write_needle_csv(dir / "needle_grid.csv", grid);
  for (const auto& cell : grid) {
    out << "length " << cell.length << " depth " << format_number(cell.depth) << " accuracy "
        << format_number(cell.accuracy) << '\n';
  }
  return 0;
}

int cmd_bench(const Common& c, const std::string& lens, const std::string& tiles, Index d_head, std::ostream& out) {
  const fs::path dir = out_dir(c);
  const auto rows = run_bench(parse_index_list(lens), parse_index_list(tiles), c.seed.value_or(0), d_head);
  // Timings vary run to run; the CSV keeps only the deterministic columns.
  CsvWriter csv(dir / "bench.csv", "length,tile,naive_peak_bytes,tiled_peak_bytes");
  out << std::left << std::setw(8) << "length" << std::setw(6) << "tile" << std::setw(14) << "naive_bytes"
      << std::setw(14) << "tiled_bytes" << std::setw(12) << "naive_ms" << "tiled_ms\n";
  for (const auto& r : rows) {
    csv.row({format_number(static_cast<long long>(r.length)), format_number(static_cast<long long>(r.tile)),
             format_number(static_cast<long long>(r.naive_peak_bytes)),
             format_number(static_cast<long long>(r.tiled_peak_bytes))});
    out << std::setw(8) << r.length << std::setw(6) << r.tile << std::setw(14) << r.naive_peak_bytes
        << std::setw(14) << r.tiled_peak_bytes << std::setw(12) << std::fixed << std::setprecision(2)
        << r.naive_ms << r.tiled_ms << '\n'
        << std::defaultfloat;
  }
  return 0;
}

int cmd_init_inspect(const Common& c, Index heads, double tmin, double tmax, std::ostream& out) {
  const fs::path dir = out_dir(c);
  const auto horizons = decay_horizons(tmin, tmax, heads);
  const auto bias = forget_gate_init(tmin, tmax, heads);
  CsvWriter csv(dir / "init.csv", "head,horizon,bias,forget");
  out << "h  T          b          f\n";
  for (std::size_t h = 0; h < horizons.size(); ++h) {
    const double f = sigmoid(bias[h]);
    csv.row({format_number(static_cast<long long>(h)), format_number(horizons[h]), format_number(bias[h]),
             format_number(f)});
    out << h << "  " << format_number(horizons[h]) << "  " << format_number(bias[h]) << "  " << format_number(f)
        << '\n';
  }
  return 0;
}

int cmd_ckpt_dump(const Common& c, std::ostream& out) {
  if (c.ckpt.empty()) throw ConfigError("--ckpt is required");
  const fs::path dir = out_dir(c);
  const auto recs = read_checkpoint(c.ckpt);
  CsvWriter csv(dir / "ckpt_dump.csv", "name,dtype,dims,sum,max_abs");
  for (const auto& t : recs) {
    std::string dims;
    for (std::size_t i = 0; i < t.dims.size(); ++i) dims += (i ? "x" : "") + std::to_string(t.dims[i]);
    double sum = 0.0, max_abs = 0.0;
    for (float v : t.data) {
      sum += v;
      max_abs = std::max(max_abs, std::abs(static_cast<double>(v)));
    }
    csv.row({t.name, "f32", dims, format_number(sum), format_number(max_abs)});
    out << t.name << " f32 " << dims << " sum " << format_number(sum) << " max_abs " << format_number(max_abs)
        << '\n';
  }
  return 0;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Forget-gated attention toolkit", "fox"};
  app.require_subcommand(1);
  Common common;

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  auto* equiv = app.add_subcommand("equiv", "equivalence suites");
  for (auto* sub : {gradcheck, equiv}) {
    sub->add_option("--seed", common.seed, "suite seed");
    sub->add_option("--out", common.out, "output directory");
  }

  auto* train = app.add_subcommand("train", "train the toy model on a synthetic task");
  add_config_options(train, common);

  auto* eval = app.add_subcommand("eval", "per-token loss of a checkpoint");
  add_config_options(eval, common);
  eval->add_option("--ckpt", common.ckpt, "checkpoint path")->required();

  auto* needle = app.add_subcommand("needle", "needle retrieval grid of a checkpoint");
  add_config_options(needle, common);
  needle->add_option("--ckpt", common.ckpt, "checkpoint path")->required();
  std::optional<double> clamp;
  needle->add_option("--clamp", clamp, "cap every log forget gate at this value");

  auto* bench = app.add_subcommand("bench", "transient memory and time, naive vs tiled forward");
  std::string lens = "256,1024,4096", tiles = "64";
  Index d_head = 64;
  bench->add_option("--lens", lens, "comma-separated lengths");
  bench->add_option("--tiles", tiles, "comma-separated square tile sizes");
  bench->add_option("--d-head", d_head, "head dimension");
  bench->add_option("--seed", common.seed, "input seed");
  bench->add_option("--out", common.out, "output directory");

  auto* inspect = app.add_subcommand("init-inspect", "per-head forget gate initialisation");
  Index heads = 4;
  double tmin = 2.0, tmax = 128.0;
  inspect->add_option("--heads", heads, "number of heads");
  inspect->add_option("--tmin", tmin, "shortest decay horizon");
  inspect->add_option("--tmax", tmax, "longest decay horizon");
  inspect->add_option("--out", common.out, "output directory");

  auto* dump = app.add_subcommand("ckpt-dump", "list checkpoint tensors");
  dump->add_option("--ckpt", common.ckpt, "checkpoint path")->required();
  dump->add_option("--out", common.out, "output directory");

  if (!args.empty() && args.front().front() != '-' && !app.get_subcommand_no_throw(args.front())) {
    err << "error: unknown subcommand '" << args.front() << "'\n\n" << app.help();
    return 2;
  }
  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    const std::uint64_t seed = common.seed.value_or(0);
    if (gradcheck->parsed() || equiv->parsed()) {
      const bool grad = gradcheck->parsed();
      const auto checks = grad ? run_gradcheck(seed) : run_equiv(seed);
      write_checks(out_dir(common) / (grad ? "gradcheck.csv" : "equiv.csv"), checks, out);
      return all_pass(checks) ? 0 : 1;
    }
    if (train->parsed()) return cmd_train(common, out);
    if (eval->parsed()) return cmd_eval(common, out);
    if (needle->parsed()) return cmd_needle(common, clamp, out);
    if (bench->parsed()) return cmd_bench(common, lens, tiles, d_head, out);
    if (inspect->parsed()) return cmd_init_inspect(common, heads, tmin, tmax, out);
    if (dump->parsed()) return cmd_ckpt_dump(common, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  }
  return 2;
}

}  // namespace fox
