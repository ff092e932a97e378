#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fox/checkpoint.hpp"
#include "fox/cli.hpp"
#include "fox/config.hpp"

namespace {

namespace fs = std::filesystem;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("fox_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(std::vector<std::string> args) {
    out_.str("");
    err_.str("");
    return fox::run_command(args, out_, err_);
  }

  fs::path write(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name) << text;
    return dir_ / name;
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir_;
  std::ostringstream out_, err_;
};

using Config = CliTest;

TEST_F(Config, EmptyFileGivesDefaults) {
  const fs::path p = write("empty.cfg", "");
  const fox::RunConfig cfg = fox::parse_config(&p, {});
  EXPECT_EQ(cfg.dump(), fox::RunConfig{}.dump());
}

TEST_F(Config, OverridesWinAndCommentsAreIgnored) {
  const fs::path p = write("a.cfg", "# toy\nmodel.d_model = 64   # width\n\nmodel.arch = llama\n");
  fox::RunConfig cfg = fox::parse_config(&p, {"model.d_model=128", "model.n_heads = 8"});
  EXPECT_EQ(cfg.model.d_model, 128);
  EXPECT_EQ(cfg.model.n_heads, 8);
  EXPECT_EQ(cfg.model.arch, fox::Arch::Llama);
  cfg = fox::parse_config(&p, {"model.d_model=128", "model.d_model=32"});
  EXPECT_EQ(cfg.model.d_model, 32);
}

TEST_F(Config, UnknownKeyNamesKeyAndLine) {
  const fs::path p = write("bad.cfg", "model.d_model = 64\nmodel.d_modell = 64\n");
  try {
    fox::parse_config(&p, {});
    FAIL() << "expected a config error";
  } catch (const fox::ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("model.d_modell"), std::string::npos) << msg;
    EXPECT_NE(msg.find(":2:"), std::string::npos) << msg;
  }
}

TEST_F(Config, UnparsableValuesAndStructure) {
  fs::path p = write("v.cfg", "train.peak_lr = fast\n");
  EXPECT_THROW(fox::parse_config(&p, {}), fox::ConfigError);
  p = write("w.cfg", "model.rope = maybe\n");
  EXPECT_THROW(fox::parse_config(&p, {}), fox::ConfigError);
  p = write("x.cfg", "just words\n");
  EXPECT_THROW(fox::parse_config(&p, {}), fox::ConfigError);
  EXPECT_THROW(fox::parse_config(nullptr, {"model.n_layers=2x"}), fox::ConfigError);
  EXPECT_THROW(fox::parse_config(nullptr, {"model.n_layers"}), fox::ConfigError);
}

TEST_F(Config, DumpRoundTrips) {
  fox::RunConfig cfg = fox::parse_config(nullptr, {"model.logf_cap=-1", "eval.needle_lengths=64,128",
                                                   "model.gate=fixed", "task.kind=needle"});
  fox::RunConfig again;
  fox::apply_config_text(again, cfg.dump());
  EXPECT_EQ(again.dump(), cfg.dump());
  EXPECT_EQ(again.model.logf_cap, -1.0);
  EXPECT_EQ(again.eval.needle_lengths, (std::vector<fox::Index>{64, 128}));
}

using Checkpoint = CliTest;

TEST_F(Checkpoint, RoundTripIsBitExact) {
  fox::ModelConfig cfg;
  fox::Rng rng(3);
  const auto p = fox::init_model_params<float>(cfg, rng);
  fox::ckpt_save(p, cfg, dir_ / "m.ckpt");
  const auto q = fox::ckpt_load(dir_ / "m.ckpt", cfg);
  std::vector<const fox::Matrix<float>*> a, b;
  fox::visit_model_params(p, cfg, [&](const std::string&, const fox::Matrix<float>& m, fox::ParamInfo) { a.push_back(&m); });
  fox::visit_model_params(q, cfg, [&](const std::string&, const fox::Matrix<float>& m, fox::ParamInfo) { b.push_back(&m); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i]->size(), b[i]->size());
    EXPECT_EQ(std::memcmp(a[i]->data(), b[i]->data(), sizeof(float) * a[i]->size()), 0);
  }
  const std::string bytes = slurp(dir_ / "m.ckpt");
  EXPECT_EQ(bytes.substr(0, 8), "FOXCKPT1");
  fox::ckpt_save(q, cfg, dir_ / "n.ckpt");
  EXPECT_EQ(slurp(dir_ / "n.ckpt"), bytes);
}

TEST_F(Checkpoint, LayoutOfASingleTensor) {
  fox::TensorRecord t;
  t.name = "w";
  t.dims = {1, 2};
  t.data = {1.0f, -2.0f};
  fox::write_checkpoint(dir_ / "t.ckpt", {t});
  const std::string b = slurp(dir_ / "t.ckpt");
  const std::string expect("FOXCKPT1\x01\x00\x00\x00\x01\x00w\x00\x02\x01\x00\x00\x00\x02\x00\x00\x00"
                           "\x00\x00\x80\x3f\x00\x00\x00\xc0",
                           8 + 4 + 2 + 1 + 1 + 1 + 8 + 8);
  EXPECT_EQ(b, expect);
}

TEST_F(Checkpoint, CorruptionIsDetected) {
  fox::ModelConfig cfg;
  fox::Rng rng(4);
  fox::ckpt_save(fox::init_model_params<float>(cfg, rng), cfg, dir_ / "m.ckpt");
  std::string bytes = slurp(dir_ / "m.ckpt");

  std::string bad = bytes;
  bad[3] = 'X';
  std::ofstream(dir_ / "magic.ckpt", std::ios::binary) << bad;
  EXPECT_THROW(fox::ckpt_load(dir_ / "magic.ckpt", cfg), fox::CheckpointError);

  std::ofstream(dir_ / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  EXPECT_THROW(fox::ckpt_load(dir_ / "short.ckpt", cfg), fox::CheckpointError);

  fox::ModelConfig wide = cfg;
  wide.d_model = 128;
  wide.d_head = 32;
  EXPECT_THROW(fox::ckpt_load(dir_ / "m.ckpt", wide), fox::CheckpointError);

  bad = bytes;
  bad[8 + 4 + 2 + 9] = 7;  // dtype of "embedding"
  std::ofstream(dir_ / "dtype.ckpt", std::ios::binary) << bad;
  EXPECT_THROW(fox::ckpt_load(dir_ / "dtype.ckpt", cfg), fox::CheckpointError);
  EXPECT_THROW(fox::ckpt_load(dir_ / "missing.ckpt", cfg), fox::CheckpointError);
}

using Commands = CliTest;

TEST_F(Commands, UnknownSubcommandPrintsUsage) {
  EXPECT_NE(run({"frobnicate"}), 0);
  EXPECT_NE(err_.str().find("frobnicate"), std::string::npos);
  EXPECT_NE(err_.str().find("gradcheck"), std::string::npos);
  EXPECT_NE(run({}), 0);
}

TEST_F(Commands, InitInspectPrintsHorizons) {
  ASSERT_EQ(run({"init-inspect", "--heads", "4", "--tmin", "2", "--tmax", "128", "--out", dir_.string()}), 0);
  const std::string csv = slurp(dir_ / "init.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "head,horizon,bias,forget");
  std::istringstream rows(csv);
  std::string line;
  std::getline(rows, line);
  std::vector<std::string> horizons;
  while (std::getline(rows, line)) {
    const auto a = line.find(',') + 1;
    horizons.push_back(line.substr(a, line.find(',', a) - a));
  }
  EXPECT_EQ(horizons, (std::vector<std::string>{"2", "8", "32", "128"}));
}

TEST_F(Commands, EquivAndGradcheckPass) {
  EXPECT_EQ(run({"equiv", "--seed", "0", "--out", dir_.string()}), 0) << out_.str();
  EXPECT_TRUE(fs::exists(dir_ / "equiv.csv"));
  EXPECT_EQ(run({"gradcheck", "--seed", "1", "--out", dir_.string()}), 0) << out_.str();
}

TEST_F(Commands, BenchTableShowsMemoryContract) {
  ASSERT_EQ(run({"bench", "--lens", "256,1024", "--tiles", "32,64", "--d-head", "16", "--out", dir_.string()}), 0);
  std::istringstream rows(slurp(dir_ / "bench.csv"));
  std::string line;
  std::getline(rows, line);
  EXPECT_EQ(line, "length,tile,naive_peak_bytes,tiled_peak_bytes");
  std::vector<std::vector<long long>> t;
  while (std::getline(rows, line)) {
    std::vector<long long> r;
    std::istringstream cells(line);
    std::string c;
    while (std::getline(cells, c, ',')) r.push_back(std::stoll(c));
    t.push_back(r);
  }
  ASSERT_EQ(t.size(), 4u);
  EXPECT_EQ(t[2][2], 16 * t[0][2]);  // naive ~ L^2
  EXPECT_EQ(t[0][3], t[2][3]);       // tiled constant in L
  EXPECT_EQ(t[1][3], t[3][3]);
}

TEST_F(Commands, TrainEvalNeedleDumpAreDeterministic) {
  const fs::path cfg = write("run.cfg",
                             "model.d_model = 16\nmodel.n_heads = 2\nmodel.d_head = 8\n"
                             "model.vocab_size = 16\ntask.seq_len = 12\ntask.copy_len = 4\n"
                             "train.total_tokens = 240\ntrain.batch_tokens = 24\ntrain.warmup_tokens = 24\n"
                             "eval.num_sequences = 2\neval.window = 3\neval.needle_trials = 2\n"
                             "eval.needle_lengths = 16,24\nneedle.haystack_len = 10\n"
                             "needle.n_filler = 8\nneedle.n_keys = 4\n");
  std::vector<std::string> snapshots;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path out = dir_ / ("rep" + std::to_string(rep));
    const std::string o = out.string();
    ASSERT_EQ(run({"train", "--config", cfg.string(), "--out", o, "--seed", "5"}), 0) << err_.str();
    EXPECT_NE(slurp(out / "config.resolved").find("train.seed = 5"), std::string::npos);
    ASSERT_EQ(run({"eval", "--config", cfg.string(), "--out", o, "--ckpt", (out / "model.ckpt").string()}), 0)
        << err_.str();
    ASSERT_EQ(run({"needle", "--config", cfg.string(), "--out", o, "--ckpt", (out / "model.ckpt").string(),
                   "--clamp", "-1"}),
              0)
        << err_.str();
    ASSERT_EQ(run({"ckpt-dump", "--ckpt", (out / "model.ckpt").string(), "--out", o}), 0) << err_.str();
    std::string snap;
    for (const char* f : {"metrics.csv", "eval.csv", "needle_grid.csv", "ckpt_dump.csv", "config.resolved"}) {
      ASSERT_TRUE(fs::exists(out / f)) << f;
      snap += slurp(out / f);
    }
    snapshots.push_back(snap);
  }
  EXPECT_EQ(snapshots[0], snapshots[1]);
  EXPECT_EQ(slurp(dir_ / "rep0" / "eval.csv").substr(0, 31), "position,loss_raw,loss_smoothed");
  EXPECT_EQ(slurp(dir_ / "rep0" / "needle_grid.csv").substr(0, 22), "length,depth,accuracy\n");
}

TEST_F(Commands, ConfigErrorsExitNonzero) {
  const fs::path cfg = write("bad.cfg", "model.widht = 3\n");
  EXPECT_EQ(run({"train", "--config", cfg.string(), "--out", dir_.string()}), 2);
  EXPECT_NE(err_.str().find("model.widht"), std::string::npos);
  EXPECT_NE(run({"eval", "--out", dir_.string(), "--ckpt", (dir_ / "none.ckpt").string()}), 0);
}

TEST_F(Commands, OutDirFromEnvironment) {
  ::setenv("FOX_OUT_DIR", (dir_ / "env").c_str(), 1);
  EXPECT_EQ(run({"init-inspect", "--heads", "2"}), 0);
  ::unsetenv("FOX_OUT_DIR");
  EXPECT_TRUE(fs::exists(dir_ / "env" / "init.csv"));
}

}  // namespace
