#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "speechflow/cli.hpp"
#include "speechflow/tensor_io.hpp"

namespace speechflow {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli_dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("speechflow_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Small corpus and model shared by the pipeline tests.
std::vector<std::string> small(std::vector<std::string> args, const fs::path& dir) {
  for (const char* a : {"--seed", "5", "--dataset.size", "16", "--dataset.speakers", "2", "--dataset.draws", "2",
                        "--train.steps", "4", "--train.batch_size", "4", "--analysis.write_audio", "false"})
    args.push_back(a);
  args.push_back("--out-dir");
  args.push_back(dir.string());
  return args;
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fresh_dir("pipeline");
    ASSERT_EQ(run(small({"synth-data"}, dir_)).code, 0);
    ASSERT_EQ(run(small({"train"}, dir_)).code, 0);
  }
  static fs::path dir_;
};
fs::path Pipeline::dir_;

TEST(Cli, NoArgumentsPrintsUsage) {
  const Outcome r = run({});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
}

TEST(Cli, UnknownSubcommandIsUsageError) {
  const Outcome r = run({"frobnicate"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
}

TEST(Cli, HelpExitsZero) { EXPECT_EQ(run({"--help"}).code, 0); }

TEST(Cli, UnknownConfigFlagRejected) {
  const fs::path dir = fresh_dir("badflag");
  EXPECT_EQ(run({"synth-data", "--train.nope", "1", "--out-dir", dir.string()}).code, 1);
  EXPECT_EQ(run({"synth-data", "--train.lr", "fast", "--out-dir", dir.string()}).code, 1);
  EXPECT_EQ(run({"synth-data", "--train.batch_size", "0", "--out-dir", dir.string()}).code, 1);
}

TEST(Cli, UnknownKeyInConfigFileRejected) {
  const fs::path dir = fresh_dir("badfile");
  std::ofstream(dir / "c.json") << R"({"train": {"lr": 0.01, "momentum": 0.9}})";
  const Outcome r = run({"synth-data", "--config", (dir / "c.json").string(), "--out-dir", dir.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("train.momentum"), std::string::npos);
}

TEST(Cli, MissingModelIsRuntimeError) {
  const fs::path dir = fresh_dir("nomodel");
  const Outcome r = run({"sample", "--model", (dir / "absent.ckpt").string(), "--out-dir", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(r.out.empty());
  EXPECT_NE(r.err.find("error"), std::string::npos);
}

TEST(Config, OverrideOrderDefaultsFileFlags) {
  nlohmann::json c = default_run_config();
  EXPECT_EQ(c["train"]["lr"], 1e-4);
  merge_config(c, nlohmann::json::parse(R"({"train": {"lr": 0.01, "steps": 7}, "seed": 9})"));
  set_config_value(c, "train.lr", "0.5");
  set_config_value(c, "dataset.vowels", "aa,ae");
  set_config_value(c, "dataset.noise_snr_db", "null");
  const RunConfig rc = resolve_run_config(c);
  EXPECT_EQ(rc.train.learning_rate, 0.5);
  EXPECT_EQ(rc.train.steps, 7);
  EXPECT_EQ(rc.seed, 9u);
  EXPECT_EQ(rc.train.seed, 9u);
  EXPECT_EQ(rc.corpus.vowels.size(), 2u);
  EXPECT_FALSE(rc.corpus.noise_snr_db);
  EXPECT_EQ(rc.flow.size, rc.corpus.spectrogram.size);

  EXPECT_THROW(set_config_value(c, "train", "1"), ConfigError);
  EXPECT_THROW(set_config_value(c, "flow.levels", "2.5"), ConfigError);
  EXPECT_THROW(merge_config(c, nlohmann::json::parse(R"({"extra": 1})")), ConfigError);
  set_config_value(c, "flow.levels", "9");
  EXPECT_THROW(resolve_run_config(c), ConfigError);
}

TEST(Config, SweepParsing) {
  EXPECT_EQ(parse_sweep("0.1:0.9:0.1").size(), 9u);
  EXPECT_EQ(parse_sweep("0:0.8:0.1").size(), 9u);
  EXPECT_EQ(parse_sweep("0.25,0.5"), (std::vector<double>{0.25, 0.5}));
  EXPECT_THROW(parse_sweep("0:1"), ConfigError);
  EXPECT_THROW(parse_sweep("a,b"), ConfigError);
}

TEST_F(Pipeline, ArtifactsCarryConfigEcho) {
  EXPECT_TRUE(fs::exists(dir_ / "corpus" / "manifest.jsonl"));
  EXPECT_EQ(slurp(dir_ / "model.ckpt").substr(0, 4), "FSCK");
  const std::string metrics = slurp(dir_ / "metrics.csv");
  EXPECT_EQ(metrics.rfind("# config: {", 0), 0u);
  EXPECT_NE(metrics.find("\"lr\":0.0001"), std::string::npos);
}

TEST_F(Pipeline, InterpolateEmitsNineSpectrograms) {
  const fs::path out = dir_ / "interp";
  const Outcome r = run(small({"interpolate", "--model", (dir_ / "model.ckpt").string(), "--corpus",
                           (dir_ / "corpus").string(), "--a", "0", "--b", "2", "--alphas", "0.1:0.9:0.1"},
                          out));
  ASSERT_EQ(r.code, 0) << r.err;
  int count = 0;
  for (const auto& f : fs::directory_iterator(out / "interpolate"))
    if (f.path().extension() == ".fstn") {
      ++count;
      EXPECT_TRUE(load_tensor(f.path()).all_finite());
    }
  EXPECT_EQ(count, 9);
  EXPECT_TRUE(fs::exists(out / "interpolate" / "alpha_0.10.pgm"));
}

TEST_F(Pipeline, InterpolateWritesAudioWithBorrowedPhase) {
  const fs::path out = dir_ / "interp_audio";
  std::vector<std::string> args = small({"interpolate", "--model", (dir_ / "model.ckpt").string(), "--corpus",
                                         (dir_ / "corpus").string(), "--a", "0", "--b", "2", "--alphas", "0.5"},
                                        out);
  args.push_back("--analysis.write_audio");
  args.push_back("true");
  ASSERT_EQ(run(args).code, 0);
  EXPECT_TRUE(fs::exists(out / "interpolate" / "alpha_0.50.wav"));
}

TEST_F(Pipeline, DenoiseEmitsNineOutputs) {
  const fs::path out = dir_ / "den";
  const Outcome r = run(small({"denoise", "--model", (dir_ / "model.ckpt").string(), "--corpus",
                           (dir_ / "corpus").string(), "--beta-sweep", "0:0.8:0.1"},
                          out));
  ASSERT_EQ(r.code, 0) << r.err;
  int count = 0;
  for (const auto& f : fs::directory_iterator(out / "denoise")) count += f.path().extension() == ".fstn";
  EXPECT_EQ(count, 9);
  EXPECT_NE(r.out.find("best beta"), std::string::npos);
  const std::string csv = slurp(out / "denoise.csv");
  EXPECT_NE(csv.find("beta,mse_to_clean\n0,"), std::string::npos);
}

TEST_F(Pipeline, SampleIsReproducible) {
  const std::string model = (dir_ / "model.ckpt").string();
  ASSERT_EQ(run(small({"sample", "--model", model, "--n", "3"}, dir_ / "s1")).code, 0);
  ASSERT_EQ(run(small({"sample", "--model", model, "--n", "3"}, dir_ / "s2")).code, 0);
  EXPECT_EQ(slurp(dir_ / "s1" / "samples.fstn"), slurp(dir_ / "s2" / "samples.fstn"));
  EXPECT_EQ(load_tensors(dir_ / "s1" / "samples.fstn").size(), 3u);
}

TEST_F(Pipeline, EncodeLdaGaussReconstruct) {
  const std::string model = (dir_ / "model.ckpt").string(), corpus = (dir_ / "corpus").string();
  const fs::path out = dir_ / "analysis";
  ASSERT_EQ(run(small({"encode", "--model", model, "--corpus", corpus}, out)).code, 0);
  EXPECT_TRUE(fs::exists(out / "codes.csv"));

  for (const char* task : {"vowel", "gender", "speaker"}) {
    const Outcome r = run(small({"lda", "--model", model, "--corpus", corpus, "--task", task}, out));
    ASSERT_EQ(r.code, 0) << task << ": " << r.err;
    EXPECT_TRUE(fs::exists(out / (std::string("lda_") + task + "_pixels.csv")));
    EXPECT_TRUE(fs::exists(out / (std::string("lda_") + task + "_codes.csv")));
  }
  EXPECT_EQ(run(small({"lda", "--corpus", corpus, "--task", "tone"}, out)).code, 1);

  const Outcome g = run(small({"gauss-report", "--model", model, "--corpus", corpus, "--dims", "8"}, out));
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_NE(g.out.find("codes,8,"), std::string::npos);

  const Outcome rec = run(small({"reconstruct", "--corpus", corpus, "--entry", "M00-aa-0"}, out));
  ASSERT_EQ(rec.code, 0) << rec.err;
  EXPECT_TRUE(fs::exists(out / "reconstruct.wav"));
}

TEST(Cli, GradAuditDefaultTinyModelPasses) {
  const fs::path dir = fresh_dir("audit");
  const Outcome r = run({"grad-audit", "--out-dir", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  EXPECT_NE(r.out.find("step0.invconv.weight"), std::string::npos);
}

}  // namespace
}  // namespace speechflow
