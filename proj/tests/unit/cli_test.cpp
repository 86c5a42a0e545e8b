#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "ramreid/config.hpp"
#include "ramreid/data.hpp"

namespace ramreid::cli {
namespace {

namespace fs = std::filesystem;

struct RunResult {
  int code;
  std::string out;
  std::string err;
};

RunResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "ramreid");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ramreid_cli_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Relative path -> contents for every file under `root`.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_bytes(e.path());
  }
  return files;
}

// Small enough that a four-stage run takes well under a second per stage.
const std::vector<std::string> kSmall = {
    "--set", "synthetic.num_ids=6",      "--set", "synthetic.images_per_id=4",
    "--set", "synthetic.test_ids=2",     "--set", "synthetic.queries_per_id=1",
    "--set", "train.epochs_per_stage=2", "--set", "train.batch_size=4",
    "--set", "model.fc_dim=16"};

std::vector<std::string> with_small(std::vector<std::string> args) {
  args.insert(args.end(), kSmall.begin(), kSmall.end());
  return args;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    // ctest runs each case in its own process; keep their fixtures apart.
    root_ = scratch("suite_" + std::to_string(::getpid()));
    const RunResult gen = run(with_small({"gen-synthetic", "--out", (root_ / "data").string()}));
    ASSERT_EQ(gen.code, 0) << gen.err;
    const RunResult train = run(with_small({"train", "--out", (root_ / "train").string(), "--set",
                                            "data.manifest=" + manifest().string()}));
    ASSERT_EQ(train.code, 0) << train.err;
  }
  static fs::path manifest() { return root_ / "data" / "manifest.csv"; }
  static fs::path checkpoint(const std::string& name) { return root_ / "train" / "checkpoints" / name; }

  static fs::path root_;
};

fs::path CliTest::root_;

TEST_F(CliTest, GenSyntheticWritesEveryRow) {
  const DatasetManifest m = load_manifest(manifest());
  EXPECT_EQ(m.samples.size(), 24u);
  EXPECT_TRUE(fs::exists(root_ / "data" / "config.txt"));
  EXPECT_TRUE(fs::exists(root_ / "data" / "spec.txt"));
}

TEST_F(CliTest, GenSyntheticIsByteIdentical) {
  const fs::path again = scratch("gen_again");
  ASSERT_EQ(run(with_small({"gen-synthetic", "--out", again.string()})).code, 0);
  EXPECT_EQ(tree(again), tree(root_ / "data"));
  const fs::path other = scratch("gen_other");
  ASSERT_EQ(run(with_small({"gen-synthetic", "--out", other.string(), "--seed", "2"})).code, 0);
  EXPECT_NE(tree(other), tree(root_ / "data"));
}

TEST_F(CliTest, TrainWritesFourCheckpointsAndLog) {
  for (const char* name : {"baseline", "BN", "BN+R", "RAM"}) {
    EXPECT_TRUE(fs::exists(checkpoint(name) / "manifest.txt")) << name;
  }
  std::ifstream log(root_ / "train" / "train_log.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    EXPECT_TRUE(nlohmann::json::parse(line).is_object());
    ++lines;
  }
  EXPECT_EQ(lines, 8u);
}

TEST_F(CliTest, ResolvedConfigReproducesTrainingBitwise) {
  const fs::path again = scratch("train_again");
  const RunResult r = run({"train", "--config", (root_ / "train" / "config.txt").string(), "--out",
                           again.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(tree(again), tree(root_ / "train"));
}

TEST_F(CliTest, StageFlagStopsEarly) {
  const fs::path out = scratch("train_stage");
  const RunResult r = run(with_small({"train", "--out", out.string(), "--stage", "conv", "--set",
                                      "data.manifest=" + manifest().string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t count = 0;
  for (const auto& e : fs::directory_iterator(out / "checkpoints")) {
    EXPECT_EQ(e.path().filename(), "baseline");
    ++count;
  }
  EXPECT_EQ(count, 1u);
  EXPECT_EQ(KeyValueConfig::load(out / "config.txt").get_string("train.stages"), "conv");
}

TEST_F(CliTest, EvaluateWritesReportsAndTable) {
  const fs::path out = scratch("evaluate");
  const RunResult r = run({"evaluate", "--out", out.string(), "--set",
                           "eval.checkpoint=" + checkpoint("RAM").string(), "--set",
                           "data.manifest=" + manifest().string(), "--selections", "f_c,f_c+f_b+f_r+f_a"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(read_bytes(out / "f_c+f_b+f_r+f_a.json"));
  EXPECT_GE(j.at("map").get<double>(), 0.0);
  EXPECT_LE(j.at("map").get<double>(), 1.0);
  EXPECT_TRUE(fs::exists(out / "f_c.json"));
  const std::string table = read_bytes(out / "table.md");
  EXPECT_NE(table.find("| model | features | mAP | Top-1 | Top-5 |"), std::string::npos) << table;
  EXPECT_NE(table.find("[f_c;f_b;f_r;f_a]"), std::string::npos);
  EXPECT_EQ(KeyValueConfig::load(out / "config.txt").get_string("eval.selections"), "f_c,f_c+f_b+f_r+f_a");
}

TEST_F(CliTest, EvaluateRandomGalleryProtocol) {
  const fs::path out = scratch("evaluate_random");
  const RunResult r = run({"evaluate", "--out", out.string(), "--set",
                           "eval.checkpoint=" + checkpoint("baseline").string(), "--set",
                           "data.manifest=" + manifest().string(), "--selections", "f_c",
                           "--protocol", "random_gallery", "--trials", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(read_bytes(out / "f_c.json"));
  EXPECT_EQ(j.at("trials").size(), 3u);
}

TEST_F(CliTest, AttributeFeatureOnBaselineFails) {
  const RunResult r = run({"evaluate", "--out", scratch("bad_sel").string(), "--set",
                           "eval.checkpoint=" + checkpoint("baseline").string(), "--set",
                           "data.manifest=" + manifest().string(), "--selections", "f_a"});
  EXPECT_EQ(r.code, exit_code_for("value"));
  EXPECT_NE(r.err.find("error[value]"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("f_a"), std::string::npos) << r.err;
}

TEST_F(CliTest, ExtractWritesTables) {
  const fs::path out = scratch("extract");
  const RunResult r = run({"extract", "--out", out.string(), "--set",
                           "eval.checkpoint=" + checkpoint("BN").string(), "--set",
                           "data.manifest=" + manifest().string(), "--selections", "f_c+f_b"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "f_c+f_b.ramf"));
  EXPECT_TRUE(fs::exists(out / "f_c+f_b.ramf.csv"));
}

TEST(Cli, AblateRunsEveryStage) {
  const fs::path out = scratch("ablate");
  const RunResult r = run(with_small({"ablate", "--out", out.string(), "--trials", "2"}));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string md = read_bytes(out / "ablation.md");
  for (const char* row : {"| baseline | f_c |", "| RAM | [f_c;f_b;f_r;f_a] |", "| BN+R | [f_c;f_b;f_r] |"}) {
    EXPECT_NE(md.find(row), std::string::npos) << row << "\n" << md;
  }
  EXPECT_TRUE(fs::exists(out / "metrics" / "RAM" / "f_c+f_b+f_r+f_a.json"));
  EXPECT_TRUE(fs::exists(out / "data" / "manifest.csv"));
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run({"train"}).code, 2);
  EXPECT_EQ(run({"nonsense"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
  const RunResult zero = run({"gen-synthetic", "--out", scratch("zero").string(), "--set", "synthetic.num_ids=0"});
  EXPECT_EQ(zero.code, 3);
  EXPECT_NE(zero.err.find("error[config]"), std::string::npos) << zero.err;
  const RunResult unknown = run({"gen-synthetic", "--out", scratch("unknown").string(), "--set", "synthetic.colour=3"});
  EXPECT_EQ(unknown.code, 3);
  EXPECT_NE(unknown.err.find("synthetic.colour"), std::string::npos);
  const RunResult missing = run({"evaluate", "--out", scratch("missing").string(), "--set",
                                 "eval.checkpoint=" + scratch("no_such_checkpoint").string()});
  EXPECT_EQ(missing.code, 5) << missing.err;
  EXPECT_EQ(run({"train", "--out", scratch("stage").string(), "--stage", "wheels"}).code, 3);
}

TEST(Cli, ConfigFileThenFlags) {
  const fs::path dir = scratch("layers");
  fs::create_directories(dir);
  std::ofstream(dir / "run.txt") << "synthetic.num_ids = 5\nsynthetic.seed = 4\n";
  CommandOptions options;
  options.config_file = (dir / "run.txt").string();
  options.seed = 9;
  options.assignments = {"synthetic.images_per_id=3"};
  const KeyValueConfig c = resolve_command_config("gen-synthetic", options);
  EXPECT_EQ(c.get_int("synthetic.num_ids"), 5);
  EXPECT_EQ(c.get_int("synthetic.seed"), 9);
  EXPECT_EQ(c.get_int("synthetic.images_per_id"), 3);
  EXPECT_EQ(c.get_int("train.seed"), 1);
  const KeyValueConfig ablate = resolve_command_config("ablate", options);
  EXPECT_EQ(ablate.get_int("train.seed"), 9);
  EXPECT_EQ(ablate.get_int("eval.seed"), 9);
}

TEST(Cli, LimitStagesAcceptsCheckpointNames) {
  KeyValueConfig c;
  c.set("train.stages", "conv,bn,region,attribute");
  limit_stages(c, "BN+R");
  EXPECT_EQ(c.get_string("train.stages"), "conv,bn,region");
}

}  // namespace
}  // namespace ramreid::cli
