#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "decayrnn/cli.hpp"
#include "decayrnn/format.hpp"

using namespace decayrnn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("decayrnn_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void generate(const std::string& sub, const std::string& correlation = "0.6") {
    ASSERT_EQ(call({"generate", "--samples", "50", "--vars", "3", "--classes", "2", "--correlation", correlation,
                    "--seed", "3", "--out-dir", path(sub)})
                  .code,
              kExitOk);
  }

  void write(const std::string& name, const std::string& body) const { std::ofstream(dir_ / name) << body; }

  fs::path dir_;
};

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return files;
}

}  // namespace

TEST(Cli, ParamCountPublishedRow) {
  const Outcome r = call({"param-count", "--kind", "grud", "--vars", "33", "--hidden", "49", "--outputs", "1"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_EQ(r.out, "18838\n");
}

TEST(Cli, ParamCountFromBudget) {
  const Outcome r = call({"param-count", "--kind", "gru-simple", "--vars", "33", "--param-budget", "18885",
                          "--outputs", "1"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_EQ(r.out, "hidden 43\t18495\n");
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(call({}).code, kExitUsage);
  EXPECT_EQ(call({"param-count", "--kind", "grud", "--bogus", "1"}).code, kExitUsage);
  EXPECT_EQ(call({"param-count", "--kind", "not-a-cell", "--vars", "1", "--hidden", "1", "--outputs", "1"}).code,
            kExitUsage);
  EXPECT_EQ(call({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(call({"--help"}).code, kExitOk);
}

TEST(Cli, GradCheckPasses) {
  const Outcome r = call({"grad-check", "--kind", "grud", "--seed", "1"});
  EXPECT_EQ(r.code, kExitOk) << r.out << r.err;
  EXPECT_NE(r.out.find("max rel err"), std::string::npos);
}

TEST_F(CliTest, GenerateIsDeterministic) {
  generate("a");
  generate("b");
  EXPECT_EQ(read_file(path("a/data.csv")), read_file(path("b/data.csv")));
  EXPECT_EQ(read_file(path("a/labels.csv")), read_file(path("b/labels.csv")));
  EXPECT_EQ(read_file(path("a/data.csv")).rfind("# config: ", 0), 0u);
}

TEST_F(CliTest, TrainEvaluateDecayOnlineRoundTrip) {
  generate("data");
  write("train.json", R"({"max_epochs": 3, "hidden": 4})");
  const std::vector<std::string> data = {"--data", path("data/data.csv"), "--labels", path("data/labels.csv")};
  auto with = [&](std::vector<std::string> args) {
    args.insert(args.end(), data.begin(), data.end());
    return call(args);
  };
  const Outcome trained = with({"train", "--kind", "grud", "--config", path("train.json"), "--out-dir", path("run")});
  ASSERT_EQ(trained.code, kExitOk) << trained.err;
  const std::string history = read_file(path("run/history.jsonl"));
  EXPECT_EQ(history.rfind("{\"config\":", 0), 0u);
  EXPECT_EQ(std::count(history.begin(), history.end(), '\n'), 4);

  const Outcome evaluated = with({"evaluate", "--model", path("run/model.json"), "--out-dir", path("eval")});
  EXPECT_EQ(evaluated.code, kExitOk) << evaluated.err;
  EXPECT_TRUE(fs::exists(path("eval/evaluation.json")));

  const Outcome decay = call({"decay-report", "--model", path("run/model.json"), "--out-dir", path("decay")});
  EXPECT_EQ(decay.code, kExitOk) << decay.err;
  EXPECT_EQ(read_file(path("decay/decay_curves.csv")).find("variable,delta,gamma"),
            read_file(path("decay/decay_curves.csv")).find('\n') + 1);
  EXPECT_TRUE(fs::exists(path("decay/hidden_decay_hist.csv")));

  const Outcome online = with({"online-eval", "--model", path("run/model.json"), "--cutoffs", "2,4,100", "--out-dir",
                               path("online")});
  EXPECT_EQ(online.code, kExitOk) << online.err;
  EXPECT_TRUE(fs::exists(path("online/online_auc.csv")));
}

TEST_F(CliTest, DataErrorsMapToExitTwo) {
  write("bad.csv", "series_id,timestamp,x\na,1,1\na,0,2\n");
  write("labels.csv", "series_id,label\na,1\n");
  EXPECT_EQ(call({"stats", "--data", path("bad.csv"), "--labels", path("labels.csv")}).code, kExitData);
  write("garbled.csv", "series_id,timestamp,x\na,zero,1\n");
  EXPECT_EQ(call({"stats", "--data", path("garbled.csv"), "--labels", path("labels.csv")}).code, kExitData);
}

TEST_F(CliTest, ConfigErrorsMapToExitOne) {
  generate("data");
  write("bad.json", R"({"learning_rte": 0.1})");
  EXPECT_EQ(call({"train", "--kind", "grud", "--config", path("bad.json"), "--data", path("data/data.csv"),
                  "--labels", path("data/labels.csv"), "--out-dir", path("run")})
                .code,
            kExitUsage);
  EXPECT_EQ(call({"generate", "--rate", "0.01", "--correlation", "0.99", "--out-dir", path("x")}).code, kExitUsage);
}

TEST_F(CliTest, CorrelateAndStatsWriteArtifacts) {
  generate("data");
  const std::vector<std::string> data = {"--data", path("data/data.csv"), "--labels", path("data/labels.csv"),
                                         "--out-dir", path("out")};
  std::vector<std::string> a = {"correlate"}, b = {"stats"};
  a.insert(a.end(), data.begin(), data.end());
  b.insert(b.end(), data.begin(), data.end());
  EXPECT_EQ(call(a).code, kExitOk);
  EXPECT_EQ(call(b).code, kExitOk);
  EXPECT_NE(read_file(path("out/correlation.csv")).find("variable,task,pearson_r,degenerate"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("out/stats.json")));
}

TEST_F(CliTest, SuiteRerunIsNoOp) {
  write("suite.json", R"({
    "kinds": ["gru-mean", "grud"],
    "correlations": [0.0, 0.9],
    "synthetic": {"n_samples": 40, "n_variables": 2, "n_classes": 2, "min_steps": 4, "max_steps": 6},
    "train": {"max_epochs": 2, "hidden": 3},
    "folds": 2
  })");
  const Outcome first = call({"suite", "--config", path("suite.json"), "--out-dir", path("suite")});
  ASSERT_EQ(first.code, kExitOk) << first.err;
  EXPECT_NE(first.out.find("4 cells computed"), std::string::npos) << first.out;
  const auto before = snapshot(path("suite"));
  const auto stamp = fs::last_write_time(path("suite/suite_auc.csv"));
  const Outcome second = call({"suite", "--config", path("suite.json"), "--out-dir", path("suite")});
  ASSERT_EQ(second.code, kExitOk);
  EXPECT_NE(second.out.find("0 cells computed"), std::string::npos) << second.out;
  EXPECT_EQ(snapshot(path("suite")), before);
  EXPECT_EQ(fs::last_write_time(path("suite/suite_auc.csv")), stamp);
}

TEST(CliBinary, ExitCodesThroughTheProcess) {
  const std::string bin = DECAYRNN_CLI;
  EXPECT_EQ(std::system((bin + " param-count --kind grud --vars 18 --hidden 55 --outputs 5 > /dev/null").c_str()), 0);
  const int status = std::system((bin + " no-such-command > /dev/null 2>&1").c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), kExitUsage);
}
