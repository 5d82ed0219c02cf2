#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mdrec/data.hpp"
#include "support/fixture_expectations.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int status = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string("\"") + MDREC_CLI_PATH + "\" " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("mdrec_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) row.push_back(field);
    rows.push_back(row);
  }
  return rows;
}

const char* kToyConfig = R"({
  "seed": 5,
  "synthetic": {"sequences": 200, "items_per_cluster": 6, "dim": 6},
  "model": {"d_hidden": 6},
  "training": {"max_epochs": 2, "batch_size": 16, "log_wall_time": false}
})";

}  // namespace

TEST(CliPreprocess, MovieLensCountsMatchFixture) {
  const auto dir = scratch("pre");
  const auto r = cli("preprocess --kind movielens --input " + fixtures::path("movielens_small.csv") + " --out " +
                     dir.string() + " --seed 1");
  ASSERT_EQ(r.status, 0) << r.out;
  // Users 1 and 3 qualify; both land in train under an 80/10/10 split of 2.
  EXPECT_NE(r.out.find("train 2\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("vocab 30\n"), std::string::npos) << r.out;
  const auto bundle = mdrec::load_bundle(dir / "data");
  const auto expected = fixtures::movielens();
  ASSERT_EQ(bundle.train.size(), expected.size());
  for (const auto& s : bundle.train) {
    std::vector<std::string> future;
    for (auto i : s.future) future.push_back(bundle.vocab.token(i));
    EXPECT_EQ(future, expected.at(s.user).future);
  }
}

TEST(CliPreprocess, UnknownKindFails) {
  const auto dir = scratch("kind");
  const auto r = cli("preprocess --kind netflix --input " + fixtures::path("movielens_small.csv") + " --out " +
                     dir.string());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("unknown dataset kind"), std::string::npos) << r.out;
  EXPECT_FALSE(fs::exists(dir / "data"));
}

TEST(CliPreprocess, RerunGivesIdenticalFiles) {
  const auto a = scratch("rerun_a"), b = scratch("rerun_b");
  for (const auto& dir : {a, b}) {
    ASSERT_EQ(cli("preprocess --kind recsys --input " + fixtures::path("recsys_small.csv") + " --out " + dir.string() +
                  " --seed 9")
                  .status,
              0);
  }
  for (const char* f : {"vocab.txt", "train.tsv", "valid.tsv", "test.tsv", "meta.json"}) {
    EXPECT_EQ(slurp(a / "data" / f), slurp(b / "data" / f)) << f;
  }
}

TEST(CliConfig, UnknownKeysAndMissingArtifactsFail) {
  const auto dir = scratch("config");
  std::ofstream(dir / "bad.json") << R"({"training": {"epochs": 3}})";
  auto r = cli("train --config " + (dir / "bad.json").string() + " --out " + dir.string());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("unknown key 'epochs'"), std::string::npos) << r.out;
  r = cli("train --model RNN-RNN-2 --out " + (dir / "empty").string());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("no preprocessed dataset"), std::string::npos) << r.out;
  r = cli("evaluate --model RNN-FF-1 --out " + dir.string());
  EXPECT_NE(r.status, 0);
}

TEST(CliEvaluate, RviMatchesHandComputedMetrics) {
  const auto dir = scratch("rvi");
  fs::copy(fixtures::path("rvi_bundle"), dir / "data", fs::copy_options::recursive);
  const auto r = cli("evaluate --model RVI --k 1,10 --out " + dir.string());
  ASSERT_EQ(r.status, 0) << r.out;
  // RVI lists: u1 [c b a] vs {c d}; u2 [e d] vs {f}; u3 [f b] vs {b f a}.
  const auto rows = csv_rows(slurp(dir / "metrics.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0][0], "model");
  EXPECT_EQ(rows[1][1], "1");
  EXPECT_NEAR(std::stod(rows[1][2]), 2.0 / 3.0, 1e-6);
  EXPECT_NEAR(std::stod(rows[1][3]), (0.5 + 0.0 + 1.0 / 3.0) / 3.0, 1e-6);
  EXPECT_EQ(rows[2][1], "10");
  EXPECT_NEAR(std::stod(rows[2][2]), (0.1 + 0.0 + 0.2) / 3.0, 1e-6);
  EXPECT_NEAR(std::stod(rows[2][3]), (0.5 + 0.0 + 2.0 / 3.0) / 3.0, 1e-6);
}

TEST(CliPipeline, TrainRecommendAndPlotRows) {
  const auto dir = scratch("pipeline");
  std::ofstream(dir / "cfg.json") << kToyConfig;
  const std::string common = " --config " + (dir / "cfg.json").string() + " --out " + (dir / "run").string();
  ASSERT_EQ(cli("synth" + common).status, 0);
  const auto train = cli("train --model RNN-ATT-RNN-2" + common);
  ASSERT_EQ(train.status, 0) << train.out;
  EXPECT_TRUE(fs::exists(dir / "run/models/RNN-ATT-RNN-2.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "run/.lock"));

  std::ifstream vocab(dir / "run/data/vocab.txt");
  std::string a, b;
  vocab >> a >> b;
  const auto rec = cli("recommend --model RNN-ATT-RNN-2 --history " + a + "," + b + " --k 5" + common);
  ASSERT_EQ(rec.status, 0) << rec.out;
  std::istringstream lines(rec.out);
  std::string item;
  double score, prev = 0.0;
  int n = 0;
  while (lines >> item >> score) {
    if (n > 0) EXPECT_LT(score, prev);
    prev = score;
    ++n;
  }
  EXPECT_EQ(n, 5);

  const auto ev = cli("evaluate --model RNN-ATT-RNN-2,Item-CF" + common);
  ASSERT_EQ(ev.status, 0) << ev.out;
  const auto plot = csv_rows(slurp(dir / "run/plot.csv"));
  ASSERT_EQ(plot.size(), 1u + 2 * 3);  // default cutoffs 10 and 20, three metrics each, baselines excluded
  EXPECT_EQ(plot[0], (std::vector<std::string>{"model", "m", "metric", "value"}));
  EXPECT_EQ(plot[1][0], "RNN-ATT-RNN");
  EXPECT_EQ(plot[1][1], "2");
  EXPECT_EQ(plot[1][2], "precision@10");
  const auto metrics = csv_rows(slurp(dir / "run/metrics.csv"));
  EXPECT_EQ(metrics.size(), 1u + 2 * 2);
}

TEST(CliPipeline, LockedOutputDirectoryRefused) {
  const auto dir = scratch("locked");
  fs::create_directories(dir / ".lock");
  const auto r = cli("preprocess --kind movielens --input " + fixtures::path("movielens_small.csv") + " --out " +
                     dir.string());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("locked"), std::string::npos) << r.out;
}
