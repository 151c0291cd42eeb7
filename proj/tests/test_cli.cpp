#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "fixtures.hpp"
#include "hdaoe/synth.hpp"

using namespace hdaoe;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt";
  const std::string cmd =
      std::string(HDAOE_CLI_PATH) + " " + args + " > " + out.string() + " 2> " +
      (scratch / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = testkit::read_file(out);
  return r;
}

std::string small_synth(const fs::path& dir) {
  return "synth-dataset --out " + dir.string() +
         " --attrs 3 --objs 3 --unseen 2 --unseen-val 1 --dim 8 --samples 90";
}

void write_small_config(const fs::path& path, int epochs) {
  testkit::write_file(path, "epochs=" + std::to_string(epochs) +
                                "\nbatch_size=8\nlr=0.001\nmodel.embed_dim=12\n"
                                "model.hidden_dim=12\n");
}

}  // namespace

TEST(Cli, HelpListsSubcommandsAndFlags) {
  testkit::TempDir tmp("cli");
  auto r = run("--help", tmp.path());
  EXPECT_EQ(r.code, 0);
  for (const char* s : {"ingest", "train", "eval", "sweep", "retrieve", "gradcheck", "synth-dataset"})
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
  r = run("sweep --help", tmp.path());
  EXPECT_EQ(r.code, 0);
  for (const char* s : {"--data", "--out", "--config", "--axis", "--values", "--seed"})
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
}

TEST(Cli, UsageErrorsExitTwo) {
  testkit::TempDir tmp("cli");
  EXPECT_EQ(run("", tmp.path()).code, 2);
  EXPECT_EQ(run("train --no-such-flag", tmp.path()).code, 2);
  EXPECT_EQ(run("eval --mode sideways", tmp.path()).code, 2);
  EXPECT_EQ(run("train --out " + (tmp / "o").string(), tmp.path()).code, 2);
}

TEST(Cli, SynthIsByteReproducible) {
  testkit::TempDir tmp("cli");
  ASSERT_EQ(run(small_synth(tmp / "a"), tmp.path()).code, 0);
  ASSERT_EQ(run(small_synth(tmp / "b"), tmp.path()).code, 0);
  for (const char* f : {"manifest.csv", "features.hdaf", "train_pairs.txt", "test_pairs.txt"})
    EXPECT_EQ(testkit::read_file(tmp / "a" / f), testkit::read_file(tmp / "b" / f)) << f;
  const auto r = run("ingest --data " + (tmp / "a").string(), tmp.path());
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("\"samples\": 90"), std::string::npos) << r.out;
}

TEST(Cli, TrainEvalRetrievePipeline) {
  testkit::TempDir tmp("cli");
  const auto data = tmp / "data", run_dir = tmp / "run", rep = tmp / "rep";
  ASSERT_EQ(run(small_synth(data), tmp.path()).code, 0);
  write_small_config(tmp / "cfg.txt", 2);
  ASSERT_EQ(run("train --data " + data.string() + " --out " + run_dir.string() + " --config " +
                   (tmp / "cfg.txt").string() + " --audit",
                tmp.path())
                .code,
            0);
  EXPECT_TRUE(fs::exists(run_dir / "checkpoint.hdac"));
  EXPECT_TRUE(fs::exists(run_dir / "trainlog.csv"));

  const auto ck = (run_dir / "checkpoint.hdac").string();
  auto r = run("eval --data " + data.string() + " --out " + rep.string() + " --checkpoint " + ck +
                   " --mode open_world --phase test",
               tmp.path());
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("\nopen_world,"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(rep / "report.json"));
  EXPECT_TRUE(fs::exists(rep / "curve.csv"));

  r = run("retrieve --data " + data.string() + " --out " + rep.string() + " --checkpoint " + ck +
              " --topk 3",
          tmp.path());
  ASSERT_EQ(r.code, 0);
  const auto lines = testkit::read_file(rep / "retrieval_image_to_text.csv");
  EXPECT_EQ(lines.substr(0, lines.find('\n')), "query,rank,candidate,score");
}

TEST(Cli, SweepWritesOneRowPerValue) {
  testkit::TempDir tmp("cli");
  const auto data = tmp / "data";
  ASSERT_EQ(run(small_synth(data), tmp.path()).code, 0);
  write_small_config(tmp / "cfg.txt", 1);
  const auto r = run("sweep --data " + data.string() + " --out " + (tmp / "sw").string() +
                         " --config " + (tmp / "cfg.txt").string() +
                         " --axis tau --values 1.0,0.5,0.05,0.01",
                     tmp.path());
  ASSERT_EQ(r.code, 0);
  const auto csv = testkit::read_file(tmp / "sw" / "sweep.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "axis,value,seed,status,AUC,HM,S,U,A,O,error");
}

TEST(Cli, DataErrorsExitThree) {
  testkit::TempDir tmp("cli");
  const auto data = tmp / "data";
  ASSERT_EQ(run(small_synth(data), tmp.path()).code, 0);
  testkit::write_file(data / "test_pairs.txt",
                      testkit::read_file(data / "train_pairs.txt"));
  EXPECT_EQ(run("ingest --data " + data.string(), tmp.path()).code, 3);
  EXPECT_EQ(run("ingest --data " + (tmp / "missing").string(), tmp.path()).code, 3);
}

TEST(Cli, UnwritableOutputExitsFive) {
  testkit::TempDir tmp("cli");
  testkit::write_file(tmp / "file", "x");
  EXPECT_EQ(run(small_synth(tmp / "file" / "sub"), tmp.path()).code, 5);
}

TEST(Cli, OverflowingFeaturesExitFour) {
  testkit::TempDir tmp("cli");
  synth::SynthOptions o;
  o.dim = 8;
  o.samples = 60;
  auto ds = synth::make_dataset(o);
  for (auto& v : ds.features.data) v = v >= 0 ? 3e38f : -3e38f;
  synth::write_dataset(ds, tmp / "data");
  write_small_config(tmp / "cfg.txt", 1);
  const auto r = run("train --data " + (tmp / "data").string() + " --out " +
                         (tmp / "run").string() + " --config " + (tmp / "cfg.txt").string(),
                     tmp.path());
  EXPECT_EQ(r.code, 4) << testkit::read_file(tmp / "stderr.txt");
  EXPECT_NE(testkit::read_file(tmp / "stderr.txt").find("non-finite"), std::string::npos);
}

TEST(Cli, GradcheckPasses) {
  testkit::TempDir tmp("cli");
  const auto r = run("gradcheck --precision f64", tmp.path());
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("f64 max_relative_error="), std::string::npos);
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
}
