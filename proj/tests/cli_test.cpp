#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "twostream/train.hpp"

using namespace twostream;
namespace fs = std::filesystem;

namespace {

const fs::path& work() {
  static const fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "twostream_cli";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

int run(const std::string& args, const std::string& env = "") {
  const std::string log = "out.txt";
  const std::string cmd = env + " '" + TWOSTREAM_CLI + "' " + args + " > '" + (work() / log).string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string output(const std::string& log = "out.txt") { return read_file((work() / log).string()); }

const std::string kTiny =
    " --set corpus.train=6 --set corpus.dev=2 --set corpus.test=2 --set model.video_widths=4,4,6,6"
    " --set model.keypoint_widths=4,4,6,6 --set model.d_rep=6 --set translator.layers=1 --set translator.d_model=8"
    " --set translator.heads=2 --set translator.d_ff=8 --set translator.max_len=8 --set train.beam=2";

std::string tiny(const std::string& out) {
  return "--set data.manifest=" + (work() / "data" / kManifestName).string() + kTiny + " --out " +
         (work() / out).string();
}

void make_data() {
  static bool done = false;
  if (done) return;
  ASSERT_EQ(run("gen-data --out " + (work() / "data").string() + kTiny), 0) << output();
  done = true;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("no-such-command"), 2);
  EXPECT_EQ(run("train-slr --set train.epochs=0 --from-scratch --out " + (work() / "x").string()), 2);
  EXPECT_EQ(run("train-slr --set train.nope=1 --from-scratch --out " + (work() / "x").string()), 2);
  EXPECT_NE(output().find("train.nope"), std::string::npos);
  EXPECT_EQ(run("pretrain-stream --stream audio --out " + (work() / "x").string()), 2);
}

TEST(Cli, GenDataRefusesToOverwrite) {
  make_data();
  EXPECT_EQ(run("gen-data --out " + (work() / "data").string() + kTiny), 2);
  EXPECT_EQ(run("gen-data --overwrite --out " + (work() / "data").string() + kTiny), 0) << output();
}

TEST(Cli, TrainEvalDecode) {
  make_data();
  ASSERT_EQ(run("train-slr --from-scratch --set train.epochs=1 " + tiny("slr")), 0) << output();
  EXPECT_TRUE(fs::exists(work() / "slr" / "config.ini"));
  EXPECT_EQ(run("train-slr --from-scratch --set train.epochs=1 " + tiny("slr")), 2);
  ASSERT_EQ(run("eval --ckpt " + (work() / "slr").string() + " --task slr --name Tiny"), 0) << output();
  EXPECT_EQ(output().rfind("Method\tDev WER\tTest WER\nTiny\t", 0), 0u) << output();
  ASSERT_EQ(run("decode --ckpt " + (work() / "slr").string() + " --task slr --split dev"), 0) << output();
  const auto lines = split(output(), '\n');
  ASSERT_GE(lines.size(), 2u);
  EXPECT_EQ(split(lines[0], '\t').size(), 3u);
  EXPECT_EQ(run("eval --ckpt " + (work() / "missing").string() + " --task slr"), 2);
}

TEST(Cli, ResumeRejectsChangedConfig) {
  make_data();
  ASSERT_EQ(run("train-slr --from-scratch --set train.epochs=2 --stop-after 1 " + tiny("resume")), 0) << output();
  EXPECT_EQ(run("train-slr --from-scratch --resume --set train.epochs=3 " + tiny("resume")), 2);
  EXPECT_EQ(run("train-slr --from-scratch --resume --set train.epochs=2 " + tiny("resume")), 0) << output();
}

TEST(Cli, VerifyDetectsInjectedFault) {
  const auto report = (work() / "verify.tsv").string();
  EXPECT_EQ(run("verify --inject-fault --report " + report), 1);
  EXPECT_NE(read_file(report).find("ctc-brute-force\tfail"), std::string::npos);
  EXPECT_NE(read_file(report).find("overall\tfail"), std::string::npos);
}

TEST(Cli, CheckpointRootPrefixesRelativePaths) {
  make_data();
  const std::string root = "TWOSTREAM_CKPT_ROOT=" + (work() / "root").string();
  const std::string data = "--set data.manifest=" + (work() / "data" / kManifestName).string() + kTiny;
  ASSERT_EQ(run("pretrain-stream --stream keypoint --set train.epochs=1 " + data + " --out rel/kp", root), 0) << output();
  EXPECT_TRUE(fs::exists(work() / "root" / "rel" / "kp" / "model.index"));
  EXPECT_EQ(run("eval --ckpt rel/kp --task slr", root), 0) << output();
}
