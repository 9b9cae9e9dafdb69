#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "starbri/data.hpp"

using namespace starbri;
namespace fs = std::filesystem;

namespace {

// One scratch directory per process; ctest runs every test separately.
struct Scratch {
  fs::path dir = fs::temp_directory_path() /
                 ("starbri_test_cli." + std::to_string(::getpid()));
  Scratch() {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
};

const fs::path& work() {
  static const Scratch s;
  return s.dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(STARBRI_CLI) + " " + args + " > " +
                          (work() / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_text(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string path(const std::string& name) { return (work() / name).string(); }

// Small dataset plus a two-iteration checkpoint shared by several tests.
const fs::path& trained() {
  static const fs::path ckpt = [] {
    EXPECT_EQ(run("gen-data --out " + path("d") + " --count 30 --seed 3"), 0);
    EXPECT_EQ(run("train --data " + path("d") + " --out " + path("m.sbck") +
                  " --iterations 2 --batch-size 2 --eval-samples 2"),
              0)
        << read_text(work() / "last.log");
    return work() / "m.sbck";
  }();
  return ckpt;
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("no-such-command"), 1);
  EXPECT_EQ(run("train"), 1);  // --data and --out are required
}

TEST(Cli, GenDataWithZeroCountWritesEmptyManifest) {
  ASSERT_EQ(run("gen-data --out " + path("empty") + " --count 0"), 0);
  const auto m = read_manifest(work() / "empty" / "manifest.jsonl");
  EXPECT_TRUE(m.entries.empty());
}

TEST(Cli, GenDataIsDeterministic) {
  ASSERT_EQ(run("gen-data --out " + path("g1") + " --count 12 --seed 4"), 0);
  ASSERT_EQ(run("gen-data --out " + path("g2") + " --count 12 --seed 4"), 0);
  EXPECT_EQ(read_text(work() / "g1" / "manifest.jsonl"),
            read_text(work() / "g2" / "manifest.jsonl"));
}

TEST(Cli, BadScheduleAndConflictingFlagsAreUsageErrors) {
  trained();
  EXPECT_EQ(run("train --data " + path("d") + " --out " + path("x.sbck") +
                " --scale-schedule 1:40"),
            1);
  EXPECT_EQ(run("train --data " + path("d") + " --out " + path("x.sbck") +
                " --loss mse --lambda-mse 0"),
            1);
  EXPECT_EQ(run("train --data " + path("d") + " --out " + path("x.sbck") + " --loss bogus"), 1);
}

TEST(Cli, MissingAndMalformedInputsAreIoErrors) {
  trained();
  EXPECT_EQ(run("train --data " + path("absent") + " --out " + path("x.sbck")), 2);
  EXPECT_EQ(run("predict --ckpt " + path("absent.sbck") + " --input x --out y"), 2);
  {
    std::ofstream os(work() / "junk.rseq", std::ios::binary);
    os << "JUNKJUNKJUNKJUNKJUNKJUNK";
  }
  EXPECT_EQ(run("export-pgm --input " + path("junk.rseq") + " --out " + path("pgm")), 2);
  EXPECT_EQ(run("predict --ckpt " + trained().string() + " --input " + path("junk.rseq") +
                " --out " + path("p.rseq")),
            2);
}

TEST(Cli, TrainEmbedsConfigInLogAndCheckpoint) {
  const auto log = read_text(trained().string() + ".csv");
  EXPECT_EQ(log.rfind("# config: {", 0), 0u);
  EXPECT_NE(log.find("\n2,test,"), std::string::npos) << log;
}

TEST(Cli, PredictKeepsShapeContract) {
  trained();
  const auto data = load_dataset(work() / "d");
  ASSERT_FALSE(data.test.empty());
  rseq_write(data.test[0].slice(0, 10), work() / "ctx.rseq");
  ASSERT_EQ(run("predict --ckpt " + trained().string() + " --input " + path("ctx.rseq") +
                " --out " + path("pred.rseq") + " --pgm " + path("frames")),
            0)
      << read_text(work() / "last.log");
  const auto pred = rseq_read(work() / "pred.rseq");
  EXPECT_EQ(pred.frames.shape(), (Shape{10, 32, 32}));
  for (float v : pred.frames.values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  EXPECT_NE(read_text(work() / "pred.rseq.json").find("\"network\""), std::string::npos);
  EXPECT_TRUE(fs::exists(work() / "frames"));
  EXPECT_FALSE(fs::is_empty(work() / "frames"));
}

TEST(Cli, EvalReportsModelAndPersistence) {
  ASSERT_EQ(run("eval --ckpt " + trained().string() + " --data " + path("d") + " --report " +
                path("eval.csv")),
            0);
  const auto text = read_text(work() / "eval.csv");
  EXPECT_EQ(text.rfind("# config: {", 0), 0u);
  EXPECT_NE(text.find("split,route,sequences,mse,csi,undefined_frame_count,persistence_mse"),
            std::string::npos);
  for (const char* route : {",all,", ",light,", ",moderate,", ",heavy,"})
    EXPECT_NE(text.find(route), std::string::npos) << route;
}

TEST(Cli, ExportPgmWritesOneFilePerFrame) {
  trained();
  const auto data = load_dataset(work() / "d");
  rseq_write(data.train[0], work() / "one.rseq");
  ASSERT_EQ(run("export-pgm --input " + path("one.rseq") + " --out " + path("one_pgm")), 0);
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(work() / "one_pgm")) {
    ++n;
    const auto text = read_text(e.path());
    EXPECT_EQ(text.rfind("P5\n32 32\n255\n", 0), 0u);
    EXPECT_EQ(fs::file_size(e.path()), 13u + 32 * 32);
  }
  EXPECT_EQ(n, 20u);
}

TEST(Cli, GradcheckPassesAtCellLevel) {
  EXPECT_EQ(run("gradcheck --level cell --instances 2"), 0) << read_text(work() / "last.log");
}

TEST(Cli, SweepScaleEmitsOneFiniteRowPerValue) {
  trained();
  ASSERT_EQ(run("sweep-scale --data " + path("d") + " --values 1,15,40 --iterations 2" +
                " --batch-size 2 --eval-samples 2 --out " + path("sweep.csv")),
            0)
      << read_text(work() / "last.log");
  std::istringstream in(read_text(work() / "sweep.csv"));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("s,", 0) == 0) continue;
    ++rows;
    EXPECT_EQ(line.find("nan"), std::string::npos) << line;
    EXPECT_EQ(line.find("inf"), std::string::npos) << line;
  }
  EXPECT_EQ(rows, 3u);
}
