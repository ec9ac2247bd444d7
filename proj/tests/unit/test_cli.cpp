#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "collabvn/checkpoint.hpp"
#include "collabvn/cli.hpp"
#include "collabvn/image_io.hpp"
#include "test_support.hpp"

namespace collabvn {
namespace {

using testing::TempDir;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

/// One synthetic sample of 24 x 32 pixels with 12 disparities under `dir`/d.
void make_dataset(const TempDir& dir, int count = 1) {
  const auto r = cli({"synth", "--out", (dir / "d").string(), "--count", std::to_string(count), "--height", "24",
                      "--width", "32", "--max-disparity", "8", "--disparities", "12"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
}

void make_zero_checkpoint(const TempDir& dir, const std::string& name, int steps) {
  const auto r = cli({"train", "--data", (dir / "d").string(), "--out", (dir / name).string(), "--init", "zero",
                      "--epochs", "0", "--steps", std::to_string(steps), "--levels", "2", "--filters", "2", "--ksize",
                      "3"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
}

TEST(Cli, HelpAndUnknownCommand) {
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(cli({"eval", "--pred", "x.pfm"}).code, kExitUsage);
}

TEST(Cli, MatchCensusShift) {
  TempDir dir("cli");
  std::mt19937_64 rng(3);
  const auto left = testing::random_grid<float>(rng, 20, 40, 1, 0.0, 1.0);
  Grid<float> right(20, 40, 1);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 40; ++x) right.at(y, x) = left.at(y, std::min(x + 4, 39));
  write_pfm(left, dir / "l.pfm");
  write_pfm(right, dir / "r.pfm");
  const auto r = cli({"match", "--left", (dir / "l.pfm").string(), "--right", (dir / "r.pfm").string(), "--max-disp",
                      "10", "--out", (dir / "c.cvol").string(), "--out-right", (dir / "cr.cvol").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto v = read_cost_volume(dir / "c.cvol");
  EXPECT_EQ(v.disparities(), 10);
  EXPECT_TRUE(std::filesystem::exists(dir / "cr.cvol"));
  int hits = 0, total = 0;
  for (int y = 2; y < 18; ++y) {
    for (int x = 8; x < 34; ++x) {
      const auto p = v.profile(y, x);
      hits += std::min_element(p.begin(), p.end()) - p.begin() == 4;
      ++total;
    }
  }
  EXPECT_GT(hits, 0.95 * total);

  EXPECT_EQ(cli({"match", "--left", (dir / "l.pfm").string(), "--right", (dir / "r.pfm").string(), "--max-disp", "2",
                 "--out", (dir / "c2.cvol").string()})
                .code,
            kExitOk);
  EXPECT_EQ(cli({"match", "--left", (dir / "l.pfm").string(), "--right", (dir / "r.pfm").string(), "--max-disp", "1",
                 "--out", (dir / "c1.cvol").string()})
                .code,
            kExitUsage);
  EXPECT_EQ(cli({"match", "--backend", "features", "--max-disp", "10", "--out", (dir / "f.cvol").string()}).code,
            kExitUsage);
}

TEST(Cli, ZeroCheckpointRefineIsIdentity) {
  TempDir dir("cli");
  make_dataset(dir);
  make_zero_checkpoint(dir, "z.ckpt", 2);
  const auto s = dir / "d" / "000";
  const auto r = cli({"refine", "--cost", (s / "cost.cvol").string(), "--cost-right", (s / "cost_r.cvol").string(),
                      "--left", (s / "left.png").string(), "--checkpoint", (dir / "z.ckpt").string(), "--out",
                      (dir / "out.pfm").string(), "--out-conf", (dir / "conf.pfm").string(), "--dump-steps",
                      (dir / "steps").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto inputs = build_inputs(read_image(s / "left.png"), read_cost_volume(s / "cost.cvol"),
                                   read_cost_volume(s / "cost_r.cvol"));
  const auto pred = read_pfm(dir / "out.pfm");
  ASSERT_TRUE(pred.same_shape(inputs.disparity));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const float a = pred.data()[i];
    const float b = inputs.disparity.data()[i];
    EXPECT_LE(std::abs(a - b), std::nextafter(std::max(a, b), 1e9f) - std::max(a, b)) << i;
  }
  const auto conf = read_pfm(dir / "conf.pfm");
  for (std::size_t i = 0; i < conf.size(); ++i) EXPECT_EQ(conf.data()[i], inputs.confidence.data()[i]);
  int dumped = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "steps")) dumped += e.is_regular_file();
  EXPECT_EQ(dumped, 3 * (2 + 1));
}

TEST(Cli, RefineRejectsDisparityMismatch) {
  TempDir dir("cli");
  make_dataset(dir);
  std::mt19937_64 rng(1);
  Checkpoint c;
  VnArchitecture a;
  a.steps = 1;
  a.levels = 1;
  a.filters = 2;
  a.ksize = 3;
  c.params = make_zero_params(a);
  c.disparities = 20;
  write_checkpoint(c, dir / "c.ckpt");
  const auto s = dir / "d" / "000";
  const auto r = cli({"refine", "--cost", (s / "cost.cvol").string(), "--cost-right", (s / "cost_r.cvol").string(),
                      "--left", (s / "left.png").string(), "--checkpoint", (dir / "c.ckpt").string(), "--out",
                      (dir / "out.pfm").string()});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("12"), std::string::npos) << r.err;
}

TEST(Cli, TrainNamesAndErrors) {
  TempDir dir("cli");
  make_dataset(dir, 2);
  const auto r = cli({"train", "--data", (dir / "d").string(), "--out", (dir / "t.ckpt").string(), "--steps", "7",
                      "--levels", "4", "--ksize", "11", "--filters", "2", "--epochs", "1", "--crop", "16"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("VN^{7,11}_4"), std::string::npos) << r.out;
  EXPECT_EQ(read_checkpoint(dir / "t.ckpt").params.arch.name(), "VN^{7,11}_4");
  const auto csv = slurp(dir / "t.loss.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);

  std::filesystem::create_directories(dir / "empty");
  EXPECT_EQ(cli({"train", "--data", (dir / "empty").string(), "--out", (dir / "e.ckpt").string()}).code, kExitData);
  EXPECT_EQ(cli({"train", "--data", (dir / "d").string(), "--out", (dir / "t.ckpt").string(), "--resume",
                 (dir / "t.ckpt").string(), "--steps", "3", "--epochs", "2"})
                .code,
            kExitUsage);
  EXPECT_EQ(cli({"train", "--data", (dir / "d").string(), "--out", (dir / "x.ckpt").string(), "--ksize", "4"}).code,
            kExitUsage);
}

TEST(Cli, TrainResumeContinues) {
  TempDir dir("cli");
  make_dataset(dir);
  const std::vector<std::string> arch = {"--steps", "2", "--levels", "1", "--filters", "2", "--ksize", "3",
                                         "--crop", "0", "--threads", "1"};
  auto args = std::vector<std::string>{"train", "--data", (dir / "d").string(), "--out", (dir / "a.ckpt").string(),
                                       "--epochs", "1"};
  args.insert(args.end(), arch.begin(), arch.end());
  ASSERT_EQ(cli(args).code, kExitOk);
  const auto r = cli({"train", "--data", (dir / "d").string(), "--out", (dir / "a.ckpt").string(), "--resume",
                      (dir / "a.ckpt").string(), "--epochs", "3"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(read_checkpoint(dir / "a.ckpt").epoch, 3);
  const auto csv = slurp(dir / "a.loss.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(Cli, EvalFixtures) {
  TempDir dir("cli");
  Grid<float> pred(2, 2, 1), gt(2, 2, 1, 0.0f);
  pred.at(0, 0) = 0;
  pred.at(0, 1) = 1;
  pred.at(1, 0) = 4;
  pred.at(1, 1) = 10;
  write_pfm(pred, dir / "p.pfm");
  write_pfm(gt, dir / "g.pfm");
  auto r = cli({"eval", "--pred", (dir / "p.pfm").string(), "--gt", (dir / "g.pfm").string(), "--out",
                (dir / "r.csv").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto csv = slurp(dir / "r.csv");
  EXPECT_NE(csv.find("bad3,50.000000,occ,4"), std::string::npos) << csv;
  EXPECT_NE(csv.find("bad0.5,75.000000"), std::string::npos) << csv;
  EXPECT_NE(csv.find("avg,3.750000"), std::string::npos) << csv;
  EXPECT_NE(csv.find("rms,5.408327"), std::string::npos) << csv;

  r = cli({"eval", "--pred", (dir / "g.pfm").string(), "--gt", (dir / "g.pfm").string(), "--metrics", "bad3,avg"});
  ASSERT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("0.0000"), std::string::npos);
  EXPECT_EQ(r.out.find("rms"), std::string::npos);

  r = cli({"eval", "--pred", (dir / "p.pfm").string(), "--gt", (dir / "g.pfm").string(), "--baseline",
           (dir / "p.pfm").string()});
  ASSERT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("improvement"), std::string::npos);

  EXPECT_EQ(cli({"eval", "--pred", (dir / "p.pfm").string(), "--gt", (dir / "g.pfm").string(), "--metrics", "bad9"})
                .code,
            kExitUsage);
  EXPECT_EQ(cli({"eval", "--pred", (dir / "nope.pfm").string(), "--gt", (dir / "g.pfm").string()}).code, kExitData);
}

TEST(Cli, InspectZeroCheckpoint) {
  TempDir dir("cli");
  make_dataset(dir);
  make_zero_checkpoint(dir, "z.ckpt", 2);
  const auto r = cli({"inspect", "--checkpoint", (dir / "z.ckpt").string(), "--out", (dir / "vis").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto mosaic = read_image(dir / "vis" / "step00_level1_filters.png");
  for (float v : mosaic.data()) EXPECT_NEAR(v, 0.5f, 1.0f / 255);
  const auto csv = slurp(dir / "vis" / "step01_level0_activation.csv");
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  while (std::getline(lines, line)) {
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    while (std::getline(cells, cell, ',')) EXPECT_EQ(std::stod(cell), 0.0) << line;
  }
}

TEST(Cli, BatchRefine) {
  TempDir dir("cli");
  make_dataset(dir, 2);
  make_zero_checkpoint(dir, "z.ckpt", 1);
  const auto r = cli({"refine", "--checkpoint", (dir / "z.ckpt").string(), "--data", (dir / "d").string(), "--out-dir",
                      (dir / "o").string(), "--threads", "2"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  int files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "o")) files += e.is_regular_file();
  EXPECT_GE(files, 2);
}

}  // namespace
}  // namespace collabvn
