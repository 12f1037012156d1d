#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "advdev/cli.hpp"
#include "support.hpp"

namespace advdev {
namespace {

using testing::scratch_dir;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "advdev");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path tiny_config(const fs::path& dir) {
  const fs::path p = dir / "tiny.json";
  std::ofstream(p) << R"({
  "format_version": 1,
  "seed": 5,
  "dataset": {"source": "synthetic", "classes": 4, "train_per_class": 12, "test_per_class": 6,
              "amplitude": 0.2},
  "architecture": ["input 3 32 32", "conv 4 3 4 1 relu checkpoint", "dense 4 checkpoint"],
  "train": {"epochs": 6, "batch_size": 8, "learning_rate": 0.01},
  "attacks": {"fgsm": {}, "bim": {"iterations": 4},
              "cw": {"binary_search_steps": 2, "max_iterations": 20, "learning_rate": 0.05}},
  "attack_limit": 8,
  "sample_images": 2
})";
  return p;
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({"train"}).code, 1);
  const Outcome unknown = run({"frobnicate", "--config", "x.json"});
  EXPECT_EQ(unknown.code, 1);
  EXPECT_NE(unknown.err.find("pipeline"), std::string::npos);
  EXPECT_EQ(run({"train", "--config", "x.json", "--bogus"}).code, 1);
  EXPECT_EQ(run({"train", "--config", "/nonexistent/x.json"}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, InvalidConfigIsUsageError) {
  const fs::path dir = scratch_dir();
  std::ofstream(dir / "bad.json") << R"({"trian": {}})";
  const Outcome o = run({"train", "--config", (dir / "bad.json").string()});
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("trian"), std::string::npos);
}

TEST(Cli, MissingDependencyNamesProducer) {
  const fs::path dir = scratch_dir();
  const fs::path cfg = tiny_config(dir);
  for (const char* stage : {"attack", "analyze", "plot", "sample-images"}) {
    const Outcome o = run({stage, "--config", cfg.string(), "--out", (dir / "run").string()});
    EXPECT_EQ(o.code, 2) << stage;
    EXPECT_NE(o.err.find("stage dependency"), std::string::npos) << stage;
  }
  EXPECT_FALSE(fs::exists(dir / "run" / "deviations.csv"));
}

TEST(Cli, PipelineProducesArtifactsAndStagesAreIsolated) {
  const fs::path dir = scratch_dir();
  const fs::path cfg = tiny_config(dir);
  const fs::path run_dir = dir / "run";
  const Outcome o = run({"pipeline", "--config", cfg.string(), "--out", run_dir.string()});
  ASSERT_EQ(o.code, 0) << o.out << o.err;
  for (const char* f : {"model.advd", "train_history.json", "clean.advs", "attacks.json",
                        "fgsm.advs", "fgsm.mask", "bim.advs", "bim.mask", "cw.advs", "cw.mask",
                        "normalization.json"}) {
    EXPECT_TRUE(fs::exists(run_dir / f)) << f;
  }
  // Analysis artifacts exist when at least one attack succeeded.
  ASSERT_TRUE(fs::exists(run_dir / "deviations.csv")) << o.out;
  EXPECT_TRUE(fs::exists(run_dir / "summary.json"));
  EXPECT_TRUE(fs::is_directory(run_dir / "images"));
  std::size_t ppm = 0, svg = 0;
  for (const auto& e : fs::directory_iterator(run_dir / "images")) ppm += e.path().extension() == ".ppm";
  for (const auto& e : fs::directory_iterator(run_dir)) svg += e.path().extension() == ".svg";
  EXPECT_EQ(ppm, 2u * 4u);
  EXPECT_GE(svg, 1u);

  const std::string csv = read_file(run_dir / "deviations.csv");
  const std::string summary = read_file(run_dir / "summary.json");
  fs::remove(run_dir / "deviations.csv");
  ASSERT_EQ(run({"analyze", "--config", cfg.string(), "--out", run_dir.string()}).code, 0);
  EXPECT_EQ(read_file(run_dir / "deviations.csv"), csv);
  EXPECT_EQ(read_file(run_dir / "summary.json"), summary);

  const auto history = nlohmann::json::parse(read_file(run_dir / "train_history.json"));
  EXPECT_EQ(history["loss_history"].size(), 6u);
  EXPECT_EQ(history["test_records"].get<std::size_t>(), 24u);
}

TEST(Cli, SeedOverrideChangesModel) {
  const fs::path dir = scratch_dir();
  const fs::path cfg = tiny_config(dir);
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--out", (dir / "b").string(), "--seed", "6"}).code, 0);
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--out", (dir / "c").string()}).code, 0);
  EXPECT_EQ(read_file(dir / "a" / "model.advd"), read_file(dir / "c" / "model.advd"));
  EXPECT_NE(read_file(dir / "a" / "model.advd"), read_file(dir / "b" / "model.advd"));
}

}  // namespace
}  // namespace advdev
