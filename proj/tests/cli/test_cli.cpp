#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"
#include "support.hpp"

using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run run(const TempDir& dir, const std::string& args) {
  const char* cli = std::getenv("SHAPEDET_CLI");
  REQUIRE(cli != nullptr);
  const std::string line = "cd '" + dir.str() + "' && '" + cli + "' " + args + " > stdout.txt 2> stderr.txt";
  const int raw = std::system(line.c_str());
  Run r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(dir.path() / "stdout.txt");
  r.err = slurp(dir.path() / "stderr.txt");
  return r;
}

void write(const TempDir& dir, const std::string& leaf, const std::string& text) { std::ofstream(dir.path() / leaf) << text; }

}  // namespace

TEST_CASE("help lists flags and exits 0") {
  TempDir d("cli_help");
  const auto top = run(d, "--help");
  CHECK(top.status == 0);
  CHECK(top.out.find("shape-train") != std::string::npos);
  const auto sub = run(d, "pipeline --help");
  CHECK(sub.status == 0);
  CHECK(sub.out.find("--oracle") != std::string::npos);
  CHECK(sub.out.find("--config") != std::string::npos);
}

TEST_CASE("usage errors exit 1") {
  TempDir d("cli_usage");
  CHECK(run(d, "").status == 1);
  CHECK(run(d, "not-a-command").status == 1);
  CHECK(run(d, "bench --no-such-flag").status == 1);
  CHECK(run(d, "make-corpus").status == 1);  // --out is required
  CHECK(run(d, "voxelize --input missing.bin --out v.csv").status == 1);
}

TEST_CASE("bad config names the key and exits 1") {
  TempDir d("cli_config");
  write(d, "typo.json", R"({"train": {"stpes": 10}})");
  auto r = run(d, "make-corpus --out c.bin --config typo.json");
  CHECK(r.status == 1);
  CHECK(r.err.find("train.stpes") != std::string::npos);

  write(d, "type.json", R"({"train": {"batch": "four"}})");
  r = run(d, "make-corpus --out c.bin --config type.json");
  CHECK(r.status == 1);
  CHECK(r.err.find("train.batch") != std::string::npos);

  write(d, "range.json", R"({"nms": {"rpn_threshold": 1.5}})");
  r = run(d, "make-corpus --out c.bin --config range.json");
  CHECK(r.status == 1);
  CHECK(r.err.find("nms") != std::string::npos);

  write(d, "broken.json", "{");
  CHECK(run(d, "make-corpus --out c.bin --config broken.json").status == 1);
  CHECK_FALSE(fs::exists(d.path() / "c.bin"));
}

TEST_CASE("runtime failures exit 2") {
  TempDir d("cli_runtime");
  write(d, "garbage.ckpt", "not a checkpoint");
  write(d, "garbage.bin", "xx");
  const auto r = run(d, "shape-predict --checkpoint garbage.ckpt --corpus garbage.bin --out p.json");
  CHECK(r.status == 2);
  CHECK_FALSE(r.err.empty());
  CHECK(r.out.empty());
}

TEST_CASE("eval of the perfect detections reports 100") {
  TempDir d("cli_eval");
  REQUIRE(run(d, "make-scenes --out data --count 4").status == 0);
  const auto r = run(d, "eval --labels data/label_2 --detections data/perfect --out m.json");
  REQUIRE(r.status == 0);
  const auto m = nlohmann::json::parse(slurp(d.path() / "m.json"));
  CHECK(m["ap"].get<double>() == 100.0);
  CHECK(r.out.find("100.0") != std::string::npos);
}

TEST_CASE("shape-train with zero learning rate leaves the loss unchanged") {
  TempDir d("cli_train");
  write(d, "c.json", R"({"pool_resolution": 4,
    "shape_net": {"enc1_hidden": 8, "local_features": 8, "enc2_hidden": 16, "global_features": 16, "decoder_hidden": 16},
    "corpus": {"count": 12},
    "train": {"steps": 6, "batch": 1, "holdout": 2, "learning_rate": 0.0}})");
  REQUIRE(run(d, "make-corpus --out corpus.bin --config c.json").status == 0);
  REQUIRE(run(d, "shape-train --corpus corpus.bin --out t --config c.json").status == 0);
  const auto t = nlohmann::json::parse(slurp(d.path() / "t" / "train.json"));
  CHECK(t["heldout_chamfer_final"].get<double>() == t["heldout_chamfer_initial"].get<double>());
  CHECK(t["loss_curve"].size() == 6);
}

TEST_CASE("pipeline with oracle scores finds the planted cars") {
  TempDir d("cli_pipe");
  write(d, "c.json", R"({"backbone": {"channels": [8, 8, 16, 16]}, "keypoints": {"count": 256, "width": 8},
    "pool_resolution": 6,
    "shape_net": {"enc1_hidden": 16, "local_features": 16, "enc2_hidden": 32, "global_features": 32, "decoder_hidden": 32},
    "msg": {"centers": 32, "hidden": [8], "channels": 16}, "roi_grid": {"widths": [8, 8]}, "head_width": 16})");
  REQUIRE(run(d, "make-scenes --out data --count 2 --config c.json").status == 0);
  REQUIRE(run(d, "pipeline --data data --out det --oracle --config c.json").status == 0);
  const auto r = run(d, "eval --labels data/label_2 --detections det --out m.json --config c.json");
  REQUIRE(r.status == 0);
  const auto m = nlohmann::json::parse(slurp(d.path() / "m.json"));
  CHECK(m["ap"].get<double>() > 90.0);
}

TEST_CASE("training logs go to stderr") {
  TempDir d("cli_logs");
  write(d, "c.json", R"({"pool_resolution": 4, "corpus": {"count": 6}, "train": {"steps": 3, "batch": 2, "holdout": 2},
    "shape_net": {"enc1_hidden": 8, "local_features": 8, "enc2_hidden": 8, "global_features": 8, "decoder_hidden": 8}})");
  REQUIRE(run(d, "make-corpus --out c.bin --config c.json").status == 0);
  const auto r = run(d, "shape-train --corpus c.bin --out t --config c.json");
  REQUIRE(r.status == 0);
  CHECK(r.err.find("[shapedet] step 0") != std::string::npos);
  CHECK(r.out.find("[shapedet]") == std::string::npos);
}
