#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "cli_commands.hpp"

using namespace shapedet::cli;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "run configuration (JSON)")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "override the configured seed");
  sub->add_option("--threads", c.threads, "override the configured worker count")->check(CLI::PositiveNumber);
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shapedet: voxel/point 3D detection toolkit"};
  app.require_subcommand(1);
  Common common;

  VoxelizeArgs vox;
  auto* c_vox = app.add_subcommand("voxelize", "voxelize a velodyne .bin scan into CSV");
  c_vox->add_option("--input", vox.input, "scan (x y z r float32)")->required()->check(CLI::ExistingFile);
  c_vox->add_option("--out", vox.output, "voxel CSV")->required();
  c_vox->add_option("--summary", vox.summary, "summary JSON");

  CorpusArgs corpus;
  auto* c_corpus = app.add_subcommand("make-corpus", "generate the synthetic shape corpus");
  c_corpus->add_option("--out", corpus.output, "corpus file")->required();

  TrainArgs train;
  auto* c_train = app.add_subcommand("shape-train", "train the shape predictor on a corpus");
  c_train->add_option("--corpus", train.corpus, "corpus file")->required()->check(CLI::ExistingFile);
  c_train->add_option("--out", train.out_dir, "output directory")->required();

  PredictArgs pred;
  auto* c_pred = app.add_subcommand("shape-predict", "predict one corpus shape from a checkpoint");
  c_pred->add_option("--checkpoint", pred.checkpoint, "shape net checkpoint")->required()->check(CLI::ExistingFile);
  c_pred->add_option("--corpus", pred.corpus, "corpus file")->required()->check(CLI::ExistingFile);
  c_pred->add_option("--index", pred.index, "sample index");
  c_pred->add_option("--out", pred.output, "prediction JSON")->required();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "average precision of detections against labels");
  c_eval->add_option("--labels", ev.labels, "label_2 directory")->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--detections", ev.detections, "directory of <id>.json")->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--calib", ev.calib, "calib directory (identity when absent)")->check(CLI::ExistingDirectory);
  c_eval->add_option("--out", ev.output, "metrics JSON")->required();

  PipelineArgs pipe;
  auto* c_pipe = app.add_subcommand("pipeline", "run two-stage inference over scenes");
  c_pipe->add_option("--data", pipe.data, "dataset root (velodyne/, label_2/, calib/)");
  c_pipe->add_option("--out", pipe.out_dir, "detections directory")->required();
  c_pipe->add_option("--shape-checkpoint", pipe.shape_checkpoint, "shape net weights")->check(CLI::ExistingFile);
  c_pipe->add_option("--scene", pipe.scenes, "scene id (repeatable; default all)");
  c_pipe->add_flag("--oracle", pipe.oracle, "score proposals from the labels instead of the first stage");

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "per-op throughput table");
  c_bench->add_option("--repeat", bench.repeat, "timed repetitions (best is reported)");

  ScenesArgs scenes;
  auto* c_scenes = app.add_subcommand("make-scenes", "write synthetic scenes in dataset layout");
  c_scenes->add_option("--out", scenes.output, "dataset root")->required();
  c_scenes->add_option("--count", scenes.count, "number of scenes");
  c_scenes->add_option("--objects", scenes.objects, "cars per scene");

  DatabaseArgs db;
  auto* c_db = app.add_subcommand("build-db", "collect ground-truth object points");
  c_db->add_option("--data", db.data, "dataset root");
  c_db->add_option("--out", db.output, "database prefix")->required();

  AugmentArgs aug;
  auto* c_aug = app.add_subcommand("augment", "apply ground-truth sampling and global augmentation");
  c_aug->add_option("--data", aug.data, "dataset root");
  c_aug->add_option("--database", aug.database, "database prefix from build-db");
  c_aug->add_option("--out", aug.out_dir, "output directory")->required();
  c_aug->add_option("--scene", aug.scenes, "scene id (repeatable; default all)");

  for (auto* sub : app.get_subcommands({})) add_common(sub, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  RunConfig cfg;
  try {
    cfg = resolve(common);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (c_vox->parsed()) return run_voxelize(cfg, vox);
    if (c_corpus->parsed()) return run_make_corpus(cfg, corpus);
    if (c_train->parsed()) return run_shape_train(cfg, train);
    if (c_pred->parsed()) return run_shape_predict(cfg, pred);
    if (c_eval->parsed()) return run_eval(cfg, ev);
    if (c_pipe->parsed()) return run_pipeline(cfg, pipe);
    if (c_bench->parsed()) return run_bench(cfg, bench);
    if (c_scenes->parsed()) return run_make_scenes(cfg, scenes);
    if (c_db->parsed()) return run_build_db(cfg, db);
    if (c_aug->parsed()) return run_augment(cfg, aug);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
