#pragma once

#include <string>

#include "cli_config.hpp"

namespace shapedet::cli {

struct VoxelizeArgs {
  std::string input, output, summary;
};
struct CorpusArgs {
  std::string output;
};
struct TrainArgs {
  std::string corpus, out_dir;
};
struct PredictArgs {
  std::string checkpoint, corpus, output;
  std::size_t index = 0;
};
struct EvalArgs {
  std::string labels, detections, calib, output;
};
struct PipelineArgs {
  std::string data, out_dir, shape_checkpoint;
  std::vector<std::string> scenes;
  bool oracle = false;
};
struct BenchArgs {
  std::size_t repeat = 3;
};
struct ScenesArgs {
  std::string output;
  std::size_t count = 4;
  std::size_t objects = 3;
};
struct DatabaseArgs {
  std::string data, output;
};
struct AugmentArgs {
  std::string data, database, out_dir;
  std::vector<std::string> scenes;
};

int run_voxelize(const RunConfig& cfg, const VoxelizeArgs& args);
int run_make_corpus(const RunConfig& cfg, const CorpusArgs& args);
int run_shape_train(const RunConfig& cfg, const TrainArgs& args);
int run_shape_predict(const RunConfig& cfg, const PredictArgs& args);
int run_eval(const RunConfig& cfg, const EvalArgs& args);
int run_pipeline(const RunConfig& cfg, const PipelineArgs& args);
int run_bench(const RunConfig& cfg, const BenchArgs& args);
int run_make_scenes(const RunConfig& cfg, const ScenesArgs& args);
int run_build_db(const RunConfig& cfg, const DatabaseArgs& args);
int run_augment(const RunConfig& cfg, const AugmentArgs& args);

/// Stderr logging with a command prefix.
void log(const std::string& message);

}  // namespace shapedet::cli
