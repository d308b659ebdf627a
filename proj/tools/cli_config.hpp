#pragma once

// Run configuration: one JSON document, every key optional, unknown keys rejected.

#include <stdexcept>
#include <string>

#include "shapedet/detect.hpp"
#include "shapedet/eval.hpp"
#include "shapedet/kitti.hpp"
#include "shapedet/shape.hpp"

namespace shapedet::cli {

/// Invalid configuration; `key()` is the dotted path of the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : std::runtime_error("config key '" + key + "': " + what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string data_root;
  std::string output_dir;
  std::string checkpoint;

  DetectorConfig detector;
  PipelineConfig pipeline;
  ShapeTrainConfig train;
  std::size_t holdout = 32;
  std::size_t corpus_count = 256;
  ShapeCorpusConfig corpus;
  EvalConfig eval;
  AugmentConfig augment;
  std::size_t gt_samples = 15;
  std::size_t db_min_points = 5;

  /// Checks value ranges and that configured paths exist.
  void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

}  // namespace shapedet::cli
