#include "cli_config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace shapedet::cli {

namespace {

using nlohmann::json;

// Reads members of one JSON object and remembers which ones were used, so
// leftovers can be reported by their full path.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string key(const std::string& name) const { return path_.empty() ? name : path_ + "." + name; }

  const json* find(const std::string& name) {
    used_.insert(name);
    auto it = j_.find(name);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void read(const std::string& name, T& out) {
    if (const json* v = find(name)) {
      try {
        if constexpr (std::is_unsigned_v<T>) {
          if (!v->is_number_unsigned()) throw ConfigError(key(name), "expected a non-negative integer");
        } else if constexpr (std::is_floating_point_v<T>) {
          if (!v->is_number()) throw ConfigError(key(name), "expected a number");
        } else if constexpr (std::is_integral_v<T>) {
          if (!v->is_number_integer()) throw ConfigError(key(name), "expected an integer");
        }
        out = v->get<T>();
      } catch (const json::exception& e) {
        throw ConfigError(key(name), e.what());
      }
    }
  }

  template <typename T, std::size_t N>
  void read_array(const std::string& name, std::array<T, N>& out) {
    if (const json* v = find(name)) {
      if (!v->is_array() || v->size() != N) throw ConfigError(key(name), "expected " + std::to_string(N) + " values");
      for (std::size_t i = 0; i < N; ++i) {
        if (!(*v)[i].is_number()) throw ConfigError(key(name), "expected numbers");
        out[i] = (*v)[i].get<T>();
      }
    }
  }

  void read_vec3(const std::string& name, Vec3& out) {
    std::array<double, 3> a{out.x, out.y, out.z};
    read_array(name, a);
    out = {a[0], a[1], a[2]};
  }

  void read_sizes(const std::string& name, std::vector<std::size_t>& out) {
    if (const json* v = find(name)) {
      if (!v->is_array()) throw ConfigError(key(name), "expected an array of integers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_unsigned()) throw ConfigError(key(name), "expected non-negative integers");
        out.push_back(e.get<std::size_t>());
      }
    }
  }

  void read_iou_kind(const std::string& name, IouKind& out) {
    std::string s = out == IouKind::kBev ? "bev" : "3d";
    read(name, s);
    if (s == "bev") out = IouKind::kBev;
    else if (s == "3d") out = IouKind::k3d;
    else throw ConfigError(key(name), "expected \"bev\" or \"3d\"");
  }

  std::optional<Section> child(const std::string& name) {
    if (const json* v = find(name)) return Section(*v, key(name));
    return std::nullopt;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(key(it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <typename Fn>
void with_child(Section& parent, const std::string& name, Fn fn) {
  if (auto s = parent.child(name)) {
    fn(*s);
    s->finish();
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("<root>", std::string("not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section root(doc, "");
  root.read("seed", c.seed);
  root.read("threads", c.threads);
  with_child(root, "paths", [&](Section& s) {
    s.read("data_root", c.data_root);
    s.read("output_dir", c.output_dir);
    s.read("checkpoint", c.checkpoint);
  });
  DetectorConfig& d = c.detector;
  with_child(root, "grid", [&](Section& s) {
    s.read_vec3("range_min", d.grid.range_min);
    s.read_vec3("range_max", d.grid.range_max);
    s.read_vec3("voxel_size", d.grid.voxel_size);
  });
  with_child(root, "backbone", [&](Section& s) {
    s.read_array("channels", d.backbone.channels);
    s.read_array("strides", d.backbone.strides);
  });
  if (const auto* a = root.find("anchors")) {
    if (!a->is_array() || a->empty()) throw ConfigError("anchors", "expected a non-empty array");
    d.anchors.clear();
    for (std::size_t i = 0; i < a->size(); ++i) {
      Section s((*a)[i], "anchors[" + std::to_string(i) + "]");
      AnchorSpec spec;
      s.read("class", spec.label);
      std::array<double, 3> size{spec.l, spec.w, spec.h};
      s.read_array("size", size);
      spec.l = size[0];
      spec.w = size[1];
      spec.h = size[2];
      s.read("z_center", spec.z_center);
      s.read_array("yaws", spec.yaws);
      s.finish();
      d.anchors.push_back(spec);
    }
  }
  with_child(root, "keypoints", [&](Section& s) {
    s.read("count", d.keypoints);
    s.read_array("radii", d.vsa_radii);
    s.read("neighbors", d.vsa_neighbors);
    s.read("width", d.vsa_width);
  });
  root.read("pool_resolution", d.pool_resolution);
  with_child(root, "shape_net", [&](Section& s) {
    s.read("enc1_hidden", d.shape.enc1_hidden);
    s.read("local_features", d.shape.local_features);
    s.read("enc2_hidden", d.shape.enc2_hidden);
    s.read("global_features", d.shape.global_features);
    s.read("decoder_hidden", d.shape.decoder_hidden);
  });
  with_child(root, "msg", [&](Section& s) {
    s.read("centers", d.msg.centers);
    s.read("neighbors", d.msg.neighbors);
    s.read_array("radii", d.msg.radii);
    s.read_sizes("hidden", d.msg.hidden);
    s.read("channels", d.msg.channels);
  });
  with_child(root, "roi_grid", [&](Section& s) {
    s.read("grid", d.roi_grid.grid);
    s.read_array("radii", d.roi_grid.radii);
    s.read("neighbors", d.roi_grid.neighbors);
    s.read_sizes("widths", d.roi_grid.widths);
  });
  with_child(root, "fusion", [&](Section& s) {
    s.read("point_hidden", d.fusion.point_hidden);
    s.read("channel_hidden", d.fusion.channel_hidden);
  });
  root.read("head_width", d.head_width);
  with_child(root, "nms", [&](Section& s) {
    s.read("pre_top_k", c.pipeline.pre_nms_top_k);
    s.read("rpn_threshold", c.pipeline.rpn_nms_threshold);
    s.read_iou_kind("rpn_kind", c.pipeline.rpn_nms_kind);
    s.read("post_top_k", c.pipeline.post_nms_top_k);
    s.read("final_threshold", c.pipeline.final_nms_threshold);
    s.read_iou_kind("final_kind", c.pipeline.final_nms_kind);
  });
  with_child(root, "train", [&](Section& s) {
    s.read("steps", c.train.steps);
    s.read("batch", c.train.batch);
    s.read("learning_rate", c.train.adam.learning_rate);
    s.read("decay_factor", c.train.adam.decay_factor);
    s.read("decay_interval", c.train.adam.decay_interval);
    s.read("checkpoint_every", c.train.checkpoint_every);
    s.read("holdout", c.holdout);
  });
  with_child(root, "corpus", [&](Section& s) {
    s.read("count", c.corpus_count);
    s.read("points", c.corpus.points);
    s.read("min_drop", c.corpus.min_drop);
    s.read("max_drop", c.corpus.max_drop);
  });
  with_child(root, "eval", [&](Section& s) {
    s.read("class", c.eval.label);
    bool explicit_threshold = s.find("iou_threshold") != nullptr;
    if (explicit_threshold) s.read("iou_threshold", c.eval.iou_threshold);
    else c.eval.iou_threshold = EvalConfig::default_threshold(c.eval.label);
    s.read("recall_positions", c.eval.recall_positions);
    s.read_iou_kind("metric", c.eval.metric);
    std::string diff = difficulty_name(c.eval.difficulty);
    s.read("difficulty", diff);
    try {
      c.eval.difficulty = parse_difficulty(diff);
    } catch (const DomainError& e) {
      throw ConfigError(s.key("difficulty"), e.what());
    }
  });
  with_child(root, "augment", [&](Section& s) {
    s.read("flip_probability", c.augment.flip_probability);
    s.read("max_rotation", c.augment.max_rotation);
    s.read("min_scale", c.augment.min_scale);
    s.read("max_scale", c.augment.max_scale);
    s.read("gt_samples", c.gt_samples);
    s.read("db_min_points", c.db_min_points);
  });
  root.finish();
  c.train.resolution = d.pool_resolution;
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

void RunConfig::validate() const {
  namespace fs = std::filesystem;
  if (threads == 0) throw ConfigError("threads", "must be >= 1");
  if (!data_root.empty() && !fs::is_directory(data_root)) throw ConfigError("paths.data_root", "no such directory");
  if (!checkpoint.empty() && !fs::exists(checkpoint)) throw ConfigError("paths.checkpoint", "no such file");
  try {
    detector.validate();
  } catch (const DomainError& e) {
    throw ConfigError("detector", e.what());
  }
  if (train.batch == 0) throw ConfigError("train.batch", "must be >= 1");
  if (!(train.adam.learning_rate >= 0.0)) throw ConfigError("train.learning_rate", "must be >= 0");
  if (!(pipeline.rpn_nms_threshold >= 0.0 && pipeline.rpn_nms_threshold <= 1.0)) {
    throw ConfigError("nms.rpn_threshold", "must be in [0, 1]");
  }
  if (!(pipeline.final_nms_threshold >= 0.0 && pipeline.final_nms_threshold <= 1.0)) {
    throw ConfigError("nms.final_threshold", "must be in [0, 1]");
  }
  try {
    eval.validate();
  } catch (const DomainError& e) {
    throw ConfigError("eval", e.what());
  }
  if (!(augment.min_scale > 0.0 && augment.min_scale <= augment.max_scale)) {
    throw ConfigError("augment.min_scale", "need 0 < min_scale <= max_scale");
  }
  if (!(augment.flip_probability >= 0.0 && augment.flip_probability <= 1.0)) {
    throw ConfigError("augment.flip_probability", "must be in [0, 1]");
  }
}

}  // namespace shapedet::cli
