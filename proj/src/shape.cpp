#include "shapedet/shape.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "shapedet/simd.hpp"

namespace shapedet {

void ShapeNetConfig::validate() const {
  if (enc1_hidden == 0 || local_features == 0 || enc2_hidden == 0 || global_features == 0 ||
      decoder_hidden == 0 || output_points == 0) {
    throw DomainError("shape net: all widths must be positive");
  }
}

ShapePredictor ShapePredictor::init(const ShapeNetConfig& cfg, Rng& rng) {
  cfg.validate();
  ShapePredictor net;
  net.cfg_ = cfg;
  net.enc1_a_ = LinearLayer::init("shape.enc1.0", 3, cfg.enc1_hidden, rng);
  net.enc1_b_ = LinearLayer::init("shape.enc1.1", cfg.enc1_hidden, cfg.local_features, rng);
  net.enc2_a_ = LinearLayer::init("shape.enc2.0", 2 * cfg.local_features, cfg.enc2_hidden, rng);
  net.enc2_b_ = LinearLayer::init("shape.enc2.1", cfg.enc2_hidden, cfg.global_features, rng);
  net.dec_a_ = LinearLayer::init("shape.dec.0", cfg.global_features, cfg.decoder_hidden, rng);
  net.dec_b_ = LinearLayer::init("shape.dec.1", cfg.decoder_hidden, 3 * cfg.output_points, rng);
  return net;
}

ShapePredictor ShapePredictor::zeros(const ShapeNetConfig& cfg) {
  cfg.validate();
  ShapePredictor net;
  net.cfg_ = cfg;
  net.enc1_a_ = LinearLayer::zeros("shape.enc1.0", 3, cfg.enc1_hidden);
  net.enc1_b_ = LinearLayer::zeros("shape.enc1.1", cfg.enc1_hidden, cfg.local_features);
  net.enc2_a_ = LinearLayer::zeros("shape.enc2.0", 2 * cfg.local_features, cfg.enc2_hidden);
  net.enc2_b_ = LinearLayer::zeros("shape.enc2.1", cfg.enc2_hidden, cfg.global_features);
  net.dec_a_ = LinearLayer::zeros("shape.dec.0", cfg.global_features, cfg.decoder_hidden);
  net.dec_b_ = LinearLayer::zeros("shape.dec.1", cfg.decoder_hidden, 3 * cfg.output_points);
  return net;
}

ShapePredictor::Features ShapePredictor::encode(Tape& tape, Var points, std::size_t batch) {
  const Tensor& x = tape.value(points);
  if (x.rank() != 2 || x.cols() != 3) throw ShapeError("shape net: input must be [n x 3]");
  if (batch == 0 || x.rows() == 0 || x.rows() % batch != 0) {
    throw ShapeError("shape net: " + std::to_string(x.rows()) + " rows do not split into " +
                     std::to_string(batch) + " samples");
  }
  const std::size_t n = x.rows() / batch;
  // Per-point features, pooled to v, then v appended back onto every point.
  const Var local = tape.linear(tape.relu(tape.linear(points, enc1_a_)), enc1_b_);
  const Var v = tape.group_max_pool(local, n);
  const Var joined = tape.concat(local, tape.repeat_rows(v, n));
  const Var wide = tape.linear(tape.relu(tape.linear(joined, enc2_a_)), enc2_b_);
  return {v, tape.group_max_pool(wide, n)};
}

Var ShapePredictor::forward(Tape& tape, Var points, std::size_t batch) {
  const Features f = encode(tape, points, batch);
  const Var flat = tape.linear(tape.relu(tape.linear(f.global, dec_a_)), dec_b_);
  return tape.reshape(flat, {batch * cfg_.output_points, 3});
}

std::vector<Parameter*> ShapePredictor::parameters() {
  std::vector<Parameter*> out;
  for (auto* l : {&enc1_a_, &enc1_b_, &enc2_a_, &enc2_b_, &dec_a_, &dec_b_}) l->collect(out);
  return out;
}

Tensor predict_shape(const Tensor& pooled_matrix, ShapePredictor& net) {
  Tape tape;
  const Var out = net.forward(tape, tape.constant(pooled_matrix), 1);
  return tape.value(out);
}

Tensor predict_shape(const PooledPointGrid& grid, ShapePredictor& net) {
  return predict_shape(grid.normalized_matrix(), net);
}

double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw DomainError("chamfer_distance: empty point set");
  const PointsSoa sa(a), sb(b);
  const auto& k = simd::kernels();
  double fwd = 0.0, bwd = 0.0, d = 0.0;
  for (const auto& p : a) {
    k.nearest(sb.x.data(), sb.y.data(), sb.z.data(), sb.size(), p.x, p.y, p.z, &d);
    fwd += d;
  }
  for (const auto& p : b) {
    k.nearest(sa.x.data(), sa.y.data(), sa.z.data(), sa.size(), p.x, p.y, p.z, &d);
    bwd += d;
  }
  return fwd / static_cast<double>(a.size()) + bwd / static_cast<double>(b.size());
}

FusionParams FusionParams::init(std::size_t rows, std::size_t channels, const FusionConfig& cfg, Rng& rng) {
  FusionParams p;
  p.point_a = LinearLayer::init("fusion.point.0", rows, cfg.point_hidden, rng);
  p.point_b = LinearLayer::init("fusion.point.1", cfg.point_hidden, rows, rng);
  p.channel_a = LinearLayer::init("fusion.channel.0", channels, cfg.channel_hidden, rng);
  p.channel_b = LinearLayer::init("fusion.channel.1", cfg.channel_hidden, channels, rng);
  return p;
}

void FusionParams::collect(std::vector<Parameter*>& out) {
  for (auto* l : {&point_a, &point_b, &channel_a, &channel_b}) l->collect(out);
}

FusionOutput fuse_attention(Tape& tape, Var grid_features, Var structure, FusionParams& params) {
  const Tensor& g = tape.value(grid_features);
  const Tensor& s = tape.value(structure);
  if (g.rank() != 2 || s.rank() != 2 || s.rows() != 1) {
    throw ShapeError("fuse_attention: expected [rows x C2] and [1 x C1]");
  }
  const std::size_t rows = g.rows();
  if (rows != params.rows() || g.cols() + s.cols() != params.channels()) {
    throw ShapeError("fuse_attention: features " + shape_string(g.shape()) + " + " + shape_string(s.shape()) +
                     " do not match parameters for " + std::to_string(params.rows()) + " x " +
                     std::to_string(params.channels()));
  }
  FusionOutput out;
  out.concatenated = tape.concat(grid_features, tape.repeat_rows(structure, rows));

  // Point weights from the channel-wise max of every row.
  Var point = tape.reshape(tape.row_max_pool(out.concatenated), {1, rows});
  point = tape.linear(tape.relu(tape.linear(point, params.point_a)), params.point_b);
  point = tape.reshape(point, {rows, 1});

  // Channel weights from the point-wise max of every channel.
  Var channel = tape.set_max_pool(out.concatenated);
  channel = tape.linear(tape.relu(tape.linear(channel, params.channel_a)), params.channel_b);

  out.attention = tape.sigmoid(tape.matmul(point, channel));
  out.enhanced = tape.mul(out.attention, out.concatenated);
  return out;
}

ShapeExample make_shape_example(const ShapeSample& sample, int resolution) {
  ShapeExample ex;
  ex.input = roi_aware_pool(std::span<const Vec3>(sample.partial), sample.box, resolution).normalized_matrix();
  const auto local = to_canonical(std::span<const Vec3>(sample.complete), sample.box);
  ex.target = Tensor({local.size(), 3});
  for (std::size_t i = 0; i < local.size(); ++i) {
    ex.target[3 * i] = local[i].x / sample.box.l;
    ex.target[3 * i + 1] = local[i].y / sample.box.w;
    ex.target[3 * i + 2] = local[i].z / sample.box.h;
  }
  return ex;
}

namespace {

Tensor stack_inputs(const std::vector<ShapeExample>& examples, std::span<const std::size_t> idx) {
  const std::size_t n = examples[idx[0]].input.rows();
  Tensor x({idx.size() * n, 3});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const Tensor& in = examples[idx[b]].input;
    if (in.rows() != n) throw ShapeError("shape batch: inputs differ in size");
    std::copy(in.ptr(), in.ptr() + in.size(), x.ptr() + b * n * 3);
  }
  return x;
}

}  // namespace

ShapeTrainResult train_shape_net(ShapePredictor& net, const std::vector<ShapeExample>& train,
                                 const ShapeTrainConfig& cfg,
                                 const std::function<void(std::size_t, double)>& on_step) {
  if (train.empty()) throw DomainError("train_shape_net: empty dataset");
  if (cfg.batch == 0) throw DomainError("train_shape_net: batch must be >= 1");
  const std::size_t batch = std::min(cfg.batch, train.size());
  auto params = net.parameters();
  AdamState adam(cfg.adam);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  ShapeTrainResult result;
  result.loss_curve.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    // Epoch-wise reshuffle; a batch never straddles two epochs.
    if (cursor + batch > order.size()) {
      shuffle(order, rng);
      cursor = 0;
    }
    const std::span<const std::size_t> idx(order.data() + cursor, batch);
    cursor += batch;

    std::vector<Tensor> targets;
    for (auto i : idx) targets.push_back(train[i].target);
    Tape tape;
    const Var pred = net.forward(tape, tape.constant(stack_inputs(train, idx)), batch);
    const Var loss = tape.mean(tape.chamfer(pred, std::move(targets)));
    const double value = tape.value(loss).item();
    if (!std::isfinite(value)) {
      throw NumericError("train_shape_net: non-finite loss at step " + std::to_string(step));
    }
    result.loss_curve.push_back(value);
    for (auto* p : params) p->zero_grad();
    tape.backward(loss);
    adam_step(params, adam);
    if (on_step) on_step(step, value);
    if (cfg.checkpoint_every != 0 && !cfg.checkpoint_path.empty() && (step + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(cfg.checkpoint_path, std::vector<const Parameter*>(params.begin(), params.end()));
    }
  }
  return result;
}

double mean_chamfer(ShapePredictor& net, const std::vector<ShapeExample>& examples, std::size_t batch) {
  if (examples.empty()) throw DomainError("mean_chamfer: no examples");
  batch = std::max<std::size_t>(1, batch);
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < examples.size(); start += batch) {
    idx.clear();
    std::vector<Tensor> targets;
    for (std::size_t i = start; i < std::min(examples.size(), start + batch); ++i) {
      idx.push_back(i);
      targets.push_back(examples[i].target);
    }
    Tape tape;
    const Var pred = net.forward(tape, tape.constant(stack_inputs(examples, idx)), idx.size());
    total += tape.value(tape.sum(tape.chamfer(pred, std::move(targets)))).item();
  }
  return total / static_cast<double>(examples.size());
}

std::vector<double> window_means(const std::vector<double>& curve, std::size_t window) {
  if (window == 0) throw DomainError("window_means: zero window");
  std::vector<double> out;
  for (std::size_t start = 0; start + window <= curve.size(); start += window) {
    out.push_back(std::accumulate(curve.begin() + start, curve.begin() + start + window, 0.0) /
                  static_cast<double>(window));
  }
  return out;
}

}  // namespace shapedet
