#include "shapedet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

#include "shapedet/simd.hpp"

namespace shapedet {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kProbFloor = 1e-12;
constexpr double kBceEps = 1e-15;

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(product(shape_) == data_.size(), "tensor: shape " + shape_string(shape_) +
                                               " does not match " + std::to_string(data_.size()) +
                                               " values");
}

Tensor Tensor::row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({1, n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? 1 : shape_.front();
}

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

double Tensor::item() const {
  require(data_.size() == 1, "tensor: item() on " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  return Tensor(std::move(shape), data_);
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? " x " : "") << shape[i];
  os << ']';
  return os.str();
}

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)), value(std::move(v)), grad(value.shape(), 0.0) {}

void Parameter::zero_grad() {
  if (!grad.same_shape(value)) grad = Tensor(value.shape(), 0.0);
  std::fill(grad.data().begin(), grad.data().end(), 0.0);
}

LinearLayer LinearLayer::init(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out), b(out);
  for (auto& x : w) x = rng.uniform(-bound, bound);
  for (auto& x : b) x = rng.uniform(-bound, bound);
  return {Parameter(name + ".weight", Tensor({out, in}, std::move(w))),
          Parameter(name + ".bias", Tensor({1, out}, std::move(b)))};
}

LinearLayer LinearLayer::zeros(const std::string& name, std::size_t in, std::size_t out) {
  return {Parameter(name + ".weight", Tensor({out, in}, 0.0)),
          Parameter(name + ".bias", Tensor({1, out}, 0.0))};
}

void LinearLayer::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Tensor transpose(const Tensor& t) {
  require(t.rank() == 2, "transpose: rank-2 tensor required");
  const std::size_t r = t.rows(), c = t.cols();
  Tensor out({c, r});
  constexpr std::size_t kTile = 32;
  for (std::size_t i0 = 0; i0 < r; i0 += kTile)
    for (std::size_t j0 = 0; j0 < c; j0 += kTile)
      for (std::size_t i = i0; i < std::min(r, i0 + kTile); ++i)
        for (std::size_t j = j0; j < std::min(c, j0 + kTile); ++j) out[j * r + i] = t[i * c + j];
  return out;
}

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require(x.rank() == 2 && weight.rank() == 2, "linear: rank-2 operands required");
  const std::size_t n = x.rows(), in = x.cols(), out = weight.rows();
  require(weight.cols() == in, "linear: input width " + std::to_string(in) +
                                   " does not match weight " + shape_string(weight.shape()));
  require(bias.size() == out, "linear: bias size does not match weight rows");
  Tensor y({n, out});
  for (std::size_t r = 0; r < n; ++r) std::copy(bias.ptr(), bias.ptr() + out, y.ptr() + r * out);
  const auto& k = simd::kernels();
  if (n < 8) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t o = 0; o < out; ++o)
        y[r * out + o] += k.dot(x.ptr() + r * in, weight.ptr() + o * in, in);
  } else {
    const Tensor wt = transpose(weight);
    k.gemm_nn(n, out, in, x.ptr(), in, wt.ptr(), out, y.ptr(), out);
  }
  return y;
}

// ---------------------------------------------------------------- Tape

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw InternalError("tape: variable does not belong to this tape");
  return nodes_[v.id];
}

Var Tape::constant(Tensor t) {
  Node n;
  n.value = std::move(t);
  return push(std::move(n));
}

Var Tape::input(Tensor t) {
  Node n;
  n.value = std::move(t);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.borrowed = &p.value;
  n.requires_grad = true;
  n.param = &p;
  return push(std::move(n));
}

const Tensor& Tape::value(Var v) const { return node_value(v.id); }

const Tensor& Tape::node_value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.borrowed != nullptr ? *n.borrowed : n.value;
}

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  const Tensor& val = node_value(v.id);
  if (n.grad.same_shape(val)) return n.grad;
  return Tensor(val.shape(), 0.0);
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  const Tensor& val = node_value(id);
  if (!n.grad.same_shape(val)) n.grad = Tensor(val.shape(), 0.0);
  return n.grad;
}

Var Tape::linear(Var x, Var weight, Var bias) {
  Node n;
  n.op = Op::kLinear;
  n.value = linear_forward(value(x), value(weight), value(bias));
  n.inputs = {x.id, weight.id, bias.id};
  n.requires_grad = requires_grad(x) || requires_grad(weight) || requires_grad(bias);
  return push(std::move(n));
}

Var Tape::relu(Var x) {
  Node n;
  n.op = Op::kRelu;
  n.value = value(x);
  for (double& v : n.value.data()) v = v > 0.0 ? v : 0.0;
  n.inputs = {x.id};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Var Tape::sigmoid(Var x) {
  Node n;
  n.op = Op::kSigmoid;
  n.value = value(x);
  for (double& v : n.value.data()) v = stable_sigmoid(v);
  n.inputs = {x.id};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Var Tape::set_max_pool(Var x) {
  const Tensor& xv = value(x);
  if (xv.rows() == 0) throw DomainError("set_max_pool: empty point axis");
  return group_max_pool(x, xv.rows());
}

Var Tape::group_max_pool(Var x, std::size_t group_rows) {
  const Tensor& xv = value(x);
  require(xv.rank() == 2, "group_max_pool: rank-2 input required");
  if (group_rows == 0 || xv.rows() == 0) throw DomainError("group_max_pool: empty group");
  require(xv.rows() % group_rows == 0, "group_max_pool: rows not divisible by group size");
  const std::size_t groups = xv.rows() / group_rows, c = xv.cols();
  Node n;
  n.op = Op::kGroupMaxPool;
  n.value = Tensor({groups, c});
  n.index_aux.resize(groups * c);
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t r0 = g * group_rows;
    for (std::size_t j = 0; j < c; ++j) {
      double best = xv[r0 * c + j];
      std::size_t arg = r0;
      for (std::size_t r = r0 + 1; r < r0 + group_rows; ++r) {
        if (xv[r * c + j] > best) {  // strict: ties keep the lowest row
          best = xv[r * c + j];
          arg = r;
        }
      }
      n.value[g * c + j] = best;
      n.index_aux[g * c + j] = arg;
    }
  }
  n.inputs = {x.id};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Var Tape::row_max_pool(Var x) {
  const Tensor& xv = value(x);
  require(xv.rank() == 2, "row_max_pool: rank-2 input required");
  if (xv.cols() == 0) throw DomainError("row_max_pool: empty channel axis");
  const std::size_t r = xv.rows(), c = xv.cols();
  Node n;
  n.op = Op::kRowMaxPool;
  n.value = Tensor({r, 1});
  n.index_aux.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (xv[i * c + j] > xv[i * c + arg]) arg = j;
    n.value[i] = xv[i * c + arg];
    n.index_aux[i] = arg;
  }
  n.inputs = {x.id};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Var Tape::concat(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require(av.rank() == 2 && bv.rank() == 2 && av.rows() == bv.rows(),
          "concat: row counts differ " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  const std::size_t r = av.rows(), ca = av.cols(), cb = bv.cols();
  Node n;
  n.op = Op::kConcat;
  n.value = Tensor({r, ca + cb});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy(av.ptr() + i * ca, av.ptr() + (i + 1) * ca, n.value.ptr() + i * (ca + cb));
    std::copy(bv.ptr() + i * cb, bv.ptr() + (i + 1) * cb, n.value.ptr() + i * (ca + cb) + ca);
  }
  n.inputs = {a.id, b.id};
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

Var Tape::repeat_rows(Var x, std::size_t times) {
  const Tensor& xv = value(x);
  require(xv.rank() == 2, "repeat_rows: rank-2 input required");
  if (times == 0) throw DomainError("repeat_rows: zero repetitions");
  const std::size_t g = xv.rows(), c = xv.cols();
  Node n;
  n.op = Op::kRepeatRows;
  n.value = Tensor({g * times, c});
  for (std::size_t i = 0; i < g; ++i)
    for (std::size_t t = 0; t < times; ++t)
      std::copy(xv.ptr() + i * c, xv.ptr() + (i + 1) * c, n.value.ptr() + (i * times + t) * c);
  n.index_aux = {times};
  n.inputs = {x.id};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  require(value(a).same_shape(value(b)), "add: shape mismatch");
  Node n;
  n.op = Op::kAdd;
  n.value = value(a);
  const Tensor& bv = value(b);
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] += bv[i];
  n.inputs = {a.id, b.id};
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  require(value(a).same_shape(value(b)), "sub: shape mismatch");
  Node n;
  n.op = Op::kSub;
  n.value = value(a);
  const Tensor& bv = value(b);
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] -= bv[i];
  n.inputs = {a.id, b.id};
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  require(value(a).same_shape(value(b)), "mul: shape mismatch");
  Node n;
  n.op = Op::kMul;
  n.value = value(a);
  const Tensor& bv = value(b);
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] *= bv[i];
  n.inputs = {a.id, b.id};
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

Var Tape::scale(Var x, double s) {
  Node n;
  n.op = Op::kScale;
  n.value = value(x);
  for (double& v : n.value.data()) v *= s;
  n.scalar_aux = {s};
  n.inputs = {x.id};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require(av.rank() == 2 && bv.rank() == 2 && av.cols() == bv.rows(),
          "matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  Node n;
  n.op = Op::kMatMul;
  n.value = Tensor({av.rows(), bv.cols()});
  simd::kernels().gemm_nn(av.rows(), bv.cols(), av.cols(), av.ptr(), av.cols(), bv.ptr(), bv.cols(),
                          n.value.ptr(), bv.cols());
  n.inputs = {a.id, b.id};
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

Var Tape::reshape(Var x, std::vector<std::size_t> shape) {
  Node n;
  n.op = Op::kReshape;
  n.value = value(x).reshaped(std::move(shape));
  n.inputs = {x.id};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Var Tape::gather_rows(Var x, std::vector<std::size_t> indices) {
  const Tensor& xv = value(x);
  require(xv.rank() == 2, "gather_rows: rank-2 input required");
  const std::size_t c = xv.cols();
  Node n;
  n.op = Op::kGatherRows;
  n.value = Tensor({indices.size(), c});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= xv.rows()) throw InternalError("gather_rows: index out of range");
    std::copy(xv.ptr() + indices[i] * c, xv.ptr() + (indices[i] + 1) * c, n.value.ptr() + i * c);
  }
  n.index_aux = std::move(indices);
  n.inputs = {x.id};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Var Tape::sum(Var x) {
  Node n;
  n.op = Op::kSum;
  const auto d = value(x).data();
  n.value = Tensor::scalar(std::accumulate(d.begin(), d.end(), 0.0));
  n.inputs = {x.id};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Var Tape::mean(Var x) {
  const auto d = value(x).data();
  if (d.empty()) throw DomainError("mean: empty tensor");
  Node n;
  n.op = Op::kMean;
  n.value = Tensor::scalar(std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size()));
  n.inputs = {x.id};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

namespace {

struct Soa {
  std::vector<double> x, y, z;
  explicit Soa(const double* rows, std::size_t n) : x(n), y(n), z(n) {
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rows[3 * i];
      y[i] = rows[3 * i + 1];
      z[i] = rows[3 * i + 2];
    }
  }
};

}  // namespace

Var Tape::chamfer(Var a, std::vector<Tensor> targets) {
  const Tensor& av = value(a);
  require(av.rank() == 2 && av.cols() == 3, "chamfer: [N x 3] points required");
  const std::size_t batch = targets.size();
  if (batch == 0 || av.rows() == 0) throw DomainError("chamfer: empty point set");
  require(av.rows() % batch == 0, "chamfer: rows not divisible by batch");
  const std::size_t na = av.rows() / batch;
  const auto& k = simd::kernels();
  Node n;
  n.op = Op::kChamfer;
  n.value = Tensor({batch, 1});
  for (std::size_t b = 0; b < batch; ++b) {
    const Tensor& t = targets[b];
    require(t.rank() == 2 && t.cols() == 3, "chamfer: [N x 3] targets required");
    if (t.rows() == 0) throw DomainError("chamfer: empty point set");
    const std::size_t nb = t.rows();
    const double* ap = av.ptr() + b * na * 3;
    const Soa asoa(ap, na), tsoa(t.ptr(), nb);
    double fwd = 0.0, bwd = 0.0, d = 0.0;
    for (std::size_t i = 0; i < na; ++i) {
      n.index_aux.push_back(
          k.nearest(tsoa.x.data(), tsoa.y.data(), tsoa.z.data(), nb, ap[3 * i], ap[3 * i + 1], ap[3 * i + 2], &d));
      fwd += d;
    }
    for (std::size_t j = 0; j < nb; ++j) {
      n.index_aux.push_back(k.nearest(asoa.x.data(), asoa.y.data(), asoa.z.data(), na, t[3 * j],
                                      t[3 * j + 1], t[3 * j + 2], &d));
      bwd += d;
    }
    n.value[b] = fwd / static_cast<double>(na) + bwd / static_cast<double>(nb);
  }
  n.tensor_aux = std::move(targets);
  n.inputs = {a.id};
  n.requires_grad = requires_grad(a);
  return push(std::move(n));
}

Var Tape::focal(Var p_t, FocalParams params, Reduction reduction) {
  const Tensor& pv = value(p_t);
  Node n;
  n.op = Op::kFocal;
  double total = 0.0;
  bool clamped = false;
  for (double p : pv.data()) {
    if (p < kProbFloor) {
      p = kProbFloor;
      clamped = true;
    }
    total += -params.alpha * std::pow(1.0 - p, params.gamma) * std::log(p);
  }
  if (clamped) std::cerr << "warning: focal loss clamped p_t to " << kProbFloor << '\n';
  const double count = static_cast<double>(std::max<std::size_t>(pv.size(), 1));
  n.value = Tensor::scalar(reduction == Reduction::kMean ? total / count : total);
  n.scalar_aux = {params.alpha, params.gamma, reduction == Reduction::kMean ? 1.0 / count : 1.0};
  n.inputs = {p_t.id};
  n.requires_grad = requires_grad(p_t);
  return push(std::move(n));
}

Var Tape::binary_focal(Var prob, std::vector<double> labels, FocalParams params, Reduction reduction) {
  const Tensor& pv = value(prob);
  require(labels.size() == pv.size(), "binary_focal: label count mismatch");
  Node n;
  n.op = Op::kBinaryFocal;
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const bool pos = labels[i] > 0.5;
    const double pt = std::max(pos ? pv[i] : 1.0 - pv[i], kProbFloor);
    const double at = pos ? params.alpha : 1.0 - params.alpha;
    total += -at * std::pow(1.0 - pt, params.gamma) * std::log(pt);
  }
  const double count = static_cast<double>(std::max<std::size_t>(pv.size(), 1));
  n.value = Tensor::scalar(reduction == Reduction::kMean ? total / count : total);
  labels.push_back(params.alpha);
  labels.push_back(params.gamma);
  labels.push_back(reduction == Reduction::kMean ? 1.0 / count : 1.0);
  n.scalar_aux = std::move(labels);
  n.inputs = {prob.id};
  n.requires_grad = requires_grad(prob);
  return push(std::move(n));
}

Var Tape::bce(Var prob, Tensor target, std::vector<double> row_mask) {
  const Tensor& pv = value(prob);
  require(pv.same_shape(target), "bce: target shape mismatch");
  require(row_mask.size() == pv.rows(), "bce: mask length mismatch");
  const std::size_t c = pv.cols();
  Node n;
  n.op = Op::kBce;
  double total = 0.0;
  std::size_t active = 0;
  for (std::size_t r = 0; r < pv.rows(); ++r) {
    if (row_mask[r] == 0.0) continue;
    ++active;
    for (std::size_t j = 0; j < c; ++j) {
      const double p = std::clamp(pv[r * c + j], kBceEps, 1.0 - kBceEps);
      const double t = target[r * c + j];
      total += -t * std::log(p) - (1.0 - t) * std::log(1.0 - p);
    }
  }
  const double denom = active == 0 ? 1.0 : static_cast<double>(active * c);
  n.value = Tensor::scalar(total / denom);
  row_mask.push_back(1.0 / denom);
  n.scalar_aux = std::move(row_mask);
  n.tensor_aux = {std::move(target)};
  n.inputs = {prob.id};
  n.requires_grad = requires_grad(prob);
  return push(std::move(n));
}

namespace {

double smooth_l1(double d, double beta) {
  const double a = std::abs(d);
  return a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
}

double smooth_l1_grad(double d, double beta) {
  if (std::abs(d) < beta) return d / beta;
  return d > 0.0 ? 1.0 : -1.0;
}

}  // namespace

Var Tape::box_smooth_l1(Var pred, Tensor target, double beta) {
  const Tensor& pv = value(pred);
  require(pv.same_shape(target) && (pv.empty() || pv.cols() == 7),
          "box_smooth_l1: [K x 7] prediction and target required");
  Node n;
  n.op = Op::kBoxSmoothL1;
  double total = 0.0;
  const std::size_t k = pv.empty() ? 0 : pv.rows();
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t j = 0; j < 7; ++j) {
      const double d = j == 6 ? std::sin(pv[r * 7 + j] - target[r * 7 + j]) : pv[r * 7 + j] - target[r * 7 + j];
      total += smooth_l1(d, beta);
    }
  }
  const double denom = k == 0 ? 1.0 : static_cast<double>(k);
  n.value = Tensor::scalar(total / denom);
  n.scalar_aux = {beta, 1.0 / denom};
  n.tensor_aux = {std::move(target)};
  n.inputs = {pred.id};
  n.requires_grad = requires_grad(pred);
  return push(std::move(n));
}

// ---------------------------------------------------------------- backward

void Tape::backward(Var output) {
  if (backward_done_) throw InternalError("tape: backward called twice");
  const Node& out = node(output);
  require(node_value(output.id).size() == 1, "backward: output must be a single element, got " +
                                                  shape_string(node_value(output.id).shape()));
  backward_done_ = true;
  if (!out.requires_grad) return;
  grad_buffer(output.id)[0] = 1.0;
  for (std::size_t id = output.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.grad.same_shape(node_value(id))) continue;
    backward_node(id);
  }
}

void Tape::backward_node(std::size_t id) {
  // Copy what we need: grad_buffer() may reallocate sibling grads, never nodes_.
  Node& n = nodes_[id];
  const Tensor& g = n.grad;
  auto in_grad = [&](std::size_t slot) -> Tensor* {
    const std::size_t src = n.inputs[slot];
    return nodes_[src].requires_grad ? &grad_buffer(src) : nullptr;
  };
  auto in_value = [&](std::size_t slot) -> const Tensor& { return node_value(n.inputs[slot]); };
  const auto& k = simd::kernels();

  switch (n.op) {
    case Op::kLeaf:
      if (n.param != nullptr) {
        if (!n.param->grad.same_shape(n.param->value)) n.param->grad = Tensor(n.param->value.shape(), 0.0);
        k.axpy(1.0, g.ptr(), n.param->grad.ptr(), g.size());
      }
      break;
    case Op::kLinear: {
      const Tensor& x = in_value(0);
      const Tensor& w = in_value(1);
      const std::size_t rows = x.rows(), in = x.cols(), out = w.rows();
      if (Tensor* gx = in_grad(0)) k.gemm_nn(rows, in, out, g.ptr(), out, w.ptr(), in, gx->ptr(), in);
      if (Tensor* gw = in_grad(1)) {
        const Tensor gt = transpose(g);
        k.gemm_nn(out, in, rows, gt.ptr(), rows, x.ptr(), in, gw->ptr(), in);
      }
      if (Tensor* gb = in_grad(2)) {
        for (std::size_t r = 0; r < rows; ++r) k.axpy(1.0, g.ptr() + r * out, gb->ptr(), out);
      }
      break;
    }
    case Op::kRelu:
      if (Tensor* gx = in_grad(0)) {
        const Tensor& x = in_value(0);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += x[i] > 0.0 ? g[i] : 0.0;
      }
      break;
    case Op::kSigmoid:
      if (Tensor* gx = in_grad(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
      }
      break;
    case Op::kGroupMaxPool:
      if (Tensor* gx = in_grad(0)) {
        const std::size_t c = n.value.cols();
        for (std::size_t i = 0; i < n.index_aux.size(); ++i) (*gx)[n.index_aux[i] * c + i % c] += g[i];
      }
      break;
    case Op::kRowMaxPool:
      if (Tensor* gx = in_grad(0)) {
        const std::size_t c = in_value(0).cols();
        for (std::size_t r = 0; r < n.index_aux.size(); ++r) (*gx)[r * c + n.index_aux[r]] += g[r];
      }
      break;
    case Op::kConcat: {
      const std::size_t ca = in_value(0).cols(), cb = in_value(1).cols(), rows = n.value.rows();
      if (Tensor* ga = in_grad(0))
        for (std::size_t r = 0; r < rows; ++r) k.axpy(1.0, g.ptr() + r * (ca + cb), ga->ptr() + r * ca, ca);
      if (Tensor* gb = in_grad(1))
        for (std::size_t r = 0; r < rows; ++r)
          k.axpy(1.0, g.ptr() + r * (ca + cb) + ca, gb->ptr() + r * cb, cb);
      break;
    }
    case Op::kRepeatRows:
      if (Tensor* gx = in_grad(0)) {
        const std::size_t times = n.index_aux[0], c = n.value.cols();
        for (std::size_t r = 0; r < n.value.rows(); ++r) k.axpy(1.0, g.ptr() + r * c, gx->ptr() + (r / times) * c, c);
      }
      break;
    case Op::kAdd:
    case Op::kSub: {
      const double sign_b = n.op == Op::kAdd ? 1.0 : -1.0;
      if (Tensor* ga = in_grad(0)) k.axpy(1.0, g.ptr(), ga->ptr(), g.size());
      if (Tensor* gb = in_grad(1)) k.axpy(sign_b, g.ptr(), gb->ptr(), g.size());
      break;
    }
    case Op::kMul: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      if (Tensor* ga = in_grad(0))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b[i];
      if (Tensor* gb = in_grad(1))
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a[i];
      break;
    }
    case Op::kScale:
      if (Tensor* gx = in_grad(0)) k.axpy(n.scalar_aux[0], g.ptr(), gx->ptr(), g.size());
      break;
    case Op::kMatMul: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      const std::size_t m = a.rows(), kk = a.cols(), cols = b.cols();
      if (Tensor* ga = in_grad(0)) {
        const Tensor bt = transpose(b);
        k.gemm_nn(m, kk, cols, g.ptr(), cols, bt.ptr(), kk, ga->ptr(), kk);
      }
      if (Tensor* gb = in_grad(1)) {
        const Tensor at = transpose(a);
        k.gemm_nn(kk, cols, m, at.ptr(), m, g.ptr(), cols, gb->ptr(), cols);
      }
      break;
    }
    case Op::kReshape:
      if (Tensor* gx = in_grad(0)) k.axpy(1.0, g.ptr(), gx->ptr(), g.size());
      break;
    case Op::kGatherRows:
      if (Tensor* gx = in_grad(0)) {
        const std::size_t c = n.value.cols();
        for (std::size_t i = 0; i < n.index_aux.size(); ++i)
          k.axpy(1.0, g.ptr() + i * c, gx->ptr() + n.index_aux[i] * c, c);
      }
      break;
    case Op::kSum:
      if (Tensor* gx = in_grad(0))
        for (double& v : gx->data()) v += g[0];
      break;
    case Op::kMean:
      if (Tensor* gx = in_grad(0)) {
        const double s = g[0] / static_cast<double>(gx->size());
        for (double& v : gx->data()) v += s;
      }
      break;
    case Op::kChamfer:
      if (Tensor* ga = in_grad(0)) {
        const Tensor& a = in_value(0);
        const std::size_t batch = n.tensor_aux.size(), na = a.rows() / batch;
        std::size_t cursor = 0;
        for (std::size_t b = 0; b < batch; ++b) {
          const Tensor& t = n.tensor_aux[b];
          const std::size_t nb = t.rows();
          const double* ap = a.ptr() + b * na * 3;
          double* gp = ga->ptr() + b * na * 3;
          const double sa = 2.0 * g[b] / static_cast<double>(na);
          const double sb = 2.0 * g[b] / static_cast<double>(nb);
          for (std::size_t i = 0; i < na; ++i) {
            const std::size_t j = n.index_aux[cursor++];
            for (int d = 0; d < 3; ++d) gp[3 * i + d] += sa * (ap[3 * i + d] - t[3 * j + d]);
          }
          for (std::size_t j = 0; j < nb; ++j) {
            const std::size_t i = n.index_aux[cursor++];
            for (int d = 0; d < 3; ++d) gp[3 * i + d] += sb * (ap[3 * i + d] - t[3 * j + d]);
          }
        }
      }
      break;
    case Op::kFocal:
      if (Tensor* gx = in_grad(0)) {
        const double alpha = n.scalar_aux[0], gamma = n.scalar_aux[1], red = n.scalar_aux[2];
        const Tensor& p = in_value(0);
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double pt = std::max(p[i], kProbFloor);
          const double q = 1.0 - pt;
          double d = -alpha * std::pow(q, gamma) / pt;
          if (gamma != 0.0 && q > 0.0) d += alpha * gamma * std::pow(q, gamma - 1.0) * std::log(pt);
          (*gx)[i] += g[0] * red * d;
        }
      }
      break;
    case Op::kBinaryFocal:
      if (Tensor* gx = in_grad(0)) {
        const Tensor& p = in_value(0);
        const std::size_t cnt = p.size();
        const double alpha = n.scalar_aux[cnt], gamma = n.scalar_aux[cnt + 1], red = n.scalar_aux[cnt + 2];
        for (std::size_t i = 0; i < cnt; ++i) {
          const bool pos = n.scalar_aux[i] > 0.5;
          const double pt = std::max(pos ? p[i] : 1.0 - p[i], kProbFloor);
          const double at = pos ? alpha : 1.0 - alpha;
          const double q = 1.0 - pt;
          double d = -at * std::pow(q, gamma) / pt;
          if (gamma != 0.0 && q > 0.0) d += at * gamma * std::pow(q, gamma - 1.0) * std::log(pt);
          (*gx)[i] += g[0] * red * (pos ? d : -d);
        }
      }
      break;
    case Op::kBce:
      if (Tensor* gx = in_grad(0)) {
        const Tensor& p = in_value(0);
        const Tensor& t = n.tensor_aux[0];
        const std::size_t c = p.cols(), rows = p.rows();
        const double scale = n.scalar_aux[rows];
        for (std::size_t r = 0; r < rows; ++r) {
          if (n.scalar_aux[r] == 0.0) continue;
          for (std::size_t j = 0; j < c; ++j) {
            const double pr = p[r * c + j];
            if (pr <= kBceEps || pr >= 1.0 - kBceEps) continue;  // clamped region is flat
            (*gx)[r * c + j] += g[0] * scale * (pr - t[r * c + j]) / (pr * (1.0 - pr));
          }
        }
      }
      break;
    case Op::kBoxSmoothL1:
      if (Tensor* gx = in_grad(0)) {
        const Tensor& p = in_value(0);
        const Tensor& t = n.tensor_aux[0];
        const double beta = n.scalar_aux[0], scale = n.scalar_aux[1] * g[0];
        const std::size_t rows = p.empty() ? 0 : p.rows();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < 7; ++j) {
            const std::size_t i = r * 7 + j;
            if (j == 6) {
              const double delta = p[i] - t[i];
              (*gx)[i] += scale * smooth_l1_grad(std::sin(delta), beta) * std::cos(delta);
            } else {
              (*gx)[i] += scale * smooth_l1_grad(p[i] - t[i], beta);
            }
          }
        }
      }
      break;
  }
}

// ---------------------------------------------------------------- Adam

double AdamConfig::lr_at(std::size_t step) const {
  if (decay_interval == 0) return learning_rate;
  return learning_rate * std::pow(decay_factor, static_cast<double>(step / decay_interval));
}

void adam_step(std::span<Parameter* const> params, AdamState& state) {
  if (state.first_moment.empty()) {
    for (const Parameter* p : params) {
      state.first_moment.emplace_back(p->value.shape(), 0.0);
      state.second_moment.emplace_back(p->value.shape(), 0.0);
    }
  }
  require(state.first_moment.size() == params.size(), "adam_step: parameter count changed");
  const AdamConfig& c = state.config;
  const double lr = c.lr_at(state.step_count);
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    require(p.grad.same_shape(p.value) && state.first_moment[i].same_shape(p.value),
            "adam_step: shape mismatch for " + p.name);
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double gj = p.grad[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

// ---------------------------------------------------------------- grad check

namespace {

std::vector<std::size_t> coords_to_check(std::size_t n, const GradCheckOptions& o, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (o.max_coords != 0 && o.max_coords < n) {
    shuffle(idx, rng);
    idx.resize(o.max_coords);
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

void record(GradCheckResult& r, double analytic, double numeric, std::size_t input, std::size_t index,
            double floor) {
  if (!std::isfinite(analytic) || !std::isfinite(numeric)) {
    throw NumericError("grad_check: non-finite gradient at input " + std::to_string(input) +
                       " index " + std::to_string(index));
  }
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  const double rel = std::abs(analytic - numeric) / denom;
  ++r.checked;
  if (rel >= r.max_rel_error) {
    r.max_rel_error = rel;
    r.worst_input = input;
    r.worst_index = index;
    r.analytic = analytic;
    r.numeric = numeric;
  }
}

double checked_value(Tape& tape, Var out) {
  const double v = tape.value(out).item();
  if (!std::isfinite(v)) throw NumericError("grad_check: function value is not finite");
  return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& point,
                           const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : point) vars.push_back(tape.input(t));
    const Var out = f(tape, vars);
    checked_value(tape, out);
    tape.backward(out);
    for (Var v : vars) analytic.push_back(tape.grad(v));
  }
  auto eval = [&](const std::vector<Tensor>& pt) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : pt) vars.push_back(tape.constant(t));
    return checked_value(tape, f(tape, vars));
  };
  GradCheckResult result;
  Rng rng(options.seed);
  std::vector<Tensor> work = point;
  for (std::size_t k = 0; k < work.size(); ++k) {
    for (std::size_t i : coords_to_check(work[k].size(), options, rng)) {
      const double orig = work[k][i];
      work[k][i] = orig + options.step;
      const double fp = eval(work);
      work[k][i] = orig - options.step;
      const double fm = eval(work);
      work[k][i] = orig;
      record(result, analytic[k][i], (fp - fm) / (2.0 * options.step), k, i, options.floor);
    }
  }
  return result;
}

GradCheckResult grad_check_params(const std::function<Var(Tape&)>& f,
                                  std::span<Parameter* const> params,
                                  const GradCheckOptions& options) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    const Var out = f(tape);
    checked_value(tape, out);
    tape.backward(out);
  }
  std::vector<Tensor> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad);
  auto eval = [&] {
    Tape tape;
    return checked_value(tape, f(tape));
  };
  GradCheckResult result;
  Rng rng(options.seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& value = params[k]->value;
    for (std::size_t i : coords_to_check(value.size(), options, rng)) {
      const double orig = value[i];
      value[i] = orig + options.step;
      const double fp = eval();
      value[i] = orig - options.step;
      const double fm = eval();
      value[i] = orig;
      record(result, analytic[k][i], (fp - fm) / (2.0 * options.step), k, i, options.floor);
    }
  }
  for (Parameter* p : params) p->zero_grad();
  return result;
}

}  // namespace shapedet
