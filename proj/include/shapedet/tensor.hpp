#pragma once

// Dense row-major float64 arrays with a fixed reverse-mode tape.
//
// A `Tape` records exactly the operations declared below; `backward` walks the
// records in reverse creation order. Values are immutable once recorded, so a
// finished tape can be read from several threads. Parameters are leaves whose
// gradients accumulate into `Parameter::grad`.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "shapedet/common.hpp"

namespace shapedet {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
  static Tensor row(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  /// Leading extent for rank 2; 1 for rank 1.
  std::size_t rows() const;
  /// Trailing extent.
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  Tensor reshaped(std::vector<std::size_t> shape) const;
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// Learned tensor plus its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v);
  void zero_grad();
};

/// Fully connected layer, y = x W^T + b.
struct LinearLayer {
  Parameter weight;  // [out x in]
  Parameter bias;    // [1 x out]

  /// Uniform init in [-1/sqrt(in), 1/sqrt(in)].
  static LinearLayer init(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  static LinearLayer zeros(const std::string& name, std::size_t in, std::size_t out);
  std::size_t in() const { return weight.value.cols(); }
  std::size_t out() const { return weight.value.rows(); }
  void collect(std::vector<Parameter*>& out);
};

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

enum class Reduction { kSum, kMean };

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor t);
  /// Leaf that receives a gradient readable through grad().
  Var input(Tensor t);
  /// Leaf bound to a parameter; backward accumulates into p.grad. The value is
  /// aliased, so the parameter must outlive the tape and stay unmodified.
  Var param(Parameter& p);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() target w.r.t. v; zeros if v was not reached.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Reverse pass from a single-element output. May be called once per tape.
  void backward(Var output);

  // Differentiable operations. All arrays are rank 2 [rows x cols].
  Var linear(Var x, Var weight, Var bias);
  Var linear(Var x, LinearLayer& layer) { return linear(x, param(layer.weight), param(layer.bias)); }
  Var relu(Var x);
  Var sigmoid(Var x);
  /// Column-wise maximum over all rows: [n x C] -> [1 x C].
  Var set_max_pool(Var x);
  /// Column-wise maximum inside consecutive row groups: [G*g x C] -> [G x C].
  Var group_max_pool(Var x, std::size_t group_rows);
  /// Row-wise maximum over channels: [n x C] -> [n x 1].
  Var row_max_pool(Var x);
  /// Joins along the channel axis: [n x a], [n x b] -> [n x (a+b)].
  Var concat(Var a, Var b);
  /// Tiles each row `times` times consecutively: [G x C] -> [G*times x C].
  Var repeat_rows(Var x, std::size_t times);
  Var expand_rows(Var x, std::size_t n) { return repeat_rows(x, n); }
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, double s);
  Var matmul(Var a, Var b);
  Var reshape(Var x, std::vector<std::size_t> shape);
  /// out[i] = x[indices[i]]; backward scatter-adds.
  Var gather_rows(Var x, std::vector<std::size_t> indices);
  Var sum(Var x);
  Var mean(Var x);

  /// Per-segment symmetric chamfer distance between `a` ([B*Na x 3]) and
  /// constant targets; returns [B x 1]. Differentiable w.r.t. `a` only.
  Var chamfer(Var a, std::vector<Tensor> targets);
  /// Focal loss on p_t values: -alpha (1-p_t)^gamma ln(p_t). [n x 1] -> [1 x 1].
  Var focal(Var p_t, FocalParams params, Reduction reduction);
  /// Focal loss on class probabilities with binary labels; p_t and alpha_t are
  /// chosen per element from the label. [n x 1] -> [1 x 1].
  Var binary_focal(Var prob, std::vector<double> labels, FocalParams params, Reduction reduction);
  /// Binary cross entropy, mean over the rows whose mask is non-zero.
  Var bce(Var prob, Tensor target, std::vector<double> row_mask);
  /// Smooth-L1 on 7-slot box residuals, yaw slot compared as sin(p - t);
  /// mean over rows. beta is the quadratic-region half width.
  Var box_smooth_l1(Var pred, Tensor target, double beta = 1.0 / 9.0);

 private:
  enum class Op {
    kLeaf, kLinear, kRelu, kSigmoid, kGroupMaxPool, kRowMaxPool, kConcat, kRepeatRows,
    kAdd, kSub, kMul, kScale, kMatMul, kReshape, kGatherRows, kSum, kMean, kChamfer,
    kFocal, kBinaryFocal, kBce, kBoxSmoothL1,
  };

  struct Node {
    Op op = Op::kLeaf;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Parameter* param = nullptr;
    const Tensor* borrowed = nullptr;    // parameter leaves alias Parameter::value
    std::vector<std::size_t> index_aux;  // argmax, gather indices, nn indices
    std::vector<Tensor> tensor_aux;      // constant targets
    std::vector<double> scalar_aux;      // labels, masks, hyper-parameters
  };

  Var push(Node node);
  const Node& node(Var v) const;
  const Tensor& node_value(std::size_t id) const;
  Tensor& grad_buffer(std::size_t id);
  void backward_node(std::size_t id);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Plain (non-recording) helpers.
Tensor transpose(const Tensor& t);
/// Y = X W^T + b with the dispatched GEMM kernel.
Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Adam hyper-parameters, with an optional step-decay schedule:
/// lr(step) = learning_rate * decay_factor ^ floor(step / decay_interval).
struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double decay_factor = 1.0;
  std::size_t decay_interval = 0;  // 0 disables the schedule

  double lr_at(std::size_t step) const;
};

struct AdamState {
  AdamConfig config;
  std::size_t step_count = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  explicit AdamState(AdamConfig cfg = {}) : config(cfg) {}
};

/// One bias-corrected Adam update of every parameter from its `grad`.
void adam_step(std::span<Parameter* const> params, AdamState& state);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

struct GradCheckOptions {
  double step = 1e-4;
  /// Denominator floor of the relative error |a-n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// Coordinates checked per input; 0 checks all, otherwise a seeded sample.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares tape gradients with central differences at `point`.
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& point,
                           const GradCheckOptions& options = {});

/// Same, perturbing parameters in place (restored on return).
GradCheckResult grad_check_params(const std::function<Var(Tape&)>& f,
                                  std::span<Parameter* const> params,
                                  const GradCheckOptions& options = {});

// Parameter checkpoints (little-endian binary, see docs/formats.md).
struct NamedTensor {
  std::string name;
  Tensor value;
};

void save_checkpoint(const std::string& path, std::span<const Parameter* const> params);
std::vector<NamedTensor> load_checkpoint(const std::string& path);
/// Copies loaded values into params by name; throws ShapeError on mismatch or absence.
void restore_checkpoint(std::span<Parameter* const> params, const std::vector<NamedTensor>& loaded);

}  // namespace shapedet
