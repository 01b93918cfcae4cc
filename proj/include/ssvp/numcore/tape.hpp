#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ssvp/numcore/tensor.hpp"

namespace ssvp::nc {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kNormFloor = 1e-12;

struct Node {
  Tensor value;
  std::optional<Tensor> grad;
  bool requires_grad = false;
  std::string name;

  void accumulate(const Tensor& g);
  Tensor& grad_ref();
};

/// Handle to a value in a computation. Parameters are long-lived leaves that
/// outlive individual tapes; intermediates are produced by Tape ops.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.has_value(); }
  /// Accumulated gradient; zeros if nothing has flowed back yet.
  Tensor grad() const;
  void zero_grad() { node_->grad.reset(); }
  const std::string& name() const { return node_->name; }
  double item() const { return node_->value.item(); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

/// Trainable leaf.
Var parameter(Tensor value, std::string name = {});
/// Leaf that never receives gradient.
Var constant(Tensor value);

/// Records executed ops so backward() can replay their adjoints in exact
/// reverse order. One tape per forward pass; backward may run once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // linear algebra
  Var matmul(const Var& a, const Var& b);
  /// a * b^T
  Var matmul_nt(const Var& a, const Var& b);
  Var transpose(const Var& a);

  // elementwise
  Var add(const Var& a, const Var& b);
  Var sub(const Var& a, const Var& b);
  Var mul(const Var& a, const Var& b);
  /// x[m x n] + b[n] broadcast over rows.
  Var add_row(const Var& x, const Var& b);
  Var scale(const Var& x, double s);
  Var add_scalar(const Var& x, double s);
  /// x * s with s a one-element Var.
  Var mul_scalar(const Var& x, const Var& s);
  Var exp(const Var& x);
  Var log(const Var& x);
  Var pow(const Var& x, double p);
  Var square(const Var& x);
  Var relu(const Var& x);
  Var clamp(const Var& x, double lo, double hi);
  Var gelu(const Var& x);
  Var sigmoid(const Var& x);

  // normalization
  /// Softmax along axis (0 or 1 of the rows x cols view; -1 means last).
  Var softmax(const Var& x, int axis = -1);
  /// Row-wise layer normalization with population variance.
  Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = kLayerNormEps);

  // shape
  Var reshape(const Var& x, Shape shape);
  Var concat(const Var& a, const Var& b, int axis);
  Var slice_rows(const Var& x, std::size_t begin, std::size_t end);
  Var slice_cols(const Var& x, std::size_t begin, std::size_t end);
  /// Identity forward, zero gradient backward.
  Var stop_gradient(const Var& x);

  // reductions
  Var sum(const Var& x);
  Var mean(const Var& x);
  /// Reduce along axis of the rows x cols view; keeps the other axis.
  Var sum(const Var& x, int axis);
  Var mean(const Var& x, int axis);
  Var max(const Var& x, int axis);
  /// Mean of the k largest elements (ties resolved by lowest index).
  Var topk_mean(const Var& x, std::size_t k);

  // similarity / losses
  /// Pairwise cosine between rows: a[m x d], b[n x d] -> [m x n].
  Var cosine_rows(const Var& a, const Var& b);
  /// Cosine of two equal-length tensors flattened; -> [1].
  Var cosine(const Var& a, const Var& b);
  /// Binary cross-entropy of sigmoid(logit) against target in {0,1}.
  Var bce_with_logits(const Var& logit, double target);

  /// Seeds d(loss)/d(loss) = 1 and runs all recorded adjoints in reverse.
  void backward(const Var& loss);
  /// Drops the record so the tape can be reused.
  void reset();

  std::size_t size() const { return records_.size(); }
  /// Names of recorded ops in execution order.
  std::vector<std::string> op_names() const;

 private:
  struct Record {
    std::string op;
    std::function<void()> adjoint;
  };

  Var emit(const char* op, Tensor value, std::vector<Var> inputs,
           std::function<void(const Tensor& out_grad, Node& out)> adjoint);

  std::vector<Record> records_;
  bool backward_done_ = false;
};

}  // namespace ssvp::nc
