#pragma once

#include <Eigen/Core>
#include <functional>
#include <initializer_list>
#include <memory>
#include <unordered_map>
#include <vector>

#include "cmf/common.hpp"

namespace cmf {

class Tape;
using Array = Eigen::ArrayXd;

struct TensorNode {
  Shape shape;
  std::shared_ptr<Array> values;  // shared so reshape can alias storage
  Array grad;                     // size 0 == absent; filled by Tape::backward
  bool requires_grad = false;
  const Tape* tape = nullptr;  // tape active when the node was produced
};

/// Dense n-d value (row-major doubles) with optional gradient. Copying a
/// Tensor copies a handle to the same node; values are treated as immutable
/// once created except for the optimizer's exclusive update phase.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, double fill, bool requires_grad = false);
  Tensor(Shape shape, Array data, bool requires_grad = false);

  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor from(Shape shape, std::initializer_list<double> vals);
  /// Allocates without initializing values (for ops that overwrite fully).
  static Tensor empty(Shape shape);
  /// Wraps an existing node (used by storage-sharing ops like reshape).
  static Tensor alias(std::shared_ptr<TensorNode> node);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index size() const { return node_->values->size(); }
  Index extent(Index axis) const { return node_->shape[static_cast<size_t>(axis)]; }

  const Array& values() const { return *node_->values; }
  /// Mutable access for parameter updates and test probes. Callers must not
  /// mutate values while a tape referencing this tensor is still live.
  Array& values_mut() { return *node_->values; }

  double scalar_value() const;
  double at(std::initializer_list<Index> idx) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return node_->grad.size() > 0; }
  const Array& grad() const;
  void zero_grad() { node_->grad.resize(0); }

  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

/// Per-node gradient buffers for one backward pass. Keyed by node identity;
/// separate stores let independent tapes run on separate threads against
/// shared parameters with no shared mutable state.
class GradStore {
 public:
  Array* find(TensorNode* n);
  Array& at_or_create(TensorNode* n, Index size);
  /// Drops buffers of intermediate (non-leaf) nodes after a backward pass.
  void keep_only_leaves();
  /// Adds every buffered gradient of a requires_grad node into that node's
  /// own grad field. Single-threaded use only.
  void commit_to_nodes();
  void clear() { grads_.clear(); }
  size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<TensorNode*, Array> grads_;
};

/// Ordered record of primitive applications. Backward visits records in
/// exact reverse order. A tape is single-use: backward marks it consumed and
/// a second backward without clear() throws ContractError.
class Tape {
 public:
  using BackwardFn = std::function<void(GradStore&)>;

  void record(BackwardFn fn) { records_.push_back(std::move(fn)); }

  /// Accumulates gradients into each reachable node's grad buffer.
  void backward(const Tensor& loss, double seed = 1.0);
  /// Accumulates leaf gradients into `store` instead (thread-safe variant:
  /// nothing outside the store is written).
  void backward(const Tensor& loss, GradStore& store, double seed = 1.0);

  size_t num_records() const { return records_.size(); }
  bool consumed() const { return consumed_; }
  void clear();

 private:
  void run(const Tensor& loss, GradStore& store, double seed);
  std::vector<BackwardFn> records_;
  bool consumed_ = false;
};

/// Installs a tape as the thread-local recording target for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

Tape* active_tape();

// ---- primitive operations ------------------------------------------------
// The primitive set is fixed: matmul, add, mul, sub, div, exp, log, relu,
// sum, mean, max-reduce, reshape, transpose/permute, concat, slice, softmax,
// sqrt. Everything else in the library composes these.

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, double c);
Tensor sub(double c, const Tensor& a);
Tensor mul(const Tensor& a, double c);
Tensor div(double c, const Tensor& a);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sqrt(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, Index axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, Index axis, bool keepdim = false);
Tensor max_reduce(const Tensor& x, Index axis, bool keepdim = false);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);                            // rank-2
Tensor permute(const Tensor& x, const std::vector<Index>& axes);
Tensor concat(const std::vector<Tensor>& parts, Index axis);
Tensor slice(const Tensor& x, Index axis, Index start, Index len);

Tensor softmax(const Tensor& x, Index axis);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add(a, c); }
inline Tensor operator+(double c, const Tensor& a) { return add(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add(a, -c); }
inline Tensor operator-(double c, const Tensor& a) { return sub(c, a); }
inline Tensor operator-(const Tensor& a) { return mul(a, -1.0); }
inline Tensor operator*(const Tensor& a, double c) { return mul(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul(a, c); }
inline Tensor operator/(const Tensor& a, double c) { return mul(a, 1.0 / c); }
inline Tensor operator/(double c, const Tensor& a) { return div(c, a); }

// ---- derived combinators (compositions of the primitives above) ----------

/// max(a,b) == a + relu(b - a), elementwise.
inline Tensor maximum(const Tensor& a, const Tensor& b) { return add(a, relu(sub(b, a))); }
/// min(a,b) == a - relu(a - b), elementwise.
inline Tensor minimum(const Tensor& a, const Tensor& b) { return sub(a, relu(sub(a, b))); }
/// |x| == relu(x) + relu(-x).
inline Tensor abs(const Tensor& x) { return add(relu(x), relu(mul(x, -1.0))); }
/// Clamps into [0,1]; gradient is zero in the clamped regions.
inline Tensor clamp01(const Tensor& x) { return sub(relu(x), relu(add(x, -1.0))); }

/// Numerically stable logistic; all intermediates stay finite for any input.
Tensor sigmoid(const Tensor& x);

}  // namespace cmf
