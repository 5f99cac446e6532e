#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "loopformer/rng.hpp"

namespace loopformer {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> data;   // row-major
  std::vector<double> grad;   // empty until backward touches it
  bool requires_grad = false;
};

// Value-type handle to a shared node. Copies alias the same storage, which is
// what lets one physical weight appear at several places in a computation.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);
  static Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi,
                             bool requires_grad = false);
  static Tensor wrap(std::shared_ptr<TensorNode> node);

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad() const { node_->grad.clear(); }

  double item() const;                       // value of a 1-element tensor
  double at(std::initializer_list<int> idx) const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Allocates (zero-filled) the grad buffer if missing and returns it.
std::vector<double>& ensure_grad(TensorNode& node);

// Records the backward rules of every op executed while active, in execution
// order. Execution order is topological by construction (an op's inputs exist
// before the op runs), so reverse replay visits each op exactly once and sums
// gradients into tensors used at multiple sites.
class Tape {
 public:
  void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }
  size_t size() const { return ops_.size(); }

  // Seeds loss.grad with 1 and replays the tape in reverse. Loss must be a
  // single-element tensor.
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> ops_;
};

// Thread-confined active tape. Ops record themselves only while a tape is
// active and some input requires grad.
Tape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

}  // namespace loopformer
