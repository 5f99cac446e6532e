#include "loopformer/tensor.hpp"

#include <sstream>

namespace loopformer {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: nonpositive dimension in " + shape_str(shape));
  }
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument("tensor: " + shape_str(shape) + " does not hold " +
                                std::to_string(values.size()) + " values");
  }
  node_ = std::make_shared<TensorNode>();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)), value);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.gauss() * stddev;
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::rand_uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::wrap(std::shared_ptr<TensorNode> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

std::vector<double>& Tensor::grad() {
  if (node_->grad.empty()) throw std::runtime_error("tensor: gradient not populated; run backward first");
  return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty()) throw std::runtime_error("tensor: gradient not populated; run backward first");
  return node_->grad;
}

double Tensor::item() const {
  if (numel() != 1) throw std::runtime_error("tensor: item() on non-scalar " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  if (static_cast<int>(idx.size()) != rank()) {
    throw std::invalid_argument("tensor: index rank mismatch for " + shape_str(shape()));
  }
  int64_t off = 0;
  int d = 0;
  for (int i : idx) {
    if (i < 0 || i >= node_->shape[static_cast<size_t>(d)]) {
      throw std::out_of_range("tensor: index out of range for " + shape_str(shape()));
    }
    off = off * node_->shape[static_cast<size_t>(d)] + i;
    ++d;
  }
  return node_->data[static_cast<size_t>(off)];
}

std::vector<double>& ensure_grad(TensorNode& node) {
  if (node.grad.empty()) node.grad.assign(node.data.size(), 0.0);
  return node.grad;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

void Tape::backward(const Tensor& loss) {
  if (!loss.valid() || loss.numel() != 1) {
    throw std::runtime_error("backward: loss must be a single-element tensor");
  }
  ensure_grad(*loss.node())[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

}  // namespace loopformer
