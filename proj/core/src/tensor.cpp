#include "ramreid/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "ramreid/error.hpp"

namespace ramreid {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
};

namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_to_string(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " elements but data has " +
                     std::to_string(data.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data(Shape{}, {value}, requires_grad);
}

TensorImpl& Tensor::impl() const {
  if (!impl_) throw StateError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return impl().data.size(); }

std::span<const double> Tensor::data() const { return impl().data; }

std::span<double> Tensor::mutable_data() {
  if (impl().grad_fn) throw StateError("cannot mutate the output of a recorded operation");
  return impl().data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
  return impl().data[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (impl().grad_fn && !value) throw StateError("cannot clear requires_grad on an op output");
  impl().requires_grad = value;
}

bool Tensor::is_leaf() const { return impl().grad_fn == nullptr; }

bool Tensor::has_grad() const { return !impl().grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw StateError("tensor has no gradient");
  return impl().grad;
}

std::span<double> Tensor::mutable_grad() {
  TensorImpl& t = impl();
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

std::span<double> Tensor::grad_accumulator() const {
  TensorImpl& t = impl();
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

void Tensor::zero_grad() {
  TensorImpl& t = impl();
  t.grad.assign(t.data.size(), 0.0);
}

void Tensor::clear_grad() { impl().grad.clear(); }

const std::shared_ptr<Node>& Tensor::grad_fn() const { return impl().grad_fn; }

Tensor Tensor::detach() const {
  return from_data(shape(), impl().data, false);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                           std::string op_name,
                           std::function<void(std::span<const double>)> backward_fn) {
  Tensor out = from_data(std::move(shape), std::move(data), false);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const Tensor& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto node = std::make_shared<Node>();
  node->op_name = std::move(op_name);
  node->inputs = std::move(inputs);
  node->backward_fn = std::move(backward_fn);
  out.impl_->requires_grad = true;
  out.impl_->grad_fn = std::move(node);
  return out;
}

ComputeGraph ComputeGraph::trace(const Tensor& root) {
  ComputeGraph graph;
  std::unordered_set<const TensorImpl*> visited;
  // Iterative post-order DFS: a tensor is emitted after all of its inputs.
  struct Frame {
    Tensor tensor;
    std::size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root.id());
  while (!stack.empty()) {
    Frame& top = stack.back();
    const auto& node = top.tensor.grad_fn();
    if (node && top.next_input < node->inputs.size()) {
      const Tensor& in = node->inputs[top.next_input++];
      if (in.requires_grad() && visited.insert(in.id()).second) stack.push_back({in, 0});
      continue;
    }
    graph.order_.push_back(top.tensor);
    stack.pop_back();
  }
  return graph;
}

std::vector<const Node*> ComputeGraph::nodes() const {
  std::vector<const Node*> out;
  for (const Tensor& t : order_) {
    if (t.grad_fn()) out.push_back(t.grad_fn().get());
  }
  return out;
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + shape_to_string(shape()));
  }
  if (!requires_grad()) throw StateError("backward() on a tensor that does not require grad");
  ComputeGraph graph = ComputeGraph::trace(*this);
  grad_accumulator()[0] += 1.0;
  const auto& order = graph.tensors();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto& node = it->grad_fn();
    if (!node || !it->has_grad()) continue;
    node->backward_fn(it->grad());
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

}  // namespace ramreid
