#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ramreid {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

struct TensorImpl;
struct Node;

// Dense row-major float64 tensor with an optional gradient buffer.
//
// Tensor is a shared handle: copies refer to the same storage, which is what
// lets an operation record its inputs for the backward pass. The shape never
// changes after construction. Values are treated as immutable once the op
// that produced them returns; only leaf parameters are mutated in place (by
// the optimizer or a checkpoint load).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // In-place access for leaves (parameters, buffers). Throws on op outputs.
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  // Allocates a zero buffer on first use.
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();
  // Gradient buffer for op backward rules; allocates zeros on first use.
  std::span<double> grad_accumulator() const;

  // Reverse-mode pass from a scalar. Gradients accumulate additively into
  // every tensor in the graph that requires them.
  void backward() const;

  // Value copy with no graph history.
  Tensor detach() const;

  const std::shared_ptr<Node>& grad_fn() const;
  const TensorImpl* id() const { return impl_.get(); }

  // Used by op implementations to attach the recorded node to an output.
  static Tensor make_result(Shape shape, std::vector<double> data,
                            std::vector<Tensor> inputs, std::string op_name,
                            std::function<void(std::span<const double>)> backward_fn);

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  TensorImpl& impl() const;

  std::shared_ptr<TensorImpl> impl_;
};

// One recorded operation: its inputs and a rule that takes d(loss)/d(output)
// and accumulates d(loss)/d(input) into each input that requires a gradient.
struct Node {
  std::string op_name;
  std::vector<Tensor> inputs;
  std::function<void(std::span<const double>)> backward_fn;
};

// Topologically ordered view of the graph reachable from a root tensor.
// Every tensor appears after all tensors it was computed from.
class ComputeGraph {
 public:
  static ComputeGraph trace(const Tensor& root);

  const std::vector<Tensor>& tensors() const { return order_; }
  // Tensors produced by recorded ops, in topological order.
  std::vector<const Node*> nodes() const;

 private:
  std::vector<Tensor> order_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

}  // namespace ramreid
