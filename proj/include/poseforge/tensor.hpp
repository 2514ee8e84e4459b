#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace poseforge {

using Shape = std::vector<std::size_t>;

[[nodiscard]] std::size_t numel(const Shape& shape);
[[nodiscard]] std::string to_string(const Shape& shape);

class Tensor;

namespace detail {

/// One vertex of the autodiff graph. Owned by every Tensor that refers to it.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(const Node&)> backward;

  std::span<double> grad_buffer();
};

}  // namespace detail

/// Dense row-major array of doubles with an optional reverse-mode gradient.
///
/// Copies share storage; operations never modify their inputs. The only
/// in-place mutation allowed is on leaves (parameters, buffers), which is
/// how optimizers update weights between steps.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);
  /// Leaf that records gradients.
  static Tensor parameter(Shape shape, std::vector<double> data);

  [[nodiscard]] bool defined() const noexcept { return node_ != nullptr; }
  [[nodiscard]] const Shape& shape() const;
  [[nodiscard]] std::size_t rank() const { return shape().size(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const;
  [[nodiscard]] std::size_t numel() const;
  [[nodiscard]] std::span<const double> data() const;
  [[nodiscard]] const std::vector<double>& values() const;
  /// Writable view of a leaf's storage. Throws StateError on non-leaves.
  [[nodiscard]] std::span<double> mutable_data();
  [[nodiscard]] double item() const;
  [[nodiscard]] double operator[](std::size_t flat_index) const;

  [[nodiscard]] bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  [[nodiscard]] bool is_leaf() const;
  [[nodiscard]] bool has_grad() const;
  /// Accumulated gradient; empty span when none has been recorded.
  [[nodiscard]] std::span<const double> grad() const;
  void zero_grad();

  /// Same values, cut from the graph.
  [[nodiscard]] Tensor detach() const;
  /// Deep copy of the values as a new leaf (no shared storage).
  [[nodiscard]] Tensor clone() const;

  /// Reverse pass seeded with 1; the tensor must hold exactly one element.
  void backward() const;
  void backward(std::span<const double> seed) const;

  [[nodiscard]] const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Builds an operation result. When grad mode is off or no input records
  /// gradients the backward function is dropped and the result is a constant.
  static Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                            std::vector<Tensor> inputs,
                            std::function<void(const detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered record of every gradient-carrying node reachable
/// from a root, inputs before outputs.
class Tape {
 public:
  static Tape record(const Tensor& root);

  [[nodiscard]] const std::vector<detail::Node*>& order() const noexcept { return order_; }
  [[nodiscard]] bool is_topological() const;

 private:
  std::vector<detail::Node*> order_;
};

/// Disables graph construction on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

[[nodiscard]] bool grad_mode_enabled();

}  // namespace poseforge
