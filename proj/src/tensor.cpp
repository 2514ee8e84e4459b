#include "poseforge/tensor.hpp"

#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "poseforge/errors.hpp"

namespace poseforge {

namespace {
thread_local bool t_grad_enabled = true;
}  // namespace

bool grad_mode_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::span<double> detail::Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = poseforge::numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (poseforge::numel(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + to_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  auto t = from_data(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw StateError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return values().size(); }

std::span<const double> Tensor::data() const { return values(); }

const std::vector<double>& Tensor::values() const {
  if (!node_) throw StateError("use of an undefined tensor");
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw StateError("use of an undefined tensor");
  if (!node_->leaf) throw StateError("only leaf tensors may be modified in place");
  return node_->value;
}

double Tensor::item() const {
  const auto& v = values();
  if (v.size() != 1) {
    throw DimensionError("item() on tensor of shape " + to_string(shape()));
  }
  return v[0];
}

double Tensor::operator[](std::size_t flat_index) const { return values().at(flat_index); }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!node_) throw StateError("use of an undefined tensor");
  if (!node_->leaf) throw StateError("requires_grad can only be toggled on leaves");
  node_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return node_ && node_->leaf; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = shape();
  node->value = node_->value;
  return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
  auto t = detach();
  t.node_->requires_grad = requires_grad();
  return t;
}

Tensor Tensor::make_result(const char* op, Shape shape, std::vector<double> value,
                           std::vector<Tensor> inputs,
                           std::function<void(const detail::Node&)> backward) {
  auto result = from_data(std::move(shape), std::move(value));
  result.node_->op = op;
  result.node_->leaf = false;
  if (!t_grad_enabled) return result;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return result;
  result.node_->requires_grad = true;
  result.node_->parents.reserve(inputs.size());
  for (auto& in : inputs) {
    if (in.requires_grad()) result.node_->parents.push_back(in.node_);
  }
  result.node_->backward = std::move(backward);
  return result;
}

void Tensor::backward() const {
  const double one = 1.0;
  if (numel() != 1) {
    throw DimensionError("backward() without a seed needs a single-element tensor, got " +
                         to_string(shape()));
  }
  backward(std::span<const double>(&one, 1));
}

void Tensor::backward(std::span<const double> seed) const {
  if (!requires_grad()) throw StateError("backward() on a tensor that does not require grad");
  if (seed.size() != numel()) throw DimensionError("backward seed size does not match tensor");
  const Tape tape = Tape::record(*this);
  for (auto* n : tape.order()) {
    if (!n->leaf) n->grad.clear();
  }
  auto g = node_->grad_buffer();
  for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
  const auto& order = tape.order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.requires_grad()) return tape;
  // Iterative post-order DFS; each node is emitted once, after its parents.
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

bool Tape::is_topological() const {
  std::unordered_map<const detail::Node*, std::size_t> position;
  for (std::size_t i = 0; i < order_.size(); ++i) {
    if (!position.emplace(order_[i], i).second) return false;
  }
  for (std::size_t i = 0; i < order_.size(); ++i) {
    for (const auto& p : order_[i]->parents) {
      auto it = position.find(p.get());
      if (it == position.end() || it->second >= i) return false;
    }
  }
  return true;
}

}  // namespace poseforge
