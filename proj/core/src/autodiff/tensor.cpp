#include "focalforge/autodiff/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "focalforge/error.hpp"

namespace focalforge::ad {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d < 0) throw ValidationError("Tensor: negative dimension in " + to_string(shape_));
  data_.assign(static_cast<std::size_t>(ad::numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<std::int64_t>(data_.size()) != ad::numel(shape_))
    throw ValidationError("Tensor: data length does not match shape " + to_string(shape_));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ValidationError("Tensor::item on tensor of shape " + to_string(shape_));
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (ad::numel(shape) != numel())
    throw ValidationError("reshape " + to_string(shape_) + " -> " + to_string(shape));
  return Tensor(std::move(shape), data_);
}

Tensor& Node::grad_ref() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::value() const {
  if (!node_) throw ValidationError("Var: use of undefined variable");
  return node_->value;
}

Tensor& Var::mutable_value() {
  if (!node_) throw ValidationError("Var: use of undefined variable");
  return node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

Tensor Var::grad() const {
  if (node_->has_grad()) return node_->grad;
  return Tensor(node_->value.shape(), 0.0);
}

bool Var::has_grad() const { return node_ && node_->has_grad(); }

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  const bool track = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(node));
}

namespace {

std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS; graphs can be deep.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const Var& root, const Tensor& seed) {
  if (!root.requires_grad()) return;
  Node* r = root.node().get();
  if (seed.shape() != r->value.shape())
    throw ValidationError("backward: seed shape " + to_string(seed.shape()) + " does not match root " +
                          to_string(r->value.shape()));
  Tensor& g = r->grad_ref();
  for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += seed[i];
  const auto order = topo_order(r);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

void backward(const Var& root) {
  if (root.value().numel() != 1)
    throw ValidationError("backward: root must be a scalar, got " + to_string(root.shape()));
  backward(root, Tensor(root.shape(), 1.0));
}

}  // namespace focalforge::ad
