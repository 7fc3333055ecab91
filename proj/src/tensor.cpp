#include "heba/tensor.hpp"

#include <atomic>
#include <sstream>
#include <unordered_map>
#include <utility>

#include "heba/errors.hpp"
#include "heba/rng.hpp"

namespace heba {

namespace {

std::atomic<std::uint64_t> g_next_node_id{1};

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("tensor shape entries must be positive, got " + shape_str(shape));
  }
}

std::shared_ptr<detail::Node> new_leaf(Shape shape, Eigen::ArrayXd values, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<Index>(values.size())) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  node->id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

// Iterative postorder over parents; flags cycles via the "visiting" state.
std::vector<detail::Node*> topo_order(const std::shared_ptr<detail::Node>& root) {
  enum class Mark : unsigned char { visiting, done };
  std::unordered_map<detail::Node*, Mark> mark;
  std::vector<detail::Node*> order;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  mark[root.get()] = Mark::visiting;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      auto it = mark.find(parent);
      if (it == mark.end()) {
        mark[parent] = Mark::visiting;
        stack.emplace_back(parent, 0);
      } else if (it->second == Mark::visiting) {
        throw InvariantError("backward: cycle detected in computation graph");
      }
    } else {
      mark[node] = Mark::done;
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::vector<Index> row_major_strides(const Shape& shape) {
  std::vector<Index> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    strides[i] = strides[i + 1] * shape[i + 1];
  }
  return strides;
}

namespace detail {

void Node::ensure_grad() {
  if (grad.size() != values.size()) grad = Eigen::ArrayXd::Zero(values.size());
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Index n = shape_numel(shape);
  return Tensor(new_leaf(std::move(shape), Eigen::ArrayXd::Zero(n), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Index n = shape_numel(shape);
  return Tensor(new_leaf(std::move(shape), Eigen::ArrayXd::Constant(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  Eigen::ArrayXd values =
      Eigen::Map<const Eigen::ArrayXd>(data.data(), static_cast<Index>(data.size()));
  return Tensor(new_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::from_array(Shape shape, Eigen::ArrayXd data, bool requires_grad) {
  return Tensor(new_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Index n = shape_numel(shape);
  Eigen::ArrayXd values(n);
  for (Index i = 0; i < n; ++i) values[i] = stddev * rng.next_normal();
  return Tensor(new_leaf(std::move(shape), std::move(values), requires_grad));
}

const Shape& Tensor::shape() const {
  if (!node_) throw InvariantError("use of undefined tensor");
  return node_->shape;
}

Index Tensor::dim(int axis) const {
  const Shape& s = shape();
  int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }

Index Tensor::numel() const { return node_ ? node_->numel() : 0; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::uint64_t Tensor::node_id() const {
  if (!node_) throw InvariantError("use of undefined tensor");
  return node_->id;
}

Eigen::ArrayXd& Tensor::values() {
  if (!node_) throw InvariantError("use of undefined tensor");
  return node_->values;
}

const Eigen::ArrayXd& Tensor::values() const {
  if (!node_) throw InvariantError("use of undefined tensor");
  return node_->values;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
  }
  return values()[0];
}

double Tensor::at(std::initializer_list<Index> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size()) {
    throw ShapeError("index rank " + std::to_string(idx.size()) + " does not match shape " +
                     shape_str(s));
  }
  auto strides = row_major_strides(s);
  Index offset = 0;
  std::size_t axis = 0;
  for (Index i : idx) {
    if (i < 0 || i >= s[axis]) {
      throw ShapeError("index out of range for shape " + shape_str(s));
    }
    offset += i * strides[axis];
    ++axis;
  }
  return values()[offset];
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->values.size(); }

const Eigen::ArrayXd& Tensor::grad() const {
  if (!has_grad()) {
    throw InvariantError("tensor has no gradient; run backward() first");
  }
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.resize(0);
}

void Tensor::set_requires_grad(bool value) {
  if (!node_) throw InvariantError("use of undefined tensor");
  if (!node_->is_leaf()) {
    throw InvariantError("requires_grad can only be toggled on leaf tensors");
  }
  node_->requires_grad = value;
}

Tensor Tensor::detached_copy(bool requires_grad) const {
  return Tensor(new_leaf(shape(), values(), requires_grad));
}

Tensor Tensor::make_result(Shape shape, Eigen::ArrayXd values,
                           std::vector<std::shared_ptr<detail::Node>> parents,
                           std::function<void(detail::Node&)> backward_fn) {
  auto node = new_leaf(std::move(shape), std::move(values), false);
  for (const auto& p : parents) {
    if (p->requires_grad) {
      node->requires_grad = true;
      break;
    }
  }
  node->parents = std::move(parents);
  if (node->requires_grad) node->backward_fn = std::move(backward_fn);
  return Tensor(node);
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw InvariantError("backward: undefined loss tensor");
  if (loss.numel() != 1) {
    throw InvariantError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  auto root = loss.node();
  if (root->backward_ran) {
    throw InvariantError(
        "backward: already ran for this graph; call reset_grads before running again");
  }
  auto order = topo_order(root);
  root->backward_ran = true;
  if (!root->requires_grad) return;
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->requires_grad || !node->backward_fn) continue;
    if (node->grad.size() == 0) node->ensure_grad();
    node->backward_fn(*node);
  }
}

void reset_grads(const Tensor& root) {
  if (!root.defined()) return;
  for (detail::Node* node : topo_order(root.node())) {
    node->grad.resize(0);
    node->backward_ran = false;
  }
}

}  // namespace heba
