#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace heba {

using Index = std::int64_t;
using Shape = std::vector<Index>;

class Rng;

std::string shape_str(const Shape& shape);
Index shape_numel(const Shape& shape);
std::vector<Index> row_major_strides(const Shape& shape);

namespace detail {

// One node of a reverse-mode computation graph. Values and gradients are
// flat row-major f64 arrays; parents are the inputs the node was computed
// from. backward_fn reads this node's gradient and accumulates into the
// parents' gradients.
struct Node {
  Shape shape;
  Eigen::ArrayXd values;
  Eigen::ArrayXd grad;  // empty until backward touches this node
  bool requires_grad = false;
  bool backward_ran = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Index numel() const { return static_cast<Index>(values.size()); }
  bool is_leaf() const { return !backward_fn; }
  void ensure_grad();
};

}  // namespace detail

// Shared handle to a graph node. Copying a Tensor aliases the node, so a
// parameter tensor can live in a model struct and in an optimizer list at
// the same time.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor from_array(Shape shape, Eigen::ArrayXd data,
                           bool requires_grad = false);
  // i.i.d. N(0, stddev^2) samples in row-major draw order.
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  Index dim(int axis) const;  // negative axes count from the back
  int rank() const;
  Index numel() const;
  bool requires_grad() const;
  std::uint64_t node_id() const;

  Eigen::ArrayXd& values();
  const Eigen::ArrayXd& values() const;
  double item() const;  // numel() == 1 only
  double at(std::initializer_list<Index> idx) const;

  bool has_grad() const;
  const Eigen::ArrayXd& grad() const;  // throws if backward never reached it
  void zero_grad();
  void set_requires_grad(bool value);  // leaves only

  // Detached copy of the values as a fresh leaf.
  Tensor detached_copy(bool requires_grad = false) const;

  std::shared_ptr<detail::Node> node() const { return node_; }

  // Used by the op layer to build non-leaf nodes.
  static Tensor make_result(Shape shape, Eigen::ArrayXd values,
                            std::vector<std::shared_ptr<detail::Node>> parents,
                            std::function<void(detail::Node&)> backward_fn);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Reverse accumulation from a scalar loss. Every requires_grad node in the
// loss's graph ends up with an allocated gradient. Calling backward twice on
// the same loss without reset_grads in between is an error.
void backward(const Tensor& loss);

// Zeroes/clears gradients over the whole graph under root and re-arms the
// backward guard.
void reset_grads(const Tensor& root);

}  // namespace heba
