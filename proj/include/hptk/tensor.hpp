#ifndef HPTK_TENSOR_HPP
#define HPTK_TENSOR_HPP

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <unordered_map>
#include <vector>

#include "hptk/error.hpp"

namespace hptk {

using Index = std::int64_t;
using Array = Eigen::ArrayXd;
using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatRM>;
using ConstMatMap = Eigen::Map<const MatRM>;

class GradientMap;

/// One node of the reverse-mode graph. Values are contiguous 64-bit floats in
/// row-major order; `parents` plus the `backprop` closure form the op record.
struct Node {
  std::vector<Index> shape;
  Array value;
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Receives the gradient flowing into this node and scatters contributions
  // to `parents` through the sink. Empty for leaves and no-grad results.
  std::function<void(const Array&, GradientMap&)> backprop;

  Index numel() const { return value.size(); }
};

/// Value-semantics handle to a Node. Tensors are immutable after construction
/// except through the explicit trainer hooks (`set_values`, `apply_delta`).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor from_data(std::vector<Index> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor from_array(std::vector<Index> shape, Array values,
                           bool requires_grad = false);
  static Tensor zeros(std::vector<Index> shape, bool requires_grad = false);
  static Tensor full(std::vector<Index> shape, double v,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<Index>& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index i) const { return node_->shape[static_cast<size_t>(i)]; }
  Index numel() const { return node_->numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  const Array& values() const { return node_->value; }
  double scalar_value() const;
  double at(Index flat) const { return node_->value[flat]; }

  ConstMatMap matrix(Index rows, Index cols) const;
  ConstMatMap matrix() const;  // rank-2 tensors

  Node* node() const { return node_.get(); }
  std::shared_ptr<Node> node_ptr() const { return node_; }

  Tensor& set_requires_grad(bool flag);

  /// Deep copy; the copy is a fresh leaf.
  Tensor clone() const;

  // Trainer hooks. These mutate the underlying storage in place and are only
  // valid between graph constructions (single-threaded per model).
  void set_values(const Array& v);
  void apply_delta(const Array& delta);  // value += delta

 private:
  std::shared_ptr<Node> node_;
};

/// Per-node gradient accumulators produced by backward().
class GradientMap {
 public:
  void add(const std::shared_ptr<Node>& node, const Array& contribution);
  bool contains(const Tensor& t) const;
  /// Gradient of the tensor, or an all-zero array when it was unreachable.
  Array get(const Tensor& t) const;
  const Array* find(const Node* node) const;
  size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const Node*, Array> grads_;
  friend GradientMap backward(const Tensor&);
};

/// Reverse-mode pass from a scalar loss. Returns gradients for every node
/// reachable through differentiable ops; accumulation is deterministic
/// (nodes processed in descending creation order, contributions summed in
/// parent-visit order).
GradientMap backward(const Tensor& loss);

namespace detail {
std::shared_ptr<Node> make_node(std::vector<Index> shape, Array value,
                                std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(const Array&, GradientMap&)> backprop);
void check_finite(const Array& v, const char* op);
Index shape_numel(const std::vector<Index>& shape);
}  // namespace detail

/// Deterministic RNG used for weight init and data generation. Normal
/// deviates come from a hand-rolled Box-Muller so streams are identical
/// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  double normal(double mean = 0.0, double stddev = 1.0);
  std::uint64_t next_u64() { return eng_(); }
  Index index(Index n);  // uniform in [0, n)

 private:
  std::mt19937_64 eng_;
};

}  // namespace hptk

#endif
