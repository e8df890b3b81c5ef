#include "hptk/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace hptk {

namespace {
std::atomic<std::uint64_t> g_next_node_id{1};
}

namespace detail {

Index shape_numel(const std::vector<Index>& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape");
    n *= d;
  }
  return n;
}

void check_finite(const Array& v, const char* op) {
  if (!v.allFinite()) {
    throw NonFiniteError(std::string(op) + ": produced non-finite values");
  }
}

std::shared_ptr<Node> make_node(std::vector<Index> shape, Array value,
                                std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(const Array&, GradientMap&)> backprop) {
  if (shape_numel(shape) != value.size()) {
    throw DimensionError("tensor data size does not match shape");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
  bool needs = false;
  for (const auto& p : parents) needs = needs || (p && p->requires_grad);
  node->requires_grad = needs;
  if (needs) {
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
  }
  return node;
}

}  // namespace detail

Tensor Tensor::from_data(std::vector<Index> shape, std::vector<double> data,
                         bool requires_grad) {
  Array v = Eigen::Map<const Array>(data.data(), static_cast<Index>(data.size()));
  return from_array(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from_array(std::vector<Index> shape, Array values, bool requires_grad) {
  if (detail::shape_numel(shape) != values.size()) {
    throw DimensionError("tensor data size does not match shape");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(std::vector<Index> shape, bool requires_grad) {
  Index n = detail::shape_numel(shape);
  return from_array(std::move(shape), Array::Zero(n), requires_grad);
}

Tensor Tensor::full(std::vector<Index> shape, double v, bool requires_grad) {
  Index n = detail::shape_numel(shape);
  return from_array(std::move(shape), Array::Constant(n, v), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_array({1}, Array::Constant(1, v), requires_grad);
}

double Tensor::scalar_value() const {
  if (numel() != 1) throw UsageError("scalar_value: tensor is not a scalar");
  return node_->value[0];
}

ConstMatMap Tensor::matrix(Index rows, Index cols) const {
  if (rows * cols != numel()) {
    throw DimensionError("matrix view does not match tensor size");
  }
  return ConstMatMap(node_->value.data(), rows, cols);
}

ConstMatMap Tensor::matrix() const {
  if (rank() != 2) throw DimensionError("matrix(): tensor is not rank-2");
  return matrix(dim(0), dim(1));
}

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!node_->parents.empty()) {
    throw UsageError("set_requires_grad: only valid on leaf tensors");
  }
  node_->requires_grad = flag;
  return *this;
}

Tensor Tensor::clone() const {
  return Tensor::from_array(node_->shape, node_->value, false);
}

void Tensor::set_values(const Array& v) {
  if (v.size() != numel()) throw DimensionError("set_values: size mismatch");
  node_->value = v;
}

void Tensor::apply_delta(const Array& delta) {
  if (delta.size() != numel()) throw DimensionError("apply_delta: size mismatch");
  node_->value += delta;
}

void GradientMap::add(const std::shared_ptr<Node>& node, const Array& contribution) {
  auto it = grads_.find(node.get());
  if (it == grads_.end()) {
    grads_.emplace(node.get(), contribution);
  } else {
    it->second += contribution;
  }
}

bool GradientMap::contains(const Tensor& t) const {
  return grads_.count(t.node()) != 0;
}

Array GradientMap::get(const Tensor& t) const {
  auto it = grads_.find(t.node());
  if (it == grads_.end()) return Array::Zero(t.numel());
  return it->second;
}

const Array* GradientMap::find(const Node* node) const {
  auto it = grads_.find(node);
  return it == grads_.end() ? nullptr : &it->second;
}

GradientMap backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward: loss must be a scalar tensor");
  }
  if (!loss.requires_grad()) {
    throw UsageError("backward: loss is not connected to any tensor with requires_grad");
  }

  // Collect the reachable subgraph. Node ids increase from parents to
  // children, so descending id order is a topological order.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_map<const Node*, bool> seen;
  std::vector<std::shared_ptr<Node>> stack{loss.node_ptr()};
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    if (seen[n.get()]) continue;
    seen[n.get()] = true;
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p && p->requires_grad && !seen[p.get()]) stack.push_back(p);
    }
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->id > b->id; });

  GradientMap gm;
  gm.grads_.emplace(loss.node(), Array::Constant(1, 1.0));
  for (const auto& n : order) {
    auto it = gm.grads_.find(n.get());
    if (it == gm.grads_.end()) continue;  // no gradient flowed here
    if (n->backprop) n->backprop(it->second, gm);
  }
  return gm;
}

double Rng::uniform() {
  // 53-bit mantissa from the top bits of the 64-bit state.
  return static_cast<double>(eng_() >> 11) * (1.0 / 9007199254740992.0);
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal(double mean, double stddev) {
  // Box-Muller; one deviate per pair of uniforms keeps the stream
  // stateless and libc-independent.
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 1e-300) u1 = uniform();
  double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  return mean + stddev * z;
}

Index Rng::index(Index n) {
  if (n <= 0) throw ParameterError("Rng::index: n must be positive");
  return static_cast<Index>(eng_() % static_cast<std::uint64_t>(n));
}

}  // namespace hptk
