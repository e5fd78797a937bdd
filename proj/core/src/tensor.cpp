#include "masc/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>
#include <unordered_set>

#include "masc/errors.hpp"

namespace masc {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {

std::atomic<std::uint64_t> g_node_seq{0};
thread_local bool t_grad_enabled = true;
std::atomic<bool> g_check_finite{false};

std::mutex g_fault_mutex;
std::map<std::string, double> g_backward_faults;

double fault_factor(const std::string& op) {
  std::lock_guard lock(g_fault_mutex);
  if (g_backward_faults.empty()) return 1.0;
  auto it = g_backward_faults.find(op);
  return it == g_backward_faults.end() ? 1.0 : it->second;
}

void validate_shape(const Shape& shape) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}

}  // namespace

bool GradMode::enabled() { return t_grad_enabled; }
void GradMode::set_enabled(bool on) { t_grad_enabled = on; }

namespace debug {

void set_check_finite(bool on) { g_check_finite = on; }
bool check_finite() { return g_check_finite; }

void set_backward_fault(const std::string& op, double factor) {
  std::lock_guard lock(g_fault_mutex);
  if (factor == 1.0) {
    g_backward_faults.erase(op);
  } else {
    g_backward_faults[op] = factor;
  }
}

void clear_backward_faults() {
  std::lock_guard lock(g_fault_mutex);
  g_backward_faults.clear();
}

}  // namespace debug

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  validate_shape(shape);
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<detail::TensorImpl>()) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor Tensor::uniform(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::size(int axis) const {
  const auto n = static_cast<int>(ndim());
  const int a = axis < 0 ? axis + n : axis;
  if (a < 0 || a >= n) {
    throw AxisError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  }
  return shape()[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::values() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mutable_values() {
  if (!impl_) throw ContractError("use of an undefined tensor");
  if (impl_->node) throw ContractError("cannot write into the output of a recorded op ('" + op() + "')");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() needs a single-element tensor, got " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_) throw ContractError("use of an undefined tensor");
  if (impl_->node && !on) throw ContractError("cannot clear requires_grad on a non-leaf tensor");
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return impl_ && !impl_->node; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), std::vector<double>(values().begin(), values().end())); }

std::string Tensor::op() const { return impl_ && impl_->node ? impl_->node->op : "leaf"; }

Tensor make_op_result(Shape shape, std::vector<double> values, std::string op, const std::vector<Tensor>& inputs,
                      detail::BackwardFn backward) {
  if (debug::check_finite()) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i])) {
        throw NumericFault("op '" + op + "' produced a non-finite value at flat index " + std::to_string(i));
      }
    }
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);

  const bool record = GradMode::enabled() &&
                      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (record) {
    auto node = std::make_shared<detail::Node>();
    node->seq = ++g_node_seq;
    node->op = std::move(op);
    node->inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) node->inputs.push_back(t.impl_ptr());
    node->backward = std::move(backward);
    impl->node = std::move(node);
    impl->requires_grad = true;
  }
  return Tensor(std::move(impl));
}

void Tensor::backward() const {
  if (!impl_) throw ContractError("backward() on an undefined tensor");
  if (numel() != 1) throw ContractError("backward() needs a scalar loss, got shape " + shape_str(shape()));
  if (!impl_->requires_grad) throw ContractError("backward() on a tensor that does not require a gradient");

  if (!impl_->node) {
    impl_->grad.resize(1, 0.0);
    impl_->grad[0] += 1.0;
    return;
  }

  // Collect every recorded op reachable from the loss.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<detail::TensorImpl*> stack{impl_.get()};
  while (!stack.empty()) {
    detail::TensorImpl* t = stack.back();
    stack.pop_back();
    if (!t->node || !seen.insert(t).second) continue;
    order.push_back(t);
    for (const auto& in : t->node->inputs) {
      if (in->node && in->requires_grad) stack.push_back(in.get());
    }
  }
  // Descending creation order is a reverse topological order.
  std::sort(order.begin(), order.end(),
            [](const detail::TensorImpl* a, const detail::TensorImpl* b) { return a->node->seq > b->node->seq; });

  for (detail::TensorImpl* t : order) t->grad.assign(t->data.size(), 0.0);
  impl_->grad[0] = 1.0;

  std::vector<std::vector<double>*> buffers;
  std::vector<std::vector<double>> scratch;
  for (detail::TensorImpl* t : order) {
    const detail::Node& node = *t->node;
    buffers.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      detail::TensorImpl* in = node.inputs[i].get();
      if (!in->requires_grad) continue;
      if (in->grad.size() != in->data.size()) in->grad.assign(in->data.size(), 0.0);
      buffers[i] = &in->grad;
    }
    const double factor = fault_factor(node.op);
    if (factor == 1.0) {
      node.backward(t->grad, buffers);
      continue;
    }
    scratch.assign(node.inputs.size(), {});
    std::vector<std::vector<double>*> scratch_ptrs(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < buffers.size(); ++i) {
      if (!buffers[i]) continue;
      scratch[i].assign(buffers[i]->size(), 0.0);
      scratch_ptrs[i] = &scratch[i];
    }
    node.backward(t->grad, scratch_ptrs);
    for (std::size_t i = 0; i < buffers.size(); ++i) {
      if (!buffers[i]) continue;
      for (std::size_t j = 0; j < scratch[i].size(); ++j) (*buffers[i])[j] += factor * scratch[i][j];
    }
  }

  // Intermediate gradients are scratch space; only leaves keep theirs.
  for (detail::TensorImpl* t : order) {
    t->grad.clear();
    t->grad.shrink_to_fit();
  }
}

}  // namespace masc
