#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace masc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves
};

/// Backward rule: receives d(loss)/d(output) and one accumulation buffer per
/// input (null when that input does not require a gradient).
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<std::vector<double>* const> grad_in)>;

struct Node {
  std::uint64_t seq = 0;  // creation order; parents always have a smaller seq
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

}  // namespace detail

/// Dense row-major tensor of doubles with an optional reverse-mode graph.
///
/// Tensor is a shared handle: copies alias the same storage. Leaves created
/// by the user own their data; results of differentiable ops remember the op
/// that produced them while gradient recording is enabled.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng);

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  /// Extent along `axis`; negative axes count from the end.
  std::size_t size(int axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Writable storage. Only leaves may be written; results of recorded ops
  /// would silently invalidate their backward rule.
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Fresh leaf holding a copy of the values, detached from any graph.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  /// Name of the op that produced this tensor, or "leaf".
  std::string op() const;

  /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls.
  void backward() const;

  detail::TensorImpl* impl() const noexcept { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const noexcept { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_op_result(Shape, std::vector<double>, std::string, const std::vector<Tensor>&,
                               detail::BackwardFn);

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Wraps a computed value as an op output, recording a graph node when
/// gradient mode is on and any input requires a gradient.
Tensor make_op_result(Shape shape, std::vector<double> values, std::string op,
                      const std::vector<Tensor>& inputs, detail::BackwardFn backward);

/// Thread-local switch controlling graph recording.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace debug {

/// When on, every op output is scanned and a NumericFault names the op that
/// produced the first non-finite value.
void set_check_finite(bool on);
bool check_finite();

/// Fault injection for negative-control tests: the named op's input
/// gradients are multiplied by `factor`. A factor of 1 disables the fault.
void set_backward_fault(const std::string& op, double factor);
void clear_backward_faults();

namespace detail {
inline thread_local std::uint64_t* t_kink_hash = nullptr;
}

/// Fingerprints the branch taken at every non-smooth point (ReLU sign, zero
/// norm) evaluated on this thread while alive. Two evaluations with equal
/// fingerprints lie on the same smooth piece.
class KinkProbe {
 public:
  KinkProbe() : previous_(detail::t_kink_hash) { detail::t_kink_hash = &hash_; }
  ~KinkProbe() { detail::t_kink_hash = previous_; }
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;

  std::uint64_t fingerprint() const noexcept { return hash_; }

  static bool active() noexcept { return detail::t_kink_hash != nullptr; }
  static void record(bool branch) noexcept {
    std::uint64_t& h = *detail::t_kink_hash;
    h = (h ^ (branch ? 0x9e3779b97f4a7c15ull : 0x632be59bd9b4e019ull)) * 0x100000001b3ull;
  }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
  std::uint64_t* previous_;
};

}  // namespace debug

}  // namespace masc
