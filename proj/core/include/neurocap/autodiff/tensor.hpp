#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace neurocap {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::optional<std::vector<double>> grad;
  bool requires_grad = false;
  // Set when this tensor is the output of a recorded op. `tape_generation`
  // identifies which tape recording it belongs to; a consumed tape bumps the
  // generation so stale outputs are rejected by backward().
  std::optional<std::size_t> tape_index;
  std::uint64_t tape_generation = 0;
};

}  // namespace detail

/// Dense row-major array of doubles with an optional gradient slot.
///
/// Tensor is a cheap handle: copies share storage. Ops never mutate their
/// inputs; the only in-place writers are optimizers and test code, through
/// mutable_data() on leaves.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor eye(std::size_t n);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::size_t dim() const { return impl().shape.size(); }
  std::size_t numel() const { return impl().data.size(); }
  /// Extent of axis 0 / axis 1 for 2-D tensors.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return impl().data; }
  std::span<double> mutable_data() { return impl().data; }
  double item() const;
  double at(std::size_t i) const { return impl().data.at(i); }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return impl().requires_grad; }
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const { return impl().grad.has_value(); }
  std::span<const double> grad() const;
  /// Gradient values, or zeros when no gradient reached this tensor.
  std::vector<double> grad_or_zero() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  /// Deep copy of values; the copy is a fresh leaf.
  Tensor clone(bool requires_grad = false) const;
  /// Same values, new shape; the copy is a fresh leaf (no tape link).
  Tensor detach() const { return clone(false); }

  /// True when both handles refer to the same storage.
  bool same(const Tensor& other) const { return impl_ == other.impl_; }

  detail::TensorImpl& impl() const;
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_tensor(std::shared_ptr<detail::TensorImpl>);
};

Tensor make_tensor(std::shared_ptr<detail::TensorImpl> impl);

// ---------------------------------------------------------------------------
// Gradient mode and tape
// ---------------------------------------------------------------------------

bool grad_enabled();

/// Disables op recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// What a recorded op's backward closure sees: the upstream gradient and one
/// writable gradient span per input. Spans for inputs that do not require a
/// gradient are empty; closures must skip them.
struct GradContext {
  std::span<const double> out_grad;
  std::vector<std::span<double>> in_grads;
};

using BackwardFn = std::function<void(const GradContext&)>;

/// Builds an op output and, when gradients are enabled and any input requires
/// one, appends it to this thread's tape. Throws NumericError if any value is
/// not finite. This is the single extension point for new differentiable ops.
Tensor record_op(std::string_view name, Shape shape, std::vector<double> values,
                 std::vector<Tensor> inputs, BackwardFn backward);

/// Reverse-mode sweep over the tape from a scalar loss. Accumulates into
/// `grad` of every tensor that requires one and consumes the tape: a second
/// call for the same forward pass throws ContractError.
void backward(const Tensor& loss);

namespace tape {

/// Number of ops currently recorded on this thread's tape.
std::size_t size();
/// Op names in recording order (diagnostics / op-count probes).
std::vector<std::string> op_names();
/// Drops every recorded op without running backward.
void reset();
/// Count of ops with `name` recorded since the last reset or backward.
std::size_t count(std::string_view name);

}  // namespace tape

}  // namespace neurocap
