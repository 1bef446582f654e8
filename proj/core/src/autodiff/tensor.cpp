#include "neurocap/autodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "neurocap/error.hpp"

namespace neurocap {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}

}  // namespace

Tensor make_tensor(std::shared_ptr<detail::TensorImpl> impl) { return Tensor(std::move(impl)); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  validate_shape(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("Tensor::from: shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("Tensor::from: non-finite value");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Tensor Tensor::eye(std::size_t n) {
  Tensor t = zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.mutable_data()[i * n + i] = 1.0;
  return t;
}

detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw ContractError("use of an undefined Tensor");
  return *impl_;
}

std::size_t Tensor::rows() const {
  if (dim() != 2) throw DimensionError("rows(): expected a 2-D tensor, got " + shape_str(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (dim() != 2) throw DimensionError("cols(): expected a 2-D tensor, got " + shape_str(shape()));
  return shape()[1];
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item(): tensor has " + std::to_string(numel()) + " elements");
  return impl().data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (r >= rows() || c >= cols()) throw IndexError("Tensor::at out of range");
  return impl().data[r * cols() + c];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl().requires_grad = flag;
  return *this;
}

std::span<const double> Tensor::grad() const {
  if (!impl().grad) throw ContractError("tensor has no gradient");
  return *impl().grad;
}

std::vector<double> Tensor::grad_or_zero() const {
  if (impl().grad) return *impl().grad;
  return std::vector<double>(numel(), 0.0);
}

std::span<double> Tensor::mutable_grad() {
  if (!impl().grad) throw ContractError("tensor has no gradient");
  return *impl().grad;
}

void Tensor::zero_grad() {
  if (impl().grad) std::fill(impl().grad->begin(), impl().grad->end(), 0.0);
}

void Tensor::clear_grad() { impl().grad.reset(); }

Tensor Tensor::clone(bool requires_grad) const {
  auto copy = std::make_shared<detail::TensorImpl>();
  copy->shape = impl().shape;
  copy->data = impl().data;
  copy->requires_grad = requires_grad;
  return Tensor(std::move(copy));
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

namespace {

struct TapeEntry {
  std::string name;
  std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
  std::shared_ptr<detail::TensorImpl> output;
  BackwardFn backward;
};

struct Tape {
  std::vector<TapeEntry> entries;
  std::uint64_t generation = 1;
};

thread_local Tape g_tape;
thread_local bool g_grad_enabled = true;

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor record_op(std::string_view name, Shape shape, std::vector<double> values,
                 std::vector<Tensor> inputs, BackwardFn backward_fn) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value produced by op '" + std::string(name) + "'");
    }
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("op '" + std::string(name) + "' produced " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
  }
  auto out = std::make_shared<detail::TensorImpl>();
  out->shape = std::move(shape);
  out->data = std::move(values);

  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const Tensor& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad) {
    out->requires_grad = true;
    out->tape_index = g_tape.entries.size();
    out->tape_generation = g_tape.generation;
    TapeEntry entry;
    entry.name = std::string(name);
    entry.inputs.reserve(inputs.size());
    for (const Tensor& in : inputs) entry.inputs.push_back(in.impl_ptr());
    entry.output = out;
    entry.backward = std::move(backward_fn);
    g_tape.entries.push_back(std::move(entry));
  }
  return make_tensor(std::move(out));
}

void backward(const Tensor& loss) {
  auto& root = loss.impl();
  if (root.data.size() != 1) {
    throw ContractError("backward(): loss must be a scalar, got shape " + shape_str(root.shape));
  }
  if (!root.tape_index || root.tape_generation != g_tape.generation ||
      *root.tape_index >= g_tape.entries.size() ||
      g_tape.entries[*root.tape_index].output.get() != &root) {
    throw ContractError(
        "backward(): loss was not produced by recorded ops on the current tape "
        "(already backpropagated, or computed without gradients)");
  }

  root.grad = std::vector<double>{1.0};
  const std::size_t last = *root.tape_index;
  for (std::size_t k = last + 1; k-- > 0;) {
    TapeEntry& entry = g_tape.entries[k];
    if (!entry.output->grad) continue;
    GradContext ctx;
    ctx.out_grad = *entry.output->grad;
    ctx.in_grads.reserve(entry.inputs.size());
    for (auto& in : entry.inputs) {
      if (in->requires_grad) {
        if (!in->grad) in->grad = std::vector<double>(in->data.size(), 0.0);
        ctx.in_grads.emplace_back(*in->grad);
      } else {
        ctx.in_grads.emplace_back();
      }
    }
    entry.backward(ctx);
  }
  tape::reset();
}

namespace tape {

std::size_t size() { return g_tape.entries.size(); }

std::vector<std::string> op_names() {
  std::vector<std::string> names;
  names.reserve(g_tape.entries.size());
  for (const auto& e : g_tape.entries) names.push_back(e.name);
  return names;
}

void reset() {
  g_tape.entries.clear();
  ++g_tape.generation;
}

std::size_t count(std::string_view name) {
  return static_cast<std::size_t>(std::count_if(g_tape.entries.begin(), g_tape.entries.end(),
                                                [&](const TapeEntry& e) { return e.name == name; }));
}

}  // namespace tape

}  // namespace neurocap
