#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "neurocap/autodiff/tensor.hpp"

// Differentiable ops. Everything is row-major; 2-D tensors are [rows x cols].
// Broadcasting is limited to trailing-axis affine terms (add_bias, layer_norm)
// and scalar operands; anything else needs an explicit reshape/tile.
namespace neurocap::ops {

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
/// x * s where s is a one-element tensor (differentiable in both).
Tensor mul_scalar(const Tensor& x, const Tensor& s);
/// Adds `bias` (extent = last axis of x) to every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
/// Row lookup: out[i] = table[ids[i]]. Gradient scatters back into table.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);
/// Stacks `reps` copies of x along axis 0.
Tensor tile_rows(const Tensor& x, std::size_t reps);
/// Zeros the rows whose mask entry is true; other rows pass through.
Tensor mask_rows(const Tensor& x, const std::vector<bool>& row_mask);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor square(const Tensor& x);
/// Each row divided by its L2 norm.
Tensor l2_normalize_rows(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

inline constexpr std::int64_t kNoIgnore = -1;

/// Mean over non-ignored rows of -log softmax(logits)[row, target].
/// Throws IndexError for a target outside [0, V) that is not `ignore_id`, and
/// ContractError when every row is ignored.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets,
                     std::int64_t ignore_id = kNoIgnore);

/// Mean squared error over the selected entries. `mask` has either one entry
/// per leading-axis row (selects whole rows) or one entry per element.
Tensor mse_masked(const Tensor& pred, const Tensor& target, const std::vector<bool>& mask);

}  // namespace neurocap::ops
