#include "neurocap/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "neurocap/error.hpp"

namespace neurocap::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_2d(const char* op, const Tensor& x) {
  if (x.dim() != 2) {
    throw DimensionError(std::string(op) + ": expected 2-D tensor, got " + shape_str(x.shape()));
  }
}

// Shared read-only view of an input's values for use inside backward closures.
using Values = std::shared_ptr<const std::vector<double>>;

Values keep(const Tensor& t) {
  // The tape holds the input impl alive, so aliasing its data is safe for the
  // lifetime of the closure.
  return Values(t.impl_ptr(), &t.impl().data);
}

Values keep(std::vector<double> v) { return std::make_shared<const std::vector<double>>(std::move(v)); }

struct AxisLayout {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  Values av = keep(a), bv = keep(b);
  return record_op("matmul", {m, n}, std::move(out), {a, b}, [av, bv, m, k, n](const GradContext& g) {
    ConstMap dc(g.out_grad.data(), m, n);
    if (!g.in_grads[0].empty()) {
      MutMap(g.in_grads[0].data(), m, k).noalias() += dc * ConstMap(bv->data(), k, n).transpose();
    }
    if (!g.in_grads[1].empty()) {
      MutMap(g.in_grads[1].data(), k, n).noalias() += ConstMap(av->data(), m, k).transpose() * dc;
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return record_op("add", a.shape(), std::move(out), {a, b}, [](const GradContext& g) {
    for (auto& dst : g.in_grads) {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g.out_grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return record_op("sub", a.shape(), std::move(out), {a, b}, [](const GradContext& g) {
    auto& da = g.in_grads[0];
    auto& db = g.in_grads[1];
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g.out_grad[i];
    for (std::size_t i = 0; i < db.size(); ++i) db[i] -= g.out_grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Values av = keep(a), bv = keep(b);
  return record_op("mul", a.shape(), std::move(out), {a, b}, [av, bv](const GradContext& g) {
    auto& da = g.in_grads[0];
    auto& db = g.in_grads[1];
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g.out_grad[i] * (*bv)[i];
    for (std::size_t i = 0; i < db.size(); ++i) db[i] += g.out_grad[i] * (*av)[i];
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  return record_op("scale", x.shape(), std::move(out), {x}, [factor](const GradContext& g) {
    auto& dx = g.in_grads[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g.out_grad[i] * factor;
  });
}

Tensor add_scalar(const Tensor& x, double value) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + value;
  return record_op("add_scalar", x.shape(), std::move(out), {x}, [](const GradContext& g) {
    auto& dx = g.in_grads[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g.out_grad[i];
  });
}

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("mul_scalar: scalar operand has shape " + shape_str(s.shape()));
  const double sv = s.item();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * sv;
  Values xv = keep(x);
  return record_op("mul_scalar", x.shape(), std::move(out), {x, s}, [xv, sv](const GradContext& g) {
    auto& dx = g.in_grads[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g.out_grad[i] * sv;
    if (!g.in_grads[1].empty()) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xv->size(); ++i) acc += g.out_grad[i] * (*xv)[i];
      g.in_grads[1][0] += acc;
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.shape().back();
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias has " + std::to_string(bias.numel()) + " entries, last axis is " +
                         std::to_string(n));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.data()[i % n];
  return record_op("add_bias", x.shape(), std::move(out), {x, bias}, [n](const GradContext& g) {
    auto& dx = g.in_grads[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g.out_grad[i];
    auto& db = g.in_grads[1];
    if (!db.empty()) {
      for (std::size_t i = 0; i < g.out_grad.size(); ++i) db[i % n] += g.out_grad[i];
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_2d("transpose", x);
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  MutMap(out.data(), c, r) = ConstMap(x.data().data(), r, c).transpose();
  return record_op("transpose", {c, r}, std::move(out), {x}, [r, c](const GradContext& g) {
    if (g.in_grads[0].empty()) return;
    MutMap(g.in_grads[0].data(), r, c) += ConstMap(g.out_grad.data(), c, r).transpose();
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return record_op("reshape", std::move(shape), std::move(out), {x}, [](const GradContext& g) {
    auto& dx = g.in_grads[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g.out_grad[i];
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t n = x.shape()[0];
  if (count == 0 || begin + count > n) {
    throw IndexError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_str(x.shape()));
  }
  const std::size_t stride = x.numel() / n;
  Shape shape = x.shape();
  shape[0] = count;
  std::vector<double> out(x.data().begin() + begin * stride, x.data().begin() + (begin + count) * stride);
  return record_op("slice_rows", std::move(shape), std::move(out), {x},
                   [begin, stride](const GradContext& g) {
                     auto& dx = g.in_grads[0];
                     if (dx.empty()) return;
                     for (std::size_t i = 0; i < g.out_grad.size(); ++i) dx[begin * stride + i] += g.out_grad[i];
                   });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Shape shape = parts.front().shape();
  const std::size_t stride = parts.front().numel() / shape[0];
  std::size_t total_rows = 0;
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    Shape tail(p.shape().begin() + 1, p.shape().end());
    Shape want(shape.begin() + 1, shape.end());
    if (tail != want) {
      throw DimensionError("concat_rows: trailing shape mismatch " + shape_str(p.shape()) + " vs " +
                           shape_str(shape));
    }
    offsets.push_back(total_rows * stride);
    total_rows += p.shape()[0];
  }
  shape[0] = total_rows;
  std::vector<double> out;
  out.reserve(total_rows * stride);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return record_op("concat_rows", std::move(shape), std::move(out), parts, [offsets](const GradContext& g) {
    for (std::size_t k = 0; k < g.in_grads.size(); ++k) {
      auto& dx = g.in_grads[k];
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g.out_grad[offsets[k] + i];
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  require_2d("gather_rows", table);
  if (ids.empty()) throw DimensionError("gather_rows: empty index list");
  const std::size_t n = table.rows(), w = table.cols();
  std::vector<double> out(ids.size() * w);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= n) {
      throw IndexError("gather_rows: index " + std::to_string(ids[i]) + " out of range [0, " +
                       std::to_string(n) + ")");
    }
    std::copy_n(table.data().begin() + ids[i] * w, w, out.begin() + i * w);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return record_op("gather_rows", {ids.size(), w}, std::move(out), {table},
                   [idx = std::move(idx), w](const GradContext& g) {
                     auto& dt = g.in_grads[0];
                     if (dt.empty()) return;
                     for (std::size_t i = 0; i < idx.size(); ++i) {
                       for (std::size_t c = 0; c < w; ++c) dt[idx[i] * w + c] += g.out_grad[i * w + c];
                     }
                   });
}

Tensor tile_rows(const Tensor& x, std::size_t reps) {
  if (reps == 0) throw DimensionError("tile_rows: reps must be positive");
  Shape shape = x.shape();
  shape[0] *= reps;
  std::vector<double> out;
  out.reserve(x.numel() * reps);
  for (std::size_t r = 0; r < reps; ++r) out.insert(out.end(), x.data().begin(), x.data().end());
  const std::size_t block = x.numel();
  return record_op("tile_rows", std::move(shape), std::move(out), {x}, [block, reps](const GradContext& g) {
    auto& dx = g.in_grads[0];
    if (dx.empty()) return;
    for (std::size_t r = 0; r < reps; ++r) {
      for (std::size_t i = 0; i < block; ++i) dx[i] += g.out_grad[r * block + i];
    }
  });
}

Tensor mask_rows(const Tensor& x, const std::vector<bool>& row_mask) {
  const std::size_t n = x.shape()[0];
  if (row_mask.size() != n) {
    throw DimensionError("mask_rows: mask has " + std::to_string(row_mask.size()) + " entries for " +
                         std::to_string(n) + " rows");
  }
  const std::size_t stride = x.numel() / n;
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < n; ++r) {
    if (row_mask[r]) std::fill_n(out.begin() + r * stride, stride, 0.0);
  }
  return record_op("mask_rows", x.shape(), std::move(out), {x}, [row_mask, stride](const GradContext& g) {
    auto& dx = g.in_grads[0];
    if (dx.empty()) return;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (!row_mask[i / stride]) dx[i] += g.out_grad[i];
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisLayout l = axis_layout(x.shape(), axis);
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      const std::size_t base = o * l.extent * l.inner + i;
      double mx = in[base];
      for (std::size_t k = 1; k < l.extent; ++k) mx = std::max(mx, in[base + k * l.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < l.extent; ++k) {
        const double e = std::exp(in[base + k * l.inner] - mx);
        out[base + k * l.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < l.extent; ++k) out[base + k * l.inner] /= z;
    }
  }
  Values yv = keep(out);
  return record_op("softmax", x.shape(), std::move(out), {x}, [yv, l](const GradContext& g) {
    auto& dx = g.in_grads[0];
    if (dx.empty()) return;
    const auto& y = *yv;
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t i = 0; i < l.inner; ++i) {
        const std::size_t base = o * l.extent * l.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < l.extent; ++k) dot += g.out_grad[base + k * l.inner] * y[base + k * l.inner];
        for (std::size_t k = 0; k < l.extent; ++k) {
          const std::size_t idx = base + k * l.inner;
          dx[idx] += y[idx] * (g.out_grad[idx] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const AxisLayout l = axis_layout(x.shape(), axis);
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      const std::size_t base = o * l.extent * l.inner + i;
      double mx = in[base];
      for (std::size_t k = 1; k < l.extent; ++k) mx = std::max(mx, in[base + k * l.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < l.extent; ++k) z += std::exp(in[base + k * l.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < l.extent; ++k) out[base + k * l.inner] = in[base + k * l.inner] - lse;
    }
  }
  Values yv = keep(out);
  return record_op("log_softmax", x.shape(), std::move(out), {x}, [yv, l](const GradContext& g) {
    auto& dx = g.in_grads[0];
    if (dx.empty()) return;
    const auto& y = *yv;
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t i = 0; i < l.inner; ++i) {
        const std::size_t base = o * l.extent * l.inner + i;
        double total = 0.0;
        for (std::size_t k = 0; k < l.extent; ++k) total += g.out_grad[base + k * l.inner];
        for (std::size_t k = 0; k < l.extent; ++k) {
          const std::size_t idx = base + k * l.inner;
          dx[idx] += g.out_grad[idx] - std::exp(y[idx]) * total;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (!(eps > 0.0)) throw ParameterError("layer_norm: eps must be positive");
  const std::size_t n = x.shape().back();
  if (gamma.numel() != n || beta.numel() != n) {
    throw DimensionError("layer_norm: gamma/beta must have " + std::to_string(n) + " entries");
  }
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(rows);
  const auto in = x.data();
  const auto gm = gamma.data();
  const auto bt = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mu) * inv_std[r];
      xhat[r * n + c] = h;
      out[r * n + c] = gm[c] * h + bt[c];
    }
  }
  Values hv = keep(std::move(xhat)), sv = keep(std::move(inv_std)), gv = keep(gamma);
  return record_op("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                   [hv, sv, gv, n, rows](const GradContext& g) {
                     const auto& h = *hv;
                     auto& dx = g.in_grads[0];
                     auto& dg = g.in_grads[1];
                     auto& db = g.in_grads[2];
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double* dy = g.out_grad.data() + r * n;
                       if (!dg.empty()) {
                         for (std::size_t c = 0; c < n; ++c) dg[c] += dy[c] * h[r * n + c];
                       }
                       if (!db.empty()) {
                         for (std::size_t c = 0; c < n; ++c) db[c] += dy[c];
                       }
                       if (dx.empty()) continue;
                       double mean_d = 0.0, mean_dh = 0.0;
                       for (std::size_t c = 0; c < n; ++c) {
                         const double d = dy[c] * (*gv)[c];
                         mean_d += d;
                         mean_dh += d * h[r * n + c];
                       }
                       mean_d /= static_cast<double>(n);
                       mean_dh /= static_cast<double>(n);
                       for (std::size_t c = 0; c < n; ++c) {
                         const double d = dy[c] * (*gv)[c];
                         dx[r * n + c] += (*sv)[r] * (d - mean_d - h[r * n + c] * mean_dh);
                       }
                     }
                   });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  Values xv = keep(x);
  return record_op("gelu", x.shape(), std::move(out), {x}, [xv](const GradContext& g) {
    auto& dx = g.in_grads[0];
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double v = (*xv)[i];
      const double t = std::tanh(kC * (v + kA * v * v * v));
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
      dx[i] += g.out_grad[i] * d;
    }
  });
}

Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.data()[i]);
  Values yv = keep(out);
  return record_op("tanh", x.shape(), std::move(out), {x}, [yv](const GradContext& g) {
    auto& dx = g.in_grads[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g.out_grad[i] * (1.0 - (*yv)[i] * (*yv)[i]);
  });
}

Tensor exp(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.data()[i]);
  Values yv = keep(out);
  return record_op("exp", x.shape(), std::move(out), {x}, [yv](const GradContext& g) {
    auto& dx = g.in_grads[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g.out_grad[i] * (*yv)[i];
  });
}

Tensor square(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * x.data()[i];
  Values xv = keep(x);
  return record_op("square", x.shape(), std::move(out), {x}, [xv](const GradContext& g) {
    auto& dx = g.in_grads[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += 2.0 * (*xv)[i] * g.out_grad[i];
  });
}

Tensor l2_normalize_rows(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel()), norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += x.data()[r * n + c] * x.data()[r * n + c];
    if (!(s > 0.0)) throw NumericError("l2_normalize_rows: zero-norm row " + std::to_string(r));
    norms[r] = std::sqrt(s);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x.data()[r * n + c] / norms[r];
  }
  Values yv = keep(out), nv = keep(std::move(norms));
  return record_op("l2_normalize_rows", x.shape(), std::move(out), {x}, [yv, nv, n, rows](const GradContext& g) {
    auto& dx = g.in_grads[0];
    if (dx.empty()) return;
    const auto& y = *yv;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += y[r * n + c] * g.out_grad[r * n + c];
      for (std::size_t c = 0; c < n; ++c) {
        dx[r * n + c] += (g.out_grad[r * n + c] - y[r * n + c] * dot) / (*nv)[r];
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return record_op("sum", {1}, {s}, {x}, [](const GradContext& g) {
    auto& dx = g.in_grads[0];
    for (double& d : dx) d += g.out_grad[0];
  });
}

Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double n = static_cast<double>(x.numel());
  return record_op("mean", {1}, {s / n}, {x}, [n](const GradContext& g) {
    auto& dx = g.in_grads[0];
    for (double& d : dx) d += g.out_grad[0] / n;
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets, std::int64_t ignore_id) {
  require_2d("cross_entropy", logits);
  const std::size_t t_rows = logits.rows(), v = logits.cols();
  if (targets.size() != t_rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(t_rows) + " logit rows");
  }
  std::size_t count = 0;
  for (std::int64_t t : targets) {
    if (t == ignore_id && ignore_id != kNoIgnore) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0, " + std::to_string(v) + ")");
    }
    ++count;
  }
  if (count == 0) throw ContractError("cross_entropy: every position is ignored (empty reduction)");

  std::vector<double> probs(logits.numel());
  double total = 0.0;
  const auto in = logits.data();
  for (std::size_t r = 0; r < t_rows; ++r) {
    const double* row = in.data() + r * v;
    double mx = row[0];
    for (std::size_t c = 1; c < v; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < v; ++c) {
      probs[r * v + c] = std::exp(row[c] - mx);
      z += probs[r * v + c];
    }
    for (std::size_t c = 0; c < v; ++c) probs[r * v + c] /= z;
    const std::int64_t t = targets[r];
    if (t == ignore_id && ignore_id != kNoIgnore) continue;
    total += mx + std::log(z) - row[t];
  }
  const double n = static_cast<double>(count);
  std::vector<std::int64_t> tgt(targets.begin(), targets.end());
  Values pv = keep(std::move(probs));
  return record_op("cross_entropy", {1}, {total / n}, {logits},
                   [pv, tgt = std::move(tgt), ignore_id, v, n](const GradContext& g) {
                     auto& dx = g.in_grads[0];
                     if (dx.empty()) return;
                     const double up = g.out_grad[0] / n;
                     for (std::size_t r = 0; r < tgt.size(); ++r) {
                       if (tgt[r] == ignore_id && ignore_id != kNoIgnore) continue;
                       for (std::size_t c = 0; c < v; ++c) dx[r * v + c] += up * (*pv)[r * v + c];
                       dx[r * v + static_cast<std::size_t>(tgt[r])] -= up;
                     }
                   });
}

Tensor mse_masked(const Tensor& pred, const Tensor& target, const std::vector<bool>& mask) {
  require_same_shape("mse_masked", pred, target);
  const std::size_t lead = pred.shape()[0];
  std::size_t stride;
  if (mask.size() == lead) {
    stride = pred.numel() / lead;
  } else if (mask.size() == pred.numel()) {
    stride = 1;
  } else {
    throw DimensionError("mse_masked: mask must cover the leading axis or every element");
  }
  std::vector<bool> elem(pred.numel());
  std::size_t count = 0;
  for (std::size_t i = 0; i < elem.size(); ++i) {
    elem[i] = mask[i / stride];
    count += elem[i] ? 1 : 0;
  }
  if (count == 0) throw ContractError("mse_masked: mask selects no elements");
  double acc = 0.0;
  std::vector<double> diff(pred.numel(), 0.0);
  for (std::size_t i = 0; i < elem.size(); ++i) {
    if (!elem[i]) continue;
    diff[i] = pred.data()[i] - target.data()[i];
    acc += diff[i] * diff[i];
  }
  const double n = static_cast<double>(count);
  Values dv = keep(std::move(diff));
  return record_op("mse_masked", {1}, {acc / n}, {pred, target}, [dv, n](const GradContext& g) {
    const double up = 2.0 * g.out_grad[0] / n;
    auto& dp = g.in_grads[0];
    auto& dt = g.in_grads[1];
    for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += up * (*dv)[i];
    for (std::size_t i = 0; i < dt.size(); ++i) dt[i] -= up * (*dv)[i];
  });
}

}  // namespace neurocap::ops
