#include "neurocap/nn/attention.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <memory>

#include "neurocap/error.hpp"

namespace neurocap::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::OuterStride<Eigen::Dynamic>;
using ConstBlock = Eigen::Map<const RowMat, 0, Strided>;
using MutBlock = Eigen::Map<RowMat, 0, Strided>;

struct Geometry {
  std::size_t batch, heads, tq, tk, width, head_dim;
  bool causal;

  std::size_t q_offset(std::size_t b, std::size_t h) const { return b * tq * width + h * head_dim; }
  std::size_t k_offset(std::size_t b, std::size_t h) const { return b * tk * width + h * head_dim; }
  std::size_t p_offset(std::size_t b, std::size_t h) const { return (b * heads + h) * tq * tk; }
};

}  // namespace

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                      std::size_t heads, AttentionMaskMode mode) {
  if (q.dim() != 2 || k.dim() != 2 || v.dim() != 2) throw DimensionError("attention: inputs must be 2-D");
  if (k.shape() != v.shape()) throw DimensionError("attention: key/value shapes differ");
  if (q.cols() != k.cols()) {
    throw DimensionError("attention: query width " + std::to_string(q.cols()) + " != key width " +
                         std::to_string(k.cols()));
  }
  if (batch == 0 || q.rows() % batch != 0 || k.rows() % batch != 0) {
    throw DimensionError("attention: rows not divisible by batch " + std::to_string(batch));
  }
  if (heads == 0 || q.cols() % heads != 0) throw DimensionError("attention: width not divisible by heads");

  Geometry g{batch, heads, q.rows() / batch, k.rows() / batch, q.cols(), q.cols() / heads,
             mode == AttentionMaskMode::kCausal};
  if (g.causal && g.tq != g.tk) throw DimensionError("attention: causal mode needs equal query/key lengths");
  const double scale = 1.0 / std::sqrt(static_cast<double>(g.head_dim));

  auto probs = std::make_shared<std::vector<double>>(batch * heads * g.tq * g.tk, 0.0);
  std::vector<double> out(q.numel(), 0.0);
  const Strided stride(static_cast<Eigen::Index>(g.width));
  const auto d = static_cast<Eigen::Index>(g.head_dim);
  const auto tq = static_cast<Eigen::Index>(g.tq);
  const auto tk = static_cast<Eigen::Index>(g.tk);

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      ConstBlock qb(q.data().data() + g.q_offset(b, h), tq, d, stride);
      ConstBlock kb(k.data().data() + g.k_offset(b, h), tk, d, stride);
      ConstBlock vb(v.data().data() + g.k_offset(b, h), tk, d, stride);
      Eigen::Map<RowMat> p(probs->data() + g.p_offset(b, h), tq, tk);
      p.noalias() = (qb * kb.transpose()) * scale;
      for (Eigen::Index i = 0; i < tq; ++i) {
        const Eigen::Index visible = g.causal ? i + 1 : tk;
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < visible; ++j) mx = std::max(mx, p(i, j));
        double z = 0.0;
        for (Eigen::Index j = 0; j < visible; ++j) {
          p(i, j) = std::exp(p(i, j) - mx);
          z += p(i, j);
        }
        for (Eigen::Index j = 0; j < visible; ++j) p(i, j) /= z;
        for (Eigen::Index j = visible; j < tk; ++j) p(i, j) = 0.0;
      }
      MutBlock ob(out.data() + g.q_offset(b, h), tq, d, stride);
      ob.noalias() = p * vb;
    }
  }

  auto qv = std::shared_ptr<const std::vector<double>>(q.impl_ptr(), &q.impl().data);
  auto kv = std::shared_ptr<const std::vector<double>>(k.impl_ptr(), &k.impl().data);
  auto vv = std::shared_ptr<const std::vector<double>>(v.impl_ptr(), &v.impl().data);
  return record_op(
      "attention", q.shape(), std::move(out), {q, k, v}, [g, scale, probs, qv, kv, vv](const GradContext& ctx) {
        const Strided stride(static_cast<Eigen::Index>(g.width));
        const auto d = static_cast<Eigen::Index>(g.head_dim);
        const auto tq = static_cast<Eigen::Index>(g.tq);
        const auto tk = static_cast<Eigen::Index>(g.tk);
        RowMat dp(tq, tk), ds(tq, tk);
        for (std::size_t b = 0; b < g.batch; ++b) {
          for (std::size_t h = 0; h < g.heads; ++h) {
            ConstBlock qb(qv->data() + g.q_offset(b, h), tq, d, stride);
            ConstBlock kb(kv->data() + g.k_offset(b, h), tk, d, stride);
            ConstBlock vb(vv->data() + g.k_offset(b, h), tk, d, stride);
            ConstBlock dout(ctx.out_grad.data() + g.q_offset(b, h), tq, d, stride);
            Eigen::Map<const RowMat> p(probs->data() + g.p_offset(b, h), tq, tk);
            if (!ctx.in_grads[2].empty()) {
              MutBlock dv(ctx.in_grads[2].data() + g.k_offset(b, h), tk, d, stride);
              dv.noalias() += p.transpose() * dout;
            }
            if (ctx.in_grads[0].empty() && ctx.in_grads[1].empty()) continue;
            dp.noalias() = dout * vb.transpose();
            for (Eigen::Index i = 0; i < tq; ++i) {
              const double dot = (dp.row(i).array() * p.row(i).array()).sum();
              ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
            }
            if (!ctx.in_grads[0].empty()) {
              MutBlock dq(ctx.in_grads[0].data() + g.q_offset(b, h), tq, d, stride);
              dq.noalias() += (ds * kb) * scale;
            }
            if (!ctx.in_grads[1].empty()) {
              MutBlock dk(ctx.in_grads[1].data() + g.k_offset(b, h), tk, d, stride);
              dk.noalias() += (ds.transpose() * qb) * scale;
            }
          }
        }
      });
}

MultiHeadAttention::MultiHeadAttention(const BlockConfig& cfg, Rng& rng)
    : cfg_(cfg),
      wq_(cfg.hidden, cfg.hidden, rng),
      wk_(cfg.hidden, cfg.hidden, rng, /*bias=*/false),
      wv_(cfg.hidden, cfg.hidden, rng),
      wo_(cfg.hidden, cfg.hidden, rng) {
  cfg.validate();
}

Tensor MultiHeadAttention::forward(const Tensor& q_in, const Tensor& kv_in, std::size_t batch,
                                   AttentionMaskMode mode) const {
  if (q_in.dim() != 2 || kv_in.dim() != 2 || q_in.cols() != cfg_.hidden || kv_in.cols() != cfg_.hidden) {
    throw DimensionError("attention: inputs " + shape_str(q_in.shape()) + " / " + shape_str(kv_in.shape()) +
                         " must have width " + std::to_string(cfg_.hidden));
  }
  Tensor q = wq_.forward(q_in);
  Tensor k = wk_.forward(kv_in);
  Tensor v = wv_.forward(kv_in);
  return wo_.forward(attention_core(q, k, v, batch, cfg_.heads, mode));
}

void MultiHeadAttention::visit_parameters(const ParamVisitor& fn, const std::string& prefix) {
  wq_.visit_parameters(fn, prefix + "q.");
  wk_.visit_parameters(fn, prefix + "k.");
  wv_.visit_parameters(fn, prefix + "v.");
  wo_.visit_parameters(fn, prefix + "out.");
}

}  // namespace neurocap::nn
