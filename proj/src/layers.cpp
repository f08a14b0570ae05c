// SPDX-License-Identifier: Apache-2.0
#include "cocite/layers.hpp"

#include <cmath>
#include <limits>

namespace cocite {

template <typename Scalar>
Matrix<Scalar> layer_norm_forward(const LayerNorm<Scalar>& norm, const Matrix<Scalar>& x,
                                  LayerNormCache<Scalar>* cache) {
  const auto rows = x.rows();
  const auto d = static_cast<Scalar>(x.cols());
  Matrix<Scalar> normalized(rows, x.cols());
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Scalar mean = x.row(r).sum() / d;
    auto centered = (x.row(r).array() - mean).eval();
    const Scalar var = centered.square().sum() / d;
    inv_std(r) = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
    normalized.row(r) = centered * inv_std(r);
  }
  Matrix<Scalar> y = (normalized.array().rowwise() * norm.gamma.row(0).array()).matrix();
  y.rowwise() += norm.beta.row(0);
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const LayerNorm<Scalar>& norm, const LayerNormCache<Scalar>& cache,
                                   const Matrix<Scalar>& dy, LayerNorm<Scalar>& grad) {
  const auto& xhat = cache.normalized;
  grad.gamma.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  grad.beta.row(0) += dy.colwise().sum();
  const Matrix<Scalar> dxhat = (dy.array().rowwise() * norm.gamma.row(0).array()).matrix();
  const auto d = static_cast<Scalar>(dy.cols());
  Matrix<Scalar> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const Scalar mean_dxhat = dxhat.row(r).sum() / d;
    const Scalar mean_dxhat_xhat = dxhat.row(r).dot(xhat.row(r)) / d;
    dx.row(r) = cache.inv_std(r) * (dxhat.row(r).array() - mean_dxhat - xhat.row(r).array() * mean_dxhat_xhat).matrix();
  }
  return dx;
}

template <typename Scalar>
Matrix<Scalar> activate(Activation act, const Matrix<Scalar>& pre) {
  if (act == Activation::Relu) return pre.cwiseMax(Scalar(0));
  const Scalar inv_sqrt2 = static_cast<Scalar>(1.0 / std::sqrt(2.0));
  return pre.unaryExpr([inv_sqrt2](Scalar v) { return Scalar(0.5) * v * (Scalar(1) + std::erf(v * inv_sqrt2)); });
}

template <typename Scalar>
Matrix<Scalar> activate_derivative(Activation act, const Matrix<Scalar>& pre) {
  if (act == Activation::Relu) {
    return pre.unaryExpr([](Scalar v) { return v > Scalar(0) ? Scalar(1) : Scalar(0); });
  }
  const Scalar inv_sqrt2 = static_cast<Scalar>(1.0 / std::sqrt(2.0));
  const Scalar inv_sqrt2pi = static_cast<Scalar>(1.0 / std::sqrt(2.0 * 3.14159265358979323846));
  return pre.unaryExpr([=](Scalar v) {
    const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2));
    const Scalar pdf = inv_sqrt2pi * std::exp(Scalar(-0.5) * v * v);
    return cdf + v * pdf;
  });
}

template <typename Scalar>
Matrix<Scalar> attention_forward(const Attention<Scalar>& attn, std::size_t num_heads, const Matrix<Scalar>& x,
                                 std::span<const std::uint8_t> mask, AttentionCache<Scalar>* cache) {
  const auto len = x.rows();
  const auto d = x.cols();
  const auto head_dim = d / static_cast<Eigen::Index>(num_heads);
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));

  Matrix<Scalar> q = add_bias<Scalar>(x * attn.query_weight, attn.query_bias);
  Matrix<Scalar> k = add_bias<Scalar>(x * attn.key_weight, attn.key_bias);
  Matrix<Scalar> v = add_bias<Scalar>(x * attn.value_weight, attn.value_bias);
  Matrix<Scalar> context(len, d);
  std::vector<Matrix<Scalar>> probs;
  if (cache) probs.reserve(num_heads);

  for (std::size_t h = 0; h < num_heads; ++h) {
    const auto off = static_cast<Eigen::Index>(h) * head_dim;
    Matrix<Scalar> scores = q.middleCols(off, head_dim) * k.middleCols(off, head_dim).transpose() * scale;
    for (Eigen::Index r = 0; r < len; ++r) {
      Scalar max_score = -std::numeric_limits<Scalar>::infinity();
      for (Eigen::Index c = 0; c < len; ++c) {
        if (mask[static_cast<std::size_t>(c)]) max_score = std::max(max_score, scores(r, c));
      }
      Scalar total = 0;
      for (Eigen::Index c = 0; c < len; ++c) {
        const Scalar e = mask[static_cast<std::size_t>(c)] ? std::exp(scores(r, c) - max_score) : Scalar(0);
        scores(r, c) = e;
        total += e;
      }
      scores.row(r) /= total;
    }
    context.middleCols(off, head_dim) = scores * v.middleCols(off, head_dim);
    if (cache) probs.push_back(std::move(scores));
  }
  Matrix<Scalar> out = add_bias<Scalar>(context * attn.output_weight, attn.output_bias);
  if (cache) {
    cache->input = x;
    cache->query = std::move(q);
    cache->key = std::move(k);
    cache->value = std::move(v);
    cache->context = std::move(context);
    cache->probs = std::move(probs);
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> attention_backward(const Attention<Scalar>& attn, std::size_t num_heads,
                                  const AttentionCache<Scalar>& cache, const Matrix<Scalar>& dy,
                                  Attention<Scalar>& grad) {
  const auto len = dy.rows();
  const auto d = dy.cols();
  const auto head_dim = d / static_cast<Eigen::Index>(num_heads);
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));

  grad.output_weight.noalias() += cache.context.transpose() * dy;
  grad.output_bias.row(0) += dy.colwise().sum();
  const Matrix<Scalar> d_context = dy * attn.output_weight.transpose();

  Matrix<Scalar> dq(len, d), dk(len, d), dv(len, d);
  for (std::size_t h = 0; h < num_heads; ++h) {
    const auto off = static_cast<Eigen::Index>(h) * head_dim;
    const auto& p = cache.probs[h];
    const auto dctx = d_context.middleCols(off, head_dim);
    dv.middleCols(off, head_dim) = p.transpose() * dctx;
    Matrix<Scalar> dp = dctx * cache.value.middleCols(off, head_dim).transpose();
    // softmax backward, row by row
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_dot = (dp.array() * p.array()).rowwise().sum();
    Matrix<Scalar> ds = (p.array() * (dp.array().colwise() - row_dot.array())).matrix() * scale;
    dq.middleCols(off, head_dim) = ds * cache.key.middleCols(off, head_dim);
    dk.middleCols(off, head_dim) = ds.transpose() * cache.query.middleCols(off, head_dim);
  }
  const auto& x = cache.input;
  grad.query_weight.noalias() += x.transpose() * dq;
  grad.key_weight.noalias() += x.transpose() * dk;
  grad.value_weight.noalias() += x.transpose() * dv;
  grad.query_bias.row(0) += dq.colwise().sum();
  grad.key_bias.row(0) += dk.colwise().sum();
  grad.value_bias.row(0) += dv.colwise().sum();
  Matrix<Scalar> dx = dq * attn.query_weight.transpose();
  dx.noalias() += dk * attn.key_weight.transpose();
  dx.noalias() += dv * attn.value_weight.transpose();
  return dx;
}

template <typename Scalar>
Matrix<Scalar> dense_mlp_forward(const DenseMlp<Scalar>& mlp, Activation act, const Matrix<Scalar>& x,
                                 DenseMlpCache<Scalar>* cache) {
  Matrix<Scalar> pre = add_bias<Scalar>(x * mlp.w1, mlp.b1);
  Matrix<Scalar> activated = activate(act, pre);
  Matrix<Scalar> out = add_bias<Scalar>(activated * mlp.w2, mlp.b2);
  if (cache) {
    cache->input = x;
    cache->pre_activation = std::move(pre);
    cache->activated = std::move(activated);
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> dense_mlp_backward(const DenseMlp<Scalar>& mlp, Activation act, const DenseMlpCache<Scalar>& cache,
                                  const Matrix<Scalar>& dy, DenseMlp<Scalar>& grad) {
  grad.w2.noalias() += cache.activated.transpose() * dy;
  grad.b2.row(0) += dy.colwise().sum();
  const Matrix<Scalar> d_pre =
      ((dy * mlp.w2.transpose()).array() * activate_derivative(act, cache.pre_activation).array()).matrix();
  grad.w1.noalias() += cache.input.transpose() * d_pre;
  grad.b1.row(0) += d_pre.colwise().sum();
  return d_pre * mlp.w1.transpose();
}

#define COCITE_INSTANTIATE_LAYERS(S)                                                                              \
  template Matrix<S> layer_norm_forward(const LayerNorm<S>&, const Matrix<S>&, LayerNormCache<S>*);            \
  template Matrix<S> layer_norm_backward(const LayerNorm<S>&, const LayerNormCache<S>&, const Matrix<S>&,      \
                                         LayerNorm<S>&);                                                        \
  template Matrix<S> activate(Activation, const Matrix<S>&);                                                    \
  template Matrix<S> activate_derivative(Activation, const Matrix<S>&);                                         \
  template Matrix<S> attention_forward(const Attention<S>&, std::size_t, const Matrix<S>&,                      \
                                       std::span<const std::uint8_t>, AttentionCache<S>*);                      \
  template Matrix<S> attention_backward(const Attention<S>&, std::size_t, const AttentionCache<S>&,             \
                                        const Matrix<S>&, Attention<S>&);                                       \
  template Matrix<S> dense_mlp_forward(const DenseMlp<S>&, Activation, const Matrix<S>&, DenseMlpCache<S>*);   \
  template Matrix<S> dense_mlp_backward(const DenseMlp<S>&, Activation, const DenseMlpCache<S>&,                \
                                        const Matrix<S>&, DenseMlp<S>&);

COCITE_INSTANTIATE_LAYERS(float)
COCITE_INSTANTIATE_LAYERS(double)

}  // namespace cocite
