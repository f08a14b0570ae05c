// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cocite/model_config.hpp"
#include "cocite/tensor.hpp"

namespace cocite {

inline constexpr double kLayerNormEps = 1e-12;

template <typename Scalar>
struct LayerNorm {
  Matrix<Scalar> gamma;  // 1 x d
  Matrix<Scalar> beta;   // 1 x d
};

template <typename Scalar>
struct LayerNormCache {
  Matrix<Scalar> normalized;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std;
};

template <typename Scalar>
Matrix<Scalar> layer_norm_forward(const LayerNorm<Scalar>& norm, const Matrix<Scalar>& x,
                                  LayerNormCache<Scalar>* cache = nullptr);

/// Accumulates into `grad` and returns the input gradient.
template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const LayerNorm<Scalar>& norm, const LayerNormCache<Scalar>& cache,
                                   const Matrix<Scalar>& dy, LayerNorm<Scalar>& grad);

template <typename Scalar>
Matrix<Scalar> activate(Activation act, const Matrix<Scalar>& pre);

/// Elementwise derivative of the activation evaluated at `pre`.
template <typename Scalar>
Matrix<Scalar> activate_derivative(Activation act, const Matrix<Scalar>& pre);

template <typename Scalar>
struct Attention {
  Matrix<Scalar> query_weight, query_bias;
  Matrix<Scalar> key_weight, key_bias;
  Matrix<Scalar> value_weight, value_bias;
  Matrix<Scalar> output_weight, output_bias;
};

template <typename Scalar>
struct AttentionCache {
  Matrix<Scalar> input, query, key, value, context;
  std::vector<Matrix<Scalar>> probs;  // one L x L matrix per head
};

/// Bidirectional multi-head self-attention. Keys whose mask entry is 0 get
/// exactly zero attention weight.
template <typename Scalar>
Matrix<Scalar> attention_forward(const Attention<Scalar>& attn, std::size_t num_heads, const Matrix<Scalar>& x,
                                 std::span<const std::uint8_t> mask, AttentionCache<Scalar>* cache = nullptr);

template <typename Scalar>
Matrix<Scalar> attention_backward(const Attention<Scalar>& attn, std::size_t num_heads,
                                  const AttentionCache<Scalar>& cache, const Matrix<Scalar>& dy,
                                  Attention<Scalar>& grad);

/// sigma(X W1 + b1) W2 + b2
template <typename Scalar>
struct DenseMlp {
  Matrix<Scalar> w1, b1, w2, b2;
};

template <typename Scalar>
struct DenseMlpCache {
  Matrix<Scalar> input, pre_activation, activated;
};

template <typename Scalar>
Matrix<Scalar> dense_mlp_forward(const DenseMlp<Scalar>& mlp, Activation act, const Matrix<Scalar>& x,
                                 DenseMlpCache<Scalar>* cache = nullptr);

template <typename Scalar>
Matrix<Scalar> dense_mlp_backward(const DenseMlp<Scalar>& mlp, Activation act, const DenseMlpCache<Scalar>& cache,
                                  const Matrix<Scalar>& dy, DenseMlp<Scalar>& grad);

/// Row vector + matrix broadcast helper: every row of `m` gets `bias` added.
template <typename Scalar>
Matrix<Scalar> add_bias(Matrix<Scalar> m, const Matrix<Scalar>& bias) {
  m.rowwise() += bias.row(0);
  return m;
}

}  // namespace cocite
