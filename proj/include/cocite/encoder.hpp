// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "cocite/layers.hpp"
#include "cocite/model_config.hpp"
#include "cocite/moe.hpp"
#include "cocite/tensor.hpp"
#include "cocite/vocabulary.hpp"

namespace cocite {

/// Post-norm BERT block: LN(x + Attn(x)), then LN(h + FFN(h)). The feed-forward
/// part is either the dense MLP or an expert layer after extension.
template <typename Scalar>
struct Block {
  Attention<Scalar> attention;
  LayerNorm<Scalar> attention_norm;
  std::variant<DenseMlp<Scalar>, MoeLayer<Scalar>> feed_forward;
  LayerNorm<Scalar> output_norm;

  bool is_moe() const { return std::holds_alternative<MoeLayer<Scalar>>(feed_forward); }
};

template <typename Scalar>
struct EncoderWeights {
  using scalar_type = Scalar;

  Matrix<Scalar> token_embedding;     // v x d
  Matrix<Scalar> position_embedding;  // L_max x d
  LayerNorm<Scalar> embedding_norm;
  std::vector<Block<Scalar>> blocks;
  Matrix<Scalar> pooler_weight;  // d x d
  Matrix<Scalar> pooler_bias;    // 1 x d

  /// Normal(0, init_stddev) matrices, zero biases, unit norm scales.
  static EncoderWeights init(const ModelConfig& cfg, Rng& rng);

  /// Same layout with every tensor zeroed; used as a gradient buffer.
  EncoderWeights zeros_like() const;

  void validate(const ModelConfig& cfg, const MoeConfig* moe) const;
};

template <typename Scalar>
struct TemperatureParam {
  /// The learned temperature is exp(log_value), so it stays positive.
  Scalar log_value = 0;

  Scalar value() const { return std::exp(log_value); }
  static TemperatureParam from_value(double t) { return {static_cast<Scalar>(std::log(t))}; }
};

inline constexpr double kDefaultTemperature = 1.0 / 0.07;

template <typename Scalar>
struct Model {
  using scalar_type = Scalar;

  ModelConfig config;
  Vocabulary vocab;
  std::optional<MoeConfig> moe;
  /// Position 0 carries the input's domain token instead of [CLS].
  bool domain_tokens = false;
  EncoderWeights<Scalar> weights;
  TemperatureParam<Scalar> temperature = TemperatureParam<Scalar>::from_value(kDefaultTemperature);

  static Model create(const ModelConfig& cfg, Vocabulary vocab, std::uint64_t seed);

  void validate() const;

  /// Tokenize `text` the way this model expects its input.
  TokenSequence tokenize(std::string_view text, std::optional<std::string_view> domain) const;
};

template <typename To, typename From>
Model<To> cast_model(const Model<From>& m);

template <typename Scalar>
struct HiddenStates {
  std::vector<Matrix<Scalar>> layers;  // X^(0) .. X^(T)
  const Matrix<Scalar>& last() const { return layers.back(); }
};

template <typename Scalar>
struct BlockCache {
  AttentionCache<Scalar> attention;
  LayerNormCache<Scalar> attention_norm;
  std::variant<DenseMlpCache<Scalar>, MoeCache<Scalar>> feed_forward;
  LayerNormCache<Scalar> output_norm;
};

template <typename Scalar>
struct EncoderPass {
  TokenSequence sequence;
  HiddenStates<Scalar> hidden;
  LayerNormCache<Scalar> embedding_norm;
  std::vector<BlockCache<Scalar>> blocks;

  /// Routing records of the extended blocks, in block order.
  std::vector<RoutingRecord<Scalar>> routing() const;
};

template <typename Scalar>
EncoderPass<Scalar> encoder_forward(const ModelConfig& cfg, const EncoderWeights<Scalar>& weights,
                                    const MoeConfig* moe, const TokenSequence& seq,
                                    std::optional<std::string_view> domain = std::nullopt);

template <typename Scalar>
EncoderPass<Scalar> encoder_forward(const Model<Scalar>& model, const TokenSequence& seq,
                                    std::optional<std::string_view> domain = std::nullopt) {
  return encoder_forward(model.config, model.weights, model.moe ? &*model.moe : nullptr, seq, domain);
}

/// tanh(x_0 W_p + b_p) where x_0 is the position-0 row of the last hidden state.
template <typename Scalar>
RowVector<Scalar> pool(const EncoderWeights<Scalar>& weights, const Matrix<Scalar>& last_hidden);

/// Returns d loss / d last_hidden given d loss / d pooled.
template <typename Scalar>
Matrix<Scalar> pool_backward(const EncoderWeights<Scalar>& weights, const Matrix<Scalar>& last_hidden,
                             const RowVector<Scalar>& pooled, const RowVector<Scalar>& d_pooled,
                             EncoderWeights<Scalar>& grad);

/// Accumulates parameter gradients into `grad`. `d_router_logits` is either
/// empty or aligned with `pass.routing()`.
template <typename Scalar>
void encoder_backward(const ModelConfig& cfg, const EncoderWeights<Scalar>& weights, const MoeConfig* moe,
                      const EncoderPass<Scalar>& pass, const Matrix<Scalar>& d_last_hidden,
                      std::span<const Matrix<Scalar>> d_router_logits, EncoderWeights<Scalar>& grad);

/// Tokenize, encode and pool a single text.
template <typename Scalar>
RowVector<Scalar> embed(const Model<Scalar>& model, std::string_view text, std::optional<std::string_view> domain);

namespace detail {

template <typename F, typename... L>
void visit_layer_norm(F& f, const std::string& prefix, L&... n) {
  f(prefix + ".gamma", n.gamma...);
  f(prefix + ".beta", n.beta...);
}

template <typename F, typename... A>
void visit_attention(F& f, const std::string& prefix, A&... a) {
  f(prefix + ".query.weight", a.query_weight...);
  f(prefix + ".query.bias", a.query_bias...);
  f(prefix + ".key.weight", a.key_weight...);
  f(prefix + ".key.bias", a.key_bias...);
  f(prefix + ".value.weight", a.value_weight...);
  f(prefix + ".value.bias", a.value_bias...);
  f(prefix + ".output.weight", a.output_weight...);
  f(prefix + ".output.bias", a.output_bias...);
}

template <typename F, typename... M>
void visit_dense(F& f, const std::string& prefix, M&... m) {
  f(prefix + ".w1", m.w1...);
  f(prefix + ".b1", m.b1...);
  f(prefix + ".w2", m.w2...);
  f(prefix + ".b2", m.b2...);
}

template <typename F, typename... M>
void visit_expert(F& f, const std::string& prefix, M&... m) {
  visit_dense(f, prefix, m...);
  f(prefix + ".w3", m.w3...);
  f(prefix + ".b3", m.b3...);
}

template <typename T, typename V>
auto& get_alt(V& v) {
  return std::get<T>(v);
}

}  // namespace detail

/// Calls `f(name, tensor_of_w0, tensor_of_w1, ...)` for every trainable tensor
/// of the given weight sets, which must share one layout. Names follow the
/// checkpoint convention (`block.<i>.expert.<e>.w1`, `block.<i>.router.weight`).
template <typename F, typename First, typename... Rest>
void for_each_parameter(F&& f, First& first, Rest&... rest) {
  using Scalar = typename std::remove_cv_t<First>::scalar_type;
  f(std::string("embeddings.token"), first.token_embedding, rest.token_embedding...);
  f(std::string("embeddings.position"), first.position_embedding, rest.position_embedding...);
  detail::visit_layer_norm(f, "embeddings.norm", first.embedding_norm, rest.embedding_norm...);
  for (std::size_t i = 0; i < first.blocks.size(); ++i) {
    const std::string p = "block." + std::to_string(i);
    auto& b = first.blocks[i];
    detail::visit_attention(f, p + ".attention", b.attention, rest.blocks.at(i).attention...);
    detail::visit_layer_norm(f, p + ".attention_norm", b.attention_norm, rest.blocks.at(i).attention_norm...);
    if (std::holds_alternative<DenseMlp<Scalar>>(b.feed_forward)) {
      detail::visit_dense(f, p + ".mlp", detail::get_alt<DenseMlp<Scalar>>(b.feed_forward),
                          detail::get_alt<DenseMlp<Scalar>>(rest.blocks.at(i).feed_forward)...);
    } else {
      auto& layer = detail::get_alt<MoeLayer<Scalar>>(b.feed_forward);
      for (std::size_t e = 0; e < layer.experts.size(); ++e) {
        detail::visit_expert(f, p + ".expert." + std::to_string(e), layer.experts[e],
                             detail::get_alt<MoeLayer<Scalar>>(rest.blocks.at(i).feed_forward).experts.at(e)...);
      }
      f(p + ".router.weight", layer.router.weight,
        detail::get_alt<MoeLayer<Scalar>>(rest.blocks.at(i).feed_forward).router.weight...);
      f(p + ".router.bias", layer.router.bias,
        detail::get_alt<MoeLayer<Scalar>>(rest.blocks.at(i).feed_forward).router.bias...);
    }
    detail::visit_layer_norm(f, p + ".output_norm", b.output_norm, rest.blocks.at(i).output_norm...);
  }
  f(std::string("pooler.weight"), first.pooler_weight, rest.pooler_weight...);
  f(std::string("pooler.bias"), first.pooler_bias, rest.pooler_bias...);
}

template <typename Scalar>
std::size_t parameter_count(const EncoderWeights<Scalar>& w) {
  std::size_t n = 0;
  for_each_parameter([&](const std::string&, const Matrix<Scalar>& m) { n += static_cast<std::size_t>(m.size()); }, w);
  return n;
}

}  // namespace cocite
