// SPDX-License-Identifier: Apache-2.0
#include "cocite/encoder.hpp"

#include <cmath>

namespace cocite {

namespace {

template <typename Scalar>
LayerNorm<Scalar> unit_norm(Eigen::Index d) {
  return {Matrix<Scalar>::Ones(1, d), Matrix<Scalar>::Zero(1, d)};
}

template <typename Scalar>
void check_norm(const LayerNorm<Scalar>& n, Eigen::Index d, const std::string& what) {
  require_shape(n.gamma, 1, d, what + ".gamma");
  require_shape(n.beta, 1, d, what + ".beta");
}

template <typename To, typename From>
Matrix<To> cast_matrix(const Matrix<From>& m) {
  return m.template cast<To>();
}

template <typename To, typename From>
LayerNorm<To> cast_norm(const LayerNorm<From>& n) {
  return {cast_matrix<To>(n.gamma), cast_matrix<To>(n.beta)};
}

}  // namespace

template <typename Scalar>
EncoderWeights<Scalar> EncoderWeights<Scalar>::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto v = static_cast<Eigen::Index>(cfg.vocab_size);
  const auto d = static_cast<Eigen::Index>(cfg.hidden_dim);
  const auto inter = static_cast<Eigen::Index>(cfg.intermediate_dim);
  const auto len = static_cast<Eigen::Index>(cfg.max_seq_len);
  const double sd = cfg.init_stddev;

  EncoderWeights w;
  w.token_embedding = normal_matrix<Scalar>(v, d, sd, rng);
  w.position_embedding = normal_matrix<Scalar>(len, d, sd, rng);
  w.embedding_norm = unit_norm<Scalar>(d);
  for (std::size_t i = 0; i < cfg.num_blocks; ++i) {
    Block<Scalar> b;
    auto& a = b.attention;
    a.query_weight = normal_matrix<Scalar>(d, d, sd, rng);
    a.key_weight = normal_matrix<Scalar>(d, d, sd, rng);
    a.value_weight = normal_matrix<Scalar>(d, d, sd, rng);
    a.output_weight = normal_matrix<Scalar>(d, d, sd, rng);
    a.query_bias = a.key_bias = a.value_bias = a.output_bias = Matrix<Scalar>::Zero(1, d);
    b.attention_norm = unit_norm<Scalar>(d);
    DenseMlp<Scalar> mlp;
    mlp.w1 = normal_matrix<Scalar>(d, inter, sd, rng);
    mlp.b1 = Matrix<Scalar>::Zero(1, inter);
    mlp.w2 = normal_matrix<Scalar>(inter, d, sd, rng);
    mlp.b2 = Matrix<Scalar>::Zero(1, d);
    b.feed_forward = std::move(mlp);
    b.output_norm = unit_norm<Scalar>(d);
    w.blocks.push_back(std::move(b));
  }
  w.pooler_weight = normal_matrix<Scalar>(d, d, sd, rng);
  w.pooler_bias = Matrix<Scalar>::Zero(1, d);
  return w;
}

template <typename Scalar>
EncoderWeights<Scalar> EncoderWeights<Scalar>::zeros_like() const {
  EncoderWeights z = *this;
  for_each_parameter([](const std::string&, Matrix<Scalar>& m) { m.setZero(); }, z);
  return z;
}

template <typename Scalar>
void EncoderWeights<Scalar>::validate(const ModelConfig& cfg, const MoeConfig* moe) const {
  cfg.validate();
  const auto v = static_cast<Eigen::Index>(cfg.vocab_size);
  const auto d = static_cast<Eigen::Index>(cfg.hidden_dim);
  const auto inter = static_cast<Eigen::Index>(cfg.intermediate_dim);
  require_shape(token_embedding, v, d, "embeddings.token");
  require_shape(position_embedding, static_cast<Eigen::Index>(cfg.max_seq_len), d, "embeddings.position");
  check_norm(embedding_norm, d, "embeddings.norm");
  if (blocks.size() != cfg.num_blocks) {
    throw ShapeError("expected " + std::to_string(cfg.num_blocks) + " blocks, got " + std::to_string(blocks.size()));
  }
  if (moe) moe->validate(cfg.num_blocks);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "block." + std::to_string(i);
    const auto& b = blocks[i];
    const auto& a = b.attention;
    for (const auto* m : {&a.query_weight, &a.key_weight, &a.value_weight, &a.output_weight}) {
      require_shape(*m, d, d, p + ".attention");
    }
    for (const auto* m : {&a.query_bias, &a.key_bias, &a.value_bias, &a.output_bias}) {
      require_shape(*m, 1, d, p + ".attention bias");
    }
    check_norm(b.attention_norm, d, p + ".attention_norm");
    check_norm(b.output_norm, d, p + ".output_norm");
    const bool expected_moe = moe && moe->extended_layers.count(i) > 0;
    if (b.is_moe() != expected_moe) {
      throw ShapeError(p + ": feed-forward kind does not match the expert configuration");
    }
    if (const auto* mlp = std::get_if<DenseMlp<Scalar>>(&b.feed_forward)) {
      require_shape(mlp->w1, d, inter, p + ".mlp.w1");
      require_shape(mlp->b1, 1, inter, p + ".mlp.b1");
      require_shape(mlp->w2, inter, d, p + ".mlp.w2");
      require_shape(mlp->b2, 1, d, p + ".mlp.b2");
    } else {
      const auto& layer = std::get<MoeLayer<Scalar>>(b.feed_forward);
      const auto experts = static_cast<Eigen::Index>(moe->num_experts);
      if (static_cast<Eigen::Index>(layer.experts.size()) != experts) {
        throw ShapeError(p + ": expected " + std::to_string(experts) + " experts");
      }
      for (std::size_t e = 0; e < layer.experts.size(); ++e) {
        const auto& x = layer.experts[e];
        const std::string q = p + ".expert." + std::to_string(e);
        require_shape(x.w1, d, inter, q + ".w1");
        require_shape(x.b1, 1, inter, q + ".b1");
        require_shape(x.w2, inter, d, q + ".w2");
        require_shape(x.b2, 1, d, q + ".b2");
        require_shape(x.w3, d, inter, q + ".w3");
        require_shape(x.b3, 1, inter, q + ".b3");
      }
      require_shape(layer.router.weight, d, experts, p + ".router.weight");
      require_shape(layer.router.bias, 1, experts, p + ".router.bias");
    }
  }
  require_shape(pooler_weight, d, d, "pooler.weight");
  require_shape(pooler_bias, 1, d, "pooler.bias");
  bool finite = true;
  for_each_parameter([&](const std::string&, const Matrix<Scalar>& m) { finite = finite && m.allFinite(); }, *this);
  if (!finite) throw ShapeError("weights contain non-finite values");
}

template <typename Scalar>
Model<Scalar> Model<Scalar>::create(const ModelConfig& cfg, Vocabulary vocab, std::uint64_t seed) {
  Model m;
  m.config = cfg;
  m.config.vocab_size = vocab.size();
  m.vocab = std::move(vocab);
  Rng rng(seed);
  m.weights = EncoderWeights<Scalar>::init(m.config, rng);
  return m;
}

template <typename Scalar>
void Model<Scalar>::validate() const {
  if (vocab.size() != config.vocab_size) {
    throw ShapeError("vocabulary has " + std::to_string(vocab.size()) + " tokens, config says " +
                     std::to_string(config.vocab_size));
  }
  weights.validate(config, moe ? &*moe : nullptr);
}

template <typename Scalar>
TokenSequence Model<Scalar>::tokenize(std::string_view text, std::optional<std::string_view> domain) const {
  return cocite::tokenize(text, domain_tokens ? domain : std::nullopt, vocab, config.max_seq_len);
}

template <typename To, typename From>
Model<To> cast_model(const Model<From>& m) {
  Model<To> out;
  out.config = m.config;
  out.vocab = m.vocab;
  out.moe = m.moe;
  out.domain_tokens = m.domain_tokens;
  out.temperature.log_value = static_cast<To>(m.temperature.log_value);
  const auto& w = m.weights;
  auto& o = out.weights;
  o.token_embedding = cast_matrix<To>(w.token_embedding);
  o.position_embedding = cast_matrix<To>(w.position_embedding);
  o.embedding_norm = cast_norm<To>(w.embedding_norm);
  for (const auto& b : w.blocks) {
    Block<To> c;
    const auto& a = b.attention;
    c.attention = {cast_matrix<To>(a.query_weight), cast_matrix<To>(a.query_bias), cast_matrix<To>(a.key_weight),
                   cast_matrix<To>(a.key_bias),     cast_matrix<To>(a.value_weight), cast_matrix<To>(a.value_bias),
                   cast_matrix<To>(a.output_weight), cast_matrix<To>(a.output_bias)};
    c.attention_norm = cast_norm<To>(b.attention_norm);
    c.output_norm = cast_norm<To>(b.output_norm);
    if (const auto* mlp = std::get_if<DenseMlp<From>>(&b.feed_forward)) {
      c.feed_forward = DenseMlp<To>{cast_matrix<To>(mlp->w1), cast_matrix<To>(mlp->b1), cast_matrix<To>(mlp->w2),
                                    cast_matrix<To>(mlp->b2)};
    } else {
      const auto& layer = std::get<MoeLayer<From>>(b.feed_forward);
      MoeLayer<To> l;
      for (const auto& x : layer.experts) {
        l.experts.push_back({cast_matrix<To>(x.w1), cast_matrix<To>(x.b1), cast_matrix<To>(x.w2),
                             cast_matrix<To>(x.b2), cast_matrix<To>(x.w3), cast_matrix<To>(x.b3)});
      }
      l.router = {cast_matrix<To>(layer.router.weight), cast_matrix<To>(layer.router.bias)};
      c.feed_forward = std::move(l);
    }
    o.blocks.push_back(std::move(c));
  }
  o.pooler_weight = cast_matrix<To>(w.pooler_weight);
  o.pooler_bias = cast_matrix<To>(w.pooler_bias);
  return out;
}

template <typename Scalar>
std::vector<RoutingRecord<Scalar>> EncoderPass<Scalar>::routing() const {
  std::vector<RoutingRecord<Scalar>> out;
  for (const auto& b : blocks) {
    if (const auto* c = std::get_if<MoeCache<Scalar>>(&b.feed_forward)) out.push_back(c->routing);
  }
  return out;
}

template <typename Scalar>
EncoderPass<Scalar> encoder_forward(const ModelConfig& cfg, const EncoderWeights<Scalar>& weights,
                                    const MoeConfig* moe, const TokenSequence& seq,
                                    std::optional<std::string_view> domain) {
  const auto len = seq.ids.size();
  if (len == 0 || len > cfg.max_seq_len) {
    throw ShapeError("sequence length " + std::to_string(len) + " outside [1, " + std::to_string(cfg.max_seq_len) +
                     "]");
  }
  if (seq.mask.size() != len) throw ShapeError("mask length differs from sequence length");
  if (weights.blocks.size() != cfg.num_blocks || weights.token_embedding.rows() != static_cast<Eigen::Index>(cfg.vocab_size) ||
      weights.token_embedding.cols() != static_cast<Eigen::Index>(cfg.hidden_dim)) {
    throw ShapeError("weights do not match the model configuration");
  }
  const auto d = static_cast<Eigen::Index>(cfg.hidden_dim);

  EncoderPass<Scalar> pass;
  pass.sequence = seq;
  Matrix<Scalar> x(static_cast<Eigen::Index>(len), d);
  for (std::size_t l = 0; l < len; ++l) {
    const auto id = seq.ids[l];
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw ShapeError("token id " + std::to_string(id) + " outside the vocabulary");
    }
    x.row(static_cast<Eigen::Index>(l)) =
        weights.token_embedding.row(id) + weights.position_embedding.row(static_cast<Eigen::Index>(l));
  }
  x = layer_norm_forward(weights.embedding_norm, x, &pass.embedding_norm);
  pass.hidden.layers.push_back(x);

  const std::span<const std::uint8_t> mask(seq.mask);
  for (std::size_t i = 0; i < weights.blocks.size(); ++i) {
    const auto& b = weights.blocks[i];
    BlockCache<Scalar> cache;
    Matrix<Scalar> h = x + attention_forward(b.attention, cfg.num_heads, x, mask, &cache.attention);
    h = layer_norm_forward(b.attention_norm, h, &cache.attention_norm);
    Matrix<Scalar> ff;
    if (const auto* mlp = std::get_if<DenseMlp<Scalar>>(&b.feed_forward)) {
      DenseMlpCache<Scalar> c;
      ff = dense_mlp_forward(*mlp, cfg.activation, h, &c);
      cache.feed_forward = std::move(c);
    } else {
      if (!moe) throw ShapeError("expert layer present but no expert configuration given");
      MoeCache<Scalar> c;
      ff = moe_forward(std::get<MoeLayer<Scalar>>(b.feed_forward), *moe, cfg.activation, h, mask, domain, i, c);
      cache.feed_forward = std::move(c);
    }
    x = layer_norm_forward(b.output_norm, Matrix<Scalar>(h + ff), &cache.output_norm);
    pass.hidden.layers.push_back(x);
    pass.blocks.push_back(std::move(cache));
  }
  return pass;
}

template <typename Scalar>
RowVector<Scalar> pool(const EncoderWeights<Scalar>& weights, const Matrix<Scalar>& last_hidden) {
  RowVector<Scalar> pre = last_hidden.row(0) * weights.pooler_weight + weights.pooler_bias.row(0);
  return pre.array().tanh().matrix();
}

template <typename Scalar>
Matrix<Scalar> pool_backward(const EncoderWeights<Scalar>& weights, const Matrix<Scalar>& last_hidden,
                             const RowVector<Scalar>& pooled, const RowVector<Scalar>& d_pooled,
                             EncoderWeights<Scalar>& grad) {
  const RowVector<Scalar> d_pre = (d_pooled.array() * (Scalar(1) - pooled.array().square())).matrix();
  grad.pooler_weight.noalias() += last_hidden.row(0).transpose() * d_pre;
  grad.pooler_bias.row(0) += d_pre;
  Matrix<Scalar> d_hidden = Matrix<Scalar>::Zero(last_hidden.rows(), last_hidden.cols());
  d_hidden.row(0) = d_pre * weights.pooler_weight.transpose();
  return d_hidden;
}

template <typename Scalar>
void encoder_backward(const ModelConfig& cfg, const EncoderWeights<Scalar>& weights, const MoeConfig* moe,
                      const EncoderPass<Scalar>& pass, const Matrix<Scalar>& d_last_hidden,
                      std::span<const Matrix<Scalar>> d_router_logits, EncoderWeights<Scalar>& grad) {
  std::size_t moe_blocks = 0;
  for (const auto& b : weights.blocks) moe_blocks += b.is_moe() ? 1 : 0;
  if (!d_router_logits.empty() && d_router_logits.size() != moe_blocks) {
    throw ShapeError("router logit gradients must cover every extended block");
  }
  std::size_t routed = moe_blocks;
  Matrix<Scalar> dx = d_last_hidden;
  for (std::size_t i = weights.blocks.size(); i-- > 0;) {
    const auto& b = weights.blocks[i];
    const auto& cache = pass.blocks[i];
    auto& g = grad.blocks[i];
    const Matrix<Scalar> d_sum = layer_norm_backward(b.output_norm, cache.output_norm, dx, g.output_norm);
    Matrix<Scalar> dh = d_sum;
    if (const auto* mlp = std::get_if<DenseMlp<Scalar>>(&b.feed_forward)) {
      dh += dense_mlp_backward(*mlp, cfg.activation, std::get<DenseMlpCache<Scalar>>(cache.feed_forward), d_sum,
                               std::get<DenseMlp<Scalar>>(g.feed_forward));
    } else {
      --routed;
      const Matrix<Scalar>* dz = d_router_logits.empty() ? nullptr : &d_router_logits[routed];
      dh += moe_backward(std::get<MoeLayer<Scalar>>(b.feed_forward), *moe, cfg.activation,
                         std::get<MoeCache<Scalar>>(cache.feed_forward), d_sum, dz,
                         std::get<MoeLayer<Scalar>>(g.feed_forward));
    }
    const Matrix<Scalar> d_attn_sum = layer_norm_backward(b.attention_norm, cache.attention_norm, dh, g.attention_norm);
    dx = d_attn_sum + attention_backward(b.attention, cfg.num_heads, cache.attention, d_attn_sum, g.attention);
  }
  const Matrix<Scalar> d_embed = layer_norm_backward(weights.embedding_norm, pass.embedding_norm, dx, grad.embedding_norm);
  for (std::size_t l = 0; l < pass.sequence.ids.size(); ++l) {
    const auto r = static_cast<Eigen::Index>(l);
    grad.token_embedding.row(pass.sequence.ids[l]) += d_embed.row(r);
    grad.position_embedding.row(r) += d_embed.row(r);
  }
}

template <typename Scalar>
RowVector<Scalar> embed(const Model<Scalar>& model, std::string_view text, std::optional<std::string_view> domain) {
  const auto seq = model.tokenize(text, domain).trimmed();
  const auto pass = encoder_forward(model, seq, domain);
  return pool(model.weights, pass.hidden.last());
}

#define COCITE_INSTANTIATE_ENCODER(S)                                                                              \
  template struct EncoderWeights<S>;                                                                             \
  template struct Model<S>;                                                                                      \
  template struct EncoderPass<S>;                                                                                \
  template EncoderPass<S> encoder_forward(const ModelConfig&, const EncoderWeights<S>&, const MoeConfig*,        \
                                          const TokenSequence&, std::optional<std::string_view>);               \
  template RowVector<S> pool(const EncoderWeights<S>&, const Matrix<S>&);                                        \
  template Matrix<S> pool_backward(const EncoderWeights<S>&, const Matrix<S>&, const RowVector<S>&,              \
                                   const RowVector<S>&, EncoderWeights<S>&);                                    \
  template void encoder_backward(const ModelConfig&, const EncoderWeights<S>&, const MoeConfig*,                 \
                                 const EncoderPass<S>&, const Matrix<S>&, std::span<const Matrix<S>>,            \
                                 EncoderWeights<S>&);                                                            \
  template RowVector<S> embed(const Model<S>&, std::string_view, std::optional<std::string_view>);

COCITE_INSTANTIATE_ENCODER(float)
COCITE_INSTANTIATE_ENCODER(double)

template Model<double> cast_model<double, float>(const Model<float>&);
template Model<float> cast_model<float, double>(const Model<double>&);
template Model<float> cast_model<float, float>(const Model<float>&);
template Model<double> cast_model<double, double>(const Model<double>&);

}  // namespace cocite
