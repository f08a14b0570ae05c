// SPDX-License-Identifier: Apache-2.0
#include "cocite/extension.hpp"

namespace cocite {

template <typename Scalar>
Model<Scalar> extend_model(const Model<Scalar>& base, const MoeConfig& cfg, std::uint64_t seed,
                           bool use_domain_tokens) {
  base.validate();
  if (base.moe) throw ConfigError("model is already extended");
  cfg.validate(base.config.num_blocks);
  if (cfg.strategy == RoutingStrategy::Enforced) {
    for (const auto& domain : base.vocab.domains()) {
      if (!cfg.domain_experts.count(domain)) {
        throw ConfigError("enforced routing: domain '" + domain + "' has no expert");
      }
    }
  }

  Model<Scalar> out = base;
  out.moe = cfg;
  Rng rng(seed);
  const auto d = static_cast<Eigen::Index>(base.config.hidden_dim);
  const auto inter = static_cast<Eigen::Index>(base.config.intermediate_dim);
  for (auto layer : cfg.extended_layers) {
    auto& block = out.weights.blocks[layer];
    const auto& mlp = std::get<DenseMlp<Scalar>>(block.feed_forward);
    MoeLayer<Scalar> moe;
    for (std::size_t e = 0; e < cfg.num_experts; ++e) {
      moe.experts.push_back(
          {mlp.w1, mlp.b1, mlp.w2, mlp.b2, Matrix<Scalar>::Zero(d, inter), Matrix<Scalar>::Ones(1, inter)});
    }
    moe.router.weight =
        normal_matrix<Scalar>(d, static_cast<Eigen::Index>(cfg.num_experts), base.config.init_stddev, rng);
    moe.router.bias = Matrix<Scalar>::Zero(1, static_cast<Eigen::Index>(cfg.num_experts));
    block.feed_forward = std::move(moe);
  }
  if (use_domain_tokens && !base.domain_tokens) {
    for (const auto& domain : out.vocab.domains()) {
      const auto id = *out.vocab.domain_token_id(domain);
      out.weights.token_embedding.row(id) = out.weights.token_embedding.row(Vocabulary::kCls);
    }
  }
  out.domain_tokens = use_domain_tokens || base.domain_tokens;
  return out;
}

ParameterReport count_parameters(const ModelConfig& cfg, const MoeConfig* moe) {
  const std::size_t v = cfg.vocab_size, d = cfg.hidden_dim, inter = cfg.intermediate_dim;
  const std::size_t norm = 2 * d;
  const std::size_t attention = 4 * (d * d + d);
  const std::size_t mlp = d * inter + inter + inter * d + d;
  const std::size_t branch = d * inter + inter;

  ParameterReport r;
  r.dense_mlp = mlp;
  r.stored = v * d + cfg.max_seq_len * d + norm + cfg.num_blocks * (attention + 2 * norm + mlp) + d * d + d;
  r.active = r.stored;
  if (moe) {
    const std::size_t extended = moe->extended_layers.size();
    const std::size_t experts = moe->num_experts;
    r.cloned_mlp = extended * (experts - 1) * mlp;
    r.gated_branch = extended * experts * branch;
    r.routers = extended * (d * experts + experts);
    r.stored += r.cloned_mlp + r.gated_branch + r.routers;
    const std::size_t used = moe->strategy == RoutingStrategy::Enforced ? 1 : moe->top_k;
    r.active = r.stored - extended * (experts - used) * (mlp + branch);
  }
  return r;
}

template Model<float> extend_model(const Model<float>&, const MoeConfig&, std::uint64_t, bool);
template Model<double> extend_model(const Model<double>&, const MoeConfig&, std::uint64_t, bool);

}  // namespace cocite
