// SPDX-License-Identifier: Apache-2.0
#include "cocite/model_config.hpp"

#include "cocite/tensor.hpp"

namespace cocite {

void ModelConfig::validate() const {
  if (vocab_size == 0 || hidden_dim == 0 || intermediate_dim == 0 || num_heads == 0 || max_seq_len == 0) {
    throw ConfigError("model config: all dimensions must be >= 1");
  }
  if (hidden_dim % num_heads != 0) {
    throw ConfigError("model config: hidden_dim " + std::to_string(hidden_dim) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (intermediate_dim <= hidden_dim) {
    throw ConfigError("model config: intermediate_dim must exceed hidden_dim");
  }
  if (!(init_stddev > 0.0)) throw ConfigError("model config: init_stddev must be positive");
}

void MoeConfig::validate(std::size_t num_blocks) const {
  if (num_experts < 1) throw ConfigError("moe config: num_experts must be >= 1");
  if (top_k < 1 || top_k > num_experts) {
    throw ConfigError("moe config: top_k " + std::to_string(top_k) + " outside [1, " + std::to_string(num_experts) +
                      "]");
  }
  if (extended_layers.empty()) throw ConfigError("moe config: extended_layers is empty");
  for (auto layer : extended_layers) {
    if (layer >= num_blocks) {
      throw ConfigError("moe config: extended layer " + std::to_string(layer) + " out of range [0, " +
                        std::to_string(num_blocks) + ")");
    }
  }
  if (mi_loss_weight < 0.0) throw ConfigError("moe config: mi_loss_weight must be non-negative");
  for (const auto& [domain, expert] : domain_experts) {
    if (expert >= num_experts) {
      throw ConfigError("moe config: domain '" + domain + "' mapped to missing expert " + std::to_string(expert));
    }
  }
  if (strategy != RoutingStrategy::MutualInformation && domain_experts.empty()) {
    throw ConfigError("moe config: " + to_string(strategy) + " routing requires a domain->expert map");
  }
}

std::size_t MoeConfig::expert_for(const std::string& domain) const {
  auto it = domain_experts.find(domain);
  if (it == domain_experts.end()) throw ConfigError("no expert mapped for domain '" + domain + "'");
  return it->second;
}

std::string to_string(Activation a) { return a == Activation::Gelu ? "gelu" : "relu"; }

std::string to_string(RoutingGranularity g) { return g == RoutingGranularity::Sentence ? "sentence" : "token"; }

std::string to_string(RoutingStrategy s) {
  switch (s) {
    case RoutingStrategy::Enforced: return "enforced";
    case RoutingStrategy::RouterCrossEntropy: return "router_ce";
    case RoutingStrategy::MutualInformation: return "mutual_info";
  }
  return "unknown";
}

Activation parse_activation(const std::string& s) {
  if (s == "gelu") return Activation::Gelu;
  if (s == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + s + "'");
}

RoutingGranularity parse_granularity(const std::string& s) {
  if (s == "sentence") return RoutingGranularity::Sentence;
  if (s == "token") return RoutingGranularity::Token;
  throw ConfigError("unknown routing granularity '" + s + "'");
}

RoutingStrategy parse_strategy(const std::string& s) {
  if (s == "enforced") return RoutingStrategy::Enforced;
  if (s == "router_ce") return RoutingStrategy::RouterCrossEntropy;
  if (s == "mutual_info") return RoutingStrategy::MutualInformation;
  throw ConfigError("unknown routing strategy '" + s + "'");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},       {"hidden_dim", c.hidden_dim},
                     {"intermediate_dim", c.intermediate_dim}, {"num_blocks", c.num_blocks},
                     {"num_heads", c.num_heads},         {"max_seq_len", c.max_seq_len},
                     {"activation", to_string(c.activation)}, {"init_stddev", c.init_stddev}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  c.intermediate_dim = j.value("intermediate_dim", d.intermediate_dim);
  c.num_blocks = j.value("num_blocks", d.num_blocks);
  c.num_heads = j.value("num_heads", d.num_heads);
  c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  c.activation = parse_activation(j.value("activation", to_string(d.activation)));
  c.init_stddev = j.value("init_stddev", d.init_stddev);
}

void to_json(nlohmann::json& j, const MoeConfig& c) {
  j = nlohmann::json{{"num_experts", c.num_experts},
                     {"granularity", to_string(c.granularity)},
                     {"top_k", c.top_k},
                     {"strategy", to_string(c.strategy)},
                     {"extended_layers", c.extended_layers},
                     {"mi_loss_weight", c.mi_loss_weight},
                     {"domain_experts", c.domain_experts}};
}

void from_json(const nlohmann::json& j, MoeConfig& c) {
  MoeConfig d;
  c.num_experts = j.value("num_experts", d.num_experts);
  c.granularity = parse_granularity(j.value("granularity", to_string(d.granularity)));
  c.top_k = j.value("top_k", d.top_k);
  c.strategy = parse_strategy(j.value("strategy", to_string(d.strategy)));
  c.extended_layers = j.value("extended_layers", d.extended_layers);
  c.mi_loss_weight = j.value("mi_loss_weight", d.mi_loss_weight);
  c.domain_experts = j.value("domain_experts", d.domain_experts);
}

}  // namespace cocite
