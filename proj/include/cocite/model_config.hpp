// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

namespace cocite {

enum class Activation { Gelu, Relu };

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden_dim = 32;
  std::size_t intermediate_dim = 128;
  std::size_t num_blocks = 2;
  std::size_t num_heads = 4;
  std::size_t max_seq_len = 64;
  Activation activation = Activation::Gelu;
  // Standard deviation of the normal initializer for weight matrices.
  double init_stddev = 0.02;

  void validate() const;
  std::size_t head_dim() const { return hidden_dim / num_heads; }
};

enum class RoutingGranularity { Sentence, Token };
enum class RoutingStrategy { Enforced, RouterCrossEntropy, MutualInformation };

struct MoeConfig {
  std::size_t num_experts = 2;
  RoutingGranularity granularity = RoutingGranularity::Sentence;
  std::size_t top_k = 1;
  RoutingStrategy strategy = RoutingStrategy::Enforced;
  std::set<std::size_t> extended_layers;
  double mi_loss_weight = 1.0;
  std::map<std::string, std::size_t> domain_experts;

  /// Checks internal consistency against an encoder with `num_blocks` blocks.
  void validate(std::size_t num_blocks) const;
  std::size_t expert_for(const std::string& domain) const;
};

/// Block index used for the single-layer variant.
inline std::size_t middle_block(std::size_t num_blocks) { return num_blocks / 2; }

std::string to_string(Activation a);
std::string to_string(RoutingGranularity g);
std::string to_string(RoutingStrategy s);
Activation parse_activation(const std::string& s);
RoutingGranularity parse_granularity(const std::string& s);
RoutingStrategy parse_strategy(const std::string& s);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const MoeConfig& c);
void from_json(const nlohmann::json& j, MoeConfig& c);

}  // namespace cocite
