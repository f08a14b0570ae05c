// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "cocite/encoder.hpp"

namespace cocite {

/// Turns a dense encoder into an expert model. Every block listed in
/// `cfg.extended_layers` gets `num_experts` copies of its MLP with the gated
/// branch set to W3 = 0, b3 = 1, plus a router drawn from N(0, init_stddev).
/// The result computes the same function as `base` whatever the routing.
///
/// When `use_domain_tokens` is set and the base model did not use them, each
/// domain token embedding is overwritten with the [CLS] row so that switching
/// position 0 to the domain token also leaves outputs unchanged.
template <typename Scalar>
Model<Scalar> extend_model(const Model<Scalar>& base, const MoeConfig& cfg, std::uint64_t seed,
                           bool use_domain_tokens = true);

struct ParameterReport {
  std::size_t stored = 0;
  /// Parameters touched by one routed unit: unselected experts are excluded.
  std::size_t active = 0;
  std::size_t dense_mlp = 0;      // one block's MLP (W1, b1, W2, b2)
  std::size_t cloned_mlp = 0;     // extra expert copies of W1/b1/W2/b2 beyond the first
  std::size_t gated_branch = 0;   // all W3/b3 tensors
  std::size_t routers = 0;
};

/// Analytic count from shapes alone, so paper-scale configurations can be
/// checked without allocating them.
ParameterReport count_parameters(const ModelConfig& cfg, const MoeConfig* moe);

template <typename Scalar>
ParameterReport count_parameters(const Model<Scalar>& model) {
  return count_parameters(model.config, model.moe ? &*model.moe : nullptr);
}

}  // namespace cocite
