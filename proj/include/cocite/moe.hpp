// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cocite/layers.hpp"
#include "cocite/model_config.hpp"
#include "cocite/tensor.hpp"

namespace cocite {

/// Gated expert: (sigma(X W1 + b1) * (X W3 + b3)) W2 + b2, elementwise product.
template <typename Scalar>
struct ExpertMlp {
  Matrix<Scalar> w1, b1, w2, b2, w3, b3;
};

template <typename Scalar>
struct Router {
  Matrix<Scalar> weight;  // d x E
  Matrix<Scalar> bias;    // 1 x E
};

template <typename Scalar>
struct MoeLayer {
  std::vector<ExpertMlp<Scalar>> experts;
  Router<Scalar> router;
};

template <typename Scalar>
struct SwigluCache {
  Matrix<Scalar> input, pre_activation, activated, gate;
};

template <typename Scalar>
Matrix<Scalar> swiglu_forward(const ExpertMlp<Scalar>& expert, const Matrix<Scalar>& x, Activation act,
                              SwigluCache<Scalar>* cache = nullptr);

template <typename Scalar>
Matrix<Scalar> swiglu_backward(const ExpertMlp<Scalar>& expert, Activation act, const SwigluCache<Scalar>& cache,
                               const Matrix<Scalar>& dy, ExpertMlp<Scalar>& grad);

/// Routing outcome for one extended block. A routed unit is the whole
/// sequence (sentence granularity) or one position (token granularity).
template <typename Scalar>
struct RoutingRecord {
  std::size_t block = 0;
  Matrix<Scalar> logits;                          // units x E
  std::vector<std::vector<std::size_t>> selected;  // per unit, descending logit order
  std::vector<std::vector<Scalar>> gates;          // per unit, aligned with `selected`
  std::vector<std::uint8_t> unit_mask;            // 0 for padded token units

  std::size_t num_units() const { return selected.size(); }
};

/// Indices of the k largest values, descending; ties go to the lower index.
template <typename Scalar>
std::vector<std::size_t> top_k_indices(const Eigen::Ref<const RowVector<Scalar>>& logits, std::size_t k);

template <typename Scalar>
RowVector<Scalar> softmax(const Eigen::Ref<const RowVector<Scalar>>& logits);

/// Router input per unit: the mean of unmasked rows (sentence) or every row (token).
template <typename Scalar>
Matrix<Scalar> routing_input(const Matrix<Scalar>& block_input, std::span<const std::uint8_t> mask,
                             RoutingGranularity granularity);

template <typename Scalar>
RoutingRecord<Scalar> route(const Matrix<Scalar>& block_input, std::span<const std::uint8_t> mask,
                            const Router<Scalar>& router, const MoeConfig& cfg,
                            std::optional<std::string_view> domain);

template <typename Scalar>
struct MoeCache {
  RoutingRecord<Scalar> routing;
  Matrix<Scalar> router_input;
  std::vector<std::uint8_t> mask;
  struct Dispatch {
    std::size_t expert = 0;
    std::vector<Eigen::Index> rows;
    std::vector<std::size_t> units;  // routed unit owning each row
    std::vector<Scalar> gates;       // gate weight applied to each row
    SwigluCache<Scalar> cache;
    Matrix<Scalar> output;  // un-gated expert output for `rows`
  };
  std::vector<Dispatch> dispatch;
};

template <typename Scalar>
Matrix<Scalar> moe_forward(const MoeLayer<Scalar>& layer, const MoeConfig& cfg, Activation act,
                           const Matrix<Scalar>& x, std::span<const std::uint8_t> mask,
                           std::optional<std::string_view> domain, std::size_t block, MoeCache<Scalar>& cache);

/// `d_logits`, when given, is an extra gradient on the router logits coming
/// from auxiliary routing losses. Gradients of experts that received no rows
/// stay exactly zero.
template <typename Scalar>
Matrix<Scalar> moe_backward(const MoeLayer<Scalar>& layer, const MoeConfig& cfg, Activation act,
                            const MoeCache<Scalar>& cache, const Matrix<Scalar>& dy, const Matrix<Scalar>* d_logits,
                            MoeLayer<Scalar>& grad);

/// Mean cross-entropy between softmax(logits) and `true_expert`, averaged over
/// routed units within a block and then over blocks. Writes d loss / d logits
/// per record when `d_logits` is non-null.
template <typename Scalar>
Scalar router_ce_loss(std::span<const RoutingRecord<Scalar>> records, std::size_t true_expert,
                      std::vector<Matrix<Scalar>>* d_logits = nullptr);

/// Per-example routing distribution: mean over unmasked units of softmax(logits).
template <typename Scalar>
RowVector<Scalar> routing_probabilities(const RoutingRecord<Scalar>& record);

/// Chain rule from d loss / d routing_probabilities to d loss / d logits.
template <typename Scalar>
Matrix<Scalar> routing_probabilities_backward(const RoutingRecord<Scalar>& record, const RowVector<Scalar>& d_probs);

/// Mutual information between domain and expert for one block:
/// sum_dom p(dom) sum_e p(e|dom) ln(p(e|dom)/p(e)), with p(e|dom) the mean
/// routing distribution of the domain's examples.
template <typename Scalar>
Scalar mutual_information(std::span<const RowVector<Scalar>> probs, std::span<const std::size_t> domain_labels,
                          std::vector<RowVector<Scalar>>* d_probs = nullptr);

/// -lambda * mean over blocks of the mutual information. `probs[x][b]` is the
/// routing distribution of example x at extended block b.
template <typename Scalar>
Scalar mutual_information_loss(const std::vector<std::vector<RowVector<Scalar>>>& probs,
                               std::span<const std::size_t> domain_labels, double lambda,
                               std::vector<std::vector<RowVector<Scalar>>>* d_probs = nullptr);

}  // namespace cocite
