// SPDX-License-Identifier: Apache-2.0
#include "cocite/moe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace cocite {

template <typename Scalar>
Matrix<Scalar> swiglu_forward(const ExpertMlp<Scalar>& expert, const Matrix<Scalar>& x, Activation act,
                              SwigluCache<Scalar>* cache) {
  Matrix<Scalar> pre = add_bias<Scalar>(x * expert.w1, expert.b1);
  Matrix<Scalar> activated = activate(act, pre);
  Matrix<Scalar> gate = add_bias<Scalar>(x * expert.w3, expert.b3);
  Matrix<Scalar> out = add_bias<Scalar>((activated.array() * gate.array()).matrix() * expert.w2, expert.b2);
  if (cache) {
    cache->input = x;
    cache->pre_activation = std::move(pre);
    cache->activated = std::move(activated);
    cache->gate = std::move(gate);
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> swiglu_backward(const ExpertMlp<Scalar>& expert, Activation act, const SwigluCache<Scalar>& cache,
                               const Matrix<Scalar>& dy, ExpertMlp<Scalar>& grad) {
  const Matrix<Scalar> product = (cache.activated.array() * cache.gate.array()).matrix();
  grad.w2.noalias() += product.transpose() * dy;
  grad.b2.row(0) += dy.colwise().sum();
  const Matrix<Scalar> d_product = dy * expert.w2.transpose();
  const Matrix<Scalar> d_gate = (d_product.array() * cache.activated.array()).matrix();
  const Matrix<Scalar> d_pre = (d_product.array() * cache.gate.array() *
                                activate_derivative(act, cache.pre_activation).array())
                                   .matrix();
  grad.w1.noalias() += cache.input.transpose() * d_pre;
  grad.b1.row(0) += d_pre.colwise().sum();
  grad.w3.noalias() += cache.input.transpose() * d_gate;
  grad.b3.row(0) += d_gate.colwise().sum();
  Matrix<Scalar> dx = d_pre * expert.w1.transpose();
  dx.noalias() += d_gate * expert.w3.transpose();
  return dx;
}

template <typename Scalar>
std::vector<std::size_t> top_k_indices(const Eigen::Ref<const RowVector<Scalar>>& logits, std::size_t k) {
  std::vector<std::size_t> order(static_cast<std::size_t>(logits.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return logits(static_cast<Eigen::Index>(a)) > logits(static_cast<Eigen::Index>(b));
  });
  order.resize(std::min(k, order.size()));
  return order;
}

template <typename Scalar>
RowVector<Scalar> softmax(const Eigen::Ref<const RowVector<Scalar>>& logits) {
  RowVector<Scalar> p = (logits.array() - logits.maxCoeff()).exp().matrix();
  return p / p.sum();
}

template <typename Scalar>
Matrix<Scalar> routing_input(const Matrix<Scalar>& block_input, std::span<const std::uint8_t> mask,
                             RoutingGranularity granularity) {
  if (granularity == RoutingGranularity::Token) return block_input;
  Matrix<Scalar> mean = Matrix<Scalar>::Zero(1, block_input.cols());
  Scalar count = 0;
  for (Eigen::Index r = 0; r < block_input.rows(); ++r) {
    if (mask[static_cast<std::size_t>(r)]) {
      mean.row(0) += block_input.row(r);
      count += 1;
    }
  }
  if (count > 0) mean /= count;
  return mean;
}

namespace {

template <typename Scalar>
RoutingRecord<Scalar> route_from_input(const Matrix<Scalar>& units, std::span<const std::uint8_t> mask,
                                       const Router<Scalar>& router, const MoeConfig& cfg,
                                       std::optional<std::string_view> domain) {
  RoutingRecord<Scalar> rec;
  rec.logits = add_bias<Scalar>(units * router.weight, router.bias);
  const auto n = static_cast<std::size_t>(units.rows());
  if (cfg.granularity == RoutingGranularity::Token) {
    rec.unit_mask.assign(mask.begin(), mask.end());
  } else {
    rec.unit_mask.assign(1, 1);
  }
  std::optional<std::size_t> enforced;
  if (cfg.strategy == RoutingStrategy::Enforced) {
    if (!domain) throw ConfigError("enforced routing requires a domain");
    enforced = cfg.expert_for(std::string(*domain));
  }
  rec.selected.resize(n);
  rec.gates.resize(n);
  for (std::size_t u = 0; u < n; ++u) {
    if (enforced) {
      rec.selected[u] = {*enforced};
      rec.gates[u] = {Scalar(1)};
      continue;
    }
    const RowVector<Scalar> z = rec.logits.row(static_cast<Eigen::Index>(u));
    auto sel = top_k_indices<Scalar>(z, cfg.top_k);
    RowVector<Scalar> chosen(static_cast<Eigen::Index>(sel.size()));
    for (std::size_t s = 0; s < sel.size(); ++s) chosen(static_cast<Eigen::Index>(s)) = z(static_cast<Eigen::Index>(sel[s]));
    const RowVector<Scalar> g = softmax<Scalar>(chosen);
    rec.selected[u] = std::move(sel);
    rec.gates[u].assign(g.data(), g.data() + g.size());
  }
  return rec;
}

}  // namespace

template <typename Scalar>
RoutingRecord<Scalar> route(const Matrix<Scalar>& block_input, std::span<const std::uint8_t> mask,
                            const Router<Scalar>& router, const MoeConfig& cfg,
                            std::optional<std::string_view> domain) {
  return route_from_input(routing_input(block_input, mask, cfg.granularity), mask, router, cfg, domain);
}

template <typename Scalar>
Matrix<Scalar> moe_forward(const MoeLayer<Scalar>& layer, const MoeConfig& cfg, Activation act,
                           const Matrix<Scalar>& x, std::span<const std::uint8_t> mask,
                           std::optional<std::string_view> domain, std::size_t block, MoeCache<Scalar>& cache) {
  cache.router_input = routing_input(x, mask, cfg.granularity);
  cache.routing = route_from_input(cache.router_input, mask, layer.router, cfg, domain);
  cache.routing.block = block;
  cache.mask.assign(mask.begin(), mask.end());

  const auto& rec = cache.routing;
  std::vector<typename MoeCache<Scalar>::Dispatch> per_expert(layer.experts.size());
  for (std::size_t e = 0; e < per_expert.size(); ++e) per_expert[e].expert = e;
  const bool sentence = cfg.granularity == RoutingGranularity::Sentence;
  for (std::size_t u = 0; u < rec.num_units(); ++u) {
    for (std::size_t s = 0; s < rec.selected[u].size(); ++s) {
      auto& d = per_expert[rec.selected[u][s]];
      if (sentence) {
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
          d.rows.push_back(r);
          d.units.push_back(u);
          d.gates.push_back(rec.gates[u][s]);
        }
      } else {
        d.rows.push_back(static_cast<Eigen::Index>(u));
        d.units.push_back(u);
        d.gates.push_back(rec.gates[u][s]);
      }
    }
  }

  Matrix<Scalar> y = Matrix<Scalar>::Zero(x.rows(), x.cols());
  cache.dispatch.clear();
  for (auto& d : per_expert) {
    if (d.rows.empty()) continue;
    Matrix<Scalar> rows_in(static_cast<Eigen::Index>(d.rows.size()), x.cols());
    for (std::size_t i = 0; i < d.rows.size(); ++i) rows_in.row(static_cast<Eigen::Index>(i)) = x.row(d.rows[i]);
    d.output = swiglu_forward(layer.experts[d.expert], rows_in, act, &d.cache);
    for (std::size_t i = 0; i < d.rows.size(); ++i) {
      y.row(d.rows[i]) += d.gates[i] * d.output.row(static_cast<Eigen::Index>(i));
    }
    cache.dispatch.push_back(std::move(d));
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> moe_backward(const MoeLayer<Scalar>& layer, const MoeConfig& cfg, Activation act,
                            const MoeCache<Scalar>& cache, const Matrix<Scalar>& dy, const Matrix<Scalar>* d_logits,
                            MoeLayer<Scalar>& grad) {
  const auto& rec = cache.routing;
  const auto num_experts = static_cast<Eigen::Index>(layer.experts.size());
  Matrix<Scalar> dx = Matrix<Scalar>::Zero(dy.rows(), dy.cols());
  // d loss / d gate, indexed [unit][expert]
  Matrix<Scalar> d_gate = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(rec.num_units()), num_experts);

  for (const auto& d : cache.dispatch) {
    Matrix<Scalar> d_out(d.output.rows(), d.output.cols());
    for (std::size_t i = 0; i < d.rows.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      d_out.row(r) = d.gates[i] * dy.row(d.rows[i]);
      d_gate(static_cast<Eigen::Index>(d.units[i]), static_cast<Eigen::Index>(d.expert)) +=
          dy.row(d.rows[i]).dot(d.output.row(r));
    }
    const Matrix<Scalar> dx_rows = swiglu_backward(layer.experts[d.expert], act, d.cache, d_out, grad.experts[d.expert]);
    for (std::size_t i = 0; i < d.rows.size(); ++i) dx.row(d.rows[i]) += dx_rows.row(static_cast<Eigen::Index>(i));
  }

  const bool learned = cfg.strategy != RoutingStrategy::Enforced;
  if (!learned && d_logits == nullptr) return dx;

  Matrix<Scalar> dz = d_logits ? *d_logits : Matrix<Scalar>::Zero(rec.logits.rows(), rec.logits.cols());
  if (learned) {
    for (std::size_t u = 0; u < rec.num_units(); ++u) {
      const auto& sel = rec.selected[u];
      const auto& g = rec.gates[u];
      Scalar weighted = 0;
      for (std::size_t s = 0; s < sel.size(); ++s) {
        weighted += g[s] * d_gate(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(sel[s]));
      }
      for (std::size_t s = 0; s < sel.size(); ++s) {
        const auto e = static_cast<Eigen::Index>(sel[s]);
        dz(static_cast<Eigen::Index>(u), e) += g[s] * (d_gate(static_cast<Eigen::Index>(u), e) - weighted);
      }
    }
  }
  grad.router.weight.noalias() += cache.router_input.transpose() * dz;
  grad.router.bias.row(0) += dz.colwise().sum();
  const Matrix<Scalar> d_units = dz * layer.router.weight.transpose();
  if (cfg.granularity == RoutingGranularity::Token) {
    dx += d_units;
  } else {
    const auto count = static_cast<Scalar>(std::count(cache.mask.begin(), cache.mask.end(), std::uint8_t{1}));
    for (Eigen::Index r = 0; r < dx.rows(); ++r) {
      if (cache.mask[static_cast<std::size_t>(r)]) dx.row(r) += d_units.row(0) / count;
    }
  }
  return dx;
}

template <typename Scalar>
Scalar router_ce_loss(std::span<const RoutingRecord<Scalar>> records, std::size_t true_expert,
                      std::vector<Matrix<Scalar>>* d_logits) {
  if (records.empty()) throw ConfigError("router cross-entropy needs at least one routed block");
  if (d_logits) d_logits->clear();
  Scalar total = 0;
  const auto num_blocks = static_cast<Scalar>(records.size());
  for (const auto& rec : records) {
    const auto num_experts = static_cast<std::size_t>(rec.logits.cols());
    if (true_expert >= num_experts) {
      throw ConfigError("router target " + std::to_string(true_expert) + " outside [0, " +
                        std::to_string(num_experts) + ")");
    }
    const auto active = static_cast<Scalar>(std::count(rec.unit_mask.begin(), rec.unit_mask.end(), std::uint8_t{1}));
    Matrix<Scalar> grad = Matrix<Scalar>::Zero(rec.logits.rows(), rec.logits.cols());
    Scalar block_loss = 0;
    for (Eigen::Index u = 0; u < rec.logits.rows(); ++u) {
      if (!rec.unit_mask[static_cast<std::size_t>(u)]) continue;
      const RowVector<Scalar> z = rec.logits.row(u);
      const Scalar max_z = z.maxCoeff();
      const Scalar lse = max_z + std::log((z.array() - max_z).exp().sum());
      block_loss += lse - z(static_cast<Eigen::Index>(true_expert));
      if (d_logits) {
        RowVector<Scalar> g = softmax<Scalar>(z);
        g(static_cast<Eigen::Index>(true_expert)) -= Scalar(1);
        grad.row(u) = g / (active * num_blocks);
      }
    }
    total += block_loss / active;
    if (d_logits) d_logits->push_back(std::move(grad));
  }
  return total / num_blocks;
}

template <typename Scalar>
RowVector<Scalar> routing_probabilities(const RoutingRecord<Scalar>& record) {
  RowVector<Scalar> p = RowVector<Scalar>::Zero(record.logits.cols());
  Scalar count = 0;
  for (Eigen::Index u = 0; u < record.logits.rows(); ++u) {
    if (!record.unit_mask[static_cast<std::size_t>(u)]) continue;
    p += softmax<Scalar>(record.logits.row(u));
    count += 1;
  }
  return p / count;
}

template <typename Scalar>
Matrix<Scalar> routing_probabilities_backward(const RoutingRecord<Scalar>& record, const RowVector<Scalar>& d_probs) {
  Matrix<Scalar> dz = Matrix<Scalar>::Zero(record.logits.rows(), record.logits.cols());
  const auto count =
      static_cast<Scalar>(std::count(record.unit_mask.begin(), record.unit_mask.end(), std::uint8_t{1}));
  for (Eigen::Index u = 0; u < record.logits.rows(); ++u) {
    if (!record.unit_mask[static_cast<std::size_t>(u)]) continue;
    const RowVector<Scalar> p = softmax<Scalar>(record.logits.row(u));
    const Scalar inner = p.dot(d_probs);
    dz.row(u) = (p.array() * (d_probs.array() - inner)).matrix() / count;
  }
  return dz;
}

template <typename Scalar>
Scalar mutual_information(std::span<const RowVector<Scalar>> probs, std::span<const std::size_t> domain_labels,
                          std::vector<RowVector<Scalar>>* d_probs) {
  if (probs.empty()) throw DataError("mutual information needs a non-empty batch");
  if (probs.size() != domain_labels.size()) throw ShapeError("mutual information: one domain label per example");
  const auto num_experts = probs.front().size();
  const auto n = static_cast<Scalar>(probs.size());
  std::map<std::size_t, std::pair<RowVector<Scalar>, Scalar>> per_domain;  // sum of probs, count
  RowVector<Scalar> marginal = RowVector<Scalar>::Zero(num_experts);
  for (std::size_t x = 0; x < probs.size(); ++x) {
    auto [it, inserted] = per_domain.try_emplace(domain_labels[x], RowVector<Scalar>::Zero(num_experts), Scalar(0));
    it->second.first += probs[x];
    it->second.second += 1;
    marginal += probs[x];
  }
  marginal /= n;
  const Scalar tiny = std::numeric_limits<Scalar>::min();
  std::map<std::size_t, RowVector<Scalar>> log_ratio;
  Scalar mi = 0;
  for (auto& [dom, acc] : per_domain) {
    const RowVector<Scalar> conditional = acc.first / acc.second;
    const Scalar p_dom = acc.second / n;
    RowVector<Scalar> lr(num_experts);
    for (Eigen::Index e = 0; e < num_experts; ++e) {
      const Scalar pc = conditional(e);
      lr(e) = std::log(std::max(pc, tiny) / std::max(marginal(e), tiny));
      if (pc > 0) mi += p_dom * pc * lr(e);
    }
    log_ratio.emplace(dom, std::move(lr));
  }
  if (d_probs) {
    d_probs->assign(probs.size(), RowVector<Scalar>());
    for (std::size_t x = 0; x < probs.size(); ++x) (*d_probs)[x] = log_ratio.at(domain_labels[x]) / n;
  }
  return mi;
}

template <typename Scalar>
Scalar mutual_information_loss(const std::vector<std::vector<RowVector<Scalar>>>& probs,
                               std::span<const std::size_t> domain_labels, double lambda,
                               std::vector<std::vector<RowVector<Scalar>>>* d_probs) {
  if (probs.empty()) throw DataError("mutual information loss needs a non-empty batch");
  const std::size_t num_blocks = probs.front().size();
  if (num_blocks == 0) throw ConfigError("mutual information loss needs at least one routed block");
  if (d_probs) d_probs->assign(probs.size(), std::vector<RowVector<Scalar>>(num_blocks));
  const auto scale = -static_cast<Scalar>(lambda) / static_cast<Scalar>(num_blocks);
  Scalar loss = 0;
  std::vector<RowVector<Scalar>> column(probs.size());
  std::vector<RowVector<Scalar>> grad;
  for (std::size_t b = 0; b < num_blocks; ++b) {
    for (std::size_t x = 0; x < probs.size(); ++x) column[x] = probs[x].at(b);
    loss += scale * mutual_information<Scalar>(column, domain_labels, d_probs ? &grad : nullptr);
    if (d_probs) {
      for (std::size_t x = 0; x < probs.size(); ++x) (*d_probs)[x][b] = scale * grad[x];
    }
  }
  return loss;
}

#define COCITE_INSTANTIATE_MOE(S)                                                                                 \
  template Matrix<S> swiglu_forward(const ExpertMlp<S>&, const Matrix<S>&, Activation, SwigluCache<S>*);       \
  template Matrix<S> swiglu_backward(const ExpertMlp<S>&, Activation, const SwigluCache<S>&, const Matrix<S>&, \
                                     ExpertMlp<S>&);                                                            \
  template std::vector<std::size_t> top_k_indices<S>(const Eigen::Ref<const RowVector<S>>&, std::size_t);      \
  template RowVector<S> softmax<S>(const Eigen::Ref<const RowVector<S>>&);                                     \
  template Matrix<S> routing_input(const Matrix<S>&, std::span<const std::uint8_t>, RoutingGranularity);       \
  template RoutingRecord<S> route(const Matrix<S>&, std::span<const std::uint8_t>, const Router<S>&,            \
                                  const MoeConfig&, std::optional<std::string_view>);                           \
  template Matrix<S> moe_forward(const MoeLayer<S>&, const MoeConfig&, Activation, const Matrix<S>&,            \
                                 std::span<const std::uint8_t>, std::optional<std::string_view>, std::size_t,   \
                                 MoeCache<S>&);                                                                 \
  template Matrix<S> moe_backward(const MoeLayer<S>&, const MoeConfig&, Activation, const MoeCache<S>&,         \
                                  const Matrix<S>&, const Matrix<S>*, MoeLayer<S>&);                            \
  template S router_ce_loss(std::span<const RoutingRecord<S>>, std::size_t, std::vector<Matrix<S>>*);          \
  template RowVector<S> routing_probabilities(const RoutingRecord<S>&);                                        \
  template Matrix<S> routing_probabilities_backward(const RoutingRecord<S>&, const RowVector<S>&);             \
  template S mutual_information(std::span<const RowVector<S>>, std::span<const std::size_t>,                    \
                                std::vector<RowVector<S>>*);                                                    \
  template S mutual_information_loss(const std::vector<std::vector<RowVector<S>>>&, std::span<const std::size_t>, \
                                     double, std::vector<std::vector<RowVector<S>>>*);

COCITE_INSTANTIATE_MOE(float)
COCITE_INSTANTIATE_MOE(double)

}  // namespace cocite
