// SPDX-License-Identifier: Apache-2.0
#include "cocite/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "cocite/contrastive.hpp"

namespace cocite {

std::string to_string(Scheduler s) { return s == Scheduler::OneCycle ? "one_cycle" : "cosine"; }

Scheduler parse_scheduler(const std::string& s) {
  if (s == "one_cycle") return Scheduler::OneCycle;
  if (s == "cosine") return Scheduler::Cosine;
  throw ConfigError("unknown scheduler '" + s + "' (expected one_cycle or cosine)");
}

std::string to_string(BatchMode m) {
  switch (m) {
    case BatchMode::Auto: return "auto";
    case BatchMode::SingleDomain: return "single_domain";
    case BatchMode::Mixed: return "mixed";
  }
  return "auto";
}

BatchMode parse_batch_mode(const std::string& s) {
  if (s == "auto") return BatchMode::Auto;
  if (s == "single_domain") return BatchMode::SingleDomain;
  if (s == "mixed") return BatchMode::Mixed;
  throw ConfigError("unknown batch mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 for in-batch negatives");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (validate_every < 1) throw ConfigError("validate_every must be at least 1");
  if (log_every < 1) throw ConfigError("log_every must be at least 1");
  if (weight_decay < 0 || router_ce_weight < 0) throw ConfigError("loss and decay weights must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
  if (!(grad_clip > 0)) throw ConfigError("grad_clip must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"scheduler", to_string(c.scheduler)},
                     {"warmup_steps", c.warmup_steps},
                     {"max_epochs", c.max_epochs},
                     {"validate_every", c.validate_every},
                     {"patience", c.patience},
                     {"router_ce_weight", c.router_ce_weight},
                     {"weight_decay", c.weight_decay},
                     {"betas", {c.beta1, c.beta2}},
                     {"adam_eps", c.adam_eps},
                     {"grad_clip", c.grad_clip},
                     {"batch_mode", to_string(c.batch_mode)},
                     {"log_every", c.log_every},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.scheduler = parse_scheduler(j.value("scheduler", to_string(d.scheduler)));
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.validate_every = j.value("validate_every", d.validate_every);
  c.patience = j.value("patience", d.patience);
  c.router_ce_weight = j.value("router_ce_weight", d.router_ce_weight);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  if (j.contains("betas")) {
    const auto& b = j.at("betas");
    if (!b.is_array() || b.size() != 2) throw ConfigError("betas must be a two-element array");
    c.beta1 = b[0].get<double>();
    c.beta2 = b[1].get<double>();
  } else {
    c.beta1 = d.beta1;
    c.beta2 = d.beta2;
  }
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.batch_mode = parse_batch_mode(j.value("batch_mode", to_string(d.batch_mode)));
  c.log_every = j.value("log_every", d.log_every);
  c.seed = j.value("seed", d.seed);
}

double lr_schedule(std::size_t step, const TrainConfig& cfg, std::size_t total_steps) {
  if (total_steps < cfg.warmup_steps) throw ConfigError("total_steps is smaller than warmup_steps");
  if (step > total_steps) throw ConfigError("step is beyond total_steps");
  const double peak = cfg.learning_rate;
  if (step < cfg.warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  if (total_steps == cfg.warmup_steps) return peak;
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(total_steps - cfg.warmup_steps);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

bool EarlyStopping::update(double metric, std::size_t step) {
  if (!best_ || metric > *best_) {
    best_ = metric;
    best_step_ = step;
    bad_ = 0;
    return true;
  }
  ++bad_;
  return false;
}

void TrainBatch::validate() const {
  if (left.size() != right.size() || left.size() != domains.size())
    throw ShapeError("batch left, right and domain lists differ in length");
  if (!weights.empty() && weights.size() != left.size()) throw ShapeError("batch weights differ in length");
  if (left.size() < 2) throw ConfigError("a batch needs at least 2 pairs");
}

namespace {

bool decays(const std::string& name) {
  for (const char* suffix : {".bias", ".beta", ".gamma", ".b1", ".b2", ".b3"}) {
    if (name.ends_with(suffix)) return false;
  }
  return true;
}

template <typename Scalar>
void adam_update(Matrix<Scalar>& p, const Matrix<Scalar>& g, Matrix<Scalar>& m, Matrix<Scalar>& v, std::size_t t,
                 double lr, double decay, const TrainConfig& cfg) {
  const auto b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
  m = b1 * m + (Scalar(1) - b1) * g;
  v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
  if (decay > 0) p *= static_cast<Scalar>(1.0 - lr * decay);
  const auto eps = static_cast<Scalar>(cfg.adam_eps);
  p.array() -= static_cast<Scalar>(lr) * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

}  // namespace

template <typename Scalar>
AdamW<Scalar>::AdamW(const Model<Scalar>& model, const TrainConfig& cfg)
    : cfg_(cfg), m_(model.weights.zeros_like()), v_(model.weights.zeros_like()) {
  std::size_t n = 0;
  for_each_parameter([&](const std::string&, const Matrix<Scalar>&) { ++n; }, model.weights);
  steps_.assign(n, 0);
}

template <typename Scalar>
void AdamW<Scalar>::step(Model<Scalar>& model, const EncoderWeights<Scalar>& grad, Scalar grad_log_temperature,
                         double lr) {
  std::size_t index = 0;
  for_each_parameter(
      [&](const std::string& name, Matrix<Scalar>& p, const Matrix<Scalar>& g, Matrix<Scalar>& m,
          Matrix<Scalar>& v) {
        auto& t = steps_.at(index++);
        if ((g.array() == Scalar(0)).all()) return;
        ++t;
        adam_update(p, g, m, v, t, lr, decays(name) ? cfg_.weight_decay : 0.0, cfg_);
      },
      model.weights, grad, m_, v_);
  if (grad_log_temperature != Scalar(0)) {
    ++temp_steps_;
    Matrix<Scalar> p(1, 1), g(1, 1), m(1, 1), v(1, 1);
    p(0, 0) = model.temperature.log_value;
    g(0, 0) = grad_log_temperature;
    m(0, 0) = temp_m_;
    v(0, 0) = temp_v_;
    adam_update(p, g, m, v, temp_steps_, lr, 0.0, cfg_);
    model.temperature.log_value = p(0, 0);
    temp_m_ = m(0, 0);
    temp_v_ = v(0, 0);
  }
}

template <typename Scalar>
BatchGradients<Scalar> batch_gradients(const Model<Scalar>& model, const TrainBatch& batch, const TrainConfig& cfg,
                                       bool swap) {
  batch.validate();
  const auto* moe = model.moe ? &*model.moe : nullptr;
  const bool needs_domain_token = model.domain_tokens || (moe && moe->strategy != RoutingStrategy::MutualInformation);
  for (const auto& d : batch.domains) {
    if (needs_domain_token && !model.vocab.domain_token_id(d))
      throw ConfigError("domain token for '" + d + "' is missing from the vocabulary");
  }

  const std::size_t b = batch.size();
  const auto d = static_cast<Eigen::Index>(model.config.hidden_dim);
  const auto& left_texts = swap ? batch.right : batch.left;
  const auto& right_texts = swap ? batch.left : batch.right;

  // Passes 0..B-1 encode the left side, B..2B-1 the right side.
  std::vector<EncoderPass<Scalar>> passes;
  passes.reserve(2 * b);
  Matrix<Scalar> left(b, d), right(b, d);
  for (std::size_t x = 0; x < 2 * b; ++x) {
    const std::size_t i = x % b;
    const auto& text = x < b ? left_texts[i] : right_texts[i];
    const std::string& domain = batch.domains[i];
    const auto seq = model.tokenize(text, domain).trimmed();
    passes.push_back(encoder_forward(model, seq, domain));
    auto& target = x < b ? left : right;
    target.row(static_cast<Eigen::Index>(i)) = pool(model.weights, passes.back().hidden.last());
  }

  const auto mnr = mnr_loss(left, right, model.temperature);
  BatchGradients<Scalar> out;
  out.losses.swapped = swap;
  out.losses.mnr = static_cast<double>(mnr.loss);
  out.log_temperature = mnr.d_log_temperature;

  std::vector<std::vector<Matrix<Scalar>>> d_logits(2 * b);
  if (moe && moe->strategy == RoutingStrategy::RouterCrossEntropy && !moe->extended_layers.empty()) {
    const Scalar scale = static_cast<Scalar>(cfg.router_ce_weight / static_cast<double>(2 * b));
    double total = 0;
    for (std::size_t x = 0; x < 2 * b; ++x) {
      const auto records = passes[x].routing();
      const auto expert = moe->expert_for(batch.domains[x % b]);
      total += static_cast<double>(router_ce_loss<Scalar>(records, expert, &d_logits[x]));
      for (auto& g : d_logits[x]) g *= scale;
    }
    out.losses.router = cfg.router_ce_weight * total / static_cast<double>(2 * b);
  } else if (moe && moe->strategy == RoutingStrategy::MutualInformation && !moe->extended_layers.empty()) {
    std::vector<std::string> names(batch.domains.begin(), batch.domains.end());
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    std::vector<std::vector<RoutingRecord<Scalar>>> records(2 * b);
    std::vector<std::vector<RowVector<Scalar>>> probs(2 * b);
    std::vector<std::size_t> labels(2 * b);
    for (std::size_t x = 0; x < 2 * b; ++x) {
      records[x] = passes[x].routing();
      for (const auto& r : records[x]) probs[x].push_back(routing_probabilities(r));
      const auto& dom = batch.domains[x % b];
      labels[x] = static_cast<std::size_t>(std::lower_bound(names.begin(), names.end(), dom) - names.begin());
    }
    std::vector<std::vector<RowVector<Scalar>>> d_probs;
    out.losses.router =
        static_cast<double>(mutual_information_loss(probs, labels, moe->mi_loss_weight, &d_probs));
    for (std::size_t x = 0; x < 2 * b; ++x) {
      for (std::size_t k = 0; k < records[x].size(); ++k)
        d_logits[x].push_back(routing_probabilities_backward(records[x][k], d_probs[x][k]));
    }
  }
  out.losses.total = out.losses.mnr + out.losses.router;

  out.weights = model.weights.zeros_like();
  for (std::size_t x = 0; x < 2 * b; ++x) {
    const auto i = static_cast<Eigen::Index>(x % b);
    const RowVector<Scalar> pooled = x < b ? left.row(i) : right.row(i);
    const RowVector<Scalar> d_pooled = x < b ? mnr.d_left.row(i) : mnr.d_right.row(i);
    const auto& last = passes[x].hidden.last();
    const Matrix<Scalar> d_last = pool_backward(model.weights, last, pooled, d_pooled, out.weights);
    encoder_backward(model.config, model.weights, moe, passes[x], d_last,
                     std::span<const Matrix<Scalar>>(d_logits[x]), out.weights);
  }
  return out;
}

template <typename Scalar>
StepLosses train_step(Model<Scalar>& model, AdamW<Scalar>& optimizer, const TrainBatch& batch,
                      const TrainConfig& cfg, double lr, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  const bool swap = coin(rng);
  auto grads = batch_gradients(model, batch, cfg, swap);
  if (!std::isfinite(grads.losses.total)) throw std::runtime_error("training loss became non-finite");

  double sq = static_cast<double>(grads.log_temperature) * static_cast<double>(grads.log_temperature);
  for_each_parameter([&](const std::string&, const Matrix<Scalar>& g) { sq += static_cast<double>(g.squaredNorm()); },
                     grads.weights);
  const double norm = std::sqrt(sq);
  grads.losses.grad_norm = norm;
  if (norm > cfg.grad_clip) {
    const auto scale = static_cast<Scalar>(cfg.grad_clip / (norm + 1e-6));
    for_each_parameter([&](const std::string&, Matrix<Scalar>& g) { g *= scale; }, grads.weights);
    grads.log_temperature *= scale;
  }
  optimizer.step(model, grads.weights, grads.log_temperature, lr);
  return grads.losses;
}

std::vector<TrainBatch> make_batches(const TrainingData& data, const TrainConfig& cfg, bool mixed,
                                     std::size_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x62617463u};
  Rng rng(seq);
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < data.train.size(); ++i) groups[mixed ? std::string() : data.train[i].domain].push_back(i);

  auto text = [&](const std::string& id) -> const std::string& {
    auto it = data.papers.find(id);
    if (it == data.papers.end()) throw DataError("no abstract for training paper '" + id + "'");
    return it->second.abstract;
  };

  std::vector<TrainBatch> batches;
  for (auto& [key, idx] : groups) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t start = 0; start + cfg.batch_size <= idx.size(); start += cfg.batch_size) {
      TrainBatch batch;
      for (std::size_t k = start; k < start + cfg.batch_size; ++k) {
        const auto& p = data.train[idx[k]];
        batch.left.push_back(text(p.id_a));
        batch.right.push_back(text(p.id_b));
        batch.domains.push_back(p.domain);
        batch.weights.push_back(p.weight);
      }
      batches.push_back(std::move(batch));
    }
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

template <typename Scalar>
TrainResult<Scalar> training_loop(Model<Scalar> model, const TrainingData& data, const TrainConfig& cfg,
                                  std::size_t start_step, const HistorySink& sink) {
  cfg.validate();
  model.validate();
  if (data.train.empty()) throw DataError("training split is empty");
  if (data.valid.empty()) throw DataError("validation split is empty");

  const bool mixed = cfg.batch_mode == BatchMode::Mixed ||
                     (cfg.batch_mode == BatchMode::Auto && model.moe &&
                      model.moe->strategy == RoutingStrategy::MutualInformation);
  const std::size_t per_epoch = make_batches(data, cfg, mixed, 0).size();
  if (per_epoch == 0) throw DataError("training split holds fewer pairs than one batch");
  const std::size_t total = per_epoch * cfg.max_epochs;
  TrainConfig schedule = cfg;
  schedule.warmup_steps = std::min(cfg.warmup_steps, total);

  TrainResult<Scalar> result{model, {}, start_step, start_step, 0.0, false};
  auto emit = [&](nlohmann::json record) {
    if (sink) sink(record);
    result.history.push_back(std::move(record));
  };
  emit({{"step", start_step},
        {"split", "config"},
        {"train_config", cfg},
        {"total_steps", total},
        {"steps_per_epoch", per_epoch},
        {"effective_warmup_steps", schedule.warmup_steps},
        {"batch_mode", mixed ? "mixed" : "single_domain"},
        {"optimizer", "adamw"}});

  AdamW<Scalar> optimizer(model, cfg);
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(start_step), 0x73776170u};
  Rng rng(seq);
  EarlyStopping stopper(cfg.patience);
  std::size_t step = start_step;
  std::optional<std::size_t> last_validated;

  auto validate = [&] {
    const auto report = evaluate_model(model, data.valid, data.papers, EvalMode::Validation);
    const double f1 = report.mean_domain_f1max();
    const bool improved = stopper.update(f1, step);
    if (improved) {
      result.best = model;
      result.best_step = step;
      result.best_f1max = f1;
    }
    nlohmann::json per_domain = nlohmann::json::object();
    for (const auto& [dom, m] : report.per_domain) per_domain[dom] = m.f1max.value_or(0.0);
    emit({{"step", step},
          {"split", "valid"},
          {"f1max", f1},
          {"per_domain", per_domain},
          {"improved", improved},
          {"bad_validations", stopper.bad_validations()}});
    last_validated = step;
  };

  for (std::size_t epoch = start_step / per_epoch; epoch < cfg.max_epochs && !result.early_stopped; ++epoch) {
    const auto batches = make_batches(data, cfg, mixed, epoch);
    for (std::size_t b = step - epoch * per_epoch; b < per_epoch; ++b) {
      const double lr = lr_schedule(step + 1, schedule, total);
      const auto losses = train_step(model, optimizer, batches[b], cfg, lr, rng);
      ++step;
      if (step % cfg.log_every == 0 || step == total) {
        emit({{"step", step},
              {"split", "train"},
              {"epoch", epoch},
              {"loss", losses.total},
              {"mnr", losses.mnr},
              {"router", losses.router},
              {"lr", lr},
              {"temperature", static_cast<double>(model.temperature.value())},
              {"grad_norm", losses.grad_norm}});
      }
      if (step % cfg.validate_every == 0) {
        validate();
        if (stopper.should_stop()) {
          result.early_stopped = true;
          break;
        }
      }
    }
  }
  if (!result.early_stopped && last_validated != step) validate();

  result.steps = step;
  emit({{"step", step},
        {"split", "event"},
        {"event", result.early_stopped ? "early_stop" : "completed"},
        {"best_step", result.best_step},
        {"best_f1max", result.best_f1max}});
  return result;
}

#define COCITE_INSTANTIATE(S)                                                                                   \
  template class AdamW<S>;                                                                                      \
  template BatchGradients<S> batch_gradients(const Model<S>&, const TrainBatch&, const TrainConfig&, bool);     \
  template StepLosses train_step(Model<S>&, AdamW<S>&, const TrainBatch&, const TrainConfig&, double, Rng&);   \
  template TrainResult<S> training_loop(Model<S>, const TrainingData&, const TrainConfig&, std::size_t,         \
                                        const HistorySink&);

COCITE_INSTANTIATE(float)
COCITE_INSTANTIATE(double)
#undef COCITE_INSTANTIATE

}  // namespace cocite
