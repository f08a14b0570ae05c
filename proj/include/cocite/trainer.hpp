// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cocite/encoder.hpp"
#include "cocite/evaluation.hpp"
#include "cocite/pipeline.hpp"

namespace cocite {

enum class Scheduler { OneCycle, Cosine };

/// How training batches are drawn. `Auto` keeps each batch within one domain
/// unless the routing strategy needs several domains per batch (mutual
/// information is zero inside a single-domain batch).
enum class BatchMode { Auto, SingleDomain, Mixed };

std::string to_string(Scheduler s);
Scheduler parse_scheduler(const std::string& s);
std::string to_string(BatchMode m);
BatchMode parse_batch_mode(const std::string& s);

struct TrainConfig {
  std::size_t batch_size = 20;
  double learning_rate = 1e-5;
  Scheduler scheduler = Scheduler::OneCycle;
  std::size_t warmup_steps = 500;
  std::size_t max_epochs = 10;
  std::size_t validate_every = 5000;
  std::size_t patience = 3;
  double router_ce_weight = 1.0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  BatchMode batch_mode = BatchMode::Auto;
  std::size_t log_every = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Linear ramp 0 -> learning_rate over warmup, then half-cosine down to 0 at
/// total_steps. Both schedulers share this shape.
double lr_schedule(std::size_t step, const TrainConfig& cfg, std::size_t total_steps);

/// Counts consecutive validations without strict improvement and reports a
/// stop once that count exceeds the patience.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Returns true when `metric` is a new best.
  bool update(double metric, std::size_t step);
  bool should_stop() const { return bad_ > patience_; }
  std::optional<double> best() const { return best_; }
  std::size_t best_step() const { return best_step_; }
  std::size_t bad_validations() const { return bad_; }

 private:
  std::size_t patience_;
  std::size_t bad_ = 0;
  std::optional<double> best_;
  std::size_t best_step_ = 0;
};

struct TrainBatch {
  std::vector<std::string> left;
  std::vector<std::string> right;
  std::vector<std::string> domains;
  std::vector<std::size_t> weights;

  std::size_t size() const { return left.size(); }
  void validate() const;
};

/// Decoupled-weight-decay Adam with per-tensor step counts. A tensor whose
/// gradient is exactly zero is left untouched, including its decay, so
/// experts that received no input keep their values bit for bit.
template <typename Scalar>
class AdamW {
 public:
  AdamW(const Model<Scalar>& model, const TrainConfig& cfg);

  void step(Model<Scalar>& model, const EncoderWeights<Scalar>& grad, Scalar grad_log_temperature, double lr);

 private:
  TrainConfig cfg_;
  EncoderWeights<Scalar> m_, v_;
  std::vector<std::size_t> steps_;
  Scalar temp_m_ = 0, temp_v_ = 0;
  std::size_t temp_steps_ = 0;
};

struct StepLosses {
  double total = 0;
  double mnr = 0;
  double router = 0;  // router CE or the (negative, weighted) MI term
  bool swapped = false;
  double grad_norm = 0;
};

/// Gradients of one batch without updating the model.
template <typename Scalar>
struct BatchGradients {
  StepLosses losses;
  EncoderWeights<Scalar> weights;
  Scalar log_temperature = 0;
};

/// Forward and backward for one batch. `swap` exchanges the left and right
/// roles before encoding.
template <typename Scalar>
BatchGradients<Scalar> batch_gradients(const Model<Scalar>& model, const TrainBatch& batch, const TrainConfig& cfg,
                                       bool swap);

/// Draws the left/right swap, computes gradients, clips them to the global
/// norm `cfg.grad_clip` and applies one optimizer update at rate `lr`.
template <typename Scalar>
StepLosses train_step(Model<Scalar>& model, AdamW<Scalar>& optimizer, const TrainBatch& batch,
                      const TrainConfig& cfg, double lr, Rng& rng);

struct TrainingData {
  std::vector<LabeledPair> train;
  std::vector<LabeledPair> valid;
  PaperIndex papers;
};

/// Batches of one epoch. Incomplete trailing batches are dropped.
std::vector<TrainBatch> make_batches(const TrainingData& data, const TrainConfig& cfg, bool mixed,
                                     std::size_t epoch);

template <typename Scalar>
struct TrainResult {
  Model<Scalar> best;
  std::vector<nlohmann::json> history;
  std::size_t steps = 0;
  std::size_t best_step = 0;
  double best_f1max = 0;
  bool early_stopped = false;
};

using HistorySink = std::function<void(const nlohmann::json&)>;

/// Trains for up to `max_epochs`, validating every `validate_every` steps and
/// after the final step; the validation metric is the mean per-domain F1max.
/// `start_step` resumes the step counter (and the batch position within the
/// epoch) of an earlier run.
template <typename Scalar>
TrainResult<Scalar> training_loop(Model<Scalar> model, const TrainingData& data, const TrainConfig& cfg,
                                  std::size_t start_step = 0, const HistorySink& sink = {});

}  // namespace cocite
