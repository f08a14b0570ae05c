// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cocite/encoder.hpp"
#include "cocite/pipeline.hpp"
#include "cocite/vocabulary.hpp"

namespace cocite {

struct ScoredPair {
  std::string id_a;
  std::string id_b;
  double similarity = 0;
  int label = 0;
  std::string domain;
};

void to_json(nlohmann::json& j, const ScoredPair& p);

/// u.v / (|u| |v|). Throws on a zero vector or mismatched lengths.
double cosine_similarity(const Eigen::Ref<const Eigen::RowVectorXd>& u, const Eigen::Ref<const Eigen::RowVectorXd>& v);

struct ThresholdRange {
  double lo = -1.0;
  double hi = 1.0;
};

struct F1Search {
  double f1max = 0;
  double cutoff = 0;
  /// Set when the scored pairs contain no positives, so F1 is undefined.
  bool undefined = false;
};

/// F1 for "similarity >= threshold -> similar"; 0 when nothing is a true positive.
double f1_at(std::span<const ScoredPair> scored, double threshold);

/// Maximum F1 over the candidate thresholds (observed similarities inside the
/// range plus the lower endpoint); the smallest maximizing threshold is returned.
F1Search f1max_search(std::span<const ScoredPair> scored, ThresholdRange range);

struct DistanceAccuracy {
  double mean_distance = 0;
  double accuracy = 0;
};

DistanceAccuracy distance_and_accuracy(std::span<const ScoredPair> scored, double cutoff);

enum class EvalMode { Validation, Test };
std::string to_string(EvalMode m);
EvalMode parse_eval_mode(const std::string& s);

struct SplitMetrics {
  std::optional<double> f1max;  // withheld in TEST mode
  double cutoff = 0;
  double accuracy = 0;
  double mean_distance = 0;
  ThresholdRange range;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  bool undefined = false;
};

void to_json(nlohmann::json& j, const SplitMetrics& m);

struct EvalReport {
  EvalMode mode = EvalMode::Validation;
  SplitMetrics overall;
  std::map<std::string, SplitMetrics> per_domain;

  /// Mean of the per-domain F1max values (validation mode only).
  double mean_domain_f1max() const;
  /// Rows in "Cutoff F1Max Dist Acc" column order.
  std::string table(const std::string& model_name) const;
};

void to_json(nlohmann::json& j, const EvalReport& r);

/// VALIDATION searches [-1, 1]; TEST searches [0.5, 1] and withholds F1max.
/// Metrics are computed per domain and over all pairs.
EvalReport evaluate_scored(std::span<const ScoredPair> scored, EvalMode mode);

using PaperIndex = std::map<std::string, PaperRecord>;

/// Embeds each distinct (paper, domain) once and scores every pair by cosine.
template <typename Scalar>
std::vector<ScoredPair> score_pairs(const Model<Scalar>& model, std::span<const LabeledPair> pairs,
                                    const PaperIndex& papers);

template <typename Scalar>
EvalReport evaluate_model(const Model<Scalar>& model, std::span<const LabeledPair> pairs, const PaperIndex& papers,
                          EvalMode mode) {
  const auto scored = score_pairs(model, pairs, papers);
  return evaluate_scored(scored, mode);
}

/// Term-frequency / inverse-document-frequency vectors with smoothed idf
/// ln((1 + N) / (1 + df)) + 1 and raw term counts. Tokens come from the
/// encoder tokenizer; special and unknown tokens are dropped.
class TfidfModel {
 public:
  TfidfModel(const PaperIndex& corpus, const Vocabulary& vocab);

  /// Sparse tf-idf vector of a corpus document (token id -> weight).
  const std::map<TokenId, double>& vector(const std::string& id) const;
  double similarity(const std::string& a, const std::string& b) const;
  double idf(TokenId token) const;

 private:
  std::map<std::string, std::map<TokenId, double>> vectors_;
  std::map<TokenId, double> idf_;
};

std::vector<ScoredPair> tfidf_baseline(const PaperIndex& corpus, std::span<const LabeledPair> pairs,
                                       const Vocabulary& vocab);

/// Vocabulary holding every word of the corpus, used when no encoder is given.
Vocabulary corpus_vocabulary(const PaperIndex& corpus);

}  // namespace cocite
