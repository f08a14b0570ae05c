// SPDX-License-Identifier: Apache-2.0
#include "cocite/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace cocite {

void to_json(nlohmann::json& j, const ScoredPair& p) {
  j = nlohmann::json{{"id_a", p.id_a},
                     {"id_b", p.id_b},
                     {"similarity", p.similarity},
                     {"label", p.label},
                     {"domain", p.domain}};
}

double cosine_similarity(const Eigen::Ref<const Eigen::RowVectorXd>& u, const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  if (u.size() != v.size()) throw ShapeError("cosine similarity of vectors with different lengths");
  const double nu = u.norm(), nv = v.norm();
  if (nu == 0.0 || nv == 0.0) throw DataError("cosine similarity is undefined for a zero vector");
  return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

namespace {

double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

}  // namespace

double f1_at(std::span<const ScoredPair> scored, double threshold) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& p : scored) {
    const bool predicted = p.similarity >= threshold;
    if (predicted && p.label == 1) ++tp;
    if (predicted && p.label == 0) ++fp;
    if (!predicted && p.label == 1) ++fn;
  }
  return f1_from_counts(tp, fp, fn);
}

F1Search f1max_search(std::span<const ScoredPair> scored, ThresholdRange range) {
  if (scored.empty()) throw DataError("F1max search over an empty pair set");
  if (!(range.lo <= range.hi)) throw ConfigError("threshold range has lo > hi");

  std::vector<std::pair<double, int>> items;
  items.reserve(scored.size());
  std::size_t total_pos = 0;
  for (const auto& p : scored) {
    items.emplace_back(p.similarity, p.label);
    total_pos += p.label == 1 ? 1 : 0;
  }
  F1Search best;
  best.undefined = total_pos == 0;
  best.cutoff = range.lo;
  if (best.undefined) return best;

  // Sweep thresholds from high to low. Everything >= threshold is positive.
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::size_t tp = 0, fp = 0, i = 0;
  auto consume_at_least = [&](double threshold) {
    while (i < items.size() && items[i].first >= threshold) {
      (items[i].second == 1 ? tp : fp)++;
      ++i;
    }
  };
  auto consider = [&](double threshold) {
    const double f1 = f1_from_counts(tp, fp, total_pos - tp);
    // Thresholds arrive in decreasing order, so ">=" keeps the smallest one.
    if (f1 >= best.f1max) {
      best.f1max = f1;
      best.cutoff = threshold;
    }
  };
  best.f1max = -1.0;
  // Similarities above the range count as positive at every candidate.
  while (i < items.size() && items[i].first > range.hi) {
    (items[i].second == 1 ? tp : fp)++;
    ++i;
  }
  while (i < items.size() && items[i].first >= range.lo) {
    const double threshold = items[i].first;
    consume_at_least(threshold);
    consider(threshold);
  }
  consume_at_least(range.lo);
  consider(range.lo);
  return best;
}

DistanceAccuracy distance_and_accuracy(std::span<const ScoredPair> scored, double cutoff) {
  if (scored.empty()) return {};
  double distance = 0.0;
  std::size_t correct = 0;
  for (const auto& p : scored) {
    distance += std::abs(p.similarity - static_cast<double>(p.label));
    const int predicted = p.similarity >= cutoff ? 1 : 0;
    correct += predicted == p.label ? 1 : 0;
  }
  const auto n = static_cast<double>(scored.size());
  return {distance / n, static_cast<double>(correct) / n};
}

std::string to_string(EvalMode m) { return m == EvalMode::Validation ? "validation" : "test"; }

EvalMode parse_eval_mode(const std::string& s) {
  if (s == "validation" || s == "valid") return EvalMode::Validation;
  if (s == "test") return EvalMode::Test;
  throw ConfigError("unknown evaluation mode '" + s + "'");
}

namespace {

SplitMetrics metrics_for(std::span<const ScoredPair> scored, EvalMode mode) {
  SplitMetrics m;
  m.range = mode == EvalMode::Validation ? ThresholdRange{-1.0, 1.0} : ThresholdRange{0.5, 1.0};
  for (const auto& p : scored) (p.label == 1 ? m.positives : m.negatives)++;
  const auto search = f1max_search(scored, m.range);
  m.undefined = search.undefined;
  m.cutoff = search.cutoff;
  if (mode == EvalMode::Validation) m.f1max = search.f1max;
  const auto da = distance_and_accuracy(scored, m.cutoff);
  m.accuracy = da.accuracy;
  m.mean_distance = da.mean_distance;
  return m;
}


}  // namespace

void to_json(nlohmann::json& j, const SplitMetrics& m) {
  j = nlohmann::json{{"cutoff", m.cutoff},
                     {"accuracy", m.accuracy},
                     {"mean_distance", m.mean_distance},
                     {"threshold_range", {m.range.lo, m.range.hi}},
                     {"positives", m.positives},
                     {"negatives", m.negatives},
                     {"undefined", m.undefined}};
  if (m.f1max) j["f1max"] = *m.f1max;
}

double EvalReport::mean_domain_f1max() const {
  if (per_domain.empty()) return overall.f1max.value_or(0.0);
  double total = 0;
  for (const auto& [d, m] : per_domain) total += m.f1max.value_or(0.0);
  return total / static_cast<double>(per_domain.size());
}

std::string EvalReport::table(const std::string& model_name) const {
  std::ostringstream out;
  const bool valid = mode == EvalMode::Validation;
  out << std::left << std::setw(20) << "Model" << std::setw(12) << "Domain" << std::right << std::setw(8) << "Cutoff";
  if (valid) out << std::setw(8) << "F1Max";
  out << std::setw(8) << "Dist" << std::setw(8) << "Acc" << '\n';
  auto row = [&](const std::string& domain, const SplitMetrics& m) {
    out << std::left << std::setw(20) << model_name << std::setw(12) << domain << std::right << std::fixed
        << std::setprecision(2) << std::setw(8) << m.cutoff;
    if (valid) out << std::setw(8) << m.f1max.value_or(0.0);
    out << std::setw(8) << m.mean_distance << std::setw(8) << m.accuracy << '\n';
  };
  for (const auto& [d, m] : per_domain) row(d, m);
  row("all", overall);
  return out.str();
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  nlohmann::json domains = nlohmann::json::object();
  for (const auto& [d, m] : r.per_domain) domains[d] = m;
  j = nlohmann::json{{"mode", to_string(r.mode)}, {"overall", r.overall}, {"per_domain", domains}};
  if (r.mode == EvalMode::Validation) j["mean_domain_f1max"] = r.mean_domain_f1max();
}

EvalReport evaluate_scored(std::span<const ScoredPair> scored, EvalMode mode) {
  if (scored.empty()) throw DataError("cannot evaluate an empty split");
  EvalReport report;
  report.mode = mode;
  report.overall = metrics_for(scored, mode);
  std::map<std::string, std::vector<ScoredPair>> by_domain;
  for (const auto& p : scored) by_domain[p.domain].push_back(p);
  for (const auto& [d, pairs] : by_domain) report.per_domain.emplace(d, metrics_for(pairs, mode));
  return report;
}

template <typename Scalar>
std::vector<ScoredPair> score_pairs(const Model<Scalar>& model, std::span<const LabeledPair> pairs,
                                    const PaperIndex& papers) {
  std::map<std::pair<std::string, std::string>, Eigen::RowVectorXd> cache;
  auto embedding = [&](const std::string& id, const std::string& domain) -> const Eigen::RowVectorXd& {
    auto key = std::make_pair(id, domain);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto paper = papers.find(id);
    if (paper == papers.end()) throw DataError("no abstract for paper '" + id + "'");
    if (!model.vocab.domain_token_id(domain)) throw ConfigError("domain '" + domain + "' is not registered");
    auto vec = embed(model, paper->second.abstract, domain).template cast<double>().eval();
    return cache.emplace(std::move(key), std::move(vec)).first->second;
  };
  std::vector<ScoredPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    const double sim = cosine_similarity(embedding(p.id_a, p.domain), embedding(p.id_b, p.domain));
    out.push_back({p.id_a, p.id_b, sim, p.label, p.domain});
  }
  return out;
}

template std::vector<ScoredPair> score_pairs(const Model<float>&, std::span<const LabeledPair>, const PaperIndex&);
template std::vector<ScoredPair> score_pairs(const Model<double>&, std::span<const LabeledPair>, const PaperIndex&);

TfidfModel::TfidfModel(const PaperIndex& corpus, const Vocabulary& vocab) {
  std::map<std::string, std::map<TokenId, double>> counts;
  std::map<TokenId, std::size_t> df;
  for (const auto& [id, paper] : corpus) {
    auto& c = counts[id];
    for (const auto& w : split_words(paper.abstract)) {
      const auto token = vocab.find(w);
      if (!token || vocab.is_special(*token)) continue;
      c[*token] += 1.0;
    }
    for (const auto& [token, n] : c) ++df[token];
  }
  const auto n_docs = static_cast<double>(corpus.size());
  for (const auto& [token, f] : df) idf_[token] = std::log((1.0 + n_docs) / (1.0 + static_cast<double>(f))) + 1.0;
  for (auto& [id, c] : counts) {
    for (auto& [token, tf] : c) tf *= idf_.at(token);
    vectors_.emplace(id, std::move(c));
  }
}

const std::map<TokenId, double>& TfidfModel::vector(const std::string& id) const {
  auto it = vectors_.find(id);
  if (it == vectors_.end()) throw DataError("paper '" + id + "' is not in the TF-IDF corpus");
  if (it->second.empty()) throw DataError("paper '" + id + "' has no in-vocabulary tokens");
  return it->second;
}

double TfidfModel::idf(TokenId token) const {
  auto it = idf_.find(token);
  return it == idf_.end() ? 0.0 : it->second;
}

double TfidfModel::similarity(const std::string& a, const std::string& b) const {
  const auto& u = vector(a);
  const auto& v = vector(b);
  double dot = 0, nu = 0, nv = 0;
  for (const auto& [t, w] : u) {
    nu += w * w;
    auto it = v.find(t);
    if (it != v.end()) dot += w * it->second;
  }
  for (const auto& [t, w] : v) nv += w * w;
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

std::vector<ScoredPair> tfidf_baseline(const PaperIndex& corpus, std::span<const LabeledPair> pairs,
                                       const Vocabulary& vocab) {
  const TfidfModel model(corpus, vocab);
  std::vector<ScoredPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p.id_a, p.id_b, model.similarity(p.id_a, p.id_b), p.label, p.domain});
  return out;
}

Vocabulary corpus_vocabulary(const PaperIndex& corpus) {
  std::vector<std::string> texts;
  std::vector<std::string> domains;
  for (const auto& [id, p] : corpus) {
    texts.push_back(p.abstract);
    if (std::find(domains.begin(), domains.end(), p.domain) == domains.end()) domains.push_back(p.domain);
  }
  std::sort(domains.begin(), domains.end());
  return Vocabulary::build(texts, domains, std::numeric_limits<std::size_t>::max());
}

}  // namespace cocite
