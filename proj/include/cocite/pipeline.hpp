// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cocite/tensor.hpp"

namespace cocite {

struct PaperRecord {
  std::string id;
  std::string abstract;
  std::string domain;
  int year = 0;
  std::vector<std::string> references;
  std::uint64_t citation_count = 0;
};

void to_json(nlohmann::json& j, const PaperRecord& r);
void from_json(const nlohmann::json& j, PaperRecord& r);

/// Unordered pair of paper ids stored as (smaller, larger).
using PairKey = std::pair<std::string, std::string>;
PairKey make_pair_key(const std::string& a, const std::string& b);

/// Pair -> number of distinct citing papers that list both.
using CoCitations = std::map<PairKey, std::size_t>;

struct CitationGraph {
  std::map<std::string, PaperRecord> records;

  const PaperRecord& at(const std::string& id) const;
  bool contains(const std::string& id) const { return records.count(id) > 0; }
  std::vector<std::string> domains() const;
};

struct IngestReport {
  std::size_t lines = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t unknown_references = 0;
  std::vector<std::string> rejections;  // "line N: reason"
};

struct IngestResult {
  CitationGraph graph;
  IngestReport report;
};

/// Reads line-delimited JSON records. Records without an abstract or with
/// malformed fields are rejected and reported; a repeated id is a hard error.
IngestResult ingest(std::istream& in);
IngestResult ingest_file(const std::filesystem::path& path);

/// Every unordered pair of known ids in one citing paper's reference list adds
/// one to that pair's multiplicity.
CoCitations extract_cocitations(const CitationGraph& graph);

/// Keeps only pairs whose two papers both belong to `domain`.
CoCitations restrict_to_domain(const CoCitations& cocitations, const CitationGraph& graph, const std::string& domain);

struct NegativeOptions {
  std::uint64_t min_citations = 15;
  /// When set, both papers must come from this domain.
  std::optional<std::string> domain;
};

/// Exactly `count` distinct never-co-cited pairs drawn uniformly from papers
/// with at least `min_citations` citations.
std::vector<PairKey> sample_negatives(const CitationGraph& graph, const CoCitations& cocitations, std::size_t count,
                                      const NegativeOptions& options, Rng& rng);

enum class Split { Train, Valid, Test };
std::string to_string(Split s);

struct LabeledPair {
  std::string id_a;
  std::string id_b;
  int label = 1;
  std::size_t weight = 1;
  std::string domain;
};

void to_json(nlohmann::json& j, const LabeledPair& p);
void from_json(const nlohmann::json& j, LabeledPair& p);

struct PairDataset {
  std::vector<LabeledPair> train;  // materialized: a pair of multiplicity k appears k times
  std::vector<LabeledPair> valid;  // positives followed by the same number of negatives
  std::vector<LabeledPair> test;   // positives only
};

struct SplitOptions {
  int recent_year = 2022;
  double valid_fraction = 0.01;
  std::uint64_t min_citations = 15;
  bool same_domain_negatives = true;
};

/// Size of the validation share of `n` distinct pairs: max(1, round(fraction * n)).
std::size_t valid_count(std::size_t n, double fraction);

/// Splits one domain's co-citations. Pairs with a paper from `recent_year`
/// form TEST; the rest is shuffled and divided into TRAIN and VALID; VALID
/// receives as many sampled negatives as it has positives. Negatives avoid
/// every pair in `all_cocitations` (defaults to `cocitations`).
PairDataset build_splits(const CoCitations& cocitations, const CitationGraph& graph, const SplitOptions& options,
                         const std::string& domain, Rng& rng, const CoCitations* all_cocitations = nullptr);

struct DatasetStats {
  std::size_t papers = 0;
  std::size_t distinct_pairs = 0;
  std::size_t cross_domain_pairs = 0;
  std::map<std::size_t, std::size_t> multiplicity_histogram;
  std::map<std::string, std::map<std::string, std::size_t>> per_domain;  // domain -> counter -> value
};

void to_json(nlohmann::json& j, const DatasetStats& s);

struct BuiltDataset {
  PairDataset pairs;
  DatasetStats stats;
};

/// Runs the split builder per domain (sorted by name) and concatenates.
BuiltDataset build_dataset(const CitationGraph& graph, const SplitOptions& options, std::uint64_t seed);

/// Writes pairs.train, pairs.valid, pairs.test, stats.json and papers.jsonl.
void write_dataset(const BuiltDataset& data, const CitationGraph& graph, const std::filesystem::path& dir);

std::vector<LabeledPair> read_pairs(const std::filesystem::path& path);
void write_pairs(const std::vector<LabeledPair>& pairs, const std::filesystem::path& path);

/// id -> record for papers.jsonl style files (or the original records file).
std::map<std::string, PaperRecord> read_papers(const std::filesystem::path& path);

}  // namespace cocite
