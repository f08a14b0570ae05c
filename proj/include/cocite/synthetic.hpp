// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cocite/pipeline.hpp"

namespace cocite {

/// A domain's clusters, each listed as the topic groups it draws from. Papers
/// of one cluster only cite papers of the same cluster.
struct SyntheticDomain {
  std::string name;
  std::vector<std::vector<std::size_t>> clusters;
};

struct SyntheticOptions {
  std::vector<SyntheticDomain> domains;
  std::size_t papers_per_domain = 1000;
  std::size_t num_groups = 6;
  std::size_t words_per_group = 80;
  std::size_t topic_words_per_paper = 8;
  std::size_t filler_vocabulary = 1500;
  std::size_t filler_words_per_paper = 16;
  double filler_zipf_exponent = 1.0;
  /// Heavily cited papers per topic group; only these reach the citation
  /// floor for negative sampling.
  std::size_t hubs_per_group = 6;
  std::size_t hub_references = 3;
  std::size_t other_references = 2;
  /// Hubs of later domains reuse the abstracts of the first domain's hubs
  /// with the same topic group, so text alone cannot tell them apart.
  bool mirror_hubs = false;
  int recent_year = 2022;
  double recent_fraction = 0.1;
  std::uint64_t seed = 7;

  /// Two domains over four shared topic groups arranged in a ring. "cvd"
  /// clusters groups (0,1) and (2,3), "copd" clusters (1,2) and (3,0), so a
  /// group pair that is similar in one domain is dissimilar in the other.
  /// Hubs are mirrored across the two domains.
  static SyntheticOptions two_domain_ring();

  void validate() const;
};

struct SyntheticPaper {
  PaperRecord record;
  std::size_t cluster = 0;
  std::size_t group = 0;
  bool hub = false;
};

struct SyntheticCorpus {
  std::vector<SyntheticPaper> papers;

  CitationGraph graph() const;
  std::vector<PaperRecord> records() const;
};

SyntheticCorpus generate_corpus(const SyntheticOptions& options);

void write_records(const std::vector<PaperRecord>& records, const std::filesystem::path& path);

}  // namespace cocite
