// SPDX-License-Identifier: Apache-2.0
#include "cocite/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace cocite {

SyntheticOptions SyntheticOptions::two_domain_ring() {
  SyntheticOptions o;
  o.num_groups = 4;
  o.hubs_per_group = 10;
  o.mirror_hubs = true;
  o.domains = {{"cvd", {{0, 1}, {2, 3}}}, {"copd", {{1, 2}, {3, 0}}}};
  return o;
}

void SyntheticOptions::validate() const {
  if (domains.empty()) throw ConfigError("synthetic corpus needs at least one domain");
  if (topic_words_per_paper > words_per_group) throw ConfigError("topic_words_per_paper exceeds words_per_group");
  if (filler_vocabulary == 0 && filler_words_per_paper > 0) throw ConfigError("filler vocabulary is empty");
  if (hub_references == 0) throw ConfigError("hub_references must be positive");
  for (const auto& d : domains) {
    if (d.clusters.empty()) throw ConfigError("domain '" + d.name + "' has no clusters");
    std::size_t hubs = 0;
    for (const auto& c : d.clusters) {
      if (c.empty()) throw ConfigError("domain '" + d.name + "' has an empty cluster");
      for (auto g : c) {
        if (g >= num_groups) throw ConfigError("topic group out of range in domain '" + d.name + "'");
      }
      hubs += c.size() * hubs_per_group;
      if (c.size() * hubs_per_group < hub_references)
        throw ConfigError("a cluster has fewer hubs than hub_references");
    }
    if (hubs >= papers_per_domain) throw ConfigError("papers_per_domain leaves no citing papers");
  }
}

namespace {

/// Distinct pronounceable pseudo-words.
std::vector<std::string> make_words(std::size_t count, Rng& rng, std::set<std::string>& used) {
  static const char* onsets[] = {"b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
                                 "br", "cl", "dr", "gr", "pl", "st", "tr", "ph", "th", "ch"};
  static const char* vowels[] = {"a", "e", "i", "o", "u", "ae", "io", "ou", "y"};
  std::uniform_int_distribution<std::size_t> on(0, std::size(onsets) - 1), vo(0, std::size(vowels) - 1),
      syl(2, 4);
  std::vector<std::string> out;
  while (out.size() < count) {
    std::string w;
    const auto n = syl(rng);
    for (std::size_t i = 0; i < n; ++i) w += std::string(onsets[on(rng)]) + vowels[vo(rng)];
    if (used.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace

SyntheticCorpus generate_corpus(const SyntheticOptions& o) {
  o.validate();
  Rng rng(o.seed);
  std::set<std::string> used;
  std::vector<std::vector<std::string>> topic(o.num_groups);
  for (auto& g : topic) g = make_words(o.words_per_group, rng, used);
  const auto filler = make_words(o.filler_vocabulary, rng, used);
  std::vector<double> zipf(filler.size());
  for (std::size_t i = 0; i < zipf.size(); ++i) zipf[i] = 1.0 / std::pow(static_cast<double>(i + 1), o.filler_zipf_exponent);
  std::discrete_distribution<std::size_t> filler_pick(zipf.begin(), zipf.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto abstract = [&](std::size_t group) {
    std::vector<std::string> words;
    for (auto i : sample_distinct(o.words_per_group, o.topic_words_per_paper, rng)) words.push_back(topic[group][i]);
    for (std::size_t i = 0; i < o.filler_words_per_paper; ++i) words.push_back(filler[filler_pick(rng)]);
    std::shuffle(words.begin(), words.end(), rng);
    std::string text;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) text += ' ';
      text += words[i];
    }
    if (!text.empty()) {
      text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
      text += '.';
    }
    return text;
  };

  SyntheticCorpus corpus;
  std::map<std::pair<std::size_t, std::size_t>, std::string> hub_text;  // (group, index) -> abstract
  for (const auto& domain : o.domains) {
    const std::size_t base = corpus.papers.size();
    auto new_paper = [&](std::size_t cluster, std::size_t group, bool hub, std::size_t hub_index = 0) {
      SyntheticPaper p;
      char id[64];
      std::snprintf(id, sizeof id, "%s-%05zu", domain.name.c_str(), corpus.papers.size() - base);
      p.record.id = id;
      p.record.domain = domain.name;
      if (hub && o.mirror_hubs) {
        auto [it, fresh] = hub_text.try_emplace({group, hub_index});
        if (fresh) it->second = abstract(group);
        p.record.abstract = it->second;
      } else {
        p.record.abstract = abstract(group);
      }
      if (hub) {
        p.record.year = std::uniform_int_distribution<int>(o.recent_year - 14, o.recent_year - 6)(rng);
      } else if (unit(rng) < o.recent_fraction) {
        p.record.year = o.recent_year;
      } else {
        p.record.year = std::uniform_int_distribution<int>(o.recent_year - 10, o.recent_year - 1)(rng);
      }
      p.cluster = cluster;
      p.group = group;
      p.hub = hub;
      corpus.papers.push_back(std::move(p));
    };

    std::vector<std::vector<std::size_t>> hubs(domain.clusters.size()), others(domain.clusters.size());
    for (std::size_t c = 0; c < domain.clusters.size(); ++c) {
      for (auto g : domain.clusters[c]) {
        for (std::size_t h = 0; h < o.hubs_per_group; ++h) {
          hubs[c].push_back(corpus.papers.size());
          new_paper(c, g, true, h);
        }
      }
    }
    const std::size_t hub_total = corpus.papers.size() - base;
    for (std::size_t i = 0; i < o.papers_per_domain - hub_total; ++i) {
      const std::size_t c = i % domain.clusters.size();
      const auto& groups = domain.clusters[c];
      const std::size_t g = groups[(i / domain.clusters.size()) % groups.size()];
      others[c].push_back(corpus.papers.size());
      new_paper(c, g, false);
    }

    for (std::size_t c = 0; c < domain.clusters.size(); ++c) {
      for (std::size_t pos = 0; pos < others[c].size(); ++pos) {
        const auto citing = others[c][pos];
        auto& refs = corpus.papers[citing].record.references;
        for (auto k : sample_distinct(hubs[c].size(), o.hub_references, rng)) refs.push_back(corpus.papers[hubs[c][k]].record.id);
        const std::size_t pool = others[c].size() - 1;
        for (auto k : sample_distinct(pool, std::min(o.other_references, pool), rng)) {
          // Skip the citing paper itself by shifting indices past it.
          const auto target = others[c][k >= pos ? k + 1 : k];
          refs.push_back(corpus.papers[target].record.id);
        }
      }
    }
  }

  std::map<std::string, std::uint64_t> counts;
  for (const auto& p : corpus.papers)
    for (const auto& r : p.record.references) ++counts[r];
  for (auto& p : corpus.papers) p.record.citation_count = counts[p.record.id];
  return corpus;
}

CitationGraph SyntheticCorpus::graph() const {
  CitationGraph g;
  for (const auto& p : papers) g.records.emplace(p.record.id, p.record);
  return g;
}

std::vector<PaperRecord> SyntheticCorpus::records() const {
  std::vector<PaperRecord> out;
  out.reserve(papers.size());
  for (const auto& p : papers) out.push_back(p.record);
  return out;
}

void write_records(const std::vector<PaperRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records) out << nlohmann::json(r).dump() << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace cocite
