// SPDX-License-Identifier: Apache-2.0
#include "cocite/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace cocite {

void to_json(nlohmann::json& j, const PaperRecord& r) {
  j = nlohmann::json{{"id", r.id},     {"abstract", r.abstract},     {"domain", r.domain},
                     {"year", r.year}, {"references", r.references}, {"citation_count", r.citation_count}};
}

void from_json(const nlohmann::json& j, PaperRecord& r) {
  r.id = j.at("id").get<std::string>();
  r.abstract = j.value("abstract", std::string());
  r.domain = j.at("domain").get<std::string>();
  r.year = j.at("year").get<int>();
  r.references = j.value("references", std::vector<std::string>{});
  r.citation_count = j.value("citation_count", std::uint64_t{0});
}

PairKey make_pair_key(const std::string& a, const std::string& b) { return a < b ? PairKey{a, b} : PairKey{b, a}; }

const PaperRecord& CitationGraph::at(const std::string& id) const {
  auto it = records.find(id);
  if (it == records.end()) throw DataError("unknown paper id '" + id + "'");
  return it->second;
}

std::vector<std::string> CitationGraph::domains() const {
  std::set<std::string> out;
  for (const auto& [id, r] : records) out.insert(r.domain);
  return {out.begin(), out.end()};
}

IngestResult ingest(std::istream& in) {
  IngestResult result;
  auto& report = result.report;
  std::string line;
  while (std::getline(in, line)) {
    ++report.lines;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      --report.lines;
      continue;
    }
    PaperRecord r;
    try {
      r = nlohmann::json::parse(line).get<PaperRecord>();
    } catch (const nlohmann::json::exception& e) {
      ++report.rejected;
      report.rejections.push_back("line " + std::to_string(report.lines) + ": malformed record (" + e.what() + ")");
      continue;
    }
    if (r.abstract.find_first_not_of(" \t\r\n") == std::string::npos) {
      ++report.rejected;
      report.rejections.push_back("line " + std::to_string(report.lines) + ": record '" + r.id + "' has no abstract");
      continue;
    }
    if (r.id.empty() || r.domain.empty()) {
      ++report.rejected;
      report.rejections.push_back("line " + std::to_string(report.lines) + ": empty id or domain");
      continue;
    }
    if (result.graph.contains(r.id)) throw DataError("duplicate paper id '" + r.id + "'");
    result.graph.records.emplace(r.id, std::move(r));
    ++report.accepted;
  }
  for (const auto& [id, r] : result.graph.records) {
    for (const auto& ref : r.references) {
      if (!result.graph.contains(ref)) ++report.unknown_references;
    }
  }
  return result;
}

IngestResult ingest_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  return ingest(in);
}

CoCitations extract_cocitations(const CitationGraph& graph) {
  CoCitations out;
  for (const auto& [id, record] : graph.records) {
    std::set<std::string> refs;
    for (const auto& ref : record.references) {
      if (ref != id && graph.contains(ref)) refs.insert(ref);
    }
    for (auto a = refs.begin(); a != refs.end(); ++a) {
      for (auto b = std::next(a); b != refs.end(); ++b) ++out[PairKey{*a, *b}];
    }
  }
  return out;
}

CoCitations restrict_to_domain(const CoCitations& cocitations, const CitationGraph& graph, const std::string& domain) {
  CoCitations out;
  for (const auto& [key, count] : cocitations) {
    if (graph.at(key.first).domain == domain && graph.at(key.second).domain == domain) out.emplace(key, count);
  }
  return out;
}

std::vector<PairKey> sample_negatives(const CitationGraph& graph, const CoCitations& cocitations, std::size_t count,
                                      const NegativeOptions& options, Rng& rng) {
  std::vector<std::string> eligible;
  for (const auto& [id, r] : graph.records) {
    if (r.citation_count < options.min_citations) continue;
    if (options.domain && r.domain != *options.domain) continue;
    eligible.push_back(id);
  }
  const std::uint64_t n = eligible.size();
  std::uint64_t cocited_eligible = 0;
  const std::set<std::string> eligible_set(eligible.begin(), eligible.end());
  for (const auto& [key, c] : cocitations) {
    if (eligible_set.count(key.first) && eligible_set.count(key.second)) ++cocited_eligible;
  }
  const std::uint64_t pool = n * (n - (n > 0 ? 1 : 0)) / 2 - cocited_eligible;
  if (count > pool) {
    throw DataError("requested " + std::to_string(count) + " negative pairs but only " + std::to_string(pool) +
                    " eligible never-co-cited pairs exist (min_citations=" + std::to_string(options.min_citations) +
                    ")");
  }
  std::vector<PairKey> out;
  out.reserve(count);
  constexpr std::uint64_t kEnumerateLimit = 2'000'000;
  if (n * (n - (n > 0 ? 1 : 0)) / 2 <= kEnumerateLimit) {
    std::vector<PairKey> candidates;
    for (std::size_t i = 0; i < eligible.size(); ++i) {
      for (std::size_t j = i + 1; j < eligible.size(); ++j) {
        PairKey key{eligible[i], eligible[j]};
        if (!cocitations.count(key)) candidates.push_back(std::move(key));
      }
    }
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
      std::swap(candidates[i], candidates[pick(rng)]);
      out.push_back(candidates[i]);
    }
    return out;
  }
  std::set<PairKey> chosen;
  std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
  while (out.size() < count) {
    const auto i = pick(rng), j = pick(rng);
    if (i == j) continue;
    auto key = make_pair_key(eligible[i], eligible[j]);
    if (cocitations.count(key) || chosen.count(key)) continue;
    chosen.insert(key);
    out.push_back(std::move(key));
  }
  return out;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "unknown";
}

void to_json(nlohmann::json& j, const LabeledPair& p) {
  j = nlohmann::json{{"id_a", p.id_a}, {"id_b", p.id_b}, {"label", p.label}, {"weight", p.weight}, {"domain", p.domain}};
}

void from_json(const nlohmann::json& j, LabeledPair& p) {
  p.id_a = j.at("id_a").get<std::string>();
  p.id_b = j.at("id_b").get<std::string>();
  p.label = j.at("label").get<int>();
  p.weight = j.value("weight", std::size_t{1});
  p.domain = j.at("domain").get<std::string>();
  if (p.label != 0 && p.label != 1) throw DataError("pair label must be 0 or 1");
}

std::size_t valid_count(std::size_t n, double fraction) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
}

PairDataset build_splits(const CoCitations& cocitations, const CitationGraph& graph, const SplitOptions& options,
                         const std::string& domain, Rng& rng, const CoCitations* all_cocitations) {
  if (cocitations.empty()) throw DataError("domain '" + domain + "' has no co-citation pairs");
  if (!(options.valid_fraction > 0.0 && options.valid_fraction < 1.0)) {
    throw ConfigError("valid_fraction must lie in (0, 1)");
  }
  PairDataset out;
  std::vector<std::pair<PairKey, std::size_t>> rest;
  for (const auto& [key, count] : cocitations) {
    const bool recent =
        graph.at(key.first).year == options.recent_year || graph.at(key.second).year == options.recent_year;
    if (recent) {
      out.test.push_back({key.first, key.second, 1, count, domain});
    } else {
      rest.emplace_back(key, count);
    }
  }
  const std::size_t n_valid = valid_count(rest.size(), options.valid_fraction);
  if (rest.size() <= n_valid) {
    throw DataError("domain '" + domain + "': no pairs left for training after removing test pairs");
  }
  for (std::size_t i = 0; i + 1 < rest.size(); ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, rest.size() - 1);
    std::swap(rest[i], rest[pick(rng)]);
  }
  std::sort(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_valid));
  std::sort(rest.begin() + static_cast<std::ptrdiff_t>(n_valid), rest.end());
  for (std::size_t i = 0; i < n_valid; ++i) out.valid.push_back({rest[i].first.first, rest[i].first.second, 1, 1, domain});
  NegativeOptions neg;
  neg.min_citations = options.min_citations;
  if (options.same_domain_negatives) neg.domain = domain;
  for (auto& key : sample_negatives(graph, all_cocitations ? *all_cocitations : cocitations, n_valid, neg, rng)) {
    out.valid.push_back({key.first, key.second, 0, 1, domain});
  }
  for (std::size_t i = n_valid; i < rest.size(); ++i) {
    const auto& [key, count] = rest[i];
    for (std::size_t c = 0; c < count; ++c) out.train.push_back({key.first, key.second, 1, count, domain});
  }
  return out;
}

void to_json(nlohmann::json& j, const DatasetStats& s) {
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [k, v] : s.multiplicity_histogram) hist[std::to_string(k)] = v;
  j = nlohmann::json{{"papers", s.papers},
                     {"distinct_pairs", s.distinct_pairs},
                     {"cross_domain_pairs", s.cross_domain_pairs},
                     {"multiplicity_histogram", hist},
                     {"per_domain", s.per_domain}};
}

BuiltDataset build_dataset(const CitationGraph& graph, const SplitOptions& options, std::uint64_t seed) {
  if (graph.records.empty()) throw DataError("no valid records");
  BuiltDataset out;
  const auto all = extract_cocitations(graph);
  out.stats.papers = graph.records.size();
  Rng rng(seed);
  std::size_t within = 0;
  for (const auto& domain : graph.domains()) {
    const auto pairs = restrict_to_domain(all, graph, domain);
    if (pairs.empty()) continue;
    within += pairs.size();
    auto split = build_splits(pairs, graph, options, domain, rng, &all);
    auto& counters = out.stats.per_domain[domain];
    counters["distinct_pairs"] = pairs.size();
    counters["test"] = split.test.size();
    counters["train_materialized"] = split.train.size();
    counters["valid_positive"] = split.valid.size() / 2;
    counters["valid_negative"] = split.valid.size() / 2;
    std::set<PairKey> distinct_train;
    for (const auto& p : split.train) distinct_train.insert({p.id_a, p.id_b});
    counters["train_distinct"] = distinct_train.size();
    for (const auto& [key, count] : pairs) ++out.stats.multiplicity_histogram[count];
    auto append = [](auto& dst, auto& src) { dst.insert(dst.end(), src.begin(), src.end()); };
    append(out.pairs.train, split.train);
    append(out.pairs.valid, split.valid);
    append(out.pairs.test, split.test);
  }
  if (within == 0) throw DataError("no co-citation pairs within any domain");
  out.stats.distinct_pairs = within;
  out.stats.cross_domain_pairs = all.size() - within;
  return out;
}

void write_pairs(const std::vector<LabeledPair>& pairs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& p : pairs) out << nlohmann::json(p).dump() << '\n';
}

void write_dataset(const BuiltDataset& data, const CitationGraph& graph, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_pairs(data.pairs.train, dir / "pairs.train");
  write_pairs(data.pairs.valid, dir / "pairs.valid");
  write_pairs(data.pairs.test, dir / "pairs.test");
  std::ofstream stats(dir / "stats.json", std::ios::trunc);
  stats << nlohmann::json(data.stats).dump(2) << '\n';
  std::ofstream papers(dir / "papers.jsonl", std::ios::trunc);
  for (const auto& [id, r] : graph.records) papers << nlohmann::json(r).dump() << '\n';
  if (!stats || !papers) throw DataError("failed writing dataset files to " + dir.string());
}

std::vector<LabeledPair> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<LabeledPair> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<LabeledPair>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

std::map<std::string, PaperRecord> read_papers(const std::filesystem::path& path) {
  auto result = ingest_file(path);
  return std::move(result.graph.records);
}

}  // namespace cocite
