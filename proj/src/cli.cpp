// SPDX-License-Identifier: Apache-2.0
#include "cocite/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cocite/evaluation.hpp"
#include "cocite/extension.hpp"
#include "cocite/model_io.hpp"
#include "cocite/pipeline.hpp"
#include "cocite/synthetic.hpp"
#include "cocite/trainer.hpp"

namespace cocite {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file " + path + " must hold a JSON object");
  return j;
}

json section(const json& cfg, const char* name) {
  if (!cfg.contains(name)) return json::object();
  if (!cfg.at(name).is_object()) throw ConfigError(std::string("config section '") + name + "' must be an object");
  return cfg.at(name);
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Snapshot beside a file output: <file>.resolved_config.json.
fs::path snapshot_for_file(const fs::path& file) { return fs::path(file.string() + ".resolved_config.json"); }

fs::path data_dir_or(const std::string& given, const char* what) {
  if (!given.empty()) return given;
  if (const char* env = std::getenv(kDataDirEnv); env && *env) return env;
  throw ConfigError(std::string(what) + " not given and " + kDataDirEnv + " is unset");
}

template <typename T>
void overlay(json& j, const char* key, const CLI::Option* opt, const T& value) {
  if (opt->count() > 0) j[key] = value;
}

std::size_t parse_count(const json& j, const char* key, std::size_t fallback) {
  return j.contains(key) ? j.at(key).get<std::size_t>() : fallback;
}

// --- generate-corpus -------------------------------------------------------

struct GenerateArgs {
  std::string config, out;
  std::size_t papers_per_domain = 0;
  std::uint64_t seed = 0;
};

int cmd_generate(const GenerateArgs& a, const CLI::App& sub, std::ostream& out) {
  auto j = section(read_config(a.config), "corpus");
  overlay(j, "papers_per_domain", sub.get_option("--papers-per-domain"), a.papers_per_domain);
  overlay(j, "seed", sub.get_option("--seed"), a.seed);
  auto o = SyntheticOptions::two_domain_ring();
  o.papers_per_domain = parse_count(j, "papers_per_domain", o.papers_per_domain);
  o.words_per_group = parse_count(j, "words_per_group", o.words_per_group);
  o.topic_words_per_paper = parse_count(j, "topic_words_per_paper", o.topic_words_per_paper);
  o.filler_words_per_paper = parse_count(j, "filler_words_per_paper", o.filler_words_per_paper);
  o.hubs_per_group = parse_count(j, "hubs_per_group", o.hubs_per_group);
  o.mirror_hubs = j.value("mirror_hubs", o.mirror_hubs);
  o.seed = j.value("seed", o.seed);
  const auto corpus = generate_corpus(o);
  write_records(corpus.records(), a.out);
  write_json(snapshot_for_file(a.out), {{"command", "generate-corpus"},
                                        {"out", a.out},
                                        {"corpus",
                                         {{"papers_per_domain", o.papers_per_domain},
                                          {"words_per_group", o.words_per_group},
                                          {"topic_words_per_paper", o.topic_words_per_paper},
                                          {"filler_words_per_paper", o.filler_words_per_paper},
                                          {"hubs_per_group", o.hubs_per_group},
                                          {"mirror_hubs", o.mirror_hubs},
                                          {"seed", o.seed}}}});
  out << "wrote " << corpus.papers.size() << " records to " << a.out << '\n';
  return kExitOk;
}

// --- build-dataset ---------------------------------------------------------

struct BuildArgs {
  std::string config, records, out;
  int recent_year = 0;
  double valid_fraction = 0;
  std::uint64_t min_citations = 0;
  std::uint64_t seed = 0;
  bool cross_domain_negatives = false;
};

int cmd_build(const BuildArgs& a, const CLI::App& sub, std::ostream& out) {
  const auto cfg = read_config(a.config);
  auto j = section(cfg, "split");
  overlay(j, "recent_year", sub.get_option("--recent-year"), a.recent_year);
  overlay(j, "valid_fraction", sub.get_option("--valid-fraction"), a.valid_fraction);
  overlay(j, "min_citations", sub.get_option("--min-citations"), a.min_citations);
  if (a.cross_domain_negatives) j["same_domain_negatives"] = false;
  SplitOptions o;
  o.recent_year = j.value("recent_year", o.recent_year);
  o.valid_fraction = j.value("valid_fraction", o.valid_fraction);
  o.min_citations = j.value("min_citations", o.min_citations);
  o.same_domain_negatives = j.value("same_domain_negatives", o.same_domain_negatives);
  if (!(o.valid_fraction > 0 && o.valid_fraction < 1)) throw ConfigError("valid_fraction must lie in (0, 1)");
  const std::uint64_t seed = sub.get_option("--seed")->count() ? a.seed : cfg.value("seed", std::uint64_t{0});
  const fs::path dir = data_dir_or(a.out, "--out");

  const auto ingested = ingest_file(a.records);
  const auto built = build_dataset(ingested.graph, o, seed);
  write_dataset(built, ingested.graph, dir);
  const auto& r = ingested.report;
  write_json(dir / "ingest_report.json", {{"lines", r.lines},
                                          {"accepted", r.accepted},
                                          {"rejected", r.rejected},
                                          {"unknown_references", r.unknown_references},
                                          {"rejections", r.rejections}});
  write_json(dir / "resolved_config.json", {{"command", "build-dataset"},
                                            {"records", a.records},
                                            {"out", dir.string()},
                                            {"seed", seed},
                                            {"split",
                                             {{"recent_year", o.recent_year},
                                              {"valid_fraction", o.valid_fraction},
                                              {"min_citations", o.min_citations},
                                              {"same_domain_negatives", o.same_domain_negatives}}}});
  out << "records accepted " << r.accepted << ", rejected " << r.rejected << '\n'
      << "pairs train " << built.pairs.train.size() << ", valid " << built.pairs.valid.size() << ", test "
      << built.pairs.test.size() << '\n';
  return kExitOk;
}

// --- extend ----------------------------------------------------------------

struct ExtendArgs {
  std::string config, base, out, granularity, strategy, layers;
  std::size_t experts = 0, top_k = 0;
  double mi_weight = 0;
  std::vector<std::string> domain_experts;
  bool no_domain_tokens = false;
  std::uint64_t seed = 0;
};

std::set<std::size_t> parse_layers(const std::string& spec, std::size_t num_blocks) {
  std::set<std::size_t> layers;
  if (spec == "all") {
    for (std::size_t i = 0; i < num_blocks; ++i) layers.insert(i);
  } else if (spec == "middle") {
    layers.insert(middle_block(num_blocks));
  } else {
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        layers.insert(static_cast<std::size_t>(std::stoul(item)));
      } catch (const std::exception&) {
        throw ConfigError("bad layer list '" + spec + "' (expected all, middle or e.g. 0,2)");
      }
    }
  }
  return layers;
}

int cmd_extend(const ExtendArgs& a, const CLI::App& sub, std::ostream& out) {
  const auto cfg = read_config(a.config);
  auto j = section(cfg, "moe");
  overlay(j, "num_experts", sub.get_option("--experts"), a.experts);
  overlay(j, "top_k", sub.get_option("--top-k"), a.top_k);
  overlay(j, "granularity", sub.get_option("--granularity"), a.granularity);
  overlay(j, "strategy", sub.get_option("--strategy"), a.strategy);
  overlay(j, "mi_loss_weight", sub.get_option("--mi-weight"), a.mi_weight);

  const auto base = load_model<float>(a.base);
  if (sub.get_option("--layers")->count() > 0 || !j.contains("extended_layers")) {
    j["extended_layers"] = parse_layers(a.layers, base.config.num_blocks);
  }
  if (!a.domain_experts.empty()) {
    json map = json::object();
    for (const auto& item : a.domain_experts) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw ConfigError("--domain-expert expects domain=index, got '" + item + "'");
      try {
        map[item.substr(0, eq)] = std::stoul(item.substr(eq + 1));
      } catch (const std::exception&) {
        throw ConfigError("--domain-expert expects domain=index, got '" + item + "'");
      }
    }
    j["domain_experts"] = map;
  }
  MoeConfig moe = j.get<MoeConfig>();
  if (moe.domain_experts.empty() && moe.strategy != RoutingStrategy::MutualInformation) {
    // Default map: vocabulary domains in sorted order, assigned round robin.
    std::size_t i = 0;
    for (const auto& d : base.vocab.domains()) moe.domain_experts[d] = i++ % std::max<std::size_t>(moe.num_experts, 1);
  }
  const std::uint64_t seed = sub.get_option("--seed")->count() ? a.seed : cfg.value("seed", std::uint64_t{0});
  const auto extended = extend_model(base, moe, seed, !a.no_domain_tokens);
  const json training = {{"extended_from", a.base}, {"extension_seed", seed}};
  save_model(extended, a.out, training);

  const auto before = count_parameters(base);
  const auto after = count_parameters(extended);
  write_json(snapshot_for_file(a.out), {{"command", "extend"},
                                        {"base", a.base},
                                        {"out", a.out},
                                        {"seed", seed},
                                        {"domain_tokens", extended.domain_tokens},
                                        {"moe", moe}});
  out << "stored parameters " << before.stored << " -> " << after.stored << '\n'
      << "active parameters " << before.active << " -> " << after.active << '\n'
      << "extended blocks " << moe.extended_layers.size() << " of " << base.config.num_blocks << '\n';
  return kExitOk;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config, data_dir, out, checkpoint;
  bool resume = false, domain_tokens = false, verbose = false;
  std::size_t batch_size = 0, warmup = 0, epochs = 0, validate_every = 0, patience = 0, log_every = 0;
  double lr = 0, router_ce_weight = 0;
  std::string scheduler, batch_mode;
  std::uint64_t seed = 0;
  std::size_t hidden_dim = 0, intermediate_dim = 0, blocks = 0, heads = 0, max_seq_len = 0, max_vocab = 0;
};

void check_domains(const Model<float>& model, const std::vector<LabeledPair>& pairs) {
  std::set<std::string> domains;
  for (const auto& p : pairs) domains.insert(p.domain);
  for (const auto& d : domains) {
    const bool needs_token = model.domain_tokens || model.moe.has_value();
    if (needs_token && !model.vocab.domain_token_id(d))
      throw ConfigError("dataset domain '" + d + "' has no domain token in the model vocabulary");
    if (model.moe && model.moe->strategy != RoutingStrategy::MutualInformation && !model.moe->domain_experts.count(d))
      throw ConfigError("dataset domain '" + d + "' is not mapped to an expert");
  }
}

int cmd_train(const TrainArgs& a, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  const auto cfg = read_config(a.config);
  auto tj = section(cfg, "train");
  overlay(tj, "batch_size", sub.get_option("--batch-size"), a.batch_size);
  overlay(tj, "learning_rate", sub.get_option("--lr"), a.lr);
  overlay(tj, "scheduler", sub.get_option("--scheduler"), a.scheduler);
  overlay(tj, "warmup_steps", sub.get_option("--warmup"), a.warmup);
  overlay(tj, "max_epochs", sub.get_option("--epochs"), a.epochs);
  overlay(tj, "validate_every", sub.get_option("--validate-every"), a.validate_every);
  overlay(tj, "patience", sub.get_option("--patience"), a.patience);
  overlay(tj, "router_ce_weight", sub.get_option("--router-ce-weight"), a.router_ce_weight);
  overlay(tj, "batch_mode", sub.get_option("--batch-mode"), a.batch_mode);
  overlay(tj, "log_every", sub.get_option("--log-every"), a.log_every);
  if (sub.get_option("--seed")->count()) {
    tj["seed"] = a.seed;
  } else if (!tj.contains("seed") && cfg.contains("seed")) {
    tj["seed"] = cfg.at("seed");
  }
  const auto train_cfg = tj.get<TrainConfig>();
  train_cfg.validate();

  const fs::path data_dir = data_dir_or(a.data_dir, "--data-dir");
  TrainingData data;
  data.train = read_pairs(data_dir / "pairs.train");
  data.valid = read_pairs(data_dir / "pairs.valid");
  data.papers = read_papers(data_dir / "papers.jsonl");

  Model<float> model;
  std::size_t start_step = 0;
  json model_source;
  if (!a.checkpoint.empty()) {
    const auto file = NamedTensorFile::load(a.checkpoint);
    model = from_checkpoint<float>(file);
    if (a.resume) {
      const auto& training = file.metadata.value("training", json::object());
      start_step = training.value("step", std::size_t{0});
    }
    model_source = {{"checkpoint", a.checkpoint}, {"resume", a.resume}, {"start_step", start_step}};
  } else {
    if (a.resume) throw ConfigError("--resume needs --checkpoint");
    auto mj = section(cfg, "model");
    overlay(mj, "hidden_dim", sub.get_option("--hidden-dim"), a.hidden_dim);
    overlay(mj, "intermediate_dim", sub.get_option("--intermediate-dim"), a.intermediate_dim);
    overlay(mj, "num_blocks", sub.get_option("--blocks"), a.blocks);
    overlay(mj, "num_heads", sub.get_option("--heads"), a.heads);
    overlay(mj, "max_seq_len", sub.get_option("--max-seq-len"), a.max_seq_len);
    mj["vocab_size"] = 0;
    auto model_cfg = mj.get<ModelConfig>();
    std::vector<std::string> texts;
    std::set<std::string> domain_set;
    for (const auto& [id, p] : data.papers) {
      texts.push_back(p.abstract);
      domain_set.insert(p.domain);
    }
    const std::vector<std::string> domains(domain_set.begin(), domain_set.end());
    const std::size_t max_vocab = sub.get_option("--max-vocab")->count() ? a.max_vocab
                                                                          : cfg.value("max_vocab", std::size_t{30000});
    auto vocab = Vocabulary::build(texts, domains, max_vocab);
    model = Model<float>::create(model_cfg, std::move(vocab), train_cfg.seed);
    model.domain_tokens = a.domain_tokens || cfg.value("domain_tokens", false);
    model_source = {{"model", model.config}, {"max_vocab", max_vocab}, {"domain_tokens", model.domain_tokens}};
  }
  check_domains(model, data.train);
  check_domains(model, data.valid);

  const fs::path out_dir = a.out;
  fs::create_directories(out_dir);
  write_json(out_dir / "resolved_config.json", {{"command", "train"},
                                                {"data_dir", data_dir.string()},
                                                {"out", out_dir.string()},
                                                {"train", train_cfg},
                                                {"model_source", model_source}});
  std::ofstream history(out_dir / "history.jsonl", a.resume ? std::ios::app : std::ios::trunc);
  if (!history) throw DataError("cannot write history to " + out_dir.string());
  const HistorySink sink = [&](const json& record) {
    history << record.dump() << '\n';
    history.flush();
    if (a.verbose) err << record.dump() << '\n';
  };

  auto result = training_loop(model, data, train_cfg, start_step, sink);
  save_model(result.best, out_dir / "model.ckpt",
             {{"step", result.best_step},
              {"steps_run", result.steps},
              {"best_f1max", result.best_f1max},
              {"early_stopped", result.early_stopped},
              {"train_config", train_cfg}});
  const auto report = evaluate_model(result.best, data.valid, data.papers, EvalMode::Validation);
  write_json(out_dir / "validation_report.json", report);
  out << (result.early_stopped ? "stopped early" : "completed") << " after step " << result.steps << "; best step "
      << result.best_step << ", validation F1max " << result.best_f1max << '\n'
      << report.table("model");
  return kExitOk;
}

// --- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  std::string model, vectors, split, papers, mode, out, scores, name;
};

fs::path resolve_split(const std::string& split) {
  if (fs::exists(split)) return split;
  if (const char* env = std::getenv(kDataDirEnv); env && *env) {
    const fs::path candidate = fs::path(env) / ("pairs." + split);
    if (fs::exists(candidate)) return candidate;
  }
  throw DataError("split file '" + split + "' not found");
}

std::map<std::string, Eigen::RowVectorXd> read_vectors(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vectors file " + path.string());
  std::map<std::string, Eigen::RowVectorXd> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      const auto values = j.at("vector").get<std::vector<double>>();
      out[j.at("id").get<std::string>()] = Eigen::Map<const Eigen::RowVectorXd>(values.data(),
                                                                                static_cast<Eigen::Index>(values.size()));
    } catch (const json::exception& e) {
      throw DataError(path.string() + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  if (a.model.empty() == a.vectors.empty()) throw ConfigError("give exactly one of --model and --vectors");
  const auto mode = parse_eval_mode(a.mode);
  const auto split_path = resolve_split(a.split);
  fs::path papers_path = a.papers;
  if (papers_path.empty()) papers_path = split_path.parent_path() / "papers.jsonl";
  const auto pairs = read_pairs(split_path);

  std::vector<ScoredPair> scored;
  std::string name = a.name;
  if (!a.vectors.empty()) {
    const auto vectors = read_vectors(a.vectors);
    for (const auto& p : pairs) {
      auto va = vectors.find(p.id_a), vb = vectors.find(p.id_b);
      if (va == vectors.end() || vb == vectors.end())
        throw DataError("no vector for pair (" + p.id_a + ", " + p.id_b + ")");
      scored.push_back({p.id_a, p.id_b, cosine_similarity(va->second, vb->second), p.label, p.domain});
    }
    if (name.empty()) name = "vectors";
  } else if (a.model == "tfidf") {
    const auto papers = read_papers(papers_path);
    scored = tfidf_baseline(papers, pairs, corpus_vocabulary(papers));
    if (name.empty()) name = "TF-IDF";
  } else if (fs::is_regular_file(a.model)) {
    const auto papers = read_papers(papers_path);
    const auto model = load_model<float>(a.model);
    scored = score_pairs(model, pairs, papers);
    if (name.empty()) name = fs::path(a.model).stem().string();
  } else {
    throw ConfigError("unknown model reference '" + a.model + "' (expected a checkpoint file or tfidf)");
  }

  const auto report = evaluate_scored(scored, mode);
  if (!a.out.empty()) {
    write_json(a.out, report);
    write_json(snapshot_for_file(a.out), {{"command", "evaluate"},
                                          {"model", a.model},
                                          {"vectors", a.vectors},
                                          {"split", split_path.string()},
                                          {"papers", papers_path.string()},
                                          {"mode", to_string(mode)},
                                          {"scores", a.scores}});
  }
  if (!a.scores.empty()) {
    std::ofstream s(a.scores, std::ios::binary);
    if (!s) throw DataError("cannot write " + a.scores);
    for (const auto& p : scored) s << json(p).dump() << '\n';
  }
  out << report.table(name);
  return kExitOk;
}

// --- embed -----------------------------------------------------------------

struct EmbedArgs {
  std::string checkpoint, input, domain, out;
};

int cmd_embed(const EmbedArgs& a, std::ostream& out) {
  const auto model = load_model<float>(a.checkpoint);
  std::optional<std::string> domain;
  if (!a.domain.empty()) {
    if (!model.vocab.domain_token_id(a.domain)) throw ConfigError("domain '" + a.domain + "' is not registered");
    domain = a.domain;
  }
  std::ifstream in(a.input);
  if (!in) throw DataError("cannot open " + a.input);
  std::ofstream o(a.out, std::ios::binary);
  if (!o) throw DataError("cannot write " + a.out);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    std::string id = std::to_string(n - 1);
    std::string text = line;
    if (!line.empty() && line.front() == '{') {
      try {
        const auto j = json::parse(line);
        text = j.at("abstract").get<std::string>();
        if (j.contains("id")) id = j.at("id").get<std::string>();
      } catch (const json::exception& e) {
        throw DataError(a.input + " line " + std::to_string(n) + ": " + e.what());
      }
    }
    if (text.empty()) throw DataError(a.input + " line " + std::to_string(n) + ": empty abstract");
    const auto v = embed(model, text, domain ? std::optional<std::string_view>(*domain) : std::nullopt);
    std::vector<double> values(v.data(), v.data() + v.size());
    o << json{{"id", id}, {"vector", values}}.dump() << '\n';
  }
  write_json(snapshot_for_file(a.out), {{"command", "embed"},
                                        {"checkpoint", a.checkpoint},
                                        {"input", a.input},
                                        {"domain", a.domain},
                                        {"out", a.out}});
  out << "wrote " << n << " vectors of length " << model.config.hidden_dim << " to " << a.out << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Co-citation contrastive training of small transformer encoders and expert models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "cocite 0.1.0");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate-corpus", "Write a synthetic two-domain records file");
  g->add_option("--config", gen.config, "JSON config (section \"corpus\")");
  g->add_option("--out", gen.out, "Records file to write")->required();
  g->add_option("--papers-per-domain", gen.papers_per_domain);
  g->add_option("--seed", gen.seed);

  BuildArgs build;
  auto* b = app.add_subcommand("build-dataset", "Extract co-citation pairs and write train/valid/test splits");
  b->add_option("--config", build.config, "JSON config (section \"split\")");
  b->add_option("--records", build.records, "Line-delimited JSON paper records")->required();
  b->add_option("--out", build.out, std::string("Output directory (default $") + kDataDirEnv + ")");
  b->add_option("--recent-year", build.recent_year);
  b->add_option("--valid-fraction", build.valid_fraction);
  b->add_option("--min-citations", build.min_citations);
  b->add_option("--seed", build.seed);
  b->add_flag("--cross-domain-negatives", build.cross_domain_negatives, "Allow negatives spanning two domains");

  ExtendArgs ext;
  ext.layers = "all";
  auto* e = app.add_subcommand("extend", "Turn a dense checkpoint into an expert checkpoint");
  e->add_option("--config", ext.config, "JSON config (section \"moe\")");
  e->add_option("--base", ext.base, "Dense checkpoint")->required();
  e->add_option("--out", ext.out, "Extended checkpoint to write")->required();
  e->add_option("--experts", ext.experts);
  e->add_option("--top-k", ext.top_k);
  e->add_option("--granularity", ext.granularity, "sentence or token");
  e->add_option("--strategy", ext.strategy, "enforced, router_ce or mutual_info");
  e->add_option("--layers", ext.layers, "all, middle or a comma list of block indices");
  e->add_option("--domain-expert", ext.domain_experts, "domain=expert, repeatable");
  e->add_option("--mi-weight", ext.mi_weight);
  e->add_flag("--no-domain-tokens", ext.no_domain_tokens, "Keep [CLS] at position 0");
  e->add_option("--seed", ext.seed);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train an encoder on co-cited abstract pairs");
  t->add_option("--config", tr.config, "JSON config (sections \"model\" and \"train\")");
  t->add_option("--data-dir", tr.data_dir, std::string("Dataset directory (default $") + kDataDirEnv + ")");
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--checkpoint", tr.checkpoint, "Start from this checkpoint");
  t->add_flag("--resume", tr.resume, "Continue the step counter stored in --checkpoint");
  t->add_option("--batch-size", tr.batch_size);
  t->add_option("--lr", tr.lr);
  t->add_option("--scheduler", tr.scheduler, "one_cycle or cosine");
  t->add_option("--warmup", tr.warmup);
  t->add_option("--epochs", tr.epochs);
  t->add_option("--validate-every", tr.validate_every);
  t->add_option("--patience", tr.patience);
  t->add_option("--router-ce-weight", tr.router_ce_weight);
  t->add_option("--batch-mode", tr.batch_mode, "auto, single_domain or mixed");
  t->add_option("--log-every", tr.log_every);
  t->add_option("--seed", tr.seed);
  t->add_option("--hidden-dim", tr.hidden_dim);
  t->add_option("--intermediate-dim", tr.intermediate_dim);
  t->add_option("--blocks", tr.blocks);
  t->add_option("--heads", tr.heads);
  t->add_option("--max-seq-len", tr.max_seq_len);
  t->add_option("--max-vocab", tr.max_vocab);
  t->add_flag("--domain-tokens", tr.domain_tokens, "Fresh model puts the domain token at position 0");
  t->add_flag("--verbose", tr.verbose, "Echo history records to stderr");

  EvaluateArgs ev;
  ev.mode = "validation";
  auto* v = app.add_subcommand("evaluate", "Score a split with a checkpoint, TF-IDF or precomputed vectors");
  v->add_option("--model", ev.model, "Checkpoint file or tfidf");
  v->add_option("--vectors", ev.vectors, "JSONL vectors written by embed");
  v->add_option("--split", ev.split, "Pairs file, or valid/test inside the data directory")->required();
  v->add_option("--papers", ev.papers, "Papers file (default papers.jsonl beside the split)");
  v->add_option("--mode", ev.mode, "validation or test");
  v->add_option("--out", ev.out, "Report JSON to write");
  v->add_option("--scores", ev.scores, "Per-pair similarities to write");
  v->add_option("--name", ev.name, "Model name in the printed table");

  EmbedArgs em;
  auto* m = app.add_subcommand("embed", "Embed one abstract per input line");
  m->add_option("--checkpoint", em.checkpoint)->required();
  m->add_option("--input", em.input, "Plain text lines or JSON records with an abstract")->required();
  m->add_option("--domain", em.domain);
  m->add_option("--out", em.out, "JSONL vectors to write")->required();

  std::vector<std::string> reversed(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(reversed.begin(), reversed.end());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (g->parsed()) return cmd_generate(gen, *g, out);
    if (b->parsed()) return cmd_build(build, *b, out);
    if (e->parsed()) return cmd_extend(ext, *e, out);
    if (t->parsed()) return cmd_train(tr, *t, out, err);
    if (v->parsed()) return cmd_evaluate(ev, out);
    if (m->parsed()) return cmd_embed(em, out);
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << '\n';
    return kExitConfig;
  } catch (const DataError& ex) {
    err << "data error: " << ex.what() << '\n';
    return kExitData;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace cocite
