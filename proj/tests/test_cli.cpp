// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include "cocite/cli.hpp"
#include "cocite/model_io.hpp"
#include "cocite/pipeline.hpp"
#include "support.hpp"

using namespace cocite;
using namespace test_support;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "cocite");
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

/// Records, dataset and a trained dense model shared by the tests below.
struct Workspace {
  TempDir dir{"cli"};
  fs::path records, data, model_dir;

  Workspace() {
    records = dir.path / "records.jsonl";
    data = dir.path / "data";
    model_dir = dir.path / "model";
    REQUIRE(cli({"generate-corpus", "--out", records.string(), "--papers-per-domain", "120", "--seed", "3"}).code == 0);
    REQUIRE(cli({"build-dataset", "--records", records.string(), "--out", data.string(), "--valid-fraction", "0.05",
                 "--min-citations", "3", "--seed", "1"})
                .code == 0);
    const auto t = cli({"train", "--data-dir", data.string(), "--out", model_dir.string(), "--epochs", "1",
                        "--batch-size", "8", "--lr", "1e-3", "--warmup", "2", "--validate-every", "1000",
                        "--hidden-dim", "8", "--intermediate-dim", "16", "--blocks", "2", "--heads", "2",
                        "--max-seq-len", "16", "--seed", "2"});
    INFO(t.err);
    REQUIRE(t.code == 0);
  }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors") {
    CHECK(cli({"frobnicate"}).code == kExitConfig);
    CHECK(cli({}).code == kExitConfig);
    CHECK(cli({"--help"}).code == kExitOk);
    CHECK(cli({"build-dataset"}).code == kExitConfig);
    CHECK(cli({"evaluate", "--split", "x", "--model", "a", "--vectors", "b"}).code == kExitConfig);
  }

  TEST_CASE("empty records file") {
    TempDir dir("cli-empty");
    std::ofstream(dir.path / "empty.jsonl") << "";
    const auto r = cli({"build-dataset", "--records", (dir.path / "empty.jsonl").string(), "--out",
                        (dir.path / "d").string()});
    CHECK(r.code == kExitData);
    CHECK(r.err.find("no valid records") != std::string::npos);
    CHECK(cli({"build-dataset", "--records", (dir.path / "missing.jsonl").string(), "--out", dir.path.string()}).code ==
          kExitData);
  }

  TEST_CASE("data directory from the environment") {
    auto& w = workspace();
    TempDir dir("cli-env");
    ::setenv(kDataDirEnv, dir.path.string().c_str(), 1);
    const auto r = cli({"build-dataset", "--records", w.records.string(), "--valid-fraction", "0.05",
                        "--min-citations", "3", "--seed", "1"});
    ::unsetenv(kDataDirEnv);
    CHECK(r.code == 0);
    // Same seed, same bytes.
    for (const char* f : {"pairs.train", "pairs.valid", "pairs.test", "stats.json"})
      CHECK(read_file(dir.path / f) == read_file(w.data / f));
    CHECK(fs::exists(dir.path / "ingest_report.json"));
    CHECK(fs::exists(dir.path / "resolved_config.json"));
    ::unsetenv(kDataDirEnv);
    CHECK(cli({"build-dataset", "--records", w.records.string()}).code == kExitConfig);
  }

  TEST_CASE("training outputs") {
    auto& w = workspace();
    CHECK(fs::exists(w.model_dir / "model.ckpt"));
    CHECK(fs::exists(w.model_dir / "validation_report.json"));
    const auto resolved = nlohmann::json::parse(read_file(w.model_dir / "resolved_config.json"));
    CHECK(resolved.at("train").at("batch_size") == 8);
    std::istringstream hist(read_file(w.model_dir / "history.jsonl"));
    std::string line, last;
    std::size_t n = 0;
    while (std::getline(hist, line)) {
      last = line;
      ++n;
    }
    CHECK(n >= 3);
    CHECK(nlohmann::json::parse(last).at("split") == "event");
    const auto meta = NamedTensorFile::load(w.model_dir / "model.ckpt").metadata;
    CHECK(meta.at("training").contains("best_f1max"));
  }

  TEST_CASE("extend prints parameter counts and validates the map") {
    auto& w = workspace();
    const auto ext = w.dir.path / "moe.ckpt";
    const auto r = cli({"extend", "--base", (w.model_dir / "model.ckpt").string(), "--out", ext.string(),
                        "--experts", "2", "--strategy", "enforced", "--layers", "middle", "--domain-expert", "copd=0",
                        "--domain-expert", "cvd=1"});
    INFO(r.err);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("stored parameters") != std::string::npos);
    CHECK(fs::exists(ext.string() + ".resolved_config.json"));
    const auto m = load_model<float>(ext);
    REQUIRE(m.moe);
    CHECK(m.moe->extended_layers == std::set<std::size_t>{1});
    CHECK(m.moe->domain_experts.at("cvd") == 1);
    CHECK(cli({"extend", "--base", ext.string(), "--out", (w.dir.path / "x.ckpt").string()}).code == kExitConfig);
    CHECK(cli({"extend", "--base", (w.model_dir / "model.ckpt").string(), "--out", (w.dir.path / "x.ckpt").string(),
               "--domain-expert", "copd"})
              .code == kExitConfig);
    CHECK(cli({"extend", "--base", (w.model_dir / "model.ckpt").string(), "--out", (w.dir.path / "x.ckpt").string(),
               "--strategy", "sometimes"})
              .code == kExitConfig);
  }

  TEST_CASE("evaluate and embed") {
    auto& w = workspace();
    const auto ckpt = (w.model_dir / "model.ckpt").string();
    const auto report = w.dir.path / "report.json";
    auto r = cli({"evaluate", "--model", ckpt, "--split", (w.data / "pairs.valid").string(), "--out",
                  report.string(), "--name", "se"});
    INFO(r.err);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("F1Max") != std::string::npos);
    const auto valid = nlohmann::json::parse(read_file(report));
    CHECK(valid.at("overall").contains("f1max"));
    CHECK(fs::exists(report.string() + ".resolved_config.json"));

    r = cli({"evaluate", "--model", ckpt, "--split", (w.data / "pairs.test").string(), "--mode", "test", "--out",
             report.string()});
    REQUIRE(r.code == 0);
    const auto test = nlohmann::json::parse(read_file(report));
    CHECK_FALSE(test.at("overall").contains("f1max"));
    CHECK(test.at("overall").at("cutoff").get<double>() >= 0.5);

    ::setenv(kDataDirEnv, w.data.string().c_str(), 1);
    r = cli({"evaluate", "--model", "tfidf", "--split", "valid"});
    ::unsetenv(kDataDirEnv);
    CHECK(r.code == 0);
    CHECK(cli({"evaluate", "--model", "nonsense", "--split", (w.data / "pairs.valid").string()}).code == kExitConfig);

    // Embed every paper, then evaluating the vectors reproduces the checkpoint's report.
    const auto vecs = w.dir.path / "vectors.jsonl";
    const auto scores_a = w.dir.path / "scores_a.jsonl";
    const auto scores_b = w.dir.path / "scores_b.jsonl";
    for (const std::string dom : {"copd", "cvd"}) {
      const auto papers = read_papers(w.data / "papers.jsonl");
      std::ofstream in(w.dir.path / (dom + ".jsonl"));
      for (const auto& [id, p] : papers)
        if (p.domain == dom) in << nlohmann::json({{"id", id}, {"abstract", p.abstract}}).dump() << '\n';
    }
    std::string all;
    for (const std::string dom : {"copd", "cvd"}) {
      const auto out = w.dir.path / ("vec_" + dom + ".jsonl");
      r = cli({"embed", "--checkpoint", ckpt, "--input", (w.dir.path / (dom + ".jsonl")).string(), "--domain", dom,
               "--out", out.string()});
      INFO(r.err);
      REQUIRE(r.code == 0);
      all += read_file(out);
    }
    std::ofstream(vecs) << all;
    REQUIRE(cli({"evaluate", "--model", ckpt, "--split", (w.data / "pairs.valid").string(), "--scores",
                 scores_a.string()})
                .code == 0);
    REQUIRE(cli({"evaluate", "--vectors", vecs.string(), "--split", (w.data / "pairs.valid").string(), "--scores",
                 scores_b.string()})
                .code == 0);
    CHECK(read_file(scores_a) == read_file(scores_b));

    CHECK(cli({"embed", "--checkpoint", ckpt, "--input", (w.dir.path / "cvd.jsonl").string(), "--domain", "asthma",
               "--out", (w.dir.path / "x.jsonl").string()})
              .code == kExitConfig);
  }

  TEST_CASE("resume continues the step counter") {
    auto& w = workspace();
    const auto out = w.dir.path / "resumed";
    const auto r = cli({"train", "--data-dir", w.data.string(), "--out", out.string(), "--checkpoint",
                        (w.model_dir / "model.ckpt").string(), "--resume", "--epochs", "2", "--batch-size", "8",
                        "--lr", "1e-3", "--warmup", "2", "--validate-every", "1000"});
    INFO(r.err);
    REQUIRE(r.code == 0);
    const auto meta = NamedTensorFile::load(out / "model.ckpt").metadata;
    CHECK(meta.at("training").at("steps_run").get<std::size_t>() >
          NamedTensorFile::load(w.model_dir / "model.ckpt").metadata.at("training").at("steps_run").get<std::size_t>());
  }
}
