// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstring>

#include "cocite/extension.hpp"
#include "cocite/model_io.hpp"
#include "support.hpp"

using namespace cocite;
using namespace test_support;

namespace {

Model<float> extended_model() {
  const auto v = toy_vocabulary();
  const auto base = random_model<float>(tiny_config(v.size(), 8, 2, 2), v, 12, 0.3);
  MoeConfig cfg;
  cfg.num_experts = 3;
  cfg.top_k = 2;
  cfg.strategy = RoutingStrategy::RouterCrossEntropy;
  cfg.granularity = RoutingGranularity::Token;
  cfg.extended_layers = {1};
  cfg.domain_experts = {{"copd", 0}, {"cvd", 2}};
  auto m = extend_model(base, cfg, 4);
  m.temperature = TemperatureParam<float>::from_value(17.5);
  return m;
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("container round trip") {
    NamedTensorFile f;
    f.metadata = {{"k", 1}};
    Matrix<double> a(2, 3);
    a << 1, 2, 3, 4, 5, 6;
    f.tensors.push_back(TensorEntry::from_matrix("a", a));
    f.tensors.push_back(TensorEntry::from_matrix<float>("b", Matrix<float>::Constant(1, 4, 0.5f)));
    const auto bytes = f.serialize();
    const auto g = NamedTensorFile::parse(bytes);
    CHECK(g.metadata == f.metadata);
    CHECK(g.tensors == f.tensors);
    CHECK(g.at("a").to_matrix<double>() == a);
    CHECK(g.at("b").to_matrix<double>()(0, 3) == 0.5);
    CHECK(g.serialize() == bytes);
    CHECK(g.find("c") == nullptr);
    CHECK_THROWS_AS(g.at("c"), DataError);
  }

  TEST_CASE("corrupt input is rejected") {
    NamedTensorFile f;
    f.tensors.push_back(TensorEntry::from_matrix<float>("a", Matrix<float>::Ones(3, 3)));
    const auto bytes = f.serialize();
    for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{20}, bytes.size() - 1}) {
      std::span<const std::byte> part(bytes.data(), cut);
      CHECK_THROWS_AS(NamedTensorFile::parse(part), DataError);
    }
    auto bad = bytes;
    bad[0] = std::byte{'X'};
    CHECK_THROWS_AS(NamedTensorFile::parse(bad), DataError);
    auto longer = bytes;
    longer.push_back(std::byte{0});
    CHECK_THROWS_AS(NamedTensorFile::parse(longer), DataError);
    f.tensors.push_back(f.tensors[0]);
    CHECK_THROWS_AS(NamedTensorFile::parse(f.serialize()), DataError);
    CHECK_THROWS_AS(NamedTensorFile::load("/nonexistent/model.ckpt"), DataError);
  }

  TEST_CASE("model round trip is bitwise") {
    TempDir dir("ckpt");
    const auto m = extended_model();
    const auto path = dir.path / "model.ckpt";
    save_model(m, path, {{"step", 42}});
    const auto loaded = load_model<float>(path);
    CHECK(loaded.config.hidden_dim == m.config.hidden_dim);
    CHECK(loaded.vocab == m.vocab);
    REQUIRE(loaded.moe);
    CHECK(loaded.moe->domain_experts == m.moe->domain_experts);
    CHECK(loaded.moe->top_k == 2);
    CHECK(loaded.domain_tokens == m.domain_tokens);
    CHECK(loaded.temperature.log_value == m.temperature.log_value);
    for_each_parameter([&](const std::string& name, const Matrix<float>& a, const Matrix<float>& b) {
      INFO(name);
      CHECK(a == b);
    }, m.weights, loaded.weights);

    for (const std::string text : {"heart failure risk", "smoking cessation improves lung outcomes"}) {
      for (const std::string dom : {"copd", "cvd"}) {
        const auto a = embed(m, text, std::string_view(dom));
        const auto b = embed(loaded, text, std::string_view(dom));
        CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0);
      }
    }
    save_model(loaded, dir.path / "again.ckpt", {{"step", 42}});
    CHECK(read_file(path) == read_file(dir.path / "again.ckpt"));
    CHECK(NamedTensorFile::load(path).metadata.at("training").at("step") == 42);
  }

  TEST_CASE("model metadata is checked") {
    const auto m = extended_model();
    auto f = to_checkpoint(m);
    auto wrong = f;
    wrong.metadata["format"] = "other";
    CHECK_THROWS_AS(from_checkpoint<float>(wrong), DataError);
    wrong = f;
    wrong.tensors.erase(wrong.tensors.begin() + 3);
    CHECK_THROWS_AS(from_checkpoint<float>(wrong), DataError);
    wrong = f;
    wrong.tensors.push_back(TensorEntry::from_matrix<float>("extra", Matrix<float>::Ones(1, 1)));
    CHECK_THROWS_AS(from_checkpoint<float>(wrong), DataError);
    wrong = f;
    wrong.tensors[0] = TensorEntry::from_matrix<float>(wrong.tensors[0].name, Matrix<float>::Ones(2, 2));
    CHECK_THROWS_AS(from_checkpoint<float>(wrong), ShapeError);
    // Precision conversion on load.
    const auto d = from_checkpoint<double>(f);
    CHECK(d.weights.pooler_weight.cast<float>() == m.weights.pooler_weight);
  }
}
