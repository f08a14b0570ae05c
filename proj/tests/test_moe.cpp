// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "cocite/extension.hpp"
#include "cocite/moe.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace cocite;
using namespace test_support;

namespace {

ExpertMlp<double> random_expert(std::size_t d, std::size_t inner, Rng& rng) {
  return {normal_matrix<double>(d, inner, 0.5, rng), normal_matrix<double>(1, inner, 0.5, rng),
          normal_matrix<double>(inner, d, 0.5, rng), normal_matrix<double>(1, d, 0.5, rng),
          normal_matrix<double>(d, inner, 0.5, rng), normal_matrix<double>(1, inner, 0.5, rng)};
}

RoutingRecord<double> record_from_logits(const Matrix<double>& logits) {
  RoutingRecord<double> r;
  r.logits = logits;
  r.unit_mask.assign(static_cast<std::size_t>(logits.rows()), 1);
  r.selected.resize(r.unit_mask.size());
  r.gates.resize(r.unit_mask.size());
  return r;
}

RowVector<double> row(std::initializer_list<double> v) {
  RowVector<double> r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

// Double sum over the joint table, independent of the library's accumulation.
double mi_oracle(const std::vector<RowVector<double>>& probs, const std::vector<std::size_t>& labels) {
  std::map<std::size_t, std::vector<std::size_t>> by_dom;
  for (std::size_t x = 0; x < labels.size(); ++x) by_dom[labels[x]].push_back(x);
  const auto E = probs[0].size();
  const double n = static_cast<double>(probs.size());
  std::vector<double> pe(static_cast<std::size_t>(E), 0.0);
  for (const auto& p : probs)
    for (Eigen::Index e = 0; e < E; ++e) pe[static_cast<std::size_t>(e)] += p(e) / n;
  double mi = 0;
  for (const auto& [dom, xs] : by_dom) {
    const double pd = static_cast<double>(xs.size()) / n;
    for (Eigen::Index e = 0; e < E; ++e) {
      double joint = 0;
      for (auto x : xs) joint += probs[x](e) / n;
      if (joint > 0) mi += joint * std::log(joint / (pd * pe[static_cast<std::size_t>(e)]));
    }
  }
  return mi;
}

}  // namespace

TEST_SUITE("moe") {
  TEST_CASE("gated expert matches the loop oracle") {
    Rng rng(3);
    const auto e = random_expert(6, 12, rng);
    const Matrix<double> x = normal_matrix<double>(5, 6, 1.0, rng);
    for (auto act : {Activation::Gelu, Activation::Relu}) {
      CHECK(relative_error(swiglu_forward(e, x, act), oracle::swiglu(e, act, x)) < 1e-12);
    }
  }

  TEST_CASE("gated expert with W3 = 0 and b3 = 1 is the dense MLP") {
    Rng rng(4);
    auto e = random_expert(6, 12, rng);
    e.w3.setZero();
    e.b3.setOnes();
    const DenseMlp<double> dense{e.w1, e.b1, e.w2, e.b2};
    const Matrix<double> x = normal_matrix<double>(4, 6, 1.0, rng);
    CHECK(relative_error(swiglu_forward(e, x, Activation::Gelu), oracle::dense_mlp(dense, Activation::Gelu, x)) <
          1e-14);
    const Matrix<double> zero = Matrix<double>::Zero(3, 6);
    e = random_expert(6, 12, rng);
    e.b1.setZero();
    const auto out = swiglu_forward(e, zero, Activation::Gelu);
    for (Eigen::Index r = 0; r < 3; ++r) CHECK(relative_error(out.row(r), e.b2) < 1e-14);
  }

  TEST_CASE("gated expert gradients") {
    Rng rng(5);
    auto e = random_expert(4, 8, rng);
    Matrix<double> x = normal_matrix<double>(3, 4, 1.0, rng);
    const Matrix<double> r = normal_matrix<double>(3, 4, 1.0, rng);
    auto loss = [&] { return swiglu_forward(e, x, Activation::Gelu).cwiseProduct(r).sum(); };
    SwigluCache<double> cache;
    swiglu_forward(e, x, Activation::Gelu, &cache);
    ExpertMlp<double> g{Matrix<double>::Zero(4, 8), Matrix<double>::Zero(1, 8), Matrix<double>::Zero(8, 4),
                        Matrix<double>::Zero(1, 4), Matrix<double>::Zero(4, 8), Matrix<double>::Zero(1, 8)};
    const auto dx = swiglu_backward(e, Activation::Gelu, cache, r, g);
    CHECK(relative_error(dx, numeric_gradient(x, loss)) < 1e-6);
    CHECK(relative_error(g.w1, numeric_gradient(e.w1, loss)) < 1e-6);
    CHECK(relative_error(g.b1, numeric_gradient(e.b1, loss)) < 1e-6);
    CHECK(relative_error(g.w2, numeric_gradient(e.w2, loss)) < 1e-6);
    CHECK(relative_error(g.b2, numeric_gradient(e.b2, loss)) < 1e-6);
    CHECK(relative_error(g.w3, numeric_gradient(e.w3, loss)) < 1e-6);
    CHECK(relative_error(g.b3, numeric_gradient(e.b3, loss)) < 1e-6);
  }

  TEST_CASE("top-k selection and gates") {
    const auto logits = row({3, 1, 0.5, 0.2});
    CHECK(top_k_indices<double>(logits, 2) == std::vector<std::size_t>{0, 1});
    CHECK(top_k_indices<double>(row({0.5, 2, 2, 1}), 2) == std::vector<std::size_t>{1, 2});
    CHECK(top_k_indices<double>(row({1, 1, 1}), 3) == std::vector<std::size_t>{0, 1, 2});

    MoeConfig cfg;
    cfg.num_experts = 4;
    cfg.top_k = 2;
    cfg.strategy = RoutingStrategy::RouterCrossEntropy;
    cfg.granularity = RoutingGranularity::Token;
    Router<double> router{Matrix<double>::Zero(1, 4), logits};
    const Matrix<double> x = Matrix<double>::Zero(2, 1);
    const std::vector<std::uint8_t> mask{1, 1};
    const auto rec = route(x, mask, router, cfg, std::nullopt);
    REQUIRE(rec.num_units() == 2);
    CHECK(rec.selected[0] == std::vector<std::size_t>{0, 1});
    CHECK(rec.gates[0][0] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));
    CHECK(rec.gates[0][1] == doctest::Approx(std::exp(-2.0) / (1.0 + std::exp(-2.0))).epsilon(1e-12));
    CHECK(rec.gates[0][0] == doctest::Approx(0.881).epsilon(1e-3));

    Rng rng(6);
    for (int t = 0; t < 50; ++t) {
      router.bias = normal_matrix<double>(1, 4, 2.0, rng);
      for (std::size_t k = 1; k <= 4; ++k) {
        cfg.top_k = k;
        const auto r = route(x, mask, router, cfg, std::nullopt);
        double s = 0;
        for (double g : r.gates[1]) {
          CHECK(g > 0);
          s += g;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(r.selected[1].size() == k);
      }
    }
  }

  TEST_CASE("enforced routing picks the mapped expert") {
    MoeConfig cfg;
    cfg.num_experts = 3;
    cfg.domain_experts = {{"copd", 2}, {"cvd", 0}};
    Router<double> router{Matrix<double>::Zero(2, 3), row({5, 4, -3})};
    const Matrix<double> x = Matrix<double>::Ones(3, 2);
    const std::vector<std::uint8_t> mask{1, 1, 0};
    const auto rec = route(x, mask, router, cfg, std::string_view("copd"));
    REQUIRE(rec.num_units() == 1);
    CHECK(rec.selected[0] == std::vector<std::size_t>{2});
    CHECK(rec.gates[0] == std::vector<double>{1.0});
    CHECK_THROWS_AS(route(x, mask, router, cfg, std::nullopt), ConfigError);
    CHECK_THROWS_AS(route(x, mask, router, cfg, std::string_view("asthma")), ConfigError);
  }

  TEST_CASE("sentence routing uses the mean of unmasked rows") {
    Matrix<double> x(3, 2);
    x << 1, 2, 3, 4, 100, 100;
    const std::vector<std::uint8_t> mask{1, 1, 0};
    const auto m = routing_input(x, mask, RoutingGranularity::Sentence);
    REQUIRE(m.rows() == 1);
    CHECK(m(0, 0) == doctest::Approx(2.0));
    CHECK(m(0, 1) == doctest::Approx(3.0));
    CHECK(routing_input(x, mask, RoutingGranularity::Token).rows() == 3);
  }

  TEST_CASE("router cross-entropy") {
    const std::vector<RoutingRecord<double>> uniform{record_from_logits(Matrix<double>::Zero(1, 2))};
    CHECK(router_ce_loss<double>(uniform, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    Matrix<double> sure(1, 2);
    sure << 30, -30;
    const std::vector<RoutingRecord<double>> confident{record_from_logits(sure)};
    CHECK(router_ce_loss<double>(confident, 0) < 1e-20);
    CHECK_THROWS_AS(router_ce_loss<double>(uniform, 2), ConfigError);
    CHECK_THROWS_AS(router_ce_loss<double>(std::span<const RoutingRecord<double>>{}, 0), ConfigError);

    Rng rng(7);
    std::vector<RoutingRecord<double>> recs{record_from_logits(normal_matrix<double>(3, 4, 1.0, rng)),
                                            record_from_logits(normal_matrix<double>(1, 4, 1.0, rng))};
    recs[0].unit_mask = {1, 0, 1};
    std::vector<Matrix<double>> grads;
    router_ce_loss<double>(recs, 1, &grads);
    for (std::size_t b = 0; b < recs.size(); ++b) {
      auto loss = [&] { return router_ce_loss<double>(recs, 1); };
      CHECK(relative_error(grads[b], numeric_gradient(recs[b].logits, loss)) < 1e-7);
    }
    CHECK(grads[0].row(1).isZero(0));
  }

  TEST_CASE("mutual information values") {
    const std::vector<std::size_t> labels{0, 0, 1, 1};
    const std::vector<RowVector<double>> indep(4, row({0.3, 0.7}));
    CHECK(std::abs(mutual_information<double>(indep, labels)) < 1e-14);
    const std::vector<RowVector<double>> perfect{row({1, 0}), row({1, 0}), row({0, 1}), row({0, 1})};
    CHECK(mutual_information<double>(perfect, labels) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    CHECK_THROWS_AS(mutual_information<double>(std::span<const RowVector<double>>{}, std::span<const std::size_t>{}),
                    DataError);
    CHECK_THROWS_AS(mutual_information<double>(perfect, std::vector<std::size_t>{0, 1}), ShapeError);
    CHECK_THROWS_AS(mutual_information_loss<double>({}, std::vector<std::size_t>{}, 1.0), DataError);
  }

  TEST_CASE("mutual information matches the double-sum oracle and stays in bounds") {
    Rng rng(8);
    for (int t = 0; t < 200; ++t) {
      const std::size_t E = 2 + static_cast<std::size_t>(t % 4);
      const std::size_t D = 1 + static_cast<std::size_t>(t % 3);
      const std::size_t n = 4 + static_cast<std::size_t>(t % 9);
      std::vector<RowVector<double>> probs;
      std::vector<std::size_t> labels;
      for (std::size_t x = 0; x < n; ++x) {
        RowVector<double> z = normal_matrix<double>(1, static_cast<Eigen::Index>(E), 3.0, rng);
        probs.push_back(softmax<double>(z));
        labels.push_back(x % D);
      }
      const double mi = mutual_information<double>(probs, labels);
      CHECK(std::abs(mi - mi_oracle(probs, labels)) < 1e-10);
      CHECK(mi >= -1e-12);
      CHECK(mi <= std::min(std::log(double(E)), std::log(double(D))) + 1e-12);
    }
  }

  TEST_CASE("mutual information loss gradients") {
    Rng rng(9);
    const std::vector<std::size_t> labels{0, 1, 0, 2, 1};
    std::vector<Matrix<double>> logits;
    for (int x = 0; x < 5; ++x) logits.push_back(normal_matrix<double>(2, 3, 1.0, rng));  // 2 blocks per example
    auto probs_of = [&] {
      std::vector<std::vector<RowVector<double>>> p;
      for (const auto& l : logits) p.push_back({softmax<double>(l.row(0)), softmax<double>(l.row(1))});
      return p;
    };
    auto loss = [&] { return mutual_information_loss<double>(probs_of(), labels, 0.7); };
    std::vector<std::vector<RowVector<double>>> d;
    const double value = mutual_information_loss<double>(probs_of(), labels, 0.7, &d);
    CHECK(value <= 0);
    for (std::size_t x = 0; x < logits.size(); ++x) {
      Matrix<double> analytic(2, 3);
      for (Eigen::Index b = 0; b < 2; ++b) {
        const auto rec = record_from_logits(logits[x].row(b));
        analytic.row(b) = routing_probabilities_backward(rec, d[x][static_cast<std::size_t>(b)]);
      }
      CHECK(relative_error(analytic, numeric_gradient(logits[x], loss)) < 1e-6);
    }
  }

  TEST_CASE("config validation") {
    MoeConfig cfg;
    cfg.extended_layers = {0, 1};
    cfg.domain_experts = {{"copd", 0}, {"cvd", 1}};
    CHECK_NOTHROW(cfg.validate(2));
    auto bad = cfg;
    bad.top_k = 3;
    CHECK_THROWS_AS(bad.validate(2), ConfigError);
    bad = cfg;
    bad.top_k = 0;
    CHECK_THROWS_AS(bad.validate(2), ConfigError);
    bad = cfg;
    bad.extended_layers.clear();
    CHECK_THROWS_AS(bad.validate(2), ConfigError);
    bad = cfg;
    bad.extended_layers = {2};
    CHECK_THROWS_AS(bad.validate(2), ConfigError);
    bad = cfg;
    bad.domain_experts.clear();
    CHECK_THROWS_AS(bad.validate(2), ConfigError);
    bad.strategy = RoutingStrategy::MutualInformation;
    CHECK_NOTHROW(bad.validate(2));
    CHECK_THROWS_AS(cfg.expert_for("asthma"), ConfigError);
    CHECK(middle_block(12) == 6);
  }

  TEST_CASE("expert encoder gradients match central differences") {
    const auto v = toy_vocabulary();
    for (auto gran : {RoutingGranularity::Sentence, RoutingGranularity::Token}) {
      for (std::size_t k : {1u, 2u}) {
        const auto base = random_model<double>(tiny_config(v.size(), 8, 2, 2), v, 31, 0.4);
        MoeConfig cfg;
        cfg.num_experts = 3;
        cfg.top_k = k;
        cfg.granularity = gran;
        cfg.strategy = RoutingStrategy::RouterCrossEntropy;
        cfg.extended_layers = {0, 1};
        cfg.domain_experts = {{"copd", 0}, {"cvd", 1}};
        auto m = extend_model(base, cfg, 5);
        Rng rng(41);
        randomize(m.weights, rng, 0.4);
        auto seq = random_sequence(v, 6, 5, *v.domain_token_id("cvd"), rng);
        const RowVector<double> r = normal_matrix<double>(1, 8, 1.0, rng);
        const auto probe = encoder_forward(m, seq, std::string_view("cvd")).routing();
        std::vector<Matrix<double>> rl;
        for (const auto& rec : probe) rl.push_back(normal_matrix<double>(rec.logits.rows(), 3, 1.0, rng));
        auto loss = [&] {
          const auto pass = encoder_forward(m, seq, std::string_view("cvd"));
          double l = pool(m.weights, pass.hidden.last()).dot(r);
          const auto recs = pass.routing();
          for (std::size_t b = 0; b < recs.size(); ++b) l += recs[b].logits.cwiseProduct(rl[b]).sum();
          return l;
        };
        const auto pass = encoder_forward(m, seq, std::string_view("cvd"));
        const RowVector<double> pooled = pool(m.weights, pass.hidden.last());
        auto grad = m.weights.zeros_like();
        const auto d_last = pool_backward(m.weights, pass.hidden.last(), pooled, r, grad);
        encoder_backward(m.config, m.weights, &*m.moe, pass, d_last, std::span<const Matrix<double>>(rl), grad);
        for_each_parameter(
            [&](const std::string& name, Matrix<double>& p, const Matrix<double>& g) {
              INFO(name, " k=", k);
              CHECK(relative_error(g, numeric_gradient(p, loss)) < 1e-4);
            },
            m.weights, grad);
      }
    }
  }

  TEST_CASE("unselected experts receive exactly zero gradient") {
    const auto v = toy_vocabulary();
    const auto base = random_model<double>(tiny_config(v.size(), 8, 1, 2), v, 3, 0.4);
    MoeConfig cfg;
    cfg.num_experts = 3;
    cfg.extended_layers = {0};
    cfg.domain_experts = {{"copd", 0}, {"cvd", 2}};
    const auto m = extend_model(base, cfg, 2);
    Rng rng(1);
    const auto seq = random_sequence(v, 6, 6, *v.domain_token_id("copd"), rng);
    const auto pass = encoder_forward(m, seq, std::string_view("copd"));
    auto grad = m.weights.zeros_like();
    const RowVector<double> pooled = pool(m.weights, pass.hidden.last());
    const RowVector<double> r = RowVector<double>::Ones(8);
    const auto d_last = pool_backward(m.weights, pass.hidden.last(), pooled, r, grad);
    encoder_backward(m.config, m.weights, &*m.moe, pass, d_last, {}, grad);
    const auto& layer = std::get<MoeLayer<double>>(grad.blocks[0].feed_forward);
    CHECK_FALSE(layer.experts[0].w1.isZero(0));
    for (std::size_t e : {1u, 2u}) {
      CHECK(layer.experts[e].w1.isZero(0));
      CHECK(layer.experts[e].w2.isZero(0));
      CHECK(layer.experts[e].b2.isZero(0));
      CHECK(layer.experts[e].w3.isZero(0));
    }
    CHECK(layer.router.weight.isZero(0));
  }
}
