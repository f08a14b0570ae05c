// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "cocite/layers.hpp"
#include "support.hpp"

using namespace cocite;
using test_support::numeric_gradient;
using test_support::relative_error;

TEST_SUITE("layers") {
  TEST_CASE("layer norm output has zero mean and unit variance per row") {
    Rng rng(1);
    LayerNorm<double> n{Matrix<double>::Ones(1, 6), Matrix<double>::Zero(1, 6)};
    const Matrix<double> x = normal_matrix<double>(4, 6, 3.0, rng);
    const auto y = layer_norm_forward(n, x);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      CHECK(std::abs(y.row(r).mean()) < 1e-12);
      CHECK(std::abs(y.row(r).squaredNorm() / 6.0 - 1.0) < 1e-9);
    }
  }

  TEST_CASE("gelu uses the erf form") {
    Matrix<double> x(1, 3);
    x << -1.0, 0.0, 2.0;
    const auto g = activate(Activation::Gelu, x);
    for (int i = 0; i < 3; ++i) {
      const double v = x(0, i);
      CHECK(g(0, i) == doctest::Approx(0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)))).epsilon(1e-14));
    }
    const auto r = activate(Activation::Relu, x);
    CHECK(r(0, 0) == 0.0);
    CHECK(r(0, 2) == 2.0);
  }

  TEST_CASE("masked keys receive no attention") {
    Rng rng(2);
    const std::size_t d = 4;
    Attention<double> a{normal_matrix<double>(d, d, 0.5, rng), normal_matrix<double>(1, d, 0.5, rng),
                        normal_matrix<double>(d, d, 0.5, rng), normal_matrix<double>(1, d, 0.5, rng),
                        normal_matrix<double>(d, d, 0.5, rng), normal_matrix<double>(1, d, 0.5, rng),
                        normal_matrix<double>(d, d, 0.5, rng), normal_matrix<double>(1, d, 0.5, rng)};
    Matrix<double> x = normal_matrix<double>(5, d, 1.0, rng);
    const std::vector<std::uint8_t> mask = {1, 1, 1, 0, 0};
    AttentionCache<double> cache;
    const auto y = attention_forward(a, 2, x, mask, &cache);
    for (const auto& p : cache.probs) {
      CHECK(p.col(3).isZero(0));
      CHECK(p.col(4).isZero(0));
    }
    // Changing padded rows leaves the real rows untouched.
    x.row(3).setConstant(9.0);
    x.row(4).setConstant(-9.0);
    const auto y2 = attention_forward(a, 2, x, mask);
    CHECK((y.topRows(3) - y2.topRows(3)).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("layer gradients match central differences") {
    Rng rng(3);
    const std::size_t d = 4, inner = 6, rows = 3;
    Matrix<double> x = normal_matrix<double>(rows, d, 1.0, rng);
    const Matrix<double> r = normal_matrix<double>(rows, d, 1.0, rng);

    SUBCASE("layer norm") {
      LayerNorm<double> n{normal_matrix<double>(1, d, 1.0, rng), normal_matrix<double>(1, d, 1.0, rng)};
      auto loss = [&] { return layer_norm_forward(n, x).cwiseProduct(r).sum(); };
      LayerNormCache<double> cache;
      layer_norm_forward(n, x, &cache);
      LayerNorm<double> g{Matrix<double>::Zero(1, d), Matrix<double>::Zero(1, d)};
      const auto dx = layer_norm_backward(n, cache, r, g);
      CHECK(relative_error(dx, numeric_gradient(x, loss)) < 1e-6);
      CHECK(relative_error(g.gamma, numeric_gradient(n.gamma, loss)) < 1e-6);
      CHECK(relative_error(g.beta, numeric_gradient(n.beta, loss)) < 1e-6);
    }
    SUBCASE("dense mlp") {
      for (auto act : {Activation::Gelu, Activation::Relu}) {
        DenseMlp<double> m{normal_matrix<double>(d, inner, 0.7, rng), normal_matrix<double>(1, inner, 0.7, rng),
                           normal_matrix<double>(inner, d, 0.7, rng), normal_matrix<double>(1, d, 0.7, rng)};
        auto loss = [&] { return dense_mlp_forward(m, act, x).cwiseProduct(r).sum(); };
        DenseMlpCache<double> cache;
        dense_mlp_forward(m, act, x, &cache);
        DenseMlp<double> g{Matrix<double>::Zero(d, inner), Matrix<double>::Zero(1, inner),
                           Matrix<double>::Zero(inner, d), Matrix<double>::Zero(1, d)};
        const auto dx = dense_mlp_backward(m, act, cache, r, g);
        CHECK(relative_error(dx, numeric_gradient(x, loss)) < 1e-6);
        CHECK(relative_error(g.w1, numeric_gradient(m.w1, loss)) < 1e-6);
        CHECK(relative_error(g.b1, numeric_gradient(m.b1, loss)) < 1e-6);
        CHECK(relative_error(g.w2, numeric_gradient(m.w2, loss)) < 1e-6);
        CHECK(relative_error(g.b2, numeric_gradient(m.b2, loss)) < 1e-6);
      }
    }
    SUBCASE("attention with padding") {
      Attention<double> a{normal_matrix<double>(d, d, 0.6, rng), normal_matrix<double>(1, d, 0.6, rng),
                          normal_matrix<double>(d, d, 0.6, rng), normal_matrix<double>(1, d, 0.6, rng),
                          normal_matrix<double>(d, d, 0.6, rng), normal_matrix<double>(1, d, 0.6, rng),
                          normal_matrix<double>(d, d, 0.6, rng), normal_matrix<double>(1, d, 0.6, rng)};
      const std::vector<std::uint8_t> mask = {1, 1, 0};
      auto loss = [&] { return attention_forward(a, 2, x, mask).cwiseProduct(r).sum(); };
      AttentionCache<double> cache;
      attention_forward(a, 2, x, mask, &cache);
      Attention<double> g{Matrix<double>::Zero(d, d), Matrix<double>::Zero(1, d), Matrix<double>::Zero(d, d),
                          Matrix<double>::Zero(1, d), Matrix<double>::Zero(d, d), Matrix<double>::Zero(1, d),
                          Matrix<double>::Zero(d, d), Matrix<double>::Zero(1, d)};
      const auto dx = attention_backward(a, 2, cache, r, g);
      CHECK(relative_error(dx, numeric_gradient(x, loss)) < 1e-6);
      CHECK(relative_error(g.query_weight, numeric_gradient(a.query_weight, loss)) < 1e-6);
      CHECK(relative_error(g.query_bias, numeric_gradient(a.query_bias, loss)) < 1e-6);
      CHECK(relative_error(g.key_weight, numeric_gradient(a.key_weight, loss)) < 1e-6);
      CHECK(relative_error(g.value_weight, numeric_gradient(a.value_weight, loss)) < 1e-6);
      CHECK(relative_error(g.output_weight, numeric_gradient(a.output_weight, loss)) < 1e-6);
      CHECK(relative_error(g.output_bias, numeric_gradient(a.output_bias, loss)) < 1e-6);
    }
  }
}
