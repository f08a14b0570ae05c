// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "cocite/encoder.hpp"

namespace test_support {

using namespace cocite;

inline Vocabulary toy_vocabulary() {
  const std::vector<std::string> corpus = {
      "heart failure risk in older adults", "lung function decline and airway obstruction",
      "blood pressure control reduces stroke", "smoking cessation improves lung outcomes",
      "cardiac rehabilitation after infarction"};
  const std::vector<std::string> domains = {"copd", "cvd"};
  return Vocabulary::build(corpus, domains, 64);
}

inline ModelConfig tiny_config(std::size_t vocab_size, std::size_t d = 8, std::size_t blocks = 2,
                               std::size_t heads = 2) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.hidden_dim = d;
  c.intermediate_dim = 2 * d;
  c.num_blocks = blocks;
  c.num_heads = heads;
  c.max_seq_len = 8;
  return c;
}

/// Replaces every tensor with N(0, scale) draws so that norms and biases are
/// exercised away from their identity initialization.
template <typename Scalar>
void randomize(EncoderWeights<Scalar>& w, Rng& rng, double scale) {
  for_each_parameter(
      [&](const std::string& name, Matrix<Scalar>& m) {
        m = normal_matrix<Scalar>(m.rows(), m.cols(), scale, rng);
        if (name.ends_with(".gamma")) m.array() += Scalar(1);
      },
      w);
}

template <typename Scalar>
Model<Scalar> random_model(const ModelConfig& cfg, const Vocabulary& vocab, std::uint64_t seed, double scale) {
  auto m = Model<Scalar>::create(cfg, vocab, seed);
  Rng rng(seed + 1000);
  randomize(m.weights, rng, scale);
  return m;
}

/// Position 0 holds `first`; the following real tokens are random non-special ids.
inline TokenSequence random_sequence(const Vocabulary& vocab, std::size_t length, std::size_t real, TokenId first,
                                     Rng& rng) {
  TokenSequence s;
  std::uniform_int_distribution<TokenId> pick(4 + static_cast<TokenId>(vocab.domains().size()),
                                              static_cast<TokenId>(vocab.size()) - 1);
  for (std::size_t i = 0; i < length; ++i) {
    const bool on = i < real;
    s.ids.push_back(i == 0 ? first : (on ? pick(rng) : Vocabulary::kPad));
    s.mask.push_back(on ? 1 : 0);
  }
  return s;
}

/// ||a - b|| / max(||a||, ||b||), 0 when both are below finite-difference noise.
inline double relative_error(const Matrix<double>& a, const Matrix<double>& b) {
  const double scale = std::max(a.norm(), b.norm());
  if (scale < 1e-8) return 0.0;
  return (a - b).norm() / scale;
}

/// Central differences of `loss` with respect to every entry of `param`.
template <typename F>
Matrix<double> numeric_gradient(Matrix<double>& param, F&& loss, double h = 1e-6) {
  Matrix<double> g(param.rows(), param.cols());
  for (Eigen::Index i = 0; i < param.size(); ++i) {
    const double saved = param.data()[i];
    param.data()[i] = saved + h;
    const double up = loss();
    param.data()[i] = saved - h;
    const double down = loss();
    param.data()[i] = saved;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

/// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("cocite-" + tag + "-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace test_support
