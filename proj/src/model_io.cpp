// SPDX-License-Identifier: Apache-2.0
#include "cocite/model_io.hpp"

#include <set>

#include "cocite/extension.hpp"

namespace cocite {

namespace {
constexpr const char* kTemperatureTensor = "temperature.log";
}

template <typename Scalar>
NamedTensorFile to_checkpoint(const Model<Scalar>& model, const nlohmann::json& training) {
  NamedTensorFile f;
  f.metadata = nlohmann::json{{"format", kCheckpointFormat},
                              {"model_config", model.config},
                              {"vocabulary", model.vocab},
                              {"domain_tokens", model.domain_tokens},
                              {"init", {{"weights", "normal"}, {"stddev", model.config.init_stddev}, {"biases", "zeros"}}},
                              {"training", training}};
  f.metadata["moe_config"] = model.moe ? nlohmann::json(*model.moe) : nlohmann::json(nullptr);
  for_each_parameter(
      [&](const std::string& name, const Matrix<Scalar>& m) { f.tensors.push_back(TensorEntry::from_matrix(name, m)); },
      model.weights);
  Matrix<Scalar> t(1, 1);
  t(0, 0) = model.temperature.log_value;
  f.tensors.push_back(TensorEntry::from_matrix(kTemperatureTensor, t));
  return f;
}

template <typename Scalar>
Model<Scalar> from_checkpoint(const NamedTensorFile& file) {
  const auto& meta = file.metadata;
  if (meta.value("format", std::string()) != kCheckpointFormat) throw DataError("not an encoder checkpoint");
  Model<Scalar> model;
  model.config = meta.at("model_config").get<ModelConfig>();
  model.vocab = meta.at("vocabulary").get<Vocabulary>();
  model.config.validate();
  if (model.vocab.size() != model.config.vocab_size) throw DataError("vocabulary size disagrees with model config");

  // Build the tensor layout, then overwrite every tensor from the file.
  Rng rng(0);
  model.weights = EncoderWeights<Scalar>::init(model.config, rng);
  if (!meta.at("moe_config").is_null()) {
    const auto moe = meta.at("moe_config").get<MoeConfig>();
    moe.validate(model.config.num_blocks);
    for (auto layer : moe.extended_layers) {
      auto& block = model.weights.blocks[layer];
      const auto& mlp = std::get<DenseMlp<Scalar>>(block.feed_forward);
      MoeLayer<Scalar> l;
      l.experts.assign(moe.num_experts, {mlp.w1, mlp.b1, mlp.w2, mlp.b2, mlp.w1, mlp.b1});
      l.router = {Matrix<Scalar>(mlp.w1.rows(), static_cast<Eigen::Index>(moe.num_experts)),
                  Matrix<Scalar>(1, static_cast<Eigen::Index>(moe.num_experts))};
      block.feed_forward = std::move(l);
    }
    model.moe = moe;
  }
  model.domain_tokens = meta.value("domain_tokens", false);

  std::set<std::string> expected{kTemperatureTensor};
  for_each_parameter(
      [&](const std::string& name, Matrix<Scalar>& m) {
        const auto& t = file.at(name);
        Matrix<Scalar> loaded = t.template to_matrix<Scalar>();
        require_shape(loaded, m.rows(), m.cols(), name);
        m = std::move(loaded);
        expected.insert(name);
      },
      model.weights);
  model.temperature.log_value = file.at(kTemperatureTensor).to_matrix<Scalar>()(0, 0);
  for (const auto& t : file.tensors) {
    if (!expected.count(t.name)) throw DataError("unexpected tensor '" + t.name + "' in checkpoint");
  }
  model.validate();
  return model;
}

template NamedTensorFile to_checkpoint(const Model<float>&, const nlohmann::json&);
template NamedTensorFile to_checkpoint(const Model<double>&, const nlohmann::json&);
template Model<float> from_checkpoint(const NamedTensorFile&);
template Model<double> from_checkpoint(const NamedTensorFile&);

}  // namespace cocite
