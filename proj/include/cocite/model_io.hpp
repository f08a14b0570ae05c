// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "cocite/checkpoint.hpp"
#include "cocite/encoder.hpp"

namespace cocite {

inline constexpr const char* kCheckpointFormat = "cocite-encoder";

/// Tensors in parameter order plus `temperature.log`; metadata carries the
/// model and expert configuration, the vocabulary and caller-supplied
/// `training` state (step counters and the like).
template <typename Scalar>
NamedTensorFile to_checkpoint(const Model<Scalar>& model, const nlohmann::json& training = nlohmann::json::object());

template <typename Scalar>
Model<Scalar> from_checkpoint(const NamedTensorFile& file);

template <typename Scalar>
void save_model(const Model<Scalar>& model, const std::filesystem::path& path,
                const nlohmann::json& training = nlohmann::json::object()) {
  to_checkpoint(model, training).save(path);
}

template <typename Scalar>
Model<Scalar> load_model(const std::filesystem::path& path) {
  return from_checkpoint<Scalar>(NamedTensorFile::load(path));
}

}  // namespace cocite
