// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cocite/tensor.hpp"

namespace cocite {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

std::size_t dtype_size(DType t);

template <typename Scalar>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::F32; }
template <>
constexpr DType dtype_of<double>() { return DType::F64; }

struct TensorEntry {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::uint64_t> shape;
  std::vector<std::byte> data;  // little-endian, row-major

  template <typename Scalar>
  static TensorEntry from_matrix(std::string name, const Matrix<Scalar>& m);

  /// Converts to the requested precision when the stored dtype differs.
  template <typename Scalar>
  Matrix<Scalar> to_matrix() const;

  friend bool operator==(const TensorEntry&, const TensorEntry&) = default;
};

/// Ordered named-tensor container with a JSON metadata block.
///
/// Layout (all integers little-endian):
///   magic "CCTENSOR" | u32 version | u64 metadata bytes | metadata (UTF-8 JSON)
///   u64 tensor count | per tensor: u32 name bytes, name, u8 dtype, u32 rank,
///   u64 dims[rank], u64 data bytes, data
class NamedTensorFile {
 public:
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json metadata = nlohmann::json::object();
  std::vector<TensorEntry> tensors;

  std::vector<std::byte> serialize() const;
  static NamedTensorFile parse(std::span<const std::byte> bytes);

  void save(const std::filesystem::path& path) const;
  static NamedTensorFile load(const std::filesystem::path& path);

  const TensorEntry* find(std::string_view name) const;
  const TensorEntry& at(std::string_view name) const;
};

}  // namespace cocite
