// SPDX-License-Identifier: Apache-2.0
#include "cocite/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace cocite {

namespace {

constexpr char kMagic[8] = {'C', 'C', 'T', 'E', 'N', 'S', 'O', 'R'};

template <typename T>
void put_le(std::vector<std::byte>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::byte>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::span<const std::byte> take(std::uint64_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw DataError("checkpoint truncated");
  }

  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

// Element bytes are stored little-endian; swap in place on big-endian hosts.
void to_little_endian(std::byte* data, std::size_t count, std::size_t width) {
  if constexpr (std::endian::native == std::endian::little) {
    (void)data, (void)count, (void)width;
  } else {
    for (std::size_t i = 0; i < count; ++i) std::reverse(data + i * width, data + (i + 1) * width);
  }
}

std::string as_string(std::span<const std::byte> s) {
  return std::string(reinterpret_cast<const char*>(s.data()), s.size());
}

}  // namespace

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32: return 4;
    case DType::F64: return 8;
  }
  throw DataError("unknown dtype tag");
}

template <typename Scalar>
TensorEntry TensorEntry::from_matrix(std::string name, const Matrix<Scalar>& m) {
  TensorEntry e;
  e.name = std::move(name);
  e.dtype = dtype_of<Scalar>();
  e.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  e.data.resize(static_cast<std::size_t>(m.size()) * sizeof(Scalar));
  std::memcpy(e.data.data(), m.data(), e.data.size());
  to_little_endian(e.data.data(), static_cast<std::size_t>(m.size()), sizeof(Scalar));
  return e;
}

template <typename Scalar>
Matrix<Scalar> TensorEntry::to_matrix() const {
  if (shape.size() != 2) throw DataError("tensor '" + name + "' is not rank 2");
  const auto rows = static_cast<Eigen::Index>(shape[0]);
  const auto cols = static_cast<Eigen::Index>(shape[1]);
  const auto count = static_cast<std::size_t>(rows * cols);
  if (data.size() != count * dtype_size(dtype)) throw DataError("tensor '" + name + "' has inconsistent byte size");
  std::vector<std::byte> native = data;
  to_little_endian(native.data(), count, dtype_size(dtype));
  if (dtype == DType::F32) {
    Matrix<float> m(rows, cols);
    std::memcpy(m.data(), native.data(), native.size());
    return m.template cast<Scalar>();
  }
  Matrix<double> m(rows, cols);
  std::memcpy(m.data(), native.data(), native.size());
  return m.template cast<Scalar>();
}

template TensorEntry TensorEntry::from_matrix(std::string, const Matrix<float>&);
template TensorEntry TensorEntry::from_matrix(std::string, const Matrix<double>&);
template Matrix<float> TensorEntry::to_matrix() const;
template Matrix<double> TensorEntry::to_matrix() const;

std::vector<std::byte> NamedTensorFile::serialize() const {
  std::vector<std::byte> out;
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  put_le<std::uint32_t>(out, kVersion);
  const std::string meta = metadata.dump();
  put_le<std::uint64_t>(out, meta.size());
  for (char c : meta) out.push_back(static_cast<std::byte>(c));
  put_le<std::uint64_t>(out, tensors.size());
  for (const auto& t : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    for (char c : t.name) out.push_back(static_cast<std::byte>(c));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto dim : t.shape) put_le<std::uint64_t>(out, dim);
    put_le<std::uint64_t>(out, t.data.size());
    out.insert(out.end(), t.data.begin(), t.data.end());
  }
  return out;
}

NamedTensorFile NamedTensorFile::parse(std::span<const std::byte> bytes) {
  Reader in(bytes);
  if (as_string(in.take(sizeof(kMagic))) != std::string(kMagic, sizeof(kMagic))) {
    throw DataError("not a checkpoint file (bad magic)");
  }
  const auto version = in.get_le<std::uint32_t>();
  if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  NamedTensorFile f;
  f.metadata = nlohmann::json::parse(as_string(in.take(in.get_le<std::uint64_t>())));
  const auto count = in.get_le<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorEntry t;
    t.name = as_string(in.take(in.get_le<std::uint32_t>()));
    const auto tag = in.get_le<std::uint8_t>();
    if (tag > static_cast<std::uint8_t>(DType::F64)) throw DataError("tensor '" + t.name + "': unknown dtype");
    t.dtype = static_cast<DType>(tag);
    const auto rank = in.get_le<std::uint32_t>();
    std::uint64_t elements = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.shape.push_back(in.get_le<std::uint64_t>());
      elements *= t.shape.back();
    }
    const auto size = in.get_le<std::uint64_t>();
    if (size != elements * dtype_size(t.dtype)) throw DataError("tensor '" + t.name + "': size does not match shape");
    auto data = in.take(size);
    t.data.assign(data.begin(), data.end());
    if (f.find(t.name)) throw DataError("duplicate tensor '" + t.name + "'");
    f.tensors.push_back(std::move(t));
  }
  if (!in.done()) throw DataError("trailing bytes after the last tensor");
  return f;
}

void NamedTensorFile::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

NamedTensorFile NamedTensorFile::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(std::as_bytes(std::span<const char>(raw)));
}

const TensorEntry* NamedTensorFile::find(std::string_view name) const {
  auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& t) { return t.name == name; });
  return it == tensors.end() ? nullptr : &*it;
}

const TensorEntry& NamedTensorFile::at(std::string_view name) const {
  if (const auto* t = find(name)) return *t;
  throw DataError("checkpoint has no tensor '" + std::string(name) + "'");
}

}  // namespace cocite
