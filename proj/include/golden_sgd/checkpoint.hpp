#pragma once

// Flat binary checkpoint of named tensors.
//
//   magic   "GSGD"
//   version u32
//   count   u32
//   per tensor:
//     name length u32, name bytes (UTF-8, no terminator)
//     rank u64, dims u64 x rank
//     values f64 x prod(dims)
//
// All integers and reals are little-endian; reals are IEEE-754 binary64
// and round-trip bit-exactly.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "golden_sgd/errors.hpp"
#include "golden_sgd/tensor.hpp"

namespace golden_sgd {

inline constexpr char kCheckpointMagic[4] = {'G', 'S', 'G', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get_le(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw TruncationError(std::string("checkpoint truncated while reading ") + what);
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(std::span<const NamedTensor> tensors) {
  std::string out(kCheckpointMagic, 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_le<std::uint64_t>(out, t.rank());
    for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(out, d);
    for (double v : t.data()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline std::vector<NamedTensor> decode_checkpoint(std::string_view bytes) {
  detail::ByteReader in(bytes);
  if (in.take(4, "magic") != std::string_view(kCheckpointMagic, 4)) {
    throw FormatError("not a GSGD checkpoint (bad magic)");
  }
  const auto version = in.get_le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = in.get_le<std::uint32_t>("tensor count");
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = in.get_le<std::uint32_t>("name length");
    std::string name(in.take(name_len, "name"));
    const auto rank = in.get_le<std::uint64_t>("rank");
    if (rank > 16) throw FormatError("implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = in.get_le<std::uint64_t>("dimension");
      if (d == 0) throw FormatError("zero dimension in tensor '" + name + "'");
      n *= d;
    }
    if (n > (bytes.size() / 8)) throw TruncationError("checkpoint truncated in tensor '" + name + "'");
    std::vector<double> values(n);
    for (auto& v : values) v = std::bit_cast<double>(in.get_le<std::uint64_t>("values"));
    tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  if (!in.done()) throw FormatError("trailing bytes after last checkpoint tensor");
  return tensors;
}

inline void write_checkpoint(const std::string& path, std::span<const NamedTensor> tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  const auto bytes = encode_checkpoint(tensors);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

inline std::vector<NamedTensor> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

// Copies checkpoint values into `params` by name; shapes must agree.
inline void load_into(std::span<NamedTensor> params, std::span<const NamedTensor> saved) {
  for (auto& p : params) {
    auto it = std::find_if(saved.begin(), saved.end(), [&](const NamedTensor& s) { return s.name == p.name; });
    if (it == saved.end()) throw ConsistencyError("checkpoint lacks tensor '" + p.name + "'");
    if (it->tensor.shape() != p.tensor.shape()) {
      throw ShapeError("checkpoint tensor '" + p.name + "' has shape " + shape_to_string(it->tensor.shape()) +
                       ", expected " + shape_to_string(p.tensor.shape()));
    }
    std::copy(it->tensor.data().begin(), it->tensor.data().end(), p.tensor.data().begin());
  }
}

}  // namespace golden_sgd
