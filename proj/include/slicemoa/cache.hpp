#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "slicemoa/error.hpp"

namespace slicemoa {

/// Embedding cache file layout (all integers little-endian):
///
///   bytes 0..3   magic "SLCE"
///   u32          format version (1)
///   u32          d, embedding width
///   u64          count, number of rows
///   count times: u32 id byte length, then the UTF-8 id bytes
///   count * d    f32 values, row-major, IEEE-754 binary32 little-endian
///
/// The file ends exactly after the last value.
inline constexpr char kCacheMagic[4] = {'S', 'L', 'C', 'E'};
inline constexpr std::uint32_t kCacheVersion = 1;

class CacheError : public DataError {
 public:
  enum class Kind { io, bad_magic, bad_version, bad_length, missing_id, duplicate_id, bad_shape };

  CacheError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class EmbeddingCache {
 public:
  EmbeddingCache() = default;

  EmbeddingCache(std::size_t dim, std::vector<std::string> ids, std::vector<float> matrix)
      : dim_(dim), ids_(std::move(ids)), matrix_(std::move(matrix)) {
    if (dim_ == 0) throw CacheError(CacheError::Kind::bad_shape, "embedding cache: d must be positive");
    if (matrix_.size() != ids_.size() * dim_) {
      throw CacheError(CacheError::Kind::bad_shape, "embedding cache: matrix has " + std::to_string(matrix_.size()) +
                                                        " values for " + std::to_string(ids_.size()) + " x " +
                                                        std::to_string(dim_));
    }
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (!index_.emplace(ids_[i], i).second) {
        throw CacheError(CacheError::Kind::duplicate_id, "embedding cache: duplicate id '" + ids_[i] + "'");
      }
    }
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<float>& matrix() const { return matrix_; }

  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  std::span<const float> row(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw CacheError(CacheError::Kind::missing_id, "embedding cache: missing id '" + id + "'");
    return std::span<const float>(matrix_).subspan(it->second * dim_, dim_);
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> matrix_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::string_view bytes, std::size_t offset) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace detail

inline std::string encode_cache(const EmbeddingCache& cache) {
  std::string out(kCacheMagic, 4);
  detail::put_le<std::uint32_t>(out, kCacheVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cache.dim()));
  detail::put_le<std::uint64_t>(out, cache.size());
  for (const auto& id : cache.ids()) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
    out += id;
  }
  for (float v : cache.matrix()) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline EmbeddingCache decode_cache(std::string_view bytes) {
  using K = CacheError::Kind;
  const std::size_t header = 4 + 4 + 4 + 8;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCacheMagic, 4) != 0) {
    throw CacheError(K::bad_magic, "embedding cache: bad magic (expected \"SLCE\")");
  }
  if (bytes.size() < header) throw CacheError(K::bad_length, "embedding cache: truncated header");
  const auto version = detail::get_le<std::uint32_t>(bytes, 4);
  if (version != kCacheVersion) {
    throw CacheError(K::bad_version, "embedding cache: unsupported version " + std::to_string(version));
  }
  const std::size_t dim = detail::get_le<std::uint32_t>(bytes, 8);
  const auto count = detail::get_le<std::uint64_t>(bytes, 12);
  std::size_t pos = header;
  std::vector<std::string> ids;
  for (std::uint64_t i = 0; i < count; ++i) {
    if (pos + 4 > bytes.size()) throw CacheError(K::bad_length, "embedding cache: truncated id table");
    const std::size_t len = detail::get_le<std::uint32_t>(bytes, pos);
    pos += 4;
    if (pos + len > bytes.size()) throw CacheError(K::bad_length, "embedding cache: truncated id table");
    ids.emplace_back(bytes.substr(pos, len));
    pos += len;
  }
  const std::size_t expected = pos + static_cast<std::size_t>(count) * dim * 4;
  if (bytes.size() != expected) {
    throw CacheError(K::bad_length, "embedding cache: file has " + std::to_string(bytes.size()) + " bytes, header implies " +
                                        std::to_string(expected));
  }
  std::vector<float> matrix(static_cast<std::size_t>(count) * dim);
  for (float& v : matrix) {
    v = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, pos));
    pos += 4;
  }
  return EmbeddingCache(dim, std::move(ids), std::move(matrix));
}

inline void write_cache(const std::filesystem::path& path, const EmbeddingCache& cache) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CacheError(CacheError::Kind::io, "cannot write embedding cache '" + path.string() + "'");
  const std::string bytes = encode_cache(cache);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CacheError(CacheError::Kind::io, "short write to '" + path.string() + "'");
}

inline EmbeddingCache read_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CacheError(CacheError::Kind::io, "cannot open embedding cache '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_cache(bytes);
}

}  // namespace slicemoa
