#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "slicemoa/cache.hpp"
#include "slicemoa/data.hpp"
#include "slicemoa/featurize.hpp"
#include "slicemoa/tensor.hpp"

namespace slicemoa {

/// Source of fixed-length sample representations.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> embed(const Record& record) const = 0;
};

class HashingBackbone final : public Backbone {
 public:
  explicit HashingBackbone(std::size_t dim) : dim_(dim) {
    if (dim < 16) throw ParameterError("hashing backbone dimension must be at least 16");
  }
  std::size_t dim() const override { return dim_; }
  std::vector<double> embed(const Record& record) const override { return hashing_featurize(record.text, dim_); }

 private:
  std::size_t dim_;
};

/// Looks embeddings up by record id; values are promoted from f32 unchanged.
class CacheBackbone final : public Backbone {
 public:
  explicit CacheBackbone(EmbeddingCache cache) : cache_(std::move(cache)) {}
  std::size_t dim() const override { return cache_.dim(); }
  std::vector<double> embed(const Record& record) const override {
    const auto row = cache_.row(record.id);
    return std::vector<double>(row.begin(), row.end());
  }
  const EmbeddingCache& cache() const { return cache_; }

 private:
  EmbeddingCache cache_;
};

/// Row-major [n x d] embedding matrix for a list of records.
inline std::vector<double> embed_all(const Backbone& backbone, std::span<const Record> records) {
  std::vector<double> out;
  out.reserve(records.size() * backbone.dim());
  for (const auto& r : records) {
    const auto v = backbone.embed(r);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

}  // namespace slicemoa
