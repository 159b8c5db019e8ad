#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "slicemoa/error.hpp"
#include "slicemoa/random.hpp"
#include "slicemoa/slicing.hpp"

namespace slicemoa {

namespace detail {

inline constexpr std::uint64_t kFeatureHashSeed = 0x51ce5eedULL;

inline bool is_word_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c >= 0x80;
}

}  // namespace detail

/// Lowercased tokens: runs of ASCII alphanumerics (and any non-ASCII bytes) form words;
/// every other non-whitespace character is a token of its own.
inline std::vector<std::string> hashing_tokens(std::string_view raw) {
  const std::string s = text::to_lower(raw);
  std::vector<std::string> tokens;
  std::string word;
  for (unsigned char c : s) {
    if (detail::is_word_byte(c)) {
      word += static_cast<char>(c);
      continue;
    }
    if (!word.empty()) tokens.push_back(std::move(word));
    word.clear();
    if (c != ' ' && c != '\t' && c != '\n' && c != '\r' && c != '\f' && c != '\v') tokens.emplace_back(1, static_cast<char>(c));
  }
  if (!word.empty()) tokens.push_back(std::move(word));
  return tokens;
}

/// Signed feature hashing of unigrams and bigrams into `d` buckets, L2-normalised.
///
/// Uses a fixed 64-bit hash, so vectors are identical across runs and platforms.
/// Text without tokens maps to the zero vector (left unnormalised).
inline std::vector<double> hashing_featurize(std::string_view text, std::size_t d) {
  if (d < 16) throw ParameterError("hashing_featurize: dimension must be at least 16, got " + std::to_string(d));
  std::vector<double> out(d, 0.0);
  const auto tokens = hashing_tokens(text);
  auto put = [&](std::string_view feature) {
    const std::uint64_t h = splitmix64(fnv1a64(feature, 0xcbf29ce484222325ULL ^ detail::kFeatureHashSeed));
    const double sign = (splitmix64(h) >> 63) != 0 ? -1.0 : 1.0;
    out[h % d] += sign;
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    put(tokens[i]);
    // A space never occurs inside a token, so bigrams cannot collide with unigrams.
    if (i + 1 < tokens.size()) put(tokens[i] + " " + tokens[i + 1]);
  }
  double norm = 0.0;
  for (double v : out) norm += v * v;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& v : out) v /= norm;
  }
  return out;
}

}  // namespace slicemoa
