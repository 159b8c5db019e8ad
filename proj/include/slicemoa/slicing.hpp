#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "slicemoa/error.hpp"

namespace slicemoa {

namespace text {

/// ASCII lowercasing; non-ASCII bytes pass through untouched.
inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

/// Number of Unicode scalar values in UTF-8 text (continuation bytes are not counted).
inline std::size_t utf8_length(std::string_view s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

/// Field count of `s.split(sep)`: empty fields count, so "a  b" has three.
inline std::size_t split_field_count(std::string_view s, char sep) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), sep)) + 1;
}

}  // namespace text

/// Utterance has fewer than `k` characters.
inline bool sf_length(std::string_view text, std::size_t k = 10) { return text::utf8_length(text) < k; }

/// `needle` occurs anywhere in `text`, with no word-boundary requirement.
inline bool sf_substring(std::string_view text, std::string_view needle, bool case_insensitive = true) {
  if (!case_insensitive) return text.find(needle) != std::string_view::npos;
  return text::to_lower(text).find(text::to_lower(needle)) != std::string::npos;
}

/// Sentence has more than `k` single-space-separated fields.
inline bool sf_long(std::string_view text, std::size_t k = 10) { return text::split_field_count(text, ' ') > k; }

inline bool sf_question(std::string_view text) { return !text.empty() && text.back() == '?'; }

using SliceParams = std::map<std::string, std::string>;
using SlicePredicate = std::function<bool(std::string_view)>;

struct SliceFunction {
  std::string name;
  /// Registry key this function was built from ("length", "time", ...).
  std::string builtin;
  SliceParams params;
  SlicePredicate predicate;
};

struct SliceOptions {
  bool case_insensitive = true;
};

/// Declarative description of a user slice, as found in run configuration.
struct SliceSpec {
  std::string name;
  std::string builtin;
  SliceParams params;

  bool operator==(const SliceSpec&) const = default;
};

/// Maps builtin names to predicate factories. Users add their own with `add`.
class SliceRegistry {
 public:
  using Factory = std::function<SlicePredicate(const SliceParams&, const SliceOptions&)>;

  static SliceRegistry with_builtins() {
    SliceRegistry reg;
    reg.add("length", [](const SliceParams& p, const SliceOptions&) -> SlicePredicate {
      const std::size_t k = size_param(p, "k", 10);
      return [k](std::string_view t) { return sf_length(t, k); };
    });
    reg.add("long", [](const SliceParams& p, const SliceOptions&) -> SlicePredicate {
      const std::size_t k = size_param(p, "k", 10);
      return [k](std::string_view t) { return sf_long(t, k); };
    });
    reg.add("question", [](const SliceParams&, const SliceOptions&) -> SlicePredicate { return sf_question; });
    reg.add("contains", [](const SliceParams& p, const SliceOptions& o) -> SlicePredicate {
      auto it = p.find("needle");
      if (it == p.end() || it->second.empty()) throw ConfigError("slice builtin 'contains' needs a 'needle' param");
      return [needle = it->second, ci = o.case_insensitive](std::string_view t) { return sf_substring(t, needle, ci); };
    });
    for (const char* word : {"time", "email"}) {
      reg.add(word, [word](const SliceParams&, const SliceOptions& o) -> SlicePredicate {
        return [word, ci = o.case_insensitive](std::string_view t) { return sf_substring(t, word, ci); };
      });
    }
    return reg;
  }

  void add(std::string name, Factory factory) { factories_[std::move(name)] = std::move(factory); }

  bool contains(const std::string& name) const { return factories_.count(name) != 0; }

  SliceFunction make(std::string name, const std::string& builtin, SliceParams params,
                     const SliceOptions& options = {}) const {
    auto it = factories_.find(builtin);
    if (it == factories_.end()) throw ConfigError("unknown slice builtin '" + builtin + "' for slice '" + name + "'");
    SlicePredicate pred = it->second(params, options);
    return SliceFunction{std::move(name), builtin, std::move(params), std::move(pred)};
  }

 private:
  static std::size_t size_param(const SliceParams& p, const std::string& key, std::size_t fallback) {
    auto it = p.find(key);
    if (it == p.end()) return fallback;
    try {
      std::size_t pos = 0;
      const unsigned long long v = std::stoull(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(key);
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ConfigError("slice param '" + key + "' must be a non-negative integer, got '" + it->second + "'");
    }
  }

  std::map<std::string, Factory> factories_;
};

/// Binary slice membership; slot 0 is the base slice and is always 1.
using SliceMembership = std::vector<std::uint8_t>;

/// Ordered slice set. Slot 0 is the implicit "base" slice covering every sample.
class SliceSchema {
 public:
  static constexpr std::string_view kBaseName = "base";

  SliceSchema() = default;

  explicit SliceSchema(std::vector<SliceFunction> slices) {
    for (auto& sf : slices) add(std::move(sf));
  }

  void add(SliceFunction sf) {
    if (sf.name.empty()) throw ConfigError("slice name must not be empty");
    if (sf.name == kBaseName) throw ConfigError("slice name 'base' is reserved for slot 0");
    for (const auto& existing : slices_) {
      if (existing.name == sf.name) throw ConfigError("duplicate slice name '" + sf.name + "'");
    }
    if (!sf.predicate) throw ConfigError("slice '" + sf.name + "' has no predicate");
    slices_.push_back(std::move(sf));
  }

  /// Number of slices including base.
  std::size_t size() const { return slices_.size() + 1; }

  std::vector<std::string> names() const {
    std::vector<std::string> out{std::string(kBaseName)};
    for (const auto& sf : slices_) out.push_back(sf.name);
    return out;
  }

  /// User slices, i.e. slots 1..k-1.
  const std::vector<SliceFunction>& functions() const { return slices_; }

  std::vector<SliceSpec> specs() const {
    std::vector<SliceSpec> out;
    for (const auto& sf : slices_) out.push_back({sf.name, sf.builtin, sf.params});
    return out;
  }

  SliceMembership assign(std::string_view text) const {
    SliceMembership gamma(size(), 0);
    gamma[0] = 1;
    for (std::size_t i = 0; i < slices_.size(); ++i) gamma[i + 1] = slices_[i].predicate(text) ? 1 : 0;
    return gamma;
  }

 private:
  std::vector<SliceFunction> slices_;
};

inline SliceSchema build_schema(const std::vector<SliceSpec>& specs, const SliceRegistry& registry,
                                const SliceOptions& options = {}) {
  SliceSchema schema;
  for (const auto& spec : specs) schema.add(registry.make(spec.name, spec.builtin, spec.params, options));
  return schema;
}

/// {base, length, time, email}: short utterances, "time" and "email" mentions.
inline SliceSchema intent_schema(const SliceOptions& options = {}) {
  const auto reg = SliceRegistry::with_builtins();
  SliceSchema schema;
  schema.add(reg.make("length", "length", {{"k", "10"}}, options));
  schema.add(reg.make("time", "time", {}, options));
  schema.add(reg.make("email", "email", {}, options));
  return schema;
}

/// {base, long, question}: long sentences and questions.
inline SliceSchema acceptability_schema(const SliceOptions& options = {}) {
  const auto reg = SliceRegistry::with_builtins();
  SliceSchema schema;
  schema.add(reg.make("long", "long", {{"k", "10"}}, options));
  schema.add(reg.make("question", "question", {}, options));
  return schema;
}

}  // namespace slicemoa
