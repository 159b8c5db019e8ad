#pragma once

// Synthetic text fixtures built from small hand-written vocabularies.

#include <string>
#include <vector>

#include "slicemoa/data.hpp"
#include "slicemoa/featurize.hpp"
#include "slicemoa/random.hpp"
#include "slicemoa/slicing.hpp"
#include "slicemoa/training.hpp"

namespace slicemoa::testing {

/// Polarity task: a sentence's label is the polarity of its cue word. Questions end in
/// '?' and carry the opposite label, everything else ends in '.'.
///
/// Cue and subject words were picked so that no two of them share a signed bucket under
/// 32-dimensional hashing; otherwise the task itself would carry label noise.
inline TextDataset polarity_dataset(std::size_t n, double question_rate, std::uint64_t seed) {
  static const std::vector<std::string> positive{"superb", "pleasant", "brilliant", "excellent"};
  static const std::vector<std::string> negative{"terrible", "poor", "horrible", "dismal"};
  static const std::vector<std::string> subjects{"movie", "meal", "trip", "album", "book", "concert", "song", "story"};
  Rng rng(seed, "polarity-fixture");
  TextDataset ds;
  ds.labels = {"neg", "pos"};
  const std::size_t questions = static_cast<std::size_t>(question_rate * static_cast<double>(n) + 0.5);
  std::vector<std::size_t> is_question(n, 0);
  for (std::size_t i = 0; i < questions; ++i) is_question[i] = 1;
  rng.shuffle(is_question);
  for (std::size_t i = 0; i < n; ++i) {
    const bool pos = rng.index(2) == 1;
    const auto& words = pos ? positive : negative;
    const std::string subject = subjects[rng.index(subjects.size())];
    const std::string cue = words[rng.index(words.size())];
    std::size_t label = pos ? 1 : 0;
    std::string text;
    if (is_question[i]) {
      text = "was the " + subject + " " + cue + "?";
      label = 1 - label;
    } else {
      text = "the " + subject + " was " + cue + ".";
    }
    ds.records.push_back(Record{std::to_string(i + 1), text, label});
  }
  return ds;
}

inline LabeledSplit embed_split(const TextDataset& ds, const SliceSchema& schema, std::size_t d) {
  LabeledSplit out;
  out.dim = d;
  for (const auto& r : ds.records) {
    const auto v = hashing_featurize(r.text, d);
    out.features.insert(out.features.end(), v.begin(), v.end());
    out.memberships.push_back(schema.assign(r.text));
    out.labels.push_back(r.label);
  }
  return out;
}

/// Linearly separable two-class points in R^d: label = [w . x > 0] with a margin.
inline LabeledSplit separable_split(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed, "separable");
  std::vector<double> w(d);
  for (double& v : w) v = rng.uniform(-1, 1);
  LabeledSplit out;
  out.dim = d;
  while (out.size() < n) {
    std::vector<double> x(d);
    double dot = 0;
    for (std::size_t j = 0; j < d; ++j) {
      x[j] = rng.uniform(-1, 1);
      dot += w[j] * x[j];
    }
    if (std::abs(dot) < 0.1) continue;
    out.features.insert(out.features.end(), x.begin(), x.end());
    out.labels.push_back(dot > 0 ? 1 : 0);
    out.memberships.push_back(SliceMembership{1});
  }
  return out;
}

}  // namespace slicemoa::testing
