#include <gtest/gtest.h>

#include <algorithm>
#include <string>

#include "slicemoa/slicing.hpp"

using namespace slicemoa;

TEST(SliceLength, StrictlyShorterThanK) {
  EXPECT_TRUE(sf_length("hi"));
  EXPECT_TRUE(sf_length(""));
  EXPECT_FALSE(sf_length("abcdefghij"));
  EXPECT_TRUE(sf_length("abcdefghi"));
  EXPECT_TRUE(sf_length("abc", 4));
}

TEST(SliceLength, CountsCodePointsNotBytes) {
  // "café crème" is 10 code points but 12 bytes.
  EXPECT_EQ(text::utf8_length("caf\xc3\xa9 cr\xc3\xa8me"), 10u);
  EXPECT_FALSE(sf_length("caf\xc3\xa9 cr\xc3\xa8me"));
  EXPECT_TRUE(sf_length("\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9"));  // 6 code points, 12 bytes
}

TEST(SliceSubstring, NoWordBoundary) {
  EXPECT_TRUE(sf_substring("what time is it", "time"));
  EXPECT_FALSE(sf_substring("", "time"));
  EXPECT_TRUE(sf_substring("sometimes", "time"));
  EXPECT_TRUE(sf_substring("send an EMAIL", "email"));
  EXPECT_FALSE(sf_substring("send an EMAIL", "email", false));
}

TEST(SliceLong, SplitOnSingleSpace) {
  EXPECT_TRUE(sf_long("a b c d e f g h i j k"));
  EXPECT_FALSE(sf_long("a b c d e f g h i j"));
  EXPECT_FALSE(sf_long("one two"));
  EXPECT_EQ(text::split_field_count("a  b", ' '), 3u);
  EXPECT_FALSE(sf_long("a  b"));
  EXPECT_TRUE(sf_long("a  b", 2));
  EXPECT_EQ(text::split_field_count("", ' '), 1u);
}

TEST(SliceQuestion, LastCharacter) {
  EXPECT_TRUE(sf_question("is this good?"));
  EXPECT_FALSE(sf_question("is this good? yes"));
  EXPECT_FALSE(sf_question(""));
}

TEST(Schema, IntentMemberships) {
  const auto schema = intent_schema();
  EXPECT_EQ(schema.size(), 4u);
  EXPECT_EQ(schema.names(), (std::vector<std::string>{"base", "length", "time", "email"}));
  EXPECT_EQ(schema.assign("set alarm time"), (SliceMembership{1, 0, 1, 0}));
}

TEST(Schema, AcceptabilityMemberships) {
  const auto schema = acceptability_schema();
  EXPECT_EQ(schema.size(), 3u);
  EXPECT_EQ(schema.assign("ok?"), (SliceMembership{1, 0, 1}));
}

TEST(Schema, BaseOnly) {
  SliceSchema schema;
  EXPECT_EQ(schema.size(), 1u);
  EXPECT_EQ(schema.assign("anything at all"), (SliceMembership{1}));
  EXPECT_EQ(schema.assign(""), (SliceMembership{1}));
}

TEST(Schema, HandAppliedIntentFixture) {
  const auto schema = intent_schema();
  // Each row: text, then length / time / email applied by hand.
  const std::vector<std::pair<std::string, SliceMembership>> fixture{
      {"hi", {1, 1, 0, 0}},
      {"what time is it", {1, 0, 1, 0}},
      {"email mom", {1, 1, 0, 1}},
      {"send an email at this time", {1, 0, 1, 1}},
      {"play some jazz music", {1, 0, 0, 0}},
  };
  for (const auto& [text, gamma] : fixture) EXPECT_EQ(schema.assign(text), gamma) << text;
}

TEST(Schema, RejectsReservedAndDuplicateNames) {
  const auto reg = SliceRegistry::with_builtins();
  SliceSchema schema;
  EXPECT_THROW(schema.add(reg.make("base", "question", {})), ConfigError);
  schema.add(reg.make("q", "question", {}));
  EXPECT_THROW(schema.add(reg.make("q", "long", {})), ConfigError);
  EXPECT_THROW(reg.make("x", "no-such-builtin", {}), ConfigError);
  EXPECT_THROW(reg.make("x", "length", {{"k", "ten"}}), ConfigError);
  EXPECT_THROW(reg.make("x", "contains", {}), ConfigError);
}

TEST(Schema, UserDefinedSlices) {
  auto reg = SliceRegistry::with_builtins();
  reg.add("starts_with", [](const SliceParams& p, const SliceOptions&) -> SlicePredicate {
    return [prefix = p.at("prefix")](std::string_view t) { return t.starts_with(prefix); };
  });
  const auto schema = build_schema({{"pl", "starts_with", {{"prefix", "play"}}}, {"music", "contains", {{"needle", "Music"}}}}, reg);
  EXPECT_EQ(schema.assign("play some jazz music"), (SliceMembership{1, 1, 1}));
  EXPECT_EQ(schema.assign("stop the music"), (SliceMembership{1, 0, 1}));
  EXPECT_EQ(schema.specs()[0], (SliceSpec{"pl", "starts_with", {{"prefix", "play"}}}));
}

TEST(Schema, CaseSensitiveOption) {
  const auto schema = intent_schema(SliceOptions{false});
  EXPECT_EQ(schema.assign("What TIME is it"), (SliceMembership{1, 0, 0, 0}));
  EXPECT_EQ(intent_schema().assign("What TIME is it"), (SliceMembership{1, 0, 1, 0}));
}

TEST(Schema, AssignCommutesWithPermutation) {
  const auto schema = intent_schema();
  std::vector<std::string> texts{"hi", "what time is it", "email me", "a longer utterance without keywords", ""};
  std::vector<SliceMembership> direct;
  for (const auto& t : texts) direct.push_back(schema.assign(t));
  std::vector<std::size_t> perm{3, 0, 4, 2, 1};
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(schema.assign(texts[perm[i]]), direct[perm[i]]);
  for (const auto& g : direct) EXPECT_EQ(g[0], 1);
}
