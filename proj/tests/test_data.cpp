#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "slicemoa/backbone.hpp"
#include "slicemoa/cache.hpp"
#include "slicemoa/checkpoint.hpp"
#include "slicemoa/data.hpp"
#include "slicemoa/featurize.hpp"
#include "support/tempdir.hpp"

using namespace slicemoa;
using slicemoa::testing::TempDir;

namespace {

TextDataset parse(const std::string& text, LoadOptions opt = {}) {
  std::istringstream in(text);
  return parse_dataset(in, opt);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::size_t count_label(const std::vector<std::size_t>& labels, const std::vector<std::size_t>& part, std::size_t c) {
  std::size_t n = 0;
  for (auto i : part) n += labels[i] == c ? 1 : 0;
  return n;
}

}  // namespace

TEST(Dataset, TsvFixture) {
  const auto ds = parse("id\ttext\tlabel\na\tset an alarm\talarm\nb\twhat time is it\tquery\nc\twake me up\talarm\n");
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.num_classes(), 2u);
  EXPECT_EQ(ds.labels, (std::vector<std::string>{"alarm", "query"}));
  EXPECT_EQ(ds.records[1], (Record{"b", "what time is it", 1}));
  EXPECT_EQ(ds.label_indices(), (std::vector<std::size_t>{0, 1, 0}));
}

TEST(Dataset, DefaultIdsAreRowNumbers) {
  const auto ds = parse("text\tlabel\nx\t1\ny\t0\n");
  EXPECT_EQ(ds.records[0].id, "1");
  EXPECT_EQ(ds.records[1].id, "2");
  EXPECT_EQ(ds.labels, (std::vector<std::string>{"1", "0"}));
}

TEST(Dataset, DuplicateIdNamesLine) {
  try {
    parse("id\ttext\tlabel\na\tx\t0\na\ty\t1\n");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("duplicate id 'a'"), std::string::npos);
  }
}

TEST(Dataset, BadRowsNameLine) {
  try {
    parse("id\ttext\tlabel\na\tx\t0\nb\tonly-two\n");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  try {
    LoadOptions opt;
    opt.format = DatasetFormat::jsonl;
    parse("{\"text\": \"ok\", \"label\": \"a\"}\n{not json}\n", opt);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse("id\tlabel\na\t0\n"), DataError);
}

TEST(Dataset, UnknownLabelWithFixedVocabulary) {
  LoadOptions opt;
  opt.vocabulary = std::vector<std::string>{"neg", "pos"};
  const auto ds = parse("text\tlabel\nfine\tpos\n", opt);
  EXPECT_EQ(ds.records[0].label, 1u);
  EXPECT_EQ(ds.num_classes(), 2u);
  try {
    parse("text\tlabel\nfine\tpos\nhmm\tmixed\n", opt);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("unknown label 'mixed'"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Dataset, CsvQuotingAndCustomColumns) {
  LoadOptions opt;
  opt.format = DatasetFormat::csv;
  opt.text_col = "sentence";
  opt.label_col = "acceptable";
  opt.id_col = "uid";
  const auto ds = parse("uid,sentence,acceptable\r\n7,\"Hello, \"\"world\"\"\",1\r\n8,\"two\nlines\",0\r\n9,plain,1\r\n", opt);
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.records[0].text, "Hello, \"world\"");
  EXPECT_EQ(ds.records[1].text, "two\nlines");
  EXPECT_EQ(ds.records[2].id, "9");
}

TEST(Dataset, Lowercasing) {
  LoadOptions opt;
  opt.lowercase = true;
  EXPECT_EQ(parse("text\tlabel\nWhat TIME\tA\n", opt).records[0].text, "what time");
  EXPECT_EQ(parse("text\tlabel\nWhat TIME\tA\n").records[0].text, "What TIME");
}

TEST(Dataset, RoundTripAllFormats) {
  TextDataset ds;
  ds.labels = {"neg", "pos", "neutral"};
  ds.records = {{"r1", "plain text", 0}, {"r2", "commas, and \"quotes\"", 1}, {"r3", "unicode caf\xc3\xa9 ok?", 2}};
  for (auto fmt : {DatasetFormat::tsv, DatasetFormat::csv, DatasetFormat::jsonl}) {
    LoadOptions opt;
    opt.format = fmt;
    std::stringstream ss;
    write_dataset(ss, ds, opt);
    const auto back = parse_dataset(ss, opt);
    EXPECT_EQ(back.records, ds.records) << to_string(fmt);
    EXPECT_EQ(back.labels, ds.labels) << to_string(fmt);
  }
  TextDataset multiline{{{"m", "line one\nline two", 0}}, {"a"}};
  LoadOptions csv;
  csv.format = DatasetFormat::csv;
  std::stringstream ss;
  write_dataset(ss, multiline, csv);
  EXPECT_EQ(parse_dataset(ss, csv).records, multiline.records);
  std::stringstream bad;
  EXPECT_THROW(write_dataset(bad, multiline), DataError);
}

TEST(Dataset, VocabularyRoundTrip) {
  std::stringstream ss;
  write_vocabulary(ss, {"b", "a", "c"});
  EXPECT_EQ(read_vocabulary(ss), (std::vector<std::string>{"b", "a", "c"}));
}

TEST(Split, HandAllocatedProportions) {
  std::vector<std::size_t> labels;
  for (int i = 0; i < 60; ++i) labels.push_back(0);
  for (int i = 0; i < 40; ++i) labels.push_back(1);
  const auto r = stratified_split(labels, 2, SplitSpec::from_fractions({0.7, 0.1, 0.2}), 1);
  ASSERT_EQ(r.parts.size(), 3u);
  EXPECT_EQ(count_label(labels, r.parts[0], 0), 42u);
  EXPECT_EQ(count_label(labels, r.parts[0], 1), 28u);
  EXPECT_EQ(count_label(labels, r.parts[1], 0), 6u);
  EXPECT_EQ(count_label(labels, r.parts[1], 1), 4u);
  EXPECT_EQ(count_label(labels, r.parts[2], 0), 12u);
  EXPECT_EQ(count_label(labels, r.parts[2], 1), 8u);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Split, AllToTrain) {
  std::vector<std::size_t> labels{0, 1, 1, 0, 1};
  const auto r = stratified_split(labels, 2, SplitSpec::from_fractions({1, 0, 0}), 3);
  EXPECT_EQ(r.parts[0], (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_TRUE(r.parts[1].empty());
  EXPECT_TRUE(r.parts[2].empty());
}

TEST(Split, SeedDeterminism) {
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 500; ++i) labels.push_back(i % 3);
  const auto spec = SplitSpec::from_fractions({0.7, 0.1, 0.2});
  EXPECT_EQ(stratified_split(labels, 3, spec, 9).parts, stratified_split(labels, 3, spec, 9).parts);
  EXPECT_NE(stratified_split(labels, 3, spec, 9).parts, stratified_split(labels, 3, spec, 10).parts);
}

TEST(Split, Errors) {
  EXPECT_THROW(stratified_split(std::vector<std::size_t>{}, 2, SplitSpec::from_fractions({1}), 0), ConfigError);
  EXPECT_THROW(stratified_split(std::vector<std::size_t>{0, 1}, 2, SplitSpec::from_counts({2, 1}), 0), ConfigError);
  EXPECT_THROW(stratified_split(std::vector<std::size_t>{0, 1}, 2, SplitSpec::from_fractions({0.5, 0.4}), 0), ConfigError);
  const auto r = stratified_split(std::vector<std::size_t>{0, 0, 0, 0, 0, 0, 1}, 2, SplitSpec::from_fractions({0.5, 0.25, 0.25}), 0);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(Split, RandomConfigurationsStayWithinOneSample) {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t classes = 2 + rng.index(6);
    const std::size_t n = 20 + rng.index(400);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = rng.index(classes) == 0 ? 0 : rng.index(classes);
    std::vector<std::size_t> class_n(classes, 0);
    for (auto l : labels) ++class_n[l];
    SplitSpec spec;
    if (trial % 2 == 0) {
      spec = SplitSpec::from_fractions({0.7, 0.1, 0.2});
    } else {
      const std::size_t a = rng.index(n / 2 + 1), b = rng.index(n / 4 + 1), c = rng.index(n / 4 + 1);
      spec = SplitSpec::from_counts({a, b, c});
    }
    const auto r = stratified_split(labels, classes, spec, trial);
    std::set<std::size_t> seen;
    for (std::size_t s = 0; s < r.parts.size(); ++s) {
      for (auto i : r.parts[s]) ASSERT_TRUE(seen.insert(i).second) << "index in two splits";
      if (!spec.counts.empty()) {
        ASSERT_EQ(r.parts[s].size(), spec.counts[s]);
      }
      for (std::size_t c = 0; c < classes; ++c) {
        const double expected = static_cast<double>(class_n[c]) * r.parts[s].size() / n;
        ASSERT_LT(std::abs(static_cast<double>(count_label(labels, r.parts[s], c)) - expected), 1.0);
      }
    }
    if (spec.counts.empty()) {
      ASSERT_EQ(seen.size(), n);
    }
  }
}

TEST(Featurize, ZeroUnitAndDeterministic) {
  EXPECT_EQ(hashing_featurize("", 32), std::vector<double>(32, 0.0));
  EXPECT_EQ(hashing_featurize("   ", 32), std::vector<double>(32, 0.0));
  for (const char* t : {"send email", "a", "what time is it?", "caf\xc3\xa9 !!"}) {
    const auto v = hashing_featurize(t, 32);
    double norm = 0;
    for (double x : v) norm += x * x;
    EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-6) << t;
  }
  const auto a = hashing_featurize("send email", 64), b = hashing_featurize("send email", 64);
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
  EXPECT_EQ(hashing_featurize("Send EMAIL", 64), a);
  EXPECT_THROW(hashing_featurize("x", 15), ParameterError);
}

TEST(Featurize, QuestionMarkIsAToken) {
  EXPECT_EQ(hashing_tokens("Is it good?"), (std::vector<std::string>{"is", "it", "good", "?"}));
  EXPECT_NE(hashing_featurize("is it good?", 32), hashing_featurize("is it good.", 32));
}

TEST(Cache, GoldenBytes) {
  const EmbeddingCache cache(2, {"a", "bc"}, {1.0f, -2.0f, 0.5f, 0.0f});
  const std::string bytes = encode_cache(cache);
  const unsigned char expected[] = {
      'S', 'L', 'C', 'E', 1, 0, 0, 0,                 // magic, version
      2, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0,             // d, count
      1, 0, 0, 0, 'a', 2, 0, 0, 0, 'b', 'c',          // ids
      0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0,  // 1.0f, -2.0f
      0x00, 0x00, 0x00, 0x3f, 0x00, 0x00, 0x00, 0x00,  // 0.5f, 0.0f
  };
  ASSERT_EQ(bytes.size(), sizeof expected);
  EXPECT_EQ(std::memcmp(bytes.data(), expected, sizeof expected), 0);
}

TEST(Cache, FileRoundTripIsBitExact) {
  TempDir dir;
  Rng rng(12);
  std::vector<std::string> ids;
  std::vector<float> m(5 * 8);
  for (int i = 0; i < 5; ++i) ids.push_back("s" + std::to_string(i));
  for (float& v : m) v = static_cast<float>(rng.uniform(-3, 3));
  m[3] = -0.0f;
  m[7] = std::numeric_limits<float>::denorm_min();
  write_cache(dir / "emb.slce", EmbeddingCache(8, ids, m));
  const auto back = read_cache(dir / "emb.slce");
  EXPECT_EQ(back.dim(), 8u);
  EXPECT_EQ(back.ids(), ids);
  ASSERT_EQ(back.matrix().size(), m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    ASSERT_EQ(std::bit_cast<std::uint32_t>(back.matrix()[i]), std::bit_cast<std::uint32_t>(m[i])) << i;
  }
  EXPECT_EQ(back.row("s2")[0], m[16]);
}

namespace {

CacheError::Kind decode_kind(const std::string& bytes) {
  try {
    decode_cache(bytes);
  } catch (const CacheError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error";
  return CacheError::Kind::io;
}

}  // namespace

TEST(Cache, DistinctErrorKinds) {
  const std::string good = encode_cache(EmbeddingCache(2, {"a", "b"}, {1, 2, 3, 4}));
  EXPECT_EQ(decode_kind(good.substr(0, good.size() - 1)), CacheError::Kind::bad_length);
  EXPECT_EQ(decode_kind(good + "x"), CacheError::Kind::bad_length);
  std::string magic = good;
  magic[0] = 'X';
  EXPECT_EQ(decode_kind(magic), CacheError::Kind::bad_magic);
  std::string version = good;
  version[4] = 2;
  EXPECT_EQ(decode_kind(version), CacheError::Kind::bad_version);
  EXPECT_EQ(decode_kind(good.substr(0, 10)), CacheError::Kind::bad_length);
  EXPECT_EQ(decode_kind(encode_cache(EmbeddingCache(1, {"aa", "ab"}, {1, 2})).replace(30, 2, "aa")),
            CacheError::Kind::duplicate_id);

  const auto cache = decode_cache(good);
  try {
    cache.row("zzz");
    FAIL();
  } catch (const CacheError& e) {
    EXPECT_EQ(e.kind(), CacheError::Kind::missing_id);
    EXPECT_NE(std::string(e.what()).find("'zzz'"), std::string::npos);
  }
  TempDir dir;
  try {
    read_cache(dir / "nope.slce");
    FAIL();
  } catch (const CacheError& e) {
    EXPECT_EQ(e.kind(), CacheError::Kind::io);
  }
  EXPECT_THROW(EmbeddingCache(2, {"a"}, {1, 2, 3}), CacheError);
}

TEST(Backbones, CacheAndHashing) {
  const EmbeddingCache cache(2, {"x", "y"}, {0.25f, 0.5f, -1.0f, 2.0f});
  CacheBackbone cb(cache);
  const std::vector<Record> records{{"y", "ignored", 0}, {"x", "", 1}};
  EXPECT_EQ(embed_all(cb, records), (std::vector<double>{-1.0, 2.0, 0.25, 0.5}));
  EXPECT_THROW(cb.embed(Record{"q", "", 0}), CacheError);
  HashingBackbone hb(16);
  EXPECT_EQ(hb.embed(Record{"1", "hello", 0}), hashing_featurize("hello", 16));
  EXPECT_THROW(HashingBackbone(8), ParameterError);
}

TEST(Checkpoint, RoundTripAndValidation) {
  TempDir dir;
  ModelConfig cfg;
  cfg.kind = ModelKind::sbl_moa;
  cfg.input_dim = 4;
  cfg.num_slices = 3;
  cfg.num_classes = 2;
  cfg.moa.phi = Phi::gumbel_soft;
  cfg.moa.tau = 0.5;
  Rng rng(3);
  SliceModel model(cfg, rng);
  ModelMetadata meta{cfg, {{"long", "long", {{"k", "10"}}}, {"question", "question", {}}}, {}, {"0", "1"}, "hashing:4"};
  save_checkpoint(dir / "m.ckpt", model, meta);
  const auto loaded = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(loaded.meta.slices, meta.slices);
  EXPECT_EQ(loaded.meta.config.moa.phi, Phi::gumbel_soft);
  EXPECT_EQ(loaded.meta.config.moa.tau, 0.5);
  EXPECT_EQ(loaded.meta.backbone, "hashing:4");
  ASSERT_EQ(loaded.model.parameters().size(), model.parameters().size());
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    EXPECT_EQ(loaded.model.parameters()[i].value.values(), model.parameters()[i].value.values());
  }
  EXPECT_EQ(encode_checkpoint(loaded.model.parameters()), slurp(dir / "m.ckpt"));

  const std::string bytes = encode_checkpoint(model.parameters());
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
  EXPECT_THROW(decode_checkpoint("XXXX" + bytes.substr(4)), DataError);

  auto tensors = decode_checkpoint(bytes);
  tensors[0].shape = {2, 6};
  Rng other(4);
  SliceModel copy(cfg, other);
  EXPECT_THROW(load_parameters(copy, tensors), ContractError);
}
