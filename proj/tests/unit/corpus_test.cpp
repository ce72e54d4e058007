#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "gecadapt/corpus.hpp"
#include "gecadapt/error.hpp"
#include "oracles.hpp"

using namespace gecadapt;

namespace {

AnnotatedSentence sentence(L1 l1, Level level, std::size_t tokens, std::size_t edits) {
  AnnotatedSentence s;
  s.l1 = l1;
  s.level = level;
  for (std::size_t i = 0; i < tokens; ++i) s.source.push_back("w" + std::to_string(i));
  for (std::size_t e = 0; e < edits; ++e)
    s.edits.push_back({e, e + 1, {"x"}, ErrorType::Noun});
  s.target = apply_edits(s.source, s.edits);
  return s;
}

Corpus grid(std::size_t per_cell) {
  Corpus c;
  for (L1 l1 : {L1::ES, L1::CN, L1::DE})
    for (Level lv : {Level::A2, Level::B1, Level::B2})
      for (std::size_t i = 0; i < per_cell; ++i) c.push_back(sentence(l1, lv, 3 + i % 4, i % 2));
  return c;
}

}  // namespace

TEST(Tokenize, DetachesPunctuationAndKeepsCase) {
  EXPECT_EQ(tokenize("He said: \"Go home!\""),
            (Tokens{"He", "said", ":", "\"", "Go", "home", "!", "\""}));
  EXPECT_EQ(tokenize("don't well-known"), (Tokens{"don't", "well-known"}));
  EXPECT_TRUE(tokenize("   ").empty());
}

TEST(Edits, ApplyReplacesInsertsAndDeletes) {
  const Tokens src{"I", "go", "to", "school"};
  const std::vector<Edit> edits{{0, 0, {"Yesterday"}, ErrorType::Other},
                                {1, 2, {"went"}, ErrorType::Tense},
                                {2, 3, {}, ErrorType::Prep}};
  EXPECT_EQ(apply_edits(src, edits), (Tokens{"Yesterday", "I", "went", "school"}));
}

TEST(Edits, ValidationRejectsOverlapAndBadSpans) {
  const std::vector<Edit> overlap{{0, 2, {"a"}}, {1, 3, {"b"}}};
  EXPECT_THROW(validate_edits(overlap, 4), ValidationError);
  const std::vector<Edit> out_of_range{{3, 5, {"a"}}};
  EXPECT_THROW(validate_edits(out_of_range, 4), ValidationError);
  const std::vector<Edit> two_inserts{{1, 1, {"a"}}, {1, 1, {"b"}}};
  EXPECT_THROW(validate_edits(two_inserts, 4), ValidationError);
  const std::vector<Edit> insert_then_replace{{1, 1, {"a"}}, {1, 2, {"b"}}};
  EXPECT_NO_THROW(validate_edits(insert_then_replace, 4));
}

TEST(Codes, RoundTrip) {
  for (L1 l : kStudiedL1s) EXPECT_EQ(parse_l1(to_string(l)), l);
  for (Level l : kAllLevels) EXPECT_EQ(parse_level(to_string(l)), l);
  for (int t = 0; t < kNumErrorTypes; ++t) {
    const auto type = static_cast<ErrorType>(t);
    EXPECT_EQ(parse_error_type(to_string(type)), type);
  }
  EXPECT_THROW(parse_l1("XX"), ValidationError);
  EXPECT_THROW(parse_level("D1"), ValidationError);
}

TEST(SubsetKey, NamesParseBack) {
  for (const char* name : {"ES-A2", "ES", "A2"}) EXPECT_EQ(parse_key(name).name(), name);
  EXPECT_TRUE(parse_key("CN-B2").is_l1_level());
  EXPECT_FALSE(parse_key("CN").is_l1_level());
}

TEST(SelectSubset, FiltersByLevel) {
  Corpus c;
  for (int i = 0; i < 3; ++i) c.push_back(sentence(L1::ES, Level::B1, 4 + i, 0));
  for (int i = 0; i < 2; ++i) c.push_back(sentence(L1::ES, Level::C1, 4, 0));
  const auto sub = select_subset(c, make_key(std::nullopt, Level::B1), 3);
  ASSERT_EQ(sub.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(sub[i], c[i]);
}

TEST(SelectSubset, TooSmallCarriesCount) {
  Corpus c(5000, sentence(L1::CN, Level::B2, 3, 0));
  try {
    select_subset(c, make_key(L1::CN, Level::B2), 11000);
    FAIL() << "expected SubsetTooSmall";
  } catch (const SubsetTooSmall& e) {
    EXPECT_EQ(e.actual(), 5000u);
    EXPECT_EQ(e.required(), 11000u);
    EXPECT_EQ(e.key(), "CN-B2");
  }
}

TEST(SelectSubset, AbsentL1WithZeroMinimumIsEmpty) {
  EXPECT_TRUE(select_subset(grid(2), make_key(L1::TR, std::nullopt), 0).empty());
}

TEST(SelectSubset, UnionWithComplementIsCorpusInOrder) {
  const auto c = grid(5);
  const auto key = make_key(L1::ES, std::nullopt);
  const auto in = select_subset(c, key, 0);
  Corpus out;
  std::copy_if(c.begin(), c.end(), std::back_inserter(out),
               [&](const AnnotatedSentence& s) { return !key.matches(s); });
  EXPECT_EQ(in.size() + out.size(), c.size());
  // Order-stable: the subset is a subsequence of the corpus.
  std::size_t j = 0;
  for (const auto& s : c)
    if (j < in.size() && s == in[j]) ++j;
  EXPECT_EQ(j, in.size());
}

TEST(Split, SizesAndDisjointness) {
  Corpus c;
  for (int i = 0; i < 11; ++i) c.push_back(sentence(L1::ES, Level::A2, 2 + i, 0));
  const auto s = split(c, 8, 1, 2, 7);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.dev.size(), 1u);
  EXPECT_EQ(s.test.size(), 2u);
  std::set<std::size_t> lengths;
  for (const auto* part : {&s.train, &s.dev, &s.test})
    for (const auto& x : *part) lengths.insert(x.source.size());
  EXPECT_EQ(lengths.size(), 11u);  // lengths are unique per sentence here
}

TEST(Split, EmptyAndDeterministic) {
  const auto c = grid(4);
  const auto empty = split(c, 0, 0, 0, 1);
  EXPECT_TRUE(empty.train.empty() && empty.dev.empty() && empty.test.empty());
  const auto a = split(c, 10, 5, 5, 3);
  const auto b = split(c, 10, 5, 5, 3);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.dev, b.dev);
  EXPECT_EQ(a.test, b.test);
}

TEST(Split, ShortfallIsReported) {
  try {
    split(grid(1), 5, 3, 3, 1);
    FAIL() << "expected InsufficientData";
  } catch (const InsufficientData& e) {
    EXPECT_EQ(e.shortfall(), 2u);
  }
}

TEST(SampleRandom, UniformFullSampleIsPermutation) {
  const auto c = grid(3);
  CellWeights w;
  for (const auto& s : c) w[{s.l1, s.level}] = 1.0;
  auto sample = sample_random(c, c.size(), w, 5);
  ASSERT_EQ(sample.size(), c.size());
  auto key = [](const AnnotatedSentence& s) {
    return std::tuple(s.l1, s.level, s.source, s.edits.size());
  };
  std::vector<decltype(key(c[0]))> a, b;
  for (const auto& s : c) a.push_back(key(s));
  for (const auto& s : sample) b.push_back(key(s));
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
}

TEST(SampleRandom, ZeroWeightExcludesCells) {
  const auto c = grid(20);
  auto w = default_sample_weights();
  for (Level lv : kAllLevels) w[{L1::DE, lv}] = 0.0;
  for (const auto& s : sample_random(c, 60, w, 2)) EXPECT_NE(s.l1, L1::DE);
}

TEST(SampleRandom, DefaultWeightsGiveTwoB1PerA2) {
  Corpus c;
  for (L1 l1 : kStudiedL1s)
    for (Level lv : {Level::A2, Level::B1, Level::B2, Level::C1, Level::C2})
      for (int i = 0; i < 400; ++i) c.push_back(sentence(l1, lv, 2, 0));
  const auto sample = sample_random(c, 6000, default_sample_weights(), 11);
  const auto count = [&](Level lv) {
    return std::count_if(sample.begin(), sample.end(),
                         [&](const AnnotatedSentence& s) { return s.level == lv; });
  };
  const double ratio = static_cast<double>(count(Level::B1)) / count(Level::A2);
  EXPECT_NEAR(ratio, 2.0, 0.3);
}

TEST(SampleRandom, RejectsOversizedRequest) {
  const auto c = grid(1);
  EXPECT_THROW(sample_random(c, c.size() + 1, default_sample_weights(), 1), Error);
}

TEST(ErrorRate, HandCounts) {
  const Corpus one{sentence(L1::ES, Level::A2, 10, 0)};
  EXPECT_EQ(error_rate(one), 0.0);
  const Corpus two{sentence(L1::ES, Level::A2, 40, 2)};
  EXPECT_EQ(error_rate(two), 5.0);
  const Corpus three{sentence(L1::ES, Level::A2, 10, 1), sentence(L1::ES, Level::A2, 20, 2),
                     sentence(L1::ES, Level::A2, 10, 0)};
  EXPECT_EQ(error_rate(three), 7.5);
  EXPECT_EQ(error_rate(three), oracle::hand_error_rate(three));
  EXPECT_THROW(error_rate(Corpus{}), StatisticError);
}

TEST(CorpusIo, JsonlRoundTrip) {
  auto c = grid(2);
  c[0].edits.push_back({3, 3, {"the"}, ErrorType::Det});
  c[0].target = apply_edits(c[0].source, c[0].edits);
  std::stringstream ss;
  write_corpus(ss, c);
  EXPECT_EQ(read_corpus(ss), c);
}

TEST(CorpusIo, MissingFieldNamesItAndLine) {
  std::stringstream ss(
      "{\"source\":[\"a\"],\"target\":[\"a\"],\"edits\":[],\"l1\":\"ES\",\"level\":\"A2\"}\n"
      "{\"source\":[\"a\"],\"edits\":[],\"l1\":\"ES\",\"level\":\"A2\"}\n");
  try {
    read_corpus(ss);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("target"), std::string::npos);
  }
}

TEST(CorpusIo, EmptyInputAndUnknownCodes) {
  std::stringstream empty;
  EXPECT_TRUE(read_corpus(empty).empty());
  std::stringstream bad(
      "{\"source\":[\"a\"],\"target\":[\"a\"],\"edits\":[],\"l1\":\"XX\",\"level\":\"A2\"}\n");
  EXPECT_THROW(read_corpus(bad), ValidationError);
}

TEST(CorpusIo, M2RoundTripAndAnnotatorCheck) {
  auto c = grid(1);
  std::stringstream ss;
  write_m2(ss, c);
  const auto back = read_m2(ss, L1::ES, Level::A2);
  ASSERT_EQ(back.size(), c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ(back[i].source, c[i].source);
    EXPECT_EQ(back[i].target, c[i].target);
    EXPECT_EQ(back[i].edits, c[i].edits);
  }
  std::stringstream other("S a b\nA 0 1|||R:NOUN|||c|||REQUIRED|||-NONE-|||1\n\n");
  EXPECT_THROW(read_m2(other), ParseError);
}
