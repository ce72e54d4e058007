#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "gecadapt/bpe.hpp"
#include "gecadapt/error.hpp"
#include "oracles.hpp"

using namespace gecadapt;

namespace {

std::vector<Tokens> repeat(const std::vector<std::pair<std::string, int>>& words) {
  std::vector<Tokens> out(1);
  for (const auto& [w, n] : words)
    for (int i = 0; i < n; ++i) out[0].push_back(w);
  return out;
}

std::vector<Tokens> random_stream(std::mt19937_64& rng, std::size_t max_tokens) {
  std::uniform_int_distribution<std::size_t> n_tokens(1, max_tokens);
  std::uniform_int_distribution<int> len(1, 5), letter(0, 3), per_sentence(1, 8);
  std::vector<Tokens> out;
  std::size_t left = n_tokens(rng);
  while (left > 0) {
    Tokens s;
    for (int k = per_sentence(rng); k > 0 && left > 0; --k, --left) {
      std::string w;
      for (int c = len(rng); c > 0; --c) w.push_back(static_cast<char>('a' + letter(rng)));
      s.push_back(w);
    }
    out.push_back(s);
  }
  return out;
}

std::size_t unk_count(const BpeModel& m, const std::vector<Tokens>& stream) {
  std::size_t n = 0;
  for (const auto& s : stream)
    for (int id : m.encode(s, BpeModel::kNoLimit)) n += id == BpeModel::kUnk;
  return n;
}

}  // namespace

TEST(Bpe, NoMergesIsCharacterLevel) {
  const auto m = learn_bpe(repeat({{"ab", 3}}), 0);
  const Tokens ab{"ab"};
  const auto ids = m.encode(ab);
  ASSERT_EQ(ids.size(), 2u);
  EXPECT_EQ(m.symbol(ids[0]), "a");
  EXPECT_EQ(m.symbol(ids[1]), "b</w>");
}

TEST(Bpe, FirstMergeIsMostFrequentPair) {
  EXPECT_EQ(learn_bpe(repeat({{"aaab", 3}}), 1).merges().front(), SymbolPair("a", "a"));
  // (a, b</w>) and (c, d</w>) tie; the smaller pair wins.
  EXPECT_EQ(learn_bpe(repeat({{"ab", 2}, {"cd", 2}}), 1).merges().front(),
            SymbolPair("a", "b</w>"));
}

TEST(Bpe, EmptyStreamIsAnError) {
  EXPECT_THROW(learn_bpe({}, 5), Error);
}

TEST(Bpe, EncodeEdgeCasesAndTruncation) {
  const auto m = learn_bpe(repeat({{"hello", 4}}), 0);
  EXPECT_TRUE(m.encode(Tokens{}).empty());
  Tokens long_sentence(20, "hello");  // 100 character units
  EXPECT_EQ(m.encode(long_sentence, 60).size(), 60u);
  const auto full = m.encode(long_sentence, BpeModel::kNoLimit);
  const auto cut = m.encode(long_sentence, 60);
  EXPECT_TRUE(std::equal(cut.begin(), cut.end(), full.begin()));
}

TEST(Bpe, DecodeJoinsAtWordEnd) {
  const BpeModel m({{"g", "o"}, {"e", "s</w>"}});
  const std::vector<int> ids{m.id("go"), m.id("es</w>")};
  EXPECT_EQ(m.decode(ids), Tokens{"goes"});
  EXPECT_TRUE(m.decode(std::vector<int>{}).empty());
  EXPECT_TRUE(m.decode(std::vector<int>{BpeModel::kPad, BpeModel::kEos}).empty());
  EXPECT_THROW(m.decode(std::vector<int>{static_cast<int>(m.vocab_size())}), ValidationError);
}

TEST(Bpe, VocabularyIsClosureOfMerges) {
  const auto m = learn_bpe(repeat({{"lower", 5}, {"lowest", 3}, {"newer", 4}}), 10);
  EXPECT_EQ(m.vocab_size(), static_cast<std::size_t>(BpeModel::kNumSpecials) + 2 * 94 +
                                m.merges().size());
  for (const auto& [a, b] : m.merges()) EXPECT_NE(m.id(a + b), BpeModel::kUnk);
}

TEST(Bpe, MatchesRecountOracle) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const auto stream = random_stream(rng, 100);
    const std::size_t merges = rng() % 31;
    ASSERT_EQ(learn_bpe(stream, merges).merges(), oracle::recount_bpe(stream, merges))
        << "trial " << trial;
  }
}

TEST(Bpe, RoundTripAndDeterminism) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto stream = random_stream(rng, 100);
    const auto m = learn_bpe(stream, 20);
    EXPECT_EQ(m.merges(), learn_bpe(stream, 20).merges());
    for (const auto& s : stream) EXPECT_EQ(m.decode(m.encode(s, BpeModel::kNoLimit)), s);
  }
}

TEST(Bpe, UnkRateNonIncreasingInMerges) {
  std::mt19937_64 rng(5);
  auto stream = random_stream(rng, 100);
  stream.push_back({"caf\xc3\xa9", "na\xc3\xafve"});  // non-ASCII bytes are unknown
  std::size_t prev = unk_count(learn_bpe(stream, 0), stream);
  for (std::size_t n : {5, 10, 20, 40}) {
    const std::size_t now = unk_count(learn_bpe(stream, n), stream);
    EXPECT_LE(now, prev);
    prev = now;
  }
}

TEST(Bpe, SaveLoadRoundTrip) {
  const auto m = learn_bpe(repeat({{"lower", 5}, {"newest", 3}}), 8);
  std::stringstream ss;
  m.save(ss);
  EXPECT_EQ(ss.str().rfind("#version gec-adapt-bpe 1\n", 0), 0u);
  const auto back = BpeModel::load(ss);
  EXPECT_EQ(back.merges(), m.merges());
  EXPECT_EQ(back.vocab_size(), m.vocab_size());
}
