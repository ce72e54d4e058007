#include <gtest/gtest.h>

#include <map>

#include "gecadapt/corpus.hpp"
#include "gecadapt/error.hpp"
#include "gecadapt/synth.hpp"
#include "oracles.hpp"

using namespace gecadapt;

namespace {

const L1 kL1s[] = {L1::ES, L1::CN, L1::DE, L1::FR};
const Level kLevels[] = {Level::A2, Level::B1, Level::B2, Level::C1, Level::C2};

}  // namespace

TEST(Generator, EmptyRequestIsEmpty) {
  EXPECT_TRUE(generate_corpus(default_profile(kL1s, kLevels, 1), 0).empty());
}

TEST(Generator, ZeroRateLeavesSentencesClean) {
  auto p = default_profile(kL1s, kLevels, 3);
  for (auto& c : p.cells) c.errors_per_100 = 0.0;
  for (const auto& s : generate_corpus(p, 300)) {
    EXPECT_EQ(s.source, s.target);
    EXPECT_TRUE(s.edits.empty());
  }
}

TEST(Generator, EditsMapSourceToTarget) {
  for (const auto& s : generate_corpus(default_profile(kL1s, kLevels, 5), 2000))
    EXPECT_NO_THROW(validate_sentence(s));
  for (const auto& s : generate_corpus(general_profile(5), 500)) EXPECT_NO_THROW(validate_sentence(s));
}

TEST(Generator, Deterministic) {
  const auto p = default_profile(kL1s, kLevels, 9);
  EXPECT_EQ(generate_corpus(p, 400), generate_corpus(p, 400));
  auto q = p;
  q.seed = 10;
  EXPECT_NE(generate_corpus(p, 400), generate_corpus(q, 400));
}

TEST(Generator, MeasuredRateMatchesTarget) {
  const L1 es[] = {L1::ES};
  const Level a2[] = {Level::A2};
  const auto corpus = generate_corpus(default_profile(es, a2, 21), 10000);
  EXPECT_NEAR(error_rate(corpus), 17.33, 0.5);
  EXPECT_EQ(error_rate(corpus), oracle::hand_error_rate(corpus));
}

TEST(Generator, A2SliceHasMoreErrorsThanC2) {
  const auto corpus = generate_corpus(default_profile(kL1s, kLevels, 4), 6000);
  const auto a2 = select_subset(corpus, make_key(std::nullopt, Level::A2), 1);
  const auto c2 = select_subset(corpus, make_key(std::nullopt, Level::C2), 1);
  EXPECT_GT(error_rate(a2), error_rate(c2));
}

TEST(Generator, MetadataComesFromCells) {
  const auto corpus = generate_corpus(default_profile(kL1s, kLevels, 2), 1000);
  std::map<std::pair<L1, Level>, int> cells;
  for (const auto& s : corpus) ++cells[{s.l1, s.level}];
  EXPECT_EQ(cells.size(), std::size(kL1s) * std::size(kLevels));
}

TEST(Generator, DetOnlyProfileProducesDetEdits) {
  auto p = default_profile(kL1s, kLevels, 8);
  for (auto& c : p.cells) {
    c.op_weights.fill(0.0);
    c.op_weights[static_cast<std::size_t>(ErrorOp::ArticleDrop)] = 1.0;
    c.op_weights[static_cast<std::size_t>(ErrorOp::ArticleInsert)] = 1.0;
  }
  std::size_t edits = 0;
  for (const auto& s : generate_corpus(p, 500))
    for (const auto& e : s.edits) {
      EXPECT_EQ(e.type, ErrorType::Det);
      ++edits;
    }
  EXPECT_GT(edits, 0u);
}

TEST(Profile, ValidationRejectsBadProfiles) {
  auto p = default_profile(kL1s, kLevels, 1);
  EXPECT_NO_THROW(p.validate());
  auto no_templates = p;
  no_templates.templates.clear();
  EXPECT_THROW(no_templates.validate(), ConfigError);
  EXPECT_THROW(generate_corpus(no_templates, 5), ConfigError);
  auto bad_slot = p;
  bad_slot.templates = {"{S} {X}"};
  EXPECT_THROW(bad_slot.validate(), ConfigError);
  auto negative = p;
  negative.cells[0].op_weights[0] = -1.0;
  EXPECT_THROW(negative.validate(), ConfigError);
}

TEST(Profile, LevelRatesDecrease) {
  EXPECT_DOUBLE_EQ(default_level_rate(Level::A2), 17.3);
  EXPECT_DOUBLE_EQ(default_level_rate(Level::B1), 13.0);
  EXPECT_DOUBLE_EQ(default_level_rate(Level::B2), 12.5);
  EXPECT_DOUBLE_EQ(default_level_rate(Level::C1), 12.1);
  EXPECT_DOUBLE_EQ(default_level_rate(Level::C2), 10.0);
}
