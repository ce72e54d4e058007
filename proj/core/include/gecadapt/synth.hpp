#pragma once

// Template-based synthetic learner corpus. Each (L1, level) cell corrupts clean
// template sentences with its own mix of error operations at a target rate, and
// records the corruptions as source-anchored gold edits.

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gecadapt/corpus.hpp"

namespace gecadapt {

enum class ErrorOp {
  ArticleDrop,
  ArticleInsert,
  PrepositionSwap,
  VerbAgreement,
  TenseShift,
  NounNumber,
  PronounDrop
};
inline constexpr std::size_t kNumErrorOps = 7;
using OpWeights = std::array<double, kNumErrorOps>;

std::string_view to_string(ErrorOp op);
ErrorType error_type_of(ErrorOp op);

struct CellProfile {
  L1 l1 = L1::Other;
  Level level = Level::B1;
  OpWeights op_weights{};
  double errors_per_100 = 0.0;
  // Relative share of generated sentences.
  double share = 1.0;
  // Probability that a dropped article was indefinite ("a"/"an").
  double indefinite_drop_share = 0.5;
  // Probability that an injected error is corrected in the target. The rest
  // stay on both sides and carry no edit, as in loosely annotated text.
  double annotated_share = 1.0;
  // Correct preposition -> wrong substitutes (uniform pick). Prepositions
  // missing here are swapped for a uniformly chosen other preposition.
  std::map<std::string, std::vector<std::string>> preposition_confusions;
};

struct GeneratorProfile {
  std::vector<CellProfile> cells;
  // Patterns over the slots {S} {V} {O} {PP} {C} {CV}.
  std::vector<std::string> templates;
  std::uint64_t seed = 0;

  // ConfigError on an empty template bank, unknown slots, negative weights,
  // all-zero weights, or negative rates.
  void validate() const;
};

std::vector<std::string> default_template_bank();

// Per-level target rates (errors per 100 words). C2 is extrapolated.
double default_level_rate(Level level);

// Learner cells for every requested (L1, level) pair. Rates follow the level
// defaults, overridden by the measured L1-Level test-set rates where known.
GeneratorProfile default_profile(std::span<const L1> l1s, std::span<const Level> levels,
                                 std::uint64_t seed);

// General-domain pool used for pre-training: lower error rate, neutral
// preferences, few dropped pronouns, and only part of the errors corrected.
// Metadata is (Other, C2).
GeneratorProfile general_profile(std::uint64_t seed);

// `n` sentences, cells allotted by share (largest remainder) and interleaved by
// a seeded shuffle. Deterministic for a given profile and n.
Corpus generate_corpus(const GeneratorProfile& profile, std::size_t n);

}  // namespace gecadapt
