#pragma once

// Learner-corpus data model: token-level parallel sentences with source-anchored
// typed edits plus first-language / proficiency metadata.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gecadapt {

using Tokens = std::vector<std::string>;

// Whitespace split with punctuation detached. Case is preserved.
Tokens tokenize(std::string_view text);
std::string join_tokens(std::span<const std::string> tokens);

enum class ErrorType { Det, Prep, Verb, Tense, NNum, Noun, Pron, Other };
inline constexpr int kNumErrorTypes = 8;
// The seven reported categories, in table-column order (Other excluded).
inline constexpr ErrorType kReportedTypes[] = {ErrorType::Det,  ErrorType::Prep, ErrorType::Verb,
                                               ErrorType::Tense, ErrorType::NNum, ErrorType::Noun,
                                               ErrorType::Pron};

enum class Level { A1, A2, B1, B2, C1, C2 };
inline constexpr Level kAllLevels[] = {Level::A1, Level::A2, Level::B1,
                                       Level::B2, Level::C1, Level::C2};

// The twelve studied first languages plus a catch-all.
enum class L1 { AR, CN, FR, DE, GR, IT, PL, PT, RU, ES, CH, TR, Other };
inline constexpr L1 kStudiedL1s[] = {L1::AR, L1::CN, L1::FR, L1::DE, L1::GR, L1::IT,
                                     L1::PL, L1::PT, L1::RU, L1::ES, L1::CH, L1::TR};

std::string_view to_string(ErrorType t);
std::string_view to_string(Level l);
std::string_view to_string(L1 l);
// Throw ValidationError on unknown codes.
ErrorType parse_error_type(std::string_view s);
Level parse_level(std::string_view s);
L1 parse_l1(std::string_view s);

// Replace source[start, end) with `replacement`. start == end is an insertion.
struct Edit {
  std::size_t start = 0;
  std::size_t end = 0;
  Tokens replacement;
  ErrorType type = ErrorType::Other;

  bool operator==(const Edit&) const = default;
};

struct AnnotatedSentence {
  Tokens source;
  Tokens target;
  std::vector<Edit> edits;
  L1 l1 = L1::Other;
  Level level = Level::B1;

  bool operator==(const AnnotatedSentence&) const = default;
};

using Corpus = std::vector<AnnotatedSentence>;

// Checks span bounds, ordering and non-overlap. At most one insertion per
// source position. Throws ValidationError.
void validate_edits(std::span<const Edit> edits, std::size_t source_len);
// Applies edits left to right. Edits must be valid for `source`.
Tokens apply_edits(std::span<const std::string> source, std::span<const Edit> edits);
// Full record check: valid edits, apply(source, edits) == target.
void validate_sentence(const AnnotatedSentence& s);

struct SubsetKey {
  std::optional<Level> level;
  std::optional<L1> l1;

  bool matches(const AnnotatedSentence& s) const {
    return (!level || *level == s.level) && (!l1 || *l1 == s.l1);
  }
  bool is_l1_level() const { return level.has_value() && l1.has_value(); }
  // "ES-A2", "ES" or "A2".
  std::string name() const;
  auto operator<=>(const SubsetKey&) const = default;
};

SubsetKey make_key(std::optional<L1> l1, std::optional<Level> level);
SubsetKey parse_key(std::string_view name);

// Order-stable filter; SubsetTooSmall when fewer than `min_size` match.
Corpus select_subset(std::span<const AnnotatedSentence> corpus, const SubsetKey& key,
                     std::size_t min_size);

struct Split {
  Corpus train;
  Corpus dev;
  Corpus test;
};

// Seeded shuffle, then consecutive slices. InsufficientData on shortfall.
Split split(std::span<const AnnotatedSentence> subset, std::size_t train_n, std::size_t dev_n,
            std::size_t test_n, std::uint64_t seed);

using CellWeights = std::map<std::pair<L1, Level>, double>;

// Shape of a random learner sample: B1 the most frequent level with A2 half as
// frequent; Spanish dominant with Chinese at half; Spanish-B2 the most frequent
// cell with Spanish-A2 at half.
CellWeights default_sample_weights();

// Weighted sample without replacement. Per-cell quotas are proportional to the
// weights, capped by cell membership, with the excess redistributed by weight.
// Cells absent from `weights` get weight 0.
Corpus sample_random(std::span<const AnnotatedSentence> corpus, std::size_t n,
                     const CellWeights& weights, std::uint64_t seed);
// Uniform weights over every cell present in the corpus.
Corpus sample_uniform(std::span<const AnnotatedSentence> corpus, std::size_t n,
                      std::uint64_t seed);

// Edits per 100 source tokens. StatisticError on zero tokens.
double error_rate(std::span<const AnnotatedSentence> sentences);

// JSON Lines, one sentence per line.
Corpus read_corpus(std::istream& in);
void write_corpus(std::ostream& out, std::span<const AnnotatedSentence> corpus);
Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(std::span<const AnnotatedSentence> corpus, const std::filesystem::path& path);

// M2 annotation blocks ("S ..." followed by "A ..." lines). Only annotator 0 is
// accepted. Sentences get target = apply(source, edits) and the given metadata.
Corpus read_m2(std::istream& in, L1 l1 = L1::Other, Level level = Level::B1);
void write_m2(std::ostream& out, std::span<const AnnotatedSentence> corpus);

}  // namespace gecadapt
