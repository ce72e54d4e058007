#pragma once

// MaxMatch scoring: an edit lattice between source and hypothesis, the path
// that best overlaps the gold edits, and corpus-level precision/recall/F.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gecadapt/corpus.hpp"

namespace gecadapt {

struct MetricReport {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 1.0;
  double recall = 1.0;
  double f_beta = 1.0;
  double beta = 0.5;

  MetricReport& operator+=(const MetricReport& o);
};

// 0 when P == R == 0. ValidationError outside [0, 1] or for beta <= 0.
double f_beta(double precision, double recall, double beta);

// P = 1 when tp + fp == 0, R = 1 when tp + fn == 0.
MetricReport make_report(std::size_t tp, std::size_t fp, std::size_t fn, double beta = 0.5);

struct LatticeEdge {
  std::size_t from = 0;  // vertex index
  std::size_t to = 0;
  bool keep = false;
  // Source span and replacement; meaningless for keep edges.
  Edit edit;
  // Number of alignment operations the edge covers (1 for atomic edges).
  std::size_t ops = 1;
};

struct EditLattice {
  // Alignment positions (i into source, j into hypothesis) along the chosen
  // backtrace, from (0, 0) to (|source|, |hypothesis|).
  std::vector<std::pair<std::size_t, std::size_t>> vertices;
  // Sorted by (from, to); every edge goes forward.
  std::vector<LatticeEdge> edges;
};

// Levenshtein alignment (unit costs; ties prefer match, then substitution,
// deletion, insertion) gives one edge per operation. Every stretch of the
// alignment that starts and ends on an edit operation and has no more than
// `merge_window` consecutive matches inside also becomes one merged edge.
EditLattice build_lattice(std::span<const std::string> source,
                          std::span<const std::string> hypothesis, std::size_t merge_window = 2);

struct MatchResult {
  std::vector<Edit> chosen;     // edit edges of the best path, in order
  std::vector<bool> matched;    // per chosen edit: credited to a gold edit
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

// Best complete path: most gold matches, then fewest edit edges, then the
// lexicographically earliest span sequence. A match needs the exact span and
// replacement; each gold edit matches at most once. ValidationError when a
// gold span exceeds `source_len`.
MatchResult max_match(const EditLattice& lattice, std::span<const Edit> gold,
                      std::size_t source_len);

MatchResult score_sentence(std::span<const std::string> source,
                           std::span<const std::string> hypothesis, std::span<const Edit> gold,
                           std::size_t merge_window = 2);

// Micro-average over sentences. ValidationError on length mismatch.
MetricReport score_corpus(std::span<const Tokens> sources, std::span<const Tokens> hypotheses,
                          std::span<const std::vector<Edit>> golds, double beta = 0.5,
                          std::size_t merge_window = 2);
MetricReport score_corpus(std::span<const AnnotatedSentence> gold_corpus,
                          std::span<const Tokens> hypotheses, double beta = 0.5,
                          std::size_t merge_window = 2);

// Rule cascade over the edit with shared leading/trailing tokens removed:
// determiner, preposition, pronoun lexicons; same-verb inflection (Tense when
// a past form is involved, else Verb); regular noun number; other verb choice
// (Verb); other single-word substitution (Noun); otherwise Other.
ErrorType classify_edit(const Edit& edit, std::span<const std::string> source);

struct TypeDelta {
  ErrorType type;
  MetricReport system;
  MetricReport baseline;
  double delta_points = 0.0;  // 100 * (F_system - F_baseline)
};

// Per-type scores of two systems on the same gold. Gold and proposed edits are
// both typed by classify_edit; matched edits count for the gold's type. Types
// without gold edits get no row.
std::vector<TypeDelta> per_type_report(std::span<const Tokens> sources,
                                       std::span<const Tokens> system,
                                       std::span<const Tokens> baseline,
                                       std::span<const std::vector<Edit>> golds,
                                       double beta = 0.5, std::size_t merge_window = 2);

// Per-type reports of one system, indexed by ErrorType.
std::vector<MetricReport> score_by_type(std::span<const Tokens> sources,
                                        std::span<const Tokens> hypotheses,
                                        std::span<const std::vector<Edit>> golds,
                                        double beta = 0.5, std::size_t merge_window = 2);

std::string to_json(const MetricReport& r);
// Two-line aligned table: header and values, precision/recall/F in percent.
std::string to_text_table(const MetricReport& r);

}  // namespace gecadapt
