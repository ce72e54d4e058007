#include "gecadapt/eval.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "gecadapt/error.hpp"
#include "gecadapt/lexicon.hpp"

namespace gecadapt {

MetricReport& MetricReport::operator+=(const MetricReport& o) {
  *this = make_report(tp + o.tp, fp + o.fp, fn + o.fn, beta);
  return *this;
}

double f_beta(double precision, double recall, double beta) {
  if (!(precision >= 0.0 && precision <= 1.0) || !(recall >= 0.0 && recall <= 1.0))
    throw ValidationError("precision and recall must lie in [0, 1]");
  if (!(beta > 0.0)) throw ValidationError("beta must be positive");
  const double b2 = beta * beta;
  const double denom = b2 * precision + recall;
  if (denom == 0.0) return 0.0;
  return (1.0 + b2) * precision * recall / denom;
}

MetricReport make_report(std::size_t tp, std::size_t fp, std::size_t fn, double beta) {
  MetricReport r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.beta = beta;
  r.precision = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  r.recall = tp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  r.f_beta = f_beta(r.precision, r.recall, beta);
  return r;
}

namespace {

enum class Op { Keep, Sub, Del, Ins };

// Suffix-cost DP, then a forward trace: ties resolve at the leftmost position
// in the order match, substitution, deletion, insertion.
std::vector<Op> align(std::span<const std::string> a, std::span<const std::string> b) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  const auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, m) = n - i;
  for (std::size_t j = 0; j <= m; ++j) at(n, j) = m - j;
  for (std::size_t i = n; i-- > 0;)
    for (std::size_t j = m; j-- > 0;)
      at(i, j) = std::min({at(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1), at(i + 1, j) + 1,
                           at(i, j + 1) + 1});
  std::vector<Op> ops;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < n || j < m) {
    const std::size_t here = at(i, j);
    if (i < n && j < m && a[i] == b[j] && here == at(i + 1, j + 1)) {
      ops.push_back(Op::Keep);
      ++i, ++j;
    } else if (i < n && j < m && here == at(i + 1, j + 1) + 1) {
      ops.push_back(Op::Sub);
      ++i, ++j;
    } else if (i < n && here == at(i + 1, j) + 1) {
      ops.push_back(Op::Del);
      ++i;
    } else {
      ops.push_back(Op::Ins);
      ++j;
    }
  }
  return ops;
}

}  // namespace

EditLattice build_lattice(std::span<const std::string> source,
                          std::span<const std::string> hypothesis, std::size_t merge_window) {
  const auto ops = align(source, hypothesis);
  EditLattice lat;
  lat.vertices.reserve(ops.size() + 1);
  lat.vertices.emplace_back(0, 0);
  for (Op op : ops) {
    auto [i, j] = lat.vertices.back();
    if (op != Op::Ins) ++i;
    if (op != Op::Del) ++j;
    lat.vertices.emplace_back(i, j);
  }
  const auto make_edge = [&](std::size_t from, std::size_t to) {
    LatticeEdge e;
    e.from = from;
    e.to = to;
    e.ops = to - from;
    e.keep = to == from + 1 && ops[from] == Op::Keep;
    const auto [i0, j0] = lat.vertices[from];
    const auto [i1, j1] = lat.vertices[to];
    e.edit.start = i0;
    e.edit.end = i1;
    e.edit.replacement.assign(hypothesis.begin() + static_cast<std::ptrdiff_t>(j0),
                              hypothesis.begin() + static_cast<std::ptrdiff_t>(j1));
    return e;
  };
  // Edit-operation indices, grouped into maximal runs.
  std::vector<std::vector<std::size_t>> runs;
  std::size_t last_edit = 0;
  bool any = false;
  for (std::size_t k = 0; k < ops.size(); ++k) {
    lat.edges.push_back(make_edge(k, k + 1));
    if (ops[k] == Op::Keep) continue;
    if (!any || k - last_edit - 1 > merge_window) runs.emplace_back();
    runs.back().push_back(k);
    last_edit = k;
    any = true;
  }
  for (const auto& run : runs)
    for (std::size_t a = 0; a < run.size(); ++a)
      for (std::size_t b = a + 1; b < run.size(); ++b)
        lat.edges.push_back(make_edge(run[a], run[b] + 1));
  std::sort(lat.edges.begin(), lat.edges.end(), [](const LatticeEdge& x, const LatticeEdge& y) {
    return std::tie(x.from, x.to) < std::tie(y.from, y.to);
  });
  return lat;
}

namespace {

struct PathValue {
  std::size_t matched = 0;
  std::size_t edits = 0;
  std::vector<std::pair<std::size_t, std::size_t>> spans;
};

bool better(const PathValue& a, const PathValue& b) {
  if (a.matched != b.matched) return a.matched > b.matched;
  if (a.edits != b.edits) return a.edits < b.edits;
  return a.spans < b.spans;
}

}  // namespace

MatchResult max_match(const EditLattice& lattice, std::span<const Edit> gold,
                      std::size_t source_len) {
  validate_edits(gold, source_len);
  if (lattice.vertices.empty()) throw ValidationError("empty lattice");
  const std::size_t nv = lattice.vertices.size();
  std::vector<long> gold_of(lattice.edges.size(), -1);
  for (std::size_t e = 0; e < lattice.edges.size(); ++e) {
    const auto& le = lattice.edges[e];
    if (le.keep) continue;
    for (std::size_t g = 0; g < gold.size(); ++g) {
      if (gold[g].start == le.edit.start && gold[g].end == le.edit.end &&
          gold[g].replacement == le.edit.replacement) {
        gold_of[e] = static_cast<long>(g);
        break;
      }
    }
  }
  std::vector<std::vector<std::size_t>> out(nv);
  for (std::size_t e = 0; e < lattice.edges.size(); ++e) out[lattice.edges[e].from].push_back(e);

  // State (vertex, used): `used` marks that the gold insertion at this
  // vertex's source position was already credited on the way here.
  struct Cell {
    PathValue value;
    std::size_t edge = 0;
    bool reachable = false;
  };
  std::vector<std::array<Cell, 2>> best(nv);
  best[nv - 1][0].reachable = best[nv - 1][1].reachable = true;
  for (std::size_t k = nv - 1; k-- > 0;) {
    for (int used = 0; used < 2; ++used) {
      Cell& cell = best[k][static_cast<std::size_t>(used)];
      for (std::size_t e : out[k]) {
        const auto& le = lattice.edges[e];
        const bool insertion = !le.keep && le.edit.start == le.edit.end;
        bool hit = false;
        int next_used = 0;
        if (!le.keep) {
          hit = gold_of[e] >= 0 && !(insertion && used);
          if (insertion) next_used = used || hit;
        }
        const Cell& next = best[le.to][static_cast<std::size_t>(next_used)];
        if (!next.reachable) continue;
        PathValue v;
        v.matched = next.value.matched + (hit ? 1 : 0);
        v.edits = next.value.edits + (le.keep ? 0 : 1);
        if (!le.keep) v.spans.emplace_back(le.edit.start, le.edit.end);
        v.spans.insert(v.spans.end(), next.value.spans.begin(), next.value.spans.end());
        if (!cell.reachable || better(v, cell.value)) {
          cell.value = std::move(v);
          cell.edge = e;
          cell.reachable = true;
        }
      }
    }
  }

  MatchResult r;
  std::size_t k = 0;
  int used = 0;
  while (k + 1 < nv) {
    const auto& le = lattice.edges[best[k][static_cast<std::size_t>(used)].edge];
    if (!le.keep) {
      const bool insertion = le.edit.start == le.edit.end;
      const bool hit = gold_of[&le - lattice.edges.data()] >= 0 && !(insertion && used);
      r.chosen.push_back(le.edit);
      r.matched.push_back(hit);
      used = insertion ? (used || hit) : 0;
      if (hit) ++r.tp;
      else ++r.fp;
    } else {
      used = 0;
    }
    k = le.to;
  }
  r.fn = gold.size() - r.tp;
  return r;
}

MatchResult score_sentence(std::span<const std::string> source,
                           std::span<const std::string> hypothesis, std::span<const Edit> gold,
                           std::size_t merge_window) {
  return max_match(build_lattice(source, hypothesis, merge_window), gold, source.size());
}

MetricReport score_corpus(std::span<const Tokens> sources, std::span<const Tokens> hypotheses,
                          std::span<const std::vector<Edit>> golds, double beta,
                          std::size_t merge_window) {
  if (sources.size() != hypotheses.size() || sources.size() != golds.size())
    throw ValidationError("score_corpus: " + std::to_string(sources.size()) + " sources, " +
                          std::to_string(hypotheses.size()) + " hypotheses, " +
                          std::to_string(golds.size()) + " gold sets");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto r = score_sentence(sources[s], hypotheses[s], golds[s], merge_window);
    tp += r.tp;
    fp += r.fp;
    fn += r.fn;
  }
  return make_report(tp, fp, fn, beta);
}

MetricReport score_corpus(std::span<const AnnotatedSentence> gold_corpus,
                          std::span<const Tokens> hypotheses, double beta,
                          std::size_t merge_window) {
  std::vector<Tokens> sources;
  std::vector<std::vector<Edit>> golds;
  for (const auto& s : gold_corpus) {
    sources.push_back(s.source);
    golds.push_back(s.edits);
  }
  return score_corpus(sources, hypotheses, golds, beta, merge_window);
}

namespace {

template <typename Pred>
bool all_in(std::span<const std::string> a, std::span<const std::string> b, Pred pred) {
  if (a.empty() && b.empty()) return false;
  return std::all_of(a.begin(), a.end(), pred) && std::all_of(b.begin(), b.end(), pred);
}

}  // namespace

ErrorType classify_edit(const Edit& edit, std::span<const std::string> source) {
  if (edit.start > edit.end || edit.end > source.size())
    throw ValidationError("edit span outside source");
  std::span<const std::string> orig = source.subspan(edit.start, edit.end - edit.start);
  std::span<const std::string> corr(edit.replacement);
  while (!orig.empty() && !corr.empty() && orig.front() == corr.front()) {
    orig = orig.subspan(1);
    corr = corr.subspan(1);
  }
  while (!orig.empty() && !corr.empty() && orig.back() == corr.back()) {
    orig = orig.first(orig.size() - 1);
    corr = corr.first(corr.size() - 1);
  }
  if (orig.empty() && corr.empty()) return ErrorType::Other;

  const auto lexical = [](bool (*in)(std::string_view)) {
    return [in](const std::string& w) { return in(w); };
  };
  if (all_in(orig, corr, lexical(lexicon::is_determiner))) return ErrorType::Det;
  if (all_in(orig, corr, lexical(lexicon::is_preposition))) return ErrorType::Prep;
  if (all_in(orig, corr, lexical(lexicon::is_pronoun))) return ErrorType::Pron;

  if (orig.size() == 1 && corr.size() == 1) {
    const auto& a = orig.front();
    const auto& b = corr.front();
    const auto va = lexicon::lookup_verb(a);
    const auto vb = lexicon::lookup_verb(b);
    if (va && vb && va->verb == vb->verb) {
      const bool past = va->form == lexicon::VerbForm::Past || vb->form == lexicon::VerbForm::Past;
      return past ? ErrorType::Tense : ErrorType::Verb;
    }
    if (lexicon::is_regular_plural(a, b) || lexicon::is_regular_plural(b, a))
      return ErrorType::NNum;
    if (va || vb) return ErrorType::Verb;
    const auto content = [](const std::string& w) {
      return !w.empty() && std::all_of(w.begin(), w.end(), [](unsigned char c) {
               return std::isalpha(c) || c == '-' || c == '\'';
             }) &&
             !lexicon::is_determiner(w) && !lexicon::is_preposition(w) && !lexicon::is_pronoun(w);
    };
    if (content(a) && content(b)) return ErrorType::Noun;
  }
  return ErrorType::Other;
}

std::vector<MetricReport> score_by_type(std::span<const Tokens> sources,
                                        std::span<const Tokens> hypotheses,
                                        std::span<const std::vector<Edit>> golds, double beta,
                                        std::size_t merge_window) {
  if (sources.size() != hypotheses.size() || sources.size() != golds.size())
    throw ValidationError("score_by_type: misaligned inputs");
  std::array<std::size_t, kNumErrorTypes> tp{}, fp{}, fn{};
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto r = score_sentence(sources[s], hypotheses[s], golds[s], merge_window);
    std::vector<bool> credited(golds[s].size(), false);
    for (std::size_t c = 0; c < r.chosen.size(); ++c) {
      const auto t = static_cast<std::size_t>(classify_edit(r.chosen[c], sources[s]));
      if (!r.matched[c]) {
        ++fp[t];
        continue;
      }
      ++tp[t];
      for (std::size_t g = 0; g < golds[s].size(); ++g) {
        const auto& ge = golds[s][g];
        if (!credited[g] && ge.start == r.chosen[c].start && ge.end == r.chosen[c].end &&
            ge.replacement == r.chosen[c].replacement) {
          credited[g] = true;
          break;
        }
      }
    }
    for (std::size_t g = 0; g < golds[s].size(); ++g)
      if (!credited[g]) ++fn[static_cast<std::size_t>(classify_edit(golds[s][g], sources[s]))];
  }
  std::vector<MetricReport> out;
  for (int t = 0; t < kNumErrorTypes; ++t) out.push_back(make_report(tp[t], fp[t], fn[t], beta));
  return out;
}

std::vector<TypeDelta> per_type_report(std::span<const Tokens> sources,
                                       std::span<const Tokens> system,
                                       std::span<const Tokens> baseline,
                                       std::span<const std::vector<Edit>> golds, double beta,
                                       std::size_t merge_window) {
  if (system.size() != baseline.size())
    throw ValidationError("per_type_report: system and baseline differ in length");
  const auto sys = score_by_type(sources, system, golds, beta, merge_window);
  const auto base = score_by_type(sources, baseline, golds, beta, merge_window);
  std::vector<TypeDelta> out;
  for (ErrorType t : kReportedTypes) {
    const auto i = static_cast<std::size_t>(t);
    if (sys[i].tp + sys[i].fn == 0) continue;
    out.push_back({t, sys[i], base[i], 100.0 * (sys[i].f_beta - base[i].f_beta)});
  }
  return out;
}

std::string to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["tp"] = r.tp;
  j["fp"] = r.fp;
  j["fn"] = r.fn;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f_beta"] = r.f_beta;
  j["beta"] = r.beta;
  return j.dump();
}

std::string to_text_table(const MetricReport& r) {
  std::ostringstream ss;
  ss << std::left << std::setw(8) << "TP" << std::setw(8) << "FP" << std::setw(8) << "FN"
     << std::setw(8) << "Prec" << std::setw(8) << "Rec" << "F" << r.beta << '\n';
  ss << std::setw(8) << r.tp << std::setw(8) << r.fp << std::setw(8) << r.fn << std::fixed
     << std::setprecision(2) << std::setw(8) << 100.0 * r.precision << std::setw(8)
     << 100.0 * r.recall << 100.0 * r.f_beta << '\n';
  return ss.str();
}

}  // namespace gecadapt
