#include "gecadapt/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "gecadapt/error.hpp"

namespace gecadapt {

namespace {

constexpr std::array<std::string_view, kNumErrorTypes> kTypeNames = {
    "Det", "Prep", "Verb", "Tense", "NNum", "Noun", "Pron", "Other"};
constexpr std::array<std::string_view, 6> kLevelNames = {"A1", "A2", "B1", "B2", "C1", "C2"};
constexpr std::array<std::string_view, 13> kL1Names = {"AR", "CN", "FR", "DE", "GR", "IT", "PL",
                                                       "PT", "RU", "ES", "CH", "TR", "Other"};

bool is_word_internal_punct(char c) { return c == '\'' || c == '-'; }

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      const bool inside = is_word_internal_punct(static_cast<char>(c)) && !word.empty() &&
                          i + 1 < text.size() &&
                          std::isalnum(static_cast<unsigned char>(text[i + 1]));
      if (inside) {
        word.push_back(static_cast<char>(c));
      } else {
        flush();
        out.emplace_back(1, static_cast<char>(c));
      }
    } else {
      word.push_back(static_cast<char>(c));
    }
  }
  flush();
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::string_view to_string(ErrorType t) { return kTypeNames[static_cast<std::size_t>(t)]; }
std::string_view to_string(Level l) { return kLevelNames[static_cast<std::size_t>(l)]; }
std::string_view to_string(L1 l) { return kL1Names[static_cast<std::size_t>(l)]; }

ErrorType parse_error_type(std::string_view s) {
  for (std::size_t i = 0; i < kTypeNames.size(); ++i)
    if (kTypeNames[i] == s) return static_cast<ErrorType>(i);
  throw ValidationError("unknown error type '" + std::string(s) + "'");
}

Level parse_level(std::string_view s) {
  for (std::size_t i = 0; i < kLevelNames.size(); ++i)
    if (kLevelNames[i] == s) return static_cast<Level>(i);
  throw ValidationError("unknown CEFR level '" + std::string(s) + "'");
}

L1 parse_l1(std::string_view s) {
  for (std::size_t i = 0; i < kL1Names.size(); ++i)
    if (kL1Names[i] == s) return static_cast<L1>(i);
  throw ValidationError("unknown L1 code '" + std::string(s) + "'");
}

void validate_edits(std::span<const Edit> edits, std::size_t source_len) {
  std::size_t prev_end = 0;
  std::optional<std::size_t> prev_insert_at;
  for (std::size_t k = 0; k < edits.size(); ++k) {
    const Edit& e = edits[k];
    if (e.start > e.end || e.end > source_len)
      throw ValidationError("edit " + std::to_string(k) + " span [" + std::to_string(e.start) +
                            "," + std::to_string(e.end) + ") outside source of length " +
                            std::to_string(source_len));
    if (e.start < prev_end)
      throw ValidationError("edit " + std::to_string(k) + " overlaps or is out of order");
    if (e.start == e.end) {
      if (prev_insert_at && *prev_insert_at == e.start)
        throw ValidationError("two insertions at source position " + std::to_string(e.start));
      prev_insert_at = e.start;
    }
    if (e.start == e.end && e.replacement.empty())
      throw ValidationError("edit " + std::to_string(k) + " is a no-op");
    prev_end = e.end;
  }
}

Tokens apply_edits(std::span<const std::string> source, std::span<const Edit> edits) {
  validate_edits(edits, source.size());
  Tokens out;
  out.reserve(source.size() + edits.size());
  std::size_t pos = 0;
  for (const Edit& e : edits) {
    out.insert(out.end(), source.begin() + static_cast<std::ptrdiff_t>(pos),
               source.begin() + static_cast<std::ptrdiff_t>(e.start));
    out.insert(out.end(), e.replacement.begin(), e.replacement.end());
    pos = e.end;
  }
  out.insert(out.end(), source.begin() + static_cast<std::ptrdiff_t>(pos), source.end());
  return out;
}

void validate_sentence(const AnnotatedSentence& s) {
  if (apply_edits(s.source, s.edits) != s.target)
    throw ValidationError("edits do not transform source into target");
}

std::string SubsetKey::name() const {
  std::string out;
  if (l1) out += to_string(*l1);
  if (l1 && level) out += "-";
  if (level) out += to_string(*level);
  return out;
}

SubsetKey make_key(std::optional<L1> l1, std::optional<Level> level) {
  if (!l1 && !level) throw ValidationError("subset key needs a level, an L1, or both");
  return SubsetKey{level, l1};
}

SubsetKey parse_key(std::string_view name) {
  const auto dash = name.find('-');
  if (dash != std::string_view::npos)
    return make_key(parse_l1(name.substr(0, dash)), parse_level(name.substr(dash + 1)));
  for (auto lv : kLevelNames)
    if (lv == name) return make_key(std::nullopt, parse_level(name));
  return make_key(parse_l1(name), std::nullopt);
}

Corpus select_subset(std::span<const AnnotatedSentence> corpus, const SubsetKey& key,
                     std::size_t min_size) {
  if (!key.level && !key.l1) throw ValidationError("empty subset key");
  Corpus out;
  std::copy_if(corpus.begin(), corpus.end(), std::back_inserter(out),
               [&](const AnnotatedSentence& s) { return key.matches(s); });
  if (out.size() < min_size) throw SubsetTooSmall(key.name(), out.size(), min_size);
  return out;
}

Split split(std::span<const AnnotatedSentence> subset, std::size_t train_n, std::size_t dev_n,
            std::size_t test_n, std::uint64_t seed) {
  const std::size_t need = train_n + dev_n + test_n;
  if (need > subset.size())
    throw InsufficientData(need - subset.size(),
                           "split needs " + std::to_string(need) + " sentences, subset has " +
                               std::to_string(subset.size()));
  std::vector<std::size_t> order(subset.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  Split out;
  auto take = [&](Corpus& dst, std::size_t from, std::size_t n) {
    dst.reserve(n);
    for (std::size_t i = from; i < from + n; ++i) dst.push_back(subset[order[i]]);
  };
  take(out.train, 0, train_n);
  take(out.dev, train_n, dev_n);
  take(out.test, train_n + dev_n, test_n);
  return out;
}

CellWeights default_sample_weights() {
  // Relative L1 frequencies (Spanish = 1).
  const std::map<L1, double> l1_share = {
      {L1::ES, 1.0},  {L1::CN, 0.5},  {L1::FR, 0.35}, {L1::DE, 0.35},
      {L1::IT, 0.3},  {L1::PT, 0.25}, {L1::RU, 0.2},  {L1::PL, 0.15},
      {L1::TR, 0.15}, {L1::GR, 0.15}, {L1::AR, 0.15}, {L1::CH, 0.15}};
  // Level profile for non-Spanish rows, chosen so the pooled B1:A2 ratio is 2:1.
  const std::map<Level, double> generic = {
      {Level::A2, 0.16}, {Level::B1, 0.3447}, {Level::B2, 0.28}, {Level::C1, 0.14},
      {Level::C2, 0.0753}};
  const std::map<Level, double> spanish = {
      {Level::A2, 1.0}, {Level::B1, 1.6}, {Level::B2, 2.0}, {Level::C1, 0.9}, {Level::C2, 0.5}};
  const double spanish_total = 6.0;

  CellWeights w;
  for (const auto& [l1, share] : l1_share) {
    for (const auto& [level, p] : generic) {
      w[{l1, level}] = l1 == L1::ES ? spanish.at(level) : share * spanish_total * p;
    }
  }
  return w;
}

namespace {

Corpus sample_by_quota(std::span<const AnnotatedSentence> corpus, std::size_t n,
                       const CellWeights& weights, std::uint64_t seed) {
  if (n > corpus.size())
    throw InsufficientData(n - corpus.size(), "random sample larger than corpus");
  for (const auto& [cell, w] : weights)
    if (!(w >= 0.0)) throw ValidationError("sample weights must be nonnegative");

  // Cell membership in first-appearance order.
  std::map<std::pair<L1, Level>, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    members[{corpus[i].l1, corpus[i].level}].push_back(i);

  struct Cell {
    std::pair<L1, Level> id;
    double weight;
    std::size_t cap;
    double quota = 0.0;
    bool fixed = false;
  };
  std::vector<Cell> cells;
  std::size_t capacity = 0;
  for (const auto& [id, idx] : members) {
    const auto it = weights.find(id);
    const double w = it == weights.end() ? 0.0 : it->second;
    if (w > 0.0) {
      cells.push_back({id, w, idx.size()});
      capacity += idx.size();
    }
  }
  if (n > capacity)
    throw InsufficientData(n - capacity, "positive-weight cells cannot supply the sample");

  // Water-filling: proportional quotas, saturating cells at their membership.
  double remaining = static_cast<double>(n);
  for (bool changed = true; changed;) {
    changed = false;
    double wsum = 0.0;
    for (const Cell& c : cells)
      if (!c.fixed) wsum += c.weight;
    if (wsum <= 0.0) break;
    for (Cell& c : cells) {
      if (c.fixed) continue;
      c.quota = remaining * c.weight / wsum;
      if (c.quota >= static_cast<double>(c.cap)) {
        c.quota = static_cast<double>(c.cap);
        c.fixed = true;
        remaining -= c.quota;
        changed = true;
      }
    }
  }

  // Largest-remainder rounding.
  std::vector<std::size_t> take(cells.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    take[i] = std::min(cells[i].cap, static_cast<std::size_t>(cells[i].quota));
    assigned += take[i];
  }
  std::vector<std::size_t> by_remainder(cells.size());
  std::iota(by_remainder.begin(), by_remainder.end(), 0);
  std::stable_sort(by_remainder.begin(), by_remainder.end(), [&](std::size_t a, std::size_t b) {
    return cells[a].quota - static_cast<double>(take[a]) >
           cells[b].quota - static_cast<double>(take[b]);
  });
  for (std::size_t pass = 0; assigned < n; ++pass) {
    for (std::size_t i : by_remainder) {
      if (assigned == n) break;
      if (take[i] < cells[i].cap) {
        ++take[i];
        ++assigned;
      }
    }
    if (pass > cells.size()) break;
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> chosen;
  chosen.reserve(n);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::vector<std::size_t> idx = members[cells[i].id];
    std::shuffle(idx.begin(), idx.end(), rng);
    chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take[i]));
  }
  std::shuffle(chosen.begin(), chosen.end(), rng);
  Corpus out;
  out.reserve(chosen.size());
  for (std::size_t i : chosen) out.push_back(corpus[i]);
  return out;
}

}  // namespace

Corpus sample_random(std::span<const AnnotatedSentence> corpus, std::size_t n,
                     const CellWeights& weights, std::uint64_t seed) {
  return sample_by_quota(corpus, n, weights, seed);
}

Corpus sample_uniform(std::span<const AnnotatedSentence> corpus, std::size_t n,
                      std::uint64_t seed) {
  CellWeights w;
  for (const auto& s : corpus) w[{s.l1, s.level}] = 1.0;
  return sample_by_quota(corpus, n, w, seed);
}

double error_rate(std::span<const AnnotatedSentence> sentences) {
  std::size_t edits = 0;
  std::size_t tokens = 0;
  for (const auto& s : sentences) {
    edits += s.edits.size();
    tokens += s.source.size();
  }
  if (tokens == 0) throw StatisticError("error rate undefined: no source tokens");
  return 100.0 * static_cast<double>(edits) / static_cast<double>(tokens);
}

// --- JSON Lines ------------------------------------------------------------

namespace {

using nlohmann::json;

const json& require(const json& obj, const char* field, std::size_t line) {
  const auto it = obj.find(field);
  if (it == obj.end()) throw ParseError(std::string("missing field \"") + field + "\"", line);
  return *it;
}

Tokens tokens_from(const json& j, const char* field, std::size_t line) {
  if (!j.is_array()) throw ParseError(std::string("field \"") + field + "\" must be an array", line);
  Tokens out;
  out.reserve(j.size());
  for (const auto& t : j) {
    if (!t.is_string())
      throw ParseError(std::string("field \"") + field + "\" must hold strings", line);
    out.push_back(t.get<std::string>());
  }
  return out;
}

AnnotatedSentence sentence_from_json(const json& j, std::size_t line) {
  if (!j.is_object()) throw ParseError("expected a JSON object", line);
  AnnotatedSentence s;
  s.source = tokens_from(require(j, "source", line), "source", line);
  s.target = tokens_from(require(j, "target", line), "target", line);
  const json& edits = require(j, "edits", line);
  if (!edits.is_array()) throw ParseError("field \"edits\" must be an array", line);
  for (const auto& e : edits) {
    Edit edit;
    const json& start = require(e, "start", line);
    const json& end = require(e, "end", line);
    if (!start.is_number_unsigned() || !end.is_number_unsigned())
      throw ParseError("edit offsets must be nonnegative integers", line);
    edit.start = start.get<std::size_t>();
    edit.end = end.get<std::size_t>();
    edit.replacement = tokens_from(require(e, "replacement", line), "replacement", line);
    const json& type = require(e, "type", line);
    if (!type.is_string()) throw ParseError("edit type must be a string", line);
    try {
      edit.type = parse_error_type(type.get<std::string>());
    } catch (const ValidationError& ex) {
      throw ValidationError("line " + std::to_string(line) + ": " + ex.what());
    }
    s.edits.push_back(std::move(edit));
  }
  const json& l1 = require(j, "l1", line);
  const json& level = require(j, "level", line);
  if (!l1.is_string() || !level.is_string())
    throw ParseError("\"l1\" and \"level\" must be strings", line);
  try {
    s.l1 = parse_l1(l1.get<std::string>());
    s.level = parse_level(level.get<std::string>());
    validate_sentence(s);
  } catch (const ValidationError& ex) {
    throw ValidationError("line " + std::to_string(line) + ": " + ex.what());
  }
  return s;
}

json sentence_to_json(const AnnotatedSentence& s) {
  json edits = json::array();
  for (const Edit& e : s.edits) {
    edits.push_back({{"start", e.start},
                     {"end", e.end},
                     {"replacement", e.replacement},
                     {"type", std::string(to_string(e.type))}});
  }
  return {{"source", s.source},
          {"target", s.target},
          {"edits", std::move(edits)},
          {"l1", std::string(to_string(s.l1))},
          {"level", std::string(to_string(s.level))}};
}

}  // namespace

Corpus read_corpus(std::istream& in) {
  Corpus out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& ex) {
      throw ParseError(std::string("invalid JSON: ") + ex.what(), lineno);
    }
    out.push_back(sentence_from_json(j, lineno));
  }
  return out;
}

void write_corpus(std::ostream& out, std::span<const AnnotatedSentence> corpus) {
  for (const auto& s : corpus) out << sentence_to_json(s).dump() << '\n';
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus " + path.string());
  return read_corpus(in);
}

void save_corpus(std::span<const AnnotatedSentence> corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write corpus " + path.string());
  write_corpus(out, corpus);
}

// --- M2 --------------------------------------------------------------------

namespace {

std::vector<std::string> split_on(const std::string& s, std::string_view sep) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find(sep, pos);
    parts.push_back(s.substr(pos, next - pos));
    if (next == std::string::npos) break;
    pos = next + sep.size();
  }
  return parts;
}

// Accepts both bare category names and Errant-style "R:VERB:TENSE" tags.
ErrorType m2_type(const std::string& tag) {
  for (std::size_t i = 0; i < kTypeNames.size(); ++i)
    if (kTypeNames[i] == tag) return static_cast<ErrorType>(i);
  auto has = [&](std::string_view part) { return tag.find(part) != std::string::npos; };
  if (has("VERB:TENSE")) return ErrorType::Tense;
  if (has("NOUN:NUM")) return ErrorType::NNum;
  if (has("DET")) return ErrorType::Det;
  if (has("PREP")) return ErrorType::Prep;
  if (has("PRON")) return ErrorType::Pron;
  if (has("VERB")) return ErrorType::Verb;
  if (has("NOUN")) return ErrorType::Noun;
  return ErrorType::Other;
}

}  // namespace

Corpus read_m2(std::istream& in, L1 l1, Level level) {
  Corpus out;
  std::optional<AnnotatedSentence> cur;
  std::size_t block_line = 0;
  auto finish = [&] {
    if (!cur) return;
    std::sort(cur->edits.begin(), cur->edits.end(), [](const Edit& a, const Edit& b) {
      return std::tie(a.start, a.end) < std::tie(b.start, b.end);
    });
    try {
      cur->target = apply_edits(cur->source, cur->edits);
    } catch (const ValidationError& ex) {
      throw ValidationError("line " + std::to_string(block_line) + ": " + ex.what());
    }
    out.push_back(std::move(*cur));
    cur.reset();
  };
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      finish();
      continue;
    }
    if (line.rfind("S", 0) == 0 && (line.size() == 1 || line[1] == ' ')) {
      finish();
      cur.emplace();
      cur->l1 = l1;
      cur->level = level;
      block_line = lineno;
      std::istringstream ss(line.substr(1));
      for (std::string tok; ss >> tok;) cur->source.push_back(tok);
    } else if (line.rfind("A ", 0) == 0) {
      if (!cur) throw ParseError("annotation line before any S line", lineno);
      const auto fields = split_on(line.substr(2), "|||");
      if (fields.size() != 6) throw ParseError("expected 6 |||-separated fields", lineno);
      std::istringstream span(fields[0]);
      long long start = 0;
      long long end = 0;
      if (!(span >> start >> end)) throw ParseError("bad edit span '" + fields[0] + "'", lineno);
      if (fields[5] != "0")
        throw ParseError("annotator id " + fields[5] + " rejected; only annotator 0 is supported",
                         lineno);
      if (start < 0 || fields[1] == "noop") continue;
      if (end < start) throw ParseError("edit end before start", lineno);
      Edit e;
      e.start = static_cast<std::size_t>(start);
      e.end = static_cast<std::size_t>(end);
      e.type = m2_type(fields[1]);
      if (fields[2] != "-NONE-") {
        std::istringstream ss(fields[2]);
        for (std::string tok; ss >> tok;) e.replacement.push_back(tok);
      }
      cur->edits.push_back(std::move(e));
    } else {
      throw ParseError("unrecognised M2 line", lineno);
    }
  }
  finish();
  return out;
}

void write_m2(std::ostream& out, std::span<const AnnotatedSentence> corpus) {
  for (const auto& s : corpus) {
    out << "S " << join_tokens(s.source) << '\n';
    for (const Edit& e : s.edits) {
      out << "A " << e.start << ' ' << e.end << "|||" << to_string(e.type) << "|||"
          << join_tokens(e.replacement) << "|||REQUIRED|||-NONE-|||0\n";
    }
    out << '\n';
  }
}

}  // namespace gecadapt
