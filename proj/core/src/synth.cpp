#include "gecadapt/synth.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include "gecadapt/error.hpp"

namespace gecadapt {

namespace {

struct Noun {
  const char* singular;
  const char* plural;
  const char* indefinite;
};

struct Collocation {
  const char* base;
  const char* third_person;
  const char* past;
  const char* preposition;
};

struct Verb {
  const char* base;
  const char* third_person;
  const char* past;
};

struct Place {
  const char* preposition;
  const char* noun;
};

const std::vector<Tokens> kThirdPersonSubjects = {{"he"}, {"she"}, {"tom"}, {"anna"},
                                                  {"my", "brother"}, {"my", "sister"}};
const std::vector<Tokens> kOtherSubjects = {{"i"}, {"you"}, {"we"}, {"they"}, {"my", "parents"}};

const std::vector<Verb> kTransitive = {
    {"buy", "buys", "bought"},     {"see", "sees", "saw"},       {"find", "finds", "found"},
    {"take", "takes", "took"},     {"make", "makes", "made"},    {"get", "gets", "got"},
    {"bring", "brings", "brought"}, {"sell", "sells", "sold"},   {"like", "likes", "liked"},
    {"want", "wants", "wanted"},   {"visit", "visits", "visited"}, {"need", "needs", "needed"},
    {"clean", "cleans", "cleaned"}, {"paint", "paints", "painted"}, {"open", "opens", "opened"},
    {"carry", "carries", "carried"}, {"love", "loves", "loved"}, {"use", "uses", "used"},
    {"fix", "fixes", "fixed"},     {"choose", "chooses", "chose"}};

const std::vector<Noun> kObjects = {
    {"book", "books", "a"},       {"car", "cars", "a"},         {"dog", "dogs", "a"},
    {"cat", "cats", "a"},         {"bag", "bags", "a"},         {"phone", "phones", "a"},
    {"ticket", "tickets", "a"},   {"house", "houses", "a"},     {"picture", "pictures", "a"},
    {"letter", "letters", "a"},   {"box", "boxes", "a"},        {"bike", "bikes", "a"},
    {"key", "keys", "a"},         {"cake", "cakes", "a"},       {"computer", "computers", "a"},
    {"dress", "dresses", "a"},    {"city", "cities", "a"},      {"game", "games", "a"},
    {"chair", "chairs", "a"},     {"table", "tables", "a"},     {"window", "windows", "a"},
    {"apple", "apples", "an"},    {"orange", "oranges", "an"},  {"umbrella", "umbrellas", "an"},
    {"egg", "eggs", "an"}};

const std::vector<Collocation> kCollocations = {
    {"wait", "waits", "waited", "for"},     {"listen", "listens", "listened", "to"},
    {"look", "looks", "looked", "at"},      {"talk", "talks", "talked", "about"},
    {"ask", "asks", "asked", "for"},        {"think", "thinks", "thought", "about"}};

const std::vector<Noun> kCollocationObjects = {
    {"teacher", "teachers", "a"}, {"doctor", "doctors", "a"}, {"picture", "pictures", "a"},
    {"letter", "letters", "a"},   {"song", "songs", "a"},     {"map", "maps", "a"},
    {"film", "films", "a"},       {"trip", "trips", "a"},     {"bus", "buses", "a"},
    {"friend", "friends", "a"},   {"answer", "answers", "an"}, {"idea", "ideas", "an"}};

const std::vector<const char*> kNumbers = {"two", "three", "four", "five", "many", "several"};

const std::vector<Place> kPlaces = {
    {"in", "park"},    {"in", "garden"},  {"in", "kitchen"}, {"in", "shop"},   {"in", "library"},
    {"at", "station"}, {"at", "airport"}, {"at", "party"},   {"at", "office"}, {"at", "cinema"},
    {"on", "bus"},     {"on", "train"},   {"on", "beach"},   {"on", "farm"},   {"on", "boat"}};

const std::vector<const char*> kAdjectives = {"nice", "cheap",     "old",       "new",    "big",
                                              "small", "beautiful", "expensive", "useful", "heavy"};

const std::vector<std::string> kSwapPool = {"in", "on", "at", "for", "to", "about", "of", "with"};

enum class Site { Object, CollocationObject, Verb, PlacePrep, CollocationPrep, Clause };
constexpr std::size_t kNumSites = 6;

bool applicable(ErrorOp op, Site site) {
  switch (op) {
    case ErrorOp::ArticleDrop:
      return site == Site::Object || site == Site::CollocationObject;
    case ErrorOp::ArticleInsert:
    case ErrorOp::NounNumber:
      return site == Site::Object;
    case ErrorOp::PrepositionSwap:
      return site == Site::PlacePrep || site == Site::CollocationPrep;
    case ErrorOp::VerbAgreement:
    case ErrorOp::TenseShift:
      return site == Site::Verb;
    case ErrorOp::PronounDrop:
      return site == Site::Clause;
  }
  return false;
}

// Net change in source length per application.
int length_delta(ErrorOp op) {
  switch (op) {
    case ErrorOp::ArticleDrop:
    case ErrorOp::PronounDrop:
      return -1;
    case ErrorOp::ArticleInsert:
      return 1;
    default:
      return 0;
  }
}

enum class Slot { Subject, Verb, Object, Place, Clause, Collocation, Literal };

struct TemplateItem {
  Slot slot;
  std::string literal;
};

std::vector<TemplateItem> parse_template(const std::string& pattern) {
  std::vector<TemplateItem> items;
  std::istringstream ss(pattern);
  for (std::string tok; ss >> tok;) {
    if (tok == "{S}") items.push_back({Slot::Subject, {}});
    else if (tok == "{V}") items.push_back({Slot::Verb, {}});
    else if (tok == "{O}") items.push_back({Slot::Object, {}});
    else if (tok == "{PP}") items.push_back({Slot::Place, {}});
    else if (tok == "{C}") items.push_back({Slot::Clause, {}});
    else if (tok == "{CV}") items.push_back({Slot::Collocation, {}});
    else if (tok.front() == '{') throw ConfigError("unknown template slot " + tok);
    else items.push_back({Slot::Literal, tok});
  }
  const auto count = [&](Slot s) {
    return std::count_if(items.begin(), items.end(), [&](const auto& it) { return it.slot == s; });
  };
  if (count(Slot::Subject) != 1)
    throw ConfigError("template needs exactly one {S}: '" + pattern + "'");
  const bool transitive = count(Slot::Verb) == 1 && count(Slot::Object) == 1;
  const bool colloc = count(Slot::Collocation) == 1 && count(Slot::Verb) == 0 &&
                      count(Slot::Object) == 0;
  if (!transitive && !colloc)
    throw ConfigError("template needs {V} {O} or {CV}: '" + pattern + "'");
  if (count(Slot::Place) > 1 || count(Slot::Clause) > 1)
    throw ConfigError("template repeats a slot: '" + pattern + "'");
  return items;
}

// Expected clean length of one slot, used to aim the per-sentence error count.
double expected_length(Slot s) {
  switch (s) {
    case Slot::Subject: return 1.3;
    case Slot::Verb: return 1.0;
    case Slot::Object: return 1.8;
    case Slot::Place: return 3.0;
    case Slot::Clause: return 4.0;
    case Slot::Collocation: return 4.0;
    case Slot::Literal: return 1.0;
  }
  return 1.0;
}

struct Piece {
  Tokens clean;
  Tokens source;
  bool edited = false;
  ErrorType type = ErrorType::Other;
};

Piece keep(Tokens t) { return Piece{t, t, false, ErrorType::Other}; }
Piece keep(const char* w) { return keep(Tokens{w}); }
Piece corrupt(Tokens clean, Tokens source, ErrorType type) {
  return Piece{std::move(clean), std::move(source), true, type};
}

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

bool coin(double p, std::mt19937_64& rng) { return std::bernoulli_distribution(p)(rng); }

class SentenceBuilder {
 public:
  SentenceBuilder(const CellProfile& cell, std::mt19937_64& rng) : cell_(cell), rng_(rng) {}

  AnnotatedSentence build(const std::vector<TemplateItem>& items) {
    std::array<bool, kNumSites> present{};
    double expected_len = 0.0;
    for (const auto& it : items) {
      expected_len += expected_length(it.slot);
      switch (it.slot) {
        case Slot::Verb: present[idx(Site::Verb)] = true; break;
        case Slot::Object: present[idx(Site::Object)] = true; break;
        case Slot::Place: present[idx(Site::PlacePrep)] = true; break;
        case Slot::Clause: present[idx(Site::Clause)] = true; break;
        case Slot::Collocation:
          present[idx(Site::Verb)] = true;
          present[idx(Site::CollocationObject)] = true;
          present[idx(Site::CollocationPrep)] = true;
          break;
        default: break;
      }
    }
    plan_errors(present, expected_len);

    // Skeleton choices, constrained by the planned errors.
    const auto verb_op = op_at(Site::Verb);
    third_person_ = verb_op ? coin(0.75, rng_) : coin(0.5, rng_);
    if (verb_op == ErrorOp::VerbAgreement) past_ = false;
    else if (verb_op == ErrorOp::TenseShift) past_ = true;
    else past_ = coin(0.5, rng_);

    std::vector<Piece> pieces;
    for (const auto& it : items) render(it, pieces);

    AnnotatedSentence s;
    s.l1 = cell_.l1;
    s.level = cell_.level;
    for (auto& p : pieces) {
      if (p.edited && cell_.annotated_share < 1.0 && !coin(cell_.annotated_share, rng_)) {
        p.clean = p.source;
        p.edited = false;
      }
      if (p.edited) {
        Edit e;
        e.start = s.source.size();
        e.end = s.source.size() + p.source.size();
        e.replacement = p.clean;
        e.type = p.type;
        s.edits.push_back(std::move(e));
      }
      s.source.insert(s.source.end(), p.source.begin(), p.source.end());
      s.target.insert(s.target.end(), p.clean.begin(), p.clean.end());
    }
    return s;
  }

 private:
  static std::size_t idx(Site s) { return static_cast<std::size_t>(s); }

  std::optional<ErrorOp> op_at(Site s) const { return ops_[idx(s)]; }

  void plan_errors(const std::array<bool, kNumSites>& present, double expected_len) {
    ops_.fill(std::nullopt);
    const auto& w = cell_.op_weights;
    // Usable sites and the mean length change of the ops that can fire here.
    std::size_t capacity = 0;
    for (std::size_t s = 0; s < kNumSites; ++s) {
      if (!present[s]) continue;
      for (std::size_t o = 0; o < kNumErrorOps; ++o) {
        if (w[o] > 0.0 && applicable(static_cast<ErrorOp>(o), static_cast<Site>(s))) {
          ++capacity;
          break;
        }
      }
    }
    if (capacity == 0 || cell_.errors_per_100 <= 0.0) return;
    double wsum = 0.0;
    double delta = 0.0;
    for (std::size_t o = 0; o < kNumErrorOps; ++o) {
      bool usable = false;
      for (std::size_t s = 0; s < kNumSites; ++s)
        usable = usable || (present[s] && applicable(static_cast<ErrorOp>(o), static_cast<Site>(s)));
      if (!usable) continue;
      wsum += w[o];
      delta += w[o] * length_delta(static_cast<ErrorOp>(o));
    }
    delta /= wsum;
    const double rate = cell_.errors_per_100 / 100.0;
    const double lambda = rate * expected_len / (1.0 - rate * delta);
    const double p = std::min(1.0, lambda / static_cast<double>(capacity));
    const int k = std::binomial_distribution<int>(static_cast<int>(capacity), p)(rng_);

    std::array<bool, kNumSites> used{};
    for (int n = 0; n < k; ++n) {
      std::array<double, kNumErrorOps> avail{};
      for (std::size_t o = 0; o < kNumErrorOps; ++o) {
        for (std::size_t s = 0; s < kNumSites; ++s) {
          if (present[s] && !used[s] && applicable(static_cast<ErrorOp>(o), static_cast<Site>(s))) {
            avail[o] = w[o];
            break;
          }
        }
      }
      if (std::accumulate(avail.begin(), avail.end(), 0.0) <= 0.0) break;
      std::discrete_distribution<std::size_t> choose_op(avail.begin(), avail.end());
      const auto op = static_cast<ErrorOp>(choose_op(rng_));
      std::vector<std::size_t> free;
      for (std::size_t s = 0; s < kNumSites; ++s)
        if (present[s] && !used[s] && applicable(op, static_cast<Site>(s))) free.push_back(s);
      const std::size_t site = pick(free, rng_);
      used[site] = true;
      ops_[site] = op;
    }
  }

  const char* article_for(const Noun& noun, std::optional<ErrorOp> op) {
    const bool indefinite = op == ErrorOp::ArticleDrop ? coin(cell_.indefinite_drop_share, rng_)
                                                       : coin(0.5, rng_);
    return indefinite ? noun.indefinite : "the";
  }

  std::string wrong_preposition(const std::string& correct) {
    const auto it = cell_.preposition_confusions.find(correct);
    if (it != cell_.preposition_confusions.end() && !it->second.empty())
      return pick(it->second, rng_);
    std::vector<std::string> others;
    for (const auto& p : kSwapPool)
      if (p != correct) others.push_back(p);
    return pick(others, rng_);
  }

  void render_verb(const char* base, const char* third, const char* past, std::vector<Piece>& out) {
    const auto op = op_at(Site::Verb);
    const char* correct = past_ ? past : (third_person_ ? third : base);
    if (op == ErrorOp::VerbAgreement) {
      out.push_back(corrupt({correct}, {third_person_ ? base : third}, ErrorType::Verb));
    } else if (op == ErrorOp::TenseShift) {
      out.push_back(corrupt({correct}, {base}, ErrorType::Tense));
    } else {
      out.push_back(keep(correct));
    }
  }

  void render_preposition(const std::string& correct, Site site, std::vector<Piece>& out) {
    if (op_at(site) == ErrorOp::PrepositionSwap)
      out.push_back(corrupt({correct}, {wrong_preposition(correct)}, ErrorType::Prep));
    else
      out.push_back(keep(Tokens{correct}));
  }

  void render_singular(const Noun& noun, Site site, std::vector<Piece>& out) {
    const auto op = op_at(site);
    const char* art = article_for(noun, op);
    if (op == ErrorOp::ArticleDrop) out.push_back(corrupt({art}, {}, ErrorType::Det));
    else out.push_back(keep(art));
    out.push_back(keep(noun.singular));
  }

  void render(const TemplateItem& it, std::vector<Piece>& out) {
    switch (it.slot) {
      case Slot::Literal:
        out.push_back(keep(Tokens{it.literal}));
        break;
      case Slot::Subject:
        out.push_back(keep(pick(third_person_ ? kThirdPersonSubjects : kOtherSubjects, rng_)));
        break;
      case Slot::Verb: {
        const Verb& v = pick(kTransitive, rng_);
        render_verb(v.base, v.third_person, v.past, out);
        break;
      }
      case Slot::Object: {
        const Noun& noun = pick(kObjects, rng_);
        const auto op = op_at(Site::Object);
        enum { Singular, Counted, Bare } form;
        if (op == ErrorOp::ArticleDrop) form = Singular;
        else if (op == ErrorOp::ArticleInsert) form = Bare;
        else if (op == ErrorOp::NounNumber) form = Counted;
        else {
          const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
          form = u < 0.5 ? Singular : (u < 0.75 ? Counted : Bare);
        }
        plural_object_ = form != Singular;
        if (form == Singular) {
          render_singular(noun, Site::Object, out);
        } else if (form == Counted) {
          out.push_back(keep(pick(kNumbers, rng_)));
          if (op == ErrorOp::NounNumber)
            out.push_back(corrupt({noun.plural}, {noun.singular}, ErrorType::NNum));
          else
            out.push_back(keep(noun.plural));
        } else {
          if (op == ErrorOp::ArticleInsert) out.push_back(corrupt({}, {"the"}, ErrorType::Det));
          out.push_back(keep(noun.plural));
        }
        break;
      }
      case Slot::Collocation: {
        const Collocation& c = pick(kCollocations, rng_);
        render_verb(c.base, c.third_person, c.past, out);
        render_preposition(c.preposition, Site::CollocationPrep, out);
        render_singular(pick(kCollocationObjects, rng_), Site::CollocationObject, out);
        plural_object_ = false;
        break;
      }
      case Slot::Place: {
        const Place& p = pick(kPlaces, rng_);
        render_preposition(p.preposition, Site::PlacePrep, out);
        out.push_back(keep("the"));
        out.push_back(keep(p.noun));
        break;
      }
      case Slot::Clause: {
        out.push_back(keep("because"));
        const char* pron = plural_object_ ? "they" : "it";
        if (op_at(Site::Clause) == ErrorOp::PronounDrop)
          out.push_back(corrupt({pron}, {}, ErrorType::Pron));
        else
          out.push_back(keep(pron));
        out.push_back(keep(plural_object_ ? "are" : "is"));
        out.push_back(keep(pick(kAdjectives, rng_)));
        break;
      }
    }
  }

  const CellProfile& cell_;
  std::mt19937_64& rng_;
  std::array<std::optional<ErrorOp>, kNumSites> ops_{};
  bool third_person_ = false;
  bool past_ = false;
  bool plural_object_ = false;
};

// Odds that a dropped article was indefinite, and that an ambiguous bare verb
// after a third-person subject lost its agreement (rather than its tense).
struct Leaning {
  double indefinite_odds;
  double agreement_odds;
};

Leaning l1_leaning(L1 l1) {
  switch (l1) {
    case L1::AR: return {0.6, 1.5};
    case L1::CN: return {0.2, 4.0};
    case L1::FR: return {1.5, 0.6};
    case L1::DE: return {4.0, 0.3};
    case L1::GR: return {0.7, 1.8};
    case L1::IT: return {1.3, 0.7};
    case L1::PL: return {0.3, 2.2};
    case L1::PT: return {1.6, 0.8};
    case L1::RU: return {0.25, 2.5};
    case L1::ES: return {0.45, 2.5};
    case L1::CH: return {3.0, 0.4};
    case L1::TR: return {0.35, 3.0};
    case L1::Other: return {1.0, 1.0};
  }
  return {1.0, 1.0};
}

Leaning level_leaning(Level level) {
  switch (level) {
    case Level::A1: return {2.0, 3.0};
    case Level::A2: return {2.0, 3.0};
    case Level::B1: return {1.2, 1.2};
    case Level::B2: return {0.5, 0.3};
    case Level::C1: return {0.7, 0.5};
    case Level::C2: return {0.8, 0.6};
  }
  return {1.0, 1.0};
}

// Article drop, article insert, preposition swap, verb (agreement + tense),
// noun number, pronoun drop.
std::array<double, 6> l1_mix(L1 l1) {
  switch (l1) {
    case L1::ES: return {1.2, 0.6, 1.5, 1.8, 0.8, 1.4};
    case L1::CN: return {2.0, 1.2, 0.8, 1.8, 1.4, 0.5};
    case L1::DE: return {1.8, 0.5, 0.8, 1.6, 0.6, 0.3};
    case L1::FR: return {1.0, 0.9, 1.0, 2.2, 0.6, 0.4};
    case L1::RU: return {1.9, 1.1, 0.9, 1.6, 1.0, 0.4};
    default: return {1.0, 0.8, 1.0, 1.6, 0.8, 0.6};
  }
}

std::map<std::string, std::vector<std::string>> l1_confusions(L1 l1) {
  switch (l1) {
    case L1::ES:
      return {{"in", {"on"}}, {"at", {"in"}}, {"on", {"in"}},
              {"for", {"to"}}, {"to", {"at"}}, {"about", {"of"}}};
    case L1::CN:
      return {{"in", {"at"}}, {"at", {"in"}}, {"on", {"in"}},
              {"for", {"to"}}, {"to", {"for"}}, {"about", {"on"}}};
    case L1::DE:
      return {{"in", {"on"}}, {"at", {"in"}}, {"on", {"at"}},
              {"for", {"about"}}, {"to", {"at"}}, {"about", {"over"}}};
    case L1::FR:
      return {{"in", {"at"}}, {"at", {"on"}}, {"on", {"in"}},
              {"for", {"to"}}, {"to", {"at"}}, {"about", {"on"}}};
    default:
      return {};
  }
}

CellProfile make_cell(L1 l1, Level level, double rate) {
  const auto mix = l1_mix(l1);
  const Leaning a = l1_leaning(l1);
  const Leaning b = level_leaning(level);
  const double agree_odds = a.agreement_odds * b.agreement_odds;
  const double indef_odds = a.indefinite_odds * b.indefinite_odds;
  CellProfile c;
  c.l1 = l1;
  c.level = level;
  c.errors_per_100 = rate;
  c.op_weights = {mix[0],
                  mix[1],
                  mix[2],
                  mix[3] * agree_odds / (1.0 + agree_odds),
                  mix[3] / (1.0 + agree_odds),
                  mix[4],
                  mix[5]};
  c.indefinite_drop_share = indef_odds / (1.0 + indef_odds);
  c.preposition_confusions = l1_confusions(l1);
  return c;
}

}  // namespace

std::string_view to_string(ErrorOp op) {
  static constexpr std::array<std::string_view, kNumErrorOps> names = {
      "article-drop", "article-insert", "preposition-swap", "verb-agreement",
      "tense-shift",  "noun-number",    "pronoun-drop"};
  return names[static_cast<std::size_t>(op)];
}

ErrorType error_type_of(ErrorOp op) {
  switch (op) {
    case ErrorOp::ArticleDrop:
    case ErrorOp::ArticleInsert: return ErrorType::Det;
    case ErrorOp::PrepositionSwap: return ErrorType::Prep;
    case ErrorOp::VerbAgreement: return ErrorType::Verb;
    case ErrorOp::TenseShift: return ErrorType::Tense;
    case ErrorOp::NounNumber: return ErrorType::NNum;
    case ErrorOp::PronounDrop: return ErrorType::Pron;
  }
  return ErrorType::Other;
}

void GeneratorProfile::validate() const {
  if (templates.empty()) throw ConfigError("generator template bank is empty");
  for (const auto& t : templates) parse_template(t);
  if (cells.empty()) throw ConfigError("generator profile has no cells");
  for (const auto& c : cells) {
    const std::string where = std::string(to_string(c.l1)) + "-" + std::string(to_string(c.level));
    double total = 0.0;
    for (double w : c.op_weights) {
      if (!(w >= 0.0)) throw ConfigError("negative error weight in cell " + where);
      total += w;
    }
    if (total <= 0.0) throw ConfigError("all error weights are zero in cell " + where);
    if (!(c.errors_per_100 >= 0.0) || c.errors_per_100 >= 100.0)
      throw ConfigError("error rate out of range in cell " + where);
    if (!(c.share >= 0.0)) throw ConfigError("negative share in cell " + where);
    if (!(c.indefinite_drop_share >= 0.0 && c.indefinite_drop_share <= 1.0))
      throw ConfigError("indefinite share outside [0,1] in cell " + where);
    if (!(c.annotated_share >= 0.0 && c.annotated_share <= 1.0))
      throw ConfigError("annotated share outside [0,1] in cell " + where);
  }
}

std::vector<std::string> default_template_bank() {
  return {"{S} {V} {O} .",       "{S} {V} {O} {PP} .", "{S} {V} {O} {C} .",
          "{S} {V} {O} {PP} {C} .", "{S} {CV} .",      "{S} {CV} {PP} .",
          "{S} {CV} {C} .",      "{S} {CV} {PP} {C} ."};
}

double default_level_rate(Level level) {
  switch (level) {
    case Level::A1: return 17.3;
    case Level::A2: return 17.3;
    case Level::B1: return 13.0;
    case Level::B2: return 12.5;
    case Level::C1: return 12.1;
    case Level::C2: return 10.0;
  }
  return 13.0;
}

GeneratorProfile default_profile(std::span<const L1> l1s, std::span<const Level> levels,
                                 std::uint64_t seed) {
  static const std::map<std::pair<L1, Level>, double> measured = {
      {{L1::CN, Level::C1}, 12.13}, {{L1::FR, Level::B1}, 13.17}, {{L1::DE, Level::B1}, 12.48},
      {{L1::IT, Level::B1}, 12.13}, {{L1::PT, Level::B1}, 13.14}, {{L1::ES, Level::A2}, 17.33},
      {{L1::ES, Level::B1}, 13.28}, {{L1::ES, Level::B2}, 12.53}};
  GeneratorProfile p;
  p.templates = default_template_bank();
  p.seed = seed;
  for (L1 l1 : l1s) {
    for (Level level : levels) {
      const auto it = measured.find({l1, level});
      p.cells.push_back(
          make_cell(l1, level, it != measured.end() ? it->second : default_level_rate(level)));
    }
  }
  return p;
}

GeneratorProfile general_profile(std::uint64_t seed) {
  CellProfile c;
  c.l1 = L1::Other;
  c.level = Level::C2;
  c.errors_per_100 = 6.0;
  c.op_weights = {1.0, 1.0, 1.0, 0.8, 0.8, 1.0, 0.15};
  c.indefinite_drop_share = 0.5;
  c.annotated_share = 0.6;
  GeneratorProfile p;
  p.cells = {c};
  p.templates = default_template_bank();
  p.seed = seed;
  return p;
}

Corpus generate_corpus(const GeneratorProfile& profile, std::size_t n) {
  profile.validate();
  std::vector<std::vector<TemplateItem>> templates;
  for (const auto& t : profile.templates) templates.push_back(parse_template(t));

  // Allot sentences to cells by share, largest remainder.
  const double total_share = std::accumulate(
      profile.cells.begin(), profile.cells.end(), 0.0,
      [](double acc, const CellProfile& c) { return acc + c.share; });
  if (total_share <= 0.0 && n > 0) throw ConfigError("generator cell shares sum to zero");
  std::vector<std::size_t> counts(profile.cells.size());
  std::vector<double> remainder(profile.cells.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < profile.cells.size(); ++i) {
    const double q = total_share > 0.0 ? static_cast<double>(n) * profile.cells[i].share / total_share
                                        : 0.0;
    counts[i] = static_cast<std::size_t>(q);
    remainder[i] = q - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(profile.cells.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < n; i = (i + 1) % order.size(), ++assigned) ++counts[order[i]];

  std::vector<std::size_t> schedule;
  schedule.reserve(n);
  for (std::size_t i = 0; i < counts.size(); ++i) schedule.insert(schedule.end(), counts[i], i);
  std::mt19937_64 rng(profile.seed);
  std::shuffle(schedule.begin(), schedule.end(), rng);

  Corpus out;
  out.reserve(n);
  for (std::size_t cell : schedule) {
    SentenceBuilder builder(profile.cells[cell], rng);
    out.push_back(builder.build(pick(templates, rng)));
  }
  return out;
}

}  // namespace gecadapt
