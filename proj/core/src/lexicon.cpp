#include "gecadapt/lexicon.hpp"

#include <algorithm>
#include <array>

namespace gecadapt::lexicon {

namespace {

constexpr std::array<std::string_view, 13> kDeterminers = {
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "no", "every", "each",
    "another"};

constexpr std::array<std::string_view, 30> kPrepositions = {
    "in",     "on",      "at",      "to",     "for",    "of",     "with",   "from",
    "by",     "about",   "into",    "onto",   "over",   "under",  "during", "between",
    "through", "after",  "before",  "without", "within", "across", "behind", "near",
    "since",  "until",   "towards", "among",  "around", "upon"};

constexpr std::array<std::string_view, 30> kPronouns = {
    "i",      "me",       "you",     "he",      "him",       "she",   "her",  "it",
    "we",     "us",       "they",    "them",    "myself",    "yourself", "himself", "herself",
    "itself", "ourselves", "themselves", "mine", "yours",    "his",   "hers", "ours",
    "theirs", "its",      "my",      "your",    "our",       "their"};

constexpr std::array<VerbForms, 52> kVerbs = {{
    {"be", "is", "was"},           {"have", "has", "had"},
    {"do", "does", "did"},         {"go", "goes", "went"},
    {"see", "sees", "saw"},        {"buy", "buys", "bought"},
    {"find", "finds", "found"},    {"take", "takes", "took"},
    {"make", "makes", "made"},     {"get", "gets", "got"},
    {"bring", "brings", "brought"}, {"sell", "sells", "sold"},
    {"think", "thinks", "thought"}, {"write", "writes", "wrote"},
    {"give", "gives", "gave"},     {"know", "knows", "knew"},
    {"come", "comes", "came"},     {"eat", "eats", "ate"},
    {"read", "reads", "read"},     {"like", "likes", "liked"},
    {"want", "wants", "wanted"},   {"visit", "visits", "visited"},
    {"need", "needs", "needed"},   {"clean", "cleans", "cleaned"},
    {"paint", "paints", "painted"}, {"open", "opens", "opened"},
    {"carry", "carries", "carried"}, {"love", "loves", "loved"},
    {"use", "uses", "used"},       {"fix", "fixes", "fixed"},
    {"order", "orders", "ordered"}, {"wait", "waits", "waited"},
    {"listen", "listens", "listened"}, {"look", "looks", "looked"},
    {"talk", "talks", "talked"},   {"ask", "asks", "asked"},
    {"play", "plays", "played"},   {"help", "helps", "helped"},
    {"watch", "watches", "watched"}, {"study", "studies", "studied"},
    {"try", "tries", "tried"},     {"live", "lives", "lived"},
    {"work", "works", "worked"},   {"start", "starts", "started"},
    {"finish", "finishes", "finished"}, {"enjoy", "enjoys", "enjoyed"},
    {"leave", "leaves", "left"},   {"meet", "meets", "met"},
    {"send", "sends", "sent"},     {"keep", "keeps", "kept"},
    {"lose", "loses", "lost"},     {"choose", "chooses", "chose"},
}};

template <std::size_t N>
bool contains(const std::array<std::string_view, N>& words, std::string_view w) {
  return std::find(words.begin(), words.end(), w) != words.end();
}

bool ends_with(std::string_view w, std::string_view suffix) {
  return w.size() >= suffix.size() && w.substr(w.size() - suffix.size()) == suffix;
}

}  // namespace

bool is_determiner(std::string_view w) { return contains(kDeterminers, w); }
bool is_preposition(std::string_view w) { return contains(kPrepositions, w); }
bool is_pronoun(std::string_view w) { return contains(kPronouns, w); }

std::span<const VerbForms> verbs() { return kVerbs; }

std::optional<VerbLookup> lookup_verb(std::string_view w) {
  for (const auto& v : kVerbs) {
    if (v.base == w) return VerbLookup{&v, VerbForm::Base};
    if (v.third_person == w) return VerbLookup{&v, VerbForm::ThirdPerson};
    if (v.past == w) return VerbLookup{&v, VerbForm::Past};
  }
  return std::nullopt;
}

bool is_regular_plural(std::string_view singular, std::string_view plural) {
  if (singular.empty() || plural.size() <= singular.size()) return false;
  if (plural.size() == singular.size() + 1 && plural.substr(0, singular.size()) == singular &&
      plural.back() == 's')
    return true;
  if (plural.size() == singular.size() + 2 && plural.substr(0, singular.size()) == singular &&
      ends_with(plural, "es"))
    return true;
  // city -> cities
  if (ends_with(singular, "y") && ends_with(plural, "ies") &&
      plural.substr(0, plural.size() - 3) == singular.substr(0, singular.size() - 1))
    return true;
  return false;
}

}  // namespace gecadapt::lexicon
