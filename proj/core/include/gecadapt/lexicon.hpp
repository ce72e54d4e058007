#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace gecadapt::lexicon {

struct VerbForms {
  std::string_view base;
  std::string_view third_person;  // 3rd person singular present
  std::string_view past;
};

bool is_determiner(std::string_view w);
bool is_preposition(std::string_view w);
bool is_pronoun(std::string_view w);

// Every verb known to the classifier, including irregular pasts.
std::span<const VerbForms> verbs();

enum class VerbForm { Base, ThirdPerson, Past };

struct VerbLookup {
  const VerbForms* verb;
  VerbForm form;
};

// Finds the known verb `w` is a form of. Base and past coincide for some verbs
// (e.g. "read"); Base wins.
std::optional<VerbLookup> lookup_verb(std::string_view w);

// True when `plural` is a regular plural of `singular` ("box"/"boxes",
// "city"/"cities", "dog"/"dogs").
bool is_regular_plural(std::string_view singular, std::string_view plural);

}  // namespace gecadapt::lexicon
