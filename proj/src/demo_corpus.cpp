// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "occlm/demo_corpus.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <set>

#include "occlm/rng.hpp"

namespace occlm {
namespace {

constexpr std::uint64_t kLexiconSeed = 0x51ed2701;

constexpr std::array<const char*, 24> kSyllables = {"ka", "mo", "le", "tse", "ba", "ngwa", "di", "ro",
                                                    "pe", "so", "thu", "fa", "lo", "ma", "ne", "ri",
                                                    "go", "se", "ta", "wa", "bo", "phe", "ku", "na"};
constexpr std::array<const char*, 7> kDays = {"monday", "tuesday", "wednesday", "thursday",
                                              "friday", "saturday", "sunday"};
constexpr std::array<const char*, 8> kNumbers = {"two", "three", "four", "five", "six", "seven", "ten", "twelve"};

struct Noun {
  std::string word;
  std::array<std::size_t, 3> verbs;
  std::array<std::size_t, 2> adjectives;
};

struct Lexicon {
  std::vector<Noun> nouns;
  std::vector<std::string> verbs;
  std::vector<std::string> adjectives;
  std::vector<std::string> places;
  std::vector<std::string> names;
};

std::vector<std::string> make_words(Rng& rng, std::size_t count, std::size_t min_syl, std::size_t max_syl,
                                    std::set<std::string>& used) {
  std::vector<std::string> out;
  while (out.size() < count) {
    const std::size_t n = min_syl + rng.below(max_syl - min_syl + 1);
    std::string w;
    for (std::size_t i = 0; i < n; ++i) w += kSyllables[rng.below(kSyllables.size())];
    if (used.insert(w).second) out.push_back(w);
  }
  return out;
}

const Lexicon& lexicon() {
  static const Lexicon lex = [] {
    Rng rng(kLexiconSeed);
    std::set<std::string> used;
    Lexicon l;
    const auto nouns = make_words(rng, 60, 2, 3, used);
    l.verbs = make_words(rng, 36, 2, 3, used);
    l.adjectives = make_words(rng, 24, 2, 2, used);
    l.places = make_words(rng, 14, 3, 4, used);
    l.names = make_words(rng, 18, 2, 3, used);
    for (const auto& w : nouns) {
      Noun n{w, {}, {}};
      for (auto& v : n.verbs) v = rng.below(l.verbs.size());
      for (auto& a : n.adjectives) a = rng.below(l.adjectives.size());
      l.nouns.push_back(n);
    }
    return l;
  }();
  return lex;
}

// Zipf-like rank choice so a few content words dominate.
std::size_t zipf(Rng& rng, std::size_t n) {
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += 1.0 / std::pow(static_cast<double>(i + 1), 0.9);
  double u = rng.uniform() * z;
  for (std::size_t i = 0; i < n; ++i) {
    u -= 1.0 / std::pow(static_cast<double>(i + 1), 0.9);
    if (u < 0.0) return i;
  }
  return n - 1;
}

class SentenceMaker {
 public:
  explicit SentenceMaker(Rng& rng) : rng_(rng), lex_(lexicon()) {}

  std::string general() {
    const Noun& n = noun();
    const Noun& m = noun();
    switch (rng_.below(6)) {
      case 0:
        return "the " + adj(n) + " " + n.word + " " + verb(n) + " the " + m.word;
      case 1:
        return name() + " " + verb(n) + " a " + n.word + " in " + place();
      case 2:
        return name() + " said that the " + n.word + " was " + adj(n);
      case 3:
        return "in " + place() + " the " + n.word + " " + verb(n) + " with " + name();
      case 4:
        return "a " + adj(n) + " " + n.word + " and a " + adj(m) + " " + m.word + " " + verb(m) + " the " +
               noun().word;
      default:
        return name() + " and " + name() + " " + verb(n) + " the " + n.word + " at home";
    }
  }

  std::string news() {
    const Noun& n = noun();
    const Noun& m = noun();
    switch (rng_.below(5)) {
      case 0:
        return name() + " of " + place() + " said on " + day() + " that the " + n.word + " will " + verb(n) +
               " the " + m.word;
      case 1:
        return "the " + place() + " " + n.word + " council " + verb(n) + " a new " + m.word + " on " + day();
      case 2:
        return "officials in " + place() + " reported that " + number() + " " + n.word + " " + verb(n) + " the " +
               adj(m) + " " + m.word;
      case 3:
        return "according to " + name() + " , the " + adj(n) + " " + n.word + " of " + place() + " " + verb(n) +
               " the " + m.word;
      default:
        return "on " + day() + " the " + n.word + " of " + place() + " was " + adj(n) + " , " + name() + " said";
    }
  }

 private:
  const Noun& noun() { return lex_.nouns[zipf(rng_, lex_.nouns.size())]; }
  std::string verb(const Noun& n) { return lex_.verbs[n.verbs[rng_.below(n.verbs.size())]]; }
  std::string adj(const Noun& n) { return lex_.adjectives[n.adjectives[rng_.below(n.adjectives.size())]]; }
  std::string place() { return lex_.places[zipf(rng_, lex_.places.size())]; }
  std::string name() { return lex_.names[rng_.below(lex_.names.size())]; }
  std::string day() { return kDays[rng_.below(kDays.size())]; }
  std::string number() { return kNumbers[rng_.below(kNumbers.size())]; }

  Rng& rng_;
  const Lexicon& lex_;
};

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

}  // namespace

std::vector<std::string> demo_corpus(DemoStyle style, std::size_t n_lines, std::uint64_t seed) {
  Rng rng(derive_seed(seed, style == DemoStyle::kGeneral ? 11 : 23));
  SentenceMaker maker(rng);
  std::vector<std::string> lines;
  lines.reserve(n_lines);
  for (std::size_t i = 0; i < n_lines; ++i) {
    const std::size_t sentences = 1 + rng.below(3);
    std::string line;
    for (std::size_t s = 0; s < sentences; ++s) {
      if (!line.empty()) line += ' ';
      std::string text = style == DemoStyle::kGeneral ? maker.general() : maker.news();
      // A little raw-text noise for the cleaning stage to remove.
      switch (rng.below(12)) {
        case 0:
          text += "...";
          break;
        case 1:
          text = "# " + text + ".";
          break;
        case 2:
          text += " (" + std::string(style == DemoStyle::kGeneral ? "story" : "report") + "/update).";
          break;
        default:
          text += ".";
      }
      line += capitalize(text);
    }
    lines.push_back(line);
  }
  return lines;
}

}  // namespace occlm
