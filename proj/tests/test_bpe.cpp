// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "occlm/bpe.hpp"
#include "occlm/corpus.hpp"
#include "occlm/demo_corpus.hpp"
#include "occlm/errors.hpp"
#include "occlm/utf8.hpp"
#include "support.hpp"

namespace occlm {
namespace {

// ---- reference trainer -------------------------------------------------------
// Straightforward quadratic BPE over strings, ASCII input only. Recounts all
// pairs after every merge.

enum class RefClass { kLetter, kDigit, kSpace, kOther };

RefClass ref_class(char c) {
  if (std::isalpha(static_cast<unsigned char>(c))) return RefClass::kLetter;
  if (std::isdigit(static_cast<unsigned char>(c))) return RefClass::kDigit;
  if (std::isspace(static_cast<unsigned char>(c))) return RefClass::kSpace;
  return RefClass::kOther;
}

std::vector<std::string> ref_chunks(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t j = i;
    if (s[i] == ' ' && i + 1 < s.size() && ref_class(s[i + 1]) != RefClass::kSpace) {
      const RefClass c = ref_class(s[i + 1]);
      j = i + 1;
      while (j < s.size() && ref_class(s[j]) == c) ++j;
    } else if (ref_class(s[i]) == RefClass::kSpace) {
      while (j < s.size() && ref_class(s[j]) == RefClass::kSpace) ++j;
      if (j < s.size() && j - 1 > i && s[j - 1] == ' ') --j;
    } else {
      const RefClass c = ref_class(s[i]);
      while (j < s.size() && ref_class(s[j]) == c) ++j;
    }
    out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

using RefPair = std::pair<std::string, std::string>;

std::vector<RefPair> reference_merges(const std::vector<std::string>& corpus, std::size_t target_size) {
  std::map<std::string, long> freq;
  for (const auto& line : corpus) {
    for (const auto& c : ref_chunks(line)) ++freq[c];
  }
  std::vector<std::pair<std::vector<std::string>, long>> words;
  for (const auto& [chunk, f] : freq) {
    std::vector<std::string> syms;
    for (char ch : chunk) syms.emplace_back(1, ch);
    words.emplace_back(std::move(syms), f);
  }
  std::set<std::string> tokens;
  for (int b = 0; b < 256; ++b) tokens.insert(std::string(1, static_cast<char>(b)));
  std::size_t size = 3 + 256;
  std::vector<RefPair> merges;
  std::set<RefPair> rules;
  while (size < target_size) {
    std::map<RefPair, long> counts;
    for (const auto& [syms, f] : words) {
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) counts[{syms[i], syms[i + 1]}] += f;
    }
    const RefPair* best = nullptr;
    long best_count = 0;
    for (const auto& [pair, count] : counts) {  // map order is lexicographic
      if (count > best_count) {
        best = &pair;
        best_count = count;
      }
    }
    if (best == nullptr || best_count < 2) break;
    const RefPair chosen = *best;
    if (!rules.count(chosen)) {
      rules.insert(chosen);
      merges.push_back(chosen);
      if (tokens.insert(chosen.first + chosen.second).second) ++size;
    }
    for (auto& [syms, f] : words) {
      std::vector<std::string> next;
      for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == chosen.first && syms[i + 1] == chosen.second) {
          next.push_back(chosen.first + chosen.second);
          ++i;
        } else {
          next.push_back(syms[i]);
        }
      }
      syms = std::move(next);
    }
  }
  return merges;
}

std::vector<std::string> seed_corpus(std::size_t n) {
  std::vector<std::string> lines = demo_corpus(DemoStyle::kGeneral, n, 3);
  for (auto& l : lines) l = normalize(l);
  return lines;
}

// ---- tests -------------------------------------------------------------------

TEST(TrainBpe, SingleDominantPairMergesFirst) {
  const std::vector<std::string> corpus{"aaaa aaaa"};
  const Vocabulary v = train_bpe(corpus, 260);
  ASSERT_EQ(v.merges().size(), 1u);
  EXPECT_EQ(v.token(v.merges()[0].left), "a");
  EXPECT_EQ(v.token(v.merges()[0].right), "a");
  EXPECT_EQ(v.size(), 260u);
}

TEST(TrainBpe, MatchesReferenceTrainerOnSeedCorpus) {
  const auto corpus = seed_corpus(1000);
  ASSERT_EQ(corpus.size(), 1000u);
  for (const auto& l : corpus) {
    for (unsigned char c : l) ASSERT_LT(c, 0x80) << "reference trainer is ASCII-only";
  }
  const std::size_t target = 700;
  const Vocabulary v = train_bpe(corpus, target);
  const auto expected = reference_merges(corpus, target);
  ASSERT_EQ(v.merges().size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_EQ(v.token(v.merges()[i].left), expected[i].first) << "merge " << i;
    EXPECT_EQ(v.token(v.merges()[i].right), expected[i].second) << "merge " << i;
  }
  EXPECT_LE(v.size(), target);
}

TEST(TrainBpe, InvariantsHold) {
  const Vocabulary v = train_bpe(seed_corpus(300), 400);
  EXPECT_LE(v.size(), v.target_size());
  std::set<std::pair<TokenId, TokenId>> seen_rules;
  for (const Merge& m : v.merges()) {
    EXPECT_TRUE(seen_rules.insert({m.left, m.right}).second) << "duplicate rank";
    EXPECT_FALSE(v.is_special(m.result));
    EXPECT_FALSE(v.is_special(m.left));
    EXPECT_FALSE(v.is_special(m.right));
  }
  for (std::size_t id = Vocabulary::kNumSpecials; id < v.size(); ++id) {
    EXPECT_EQ(v.find(v.token(static_cast<TokenId>(id))), static_cast<TokenId>(id));
  }
  const SpecialIds s = v.specials();
  EXPECT_NE(s.pad, s.occ);
  EXPECT_NE(s.pad, s.eot);
  EXPECT_NE(s.occ, s.eot);
}

TEST(TrainBpe, DeterministicMergesAndFileBytes) {
  const auto corpus = seed_corpus(300);
  EXPECT_EQ(train_bpe(corpus, 450).serialize(), train_bpe(corpus, 450).serialize());
}

TEST(TrainBpe, RejectsDegenerateInput) {
  const std::vector<std::string> empty;
  EXPECT_THROW(train_bpe(empty, 500), DataError);
  const std::vector<std::string> one{"abc"};
  EXPECT_THROW(train_bpe(one, 259), ConfigError);
  const std::vector<std::string> bad{std::string("\xff\xfe")};
  EXPECT_THROW(train_bpe(bad, 300), EncodingError);
}

TEST(TrainBpe, MonotoneCoverage) {
  const auto corpus = seed_corpus(300);
  std::size_t previous = SIZE_MAX;
  for (std::size_t target : {260, 300, 350, 420, 520}) {
    const Vocabulary v = train_bpe(corpus, target);
    std::size_t length = 0;
    for (const auto& l : corpus) length += v.encode(l).size();
    EXPECT_LE(length, previous) << "target " << target;
    previous = length;
  }
}

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize("Moranang KE"), "moranang ke");
  EXPECT_EQ(normalize("ke a tseba"), "ke a tseba");
  EXPECT_EQ(normalize("ŠOKO É"), "šoko é");
}

TEST(Normalize, IdempotentOnRandomStrings) {
  // Code points from ASCII, Latin-1, Latin Extended-A, Greek and Cyrillic.
  const std::vector<std::pair<char32_t, char32_t>> ranges{
      {0x20, 0x7e}, {0xc0, 0xff}, {0x100, 0x17f}, {0x391, 0x3c9}, {0x400, 0x45f}};
  Rng rng(8);
  for (int i = 0; i < 10000; ++i) {
    std::vector<char32_t> cps(1 + rng.below(12));
    for (char32_t& cp : cps) {
      const auto& [lo, hi] = ranges[rng.below(ranges.size())];
      cp = lo + static_cast<char32_t>(rng.below(hi - lo + 1));
    }
    const std::string x = utf8::encode(cps);
    const std::string once = normalize(x);
    ASSERT_EQ(normalize(once), once) << x;
  }
}

TEST(Normalize, MalformedUtf8IsEncodingError) { EXPECT_THROW(normalize("\xc3"), EncodingError); }

class TrainedVocab : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { vocab_ = new Vocabulary(train_bpe(seed_corpus(600), 512)); }
  static void TearDownTestSuite() { delete vocab_; }
  static Vocabulary* vocab_;
};
Vocabulary* TrainedVocab::vocab_ = nullptr;

TEST_F(TrainedVocab, EmptyStringEncodesToNothing) {
  EXPECT_TRUE(vocab_->encode("").empty());
  EXPECT_EQ(vocab_->decode(std::vector<TokenId>{}), "");
}

TEST_F(TrainedVocab, SingleByteIsOneId) {
  const auto ids = vocab_->encode("q");
  ASSERT_EQ(ids.size(), 1u);
  EXPECT_EQ(ids[0], vocab_->byte_id('q'));
}

TEST_F(TrainedVocab, RoundTripExample) {
  EXPECT_EQ(vocab_->decode(vocab_->encode("ke a tseba")), "ke a tseba");
}

TEST_F(TrainedVocab, RoundTripOnRandomCorpusLines) {
  std::vector<std::string> lines = demo_corpus(DemoStyle::kNews, 400, 77);
  const auto cleaned = clean(lines);
  ASSERT_GE(cleaned.size(), 500u);
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const std::string& x = cleaned[rng.below(cleaned.size())];
    ASSERT_EQ(vocab_->decode(vocab_->encode(x)), x);
  }
}

TEST_F(TrainedVocab, AnyUtf8EncodesWithByteFallback) {
  Rng rng(12);
  for (int i = 0; i < 300; ++i) {
    std::vector<char32_t> cps(1 + rng.below(10));
    for (char32_t& cp : cps) {
      do {
        cp = static_cast<char32_t>(1 + rng.below(0x10ffff));
      } while (cp >= 0xd800 && cp <= 0xdfff);
    }
    const std::string x = utf8::encode(cps);
    const auto ids = vocab_->encode(x);
    for (TokenId id : ids) {
      ASSERT_GE(id, 0);
      ASSERT_LT(static_cast<std::size_t>(id), vocab_->size());
      ASSERT_FALSE(vocab_->is_special(id));
    }
    ASSERT_EQ(vocab_->decode(ids), x);
  }
}

TEST_F(TrainedVocab, OffsetsCoverInput) {
  const std::string x = "the council said, mother ran";
  const EncodedText e = vocab_->encode_with_offsets(x);
  ASSERT_EQ(e.ids.size(), e.offsets.size());
  std::size_t at = 0;
  for (std::size_t k = 0; k < e.ids.size(); ++k) {
    EXPECT_EQ(e.offsets[k].first, at);
    EXPECT_EQ(x.substr(e.offsets[k].first, e.offsets[k].second - e.offsets[k].first), vocab_->token(e.ids[k]));
    at = e.offsets[k].second;
  }
  EXPECT_EQ(at, x.size());
}

TEST_F(TrainedVocab, RandomIdsDecodeAndReencodeStably) {
  // Ids drawn from ASCII bytes and merged tokens keep the decoded text valid.
  std::vector<TokenId> pool;
  for (int b = 0x20; b < 0x7f; ++b) pool.push_back(vocab_->byte_id(static_cast<unsigned char>(b)));
  for (std::size_t id = 3 + 256; id < vocab_->size(); ++id) pool.push_back(static_cast<TokenId>(id));
  Rng rng(21);
  for (int i = 0; i < 500; ++i) {
    std::vector<TokenId> ids(1 + rng.below(20));
    for (TokenId& id : ids) id = pool[rng.below(pool.size())];
    const std::string text = vocab_->decode(ids);
    const auto re = vocab_->encode(text);
    ASSERT_EQ(vocab_->decode(re), text);
    ASSERT_EQ(vocab_->encode(vocab_->decode(re)), re);
    // Segmentation is chunk-local: encoding a chunk-aligned prefix yields a
    // prefix of the full encoding.
    const auto chunks = pretokenize(text);
    std::string prefix;
    for (std::size_t c = 0; c + 1 < chunks.size(); ++c) {
      prefix += chunks[c];
      const auto head = vocab_->encode(prefix);
      ASSERT_LE(head.size(), re.size());
      ASSERT_TRUE(std::equal(head.begin(), head.end(), re.begin()));
    }
  }
}

TEST_F(TrainedVocab, SpecialsDecodeToNamesOrSkip) {
  const SpecialIds s = vocab_->specials();
  const std::vector<TokenId> ids{vocab_->byte_id('a'), s.eot};
  EXPECT_EQ(vocab_->decode(ids), "a<|endoftext|>");
  EXPECT_EQ(vocab_->decode(ids, true), "a");
}

TEST_F(TrainedVocab, FileRoundTripPreservesEverything) {
  Vocabulary v = *vocab_;
  v.set_run_id("tok-abc");
  testing::TempDir dir("vocab");
  v.save(dir / "vocab.txt");
  const Vocabulary back = Vocabulary::load(dir / "vocab.txt");
  EXPECT_EQ(back.serialize(), v.serialize());
  EXPECT_EQ(back.hash(), v.hash());
  EXPECT_EQ(back.run_id(), "tok-abc");
  EXPECT_EQ(back.merges(), v.merges());
  const std::string s = "mother said the river";
  EXPECT_EQ(back.encode(s), v.encode(s));
}

TEST(VocabularyParse, MalformedFileIsDataError) {
  EXPECT_THROW(Vocabulary::parse("not a vocab"), DataError);
}

TEST(Pretokenize, SpaceAttachesToFollowingWord) {
  const auto chunks = pretokenize("ke a  tseba, 12x");
  const std::vector<std::string_view> expected{"ke", " a", " ", " tseba", ",", " 12", "x"};
  EXPECT_EQ(chunks, expected);
}

TEST(BytePrintable, RoundTripsAllBytes) {
  std::string all;
  for (int b = 0; b < 256; ++b) all.push_back(static_cast<char>(b));
  EXPECT_EQ(printable_to_bytes(bytes_to_printable(all)), all);
}

}  // namespace
}  // namespace occlm
