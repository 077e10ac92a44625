// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "occlm/bpe.hpp"

#include <algorithm>
#include <array>
#include <queue>
#include <sstream>
#include <unordered_set>

#include "occlm/errors.hpp"
#include "occlm/hash.hpp"
#include "occlm/utf8.hpp"

namespace occlm {

namespace {

std::uint64_t pair_key(TokenId l, TokenId r) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(l)) << 32) | static_cast<std::uint32_t>(r);
}

struct ByteMap {
  std::array<char32_t, 256> to_cp{};
  std::unordered_map<char32_t, unsigned char> to_byte;

  ByteMap() {
    int extra = 0;
    for (int b = 0; b < 256; ++b) {
      const bool printable = (b >= 33 && b <= 126) || (b >= 161 && b <= 172) || (b >= 174 && b <= 255);
      const char32_t cp = printable ? static_cast<char32_t>(b) : static_cast<char32_t>(256 + extra++);
      to_cp[b] = cp;
      to_byte[cp] = static_cast<unsigned char>(b);
    }
  }
};

const ByteMap& byte_map() {
  static const ByteMap map;
  return map;
}

enum class CharClass { kSpace, kLetter, kDigit, kOther };

CharClass classify(char32_t cp) {
  if (utf8::is_space(cp)) return CharClass::kSpace;
  if (utf8::is_letter(cp)) return CharClass::kLetter;
  if (utf8::is_digit(cp)) return CharClass::kDigit;
  return CharClass::kOther;
}

void merge_in_place(std::vector<TokenId>& syms, TokenId l, TokenId r, TokenId result) {
  std::size_t out = 0;
  for (std::size_t i = 0; i < syms.size(); ++i) {
    if (i + 1 < syms.size() && syms[i] == l && syms[i + 1] == r) {
      syms[out++] = result;
      ++i;
    } else {
      syms[out++] = syms[i];
    }
  }
  syms.resize(out);
}

}  // namespace

std::string bytes_to_printable(std::string_view bytes) {
  std::string out;
  for (unsigned char b : bytes) utf8::append(out, byte_map().to_cp[b]);
  return out;
}

std::string printable_to_bytes(std::string_view printable) {
  std::string out;
  for (char32_t cp : utf8::decode(printable)) {
    auto it = byte_map().to_byte.find(cp);
    if (it == byte_map().to_byte.end()) {
      throw EncodingError("code point U+" + std::to_string(static_cast<unsigned>(cp)) +
                          " is not part of the byte alphabet");
    }
    out.push_back(static_cast<char>(it->second));
  }
  return out;
}

std::string normalize(std::string_view text) {
  std::vector<char32_t> cps = utf8::decode(text);
  for (char32_t& cp : cps) cp = utf8::to_lower(cp);
  return utf8::encode(cps);
}

std::vector<std::string_view> pretokenize(std::string_view text) {
  std::vector<std::string_view> chunks;
  // (code point, byte offset) pairs plus a sentinel end offset.
  std::vector<char32_t> cps = utf8::decode(text);
  std::vector<std::size_t> pos(cps.size() + 1);
  {
    std::size_t byte = 0;
    for (std::size_t i = 0; i < cps.size(); ++i) {
      pos[i] = byte;
      std::string tmp;
      utf8::append(tmp, cps[i]);
      byte += tmp.size();
    }
    pos[cps.size()] = byte;
  }
  const std::size_t n = cps.size();
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    const CharClass c0 = classify(cps[i]);
    if (cps[i] == U' ' && i + 1 < n && classify(cps[i + 1]) != CharClass::kSpace) {
      const CharClass c = classify(cps[i + 1]);
      j = i + 1;
      while (j < n && classify(cps[j]) == c) ++j;
    } else if (c0 == CharClass::kSpace) {
      while (j < n && classify(cps[j]) == CharClass::kSpace) ++j;
      // Leave a final plain space to prefix the following word.
      if (j < n && j - 1 > i && cps[j - 1] == U' ') --j;
    } else {
      while (j < n && classify(cps[j]) == c0) ++j;
    }
    chunks.push_back(text.substr(pos[i], pos[j] - pos[i]));
    i = j;
  }
  return chunks;
}

// ---- Vocabulary ------------------------------------------------------------

void Vocabulary::init_base(const SpecialNames& names, std::size_t target_size) {
  if (names.pad == names.occ || names.pad == names.eot || names.occ == names.eot) {
    throw ConfigError("special token names must be distinct");
  }
  special_names_ = names;
  special_ids_ = SpecialIds{0, 1, 2};
  target_size_ = target_size;
  id_to_token_ = {names.pad, names.occ, names.eot};
  token_to_id_.clear();
  merges_.clear();
  merge_rank_.clear();
  for (int b = 0; b < 256; ++b) add_token(std::string(1, static_cast<char>(b)));
}

TokenId Vocabulary::add_token(std::string bytes) {
  const auto id = static_cast<TokenId>(id_to_token_.size());
  token_to_id_.emplace(bytes, id);
  id_to_token_.push_back(std::move(bytes));
  return id;
}

void Vocabulary::add_merge(TokenId left, TokenId right, TokenId result) {
  merge_rank_.emplace(pair_key(left, right), merges_.size());
  merges_.push_back({left, right, result});
}

bool Vocabulary::is_special(TokenId id) const {
  return id == special_ids_.pad || id == special_ids_.occ || id == special_ids_.eot;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw IndexError("token id " + std::to_string(id) + " not in vocabulary of " + std::to_string(size()));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::find(std::string_view bytes) const {
  auto it = token_to_id_.find(std::string(bytes));
  return it == token_to_id_.end() ? -1 : it->second;
}

void Vocabulary::encode_chunk(std::string_view chunk, std::vector<TokenId>& out) const {
  std::vector<TokenId> syms;
  syms.reserve(chunk.size());
  for (unsigned char b : chunk) syms.push_back(byte_id(b));
  while (syms.size() > 1) {
    std::size_t best_rank = SIZE_MAX;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      auto it = merge_rank_.find(pair_key(syms[i], syms[i + 1]));
      if (it != merge_rank_.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == SIZE_MAX) break;
    const Merge& m = merges_[best_rank];
    merge_in_place(syms, m.left, m.right, m.result);
  }
  out.insert(out.end(), syms.begin(), syms.end());
}

EncodedText Vocabulary::encode_with_offsets(std::string_view text) const {
  utf8::require_valid(text, "encode input");
  EncodedText result;
  std::size_t chunk_start = 0;
  for (std::string_view chunk : pretokenize(text)) {
    const std::size_t first = result.ids.size();
    encode_chunk(chunk, result.ids);
    std::size_t at = chunk_start;
    for (std::size_t k = first; k < result.ids.size(); ++k) {
      const std::size_t len = id_to_token_[static_cast<std::size_t>(result.ids[k])].size();
      result.offsets.emplace_back(at, at + len);
      at += len;
    }
    chunk_start += chunk.size();
  }
  return result;
}

std::string Vocabulary::decode(std::span<const TokenId> ids, bool skip_specials) const {
  std::string out;
  for (TokenId id : ids) {
    const std::string& tok = token(id);
    if (skip_specials && is_special(id)) continue;
    out += tok;
  }
  return out;
}

std::string Vocabulary::serialize() const {
  std::ostringstream out;
  out << "occlm-vocab 1\n";
  out << "target_size " << target_size_ << "\n";
  out << "run_id " << (run_id_.empty() ? "-" : run_id_) << "\n";
  out << "[specials]\n";
  out << "pad\t" << special_ids_.pad << "\t" << special_names_.pad << "\n";
  out << "occ\t" << special_ids_.occ << "\t" << special_names_.occ << "\n";
  out << "eot\t" << special_ids_.eot << "\t" << special_names_.eot << "\n";
  out << "[tokens]\n";
  for (std::size_t id = kNumSpecials; id < id_to_token_.size(); ++id) {
    out << bytes_to_printable(id_to_token_[id]) << "\t" << id << "\n";
  }
  out << "[merges]\n";
  for (const Merge& m : merges_) {
    out << bytes_to_printable(token(m.left)) << " " << bytes_to_printable(token(m.right)) << "\n";
  }
  return out.str();
}

Vocabulary Vocabulary::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  auto fail = [](const std::string& why) -> Vocabulary { throw DataError("malformed vocab file: " + why); };
  if (!std::getline(in, line) || line != "occlm-vocab 1") return fail("bad header");
  std::size_t target = 0;
  std::string run_id;
  if (!std::getline(in, line) || line.rfind("target_size ", 0) != 0) return fail("missing target_size");
  target = std::stoul(line.substr(12));
  if (!std::getline(in, line) || line.rfind("run_id ", 0) != 0) return fail("missing run_id");
  run_id = line.substr(7);
  if (!std::getline(in, line) || line != "[specials]") return fail("missing [specials]");
  SpecialNames names;
  for (const char* role : {"pad", "occ", "eot"}) {
    if (!std::getline(in, line)) return fail("truncated specials");
    std::istringstream fields(line);
    std::string r, id, name;
    std::getline(fields, r, '\t');
    std::getline(fields, id, '\t');
    std::getline(fields, name);
    if (r != role) return fail(std::string("expected special ") + role);
    if (r == "pad") names.pad = name;
    if (r == "occ") names.occ = name;
    if (r == "eot") names.eot = name;
  }
  Vocabulary v;
  v.init_base(names, target);
  v.run_id_ = run_id == "-" ? "" : run_id;
  if (!std::getline(in, line) || line != "[tokens]") return fail("missing [tokens]");
  while (std::getline(in, line) && line != "[merges]") {
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) return fail("token line without id: " + line);
    const std::string bytes = printable_to_bytes(line.substr(0, tab));
    const std::size_t id = std::stoul(line.substr(tab + 1));
    if (id < kNumSpecials + kByteAlphabet) {
      if (v.token(static_cast<TokenId>(id)) != bytes) return fail("byte token mismatch at id " + std::to_string(id));
      continue;
    }
    if (id != v.id_to_token_.size()) return fail("token ids not contiguous at " + std::to_string(id));
    if (v.find(bytes) >= 0) return fail("duplicate token at id " + std::to_string(id));
    v.add_token(bytes);
  }
  if (line != "[merges]") return fail("missing [merges]");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) return fail("merge line without separator: " + line);
    const std::string l = printable_to_bytes(line.substr(0, sp));
    const std::string r = printable_to_bytes(line.substr(sp + 1));
    const TokenId li = v.find(l);
    const TokenId ri = v.find(r);
    const TokenId res = v.find(l + r);
    if (li < 0 || ri < 0 || res < 0) return fail("merge references unknown token: " + line);
    v.add_merge(li, ri, res);
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

Vocabulary Vocabulary::load(const std::filesystem::path& path) { return parse(read_file(path)); }

std::string Vocabulary::hash() const { return hash_hex(serialize()); }

// ---- training --------------------------------------------------------------

Vocabulary train_bpe(std::span<const std::string> corpus, std::size_t target_size,
                     const SpecialNames& specials) {
  if (corpus.empty()) throw DataError("train_bpe: empty corpus");
  if (target_size <= Vocabulary::kByteAlphabet + Vocabulary::kNumSpecials) {
    throw ConfigError("train_bpe: target size " + std::to_string(target_size) + " must exceed " +
                      std::to_string(Vocabulary::kByteAlphabet + Vocabulary::kNumSpecials) +
                      " (byte alphabet plus specials)");
  }
  Vocabulary vocab;
  vocab.init_base(specials, target_size);

  std::unordered_map<std::string, std::int64_t> chunk_freq;
  bool any_text = false;
  for (const std::string& line : corpus) {
    utf8::require_valid(line, "corpus line");
    for (std::string_view chunk : pretokenize(line)) {
      ++chunk_freq[std::string(chunk)];
      any_text = true;
    }
  }
  if (!any_text) throw DataError("train_bpe: corpus contains no text");

  struct Word {
    std::vector<TokenId> syms;
    std::int64_t freq;
  };
  std::vector<std::pair<std::string, std::int64_t>> sorted(chunk_freq.begin(), chunk_freq.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<Word> words;
  words.reserve(sorted.size());
  for (const auto& [chunk, freq] : sorted) {
    Word w{{}, freq};
    for (unsigned char b : chunk) w.syms.push_back(vocab.byte_id(b));
    words.push_back(std::move(w));
  }

  std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> pair_words;
  for (std::uint32_t wi = 0; wi < words.size(); ++wi) {
    const Word& w = words[wi];
    for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) {
      const auto key = pair_key(w.syms[i], w.syms[i + 1]);
      pair_counts[key] += w.freq;
      pair_words[key].push_back(wi);
    }
  }

  struct Candidate {
    std::int64_t count;
    TokenId left;
    TokenId right;
  };
  // Max-heap on count; equal counts favour the lexicographically smaller pair.
  auto lower_priority = [&vocab](const Candidate& a, const Candidate& b) {
    if (a.count != b.count) return a.count < b.count;
    const std::string& al = vocab.token(a.left);
    const std::string& bl = vocab.token(b.left);
    if (al != bl) return al > bl;
    return vocab.token(a.right) > vocab.token(b.right);
  };
  std::priority_queue<Candidate, std::vector<Candidate>, decltype(lower_priority)> heap(lower_priority);
  for (const auto& [key, count] : pair_counts) {
    heap.push({count, static_cast<TokenId>(key >> 32), static_cast<TokenId>(key & 0xffffffffu)});
  }

  std::vector<std::uint32_t> stamp(words.size(), 0);
  std::uint32_t epoch = 0;
  while (vocab.size() < target_size) {
    Candidate best{0, 0, 0};
    bool found = false;
    while (!heap.empty()) {
      Candidate top = heap.top();
      heap.pop();
      auto it = pair_counts.find(pair_key(top.left, top.right));
      if (it != pair_counts.end() && it->second == top.count && top.count > 0) {
        best = top;
        found = true;
        break;
      }
    }
    if (!found || best.count < 2) break;

    const auto key = pair_key(best.left, best.right);
    TokenId result;
    auto existing_rule = vocab.merge_rank_.find(key);
    if (existing_rule != vocab.merge_rank_.end()) {
      // Pair re-formed after an earlier merge reused a token id; apply the
      // existing rule again without acquiring a new one.
      result = vocab.merges_[existing_rule->second].result;
    } else {
      std::string merged = vocab.token(best.left) + vocab.token(best.right);
      result = vocab.find(merged);
      if (result < 0) result = vocab.add_token(std::move(merged));
      vocab.add_merge(best.left, best.right, result);
    }

    ++epoch;
    std::unordered_set<std::uint64_t> touched;
    const std::vector<std::uint32_t> affected = std::move(pair_words[key]);
    pair_words.erase(key);
    for (std::uint32_t wi : affected) {
      if (stamp[wi] == epoch) continue;
      stamp[wi] = epoch;
      Word& w = words[wi];
      bool contains = false;
      for (std::size_t i = 0; i + 1 < w.syms.size() && !contains; ++i) {
        contains = w.syms[i] == best.left && w.syms[i + 1] == best.right;
      }
      if (!contains) continue;
      for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) {
        const auto k = pair_key(w.syms[i], w.syms[i + 1]);
        pair_counts[k] -= w.freq;
        touched.insert(k);
      }
      merge_in_place(w.syms, best.left, best.right, result);
      for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) {
        const auto k = pair_key(w.syms[i], w.syms[i + 1]);
        pair_counts[k] += w.freq;
        touched.insert(k);
        if (w.syms[i] == result || w.syms[i + 1] == result) pair_words[k].push_back(wi);
      }
    }
    for (std::uint64_t k : touched) {
      auto it = pair_counts.find(k);
      if (it->second <= 0) {
        pair_counts.erase(it);
        continue;
      }
      heap.push({it->second, static_cast<TokenId>(k >> 32), static_cast<TokenId>(k & 0xffffffffu)});
    }
  }
  return vocab;
}

}  // namespace occlm
