// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "occlm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include "occlm/errors.hpp"
#include "occlm/hash.hpp"
#include "occlm/rng.hpp"
#include "occlm/utf8.hpp"

namespace occlm {

namespace {

std::string collapse_whitespace(const std::vector<char32_t>& cps) {
  std::string out;
  bool pending_space = false;
  for (char32_t cp : cps) {
    if (utf8::is_space(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    utf8::append(out, cp);
  }
  return out;
}

}  // namespace

bool CleaningConfig::any_enabled() const {
  return strip_slashes || strip_special_chars || collapse_repeated_fullstops ||
         sentence_split_on_fullstop || lowercase;
}

std::vector<std::string> clean(std::span<const std::string> lines, const CleaningConfig& cfg) {
  const std::vector<char32_t> allowed = utf8::decode(cfg.allowed_symbols);
  std::vector<std::string> out;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (auto bad = utf8::first_invalid(lines[ln])) {
      throw EncodingError("invalid UTF-8 on line " + std::to_string(ln + 1) + " at byte " + std::to_string(*bad));
    }
    std::vector<char32_t> cps = utf8::decode(lines[ln]);
    if (cfg.strip_slashes) {
      for (char32_t& cp : cps) {
        if (cp == U'/' || cp == U'\\') cp = U' ';
      }
    }
    if (cfg.strip_special_chars) {
      std::erase_if(cps, [&](char32_t cp) {
        if (utf8::is_space(cp) || utf8::is_letter(cp) || utf8::is_digit(cp)) return false;
        return std::find(allowed.begin(), allowed.end(), cp) == allowed.end();
      });
    }
    if (cfg.collapse_repeated_fullstops) {
      auto last = std::unique(cps.begin(), cps.end(), [](char32_t a, char32_t b) { return a == U'.' && b == U'.'; });
      cps.erase(last, cps.end());
    }
    std::vector<std::vector<char32_t>> sentences;
    if (cfg.sentence_split_on_fullstop) {
      std::vector<char32_t> cur;
      for (char32_t cp : cps) {
        cur.push_back(cp);
        if (cp == U'.') {
          sentences.push_back(std::move(cur));
          cur.clear();
        }
      }
      sentences.push_back(std::move(cur));
    } else {
      sentences.push_back(std::move(cps));
    }
    for (auto& s : sentences) {
      if (cfg.lowercase) {
        for (char32_t& cp : s) cp = utf8::to_lower(cp);
      }
      std::string text = collapse_whitespace(s);
      if (!text.empty()) out.push_back(std::move(text));
    }
  }
  return out;
}

void SplitSpec::validate() const {
  for (double f : {train_frac, valid_frac, test_frac}) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
  }
  if (std::abs(train_frac + valid_frac + test_frac - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
}

SplitResult split(std::span<const std::string> lines, const SplitSpec& spec) {
  spec.validate();
  if (lines.size() < 3) throw DataError("split needs at least 3 lines, got " + std::to_string(lines.size()));
  std::vector<std::size_t> order(lines.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(spec.seed);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::swap(order[i], order[rng.below(i + 1)]);
  }
  const auto n = static_cast<double>(lines.size());
  std::size_t n_train = static_cast<std::size_t>(std::llround(spec.train_frac * n));
  std::size_t n_valid = static_cast<std::size_t>(std::llround(spec.valid_frac * n));
  n_train = std::min(n_train, lines.size());
  n_valid = std::min(n_valid, lines.size() - n_train);
  if (spec.test_frac == 0.0) n_valid = lines.size() - n_train;
  SplitResult out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::string& line = lines[order[i]];
    if (i < n_train) {
      out.train.push_back(line);
    } else if (i < n_train + n_valid) {
      out.valid.push_back(line);
    } else {
      out.test.push_back(line);
    }
  }
  return out;
}

// ---- stats -----------------------------------------------------------------

TokenizeFn whitespace_tokenizer() {
  return [](std::string_view text) {
    std::vector<std::string> toks;
    std::istringstream in{std::string(text)};
    std::string t;
    while (in >> t) toks.push_back(t);
    return toks;
  };
}

TokenizeFn bpe_tokenizer(const Vocabulary& vocab) {
  return [&vocab](std::string_view text) {
    std::vector<std::string> toks;
    for (TokenId id : vocab.encode(text)) toks.push_back(vocab.token(id));
    return toks;
  };
}

CorpusStats stats(std::span<const NamedSplit> splits, const TokenizeFn& tokenize) {
  CorpusStats result;
  std::unordered_set<std::string> all_unique;
  for (const NamedSplit& split : splits) {
    SplitStats s;
    std::unordered_set<std::string> unique;
    for (const std::string& line : split.lines) {
      ++s.sentences;
      for (std::string& tok : tokenize(line)) {
        ++s.tokens;
        all_unique.insert(tok);
        unique.insert(std::move(tok));
      }
    }
    s.unique_tokens = unique.size();
    result.split_names.push_back(split.name);
    result.splits.push_back(s);
    result.total.sentences += s.sentences;
    result.total.tokens += s.tokens;
  }
  result.total.unique_tokens = all_unique.size();
  return result;
}

CorpusStats stats(std::span<const NamedSplit> splits, const Vocabulary& vocab) {
  return stats(splits, bpe_tokenizer(vocab));
}

nlohmann::json CorpusStats::to_json() const {
  nlohmann::json j;
  auto row = [](const SplitStats& s) {
    return nlohmann::json{{"sentences", s.sentences}, {"tokens", s.tokens}, {"unique_tokens", s.unique_tokens}};
  };
  for (std::size_t i = 0; i < splits.size(); ++i) j["splits"][split_names[i]] = row(splits[i]);
  j["total"] = row(total);
  return j;
}

std::string CorpusStats::table() const {
  std::ostringstream out;
  constexpr int kLabel = 16;
  constexpr int kCol = 14;
  out << std::left << std::setw(kLabel) << "";
  for (const auto& name : split_names) out << std::right << std::setw(kCol) << name;
  out << std::right << std::setw(kCol) << "total" << "\n";
  auto line = [&](const char* label, auto field) {
    out << std::left << std::setw(kLabel) << label;
    for (const auto& s : splits) out << std::right << std::setw(kCol) << field(s);
    out << std::right << std::setw(kCol) << field(total) << "\n";
  };
  line("#Sentences", [](const SplitStats& s) { return s.sentences; });
  line("#Tokens", [](const SplitStats& s) { return s.tokens; });
  line("#Unique tokens", [](const SplitStats& s) { return s.unique_tokens; });
  return out.str();
}

// ---- packing ---------------------------------------------------------------

std::size_t Batch::target_count() const {
  return static_cast<std::size_t>(std::count(ignore.begin(), ignore.end(), std::uint8_t{0}));
}

TokenDataset::TokenDataset(std::size_t block_size, TokenId pad_id) : block_size_(block_size), pad_id_(pad_id) {
  if (block_size < 2) throw ConfigError("block_size must be >= 2, got " + std::to_string(block_size));
}

std::span<const TokenId> TokenDataset::window(std::size_t w) const {
  if (w >= lengths_.size()) throw IndexError("window " + std::to_string(w) + " out of range");
  return std::span<const TokenId>(raw_).subspan(w * (block_size_ + 1), block_size_ + 1);
}

std::size_t TokenDataset::num_target_tokens() const {
  std::size_t n = 0;
  for (std::size_t w = 0; w < lengths_.size(); ++w) {
    const auto win = window(w);
    for (std::size_t t = 1; t < lengths_[w]; ++t) n += win[t] != pad_id_;
  }
  return n;
}

void TokenDataset::append_window(std::span<const TokenId> ids) {
  if (ids.empty() || ids.size() > block_size_ + 1) {
    throw DimensionError("window length " + std::to_string(ids.size()) + " outside [1, " +
                         std::to_string(block_size_ + 1) + "]");
  }
  raw_.insert(raw_.end(), ids.begin(), ids.end());
  raw_.insert(raw_.end(), block_size_ + 1 - ids.size(), pad_id_);
  lengths_.push_back(ids.size());
}

Batch TokenDataset::make_batch(std::span<const std::size_t> windows) const {
  Batch b;
  b.inputs = TokenGrid(windows.size(), block_size_);
  b.targets.resize(windows.size() * block_size_);
  b.ignore.resize(windows.size() * block_size_);
  for (std::size_t r = 0; r < windows.size(); ++r) {
    const auto w = window(windows[r]);
    const std::size_t len = lengths_[windows[r]];
    for (std::size_t t = 0; t < block_size_; ++t) {
      b.inputs.at(r, t) = w[t];
      b.targets[r * block_size_ + t] = w[t + 1];
      b.ignore[r * block_size_ + t] = (t + 1 < len && w[t + 1] != pad_id_) ? 0 : 1;
    }
  }
  return b;
}

std::vector<TokenId> TokenDataset::dechunk() const {
  std::vector<TokenId> out;
  for (std::size_t w = 0; w < lengths_.size(); ++w) {
    const auto win = window(w);
    out.insert(out.end(), win.begin(), win.begin() + static_cast<std::ptrdiff_t>(lengths_[w]));
  }
  return out;
}

namespace {
constexpr char kDatasetMagic[8] = {'O', 'C', 'C', 'L', 'M', 'D', 'S', '1'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view& in) {
  if (in.size() < sizeof(T)) throw DataError("truncated dataset file");
  T v;
  std::memcpy(&v, in.data(), sizeof(T));
  in.remove_prefix(sizeof(T));
  return v;
}
}  // namespace

std::string TokenDataset::serialize() const {
  std::string out(kDatasetMagic, sizeof(kDatasetMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(block_size_));
  put<std::int32_t>(out, pad_id_);
  put<std::uint64_t>(out, lengths_.size());
  for (std::size_t w = 0; w < lengths_.size(); ++w) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(lengths_[w]));
    for (TokenId id : window(w)) put<std::int32_t>(out, id);
  }
  return out;
}

TokenDataset TokenDataset::parse(std::string_view in) {
  if (in.size() < sizeof(kDatasetMagic) || std::memcmp(in.data(), kDatasetMagic, sizeof(kDatasetMagic)) != 0) {
    throw DataError("not a packed dataset file");
  }
  in.remove_prefix(sizeof(kDatasetMagic));
  const auto block = take<std::uint32_t>(in);
  const auto pad = take<std::int32_t>(in);
  const auto count = take<std::uint64_t>(in);
  TokenDataset ds(block, pad);
  std::vector<TokenId> win(block + 1);
  for (std::uint64_t w = 0; w < count; ++w) {
    const auto len = take<std::uint32_t>(in);
    for (auto& id : win) id = take<std::int32_t>(in);
    ds.append_window(std::span<const TokenId>(win).first(len));
  }
  return ds;
}

void TokenDataset::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

TokenDataset TokenDataset::load(const std::filesystem::path& path) { return parse(read_file(path)); }

TokenDataset pack_ids(std::span<const std::vector<TokenId>> sequences, const SpecialIds& specials,
                      std::size_t block_size) {
  TokenDataset ds(block_size, specials.pad);
  std::vector<TokenId> stream;
  for (const auto& seq : sequences) {
    stream.insert(stream.end(), seq.begin(), seq.end());
    stream.push_back(specials.eot);
  }
  for (std::size_t at = 0; at < stream.size(); at += block_size + 1) {
    const std::size_t len = std::min(block_size + 1, stream.size() - at);
    ds.append_window(std::span<const TokenId>(stream).subspan(at, len));
  }
  return ds;
}

TokenDataset pack(std::span<const std::string> lines, const Vocabulary& vocab, std::size_t block_size) {
  if (block_size < 2) throw ConfigError("block_size must be >= 2, got " + std::to_string(block_size));
  std::vector<std::vector<TokenId>> seqs;
  seqs.reserve(lines.size());
  for (const auto& line : lines) seqs.push_back(vocab.encode(line));
  return pack_ids(seqs, vocab.specials(), block_size);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  std::string out;
  for (const auto& l : lines) {
    out += l;
    out += '\n';
  }
  write_file(path, out);
}

}  // namespace occlm
