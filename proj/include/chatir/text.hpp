#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace chatir::text {

inline constexpr std::uint32_t kTrigramDim = 3000;
inline constexpr char kBoundaryMarker = '#';

// Lowercase, NFKC-normalized, control characters stripped, whitespace runs
// collapsed to one ASCII space, trimmed. Idempotent.
std::string normalize_text(std::string_view raw);

// Splits normalized text on whitespace. Maximal runs of punctuation become
// their own tokens; apostrophes between word characters stay inside the
// word; each emoji (with its modifiers and ZWJ continuations) is one token.
std::vector<std::string> tokenize(std::string_view normalized);

struct Utterance {
  std::string raw;
  std::string normalized;
  std::vector<std::string> tokens;

  static Utterance from_raw(std::string_view raw);
  bool empty() const { return tokens.empty(); }
};

// Sparse count vector over hashed letter-trigrams, entries sorted by index.
struct TrigramVector {
  std::uint32_t dim = kTrigramDim;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> entries;

  std::uint64_t l1_norm() const;
  std::uint32_t count(std::uint32_t index) const;
  bool operator==(const TrigramVector&) const = default;
};

// "#tok#" split into 3-codepoint windows, each returned as UTF-8.
std::vector<std::string> letter_trigrams(std::string_view token);

std::uint32_t trigram_index(std::string_view trigram, std::uint32_t dim);

TrigramVector letter_trigram_vector(std::span<const std::string> tokens,
                                    std::uint32_t dim = kTrigramDim);

TrigramVector token_trigram_vector(std::string_view token,
                                   std::uint32_t dim = kTrigramDim);

using TermBag = std::map<std::string, std::uint32_t>;

TermBag term_bag(std::span<const std::string> tokens);

// UTF-8 helpers. Invalid sequences decode to U+FFFD.
std::u32string decode_utf8(std::string_view s);
std::string encode_utf8(std::u32string_view s);
void append_utf8(std::string& out, char32_t cp);
std::size_t codepoint_count(std::string_view s);

std::string join(std::span<const std::string> tokens, std::string_view sep = " ");

}  // namespace chatir::text
