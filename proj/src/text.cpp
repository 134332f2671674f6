#include "chatir/text.hpp"

#include <unicode/normalizer2.h>
#include <unicode/locid.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <stdexcept>

#include "chatir/hash.hpp"

namespace chatir::text {
namespace {

const icu::Normalizer2& nfkc() {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* n = icu::Normalizer2::getNFKCInstance(status);
  if (U_FAILURE(status) || n == nullptr) {
    throw std::runtime_error("ICU NFKC normalizer unavailable");
  }
  return *n;
}

icu::UnicodeString apply_nfkc(const icu::UnicodeString& s) {
  UErrorCode status = U_ZERO_ERROR;
  icu::UnicodeString out = nfkc().normalize(s, status);
  if (U_FAILURE(status)) return s;
  return out;
}

bool is_space(UChar32 c) { return u_isUWhiteSpace(c) != 0; }

bool is_emoji(UChar32 c) {
  return c > 0x7f && u_hasBinaryProperty(c, UCHAR_EXTENDED_PICTOGRAPHIC);
}

bool is_emoji_continuation(UChar32 c) {
  return c == 0xFE0F || c == 0xFE0E || c == 0x200D ||
         u_hasBinaryProperty(c, UCHAR_EMOJI_MODIFIER);
}

bool is_apostrophe(UChar32 c) { return c == U'\'' || c == 0x2019; }

bool is_word_char(UChar32 c) {
  if (u_isalnum(c)) return true;
  const int8_t type = u_charType(c);
  return type == U_NON_SPACING_MARK || type == U_ENCLOSING_MARK ||
         type == U_COMBINING_SPACING_MARK;
}

enum class CharClass { space, word, punct, emoji };

CharClass classify(UChar32 c) {
  if (is_space(c)) return CharClass::space;
  if (is_emoji(c)) return CharClass::emoji;
  if (is_word_char(c)) return CharClass::word;
  return CharClass::punct;
}

}  // namespace

std::u32string decode_utf8(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
  while (i < s.size()) {
    const unsigned char b0 = byte(i);
    std::size_t len = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    }
    bool ok = len > 0 && i + len <= s.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const unsigned char b = byte(i + k);
      if ((b & 0xC0) != 0x80) {
        ok = false;
      } else {
        cp = (cp << 6) | (b & 0x3F);
      }
    }
    if (ok) {
      const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
                            (len == 4 && cp < 0x10000);
      if (overlong || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) ok = false;
    }
    if (!ok) {
      out.push_back(U'\uFFFD');
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string encode_utf8(std::u32string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t cp : s) append_utf8(out, cp);
  return out;
}

std::size_t codepoint_count(std::string_view s) { return decode_utf8(s).size(); }

std::string join(std::span<const std::string> tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += sep;
    out += tokens[i];
  }
  return out;
}

std::string normalize_text(std::string_view raw) {
  // Round-trip through our own decoder so malformed bytes become U+FFFD
  // consistently before ICU sees them.
  const std::u32string decoded = decode_utf8(raw);
  icu::UnicodeString s;
  for (char32_t cp : decoded) s.append(static_cast<UChar32>(cp));

  s = apply_nfkc(s);
  s.toLower(icu::Locale::getRoot());

  icu::UnicodeString cleaned;
  bool pending_space = false;
  for (int32_t i = 0; i < s.length();) {
    const UChar32 c = s.char32At(i);
    i += U16_LENGTH(c);
    if (is_space(c)) {
      pending_space = true;
      continue;
    }
    if (u_charType(c) == U_CONTROL_CHAR) continue;
    if (pending_space && !cleaned.isEmpty()) cleaned.append(static_cast<UChar>(u' '));
    pending_space = false;
    cleaned.append(c);
  }
  // Lowercasing and stripping can leave text that is no longer in NFKC.
  cleaned = apply_nfkc(cleaned);

  std::string out;
  cleaned.toUTF8String(out);
  return out;
}

std::vector<std::string> tokenize(std::string_view normalized) {
  const std::u32string cps = decode_utf8(normalized);
  std::vector<std::string> tokens;
  std::string current;
  CharClass current_class = CharClass::space;

  const auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
    current_class = CharClass::space;
  };

  for (std::size_t i = 0; i < cps.size(); ++i) {
    const UChar32 c = static_cast<UChar32>(cps[i]);
    CharClass cls = classify(c);

    if (current_class == CharClass::emoji && is_emoji_continuation(c)) {
      append_utf8(current, cps[i]);
      // A ZWJ glues the next pictograph onto the same emoji token.
      if (c == 0x200D && i + 1 < cps.size() && is_emoji(static_cast<UChar32>(cps[i + 1]))) {
        append_utf8(current, cps[++i]);
      }
      continue;
    }
    if (is_apostrophe(c) && current_class == CharClass::word && i + 1 < cps.size() &&
        classify(static_cast<UChar32>(cps[i + 1])) == CharClass::word) {
      cls = CharClass::word;
    }

    switch (cls) {
      case CharClass::space:
        flush();
        break;
      case CharClass::emoji:
        flush();
        append_utf8(current, cps[i]);
        current_class = CharClass::emoji;
        break;
      case CharClass::word:
      case CharClass::punct:
        if (cls != current_class) flush();
        append_utf8(current, cps[i]);
        current_class = cls;
        break;
    }
  }
  flush();
  return tokens;
}

Utterance Utterance::from_raw(std::string_view raw) {
  Utterance u;
  u.raw = std::string(raw);
  u.normalized = normalize_text(raw);
  u.tokens = tokenize(u.normalized);
  return u;
}

std::uint64_t TrigramVector::l1_norm() const {
  std::uint64_t total = 0;
  for (const auto& [index, count] : entries) total += count;
  return total;
}

std::uint32_t TrigramVector::count(std::uint32_t index) const {
  const auto it = std::lower_bound(entries.begin(), entries.end(), index,
                                   [](const auto& e, std::uint32_t i) { return e.first < i; });
  return (it != entries.end() && it->first == index) ? it->second : 0;
}

std::vector<std::string> letter_trigrams(std::string_view token) {
  std::u32string padded;
  padded.push_back(static_cast<char32_t>(kBoundaryMarker));
  padded += decode_utf8(token);
  padded.push_back(static_cast<char32_t>(kBoundaryMarker));

  std::vector<std::string> out;
  if (padded.size() < 3) return out;
  out.reserve(padded.size() - 2);
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    out.push_back(encode_utf8(std::u32string_view(padded).substr(i, 3)));
  }
  return out;
}

std::uint32_t trigram_index(std::string_view trigram, std::uint32_t dim) {
  return static_cast<std::uint32_t>(fnv1a64(trigram) % dim);
}

namespace {

void accumulate_token(std::map<std::uint32_t, std::uint32_t>& counts, std::string_view token,
                      std::uint32_t dim) {
  for (const std::string& tri : letter_trigrams(token)) ++counts[trigram_index(tri, dim)];
}

TrigramVector to_vector(const std::map<std::uint32_t, std::uint32_t>& counts,
                        std::uint32_t dim) {
  TrigramVector v;
  v.dim = dim;
  v.entries.assign(counts.begin(), counts.end());
  return v;
}

}  // namespace

TrigramVector letter_trigram_vector(std::span<const std::string> tokens, std::uint32_t dim) {
  if (dim == 0) throw std::invalid_argument("trigram dimension must be positive");
  std::map<std::uint32_t, std::uint32_t> counts;
  for (const std::string& token : tokens) accumulate_token(counts, token, dim);
  return to_vector(counts, dim);
}

TrigramVector token_trigram_vector(std::string_view token, std::uint32_t dim) {
  if (dim == 0) throw std::invalid_argument("trigram dimension must be positive");
  std::map<std::uint32_t, std::uint32_t> counts;
  accumulate_token(counts, token, dim);
  return to_vector(counts, dim);
}

TermBag term_bag(std::span<const std::string> tokens) {
  TermBag bag;
  for (const std::string& t : tokens) ++bag[t];
  return bag;
}

}  // namespace chatir::text
