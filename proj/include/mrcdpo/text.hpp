#pragma once

// UTF-8 decoding, whitespace tokenization with byte offsets, and the
// code-point/byte offset conversions needed by SQuAD-style answer_start.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <unicode/locid.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

namespace mrcdpo::text {

/// Decodes one code point starting at byte `pos`, advancing `pos`.
/// Ill-formed sequences decode as U+FFFD and consume one byte.
inline char32_t next_code_point(std::string_view s, std::size_t& pos) {
  const auto* bytes = reinterpret_cast<const uint8_t*>(s.data());
  const auto length = static_cast<int32_t>(s.size());
  auto i = static_cast<int32_t>(pos);
  UChar32 c = 0;
  U8_NEXT(bytes, i, length, c);
  pos = static_cast<std::size_t>(i);
  return c < 0 ? char32_t{0xFFFD} : static_cast<char32_t>(c);
}

inline void append_utf8(std::string& out, char32_t c) {
  uint8_t buf[4];
  int32_t n = 0;
  UBool err = false;
  U8_APPEND(buf, n, 4, static_cast<UChar32>(c), err);
  if (err) return;
  out.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(n));
}

inline std::u32string decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  for (std::size_t pos = 0; pos < s.size();) out.push_back(next_code_point(s, pos));
  return out;
}

inline std::string encode(std::u32string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t c : s) append_utf8(out, c);
  return out;
}

/// Whitespace in the sense of Python's str.isspace(), which is what
/// str.split() uses: Unicode White_Space plus the four ASCII separators.
inline bool is_space(char32_t c) {
  return u_isUWhiteSpace(static_cast<UChar32>(c)) || (c >= 0x1C && c <= 0x1F);
}

inline std::size_t code_point_count(std::string_view s) {
  std::size_t n = 0;
  for (std::size_t pos = 0; pos < s.size(); ++n) next_code_point(s, pos);
  return n;
}

/// Byte offset of the `cp_offset`-th code point; throws if past the end.
inline std::size_t byte_offset_of(std::string_view s, std::size_t cp_offset) {
  std::size_t pos = 0;
  for (std::size_t k = 0; k < cp_offset; ++k) {
    if (pos >= s.size()) throw std::out_of_range("code point offset past end of text");
    next_code_point(s, pos);
  }
  return pos;
}

inline std::size_t code_point_offset_of(std::string_view s, std::size_t byte_offset) {
  std::size_t n = 0;
  for (std::size_t pos = 0; pos < byte_offset && pos < s.size(); ++n) next_code_point(s, pos);
  return n;
}

/// A whitespace-delimited token, addressed by byte range in its source.
struct Token {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const Token&) const = default;
};

inline std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> tokens;
  std::size_t pos = 0;
  bool in_token = false;
  std::size_t start = 0;
  while (pos < s.size()) {
    const std::size_t here = pos;
    const char32_t c = next_code_point(s, pos);
    if (is_space(c)) {
      if (in_token) tokens.push_back({start, here});
      in_token = false;
    } else if (!in_token) {
      in_token = true;
      start = here;
    }
  }
  if (in_token) tokens.push_back({start, s.size()});
  return tokens;
}

inline std::vector<std::string> split(std::string_view s) {
  std::vector<std::string> out;
  for (const Token& t : tokenize(s)) out.emplace_back(s.substr(t.begin, t.size()));
  return out;
}

/// Lowercases with Unicode full case mapping (root locale).
inline std::string lower(std::string_view s) {
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(
      icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  u.toLower(icu::Locale::getRoot());
  std::string out;
  u.toUTF8String(out);
  return out;
}

}  // namespace mrcdpo::text
