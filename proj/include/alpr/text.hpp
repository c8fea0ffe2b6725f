#pragma once

// Unicode helpers for Bangla plate text: NFC, plate-alphabet filtering and
// user-perceived character segmentation. Backed by ICU.

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <unicode/brkiter.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "alpr/error.hpp"

namespace alpr::text {

inline constexpr char32_t kBengaliVirama = 0x09CD;
inline constexpr char32_t kZeroWidthJoiner = 0x200D;

inline bool is_bangla_digit(char32_t c) { return c >= 0x09E6 && c <= 0x09EF; }

inline bool is_bangla_consonant(char32_t c) {
  return (c >= 0x0995 && c <= 0x09B9) || (c >= 0x09DC && c <= 0x09DF) || c == 0x09F0 ||
         c == 0x09F1 || c == 0x09CE;
}

// Letters, vowel signs and other marks of the Bengali block; symbols,
// currency signs and fractions are excluded.
inline bool is_bangla_letter(char32_t c) {
  if (c < 0x0980 || c > 0x09FF || is_bangla_digit(c)) return false;
  const auto cat = u_charType(static_cast<UChar32>(c));
  return cat == U_OTHER_LETTER || cat == U_NON_SPACING_MARK || cat == U_COMBINING_SPACING_MARK;
}

inline bool is_ascii_digit(char32_t c) { return c >= '0' && c <= '9'; }

// Characters that count as recognized plate content.
inline bool is_plate_character(char32_t c) {
  return is_bangla_letter(c) || is_bangla_digit(c) || is_ascii_digit(c);
}

inline std::string to_utf8(const icu::UnicodeString& s) {
  std::string out;
  s.toUTF8String(out);
  return out;
}

inline icu::UnicodeString nfc(const icu::UnicodeString& s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* normalizer = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error(ErrorKind::IoFailure, "ICU NFC data unavailable");
  icu::UnicodeString out = normalizer->normalize(s, status);
  if (U_FAILURE(status)) throw Error(ErrorKind::InvalidArgument, "NFC normalization failed");
  return out;
}

inline std::string nfc(std::string_view utf8) {
  return to_utf8(nfc(icu::UnicodeString::fromUTF8(
      icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())))));
}

inline std::vector<char32_t> code_points(std::string_view utf8) {
  const auto s = icu::UnicodeString::fromUTF8(
      icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  std::vector<char32_t> out;
  for (int32_t i = 0; i < s.length(); i = s.moveIndex32(i, 1)) {
    out.push_back(static_cast<char32_t>(s.char32At(i)));
  }
  return out;
}

// NFC, drop everything outside the plate alphabet (Bangla letters and digits,
// ASCII digits, hyphen, space), collapse whitespace runs, trim. Filtering can
// bring a base letter next to a previously blocked combining sign, so NFC is
// applied again after filtering to keep the function idempotent.
inline std::string normalize_plate_text(std::string_view raw) {
  const auto composed = nfc(icu::UnicodeString::fromUTF8(
      icu::StringPiece(raw.data(), static_cast<int32_t>(raw.size()))));
  icu::UnicodeString filtered;
  for (int32_t i = 0; i < composed.length(); i = composed.moveIndex32(i, 1)) {
    const auto c = static_cast<char32_t>(composed.char32At(i));
    if (u_isUWhiteSpace(static_cast<UChar32>(c))) {
      filtered.append(static_cast<UChar32>(' '));
    } else if (is_plate_character(c) || c == '-') {
      filtered.append(static_cast<UChar32>(c));
    }
  }
  const auto recomposed = nfc(filtered);
  icu::UnicodeString collapsed;
  bool pending_space = false;
  for (int32_t i = 0; i < recomposed.length(); i = recomposed.moveIndex32(i, 1)) {
    const UChar32 c = recomposed.char32At(i);
    if (c == ' ') {
      pending_space = !collapsed.isEmpty();
      continue;
    }
    if (pending_space) collapsed.append(static_cast<UChar32>(' '));
    pending_space = false;
    collapsed.append(c);
  }
  return to_utf8(collapsed);
}

inline std::size_t count_plate_characters(std::string_view utf8) {
  std::size_t n = 0;
  for (char32_t c : code_points(utf8)) n += is_plate_character(c) ? 1 : 0;
  return n;
}

namespace detail {

inline icu::BreakIterator& character_breaker() {
  thread_local std::unique_ptr<icu::BreakIterator> it = [] {
    UErrorCode status = U_ZERO_ERROR;
    std::unique_ptr<icu::BreakIterator> bi(
        icu::BreakIterator::createCharacterInstance(icu::Locale::getRoot(), status));
    if (U_FAILURE(status) || !bi) {
      throw Error(ErrorKind::IoFailure, "ICU character break iterator unavailable");
    }
    return bi;
  }();
  return *it;
}

inline bool ends_with_virama(const icu::UnicodeString& cluster) {
  int32_t end = cluster.length();
  if (end == 0) return false;
  int32_t last = cluster.moveIndex32(end, -1);
  if (cluster.char32At(last) == static_cast<UChar32>(kZeroWidthJoiner) && last > 0) {
    last = cluster.moveIndex32(last, -1);
  }
  return cluster.char32At(last) == static_cast<UChar32>(kBengaliVirama);
}

}  // namespace detail

// Extended grapheme clusters, with Bengali consonant + virama + consonant
// sequences kept together as one conjunct.
inline std::vector<std::string> graphemes(std::string_view utf8) {
  const auto s = icu::UnicodeString::fromUTF8(
      icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  auto& bi = detail::character_breaker();
  bi.setText(s);
  std::vector<icu::UnicodeString> clusters;
  int32_t start = bi.first();
  for (int32_t end = bi.next(); end != icu::BreakIterator::DONE; start = end, end = bi.next()) {
    icu::UnicodeString piece(s, start, end - start);
    const auto lead = static_cast<char32_t>(piece.char32At(0));
    if (!clusters.empty() && detail::ends_with_virama(clusters.back()) &&
        is_bangla_consonant(lead)) {
      clusters.back().append(piece);
    } else {
      clusters.push_back(std::move(piece));
    }
  }
  std::vector<std::string> out;
  out.reserve(clusters.size());
  for (const auto& c : clusters) out.push_back(to_utf8(c));
  return out;
}

}  // namespace alpr::text
