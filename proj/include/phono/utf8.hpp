#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace phono::utf8 {

// Decode UTF-8 into code points. Throws std::invalid_argument on malformed input.
std::u32string decode(std::string_view text);

std::string encode(char32_t cp);
std::string encode(std::u32string_view cps);

bool is_whitespace(char32_t cp);

// Nonspacing combining marks (general category Mn) in the blocks IPA uses.
bool is_combining_mark(char32_t cp);

// Spacing modifier letters and superscripts that attach to the preceding
// base in IPA transcription (length marks, aspiration, palatalization, ...).
bool is_modifier(char32_t cp);

// U+0361 and U+035C join two base characters into one segment.
bool is_tie_bar(char32_t cp);

inline bool attaches_to_previous(char32_t cp) { return is_combining_mark(cp) || is_modifier(cp); }

// Lowercase for ASCII and Latin-1 letters; other code points unchanged.
char32_t to_lower(char32_t cp);

}  // namespace phono::utf8
