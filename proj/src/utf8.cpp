#include "phono/utf8.hpp"

#include <stdexcept>

namespace phono::utf8 {

std::u32string decode(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    char32_t cp = 0;
    std::size_t extra = 0;
    if (lead < 0x80) {
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      cp = lead & 0x1F;
      extra = 1;
    } else if ((lead & 0xF0) == 0xE0) {
      cp = lead & 0x0F;
      extra = 2;
    } else if ((lead & 0xF8) == 0xF0) {
      cp = lead & 0x07;
      extra = 3;
    } else {
      throw std::invalid_argument("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    for (std::size_t k = 1; k <= extra; ++k) {
      if (i + k >= text.size()) throw std::invalid_argument("truncated UTF-8 sequence at offset " + std::to_string(i));
      const auto cont = static_cast<unsigned char>(text[i + k]);
      if ((cont & 0xC0) != 0x80) throw std::invalid_argument("invalid UTF-8 continuation at offset " + std::to_string(i + k));
      cp = (cp << 6) | (cont & 0x3F);
    }
    out.push_back(cp);
    i += extra + 1;
  }
  return out;
}

std::string encode(char32_t cp) {
  std::string out;
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
  return out;
}

std::string encode(std::u32string_view cps) {
  std::string out;
  for (char32_t cp : cps) out += encode(cp);
  return out;
}

bool is_whitespace(char32_t cp) {
  switch (cp) {
    case U' ':
    case U'\t':
    case U'\n':
    case U'\r':
    case U'\v':
    case U'\f':
    case 0x00A0:
    case 0x2007:
    case 0x202F:
    case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

bool is_combining_mark(char32_t cp) {
  return (cp >= 0x0300 && cp <= 0x036F) ||  // combining diacritical marks
         (cp >= 0x1AB0 && cp <= 0x1AFF) ||  // extended
         (cp >= 0x1DC0 && cp <= 0x1DFF) ||  // supplement
         (cp >= 0x20D0 && cp <= 0x20FF) ||  // for symbols
         (cp >= 0xFE20 && cp <= 0xFE2F);    // half marks
}

bool is_modifier(char32_t cp) {
  return (cp >= 0x02B0 && cp <= 0x02FF) ||  // spacing modifier letters: ʰ ʲ ʷ ː ˑ ˠ ˤ tone letters
         (cp >= 0x1D2C && cp <= 0x1D6A) ||  // superscript letters
         (cp >= 0x1D9B && cp <= 0x1DBF) ||  // modifier letters supplement
         cp == 0x2071 || cp == 0x207F ||    //
         (cp >= 0x2090 && cp <= 0x209C) ||  // subscript letters
         (cp >= 0xA700 && cp <= 0xA71F);    // modifier tone letters
}

bool is_tie_bar(char32_t cp) { return cp == 0x0361 || cp == 0x035C; }

char32_t to_lower(char32_t cp) {
  if (cp >= U'A' && cp <= U'Z') return cp + 32;
  if ((cp >= 0x00C0 && cp <= 0x00DE) && cp != 0x00D7) return cp + 32;
  return cp;
}

}  // namespace phono::utf8
