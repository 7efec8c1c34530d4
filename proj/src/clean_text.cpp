// Text cleaning for provider catalogs.
//
// Unit table applied after markup removal:
//   distance  "2,0 KM", "2.50 kms", "3 kilometres"    -> "2 km", "2.5 km", "3 km"
//   meters    "300 mt", "300m from", "1,000 metres"    -> "300 meters", "300 meters from",
//                                                          "1000 meters"
//   durations "10 min walk", "5 minutes' walk",
//             "5 mins on foot", "15 minutes by car"    -> "10-minute walk", "5-minute walk",
//                                                          "5-minute walk", "15-minute drive"
// Numbers: decimal comma becomes a dot, trailing fractional zeros are dropped,
// and a comma followed by exactly three digits is a thousands separator.
// A bare "m" is read as meters only before "from", "to" or "away".

#include <regex>
#include <string>
#include <string_view>

#include "caleido/catalog.hpp"
#include "caleido/utf8.hpp"

namespace caleido {

namespace {

bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

// Removes <tag ...>, </tag>, <!doctype>, <?pi?> and <!-- comments -->.
// Each removed tag becomes a single space.
std::string strip_tags_once(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] != '<') {
      out += s[i++];
      continue;
    }
    if (s.substr(i, 4) == "<!--") {
      const std::size_t end = s.find("-->", i + 4);
      if (end != std::string_view::npos) {
        out += ' ';
        i = end + 3;
        continue;
      }
    }
    std::size_t j = i + 1;
    if (j < s.size() && (s[j] == '/' || s[j] == '!' || s[j] == '?')) ++j;
    if (j < s.size() && is_alpha(s[j])) {
      std::size_t k = j + 1;
      while (k < s.size() && s[k] != '<' && s[k] != '>') ++k;
      if (k < s.size() && s[k] == '>') {
        out += ' ';
        i = k + 1;
        continue;
      }
    }
    out += s[i++];
  }
  return out;
}

struct NamedEntity {
  std::string_view name;
  char32_t cp;
};

constexpr NamedEntity kEntities[] = {
    {"nbsp", 0x20},   {"amp", '&'},      {"lt", '<'},       {"gt", '>'},
    {"quot", '"'},    {"apos", '\''},    {"rsquo", 0x2019}, {"lsquo", 0x2018},
    {"rdquo", 0x201D}, {"ldquo", 0x201C}, {"ndash", 0x2013}, {"mdash", 0x2014},
    {"hellip", 0x2026}, {"euro", 0x20AC}, {"deg", 0xB0},     {"sup2", 0xB2},
    {"eacute", 0xE9}, {"egrave", 0xE8},  {"agrave", 0xE0},  {"ograve", 0xF2},
    {"ugrave", 0xF9}, {"igrave", 0xEC},  {"ccedil", 0xE7},  {"copy", 0xA9},
    {"reg", 0xAE},    {"middot", 0xB7},  {"bull", 0x2022},
};

std::string decode_entities_once(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] != '&') {
      out += s[i++];
      continue;
    }
    const std::size_t semi = s.find(';', i + 1);
    if (semi == std::string_view::npos || semi - i > 10 || semi == i + 1) {
      out += s[i++];
      continue;
    }
    const std::string_view body = s.substr(i + 1, semi - i - 1);
    bool decoded = false;
    if (body[0] == '#') {
      char32_t cp = 0;
      bool ok = body.size() > 1;
      const bool hex = ok && (body[1] == 'x' || body[1] == 'X');
      const std::size_t start = hex ? 2 : 1;
      if (start >= body.size()) ok = false;
      for (std::size_t k = start; ok && k < body.size(); ++k) {
        const char c = body[k];
        int digit;
        if (c >= '0' && c <= '9') digit = c - '0';
        else if (hex && c >= 'a' && c <= 'f') digit = c - 'a' + 10;
        else if (hex && c >= 'A' && c <= 'F') digit = c - 'A' + 10;
        else { ok = false; break; }
        cp = cp * (hex ? 16 : 10) + static_cast<char32_t>(digit);
        if (cp > 0x10FFFF) ok = false;
      }
      if (ok && cp != 0 && !(cp >= 0xD800 && cp <= 0xDFFF)) {
        utf8::append(out, cp == 0xA0 ? U' ' : cp);
        decoded = true;
      }
    } else {
      for (const auto& e : kEntities) {
        if (e.name == body) {
          utf8::append(out, e.cp);
          decoded = true;
          break;
        }
      }
    }
    if (decoded) {
      i = semi + 1;
    } else {
      out += s[i++];
    }
  }
  return out;
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending = false;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t width = 0;
    if (utf8::is_space(s, i, &width)) {
      pending = true;
      i += width;
      continue;
    }
    if (pending && !out.empty()) out += ' ';
    pending = false;
    out += s[i++];
  }
  return out;
}

std::string normalize_number(const std::string& n) {
  const std::size_t sep = n.find_first_of(".,");
  if (sep == std::string::npos) return n;
  const std::string whole = n.substr(0, sep);
  std::string frac = n.substr(sep + 1);
  if (n[sep] == ',' && frac.size() == 3 && whole != "0") return whole + frac;
  while (!frac.empty() && frac.back() == '0') frac.pop_back();
  return frac.empty() ? whole : whole + "." + frac;
}

template <typename Fn>
std::string replace_each(const std::string& text, const std::regex& re, Fn&& fn) {
  std::string out;
  auto it = std::sregex_iterator(text.begin(), text.end(), re);
  std::size_t last = 0;
  for (; it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    out.append(text, last, static_cast<std::size_t>(m.position(0)) - last);
    out += fn(m);
    last = static_cast<std::size_t>(m.position(0) + m.length(0));
  }
  out.append(text, last, std::string::npos);
  return out;
}

constexpr auto kFlags = std::regex::ECMAScript | std::regex::icase | std::regex::optimize;

const std::regex& km_rule() {
  static const std::regex re(
      R"((^|[^\w.,])(\d+(?:[.,]\d+)?) ?(?:kilometres|kilometers|kilometre|kilometer|kms|km)(?!\w))",
      kFlags);
  return re;
}

const std::regex& meter_rule() {
  static const std::regex re(
      "(^|[^\\w.,])(\\d+(?:[.,]\\d+)?) ?(?:metres|meters|metre|meter|mtrs|mtr|mts|mt)"
      "(?!\\w|\xC2\xB2)",
      kFlags);
  return re;
}

const std::regex& bare_meter_rule() {
  static const std::regex re(R"((^|[^\w.,])(\d+(?:[.,]\d+)?) ?m (from|to|away)(?!\w))", kFlags);
  return re;
}

const std::regex& duration_rule() {
  static const std::regex re(
      "(^|[^\\w.,])(\\d+) ?(?:- ?)?(?:minutes|minute|mins|min)\\.?(?:'|\xE2\x80\x99)? "
      "(walking|walk|stroll|driving|drive|ride|on foot|by car)(?!\\w)",
      kFlags);
  return re;
}

std::string canonical_mode(std::string mode) {
  mode = utf8::ascii_lower(mode);
  if (mode == "walking" || mode == "on foot") return "walk";
  if (mode == "driving" || mode == "by car") return "drive";
  return mode;
}

std::string canonicalize_units(const std::string& text) {
  std::string s = replace_each(text, km_rule(), [](const std::smatch& m) {
    return m[1].str() + normalize_number(m[2].str()) + " km";
  });
  s = replace_each(s, meter_rule(), [](const std::smatch& m) {
    return m[1].str() + normalize_number(m[2].str()) + " meters";
  });
  s = replace_each(s, bare_meter_rule(), [](const std::smatch& m) {
    return m[1].str() + normalize_number(m[2].str()) + " meters " + utf8::ascii_lower(m[3].str());
  });
  s = replace_each(s, duration_rule(), [](const std::smatch& m) {
    return m[1].str() + m[2].str() + "-minute " + canonical_mode(m[3].str());
  });
  return s;
}

}  // namespace

std::string clean_markup(std::string_view raw) {
  std::string current(raw);
  while (true) {
    std::string next = decode_entities_once(strip_tags_once(current));
    if (next == current) break;
    current = std::move(next);
  }
  return collapse_whitespace(current);
}

std::string clean_text(std::string_view raw) {
  if (raw.empty()) return {};
  return collapse_whitespace(canonicalize_units(clean_markup(raw)));
}

}  // namespace caleido
