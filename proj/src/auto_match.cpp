#include <algorithm>
#include <set>

#include "caleido/evaluation.hpp"
#include "caleido/utf8.hpp"

namespace caleido {

namespace {

const std::set<std::string, std::less<>> kStopwords = {
    "a",    "an",   "the",  "and",   "or",   "of",   "in",   "on",    "at",   "to",
    "for",  "with", "by",   "from",  "is",   "are",  "be",   "this",  "that", "its",
    "it",   "our",  "your", "you",   "we",   "as",   "per",  "also",  "there", "their",
    "has",  "have", "can",  "which", "into", "near", "while", "will", "all",  "every"};

// Amenity, distance and facility nouns whose presence makes a sentence a
// factual claim. Stored in normalized (singular) form.
const std::set<std::string, std::less<>> kFactLexicon = {
    "pool",     "spa",       "gym",      "sauna",    "restaurant", "bar",      "parking",
    "garage",   "wifi",      "internet", "beach",    "breakfast",  "brunch",   "dinner",
    "shuttle",  "airport",   "station",  "km",       "meter",      "metre",    "minute",
    "terrace",  "garden",    "balcony",  "jacuzzi",  "fitness",    "suite",    "room",
    "museum",   "centre",    "center",   "bike",     "bicycle",    "tennis",   "golf",
    "lift",     "elevator",  "reception", "concierge", "laundry",  "kitchen",  "kitchenette",
    "minibar",  "tv",        "conditioning", "pet",  "playground", "hammam",   "massage",
    "wellness", "star",      "rooftop",  "lounge",   "cafe",       "buffet",   "transfer",
    "cathedral", "park",     "square",   "harbour",  "port",       "church",   "castle",
    "hall",     "library",   "cinema",   "theatre",  "stadium",    "market",   "mall"};

struct Token {
  std::string norm;
  std::size_t begin = 0;  // bytes
  std::size_t end = 0;
  bool stop = false;
};

char32_t decode(std::string_view s, std::size_t i, std::size_t* width) {
  const auto c = static_cast<unsigned char>(s[i]);
  if (c < 0x80) {
    *width = 1;
    return c;
  }
  std::size_t n = c >= 0xF0 ? 4 : c >= 0xE0 ? 3 : 2;
  n = std::min(n, s.size() - i);
  char32_t cp = c & (n == 4 ? 0x07 : n == 3 ? 0x0F : 0x1F);
  for (std::size_t k = 1; k < n; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
  *width = n;
  return cp;
}

bool is_word_char(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z') || (cp >= '0' && cp <= '9');
  }
  // General punctuation, quotes and symbols separate words; other
  // non-ASCII code points are treated as letters.
  if (cp >= 0x2000 && cp <= 0x206F) return false;
  if (cp == 0xA0 || cp == 0xAB || cp == 0xBB || cp == 0xB7 || cp == 0xB0 || cp == 0xB2) return false;
  return true;
}

std::string normalize(std::string word) {
  word = utf8::ascii_lower(word);
  if (word == "wi" || word == "fi") return word;
  if (word.size() > 3 && word.back() == 's' && word[word.size() - 2] != 's' &&
      word[word.size() - 2] != 'u' && word[word.size() - 2] != 'i') {
    word.pop_back();
  }
  return word;
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  std::size_t start = std::string_view::npos;
  auto flush = [&](std::size_t end) {
    if (start == std::string_view::npos) return;
    Token t;
    t.begin = start;
    t.end = end;
    t.norm = normalize(std::string(text.substr(start, end - start)));
    t.stop = kStopwords.count(t.norm) > 0;
    out.push_back(std::move(t));
    start = std::string_view::npos;
  };
  while (i < text.size()) {
    std::size_t width = 1;
    const char32_t cp = decode(text, i, &width);
    if (is_word_char(cp)) {
      if (start == std::string_view::npos) start = i;
    } else {
      flush(i);
    }
    i += width;
  }
  flush(text.size());
  // "Wi-Fi" and "wi fi" match "wifi".
  for (std::size_t k = 0; k + 1 < out.size(); ++k) {
    if (out[k].norm == "wi" && out[k + 1].norm == "fi") {
      out[k].norm = "wifi";
      out[k].end = out[k + 1].end;
      out.erase(out.begin() + static_cast<std::ptrdiff_t>(k) + 1);
    }
  }
  return out;
}

struct FeatureTerms {
  std::set<std::string> terms;
  std::size_t token_count = 0;
};

FeatureTerms feature_terms(std::string_view text) {
  FeatureTerms f;
  const auto tokens = tokenize(text);
  f.token_count = tokens.size();
  for (const auto& t : tokens) {
    if (!t.stop) f.terms.insert(t.norm);
  }
  if (f.terms.empty()) {
    for (const auto& t : tokens) f.terms.insert(t.norm);
  }
  return f;
}

struct Window {
  double score = 0;
  std::size_t first = 0;  // token indices, inclusive
  std::size_t last = 0;
};

// Best window over tokens [lo, hi): highest overlap, then fewest tokens, then
// earliest start.
Window best_window(const FeatureTerms& f, const std::vector<Token>& tokens, std::size_t lo,
                   std::size_t hi) {
  Window best;
  if (f.terms.empty()) return best;
  const std::size_t max_len = 2 * f.token_count + 3;
  const double denom = static_cast<double>(f.terms.size());
  for (std::size_t i = lo; i < hi; ++i) {
    if (!f.terms.count(tokens[i].norm)) continue;
    std::set<std::string_view> seen;
    for (std::size_t j = i; j < hi && j - i < max_len; ++j) {
      if (!f.terms.count(tokens[j].norm) || !seen.insert(tokens[j].norm).second) continue;
      const double score = static_cast<double>(seen.size()) / denom;
      const std::size_t len = j - i + 1;
      const bool better = score > best.score + 1e-12 ||
                          (score > best.score - 1e-12 && len < best.last - best.first + 1);
      if (better) best = {score, i, j};
      if (seen.size() == f.terms.size()) break;
    }
  }
  return best;
}

struct Sentence {
  std::size_t begin = 0;  // bytes
  std::size_t end = 0;
};

std::vector<Sentence> split_sentences(std::string_view text) {
  std::vector<Sentence> out;
  std::size_t start = 0;
  auto push = [&](std::size_t end) {
    std::size_t b = start, e = end;
    while (b < e && (text[b] == ' ' || text[b] == '\n' || text[b] == '\t' || text[b] == '\r')) ++b;
    while (e > b && (text[e - 1] == ' ' || text[e - 1] == '\n' || text[e - 1] == '\t' || text[e - 1] == '\r')) --e;
    if (b < e) out.push_back({b, e});
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const bool terminal = (c == '.' || c == '!' || c == '?') &&
                          (i + 1 == text.size() || text[i + 1] == ' ' || text[i + 1] == '\n');
    if (terminal || c == '\n') {
      push(terminal ? i + 1 : i);
      start = i + 1;
    }
  }
  push(text.size());
  return out;
}

bool states_a_fact(const std::vector<Token>& tokens, std::size_t lo, std::size_t hi) {
  for (std::size_t k = lo; k < hi; ++k) {
    const auto& n = tokens[k].norm;
    if (std::any_of(n.begin(), n.end(), [](char c) { return c >= '0' && c <= '9'; })) return true;
    if (kFactLexicon.count(n)) return true;
  }
  return false;
}

}  // namespace

AnnotationRecord auto_match(const ContextDocument& context, std::string_view description,
                            double threshold) {
  AnnotationRecord record;
  record.annotator = std::string(kAutoAnnotator);
  const auto tokens = tokenize(description);
  const auto cp_offsets = utf8::boundaries(description);
  auto to_cp = [&](std::size_t byte) {
    return static_cast<std::size_t>(
        std::lower_bound(cp_offsets.begin(), cp_offsets.end(), byte) - cp_offsets.begin());
  };

  std::vector<FeatureTerms> terms;
  for (const auto& f : context.features) terms.push_back(feature_terms(f.text));

  std::vector<std::pair<std::size_t, std::size_t>> linked_bytes;
  for (std::size_t k = 0; k < context.features.size(); ++k) {
    const Window w = best_window(terms[k], tokens, 0, tokens.size());
    if (w.score <= 0 || w.score + 1e-12 < threshold) continue;
    const std::size_t b = tokens[w.first].begin, e = tokens[w.last].end;
    linked_bytes.emplace_back(b, e);
    record.description_features.push_back({to_cp(b), to_cp(e), context.features[k].feature_id});
  }

  for (const auto& s : split_sentences(description)) {
    const bool overlaps = std::any_of(linked_bytes.begin(), linked_bytes.end(), [&](const auto& l) {
      return l.first < s.end && s.begin < l.second;
    });
    if (overlaps) continue;
    std::size_t lo = 0;
    while (lo < tokens.size() && tokens[lo].begin < s.begin) ++lo;
    std::size_t hi = lo;
    while (hi < tokens.size() && tokens[hi].end <= s.end) ++hi;
    const bool supported = std::any_of(terms.begin(), terms.end(), [&](const FeatureTerms& f) {
      const Window w = best_window(f, tokens, lo, hi);
      return w.score > 0 && w.score + 1e-12 >= threshold;
    });
    if (supported || !states_a_fact(tokens, lo, hi)) continue;
    record.description_features.push_back({to_cp(s.begin), to_cp(s.end), std::string(kHallucinated)});
  }
  return record;
}

}  // namespace caleido
