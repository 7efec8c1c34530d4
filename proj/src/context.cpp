#include "caleido/context.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "caleido/error.hpp"
#include "caleido/utf8.hpp"

namespace caleido {

using nlohmann::json;

std::string_view category_label(FeatureCategory c) {
  switch (c) {
    case FeatureCategory::Recreation: return "Recreation";
    case FeatureCategory::Services: return "Services";
    case FeatureCategory::Dining: return "Dining";
    case FeatureCategory::Rooms: return "Rooms";
    case FeatureCategory::AdditionalServices: return "Additional Services";
    case FeatureCategory::NearbyPOIs: return "Nearby POIs";
  }
  return "Recreation";
}

std::string_view category_slug(FeatureCategory c) {
  switch (c) {
    case FeatureCategory::Recreation: return "recreation";
    case FeatureCategory::Services: return "services";
    case FeatureCategory::Dining: return "dining";
    case FeatureCategory::Rooms: return "rooms";
    case FeatureCategory::AdditionalServices: return "additional-services";
    case FeatureCategory::NearbyPOIs: return "nearby-pois";
  }
  return "recreation";
}

std::optional<FeatureCategory> category_from_label(std::string_view label) {
  for (auto c : kAllCategories) {
    if (category_label(c) == label) return c;
  }
  return std::nullopt;
}

std::optional<FeatureCategory> category_from_name(std::string_view name) {
  static const std::map<std::string_view, FeatureCategory> aliases = {
      {"AdditionalServices", FeatureCategory::AdditionalServices},
      {"NearbyPOIs", FeatureCategory::NearbyPOIs},
  };
  if (auto c = category_from_label(name)) return c;
  for (auto c : kAllCategories) {
    if (category_slug(c) == name) return c;
  }
  if (auto it = aliases.find(name); it != aliases.end()) return it->second;
  return std::nullopt;
}

std::string_view split_rule_name(SplitRule r) {
  switch (r) {
    case SplitRule::CommaSplit: return "comma-split";
    case SplitRule::SentenceSplit: return "sentence-split";
    case SplitRule::Passthrough: return "passthrough";
  }
  return "passthrough";
}

std::optional<SplitRule> split_rule_from_name(std::string_view name) {
  for (auto r : {SplitRule::CommaSplit, SplitRule::SentenceSplit, SplitRule::Passthrough}) {
    if (split_rule_name(r) == name) return r;
  }
  return std::nullopt;
}

void validate_feature(const Feature& f) {
  auto fail = [&](const std::string& why) {
    throw Error(Errc::InvalidFeature, "feature '" + f.feature_id + "': " + why);
  };
  if (f.text.empty()) fail("empty text");
  if (utf8::length(f.text) > kMaxFeatureLength) fail("text longer than 200 characters");
  if (f.text.find(';') != std::string::npos) fail("text contains ';'");
  if (f.text.front() == ' ' || f.text.back() == ' ') fail("text is not trimmed");
  if (f.text.find("  ") != std::string::npos) fail("text has a whitespace run");
  for (char c : f.text) {
    if (c == '\n' || c == '\t' || c == '\r') fail("text contains a control character");
  }
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(' ');
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(' ');
  return std::string(s.substr(b, e - b + 1));
}

// Cuts at the last space that keeps the phrase within the length limit.
std::string clamp_length(std::string phrase) {
  if (utf8::length(phrase) <= kMaxFeatureLength) return phrase;
  const auto bounds = utf8::boundaries(phrase);
  std::size_t cut = bounds[kMaxFeatureLength];
  const std::size_t space = phrase.rfind(' ', cut);
  if (space != std::string::npos && space > 0) cut = space;
  return trim(std::string_view(phrase).substr(0, cut));
}

std::string finish_phrase(std::string_view piece) {
  std::string p = trim(piece);
  while (!p.empty() && (p.back() == '.' || p.back() == '!' || p.back() == '?')) {
    p.pop_back();
    p = trim(p);
  }
  return clamp_length(std::move(p));
}

std::vector<std::string> split_on(std::string_view text, std::string_view seps) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || seps.find(text[i]) != std::string_view::npos) {
      out.emplace_back(text.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> split_phrases(std::string_view cleaned, SplitRule rule) {
  std::vector<std::string> pieces;
  switch (rule) {
    case SplitRule::CommaSplit:
      pieces = split_on(cleaned, ",;");
      break;
    case SplitRule::Passthrough:
      pieces = split_on(cleaned, ";");
      break;
    case SplitRule::SentenceSplit: {
      // Sentence ends: [.!?] followed by a space or end of text; ';' always.
      std::size_t start = 0;
      for (std::size_t i = 0; i < cleaned.size(); ++i) {
        const char c = cleaned[i];
        const bool terminal = (c == '.' || c == '!' || c == '?') &&
                              (i + 1 == cleaned.size() || cleaned[i + 1] == ' ');
        if (terminal || c == ';') {
          pieces.emplace_back(cleaned.substr(start, i + 1 - start));
          start = i + 1;
        }
      }
      pieces.emplace_back(cleaned.substr(start));
      break;
    }
  }
  std::vector<std::string> out;
  for (const auto& piece : pieces) {
    std::string p = finish_phrase(piece);
    if (!p.empty()) out.push_back(std::move(p));
  }
  return out;
}

std::vector<Feature> extract_features(const FacilityRecord& record, const FieldMapping& mapping) {
  std::map<FeatureCategory, std::vector<std::string>> by_category;
  for (const auto& rule : mapping) {
    auto it = record.cleaned_fields.find(rule.field);
    if (it == record.cleaned_fields.end()) continue;
    auto& bucket = by_category[rule.category];
    for (auto& phrase : split_phrases(it->second, rule.split)) {
      if (std::find(bucket.begin(), bucket.end(), phrase) == bucket.end()) {
        bucket.push_back(std::move(phrase));
      }
    }
  }
  std::vector<Feature> out;
  for (auto category : kAllCategories) {
    int n = 0;
    for (auto& text : by_category[category]) {
      out.push_back({std::string(category_slug(category)) + "-" + std::to_string(++n), category,
                     std::move(text)});
    }
  }
  if (out.empty()) {
    throw Error(Errc::NoFeatures, "facility '" + record.facility_id + "' yields no features");
  }
  return out;
}

namespace {

void check_grouping(std::span<const Feature> features) {
  std::set<FeatureCategory> closed;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = features[i];
    validate_feature(f);
    if (i > 0 && features[i - 1].category != f.category) {
      closed.insert(features[i - 1].category);
      if (features[i - 1].category > f.category) {
        throw Error(Errc::UngroupedFeatures,
                    "category '" + std::string(category_label(f.category)) +
                        "' appears after '" +
                        std::string(category_label(features[i - 1].category)) + "'");
      }
    }
    if (closed.count(f.category)) {
      throw Error(Errc::UngroupedFeatures, "features of category '" +
                                               std::string(category_label(f.category)) +
                                               "' are not contiguous");
    }
    if (!f.feature_id.empty() && !ids.insert(f.feature_id).second) {
      throw Error(Errc::UngroupedFeatures, "duplicate feature id '" + f.feature_id + "'");
    }
  }
}

}  // namespace

std::string render_context(std::span<const Feature> features) {
  if (features.empty()) throw Error(Errc::EmptyContext, "no features to render");
  check_grouping(features);
  std::string out;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const bool new_segment = i == 0 || features[i - 1].category != features[i].category;
    if (new_segment) {
      if (i > 0) out += "; ";
      out += category_label(features[i].category);
      out += ": ";
    } else {
      out += ", ";
    }
    for (char c : features[i].text) {
      if (c == ',' || c == '\\') out += '\\';
      out += c;
    }
  }
  return out;
}

std::vector<Feature> parse_context(std::string_view s) {
  auto fail = [](std::size_t pos, const std::string& what) -> Error {
    return Error(Errc::ContextSyntax, what + " at position " + std::to_string(pos), {}, pos);
  };
  std::vector<Feature> out;
  std::map<FeatureCategory, int> counters;
  std::set<FeatureCategory> seen;
  std::size_t i = 0;
  if (s.empty()) throw fail(0, "empty context");
  while (i < s.size()) {
    const std::size_t colon = s.find(": ", i);
    if (colon == std::string_view::npos) throw fail(i, "missing ': ' after category label");
    const auto label = s.substr(i, colon - i);
    const auto category = category_from_label(label);
    if (!category) throw fail(i, "unknown category label '" + std::string(label) + "'");
    if (!seen.insert(*category).second) {
      throw fail(i, "category '" + std::string(label) + "' repeated");
    }
    if (!out.empty() && out.back().category > *category) {
      throw fail(i, "category '" + std::string(label) + "' out of order");
    }
    i = colon + 2;
    // Items up to the next unescaped ';'.
    while (true) {
      std::string text;
      const std::size_t item_start = i;
      bool segment_end = false;
      while (i < s.size()) {
        const char c = s[i];
        if (c == '\\') {
          if (i + 1 >= s.size() || (s[i + 1] != ',' && s[i + 1] != '\\')) {
            throw fail(i, "invalid escape");
          }
          text += s[i + 1];
          i += 2;
          continue;
        }
        if (c == ',') break;
        if (c == ';') {
          segment_end = true;
          break;
        }
        text += c;
        ++i;
      }
      Feature f{std::string(category_slug(*category)) + "-" + std::to_string(++counters[*category]),
                *category, std::move(text)};
      try {
        validate_feature(f);
      } catch (const Error& e) {
        throw fail(item_start, e.what());
      }
      out.push_back(std::move(f));
      if (i >= s.size()) return out;
      if (segment_end) {
        if (s.substr(i, 2) != "; " || i + 2 >= s.size()) throw fail(i, "expected '; ' delimiter");
        i += 2;
        break;
      }
      if (s.substr(i, 2) != ", " || i + 2 >= s.size()) throw fail(i, "expected ', ' delimiter");
      i += 2;
    }
  }
  return out;
}

ContextDocument build_context(const FacilityRecord& record, const FieldMapping& mapping) {
  ContextDocument doc;
  doc.facility_id = record.facility_id;
  doc.features = extract_features(record, mapping);
  doc.serialized = render_context(doc.features);
  return doc;
}

void validate_context(const ContextDocument& doc) {
  if (doc.facility_id.empty()) throw Error(Errc::InvalidRecord, "context without facility_id");
  if (render_context(doc.features) != doc.serialized) {
    throw Error(Errc::ContextSyntax, "serialized context does not match its features");
  }
}

json to_json(const ContextDocument& doc) {
  json features = json::array();
  for (const auto& f : doc.features) {
    features.push_back({{"feature_id", f.feature_id},
                        {"category", std::string(category_label(f.category))},
                        {"text", f.text}});
  }
  return json{{"facility_id", doc.facility_id},
              {"features", std::move(features)},
              {"serialized", doc.serialized}};
}

ContextDocument context_from_json(const json& j) {
  try {
    ContextDocument doc;
    doc.facility_id = j.at("facility_id").get<std::string>();
    for (const auto& f : j.at("features")) {
      auto category = category_from_name(f.at("category").get<std::string>());
      if (!category) throw Error(Errc::ContextSyntax, "unknown category in context record");
      doc.features.push_back(
          {f.at("feature_id").get<std::string>(), *category, f.at("text").get<std::string>()});
    }
    doc.serialized = j.at("serialized").get<std::string>();
    validate_context(doc);
    return doc;
  } catch (const json::exception& e) {
    throw Error(Errc::ContextSyntax, std::string("bad context record: ") + e.what());
  }
}

}  // namespace caleido
