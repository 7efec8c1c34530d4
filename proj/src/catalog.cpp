#include "caleido/catalog.hpp"

#include <algorithm>
#include <set>

#include "caleido/error.hpp"
#include "caleido/utf8.hpp"

namespace caleido {

using nlohmann::json;

// Defined in clean_text.cpp: tag strip + entity decode + whitespace collapse,
// without unit canonicalization.
std::string clean_markup(std::string_view raw);

std::string_view format_name(CatalogFormat f) {
  switch (f) {
    case CatalogFormat::StructuredJson: return "structured-json";
    case CatalogFormat::DelimitedTable: return "delimited-table";
    case CatalogFormat::HtmlFragments: return "html-fragments";
  }
  return "structured-json";
}

namespace {

CatalogFormat format_from_name(std::string_view name) {
  for (auto f : {CatalogFormat::StructuredJson, CatalogFormat::DelimitedTable,
                 CatalogFormat::HtmlFragments}) {
    if (format_name(f) == name) return f;
  }
  throw Error(Errc::InvalidDescriptor, "unknown catalog format '" + std::string(name) + "'",
              "/format");
}

[[noreturn]] void malformed(std::size_t offset, const std::string& what) {
  throw Error(Errc::MalformedCatalog,
              what + " at byte " + std::to_string(offset), {}, offset);
}

// ---------------------------------------------------------------------------
// structured-json

std::size_t skip_ws(std::string_view s, std::size_t i) {
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\n' || s[i] == '\r')) ++i;
  return i;
}

std::size_t skip_string(std::string_view s, std::size_t i) {
  ++i;  // opening quote
  while (i < s.size() && s[i] != '"') i += (s[i] == '\\') ? 2 : 1;
  return i + 1;
}

std::size_t skip_value(std::string_view s, std::size_t i) {
  if (s[i] == '"') return skip_string(s, i);
  if (s[i] == '{' || s[i] == '[') {
    int depth = 0;
    while (i < s.size()) {
      const char c = s[i];
      if (c == '"') {
        i = skip_string(s, i);
        continue;
      }
      if (c == '{' || c == '[') ++depth;
      if (c == '}' || c == ']') {
        if (--depth == 0) return i + 1;
      }
      ++i;
    }
    return i;
  }
  while (i < s.size() && s[i] != ',' && s[i] != '}' && s[i] != ']' && s[i] != ' ' &&
         s[i] != '\n' && s[i] != '\r' && s[i] != '\t') {
    ++i;
  }
  return i;
}

// Byte offsets of the elements of the top-level "facilities" array. The
// payload has already been validated as JSON.
std::vector<std::size_t> facility_offsets(std::string_view s) {
  std::vector<std::size_t> out;
  std::size_t i = skip_ws(s, 0);
  if (i >= s.size() || s[i] != '{') return out;
  i = skip_ws(s, i + 1);
  while (i < s.size() && s[i] == '"') {
    const std::size_t key_end = skip_string(s, i);
    const auto key = json::parse(s.substr(i, key_end - i)).get<std::string>();
    i = skip_ws(s, key_end);
    i = skip_ws(s, i + 1);  // ':'
    if (key == "facilities" && s[i] == '[') {
      i = skip_ws(s, i + 1);
      while (i < s.size() && s[i] != ']') {
        out.push_back(i);
        i = skip_ws(s, skip_value(s, i));
        if (s[i] == ',') i = skip_ws(s, i + 1);
      }
      return out;
    }
    i = skip_ws(s, skip_value(s, i));
    if (i < s.size() && s[i] == ',') i = skip_ws(s, i + 1);
  }
  return out;
}

std::string required_string(const json& entry, const char* key, std::size_t offset) {
  auto it = entry.find(key);
  if (it == entry.end() || !it->is_string() || it->get<std::string>().empty()) {
    malformed(offset, std::string("facility entry lacks a non-empty string '") + key + "'");
  }
  return it->get<std::string>();
}

std::vector<FacilityRecord> parse_json(std::string_view payload, const ProviderDescriptor& d) {
  json root;
  try {
    root = json::parse(payload);
  } catch (const json::parse_error& e) {
    malformed(e.byte > 0 ? e.byte - 1 : 0, "invalid JSON");
  }
  if (!root.is_object() || !root.contains("facilities") || !root["facilities"].is_array()) {
    malformed(0, "expected an object with a 'facilities' array");
  }
  const auto offsets = facility_offsets(payload);
  std::vector<FacilityRecord> out;
  std::size_t index = 0;
  for (const auto& entry : root["facilities"]) {
    const std::size_t offset = index < offsets.size() ? offsets[index] : 0;
    ++index;
    if (!entry.is_object()) malformed(offset, "facility entry is not an object");
    FacilityRecord r;
    r.provider_id = d.provider_id;
    r.facility_id = required_string(entry, "id", offset);
    r.name = clean_markup(required_string(entry, "name", offset));
    r.city = clean_markup(required_string(entry, "city", offset));
    if (auto it = entry.find("fields"); it != entry.end()) {
      if (!it->is_object()) malformed(offset, "'fields' is not an object");
      for (const auto& [key, value] : it->items()) {
        if (!value.is_string()) malformed(offset, "field '" + key + "' is not a string");
        r.raw_fields[key] = value.get<std::string>();
      }
    }
    out.push_back(std::move(r));
  }
  // Second pass for duplicate ids so the reported offset is the duplicate's.
  std::set<std::string> seen;
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (!seen.insert(out[k].facility_id).second) {
      malformed(k < offsets.size() ? offsets[k] : 0,
                "duplicate facility id '" + out[k].facility_id + "'");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// delimited-table

std::string unescape_cell(std::string_view cell) {
  std::string out;
  out.reserve(cell.size());
  for (std::size_t i = 0; i < cell.size(); ++i) {
    if (cell[i] == '\\' && i + 1 < cell.size()) {
      const char n = cell[++i];
      out += n == 't' ? '\t' : n == 'n' ? '\n' : n;
    } else {
      out += cell[i];
    }
  }
  return out;
}

std::vector<std::string> split_row(std::string_view line, char delim) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == delim) {
      cells.push_back(unescape_cell(line.substr(start, i - start)));
      start = i + 1;
    } else if (line[i] == '\\') {
      ++i;
    }
  }
  return cells;
}

std::vector<FacilityRecord> parse_table(std::string_view payload, const ProviderDescriptor& d) {
  struct Line {
    std::size_t offset;
    std::string_view text;
  };
  std::vector<Line> lines;
  std::size_t pos = 0;
  while (pos < payload.size()) {
    std::size_t end = payload.find('\n', pos);
    if (end == std::string_view::npos) end = payload.size();
    std::string_view text = payload.substr(pos, end - pos);
    if (!text.empty() && text.back() == '\r') text.remove_suffix(1);
    if (!text.empty()) lines.push_back({pos, text});
    pos = end + 1;
  }
  if (lines.empty()) throw Error(Errc::EmptyCatalog, "catalog has no header row");

  const auto header = split_row(lines[0].text, d.delimiter);
  auto column = [&](const char* name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) malformed(0, std::string("header lacks column '") + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t id_col = column("id");
  const std::size_t name_col = column("name");
  const std::size_t city_col = column("city");
  {
    std::set<std::string> names(header.begin(), header.end());
    if (names.size() != header.size()) malformed(0, "duplicate header column");
  }

  std::vector<FacilityRecord> out;
  std::set<std::string> seen;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto cells = split_row(lines[k].text, d.delimiter);
    if (cells.size() != header.size()) {
      malformed(lines[k].offset, "row has " + std::to_string(cells.size()) + " cells, header has " +
                                     std::to_string(header.size()));
    }
    FacilityRecord r;
    r.provider_id = d.provider_id;
    r.facility_id = cells[id_col];
    r.name = clean_markup(cells[name_col]);
    r.city = clean_markup(cells[city_col]);
    if (r.facility_id.empty() || r.name.empty() || r.city.empty()) {
      malformed(lines[k].offset, "row lacks id, name or city");
    }
    if (!seen.insert(r.facility_id).second) {
      malformed(lines[k].offset, "duplicate facility id '" + r.facility_id + "'");
    }
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == id_col || c == name_col || c == city_col || cells[c].empty()) continue;
      r.raw_fields[header[c]] = cells[c];
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// html-fragments
//
//   <div class="facility" data-id=".." data-name=".." data-city="..">
//     <section data-field="amenities">raw html</section>
//   </div>

struct Tag {
  std::map<std::string, std::string> attrs;
  std::size_t end = 0;  // one past '>'
};

Tag parse_open_tag(std::string_view s, std::size_t start) {
  const std::size_t close = s.find('>', start);
  if (close == std::string_view::npos) malformed(start, "unterminated tag");
  Tag tag;
  tag.end = close + 1;
  std::size_t i = s.find_first_of(" \t\r\n>", start);
  while (i < close) {
    while (i < close && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r' || s[i] == '\n')) ++i;
    if (i >= close) break;
    const std::size_t eq = s.find('=', i);
    if (eq == std::string_view::npos || eq > close) malformed(i, "attribute without value");
    std::string name(s.substr(i, eq - i));
    const char quote = s[eq + 1];
    if (quote != '"' && quote != '\'') malformed(eq + 1, "unquoted attribute value");
    const std::size_t value_end = s.find(quote, eq + 2);
    if (value_end == std::string_view::npos || value_end > close) {
      malformed(eq + 1, "unterminated attribute value");
    }
    tag.attrs[name] = clean_markup(s.substr(eq + 2, value_end - eq - 2));
    i = value_end + 1;
  }
  return tag;
}

bool starts_with_at(std::string_view s, std::size_t i, std::string_view prefix) {
  return s.substr(i, prefix.size()) == prefix;
}

std::vector<FacilityRecord> parse_html(std::string_view payload, const ProviderDescriptor& d) {
  std::vector<FacilityRecord> out;
  std::set<std::string> seen;
  std::size_t i = 0;
  while (true) {
    const std::size_t start = payload.find("<div", i);
    if (start == std::string_view::npos) break;
    const Tag open = parse_open_tag(payload, start);
    auto cls = open.attrs.find("class");
    if (cls == open.attrs.end() || cls->second != "facility") {
      malformed(start, "top-level <div> without class=\"facility\"");
    }
    FacilityRecord r;
    r.provider_id = d.provider_id;
    r.facility_id = open.attrs.count("data-id") ? open.attrs.at("data-id") : "";
    r.name = open.attrs.count("data-name") ? open.attrs.at("data-name") : "";
    r.city = open.attrs.count("data-city") ? open.attrs.at("data-city") : "";
    if (r.facility_id.empty() || r.name.empty() || r.city.empty()) {
      malformed(start, "facility lacks data-id, data-name or data-city");
    }
    if (!seen.insert(r.facility_id).second) {
      malformed(start, "duplicate facility id '" + r.facility_id + "'");
    }
    std::size_t j = open.end;
    while (true) {
      j = skip_ws(payload, j);
      if (j >= payload.size()) malformed(start, "unterminated facility <div>");
      if (starts_with_at(payload, j, "</div>")) {
        j += 6;
        break;
      }
      if (!starts_with_at(payload, j, "<section")) malformed(j, "expected <section> or </div>");
      const Tag section = parse_open_tag(payload, j);
      auto field = section.attrs.find("data-field");
      if (field == section.attrs.end() || field->second.empty()) {
        malformed(j, "<section> without data-field");
      }
      const std::size_t close = payload.find("</section>", section.end);
      if (close == std::string_view::npos) malformed(j, "unterminated <section>");
      if (r.raw_fields.count(field->second)) malformed(j, "repeated field '" + field->second + "'");
      r.raw_fields[field->second] = std::string(payload.substr(section.end, close - section.end));
      j = close + 10;
    }
    out.push_back(std::move(r));
    i = j;
  }
  return out;
}

std::string descriptor_ref(const ProviderDescriptor& d) { return "provider '" + d.provider_id + "'"; }

}  // namespace

void validate_descriptor(const ProviderDescriptor& d) {
  if (d.provider_id.empty()) {
    throw Error(Errc::InvalidDescriptor, "provider_id must be non-empty", "/provider_id");
  }
  if (d.priority < 1) {
    throw Error(Errc::InvalidDescriptor, descriptor_ref(d) + ": priority must be >= 1",
                "/priority");
  }
  std::set<std::string> fields;
  for (const auto& rule : d.field_map) {
    if (rule.field.empty() || !fields.insert(rule.field).second) {
      throw Error(Errc::InvalidDescriptor,
                  descriptor_ref(d) + ": field map entries need unique non-empty names",
                  "/field_map");
    }
  }
}

void validate_descriptor_set(std::span<const ProviderDescriptor> ds) {
  std::set<std::string> ids;
  int primaries = 0;
  for (const auto& d : ds) {
    validate_descriptor(d);
    if (!ids.insert(d.provider_id).second) {
      throw Error(Errc::InvalidDescriptor, "duplicate provider_id '" + d.provider_id + "'",
                  "/provider_id");
    }
    if (d.priority == 1) ++primaries;
  }
  if (primaries != 1) {
    throw Error(Errc::InvalidDescriptor,
                "exactly one provider must have priority 1, found " + std::to_string(primaries),
                "/priority");
  }
}

void validate_record(const FacilityRecord& r) {
  if (r.facility_id.empty() || r.name.empty() || r.city.empty() || r.provider_id.empty()) {
    throw Error(Errc::InvalidRecord, "record needs facility_id, name, city and provider_id");
  }
  for (const auto& [key, value] : r.cleaned_fields) {
    if (!r.raw_fields.count(key)) {
      throw Error(Errc::InvalidRecord, "cleaned field '" + key + "' has no raw counterpart",
                  "/cleaned_fields/" + key);
    }
    if (clean_text(value) != value) {
      throw Error(Errc::InvalidRecord, "cleaned field '" + key + "' is not clean",
                  "/cleaned_fields/" + key);
    }
  }
}

std::vector<FacilityRecord> parse_catalog(std::string_view payload,
                                          const ProviderDescriptor& descriptor) {
  validate_descriptor(descriptor);
  if (const auto bad = utf8::first_invalid(payload); bad != payload.size()) {
    malformed(bad, "invalid UTF-8");
  }
  std::vector<FacilityRecord> records;
  switch (descriptor.format) {
    case CatalogFormat::StructuredJson: records = parse_json(payload, descriptor); break;
    case CatalogFormat::DelimitedTable: records = parse_table(payload, descriptor); break;
    case CatalogFormat::HtmlFragments: records = parse_html(payload, descriptor); break;
  }
  if (records.empty()) {
    throw Error(Errc::EmptyCatalog,
                descriptor_ref(descriptor) + ": catalog has zero facility entries");
  }
  for (auto& r : records) {
    for (const auto& [key, _] : r.raw_fields) r.provenance[key] = descriptor.provider_id;
  }
  return records;
}

FacilityRecord clean_record(FacilityRecord record) {
  record.cleaned_fields.clear();
  for (const auto& [key, raw] : record.raw_fields) record.cleaned_fields[key] = clean_text(raw);
  return record;
}

std::string normalize_identity(std::string_view text) {
  const std::string folded = utf8::ascii_lower(clean_markup(text));
  std::string out;
  bool pending_space = false;
  for (char c : folded) {
    const auto u = static_cast<unsigned char>(c);
    const bool keep = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || u >= 0x80;
    if (keep) {
      if (pending_space && !out.empty()) out += ' ';
      pending_space = false;
      out += c;
    } else {
      pending_space = true;
    }
  }
  return out;
}

FacilityKey facility_key(const FacilityRecord& r) {
  return {normalize_identity(r.name), normalize_identity(r.city)};
}

namespace {

bool has_value(const FacilityRecord& r, const std::string& field) {
  if (auto it = r.cleaned_fields.find(field); it != r.cleaned_fields.end()) {
    return !it->second.empty();
  }
  if (auto it = r.raw_fields.find(field); it != r.raw_fields.end()) {
    return !clean_text(it->second).empty();
  }
  return false;
}

}  // namespace

FacilityRecord merge_providers(std::span<const FacilityRecord> records,
                               std::span<const ProviderDescriptor> descriptors) {
  if (records.empty()) throw Error(Errc::InvalidRecord, "merge needs at least one record");
  std::map<std::string, const ProviderDescriptor*> by_id;
  for (const auto& d : descriptors) by_id[d.provider_id] = &d;

  std::vector<const FacilityRecord*> ordered;
  std::set<std::string> providers;
  for (const auto& r : records) {
    if (!by_id.count(r.provider_id)) {
      throw Error(Errc::InvalidDescriptor, "no descriptor for provider '" + r.provider_id + "'");
    }
    if (!providers.insert(r.provider_id).second) {
      throw Error(Errc::InvalidRecord,
                  "two records from provider '" + r.provider_id + "' for one facility");
    }
    ordered.push_back(&r);
  }
  std::sort(ordered.begin(), ordered.end(), [&](const auto* a, const auto* b) {
    const int pa = by_id[a->provider_id]->priority;
    const int pb = by_id[b->provider_id]->priority;
    return pa != pb ? pa < pb : a->provider_id < b->provider_id;
  });

  const FacilityKey key = facility_key(*ordered.front());
  for (const auto* r : ordered) {
    if (facility_key(*r) != key) {
      throw Error(Errc::ConflictingIdentity,
                  "records disagree on identity: '" + ordered.front()->name + "' (" +
                      ordered.front()->provider_id + ") vs '" + r->name + "' (" +
                      r->provider_id + ")");
    }
  }

  const FacilityRecord& primary = *ordered.front();
  FacilityRecord merged;
  merged.facility_id = primary.facility_id;
  merged.name = primary.name;
  merged.city = primary.city;
  merged.provider_id = primary.provider_id;

  std::set<std::string> fields;
  for (const auto* r : ordered) {
    for (const auto& [k, _] : r->raw_fields) fields.insert(k);
  }
  for (const auto& field : fields) {
    for (const auto* r : ordered) {
      if (!has_value(*r, field)) continue;
      merged.raw_fields[field] = r->raw_fields.at(field);
      if (auto it = r->cleaned_fields.find(field); it != r->cleaned_fields.end()) {
        merged.cleaned_fields[field] = it->second;
      }
      merged.provenance[field] = r->provider_id;
      break;
    }
  }
  return merged;
}

std::vector<FacilityRecord> merge_all(std::span<const FacilityRecord> records,
                                      std::span<const ProviderDescriptor> descriptors) {
  std::map<FacilityKey, std::vector<FacilityRecord>> groups;
  for (const auto& r : records) groups[facility_key(r)].push_back(r);
  std::vector<FacilityRecord> out;
  out.reserve(groups.size());
  for (const auto& [_, group] : groups) out.push_back(merge_providers(group, descriptors));
  return out;
}

FieldMapping combined_mapping(std::span<const ProviderDescriptor> descriptors) {
  std::vector<const ProviderDescriptor*> ordered;
  for (const auto& d : descriptors) ordered.push_back(&d);
  std::sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) {
    return a->priority != b->priority ? a->priority < b->priority
                                      : a->provider_id < b->provider_id;
  });
  FieldMapping out;
  for (const auto* d : ordered) {
    for (const auto& rule : d->field_map) {
      auto it = std::find_if(out.begin(), out.end(),
                             [&](const FieldRule& r) { return r.field == rule.field; });
      if (it == out.end()) {
        out.push_back(rule);
      } else if (!(*it == rule)) {
        throw Error(Errc::InvalidDescriptor,
                    "providers map field '" + rule.field + "' to different rules");
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

json to_json(const ProviderDescriptor& d) {
  json j{{"provider_id", d.provider_id},
         {"priority", d.priority},
         {"format", std::string(format_name(d.format))}};
  if (d.format == CatalogFormat::DelimitedTable) j["delimiter"] = std::string(1, d.delimiter);
  json map = json::array();
  for (const auto& rule : d.field_map) {
    map.push_back({{"field", rule.field},
                   {"category", std::string(category_label(rule.category))},
                   {"split", std::string(split_rule_name(rule.split))}});
  }
  j["field_map"] = std::move(map);
  return j;
}

ProviderDescriptor descriptor_from_json(const json& j) {
  try {
    ProviderDescriptor d;
    d.provider_id = j.at("provider_id").get<std::string>();
    d.priority = j.at("priority").get<int>();
    d.format = format_from_name(j.at("format").get<std::string>());
    if (j.contains("delimiter")) {
      const auto delim = j["delimiter"].get<std::string>();
      if (delim.size() != 1) {
        throw Error(Errc::InvalidDescriptor, "delimiter must be one byte", "/delimiter");
      }
      d.delimiter = delim[0];
    }
    if (j.contains("field_map")) {
      std::size_t k = 0;
      for (const auto& entry : j["field_map"]) {
        const std::string at = "/field_map/" + std::to_string(k++);
        FieldRule rule;
        rule.field = entry.at("field").get<std::string>();
        auto cat = category_from_name(entry.at("category").get<std::string>());
        if (!cat) throw Error(Errc::InvalidDescriptor, "unknown category", at + "/category");
        rule.category = *cat;
        auto split = split_rule_from_name(entry.value("split", std::string("passthrough")));
        if (!split) throw Error(Errc::InvalidDescriptor, "unknown split rule", at + "/split");
        rule.split = *split;
        d.field_map.push_back(std::move(rule));
      }
    }
    validate_descriptor(d);
    return d;
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidDescriptor, std::string("bad provider descriptor: ") + e.what());
  }
}

json to_json(const FacilityRecord& r) {
  return json{{"facility_id", r.facility_id},   {"name", r.name},
              {"city", r.city},                 {"provider_id", r.provider_id},
              {"raw_fields", r.raw_fields},     {"cleaned_fields", r.cleaned_fields},
              {"provenance", r.provenance}};
}

FacilityRecord record_from_json(const json& j) {
  try {
    FacilityRecord r;
    r.facility_id = j.at("facility_id").get<std::string>();
    r.name = j.at("name").get<std::string>();
    r.city = j.at("city").get<std::string>();
    r.provider_id = j.at("provider_id").get<std::string>();
    r.raw_fields = j.value("raw_fields", std::map<std::string, std::string>{});
    r.cleaned_fields = j.value("cleaned_fields", std::map<std::string, std::string>{});
    r.provenance = j.value("provenance", std::map<std::string, std::string>{});
    validate_record(r);
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidRecord, std::string("bad facility record: ") + e.what());
  }
}

}  // namespace caleido
