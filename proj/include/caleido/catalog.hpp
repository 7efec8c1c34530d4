#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "caleido/feature_category.hpp"
#include "json.hpp"

namespace caleido {

enum class CatalogFormat { StructuredJson, DelimitedTable, HtmlFragments };

std::string_view format_name(CatalogFormat f);

struct ProviderDescriptor {
  std::string provider_id;
  int priority = 1;  // 1 = primary provider
  CatalogFormat format = CatalogFormat::StructuredJson;
  // Column separator for delimited-table catalogs.
  char delimiter = '\t';
  FieldMapping field_map;

  bool operator==(const ProviderDescriptor&) const = default;
};

/// Checks one descriptor in isolation. Throws InvalidDescriptor.
void validate_descriptor(const ProviderDescriptor& d);
/// Checks a provider set: unique ids, exactly one priority-1 provider.
void validate_descriptor_set(std::span<const ProviderDescriptor> ds);

struct FacilityRecord {
  std::string facility_id;
  std::string name;
  std::string city;
  std::string provider_id;
  std::map<std::string, std::string> raw_fields;
  std::map<std::string, std::string> cleaned_fields;
  // field -> provider that supplied it; filled by parse_catalog and merge.
  std::map<std::string, std::string> provenance;

  bool operator==(const FacilityRecord&) const = default;
};

/// Throws InvalidRecord when the record breaks its invariants.
void validate_record(const FacilityRecord& r);

/// Parses a provider payload into records with raw fields only.
/// Throws MalformedCatalog (with byte offset) or EmptyCatalog.
std::vector<FacilityRecord> parse_catalog(std::string_view payload,
                                          const ProviderDescriptor& descriptor);

/// Strips markup, decodes entities, collapses whitespace and canonicalizes
/// units. Total, deterministic and idempotent.
std::string clean_text(std::string_view raw);

/// Fills cleaned_fields from raw_fields with clean_text.
FacilityRecord clean_record(FacilityRecord record);

/// Casefold + punctuation strip, used for cross-provider identity.
std::string normalize_identity(std::string_view text);

struct FacilityKey {
  std::string name;
  std::string city;
  auto operator<=>(const FacilityKey&) const = default;
};

FacilityKey facility_key(const FacilityRecord& r);

/// Combines one facility's records from several providers, taking each field
/// from the highest-priority provider with a non-empty value.
/// Throws ConflictingIdentity or InvalidDescriptor.
FacilityRecord merge_providers(std::span<const FacilityRecord> records,
                               std::span<const ProviderDescriptor> descriptors);

/// Groups records by facility key and merges each group, ordered by key.
std::vector<FacilityRecord> merge_all(std::span<const FacilityRecord> records,
                                      std::span<const ProviderDescriptor> descriptors);

/// Union of the descriptors' field maps in priority order. Conflicting rules
/// for the same field name throw InvalidDescriptor.
FieldMapping combined_mapping(std::span<const ProviderDescriptor> descriptors);

nlohmann::json to_json(const ProviderDescriptor& d);
ProviderDescriptor descriptor_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FacilityRecord& r);
FacilityRecord record_from_json(const nlohmann::json& j);

}  // namespace caleido
