#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "caleido/catalog.hpp"
#include "caleido/feature_category.hpp"
#include "json.hpp"

namespace caleido {

inline constexpr std::size_t kMaxFeatureLength = 200;

struct Feature {
  std::string feature_id;  // "<category-slug>-<n>", n counted per category from 1
  FeatureCategory category;
  std::string text;

  bool operator==(const Feature&) const = default;
};

/// Throws InvalidFeature: empty, too long, contains ';', or not trimmed.
void validate_feature(const Feature& f);

struct ContextDocument {
  std::string facility_id;
  std::vector<Feature> features;
  std::string serialized;

  bool operator==(const ContextDocument&) const = default;
};

/// Category-grouped features from the record's cleaned fields, visiting the
/// mapping table in order. Throws NoFeatures.
std::vector<Feature> extract_features(const FacilityRecord& record, const FieldMapping& mapping);

/// Splits one cleaned field value into atomic phrases under `rule`.
std::vector<std::string> split_phrases(std::string_view cleaned, SplitRule rule);

/// "Recreation: a, b; Dining: c". Commas and backslashes inside items are
/// escaped with a backslash. Throws UngroupedFeatures / InvalidFeature.
std::string render_context(std::span<const Feature> features);

/// Inverse of render_context. Feature ids are reassigned sequentially per
/// category. Throws ContextSyntax with the byte position.
std::vector<Feature> parse_context(std::string_view serialized);

/// extract + render in one step.
ContextDocument build_context(const FacilityRecord& record, const FieldMapping& mapping);

/// Checks grouping, unique ids and that `serialized` matches the features.
void validate_context(const ContextDocument& doc);

nlohmann::json to_json(const ContextDocument& doc);
ContextDocument context_from_json(const nlohmann::json& j);

}  // namespace caleido
