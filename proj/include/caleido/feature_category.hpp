#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace caleido {

/// The six context categories, in their fixed serialization order.
enum class FeatureCategory {
  Recreation,
  Services,
  Dining,
  Rooms,
  AdditionalServices,
  NearbyPOIs,
};

inline constexpr std::array<FeatureCategory, 6> kAllCategories = {
    FeatureCategory::Recreation, FeatureCategory::Services,
    FeatureCategory::Dining,     FeatureCategory::Rooms,
    FeatureCategory::AdditionalServices, FeatureCategory::NearbyPOIs,
};

// Label used in the serialized context ("Additional Services").
std::string_view category_label(FeatureCategory c);
// Lower-case id fragment ("additional-services").
std::string_view category_slug(FeatureCategory c);
std::optional<FeatureCategory> category_from_label(std::string_view label);
// Accepts the label, the slug, or the enumerator name.
std::optional<FeatureCategory> category_from_name(std::string_view name);

enum class SplitRule { CommaSplit, SentenceSplit, Passthrough };

std::string_view split_rule_name(SplitRule r);
std::optional<SplitRule> split_rule_from_name(std::string_view name);

/// Maps one catalog field onto a feature category.
struct FieldRule {
  std::string field;
  FeatureCategory category;
  SplitRule split;

  bool operator==(const FieldRule&) const = default;
};

/// Ordered field-to-category table; extraction visits fields in this order.
using FieldMapping = std::vector<FieldRule>;

}  // namespace caleido
