#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "caleido/catalog.hpp"
#include "caleido/context.hpp"
#include "json.hpp"

namespace caleido {

enum class Split { Train, Test };

std::string_view split_name(Split s);
std::optional<Split> split_from_name(std::string_view name);

/// Request sentence used as the dataset "input"; {name} and {city} are
/// substituted verbatim.
inline constexpr std::string_view kRequestTemplate =
    "Write me a hotel brochure for the hotel {name} in {city}.";

struct DatasetExample {
  std::string input;
  std::string context;
  std::string output;
  std::string facility_id;
  Split split = Split::Test;

  bool operator==(const DatasetExample&) const = default;
};

std::string render_request(std::string_view name, std::string_view city,
                           std::string_view request_template = kRequestTemplate);

/// Throws MissingReference for a train example without a reference.
DatasetExample build_example(const FacilityRecord& record, const ContextDocument& context,
                             const std::optional<std::string>& reference, Split split,
                             std::string_view request_template = kRequestTemplate);

struct SplitResult {
  std::vector<DatasetExample> train;
  std::vector<DatasetExample> test;
};

/// Seeded shuffle, then the first `train_count` facilities go to train and the
/// rest (at least one) to test. Throws InsufficientExamples,
/// DuplicateFacility, MissingReference.
SplitResult split_dataset(std::span<const DatasetExample> examples, std::size_t train_count,
                          std::uint64_t seed);

/// Writes one {"input","context","output"} object per line. Returns the
/// line count. Throws IoFailure.
std::size_t export_dataset(std::span<const DatasetExample> examples,
                           const std::filesystem::path& path);

/// Reads an export file back. The file carries no facility ids, so the
/// returned examples have an empty facility_id and the given split.
std::vector<DatasetExample> import_dataset(const std::filesystem::path& path, Split split);

nlohmann::json to_json(const DatasetExample& e);
DatasetExample example_from_json(const nlohmann::json& j);

}  // namespace caleido
