#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "caleido/context.hpp"
#include "json.hpp"

namespace caleido {

inline constexpr std::string_view kHallucinated = "Hallucinated";
inline constexpr std::string_view kAutoAnnotator = "auto";
inline constexpr double kDefaultMatchThreshold = 0.6;

/// Span offsets count Unicode code points of the description, end exclusive.
struct DescriptionFeature {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string link;  // context feature_id, or kHallucinated

  bool hallucinated() const { return link == kHallucinated; }
  bool operator==(const DescriptionFeature&) const = default;
};

struct AnnotationRecord {
  std::string run_id;
  std::string annotator;
  std::vector<DescriptionFeature> description_features;
  std::string completed_at;
  /// Stored revision. A submit carries the revision it was based on
  /// (0 for a new record); the store bumps it on every accepted write.
  std::uint64_t version = 0;

  bool operator==(const AnnotationRecord&) const = default;
};

/// Span bounds, known links, one link per context feature. Throws
/// InvalidAnnotation with a pointer to the offending field.
void validate_annotation(const AnnotationRecord& a, const ContextDocument& context,
                         std::string_view description);

struct MetricCounts {
  std::size_t total_context_features = 0;
  std::size_t context_features_added = 0;
  std::size_t total_features_added = 0;
  std::size_t correct_features_added = 0;
  std::size_t hallucinated_features = 0;

  bool operator==(const MetricCounts&) const = default;
};

/// Unrounded percentages. Precision and hallucination are absent when the
/// annotation has no description features.
struct RunMetrics {
  double completeness_pct = 0;
  std::optional<double> precision_pct;
  std::optional<double> hallucination_pct;
  std::size_t length_words = 0;
  MetricCounts counts;

  bool empty_annotation() const { return counts.total_features_added == 0; }
  bool operator==(const RunMetrics&) const = default;
};

/// Maximal runs of non-whitespace.
std::size_t word_count(std::string_view description);

RunMetrics compute_metrics(const AnnotationRecord& annotation, const ContextDocument& context,
                           std::string_view description);

/// Token-overlap matcher standing in for a human annotator.
AnnotationRecord auto_match(const ContextDocument& context, std::string_view description,
                            double threshold = kDefaultMatchThreshold);

struct MetricStat {
  double mean = 0;
  double stddev = 0;  // sample (n - 1); 0 for a single facility
  std::size_t n = 0;
};

struct FacilityRuns {
  std::string facility_id;
  std::vector<RunMetrics> repetitions;
};

struct FacilitySummary {
  std::string facility_id;
  std::size_t repetitions = 0;
  double completeness = 0;
  std::optional<double> precision;
  std::optional<double> hallucination;
  double length = 0;
};

struct ModelReport {
  std::string model_id;
  MetricStat completeness;
  std::optional<MetricStat> precision;
  std::optional<MetricStat> hallucination;
  MetricStat length;
  std::vector<FacilitySummary> facility_breakdown;  // sorted by facility_id
  std::vector<FacilityRuns> runs;                   // same order as breakdown
};

/// Mean over repetitions per facility, then mean and sample standard
/// deviation across facilities. Throws MissingCells on empty input or, unless
/// allowed, unequal repetition counts.
ModelReport aggregate(std::span<const FacilityRuns> facilities, std::string model_id,
                      bool allow_unequal_repetitions = false);

/// Plain-text table: Model | Completeness | Precision | Length | Hallucinations,
/// each cell "(mean% - sd%)" rounded half-even to one decimal.
std::string render_report_table(std::span<const ModelReport> reports);

nlohmann::json to_json(const DescriptionFeature& f);
nlohmann::json to_json(const AnnotationRecord& a);
AnnotationRecord annotation_from_json(const nlohmann::json& j);
/// Reported form: percentages rounded to one decimal, absent ones null.
nlohmann::json to_json(const RunMetrics& m);
nlohmann::json to_json(const ModelReport& r);

}  // namespace caleido
