#include <set>

#include "caleido/error.hpp"
#include "caleido/evaluation.hpp"
#include "caleido/numeric.hpp"
#include "caleido/utf8.hpp"

namespace caleido {

using nlohmann::json;

std::size_t word_count(std::string_view description) {
  std::size_t words = 0;
  bool in_word = false;
  std::size_t i = 0;
  while (i < description.size()) {
    std::size_t width = 1;
    if (utf8::is_space(description, i, &width)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++words;
    }
    i += width;
  }
  return words;
}

void validate_annotation(const AnnotationRecord& a, const ContextDocument& context,
                         std::string_view description) {
  if (a.run_id.empty()) throw Error(Errc::InvalidAnnotation, "run_id is empty", "/run_id");
  if (a.annotator.empty()) throw Error(Errc::InvalidAnnotation, "annotator is empty", "/annotator");
  const std::size_t length = utf8::length(description);
  std::set<std::string> known;
  for (const auto& f : context.features) known.insert(f.feature_id);
  std::set<std::string> linked;
  for (std::size_t i = 0; i < a.description_features.size(); ++i) {
    const auto& f = a.description_features[i];
    const std::string at = "/description_features/" + std::to_string(i);
    if (!(f.start < f.end && f.end <= length)) {
      throw Error(Errc::InvalidAnnotation,
                  "span [" + std::to_string(f.start) + ", " + std::to_string(f.end) +
                      ") outside description of length " + std::to_string(length),
                  at + "/span");
    }
    if (f.hallucinated()) continue;
    if (!known.count(f.link)) {
      throw Error(Errc::InvalidAnnotation, "unknown context feature '" + f.link + "'",
                  at + "/link");
    }
    if (!linked.insert(f.link).second) {
      throw Error(Errc::InvalidAnnotation, "context feature '" + f.link + "' linked twice",
                  at + "/link");
    }
  }
}

RunMetrics compute_metrics(const AnnotationRecord& annotation, const ContextDocument& context,
                           std::string_view description) {
  if (context.features.empty()) throw Error(Errc::EmptyContext, "context has no features");
  validate_annotation(annotation, context, description);

  RunMetrics m;
  m.length_words = word_count(description);
  m.counts.total_context_features = context.features.size();
  m.counts.total_features_added = annotation.description_features.size();
  for (const auto& f : annotation.description_features) {
    if (f.hallucinated()) {
      ++m.counts.hallucinated_features;
    } else {
      ++m.counts.correct_features_added;
    }
  }
  // validate_annotation guarantees one link per context feature.
  m.counts.context_features_added = m.counts.correct_features_added;

  m.completeness_pct = 100.0 * static_cast<double>(m.counts.context_features_added) /
                       static_cast<double>(m.counts.total_context_features);
  if (m.counts.total_features_added > 0) {
    const double total = static_cast<double>(m.counts.total_features_added);
    m.precision_pct = 100.0 * static_cast<double>(m.counts.correct_features_added) / total;
    m.hallucination_pct = 100.0 * static_cast<double>(m.counts.hallucinated_features) / total;
  }
  return m;
}

json to_json(const DescriptionFeature& f) {
  return json{{"span", json::array({f.start, f.end})}, {"link", f.link}};
}

json to_json(const AnnotationRecord& a) {
  json features = json::array();
  for (const auto& f : a.description_features) features.push_back(to_json(f));
  return json{{"run_id", a.run_id},
              {"annotator", a.annotator},
              {"description_features", std::move(features)},
              {"completed_at", a.completed_at},
              {"version", a.version}};
}

AnnotationRecord annotation_from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::InvalidAnnotation, "annotation must be an object", "");
  AnnotationRecord a;
  auto text = [&](const char* key, bool required) -> std::string {
    if (!j.contains(key)) {
      if (required) throw Error(Errc::InvalidAnnotation, std::string("missing ") + key, std::string("/") + key);
      return {};
    }
    if (!j[key].is_string()) {
      throw Error(Errc::InvalidAnnotation, std::string(key) + " must be a string", std::string("/") + key);
    }
    return j[key].get<std::string>();
  };
  a.run_id = text("run_id", true);
  a.annotator = text("annotator", true);
  a.completed_at = text("completed_at", false);
  if (j.contains("version")) {
    if (!j["version"].is_number_unsigned()) {
      throw Error(Errc::InvalidAnnotation, "version must be a non-negative integer", "/version");
    }
    a.version = j["version"].get<std::uint64_t>();
  }
  if (!j.contains("description_features") || !j["description_features"].is_array()) {
    throw Error(Errc::InvalidAnnotation, "description_features must be a list",
                "/description_features");
  }
  const auto& list = j["description_features"];
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto& f = list[i];
    const std::string at = "/description_features/" + std::to_string(i);
    if (!f.is_object()) throw Error(Errc::InvalidAnnotation, "feature must be an object", at);
    const auto span = f.value("span", json());
    if (!span.is_array() || span.size() != 2 || !span[0].is_number_unsigned() ||
        !span[1].is_number_unsigned()) {
      throw Error(Errc::InvalidAnnotation, "span must be [start, end] with non-negative integers",
                  at + "/span");
    }
    if (!f.contains("link") || !f["link"].is_string()) {
      throw Error(Errc::InvalidAnnotation, "link must be a string", at + "/link");
    }
    a.description_features.push_back(
        {span[0].get<std::size_t>(), span[1].get<std::size_t>(), f["link"].get<std::string>()});
  }
  return a;
}

json to_json(const RunMetrics& m) {
  auto pct = [](const std::optional<double>& v) {
    return v ? json(round_half_even(*v, 1)) : json(nullptr);
  };
  return json{{"completeness_pct", round_half_even(m.completeness_pct, 1)},
              {"precision_pct", pct(m.precision_pct)},
              {"hallucination_pct", pct(m.hallucination_pct)},
              {"length_words", m.length_words},
              {"empty_annotation", m.empty_annotation()},
              {"counts",
               {{"total_context_features", m.counts.total_context_features},
                {"context_features_added", m.counts.context_features_added},
                {"total_features_added", m.counts.total_features_added},
                {"correct_features_added", m.counts.correct_features_added},
                {"hallucinated_features", m.counts.hallucinated_features}}}};
}

}  // namespace caleido
