#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "caleido/error.hpp"
#include "caleido/evaluation.hpp"
#include "caleido/numeric.hpp"

namespace caleido {

using nlohmann::json;

namespace {

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

MetricStat stat_of(const std::vector<double>& v) {
  MetricStat s;
  s.n = v.size();
  s.mean = mean_of(v);
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

std::optional<double> optional_mean(const std::vector<RunMetrics>& runs,
                                    std::optional<double> RunMetrics::*field) {
  std::vector<double> present;
  for (const auto& r : runs) {
    if (r.*field) present.push_back(*(r.*field));
  }
  if (present.empty()) return std::nullopt;
  return mean_of(present);
}

}  // namespace

ModelReport aggregate(std::span<const FacilityRuns> facilities, std::string model_id,
                      bool allow_unequal_repetitions) {
  if (facilities.empty()) throw Error(Errc::MissingCells, "no facilities to aggregate");
  ModelReport report;
  report.model_id = std::move(model_id);
  report.runs.assign(facilities.begin(), facilities.end());
  // A fixed facility order makes the floating-point sums order-independent.
  std::sort(report.runs.begin(), report.runs.end(),
            [](const FacilityRuns& a, const FacilityRuns& b) { return a.facility_id < b.facility_id; });
  for (std::size_t i = 0; i < report.runs.size(); ++i) {
    const auto& f = report.runs[i];
    if (f.repetitions.empty()) {
      throw Error(Errc::MissingCells, "facility '" + f.facility_id + "' has no repetitions");
    }
    if (i > 0 && f.facility_id == report.runs[i - 1].facility_id) {
      throw Error(Errc::MissingCells, "facility '" + f.facility_id + "' listed twice");
    }
    if (!allow_unequal_repetitions && f.repetitions.size() != report.runs[0].repetitions.size()) {
      throw Error(Errc::MissingCells,
                  "facility '" + f.facility_id + "' has " + std::to_string(f.repetitions.size()) +
                      " repetitions, expected " + std::to_string(report.runs[0].repetitions.size()));
    }
  }

  std::vector<double> completeness, precision, hallucination, length;
  for (const auto& f : report.runs) {
    FacilitySummary s;
    s.facility_id = f.facility_id;
    s.repetitions = f.repetitions.size();
    std::vector<double> c, l;
    for (const auto& r : f.repetitions) {
      c.push_back(r.completeness_pct);
      l.push_back(static_cast<double>(r.length_words));
    }
    s.completeness = mean_of(c);
    s.length = mean_of(l);
    s.precision = optional_mean(f.repetitions, &RunMetrics::precision_pct);
    s.hallucination = optional_mean(f.repetitions, &RunMetrics::hallucination_pct);
    completeness.push_back(s.completeness);
    length.push_back(s.length);
    if (s.precision) precision.push_back(*s.precision);
    if (s.hallucination) hallucination.push_back(*s.hallucination);
    report.facility_breakdown.push_back(std::move(s));
  }
  report.completeness = stat_of(completeness);
  report.length = stat_of(length);
  if (!precision.empty()) report.precision = stat_of(precision);
  if (!hallucination.empty()) report.hallucination = stat_of(hallucination);
  return report;
}

std::string render_report_table(std::span<const ModelReport> reports) {
  auto cell = [](const std::optional<MetricStat>& s, const char* unit) -> std::string {
    if (!s) return "n/a";
    return "(" + format_fixed(s->mean, 1) + unit + " - " + format_fixed(s->stddev, 1) + unit + ")";
  };
  using Row = std::array<std::string, 5>;
  std::vector<Row> rows{{"Model", "Completeness", "Precision", "Length", "Hallucinations"}};
  for (const auto& r : reports) {
    rows.push_back({r.model_id, cell(r.completeness, "%"), cell(r.precision, "%"),
                    cell(r.length, ""), cell(r.hallucination, "%")});
  }
  std::array<std::size_t, 5> width{};
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  auto line = [&](const Row& row) {
    std::string out;
    for (std::size_t c = 0; c < row.size(); ++c) {
      out += row[c];
      if (c + 1 < row.size()) out += std::string(width[c] - row[c].size() + 2, ' ');
    }
    return out + "\n";
  };
  std::string out = line(rows[0]);
  Row rule;
  for (std::size_t c = 0; c < rule.size(); ++c) rule[c] = std::string(width[c], '-');
  out += line(rule);
  for (std::size_t i = 1; i < rows.size(); ++i) out += line(rows[i]);
  return out;
}

namespace {

json stat_json(const std::optional<MetricStat>& s) {
  if (!s) return nullptr;
  return json{{"mean", s->mean}, {"stddev", s->stddev}, {"n", s->n}};
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json to_json(const ModelReport& r) {
  json breakdown = json::array();
  for (std::size_t i = 0; i < r.facility_breakdown.size(); ++i) {
    const auto& s = r.facility_breakdown[i];
    json reps = json::array();
    for (const auto& m : r.runs[i].repetitions) reps.push_back(to_json(m));
    breakdown.push_back({{"facility_id", s.facility_id},
                         {"repetitions", s.repetitions},
                         {"completeness", s.completeness},
                         {"precision", optional_json(s.precision)},
                         {"hallucination", optional_json(s.hallucination)},
                         {"length", s.length},
                         {"runs", std::move(reps)}});
  }
  return json{{"model_id", r.model_id},
              {"completeness", stat_json(r.completeness)},
              {"precision", stat_json(r.precision)},
              {"length", stat_json(r.length)},
              {"hallucination", stat_json(r.hallucination)},
              {"facility_breakdown", std::move(breakdown)}};
}

}  // namespace caleido
