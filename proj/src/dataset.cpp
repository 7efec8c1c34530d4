#include "caleido/dataset.hpp"

#include <fstream>
#include <random>
#include <set>

#include "caleido/error.hpp"
#include "caleido/store.hpp"

namespace caleido {

using nlohmann::json;

std::string_view split_name(Split s) { return s == Split::Train ? "train" : "test"; }

std::optional<Split> split_from_name(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "test") return Split::Test;
  return std::nullopt;
}

std::string render_request(std::string_view name, std::string_view city,
                           std::string_view request_template) {
  std::string out;
  std::size_t i = 0;
  while (i < request_template.size()) {
    if (request_template.substr(i, 6) == "{name}") {
      out += name;
      i += 6;
    } else if (request_template.substr(i, 6) == "{city}") {
      out += city;
      i += 6;
    } else {
      out += request_template[i++];
    }
  }
  return out;
}

DatasetExample build_example(const FacilityRecord& record, const ContextDocument& context,
                             const std::optional<std::string>& reference, Split split,
                             std::string_view request_template) {
  if (context.facility_id != record.facility_id) {
    throw Error(Errc::InvalidRecord, "context belongs to '" + context.facility_id +
                                         "', record is '" + record.facility_id + "'");
  }
  const bool has_reference = reference && !reference->empty();
  if (split == Split::Train && !has_reference) {
    throw Error(Errc::MissingReference,
                "train example for '" + record.facility_id + "' needs a reference description");
  }
  DatasetExample e;
  e.input = render_request(record.name, record.city, request_template);
  e.context = context.serialized;
  e.output = has_reference ? *reference : std::string();
  e.facility_id = record.facility_id;
  e.split = split;
  return e;
}

namespace {

// Uniform integer in [0, bound) by rejection, so results do not depend on the
// standard library's distribution implementation.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

}  // namespace

SplitResult split_dataset(std::span<const DatasetExample> examples, std::size_t train_count,
                          std::uint64_t seed) {
  if (train_count + 1 > examples.size()) {
    throw Error(Errc::InsufficientExamples,
                "need more than " + std::to_string(train_count) + " examples to keep a test split, have " +
                    std::to_string(examples.size()));
  }
  std::set<std::string> ids;
  for (const auto& e : examples) {
    if (!ids.insert(e.facility_id).second) {
      throw Error(Errc::DuplicateFacility, "facility '" + e.facility_id + "' appears twice");
    }
  }
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[uniform_below(rng, i)]);
  }
  SplitResult out;
  for (std::size_t k = 0; k < order.size(); ++k) {
    DatasetExample e = examples[order[k]];
    if (k < train_count) {
      if (e.output.empty()) {
        throw Error(Errc::MissingReference,
                    "facility '" + e.facility_id + "' drawn for training has no reference");
      }
      e.split = Split::Train;
      out.train.push_back(std::move(e));
    } else {
      e.split = Split::Test;
      out.test.push_back(std::move(e));
    }
  }
  return out;
}

std::size_t export_dataset(std::span<const DatasetExample> examples,
                           const std::filesystem::path& path) {
  std::string body;
  for (const auto& e : examples) {
    const json line{{"input", e.input}, {"context", e.context}, {"output", e.output}};
    body += line.dump();
    body += '\n';
  }
  write_file_atomic(path, body);
  return examples.size();
}

std::vector<DatasetExample> import_dataset(const std::filesystem::path& path, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  std::vector<DatasetExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (j.size() != 3) throw Error(Errc::IoFailure, "unexpected keys");
      DatasetExample e;
      e.input = j.at("input").get<std::string>();
      e.context = j.at("context").get<std::string>();
      e.output = j.at("output").get<std::string>();
      e.split = split;
      out.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw Error(Errc::IoFailure,
                  path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

json to_json(const DatasetExample& e) {
  return json{{"input", e.input},
              {"context", e.context},
              {"output", e.output},
              {"facility_id", e.facility_id},
              {"split", std::string(split_name(e.split))}};
}

DatasetExample example_from_json(const json& j) {
  try {
    DatasetExample e;
    e.input = j.at("input").get<std::string>();
    e.context = j.at("context").get<std::string>();
    e.output = j.value("output", std::string());
    e.facility_id = j.at("facility_id").get<std::string>();
    auto split = split_from_name(j.at("split").get<std::string>());
    if (!split) throw Error(Errc::InvalidRecord, "unknown split", "/split");
    e.split = *split;
    if (e.split == Split::Train && e.output.empty()) {
      throw Error(Errc::MissingReference, "train example without output", "/output");
    }
    return e;
  } catch (const json::exception& ex) {
    throw Error(Errc::InvalidRecord, std::string("bad dataset example: ") + ex.what());
  }
}

}  // namespace caleido
