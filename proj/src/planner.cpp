#include "caleido/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>

#include "caleido/error.hpp"

namespace caleido {

using nlohmann::json;

namespace {

constexpr double kBytesPerGb = 1e9;
constexpr double kLoadEpsilon = 1e-9;
constexpr std::size_t kSearchNodeLimit = 5'000'000;

std::string gb(double v) {
  std::ostringstream ss;
  ss.precision(4);
  ss << std::fixed << v << " GB";
  return ss.str();
}

}  // namespace

double weight_memory_gb(double parameter_count, int quantization_bits) {
  return parameter_count * quantization_bits / 8.0 / kBytesPerGb;
}

double estimate_model_memory(double parameter_count, int quantization_bits,
                             double runtime_buffer_gb) {
  return weight_memory_gb(parameter_count, quantization_bits) + runtime_buffer_gb;
}

TransformerArchitecture mistral_7b_architecture() { return {}; }

TransformerArchitecture mixtral_8x7b_architecture() {
  TransformerArchitecture a;
  a.experts = 8;
  return a;
}

double block_parameters(const TransformerArchitecture& a) {
  const double h = static_cast<double>(a.hidden);
  const double q = static_cast<double>(a.heads * a.head_dim);
  const double kv = static_cast<double>(a.kv_heads * a.head_dim);
  const double attention = h * q + 2 * h * kv + q * h;
  const double ffn = 3.0 * h * static_cast<double>(a.ffn_hidden);  // gate, up, down
  const double router = a.experts > 1 ? h * static_cast<double>(a.experts) : 0.0;
  const double norms = 2 * h;
  return attention + ffn * static_cast<double>(a.experts) + router + norms;
}

double count_parameters(const TransformerArchitecture& a) {
  const double embed = static_cast<double>(a.vocab * a.hidden);
  const double head = a.tied_embeddings ? 0.0 : embed;
  return embed + static_cast<double>(a.layers) * block_parameters(a) +
         static_cast<double>(a.hidden) + head;
}

ModelProfile profile_from_architecture(std::string model_id, const TransformerArchitecture& a,
                                       int quantization_bits) {
  ModelProfile p;
  p.model_id = std::move(model_id);
  p.parameter_count = count_parameters(a);
  p.quantization_bits = quantization_bits;
  const double embed = static_cast<double>(a.vocab * a.hidden);
  p.layer_sizes.push_back(weight_memory_gb(embed, quantization_bits));
  for (std::size_t i = 0; i < a.layers; ++i) {
    p.layer_sizes.push_back(weight_memory_gb(block_parameters(a), quantization_bits));
  }
  const double tail = static_cast<double>(a.hidden) + (a.tied_embeddings ? 0.0 : embed);
  p.layer_sizes.push_back(weight_memory_gb(tail, quantization_bits));
  return p;
}

void validate_profile(const ModelProfile& p) {
  if (p.model_id.empty()) throw Error(Errc::InvalidProfile, "model_id is empty", "/model_id");
  if (!(p.parameter_count > 0)) {
    throw Error(Errc::InvalidProfile, "parameter_count must be positive", "/parameter_count");
  }
  const int b = p.quantization_bits;
  if (b != 4 && b != 8 && b != 16 && b != 32) {
    throw Error(Errc::InvalidProfile, "quantization_bits must be 4, 8, 16 or 32",
                "/quantization_bits");
  }
  if (p.layer_sizes.empty()) return;
  for (double s : p.layer_sizes) {
    if (!(s > 0)) throw Error(Errc::InvalidProfile, "layer sizes must be positive", "/layer_sizes");
  }
  const double sum = std::accumulate(p.layer_sizes.begin(), p.layer_sizes.end(), 0.0);
  const double weights = weight_memory_gb(p.parameter_count, p.quantization_bits);
  if (std::abs(sum - weights) > 0.10 * weights) {
    throw Error(Errc::InvalidProfile,
                "layer sizes sum to " + gb(sum) + ", more than 10% away from the weight estimate " +
                    gb(weights),
                "/layer_sizes");
  }
}

void validate_device(const DeviceProfile& d) {
  if (d.device_id.empty()) throw Error(Errc::InvalidProfile, "device_id is empty", "/device_id");
  if (!(d.capacity > 0)) {
    throw Error(Errc::InvalidProfile, "device '" + d.device_id + "' needs capacity > 0",
                "/capacity");
  }
  if (!(d.headroom_fraction >= 0 && d.headroom_fraction < 1)) {
    throw Error(Errc::InvalidProfile,
                "device '" + d.device_id + "' headroom_fraction must be in [0, 1)",
                "/headroom_fraction");
  }
}

namespace {

// Exact feasibility by depth-first search over layers in decreasing size.
// Devices with the same remaining budget are interchangeable, so only the
// first of them is tried.
class ExactPacker {
 public:
  ExactPacker(std::span<const double> sizes, std::vector<std::size_t> order,
              std::vector<double> remaining)
      : sizes_(sizes), order_(std::move(order)), remaining_(std::move(remaining)),
        assignment_(sizes.size(), 0) {
    suffix_.assign(order_.size() + 1, 0.0);
    for (std::size_t k = order_.size(); k-- > 0;) suffix_[k] = suffix_[k + 1] + sizes_[order_[k]];
  }

  // nullopt when the node limit was hit before a decision.
  std::optional<bool> solve() {
    const bool found = search(0);
    if (!found && exhausted_) return std::nullopt;
    return found;
  }

  const std::vector<std::size_t>& assignment() const { return assignment_; }

 private:
  bool search(std::size_t k) {
    if (k == order_.size()) return true;
    if (++nodes_ > kSearchNodeLimit) {
      exhausted_ = true;
      return false;
    }
    double free_total = 0;
    for (double r : remaining_) free_total += std::max(0.0, r);
    if (suffix_[k] > free_total + kLoadEpsilon) return false;
    const std::size_t layer = order_[k];
    const double size = sizes_[layer];
    std::vector<double> tried;
    for (std::size_t d = 0; d < remaining_.size(); ++d) {
      if (size > remaining_[d] + kLoadEpsilon) continue;
      if (std::find(tried.begin(), tried.end(), remaining_[d]) != tried.end()) continue;
      tried.push_back(remaining_[d]);
      remaining_[d] -= size;
      assignment_[layer] = d;
      if (search(k + 1)) return true;
      remaining_[d] += size;
      if (exhausted_) return false;
    }
    return false;
  }

  std::span<const double> sizes_;
  std::vector<std::size_t> order_;
  std::vector<double> remaining_;
  std::vector<std::size_t> assignment_;
  std::vector<double> suffix_;
  std::size_t nodes_ = 0;
  bool exhausted_ = false;
};

DeviceMapPlan make_plan(std::span<const DeviceProfile> devices, std::span<const double> sizes,
                        const std::vector<std::size_t>& device_of) {
  DeviceMapPlan plan;
  for (const auto& d : devices) plan.per_device_load[d.device_id] = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const auto& id = devices[device_of[i]].device_id;
    plan.assignments[i] = id;
    plan.per_device_load[id] += sizes[i];
  }
  return plan;
}

}  // namespace

DeviceMapPlan plan_device_map(std::span<const double> layer_sizes,
                              std::span<const DeviceProfile> devices) {
  if (layer_sizes.empty()) throw Error(Errc::InvalidProfile, "no layers to place");
  for (double s : layer_sizes) {
    if (!(s > 0) || !std::isfinite(s)) throw Error(Errc::InvalidProfile, "layer sizes must be positive");
  }
  if (devices.empty()) throw Error(Errc::Infeasible, "no devices available");
  {
    std::vector<std::string> ids;
    for (const auto& d : devices) {
      validate_device(d);
      ids.push_back(d.device_id);
    }
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
      throw Error(Errc::InvalidProfile, "duplicate device_id");
    }
  }

  std::vector<std::size_t> order(layer_sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return layer_sizes[a] > layer_sizes[b]; });

  std::vector<double> budget;
  for (const auto& d : devices) budget.push_back(d.budget());

  std::vector<double> remaining = budget;
  std::vector<std::size_t> device_of(layer_sizes.size(), 0);
  std::vector<std::size_t> unplaced;
  for (std::size_t layer : order) {
    bool placed = false;
    for (std::size_t d = 0; d < remaining.size(); ++d) {
      if (layer_sizes[layer] <= remaining[d] + kLoadEpsilon) {
        remaining[d] -= layer_sizes[layer];
        device_of[layer] = d;
        placed = true;
        break;
      }
    }
    if (!placed) unplaced.push_back(layer);
  }
  if (unplaced.empty()) return make_plan(devices, layer_sizes, device_of);

  ExactPacker exact(layer_sizes, order, budget);
  const auto solved = exact.solve();
  if (solved && *solved) return make_plan(devices, layer_sizes, exact.assignment());

  const std::size_t smallest = *std::min_element(
      unplaced.begin(), unplaced.end(),
      [&](std::size_t a, std::size_t b) { return layer_sizes[a] < layer_sizes[b]; });
  double shortfall = 0;
  for (std::size_t layer : unplaced) shortfall += layer_sizes[layer];
  std::string message = "no assignment fits: smallest violating layer " +
                        std::to_string(smallest) + " (" + gb(layer_sizes[smallest]) +
                        "), total shortfall " + gb(shortfall);
  if (!solved) message += " (exact search limit reached)";
  throw Error(Errc::Infeasible, message);
}

bool plan_respects_budgets(const DeviceMapPlan& plan, std::span<const double> layer_sizes,
                           std::span<const DeviceProfile> devices) {
  if (plan.assignments.size() != layer_sizes.size()) return false;
  std::map<std::string, double> load;
  for (const auto& [layer, device] : plan.assignments) {
    if (layer >= layer_sizes.size()) return false;
    load[device] += layer_sizes[layer];
  }
  for (const auto& [device, total] : load) {
    auto it = std::find_if(devices.begin(), devices.end(),
                           [&](const DeviceProfile& d) { return d.device_id == device; });
    if (it == devices.end() || total > it->budget() + kLoadEpsilon) return false;
  }
  return true;
}

CostEstimate estimate_cost(double hourly_rate, double hours) {
  if (hourly_rate < 0 || hours < 0) {
    throw Error(Errc::InvalidConfig, "hourly rate and hours must be non-negative");
  }
  return {hourly_rate, hours, round_half_even(hourly_rate * hours, 4)};
}

json to_json(const ModelProfile& p) {
  return json{{"model_id", p.model_id},
              {"parameter_count", p.parameter_count},
              {"quantization_bits", p.quantization_bits},
              {"layer_sizes", p.layer_sizes}};
}

ModelProfile profile_from_json(const json& j) {
  try {
    ModelProfile p;
    const int bits = j.at("quantization_bits").get<int>();
    if (j.contains("architecture")) {
      const auto& a = j["architecture"];
      TransformerArchitecture arch;
      if (a.is_string()) {
        const auto name = a.get<std::string>();
        if (name == "mistral-7b") arch = mistral_7b_architecture();
        else if (name == "mixtral-8x7b") arch = mixtral_8x7b_architecture();
        else throw Error(Errc::InvalidProfile, "unknown architecture preset '" + name + "'");
      } else {
        arch.hidden = a.value("hidden", arch.hidden);
        arch.layers = a.value("layers", arch.layers);
        arch.heads = a.value("heads", arch.heads);
        arch.kv_heads = a.value("kv_heads", arch.kv_heads);
        arch.head_dim = a.value("head_dim", arch.head_dim);
        arch.ffn_hidden = a.value("ffn_hidden", arch.ffn_hidden);
        arch.vocab = a.value("vocab", arch.vocab);
        arch.experts = a.value("experts", arch.experts);
        arch.tied_embeddings = a.value("tied_embeddings", arch.tied_embeddings);
      }
      p = profile_from_architecture(j.at("model_id").get<std::string>(), arch, bits);
    } else {
      p.model_id = j.at("model_id").get<std::string>();
      p.parameter_count = j.at("parameter_count").get<double>();
      p.quantization_bits = bits;
      p.layer_sizes = j.value("layer_sizes", std::vector<double>{});
    }
    validate_profile(p);
    return p;
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidProfile, std::string("bad model profile: ") + e.what());
  }
}

json to_json(const DeviceProfile& d) {
  return json{{"device_id", d.device_id},
              {"capacity_gb", d.capacity},
              {"headroom_fraction", d.headroom_fraction}};
}

DeviceProfile device_from_json(const json& j) {
  try {
    DeviceProfile d;
    d.device_id = j.at("device_id").get<std::string>();
    d.capacity = j.at("capacity_gb").get<double>();
    d.headroom_fraction = j.value("headroom_fraction", kDefaultHeadroom);
    validate_device(d);
    return d;
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidProfile, std::string("bad device profile: ") + e.what());
  }
}

std::vector<DeviceProfile> devices_from_json(const json& j) {
  const json& list = j.is_object() && j.contains("devices") ? j["devices"] : j;
  if (!list.is_array()) throw Error(Errc::InvalidProfile, "expected a device list");
  std::vector<DeviceProfile> out;
  for (const auto& d : list) out.push_back(device_from_json(d));
  return out;
}

json to_json(const DeviceMapPlan& plan, std::span<const DeviceProfile> devices) {
  json assignments = json::array();
  for (const auto& [layer, device] : plan.assignments) {
    assignments.push_back({{"layer", layer}, {"device", device}});
  }
  json devs = json::array();
  for (const auto& d : devices) {
    const auto it = plan.per_device_load.find(d.device_id);
    devs.push_back({{"device_id", d.device_id},
                    {"load_gb", it == plan.per_device_load.end() ? 0.0 : it->second},
                    {"budget_gb", d.budget()},
                    {"capacity_gb", d.capacity}});
  }
  return json{{"assignments", std::move(assignments)}, {"devices", std::move(devs)}};
}

}  // namespace caleido
