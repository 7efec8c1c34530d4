#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "caleido/numeric.hpp"
#include "json.hpp"

namespace caleido {

inline constexpr double kDefaultRuntimeBufferGb = 1.5;
inline constexpr double kDefaultHeadroom = 0.15;

/// Weights only: parameter_count * bits / 8 bytes, in decimal gigabytes.
double weight_memory_gb(double parameter_count, int quantization_bits);

/// Weights plus an additive runtime buffer.
double estimate_model_memory(double parameter_count, int quantization_bits,
                             double runtime_buffer_gb = kDefaultRuntimeBufferGb);

/// Decoder-only transformer shape, optionally with a sparse mixture of
/// experts in place of the dense feed-forward block.
struct TransformerArchitecture {
  std::size_t hidden = 4096;
  std::size_t layers = 32;
  std::size_t heads = 32;
  std::size_t kv_heads = 8;
  std::size_t head_dim = 128;
  std::size_t ffn_hidden = 14336;
  std::size_t vocab = 32000;
  std::size_t experts = 1;  // 1 = dense
  bool tied_embeddings = false;
};

TransformerArchitecture mistral_7b_architecture();
TransformerArchitecture mixtral_8x7b_architecture();

/// Parameters of one decoder block (attention, feed-forward or experts plus
/// router, two RMSNorm weight vectors).
double block_parameters(const TransformerArchitecture& a);
double count_parameters(const TransformerArchitecture& a);

struct ModelProfile {
  std::string model_id;
  double parameter_count = 0;
  int quantization_bits = 16;
  std::vector<double> layer_sizes;  // GB per loadable unit, may be empty

  bool operator==(const ModelProfile&) const = default;
};

/// Layer sizes are [embeddings, block 1..L, final norm + output head].
ModelProfile profile_from_architecture(std::string model_id, const TransformerArchitecture& a,
                                       int quantization_bits);

/// Throws InvalidProfile.
void validate_profile(const ModelProfile& p);

struct DeviceProfile {
  std::string device_id;
  double capacity = 0;  // GB
  double headroom_fraction = kDefaultHeadroom;

  double budget() const { return capacity * (1.0 - headroom_fraction); }
  bool operator==(const DeviceProfile&) const = default;
};

void validate_device(const DeviceProfile& d);

struct DeviceMapPlan {
  std::map<std::size_t, std::string> assignments;  // layer index -> device id
  std::map<std::string, double> per_device_load;   // every device, loaded or not
};

/// First-fit decreasing over the headroom-reduced budgets, ties to the lower
/// device index. When first-fit decreasing leaves a layer unplaced, an exact
/// depth-first search decides feasibility before giving up. Throws Infeasible
/// naming the smallest layer that could not be placed and the total
/// shortfall.
DeviceMapPlan plan_device_map(std::span<const double> layer_sizes,
                              std::span<const DeviceProfile> devices);

/// True when every layer is assigned once and no budget is exceeded.
bool plan_respects_budgets(const DeviceMapPlan& plan, std::span<const double> layer_sizes,
                           std::span<const DeviceProfile> devices);

struct CostEstimate {
  double hourly_rate = 0;
  double hours = 0;
  double total = 0;
};

/// total = hourly_rate * hours, rounded half-even to 4 decimals.
CostEstimate estimate_cost(double hourly_rate, double hours);

nlohmann::json to_json(const ModelProfile& p);
ModelProfile profile_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DeviceProfile& d);
DeviceProfile device_from_json(const nlohmann::json& j);
std::vector<DeviceProfile> devices_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DeviceMapPlan& plan, std::span<const DeviceProfile> devices);

}  // namespace caleido
