#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rtd/model.hpp"
#include "rtd/tensor.hpp"

namespace rtd {

// RTDW layout (all integers little-endian):
//   "RTDW" | u32 version | u64 manifest bytes | manifest JSON | f32 payload
// The manifest is a JSON array of {name, dtype, shape, offset}; offsets are
// byte offsets into the payload. One extra entry named "__config__" with
// dtype "json", shape [0] carries the model configuration under "config".

inline constexpr char kWeightMagic[4] = {'R', 'T', 'D', 'W'};
inline constexpr std::uint32_t kWeightFormatVersion = 1;
inline constexpr const char* kConfigEntryName = "__config__";

struct ManifestEntry {
  std::string name;
  std::string dtype;
  Shape shape;
  std::uint64_t offset = 0;
};

/// Named f32 tensors in manifest order plus the model configuration.
struct WeightContainer {
  ModelConfig config;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const;
  std::vector<ManifestEntry> manifest() const;
};

template <typename T>
WeightContainer to_container(const Parameters<T>& params);

/// Throws ModelError on a missing, duplicate, unexpected, or mis-shaped tensor.
template <typename T>
Parameters<T> from_container(const WeightContainer& container);

std::vector<std::uint8_t> serialize_weights(const WeightContainer& container);
WeightContainer deserialize_weights(std::span<const std::uint8_t> bytes);

void save_weights(const WeightContainer& container, const std::filesystem::path& path);
/// Reads and validates a container against its own configuration.
WeightContainer load_weights(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Parity vectors emitted by the checkpoint exporter.

/// One space-separated token-id sequence per line.
std::vector<std::vector<int>> load_parity_inputs(const std::filesystem::path& path);

/// CSV with header `seq_index,position,p_replaced`; returns one vector per
/// sequence index.
std::vector<std::vector<double>> load_parity_reference(const std::filesystem::path& path);

/// Max |engine - reference| over every token of every sequence. Segment ids
/// are all zero, matching the exporter.
template <typename T>
double parity_max_abs_diff(const Parameters<T>& params, const std::vector<std::vector<int>>& inputs,
                           const std::vector<std::vector<double>>& reference);

}  // namespace rtd
