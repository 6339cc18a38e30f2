#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedsim/sample.hpp"

namespace fedsim {

struct RadiusRange {
  double min = 0.0;
  double max = 0.0;

  bool operator==(const RadiusRange&) const = default;
};

struct ClientDatasetSpec {
  std::uint32_t client_id = 0;
  int n_total = 0;
  int image_size = 32;
  bool has_tumor_labels = false;
  double intensity_shift = 0.0;
  double noise_sigma = 0.3;
  RadiusRange organ_radius{5.0, 9.0};
  RadiusRange tumor_radius{2.0, 4.0};
  std::uint64_t seed = 0;

  bool operator==(const ClientDatasetSpec&) const = default;
};

inline constexpr double kTumorProbability = 0.7;
inline constexpr double kOrganIntensity = 0.5;
inline constexpr double kTumorIntensity = 0.8;

struct ClientDataset {
  std::uint32_t client_id = 0;
  int height = 0;
  int width = 0;
  LabelSpace label_space;
  std::vector<Sample> train, val, test;

  std::size_t total() const noexcept { return train.size() + val.size() + test.size(); }

  bool operator==(const ClientDataset&) const = default;
};

struct SplitCounts {
  int train = 0, val = 0, test = 0;
};

// floor(0.6 n) / floor(0.2 n) / remainder.
SplitCounts split_counts(int n_total);

ClientDataset generate(const ClientDatasetSpec& spec);

// Three clients shaped after the pancreas benchmark: an organ-only client, a
// large organ+tumor client, and a small organ-only client with the strongest
// intensity shift. Train sizes come out as 48 / 165 / 18. Radii scale with
// image_size (defaults are for 32 pixels); sizes below 16 are rejected.
std::vector<ClientDatasetSpec> default_benchmark(std::uint64_t seed, int image_size = 32);

// Flat binary export, big-endian:
//   "FSDS" | u32 version (1) | u32 client count
//   per client: u32 id | u32 H | u32 W | u32 n_train | u32 n_val | u32 n_test |
//               u8 label-space size | u8 class ids...
//               then every sample (train, val, test order): H*W f64 intensities,
//               followed by H*W u8 labels.
void write_datasets(const std::filesystem::path& path, std::span<const ClientDataset> datasets);
std::vector<ClientDataset> read_datasets(const std::filesystem::path& path);

}  // namespace fedsim
