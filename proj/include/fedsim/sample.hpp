#pragma once

#include <cstdint>
#include <vector>

namespace fedsim {

// One image with its label map, both row-major H x W.
struct Sample {
  std::vector<double> image;
  std::vector<std::uint8_t> labels;

  bool operator==(const Sample&) const = default;
};

// Sorted class ids a client supervises; always contains background (0).
using LabelSpace = std::vector<int>;

}  // namespace fedsim
