#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace sft {

struct GradCheckResult {
  std::string name;
  std::size_t point = 0;
  double max_rel_error = 0.0;
};

// Central-difference checks of matmul, conv2d, relu, smoothed cross-entropy
// and the full dual-head combined loss, each at `points` random points.
std::vector<GradCheckResult> gradcheck_suite(std::uint64_t seed, std::size_t points = 3);

}  // namespace sft
