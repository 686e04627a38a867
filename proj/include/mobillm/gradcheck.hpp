#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mobillm/side_network.hpp"

namespace mobillm {

struct GradcheckConfig {
  SideConfig side{8, 4, 2, 2, Activation::gelu, 0.5};
  std::size_t batch = 2;
  std::size_t seq = 4;
  bool tap_embedding = true;
  double step = 1e-6;
};

struct GradcheckResult {
  std::uint64_t seed = 0;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_tensor;  // e.g. "adapter1.w_up"
};

// |a - n| / max(|a|, |n|, floor); the floor keeps round-off on vanishing
// coordinates from dominating (they are held to 1e-4 * tol absolute).
inline constexpr double kGradcheckFloor = 1e-4;
double relative_error(double analytic, double numeric);

// Random double-precision side network, taps and labels from `seed`;
// compares side_backward with central differences of the cross-entropy
// loss on every parameter coordinate.
GradcheckResult gradcheck_side(const GradcheckConfig& config, std::uint64_t seed);

std::vector<GradcheckResult> gradcheck_suite(const GradcheckConfig& config,
                                             const std::vector<std::uint64_t>& seeds);

}  // namespace mobillm
