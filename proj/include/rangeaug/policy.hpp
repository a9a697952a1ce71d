#pragma once

#include <array>
#include <string>
#include <vector>

#include "rangeaug/augops.hpp"
#include "rangeaug/ndgrad.hpp"
#include "rangeaug/rng.hpp"

namespace rangeaug {

// Learnable interval [a, b] from which an op's magnitude is drawn uniformly.
struct MagnitudeRange {
  double a = 0.0;
  double b = 0.0;
  OpBounds bounds{0.0, 0.0};

  double width() const { return b - a; }
};

struct RangePolicy {
  std::array<MagnitudeRange, kNumOps> ranges;
  double p_apply = 1.0;

  // Narrow band around the identity magnitude of each op.
  static RangePolicy initial(double p_apply = 1.0);
  // a == b == identity magnitude for every op.
  static RangePolicy identity();

  const MagnitudeRange& range(AugOpKind kind) const { return ranges[op_index(kind)]; }
  MagnitudeRange& range(AugOpKind kind) { return ranges[op_index(kind)]; }
};

// One image's draw: uniform u, magnitude m = a + (b - a) u, apply mask and
// the standard-normal noise field.
struct SubPolicySample {
  std::array<double, kNumOps> u{};
  std::array<double, kNumOps> m{};
  std::array<bool, kNumOps> mask{};
  nd::Array z;
};

// Draws are keyed by rng's (epoch, sample); the op field is overwritten per
// op. Uniforms and masks come from the sampling stream, z from the noise
// stream.
SubPolicySample sample_subpolicy(const RangePolicy& policy, const RngContext& rng, const nd::Shape& image_shape);

// Clamp a and b into the hard bounds; an inverted pair collapses to its
// midpoint.
// Applies a drawn sub-policy to one [3, H, W] image without recording gradients.
nd::Array augment_image(const nd::Array& image, const SubPolicySample& sample);

RangePolicy project_ranges(const RangePolicy& policy);

std::array<double, kNumOps> range_width(const RangePolicy& policy);

// True when every range is finite, inside its bounds and ordered.
bool ranges_valid(const RangePolicy& policy);

// Graph handles for the policy parameters.
struct PolicyLeaves {
  std::array<nd::NodeId, kNumOps> a;
  std::array<nd::NodeId, kNumOps> b;
};

PolicyLeaves bind_policy(nd::Graph& g, const RangePolicy& policy);

// a + (b - a) u as a graph node, so dm/da = 1 - u and dm/db = u.
nd::NodeId reparameterized_magnitude(nd::Graph& g, nd::NodeId a, nd::NodeId b, double u);

// {"version":1,"ops":[{"name":"brightness","a":..,"b":..},...],"p_apply":..}
std::string policy_to_json(const RangePolicy& policy);
RangePolicy policy_from_json(const std::string& text);
void save_policy(const std::string& path, const RangePolicy& policy);
RangePolicy load_policy(const std::string& path);

}  // namespace rangeaug
