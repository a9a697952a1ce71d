#pragma once

#include <array>
#include <optional>
#include <span>
#include <string_view>

#include "rangeaug/ndgrad.hpp"

namespace rangeaug {

enum class AugOpKind { Brightness = 0, Contrast = 1, Noise = 2 };

inline constexpr std::size_t kNumOps = 3;
inline constexpr std::array<AugOpKind, kNumOps> kCanonicalOrder = {AugOpKind::Brightness, AugOpKind::Contrast,
                                                                    AugOpKind::Noise};

struct OpBounds {
  double lo;
  double hi;
};

// Hard magnitude limits beyond which image content is no longer recognisable.
constexpr OpBounds op_bounds(AugOpKind kind) {
  switch (kind) {
    case AugOpKind::Brightness: return {0.1, 10.0};
    case AugOpKind::Contrast: return {0.1, 10.0};
    case AugOpKind::Noise: return {0.0, 1.0};
  }
  return {0.0, 0.0};
}

// Magnitude at which the op leaves the image untouched.
constexpr double identity_magnitude(AugOpKind kind) { return kind == AugOpKind::Noise ? 0.0 : 1.0; }

std::string_view op_name(AugOpKind kind);
std::optional<AugOpKind> parse_op(std::string_view name);
constexpr std::size_t op_index(AugOpKind kind) { return static_cast<std::size_t>(kind); }

// Images are [C, H, W] nodes with pixels nominally in [0, 1]; magnitudes are
// scalar nodes.

// m * x
nd::NodeId apply_brightness(nd::Graph& g, nd::NodeId image, nd::NodeId m);

// m * x + (1 - m) * mu(x), mu being the mean luminance (Rec. 601 weights for
// three channels, plain mean otherwise).
nd::NodeId apply_contrast(nd::Graph& g, nd::NodeId image, nd::NodeId m);

// x + m * z for a fixed standard-normal draw z of the image's shape.
nd::NodeId apply_noise(nd::Graph& g, nd::NodeId image, nd::NodeId m, const nd::Array& z);

nd::NodeId apply_op(nd::Graph& g, AugOpKind kind, nd::NodeId image, nd::NodeId m, const nd::Array& z);

// Value of mu(x) as used by apply_contrast.
double luminance_mean(const nd::Array& image);

// Chains the unmasked ops in `order`, then clamps once to [0, 1]. `magnitudes`
// and `mask` are indexed by op_index(kind), not by position in `order`.
nd::NodeId compose_subpolicy(nd::Graph& g, nd::NodeId image, std::span<const nd::NodeId, kNumOps> magnitudes,
                             const std::array<bool, kNumOps>& mask, const nd::Array& z,
                             std::span<const AugOpKind> order = kCanonicalOrder);

}  // namespace rangeaug
