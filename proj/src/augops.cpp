#include "rangeaug/augops.hpp"

namespace rangeaug {

std::string_view op_name(AugOpKind kind) {
  switch (kind) {
    case AugOpKind::Brightness: return "brightness";
    case AugOpKind::Contrast: return "contrast";
    case AugOpKind::Noise: return "noise";
  }
  return "unknown";
}

std::optional<AugOpKind> parse_op(std::string_view name) {
  for (auto kind : kCanonicalOrder) {
    if (op_name(kind) == name) return kind;
  }
  return std::nullopt;
}

namespace {

constexpr std::array<double, 3> kLumaWeights = {0.299, 0.587, 0.114};

// Per-pixel weights w_c / (H W) so that sum(x * weights) is the mean luminance.
nd::Array luminance_weights(const nd::Shape& shape) {
  nd::Array w(shape);
  const std::size_t channels = shape.size() == 3 ? shape[0] : 1;
  const std::size_t plane = w.size() / channels;
  for (std::size_t c = 0; c < channels; ++c) {
    const double wc = channels == 3 ? kLumaWeights[c] : 1.0 / static_cast<double>(channels);
    for (std::size_t i = 0; i < plane; ++i) w[c * plane + i] = wc / static_cast<double>(plane);
  }
  return w;
}

}  // namespace

double luminance_mean(const nd::Array& image) {
  const nd::Array w = luminance_weights(image.shape());
  std::vector<double> prod(image.size());
  for (std::size_t i = 0; i < prod.size(); ++i) prod[i] = image[i] * w[i];
  return nd::pairwise_sum(prod);
}

nd::NodeId apply_brightness(nd::Graph& g, nd::NodeId image, nd::NodeId m) { return g.mul(m, image); }

nd::NodeId apply_contrast(nd::Graph& g, nd::NodeId image, nd::NodeId m) {
  const nd::NodeId weights = g.constant(luminance_weights(g.value(image).shape()));
  const nd::NodeId mu = g.sum(g.mul(image, weights));
  const nd::NodeId one_minus_m = g.add_scalar(g.mul_scalar(m, -1.0), 1.0);
  return g.add(g.mul(m, image), g.mul(one_minus_m, mu));
}

nd::NodeId apply_noise(nd::Graph& g, nd::NodeId image, nd::NodeId m, const nd::Array& z) {
  if (z.shape() != g.value(image).shape()) {
    throw nd::ShapeError("apply_noise: noise draw " + nd::shape_str(z.shape()) + " does not match image " +
                         nd::shape_str(g.value(image).shape()));
  }
  return g.add(image, g.mul(m, g.constant(z)));
}

nd::NodeId apply_op(nd::Graph& g, AugOpKind kind, nd::NodeId image, nd::NodeId m, const nd::Array& z) {
  switch (kind) {
    case AugOpKind::Brightness: return apply_brightness(g, image, m);
    case AugOpKind::Contrast: return apply_contrast(g, image, m);
    case AugOpKind::Noise: return apply_noise(g, image, m, z);
  }
  return image;
}

nd::NodeId compose_subpolicy(nd::Graph& g, nd::NodeId image, std::span<const nd::NodeId, kNumOps> magnitudes,
                             const std::array<bool, kNumOps>& mask, const nd::Array& z,
                             std::span<const AugOpKind> order) {
  nd::NodeId current = image;
  for (auto kind : order) {
    const std::size_t i = op_index(kind);
    if (!mask[i]) continue;
    current = apply_op(g, kind, current, magnitudes[i], z);
  }
  return g.clamp(current, 0.0, 1.0);
}

}  // namespace rangeaug
