#include "rangeaug/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace rangeaug {

RangePolicy RangePolicy::initial(double p_apply) {
  RangePolicy p;
  p.p_apply = p_apply;
  p.range(AugOpKind::Brightness) = {0.9, 1.1, op_bounds(AugOpKind::Brightness)};
  p.range(AugOpKind::Contrast) = {0.9, 1.1, op_bounds(AugOpKind::Contrast)};
  p.range(AugOpKind::Noise) = {0.0, 0.05, op_bounds(AugOpKind::Noise)};
  return p;
}

RangePolicy RangePolicy::identity() {
  RangePolicy p;
  for (auto kind : kCanonicalOrder) {
    const double m = identity_magnitude(kind);
    p.range(kind) = {m, m, op_bounds(kind)};
  }
  return p;
}

SubPolicySample sample_subpolicy(const RangePolicy& policy, const RngContext& rng, const nd::Shape& image_shape) {
  SubPolicySample s;
  RngContext sampling = rng;
  sampling.stream = Stream::Sampling;
  for (auto kind : kCanonicalOrder) {
    const std::size_t i = op_index(kind);
    const RngContext ctx = sampling.with_op(i);
    const MagnitudeRange& r = policy.ranges[i];
    s.u[i] = ctx.uniform(0);
    s.m[i] = r.a + (r.b - r.a) * s.u[i];
    s.mask[i] = policy.p_apply >= 1.0 || ctx.uniform(1) < policy.p_apply;
  }
  s.z = nd::Array(image_shape);
  if (!s.mask[op_index(AugOpKind::Noise)]) return s;
  RngContext noise = rng;
  noise.stream = Stream::Noise;
  noise.op = op_index(AugOpKind::Noise);
  noise.fill_normal(s.z.values());
  return s;
}

nd::Array augment_image(const nd::Array& image, const SubPolicySample& sample) {
  nd::Graph g;
  const nd::NodeId x = g.constant(image);
  std::array<nd::NodeId, kNumOps> m{};
  for (std::size_t i = 0; i < kNumOps; ++i) m[i] = g.constant(nd::Array::scalar(sample.m[i]));
  nd::Array z = sample.z.size() == image.size() ? sample.z : nd::Array(image.shape());
  return g.value(compose_subpolicy(g, x, m, sample.mask, z));
}

RangePolicy project_ranges(const RangePolicy& policy) {
  RangePolicy out = policy;
  for (auto& r : out.ranges) {
    r.a = std::clamp(r.a, r.bounds.lo, r.bounds.hi);
    r.b = std::clamp(r.b, r.bounds.lo, r.bounds.hi);
    if (r.a > r.b) {
      const double mid = 0.5 * (r.a + r.b);
      r.a = mid;
      r.b = mid;
    }
  }
  return out;
}

std::array<double, kNumOps> range_width(const RangePolicy& policy) {
  std::array<double, kNumOps> w{};
  for (std::size_t i = 0; i < kNumOps; ++i) w[i] = policy.ranges[i].width();
  return w;
}

bool ranges_valid(const RangePolicy& policy) {
  for (const auto& r : policy.ranges) {
    if (!std::isfinite(r.a) || !std::isfinite(r.b)) return false;
    if (r.a < r.bounds.lo || r.b > r.bounds.hi || r.a > r.b) return false;
  }
  return true;
}

PolicyLeaves bind_policy(nd::Graph& g, const RangePolicy& policy) {
  PolicyLeaves leaves;
  for (std::size_t i = 0; i < kNumOps; ++i) {
    leaves.a[i] = g.leaf(nd::Array::scalar(policy.ranges[i].a));
    leaves.b[i] = g.leaf(nd::Array::scalar(policy.ranges[i].b));
  }
  return leaves;
}

nd::NodeId reparameterized_magnitude(nd::Graph& g, nd::NodeId a, nd::NodeId b, double u) {
  return g.add(a, g.mul_scalar(g.sub(b, a), u));
}

std::string policy_to_json(const RangePolicy& policy) {
  nlohmann::ordered_json doc;
  doc["version"] = 1;
  doc["ops"] = nlohmann::ordered_json::array();
  for (auto kind : kCanonicalOrder) {
    const auto& r = policy.range(kind);
    nlohmann::ordered_json op;
    op["name"] = op_name(kind);
    op["a"] = r.a;
    op["b"] = r.b;
    doc["ops"].push_back(op);
  }
  doc["p_apply"] = policy.p_apply;
  return doc.dump(2) + "\n";
}

RangePolicy policy_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("policy JSON: ") + e.what());
  }
  if (!doc.is_object() || doc.value("version", 0) != 1) {
    throw std::invalid_argument("policy JSON: expected an object with \"version\": 1");
  }
  if (!doc.contains("ops") || !doc["ops"].is_array() || doc["ops"].size() != kNumOps) {
    throw std::invalid_argument("policy JSON: \"ops\" must list brightness, contrast and noise");
  }
  RangePolicy p = RangePolicy::initial();
  std::array<bool, kNumOps> seen{};
  for (const auto& op : doc["ops"]) {
    const auto name = op.value("name", std::string{});
    const auto kind = parse_op(name);
    if (!kind) throw std::invalid_argument("policy JSON: unknown op \"" + name + "\"");
    if (!op.contains("a") || !op.contains("b") || !op["a"].is_number() || !op["b"].is_number()) {
      throw std::invalid_argument("policy JSON: op \"" + name + "\" needs numeric a and b");
    }
    auto& r = p.range(*kind);
    r.a = op["a"].get<double>();
    r.b = op["b"].get<double>();
    seen[op_index(*kind)] = true;
  }
  if (!std::all_of(seen.begin(), seen.end(), [](bool s) { return s; })) {
    throw std::invalid_argument("policy JSON: duplicate op entry");
  }
  if (doc.contains("p_apply")) {
    if (!doc["p_apply"].is_number()) throw std::invalid_argument("policy JSON: p_apply must be a number");
    p.p_apply = doc["p_apply"].get<double>();
    if (!(p.p_apply >= 0.0 && p.p_apply <= 1.0)) throw std::invalid_argument("policy JSON: p_apply outside [0, 1]");
  }
  if (!ranges_valid(p)) throw std::invalid_argument("policy JSON: ranges outside bounds or a > b");
  return p;
}

void save_policy(const std::string& path, const RangePolicy& policy) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write policy file " + path);
  out << policy_to_json(policy);
}

RangePolicy load_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read policy file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return policy_from_json(ss.str());
}

}  // namespace rangeaug
