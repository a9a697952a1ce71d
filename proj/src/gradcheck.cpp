#include "rangeaug/gradcheck.hpp"

#include <array>

#include "rangeaug/augops.hpp"
#include "rangeaug/policy.hpp"
#include "rangeaug/refmodel.hpp"
#include "rangeaug/rng.hpp"
#include "rangeaug/simloss.hpp"

namespace rangeaug {
namespace {

// Sequential draws from one counter stream.
class Dice {
 public:
  Dice(std::uint64_t seed, std::uint64_t trial) : ctx_{seed, Stream::Init, 0xfdULL, trial, 0} {}

  double uniform(double lo, double hi) { return lo + (hi - lo) * ctx_.uniform(next_++); }
  double normal() { return ctx_.normal(next_++); }
  nd::Array image(const nd::Shape& shape, double lo = 0.05, double hi = 0.95) {
    nd::Array a(shape);
    for (auto& v : a.values()) v = uniform(lo, hi);
    return a;
  }
  nd::Array gaussian(const nd::Shape& shape, double scale = 1.0) {
    nd::Array a(shape);
    for (auto& v : a.values()) v = scale * normal();
    return a;
  }

 private:
  RngContext ctx_;
  std::uint64_t next_ = 0;
};

// Moderate ranges inside the hard bounds: wide enough to exercise every op,
// narrow enough that most pixels stay unsaturated.
RangePolicy random_policy(Dice& dice) {
  RangePolicy p = RangePolicy::initial();
  for (auto kind : {AugOpKind::Brightness, AugOpKind::Contrast}) {
    auto& r = p.range(kind);
    r.a = dice.uniform(0.4, 1.3);
    r.b = r.a + dice.uniform(0.05, 0.8);
  }
  auto& noise = p.range(AugOpKind::Noise);
  noise.a = dice.uniform(0.0, 0.08);
  noise.b = noise.a + dice.uniform(0.01, 0.15);
  return project_ranges(p);
}

nd::NodeId weighted_sum(nd::Graph& g, nd::NodeId x, const nd::Array& w) { return g.sum(g.mul(x, g.constant(w))); }

}  // namespace

nd::FdReport check_total_objective(std::uint64_t seed, std::size_t image_side, double h) {
  Dice dice(seed, 1000);
  const nd::Shape shape{3, image_side, image_side};
  const std::size_t d = 3 * image_side * image_side;
  const nd::Array image = dice.image(shape);
  const RangePolicy policy = random_policy(dice);
  const MlpClassifier model = init_params({d, 16, 4}, seed);
  const std::size_t label = static_cast<std::size_t>(dice.uniform(0.0, 4.0)) % 4;
  const double delta = dice.uniform(10.0, 30.0);
  const double lambda = 0.0015;
  const double beta = 1.0;
  const SubPolicySample sample = sample_subpolicy(policy, RngContext{seed, Stream::Sampling, 0, 1000, 0}, shape);

  // Leaves: a0 b0 a1 b1 a2 b2, then W/b per layer, then the input image.
  std::vector<nd::Array> point;
  for (const auto& r : policy.ranges) {
    point.push_back(nd::Array::scalar(r.a));
    point.push_back(nd::Array::scalar(r.b));
  }
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    point.push_back(model.weights[l]);
    point.push_back(model.biases[l]);
  }
  point.push_back(image);

  const std::vector<std::size_t> labels{label};
  auto build = [&](nd::Graph& g, std::span<const nd::NodeId> leaves) {
    std::array<nd::NodeId, kNumOps> m{};
    for (std::size_t i = 0; i < kNumOps; ++i) {
      m[i] = reparameterized_magnitude(g, leaves[2 * i], leaves[2 * i + 1], sample.u[i]);
    }
    BoundModel bound;
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
      bound.weights.push_back(leaves[2 * kNumOps + 2 * l]);
      bound.biases.push_back(leaves[2 * kNumOps + 2 * l + 1]);
    }
    const nd::NodeId x = leaves.back();
    const nd::NodeId ref = g.constant(image);
    const nd::NodeId aug = compose_subpolicy(g, x, m, sample.mask, sample.z);
    const nd::NodeId logits = forward_classifier(g, model, bound, g.reshape(aug, nd::Shape{1, d}));
    const nd::NodeId task = cross_entropy(g, logits, labels);
    const nd::NodeId refs[] = {ref};
    const nd::NodeId augs[] = {aug};
    const nd::NodeId ra = augmentation_loss(g, refs, augs, delta, beta);
    return total_loss(g, task, ra, lambda);
  };
  return nd::finite_difference_check(build, point, h);
}

std::vector<GradcheckEntry> run_gradcheck_suite(std::uint64_t seed, double h) {
  std::vector<GradcheckEntry> out;
  Dice dice(seed, 1);
  const nd::Shape shape{3, 4, 4};

  for (auto kind : kCanonicalOrder) {
    const nd::Array x = dice.image(shape);
    const nd::Array w = dice.gaussian(shape);
    const nd::Array z = dice.gaussian(shape);
    const double m = kind == AugOpKind::Noise ? dice.uniform(0.05, 0.3) : dice.uniform(0.5, 1.5);
    const nd::Array point[] = {x, nd::Array::scalar(m)};
    auto build = [&](nd::Graph& g, std::span<const nd::NodeId> leaves) {
      return weighted_sum(g, apply_op(g, kind, leaves[0], leaves[1], z), w);
    };
    out.push_back({std::string(op_name(kind)), nd::finite_difference_check(build, point, h)});
  }

  {
    const nd::Array x = dice.image(shape, 0.2, 0.8);
    const nd::Array w = dice.gaussian(shape);
    const RangePolicy policy = random_policy(dice);
    const SubPolicySample sample = sample_subpolicy(policy, RngContext{seed, Stream::Sampling, 0, 7, 0}, shape);
    std::vector<nd::Array> point;
    for (const auto& r : policy.ranges) {
      point.push_back(nd::Array::scalar(r.a));
      point.push_back(nd::Array::scalar(r.b));
    }
    auto build = [&](nd::Graph& g, std::span<const nd::NodeId> leaves) {
      const nd::NodeId xi = g.constant(x);
      std::array<nd::NodeId, kNumOps> m{};
      for (std::size_t i = 0; i < kNumOps; ++i) {
        m[i] = reparameterized_magnitude(g, leaves[2 * i], leaves[2 * i + 1], sample.u[i]);
      }
      return weighted_sum(g, compose_subpolicy(g, xi, m, sample.mask, sample.z), w);
    };
    out.push_back({"subpolicy", nd::finite_difference_check(build, point, h)});
  }

  {
    const nd::Array x = dice.image(shape);
    nd::Array y = x;
    for (auto& v : y.values()) v += 0.1 * dice.normal();
    const nd::Array point[] = {y};
    auto build = [&](nd::Graph& g, std::span<const nd::NodeId> leaves) { return psnr(g, g.constant(x), leaves[0]); };
    out.push_back({"psnr", nd::finite_difference_check(build, point, h)});
  }

  {
    constexpr std::size_t kImages = 4;
    std::vector<nd::Array> images;
    for (std::size_t i = 0; i < kImages; ++i) images.push_back(dice.image(shape));
    const RangePolicy policy = random_policy(dice);
    std::vector<SubPolicySample> samples;
    for (std::size_t i = 0; i < kImages; ++i) {
      samples.push_back(sample_subpolicy(policy, RngContext{seed, Stream::Sampling, 1, i, 0}, shape));
    }
    std::vector<nd::Array> point;
    for (const auto& r : policy.ranges) {
      point.push_back(nd::Array::scalar(r.a));
      point.push_back(nd::Array::scalar(r.b));
    }
    const double delta = dice.uniform(10.0, 25.0);
    auto build = [&](nd::Graph& g, std::span<const nd::NodeId> leaves) {
      std::vector<nd::NodeId> refs;
      std::vector<nd::NodeId> augs;
      for (std::size_t j = 0; j < kImages; ++j) {
        std::array<nd::NodeId, kNumOps> m{};
        for (std::size_t i = 0; i < kNumOps; ++i) {
          m[i] = reparameterized_magnitude(g, leaves[2 * i], leaves[2 * i + 1], samples[j].u[i]);
        }
        refs.push_back(g.constant(images[j]));
        augs.push_back(compose_subpolicy(g, refs.back(), m, samples[j].mask, samples[j].z));
      }
      return augmentation_loss(g, refs, augs, delta, 1.0);
    };
    out.push_back({"augmentation_loss", nd::finite_difference_check(build, point, h)});
  }

  {
    const nd::Array logits = dice.gaussian(nd::Shape{5, 6}, 2.0);
    const std::vector<std::size_t> labels{0, 5, 2, 3, 1};
    const nd::Array point[] = {logits};
    auto build = [&](nd::Graph& g, std::span<const nd::NodeId> leaves) { return cross_entropy(g, leaves[0], labels); };
    out.push_back({"cross_entropy", nd::finite_difference_check(build, point, h)});
  }

  {
    const nd::Array logits = dice.gaussian(nd::Shape{5, 4}, 2.0);
    const nd::Array teacher = dice.gaussian(nd::Shape{5, 4}, 2.0);
    const std::vector<std::size_t> labels{0, 3, 2, 1, 1};
    const nd::Array point[] = {logits};
    auto build = [&](nd::Graph& g, std::span<const nd::NodeId> leaves) {
      return kd_loss(g, leaves[0], teacher, 4.0, 0.5, labels);
    };
    out.push_back({"kd_loss", nd::finite_difference_check(build, point, h)});
  }

  {
    const MlpClassifier model = init_params({12, 8, 6, 3}, seed + 1);
    const nd::Array input = dice.image(nd::Shape{4, 12});
    const std::vector<std::size_t> labels{0, 1, 2, 1};
    std::vector<nd::Array> point;
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
      point.push_back(model.weights[l]);
      point.push_back(model.biases[l]);
    }
    point.push_back(input);
    auto build = [&](nd::Graph& g, std::span<const nd::NodeId> leaves) {
      BoundModel bound;
      for (std::size_t l = 0; l < model.num_layers(); ++l) {
        bound.weights.push_back(leaves[2 * l]);
        bound.biases.push_back(leaves[2 * l + 1]);
      }
      return cross_entropy(g, forward_classifier(g, model, bound, leaves.back()), labels);
    };
    out.push_back({"classifier", nd::finite_difference_check(build, point, h)});
  }

  out.push_back({"total_objective", check_total_objective(seed, 8, h)});
  return out;
}

}  // namespace rangeaug
