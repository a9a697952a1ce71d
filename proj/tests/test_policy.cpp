#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "rangeaug/policy.hpp"

using namespace rangeaug;
using nd::Array;
using nd::Graph;
using nd::NodeId;
using nd::Shape;

TEST(Policy, InitialRanges) {
  const RangePolicy p = RangePolicy::initial();
  EXPECT_EQ(p.range(AugOpKind::Brightness).a, 0.9);
  EXPECT_EQ(p.range(AugOpKind::Brightness).b, 1.1);
  EXPECT_EQ(p.range(AugOpKind::Contrast).a, 0.9);
  EXPECT_EQ(p.range(AugOpKind::Contrast).b, 1.1);
  EXPECT_EQ(p.range(AugOpKind::Noise).a, 0.0);
  EXPECT_EQ(p.range(AugOpKind::Noise).b, 0.05);
  EXPECT_TRUE(ranges_valid(p));
}

TEST(Policy, SampleMagnitudeFollowsReparameterization) {
  const RangePolicy p = RangePolicy::initial();
  for (std::uint64_t s = 0; s < 100; ++s) {
    const SubPolicySample sample = sample_subpolicy(p, RngContext{3, Stream::Sampling, 0, s, 0}, Shape{3, 2, 2});
    for (std::size_t i = 0; i < kNumOps; ++i) {
      const auto& r = p.ranges[i];
      EXPECT_GE(sample.u[i], 0.0);
      EXPECT_LT(sample.u[i], 1.0);
      EXPECT_DOUBLE_EQ(sample.m[i], r.a + (r.b - r.a) * sample.u[i]);
      EXPECT_TRUE(sample.mask[i]);
    }
    EXPECT_EQ(sample.z.shape(), (Shape{3, 2, 2}));
  }
}

TEST(Policy, DegenerateRangeAlwaysGivesEndpoint) {
  RangePolicy p = RangePolicy::initial();
  p.range(AugOpKind::Brightness) = {1.3, 1.3, op_bounds(AugOpKind::Brightness)};
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto sample = sample_subpolicy(p, RngContext{1, Stream::Sampling, 2, s, 0}, Shape{3, 1, 1});
    EXPECT_EQ(sample.m[op_index(AugOpKind::Brightness)], 1.3);
  }
}

TEST(Policy, MonteCarloMeanOfMagnitude) {
  // Range (0.5, 1.5): E[m] = 1.0, sd of the mean over 10^5 draws ~ 9e-4.
  RangePolicy p = RangePolicy::initial();
  p.range(AugOpKind::Brightness) = {0.5, 1.5, op_bounds(AugOpKind::Brightness)};
  double sum = 0.0;
  const int n = 100000;
  for (int s = 0; s < n; ++s) {
    sum += sample_subpolicy(p, RngContext{11, Stream::Sampling, 0, static_cast<std::uint64_t>(s), 0}, Shape{1})
               .m[op_index(AugOpKind::Brightness)];
  }
  EXPECT_NEAR(sum / n, 1.0, 0.01);
}

TEST(Policy, ApplyProbabilityControlsMask) {
  const RangePolicy none = RangePolicy::initial(0.0);
  const RangePolicy half = RangePolicy::initial(0.5);
  int on = 0;
  const int n = 20000;
  for (int s = 0; s < n; ++s) {
    const RngContext rng{5, Stream::Sampling, 0, static_cast<std::uint64_t>(s), 0};
    const auto a = sample_subpolicy(none, rng, Shape{1});
    for (bool m : a.mask) ASSERT_FALSE(m);
    on += sample_subpolicy(half, rng, Shape{1}).mask[0] ? 1 : 0;
  }
  EXPECT_NEAR(static_cast<double>(on) / n, 0.5, 0.015);
}

TEST(Policy, SamplingIsDeterministicPerCounters) {
  const RangePolicy p = RangePolicy::initial();
  const RngContext rng{9, Stream::Sampling, 4, 12, 0};
  const auto a = sample_subpolicy(p, rng, Shape{3, 4, 4});
  const auto b = sample_subpolicy(p, rng, Shape{3, 4, 4});
  EXPECT_EQ(a.u, b.u);
  EXPECT_EQ(a.z, b.z);
  const auto c = sample_subpolicy(p, RngContext{9, Stream::Sampling, 5, 12, 0}, Shape{3, 4, 4});
  EXPECT_NE(a.u, c.u);
}

TEST(Policy, ProjectionClampsThenCollapsesCrossedRanges) {
  RangePolicy p = RangePolicy::initial();
  p.range(AugOpKind::Brightness) = {-1.0, 20.0, op_bounds(AugOpKind::Brightness)};
  p.range(AugOpKind::Contrast) = {1.4, 1.2, op_bounds(AugOpKind::Contrast)};
  p.range(AugOpKind::Noise) = {0.5, -0.2, op_bounds(AugOpKind::Noise)};
  const RangePolicy q = project_ranges(p);
  EXPECT_EQ(q.range(AugOpKind::Brightness).a, 0.1);
  EXPECT_EQ(q.range(AugOpKind::Brightness).b, 10.0);
  EXPECT_DOUBLE_EQ(q.range(AugOpKind::Contrast).a, 1.3);
  EXPECT_DOUBLE_EQ(q.range(AugOpKind::Contrast).b, 1.3);
  // noise: clamp gives (0.5, 0.0), midpoint 0.25
  EXPECT_DOUBLE_EQ(q.range(AugOpKind::Noise).a, 0.25);
  EXPECT_DOUBLE_EQ(q.range(AugOpKind::Noise).b, 0.25);
}

TEST(PolicyProperty, ProjectionIsValidAndIdempotent) {
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> wild(-30.0, 30.0);
  for (int t = 0; t < 5000; ++t) {
    RangePolicy p = RangePolicy::initial();
    for (auto& r : p.ranges) {
      r.a = wild(gen);
      r.b = wild(gen);
    }
    const RangePolicy q = project_ranges(p);
    ASSERT_TRUE(ranges_valid(q));
    const RangePolicy q2 = project_ranges(q);
    for (std::size_t i = 0; i < kNumOps; ++i) {
      ASSERT_EQ(q.ranges[i].a, q2.ranges[i].a);
      ASSERT_EQ(q.ranges[i].b, q2.ranges[i].b);
    }
  }
}

TEST(PolicyProperty, ProjectionLeavesValidRangesUntouched) {
  std::mt19937_64 gen(37);
  for (int t = 0; t < 2000; ++t) {
    RangePolicy p = RangePolicy::initial();
    for (auto& r : p.ranges) {
      std::uniform_real_distribution<double> d(r.bounds.lo, r.bounds.hi);
      r.a = d(gen);
      r.b = d(gen);
      if (r.a > r.b) std::swap(r.a, r.b);
    }
    const RangePolicy q = project_ranges(p);
    for (std::size_t i = 0; i < kNumOps; ++i) {
      ASSERT_EQ(q.ranges[i].a, p.ranges[i].a);
      ASSERT_EQ(q.ranges[i].b, p.ranges[i].b);
    }
  }
}

TEST(Policy, RangeWidth) {
  const auto w = range_width(RangePolicy::initial());
  EXPECT_NEAR(w[0], 0.2, 1e-15);
  EXPECT_NEAR(w[1], 0.2, 1e-15);
  EXPECT_NEAR(w[2], 0.05, 1e-15);
}

TEST(Policy, ReparameterizedGradients) {
  // dm/da = 1 - u, dm/db = u
  for (double u : {0.0, 0.25, 0.9}) {
    Graph g;
    const NodeId a = g.leaf(Array::scalar(0.8));
    const NodeId b = g.leaf(Array::scalar(1.6));
    const NodeId m = reparameterized_magnitude(g, a, b, u);
    EXPECT_DOUBLE_EQ(g.value(m).item(), 0.8 + 0.8 * u);
    const auto grads = g.backward(m);
    EXPECT_DOUBLE_EQ(grads.at(a).item(), 1.0 - u);
    EXPECT_DOUBLE_EQ(grads.at(b).item(), u);
  }
}

TEST(Policy, AugmentImageWithIdentityPolicyIsExact) {
  std::mt19937_64 gen(41);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  Array img(Shape{3, 5, 5});
  for (auto& v : img.values()) v = d(gen);
  const auto sample = sample_subpolicy(RangePolicy::identity(), RngContext{1, Stream::Sampling, 0, 0, 0}, img.shape());
  EXPECT_EQ(augment_image(img, sample), img);
}

TEST(Policy, JsonRoundTrip) {
  RangePolicy p = RangePolicy::initial(0.75);
  p.range(AugOpKind::Contrast) = {0.123456789012345, 3.5, op_bounds(AugOpKind::Contrast)};
  const std::string text = policy_to_json(p);
  const RangePolicy q = policy_from_json(text);
  for (std::size_t i = 0; i < kNumOps; ++i) {
    EXPECT_EQ(q.ranges[i].a, p.ranges[i].a);
    EXPECT_EQ(q.ranges[i].b, p.ranges[i].b);
  }
  EXPECT_EQ(q.p_apply, 0.75);
  EXPECT_EQ(policy_to_json(q), text);
  EXPECT_NE(text.find("\"version\": 1"), std::string::npos);
  EXPECT_NE(text.find("\"brightness\""), std::string::npos);
}

TEST(Policy, JsonRejectsSchemaViolations) {
  EXPECT_THROW(policy_from_json("not json"), std::invalid_argument);
  EXPECT_THROW(policy_from_json(R"({"version":2,"ops":[]})"), std::invalid_argument);
  EXPECT_THROW(policy_from_json(R"({"version":1,"ops":[{"name":"brightness","a":1,"b":2}]})"), std::invalid_argument);
  EXPECT_THROW(policy_from_json(R"({"version":1,"ops":[{"name":"brightness","a":1,"b":2},)"
                                R"({"name":"contrast","a":1,"b":2},{"name":"blur","a":0,"b":0.1}]})"),
               std::invalid_argument);
  // a > b
  EXPECT_THROW(policy_from_json(R"({"version":1,"ops":[{"name":"brightness","a":2,"b":1},)"
                                R"({"name":"contrast","a":1,"b":2},{"name":"noise","a":0,"b":0.1}]})"),
               std::invalid_argument);
  // outside bounds
  EXPECT_THROW(policy_from_json(R"({"version":1,"ops":[{"name":"brightness","a":1,"b":2},)"
                                R"({"name":"contrast","a":1,"b":2},{"name":"noise","a":0,"b":1.5}]})"),
               std::invalid_argument);
}

TEST(Policy, SaveAndLoadFile) {
  const auto path = std::filesystem::temp_directory_path() / "rangeaug_policy_test.json";
  const RangePolicy p = RangePolicy::initial();
  save_policy(path.string(), p);
  const RangePolicy q = load_policy(path.string());
  EXPECT_EQ(policy_to_json(q), policy_to_json(p));
  std::filesystem::remove(path);
  EXPECT_THROW(load_policy(path.string()), std::invalid_argument);
}
