#include <gtest/gtest.h>

#include <cmath>

#include "kcf/observables.hpp"

using kcf::Matrix;
using kcf::Vector;

TEST(SinglePendulumMap, FeaturesByHand) {
  const auto map = kcf::single_pendulum_map();
  ASSERT_EQ(map.dim(), 9);
  ASSERT_EQ(map.state_dim(), 2);
  const double th = 0.7, w = -2.3;
  Vector x(2);
  x << th, w;
  Vector want(9);
  want << th, w, 1.0, th * th, w * w, std::sin(th), std::sin(w), std::cos(th), std::cos(w);
  EXPECT_LE((map.evaluate(x) - want).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(map.labels().front(), "theta");
}

TEST(DoublePendulumMap, FeaturesByHand) {
  const auto map = kcf::double_pendulum_map();
  ASSERT_EQ(map.dim(), 14);
  const double t1 = 0.4, t2 = -1.2, w1 = 1.5, w2 = -0.6;
  const double tr = t1 - t2;
  const double d = 1.0 / (3.0 - 2.0 * std::cos(tr));
  Vector x(4);
  x << t1, t2, w1, w2;
  Vector want(14);
  want << t1, t2, w1, w2, 1.0, d * std::sin(t1), d * std::sin(tr), d * std::sin(t1 - 2 * t2),
      d * std::sin(tr) * std::cos(t1), d * std::cos(tr) * std::sin(t1), d * w1 * w1 * std::sin(tr),
      d * w2 * w2 * std::sin(tr), d * w1 * w1 * std::sin(2 * tr), d * w2 * w2 * std::sin(2 * tr);
  EXPECT_LE((map.evaluate(x) - want).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ObservableMap, DecodingRecoversState) {
  for (const auto& map : {kcf::single_pendulum_map(), kcf::double_pendulum_map(), kcf::identity_map(3)}) {
    ASSERT_TRUE(map.has_state_prefix());
    const Matrix dec = kcf::decoding_operator(map);
    ASSERT_EQ(dec.rows(), map.state_dim());
    ASSERT_EQ(dec.cols(), map.dim());
    const Vector x = Vector::LinSpaced(map.state_dim(), -0.9, 1.1);
    EXPECT_EQ(dec * map.evaluate(x), x);
  }
}

TEST(ObservableMap, StatePrefixRequiredForDecoding) {
  std::vector<kcf::FeatureSpec> f{{"x^2", 1.0, {kcf::FeatureFactor::power(0, 2)}},
                                  {"x", 1.0, {kcf::FeatureFactor::power(0, 1)}}};
  const kcf::ObservableMap map("swapped", 1, f);
  EXPECT_FALSE(map.has_state_prefix());
  EXPECT_THROW(kcf::decoding_operator(map), kcf::ConfigError);
}

TEST(ObservableMap, DescriptorRoundTrip) {
  for (const auto& map : {kcf::single_pendulum_map(), kcf::double_pendulum_map(), kcf::scalar_monomial_map(3, true)}) {
    const auto back = kcf::ObservableMap::from_descriptor(kcf::Json::parse(map.descriptor().dump()));
    EXPECT_EQ(back.descriptor_hash(), map.descriptor_hash());
    const Vector x = Vector::LinSpaced(map.state_dim(), 0.3, -0.8);
    EXPECT_EQ(back.evaluate(x), map.evaluate(x));
  }
  EXPECT_NE(kcf::single_pendulum_map().descriptor_hash(), kcf::double_pendulum_map().descriptor_hash());
}

TEST(ObservableMap, RejectsBadInput) {
  const auto map = kcf::single_pendulum_map();
  EXPECT_THROW(map.evaluate(Vector::Zero(3)), kcf::DimensionError);
  std::vector<kcf::FeatureSpec> f{{"x3", 1.0, {kcf::FeatureFactor::power(3, 1)}}};
  EXPECT_THROW(kcf::ObservableMap("bad", 2, f), kcf::ConfigError);
}

TEST(ObservableMap, BatchFlagsNonFiniteFeatures) {
  std::vector<kcf::FeatureSpec> f{{"x", 1.0, {kcf::FeatureFactor::power(0, 1)}},
                                  {"1/(1-cos x)", 1.0, {kcf::FeatureFactor::inverse_cos(1.0, -1.0, {1.0})}}};
  const kcf::ObservableMap map("singular", 1, f);
  std::vector<Vector> states{Vector::Constant(1, 0.5), Vector::Constant(1, 0.0)};
  try {
    kcf::evaluate_batch(map, states);
    FAIL() << "expected NonFiniteFeatureError";
  } catch (const kcf::NonFiniteFeatureError& e) {
    EXPECT_EQ(e.state_index(), 1u);
  }
  const Matrix ok = kcf::evaluate_batch(map, {Vector::Constant(1, 0.5)});
  EXPECT_NEAR(ok(1, 0), 1.0 / (1.0 - std::cos(0.5)), 1e-14);
}
