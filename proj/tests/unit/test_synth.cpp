#include <gtest/gtest.h>

#include "ctt/errors.hpp"
#include "ctt/mode_label.hpp"
#include "ctt/synth.hpp"

using namespace ctt;

namespace {

TemplateKind kind(int k) { return static_cast<TemplateKind>(k); }

}  // namespace

TEST(Synth, DeterministicPerSeed) {
  for (int k = 0; k < kNumTemplates; ++k) {
    const auto tpl = default_template(kind(k));
    EXPECT_EQ(gen_scene(tpl, 42), gen_scene(tpl, 42)) << to_string(kind(k));
    EXPECT_NE(gen_scene(tpl, 42), gen_scene(tpl, 43)) << to_string(kind(k));
  }
}

TEST(Synth, ValidOverThousandSeeds) {
  for (int k = 0; k < kNumTemplates; ++k) {
    const auto tpl = default_template(kind(k));
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      const Scene s = gen_scene(tpl, seed);
      EXPECT_NO_THROW(validate(s));
      ASSERT_TRUE(s.has_futures());
      EXPECT_EQ(s.history_len(), tpl.history_len);
      EXPECT_EQ(s.future_len(), tpl.future_len);
      EXPECT_GE(s.num_agents(), tpl.min_agents);
      EXPECT_LE(s.num_agents(), tpl.max_agents);
      const auto gt = extract_gtsm(s, LabelConfig{}.theta_hat);
      EXPECT_EQ(gt.mode.num_agents(), s.num_agents());
      if (!is_adversarial(kind(k))) EXPECT_GT(min_clearance(s), 0.0);
    }
  }
}

TEST(Synth, OvertakeYieldsNonStaticPair) {
  const auto tpl = default_template(TemplateKind::Overtake);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Scene s = gen_scene(tpl, seed);
    const auto gt = extract_gtsm(s, LabelConfig{}.theta_hat);
    EXPECT_NE(gt.mode.pair(0, 1), Homotopy::S) << "seed " << seed;
  }
}

TEST(Synth, LaneKeepingTrafficIsStatic) {
  auto tpl = default_template(TemplateKind::StraightMultiLane);
  tpl.lane_change_prob = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Scene s = gen_scene(tpl, seed);
    const auto gt = extract_gtsm(s, LabelConfig{}.theta_hat);
    for (Homotopy h : gt.mode.a2a) EXPECT_EQ(h, Homotopy::S) << "seed " << seed;
    for (int l : gt.mode.a2l) EXPECT_GT(l, 0) << "seed " << seed;
  }
}

TEST(Synth, TemplateNamesRoundTrip) {
  for (int k = 0; k < kNumTemplates; ++k) EXPECT_EQ(template_from_string(to_string(kind(k))), kind(k));
  EXPECT_FALSE(template_from_string("roundabout").has_value());
}

TEST(Synth, BoundedRetriesAndTemplateChecks) {
  auto tpl = default_template(TemplateKind::Merge);
  tpl.max_retries = 0;
  EXPECT_THROW(gen_scene(tpl, 1), GenerationFailed);
  tpl = default_template(TemplateKind::Merge);
  tpl.min_agents = 3;
  tpl.max_agents = 2;
  EXPECT_THROW(gen_scene(tpl, 1), Error);
}
