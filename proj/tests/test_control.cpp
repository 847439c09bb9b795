#include "cdcsde/control.hpp"

#include <gtest/gtest.h>

using namespace cdcsde;
using namespace cdcsde::control;

namespace {

ControlState with_zone(Zone z, std::vector<Step> warnings = {}) {
  ControlState::Raw r{};
  r.zone = z;
  r.warning = std::move(warnings);
  return ControlState::from_raw({}, r);
}

SignalStates states_with(std::array<Zone, kSignals> zones) {
  SignalStates s = make_states({});
  for (std::size_t i = 0; i < zones.size(); ++i) s[i] = with_zone(zones[i]);
  return s;
}

constexpr std::array<bool, kSignals> kAllPresent{true, true, true, true, true, true};
constexpr Zone S = Zone::Safe, W = Zone::Warning, D = Zone::Drift;

}  // namespace

// Reference values come from a direct re-implementation of the rule in a
// separate script (progressive mean, population stdev of the progressive means).
TEST(ControlState, StepToTenReachesDrift) {
  ControlState c({.warmup = 5});
  for (Step i = 0; i < 5; ++i) EXPECT_EQ(c.observe(0.0, i), S);
  EXPECT_EQ(c.p_min(), 0.0);
  EXPECT_EQ(c.s_min(), 0.0);

  struct Row {
    double p, s;
  };
  const Row expect[] = {{1.6666666666666667, 0.6211299937499416}, {2.857142857142857, 1.0702131103777057}, {3.75, 1.4338127745353069}};
  for (Step i = 0; i < 3; ++i) {
    EXPECT_EQ(c.observe(10.0, 5 + i), D) << i;
    EXPECT_NEAR(c.p(), expect[i].p, 1e-12);
    EXPECT_NEAR(c.s(), expect[i].s, 1e-12);
    EXPECT_EQ(c.p_min(), 0.0);
    EXPECT_EQ(c.warning_batches().size(), static_cast<std::size_t>(i + 1));
  }
  EXPECT_EQ(c.warning_batches(), (std::vector<Step>{5, 6, 7}));
}

TEST(ControlState, WarningDecaysBackToSafe) {
  ControlState c({.warmup = 5});
  const double seq[] = {1, 2, 1, 2, 1, 2, 2, 2, 0};
  const Zone zones[] = {S, S, S, S, S, S, S, W, S};
  for (int i = 0; i < 9; ++i) {
    EXPECT_EQ(c.observe(seq[i], i), zones[i]) << i;
    if (i == 4) {
      EXPECT_NEAR(c.p_min(), 1.4, 1e-12);
      EXPECT_NEAR(c.s_min(), 0.18451136670797397, 1e-12);
    }
    if (i == 7) {
      EXPECT_NEAR(c.p(), 1.625, 1e-12);
      EXPECT_NEAR(c.s(), 0.18298168724509975, 1e-12);
      EXPECT_EQ(c.warning_batches(), std::vector<Step>{7});
    }
  }
  EXPECT_NEAR(c.p(), 1.4444444444444444, 1e-12);
  EXPECT_NEAR(c.s(), 0.1725875498617938, 1e-12);
  EXPECT_TRUE(c.warning_batches().empty());
}

TEST(ControlState, ConstantSeriesStaysSafe) {
  ControlState c({.warmup = 5});
  for (Step i = 0; i < 100; ++i) {
    EXPECT_EQ(c.observe(0.3, i), S);
    EXPECT_NEAR(c.p(), 0.3, 1e-14);
    EXPECT_NEAR(c.s(), 0.0, 1e-15);
  }
}

TEST(ControlState, WarmupSuppressesZones) {
  ControlState c({.warmup = 3});
  EXPECT_EQ(c.observe(0.0, 0), S);
  EXPECT_EQ(c.observe(100.0, 1), S);
  EXPECT_FALSE(c.has_min());
  c.observe(100.0, 2);
  EXPECT_TRUE(c.has_min());
}

// Thresholds chosen so every quantity is exact in binary: after 1 then 3,
// p = 2, s = 0.5, p + s = 2.5, with p_min = 1 and s_min = 0 (so s' = eps).
TEST(ControlState, EqualityKeepsTheCurrentZone) {
  {
    ControlState c({.warmup = 1, .eps_floor = 0.75});  // 2.5 == 1 + 2 * 0.75
    c.observe(1.0, 0);
    EXPECT_EQ(c.observe(3.0, 1), S);
  }
  {
    ControlState c({.warmup = 1, .eps_floor = 0.75});
    c.observe(1.0, 0);
    auto r = c.raw();
    r.zone = W;
    r.warning = {0};
    ControlState w = ControlState::from_raw(c.config(), r);
    EXPECT_EQ(w.observe(3.0, 1), W);
    EXPECT_EQ(w.warning_batches(), (std::vector<Step>{0}));  // not extended
  }
  {
    ControlState c({.warmup = 1, .eps_floor = 0.5});  // 2.5 == 1 + 3 * 0.5: not above drift
    c.observe(1.0, 0);
    EXPECT_EQ(c.observe(3.0, 1), W);
  }
}

TEST(ControlState, ResetAndNonFinite) {
  ControlState c({.warmup = 1});
  c.observe(1.0, 0);
  c.observe(5.0, 1);
  c.reset();
  EXPECT_EQ(c.count(), 0);
  EXPECT_EQ(c.zone(), S);
  EXPECT_TRUE(c.warning_batches().empty());
  EXPECT_FALSE(c.has_min());
  EXPECT_EQ(c.config().warmup, 1);
  EXPECT_THROW(c.observe(std::nan(""), 2), Error);
}

TEST(ControlState, RawRoundTripContinuesIdentically) {
  ControlState a({.warmup = 3});
  for (Step i = 0; i < 6; ++i) a.observe(0.1 * static_cast<double>(i % 3), i);
  ControlState b = ControlState::from_raw(a.config(), a.raw());
  for (Step i = 6; i < 20; ++i) {
    const double q = i > 12 ? 2.0 : 0.1;
    EXPECT_EQ(a.observe(q, i), b.observe(q, i));
    EXPECT_EQ(a.p(), b.p());
    EXPECT_EQ(a.s(), b.s());
  }
  EXPECT_EQ(a.warning_batches(), b.warning_batches());
}

// ---- voting ----------------------------------------------------------------------

TEST(Vote, KpiModuleFiresAlone) {
  const auto d = vote(states_with({D, S, S, S, S, S}), kAllPresent);
  EXPECT_TRUE(d.drift);
  EXPECT_EQ(d.rule, TriggerRule::KpiModule);
}

TEST(Vote, ThreeOfFiveFires) {
  const auto d = vote(states_with({S, S, D, D, D, S}), kAllPresent);
  EXPECT_TRUE(d.drift);
  EXPECT_EQ(d.rule, TriggerRule::Majority);
}

TEST(Vote, TwoOfFiveDoesNot) {
  const auto d = vote(states_with({S, D, S, S, S, D}), kAllPresent);
  EXPECT_FALSE(d.drift);
  EXPECT_EQ(d.rule, TriggerRule::None);
}

TEST(Vote, WarningsDoNotCount) {
  EXPECT_FALSE(vote(states_with({W, D, D, W, W, W}), kAllPresent).drift);
}

TEST(Vote, AbsentSignalsVoteSafe) {
  const auto states = states_with({D, D, D, D, S, S});
  std::array<bool, kSignals> present = kAllPresent;
  present[0] = false;
  present[1] = false;
  const auto d = vote(states, present);
  EXPECT_FALSE(d.drift);
  EXPECT_EQ(d.votes[0], S);
}

TEST(Vote, ExcludedSignalsShrinkTheMajority) {
  VoteRule only_q1;
  only_q1.included = {true, false, false, false, false, false};
  EXPECT_EQ(only_q1.majority_threshold(), 0);
  EXPECT_FALSE(vote(states_with({S, D, D, D, D, D}), kAllPresent, only_q1).drift);
  EXPECT_TRUE(vote(states_with({D, S, S, S, S, S}), kAllPresent, only_q1).drift);

  VoteRule pair;  // q1 + q2: the single other signal decides
  pair.included = {true, true, false, false, false, false};
  EXPECT_EQ(pair.majority_threshold(), 1);
  EXPECT_TRUE(vote(states_with({S, D, S, S, S, S}), kAllPresent, pair).drift);

  VoteRule four;  // q1..q4: 2 of 3
  four.included = {true, true, true, true, false, false};
  EXPECT_EQ(four.majority_threshold(), 2);
  EXPECT_TRUE(vote(states_with({S, D, D, S, S, S}), kAllPresent, four).drift);
  EXPECT_FALSE(vote(states_with({S, D, S, S, D, D}), kAllPresent, four).drift);

  EXPECT_EQ(VoteRule{}.majority_threshold(), 3);
  VoteRule no_q1;
  no_q1.included = {false, true, true, true, true, true};
  EXPECT_FALSE(vote(states_with({D, S, S, S, S, S}), kAllPresent, no_q1).drift);
}

// ---- retraining set --------------------------------------------------------------

TEST(RetrainSet, UnionOfWarningZones) {
  SignalStates s = make_states({});
  s[0] = with_zone(D, {40, 41, 42});
  s[2] = with_zone(W, {38, 41});
  s[5] = with_zone(D, {45});
  bool fallback = true;
  EXPECT_EQ(collect_retrain_steps(s, 45, 10, 0, &fallback), (std::vector<Step>{38, 40, 41, 42, 45}));
  EXPECT_FALSE(fallback);
}

TEST(RetrainSet, FallbackToLastWindowClippedAtFirstStep) {
  const SignalStates s = make_states({});
  bool fallback = false;
  EXPECT_EQ(collect_retrain_steps(s, 60, 10, 0, &fallback), (std::vector<Step>{51, 52, 53, 54, 55, 56, 57, 58, 59, 60}));
  EXPECT_TRUE(fallback);
  EXPECT_EQ(collect_retrain_steps(s, 52, 10, 50, nullptr), (std::vector<Step>{50, 51, 52}));
}

TEST(RetrainSet, DecideAttachesStepsOnlyOnDrift) {
  SignalStates s = states_with({D, S, S, S, S, S});
  s[0] = with_zone(D, {7, 8});
  const auto d = decide(s, kAllPresent, 8, 10, 0);
  EXPECT_TRUE(d.drift);
  EXPECT_EQ(d.retrain_steps, (std::vector<Step>{7, 8}));
  EXPECT_FALSE(d.empty_union_fallback);
  s[0] = with_zone(W, {7, 8});
  EXPECT_TRUE(decide(s, kAllPresent, 8, 10, 0).retrain_steps.empty());
}
