#include "cdcsde/baselines.hpp"

#include <gtest/gtest.h>

using namespace cdcsde;
using namespace cdcsde::evaluation;

TEST(Ddm, ConstantErrorNeverDrifts) {
  BaselineDetector d(DetectorKind::Ddm);
  for (int i = 0; i < 5000; ++i) ASSERT_NE(d.step(0.1), Zone::Drift) << i;
  EXPECT_NEAR(d.estimate(), 0.1, 1e-12);
}

TEST(Ddm, ErrorJumpDrifts) {
  BaselineDetector d(DetectorKind::Ddm);
  for (int i = 0; i < 100; ++i) d.step(0.1);
  bool drift = false;
  for (int i = 0; i < 30 && !drift; ++i) drift = d.step(0.6) == Zone::Drift;
  EXPECT_TRUE(drift);
}

// Trace computed independently by the direct recurrence
// m_t = alpha * m_{t-1} + (x_t - mean_t - delta), M_t = min m: first
// m_t - M_t > lambda at observation 57 (statistic 5.1559).
TEST(PageHinkley, DriftsInsideTheElevatedSegment) {
  BaselineParams p;
  p.ph.delta = 0.005;
  p.ph.lambda = 5.0;
  p.ph.warmup = 5;
  for (double alpha : {0.9999, 1.0}) {
    p.ph.alpha = alpha;
    BaselineDetector d(DetectorKind::PageHinkley, p);
    int first = -1;
    for (int i = 1; i <= 70; ++i) {
      const Zone z = d.step(i <= 50 ? 0.1 : 0.9);
      if (z == Zone::Drift && first < 0) {
        first = i;
        EXPECT_NEAR(d.ph_statistic(), alpha == 1.0 ? 5.1573 : 5.1559, 1e-4);
      }
    }
    EXPECT_EQ(first, 57) << alpha;
  }
}

TEST(PageHinkley, StationaryInputStaysQuiet) {
  BaselineDetector d(DetectorKind::PageHinkley);
  for (int i = 0; i < 2000; ++i) ASSERT_EQ(d.step(0.2), Zone::Safe);
}

TEST(Ewma, ZeroDecayTracksLatestKpi) {
  BaselineParams p;
  p.ewma.decay = 0.0;
  BaselineDetector d(DetectorKind::Ewma, p);
  for (double x : {0.1, 0.4, 0.05, 0.9, 0.3}) {
    d.step(x);
    EXPECT_EQ(d.estimate(), x);
  }
}

TEST(Ewma, SustainedIncreaseDrifts) {
  BaselineDetector d(DetectorKind::Ewma);
  const double noise[] = {0.1, 0.12, 0.08, 0.11, 0.09};
  for (int i = 0; i < 100; ++i) d.step(noise[i % 5]);
  bool drift = false;
  for (int i = 0; i < 10 && !drift; ++i) drift = d.step(0.6) == Zone::Drift;
  EXPECT_TRUE(drift);
}

TEST(Baselines, RejectOutOfRangeKpiAndReset) {
  for (auto k : {DetectorKind::Ddm, DetectorKind::PageHinkley, DetectorKind::Ewma}) {
    BaselineDetector d(k);
    EXPECT_THROW(d.step(-0.1), Error);
    EXPECT_THROW(d.step(1.5), Error);
    EXPECT_THROW(d.step(std::nan("")), Error);
    d.step(0.5);
    d.reset();
    EXPECT_EQ(d.count(), 0);
    EXPECT_EQ(d.zone(), Zone::Safe);
  }
}
