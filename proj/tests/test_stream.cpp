#include "cdcsde/stream.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

using namespace cdcsde;

namespace {

std::string write_temp(const std::string& name, const std::string& body) {
  const auto p = std::filesystem::temp_directory_path() / ("cdcsde_test_" + name);
  std::ofstream(p) << body;
  return p.string();
}

bool same_stream(const LabeledStream& a, const LabeledStream& b) {
  if (a.size() != b.size() || a.drift_truth != b.drift_truth) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.labels[i] != b.labels[i]) return false;
    if (a.batches[i].features.size() != b.batches[i].features.size()) return false;
    if (std::memcmp(a.batches[i].features.data(), b.batches[i].features.data(),
                    sizeof(double) * static_cast<std::size_t>(a.batches[i].features.size())) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST(Sea, DriftPointsAreBatchIndicesOfConceptBoundaries) {
  const auto s = make_stream(StreamSpec::sea_default());
  EXPECT_EQ(s.drift_truth, (std::vector<Step>{195, 390, 585}));
  EXPECT_EQ(s.size(), 781u);
  EXPECT_EQ(s.dim, 3);
}

TEST(Sea, LabelFunction) {
  EXPECT_EQ(sea_label(0.0, 0.0, 8.0), 1);
  EXPECT_EQ(sea_label(5.0, 4.0, 8.0), 0);
  EXPECT_EQ(sea_label(4.0, 4.0, 8.0), 1);
}

TEST(Sea, StoredLabelsFollowTheActiveConcept) {
  StreamSpec spec;
  spec.seed = 3;
  const auto s = make_stream(spec);
  for (std::size_t b = 0; b < s.size(); ++b) {
    for (Eigen::Index r = 0; r < s.batches[b].rows(); ++r) {
      const long sample = static_cast<long>(b) * spec.batch_size + r;
      const double theta = kSeaThresholds[sample / spec.concept_length];
      const auto& x = s.batches[b].features;
      ASSERT_GE(x(r, 0), 0.0);
      ASSERT_LE(x(r, 2), 10.0);
      ASSERT_EQ(s.labels[b][static_cast<std::size_t>(r)], sea_label(x(r, 0), x(r, 1), theta));
    }
  }
}

TEST(Sea, DeterministicUnderSeed) {
  StreamSpec spec;
  spec.seed = 11;
  EXPECT_TRUE(same_stream(make_stream(spec), make_stream(spec)));
  StreamSpec other = spec;
  other.seed = 12;
  EXPECT_FALSE(same_stream(make_stream(spec), make_stream(other)));
}

TEST(Sine2, ShapeAndDrifts) {
  const auto s = make_stream(StreamSpec::sine2_default());
  EXPECT_EQ(s.size(), 1562u);
  EXPECT_EQ(s.drift_truth.size(), 9u);
  EXPECT_EQ(s.drift_truth.front(), 10000 / 64);
}

TEST(Sine2, LabelInvertsAcrossConcepts) {
  EXPECT_EQ(sine2_label(0.0, 0.4, 0), 1);
  EXPECT_EQ(sine2_label(0.0, 0.4, 1), 0);
  EXPECT_EQ(sine2_label(0.0, 0.4, 2), 1);
}

TEST(Sine2, StoredLabelsArePure) {
  StreamSpec spec = StreamSpec::sine2_default();
  spec.seed = 5;
  const auto s = make_stream(spec);
  for (std::size_t b = 0; b < s.size(); b += 7) {
    for (Eigen::Index r = 0; r < s.batches[b].rows(); ++r) {
      const long sample = static_cast<long>(b) * spec.batch_size + r;
      const auto& x = s.batches[b].features;
      ASSERT_EQ(s.labels[b][static_cast<std::size_t>(r)], sine2_label(x(r, 0), x(r, 1), static_cast<int>(sample / spec.concept_length)));
    }
  }
}

TEST(StationaryGaussian, NoDriftTruth) {
  auto spec = StreamSpec::defaults_for(GeneratorKind::StationaryGaussian);
  const auto s = make_stream(spec);
  EXPECT_EQ(s.size(), 500u);
  EXPECT_TRUE(s.drift_truth.empty());
}

TEST(Composite, SuddenScheduleAndSingleClassInjection) {
  auto spec = StreamSpec::defaults_for(GeneratorKind::Composite);
  spec.seed = 2;
  spec.composite.clusters.base_size = 2000;
  spec.composite.clusters.drift_size = 2000;
  const auto [base, drift] = make_cluster_pools(spec.composite.clusters, spec.seed);
  const auto s = gen_composite(spec, base, drift);
  EXPECT_EQ(s.drift_truth, (std::vector<Step>{100, 200, 300, 400, 500, 600, 700, 800, 900}));

  auto from_drift = [&](std::size_t b) {
    std::vector<int> classes;
    for (Eigen::Index r = 0; r < s.batches[b].rows(); ++r) {
      const auto row = s.batches[b].features.row(r);
      for (Eigen::Index i = 0; i < drift.size(); ++i)
        if (drift.features.row(i) == row) {
          classes.push_back(drift.labels[static_cast<std::size_t>(i)]);
          break;
        }
    }
    return classes;
  };
  EXPECT_TRUE(from_drift(50).empty());
  for (std::size_t b = 0; b < 100; b += 9) EXPECT_TRUE(from_drift(b).empty()) << b;
  const auto at150 = from_drift(150);
  EXPECT_EQ(static_cast<int>(at150.size()), static_cast<int>(std::lround(spec.composite.peak_fraction * spec.batch_size)));
  EXPECT_EQ(std::set<int>(at150.begin(), at150.end()), std::set<int>{0});
  const auto at250 = from_drift(250);
  EXPECT_EQ(std::set<int>(at250.begin(), at250.end()), std::set<int>{1});
}

TEST(Composite, MixingFractionSchedules) {
  CompositeConfig c;
  c.peak_fraction = 0.5;
  const long nb = 1000;
  c.scenario = Scenario::Sudden;
  EXPECT_EQ(mixing_fraction(c, 50, nb), 0.0);
  EXPECT_EQ(mixing_fraction(c, 150, nb), 0.5);
  c.scenario = Scenario::GradDecrease;
  EXPECT_NEAR(mixing_fraction(c, nb - 1, nb), 0.0, 1e-2);
  EXPECT_NEAR(mixing_fraction(c, 500, nb), 0.5, 1e-12);
  c.scenario = Scenario::GradPlateau;
  EXPECT_NEAR(mixing_fraction(c, 250, nb), 0.25, 1e-12);
  EXPECT_NEAR(mixing_fraction(c, 900, nb), 0.5, 1e-12);
  c.scenario = Scenario::GradIncrease;
  EXPECT_NEAR(mixing_fraction(c, nb - 1, nb), 0.5, 1e-12);
  c.scenario = Scenario::SuddenGradual;
  EXPECT_EQ(mixing_fraction(c, 99, nb), 0.0);
  EXPECT_LT(mixing_fraction(c, 110, nb), mixing_fraction(c, 160, nb));
}

TEST(Composite, GradualScenariosHaveNoTruth) {
  auto spec = StreamSpec::defaults_for(GeneratorKind::Composite);
  spec.composite.scenario = Scenario::GradPlateau;
  spec.total_samples = 64 * 120;
  spec.composite.clusters.base_size = 500;
  spec.composite.clusters.drift_size = 500;
  EXPECT_TRUE(make_stream(spec).drift_truth.empty());
}

TEST(Composite, RejectsMismatchedPools) {
  auto spec = StreamSpec::defaults_for(GeneratorKind::Composite);
  ClusterPoolConfig a, b;
  a.base_size = a.drift_size = b.base_size = b.drift_size = 100;
  b.dim = 7;
  const auto pa = make_cluster_pools(a, 1);
  const auto pb = make_cluster_pools(b, 1);
  EXPECT_THROW(gen_composite(spec, pa.first, pb.second), DimensionError);
}

TEST(Csv, ParsesAndScales) {
  const auto path = write_temp("ok.csv", "a,b,label\n1,10,x\n2,10,y\n3,10,x\n");
  const auto pool = load_csv(path);
  EXPECT_EQ(pool.size(), 3);
  EXPECT_EQ(pool.dim(), 2);
  EXPECT_EQ(pool.labels, (Labels{0, 1, 0}));
  EXPECT_DOUBLE_EQ(pool.features(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(pool.features(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(pool.features(2, 0), 1.0);
  for (int r = 0; r < 3; ++r) EXPECT_EQ(pool.features(r, 1), 0.0);  // constant column
}

TEST(Csv, MissingValueNamesRowAndColumn) {
  const auto path = write_temp("missing.csv", "a,b,label\n1,2,0\n3,,1\n");
  try {
    load_csv(path);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("column 2"), std::string::npos) << msg;
  }
}

TEST(Csv, ErrorCases) {
  EXPECT_THROW(load_csv(write_temp("empty.csv", "")), Error);
  EXPECT_THROW(load_csv(write_temp("text.csv", "a,label\nabc,1\n")), Error);
  EXPECT_THROW(load_csv(write_temp("nolabel.csv", "a,b,label\n1,2\n")), Error);
  EXPECT_THROW(load_csv("/nonexistent/file.csv"), Error);
}

TEST(Csv, StreamFromFile) {
  std::string body = "f,label\n";
  for (int i = 0; i < 130; ++i) body += std::to_string(i) + "," + std::to_string(i % 2) + "\n";
  StreamSpec spec = StreamSpec::defaults_for(GeneratorKind::Csv);
  spec.csv_path = write_temp("stream.csv", body);
  const auto s = make_stream(spec);
  EXPECT_EQ(s.size(), 2u);  // incomplete final batch dropped
  EXPECT_TRUE(s.drift_truth.empty());
}

TEST(LagSchedule, FixedLagDeliveries) {
  StreamSpec spec;
  spec.total_samples = 5 * 64;
  const auto s = make_stream(spec);
  const auto sched = schedule_labels(s, LagPolicy::fixed_lag(2));
  ASSERT_EQ(sched.size(), 5u);
  EXPECT_TRUE(sched[0].deliveries.empty());
  EXPECT_TRUE(sched[1].deliveries.empty());
  for (int n = 2; n < 5; ++n) {
    ASSERT_EQ(sched[static_cast<std::size_t>(n)].deliveries.size(), 1u);
    EXPECT_EQ(sched[static_cast<std::size_t>(n)].deliveries[0].for_step, n - 2);
    EXPECT_EQ(sched[static_cast<std::size_t>(n)].deliveries[0].labels, s.labels[static_cast<std::size_t>(n - 2)]);
  }
}

TEST(LagSchedule, UnitLagDeliversEveryStep) {
  StreamSpec spec;
  spec.total_samples = 40 * 64;
  const auto sched = schedule_labels(make_stream(spec), LagPolicy::fixed_lag(1));
  for (std::size_t n = 1; n < sched.size(); ++n) ASSERT_EQ(sched[n].deliveries.size(), 1u);
}

TEST(LagSchedule, ExponentialMeanMatchesAnalyticExpectation) {
  // E[max(1, floor(X))], X ~ Exp(mean 4): P(floor X >= k) = q^k, q = e^{-1/4},
  // so the mean is (1 - q) + q / (1 - q).
  const double q = std::exp(-1.0 / 4.0);
  const double analytic = (1.0 - q) + q / (1.0 - q);
  EXPECT_NEAR(expected_clamped_floor_lag(4.0), analytic, 1e-9);
  StreamSpec spec;
  spec.total_samples = 10000L * 64;
  spec.generator = GeneratorKind::StationaryGaussian;
  const auto s = make_stream(spec);
  LabelScheduler sched(s, LagPolicy::exponential(4.0, 99));
  while (!sched.done()) sched.next();
  double mean = 0.0;
  for (int l : sched.lags()) {
    ASSERT_GE(l, 1);
    mean += l;
  }
  mean /= static_cast<double>(sched.lags().size());
  EXPECT_NEAR(mean, analytic, 0.2);
}

TEST(LagSchedule, ConservationAndOrdering) {
  StreamSpec spec;
  spec.total_samples = 300 * 64;
  const auto s = make_stream(spec);
  LabelScheduler sched(s, LagPolicy::exponential(4.0, 7));
  std::map<Step, int> delivered;
  std::vector<ScheduledStep> all;
  while (!sched.done()) all.push_back(sched.next());
  for (std::size_t n = 0; n < all.size(); ++n) {
    Step prev = -1;
    for (const auto& d : all[n].deliveries) {
      EXPECT_GT(d.for_step, prev);
      EXPECT_EQ(d.delivered_at, static_cast<Step>(n));
      EXPECT_EQ(d.delivered_at - d.for_step, sched.lags()[static_cast<std::size_t>(d.for_step)]);
      prev = d.for_step;
      ++delivered[d.for_step];
    }
  }
  for (std::size_t n = 0; n < all.size(); ++n) {
    const bool in_horizon = static_cast<std::size_t>(n + sched.lags()[n]) < all.size();
    EXPECT_EQ(delivered.count(static_cast<Step>(n)) ? delivered[static_cast<Step>(n)] : 0, in_horizon ? 1 : 0) << n;
  }
}

TEST(LagSchedule, DeterministicUnderSeed) {
  StreamSpec spec;
  spec.total_samples = 200 * 64;
  const auto s = make_stream(spec);
  auto a = schedule_labels(s, LagPolicy::exponential(4.0, 3));
  auto b = schedule_labels(s, LagPolicy::exponential(4.0, 3));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].deliveries.size(), b[i].deliveries.size());
    for (std::size_t j = 0; j < a[i].deliveries.size(); ++j) EXPECT_EQ(a[i].deliveries[j].for_step, b[i].deliveries[j].for_step);
  }
}

TEST(StreamSpec, Validation) {
  StreamSpec s;
  s.batch_size = 0;
  EXPECT_THROW(s.validate(), Error);
  StreamSpec c = StreamSpec::defaults_for(GeneratorKind::Csv);
  EXPECT_THROW(c.validate(), Error);
  EXPECT_THROW(LagPolicy::exponential(0.0).validate(), Error);
  EXPECT_THROW(LagPolicy::fixed_lag(0).validate(), Error);
}
