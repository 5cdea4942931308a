#include <algorithm>
#include <filesystem>

#include <gtest/gtest.h>

#include "knobs/retrieval.hpp"
#include "support/constructed.hpp"

using knobs::Matrix;
using knobs::corpus::Polarity;
using namespace knobs::retrieval;

namespace {

SequenceFeatureVector vec(std::vector<double> f, Polarity p, std::string id = "s") {
  return {std::move(f), std::move(id), p};
}

// Independent reference: counts by polarity, filters, then sorts by repeated
// selection of the best remaining element.
std::vector<Candidate> brute_force(const std::vector<SequenceFeatureVector>& vs, const RetrievalConfig& c) {
  const std::size_t m = vs.front().features.size();
  std::vector<Candidate> pool;
  for (std::size_t j = 0; j < m; ++j) {
    std::size_t np = 0, nn = 0, hp = 0, hn = 0;
    double sp = 0, sn = 0;
    for (const auto& v : vs) {
      const bool active = v.features[j] > 0;
      if (v.polarity == Polarity::positive) {
        ++np;
        if (active) { ++hp; sp += v.features[j]; }
      } else {
        ++nn;
        if (active) { ++hn; sn += v.features[j]; }
      }
    }
    const double pf = double(hp) / double(np), nf = double(hn) / double(nn);
    const double delta = pf > nf ? pf - nf : nf - pf;
    const bool pos_dom = pf >= nf;
    const double mean = pos_dom ? (hp ? sp / double(hp) : 0.0) : (hn ? sn / double(hn) : 0.0);
    if (delta >= c.tau1 && (pf >= c.tau2 || nf >= c.tau2)) {
      pool.push_back({c.layer, j, delta, pf, nf, mean, pos_dom ? Polarity::positive : Polarity::negative});
    }
  }
  std::vector<Candidate> ranked;
  while (!pool.empty() && ranked.size() < c.top_k) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < pool.size(); ++i) {
      const auto& a = pool[i];
      const auto& b = pool[best];
      if (std::tie(b.delta, b.active_mean) < std::tie(a.delta, a.active_mean) ||
          (a.delta == b.delta && a.active_mean == b.active_mean && a.feature < b.feature)) {
        best = i;
      }
    }
    ranked.push_back(pool[best]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return ranked;
}

}  // namespace

TEST(Aggregate, CoordinatewiseMax) {
  EXPECT_EQ(aggregate_sequence(Matrix{{1, 0}, {0, 2}, {0.5, 0.5}}), (std::vector<double>{1, 2}));
}

TEST(Aggregate, SingletonIsIdentity) {
  EXPECT_EQ(aggregate_sequence(Matrix{{0.25, 3, 0}}), (std::vector<double>{0.25, 3, 0}));
}

TEST(Aggregate, OrderInvariantAndMonotoneUnderAppend) {
  knobs::SeededRng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t T = 1 + rng.below(6), m = 1 + rng.below(5);
    Matrix a(T, m);
    for (double& x : a.data()) x = std::max(0.0, rng.normal());
    Matrix reversed(T, m);
    for (std::size_t t = 0; t < T; ++t) {
      std::copy(a.row(t).begin(), a.row(t).end(), reversed.row(T - 1 - t).begin());
    }
    const auto f = aggregate_sequence(a);
    EXPECT_EQ(f, aggregate_sequence(reversed));
    Matrix longer(T + 1, m);
    std::copy(a.data().begin(), a.data().end(), longer.data().begin());
    for (std::size_t j = 0; j < m; ++j) longer(T, j) = std::max(0.0, rng.normal());
    const auto g = aggregate_sequence(longer);
    for (std::size_t j = 0; j < m; ++j) EXPECT_GE(g[j], f[j]);
  }
}

TEST(Aggregate, EmptySequenceThrows) {
  EXPECT_THROW(aggregate_sequence(Matrix(0, 3)), knobs::DataError);
}

TEST(FrequencyDifference, NineOfTenVersusOneOfTen) {
  std::vector<SequenceFeatureVector> vs;
  for (int i = 0; i < 10; ++i) vs.push_back(vec({i < 9 ? 1.0 : 0.0}, Polarity::positive));
  for (int i = 0; i < 10; ++i) vs.push_back(vec({i < 1 ? 1.0 : 0.0}, Polarity::negative));
  const auto s = frequency_difference(vs);
  EXPECT_DOUBLE_EQ(s.features[0].delta, 0.8);
  EXPECT_EQ(s.features[0].dominant(), Polarity::positive);
}

TEST(FrequencyDifference, UbiquitousFeatureCancels) {
  const auto s = frequency_difference({vec({2.0}, Polarity::positive), vec({0.1}, Polarity::negative)});
  EXPECT_EQ(s.features[0].delta, 0.0);
}

TEST(FrequencyDifference, OnePolarityMissingThrows) {
  EXPECT_THROW(frequency_difference({vec({1.0}, Polarity::positive)}), knobs::DataError);
  EXPECT_THROW(frequency_difference({}), knobs::DataError);
}

TEST(FrequencyDifference, LabelSwapAndDuplicationInvariance) {
  knobs::SeededRng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<SequenceFeatureVector> vs;
    const std::size_t m = 6;
    for (int i = 0; i < 12; ++i) {
      std::vector<double> f(m);
      for (double& x : f) x = rng.uniform() < 0.5 ? 0.0 : rng.uniform();
      vs.push_back(vec(f, i % 2 ? Polarity::negative : Polarity::positive));
    }
    const auto base = frequency_difference(vs);
    auto swapped = vs;
    for (auto& v : swapped) v.polarity = v.polarity == Polarity::positive ? Polarity::negative : Polarity::positive;
    auto doubled = vs;
    doubled.insert(doubled.end(), vs.begin(), vs.end());
    const auto s = frequency_difference(swapped);
    const auto d = frequency_difference(doubled);
    for (std::size_t j = 0; j < m; ++j) {
      EXPECT_EQ(s.features[j].delta, base.features[j].delta);
      EXPECT_EQ(d.features[j].pos_freq, base.features[j].pos_freq);
      EXPECT_EQ(d.features[j].neg_freq, base.features[j].neg_freq);
      EXPECT_EQ(d.features[j].delta, base.features[j].delta);
    }
  }
}

TEST(SelectCandidates, ThresholdExampleKeepsTopTwoInOrder) {
  FeatureStats s;
  s.positive_count = s.negative_count = 10;
  s.features = {{0.95, 0.65, 0.3, 1.0}, {0.9, 0.0, 0.9, 1.0}, {1.0, 0.3, 0.7, 1.0}};
  RetrievalConfig c;
  const auto out = select_candidates(s, c);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].feature, 1u);
  EXPECT_EQ(out[1].feature, 2u);
}

TEST(SelectCandidates, ZeroThresholdsKeepEverything) {
  FeatureStats s;
  s.features.resize(7);
  RetrievalConfig c{0.0, 0.0, 100, 0};
  EXPECT_EQ(select_candidates(s, c).size(), 7u);
}

TEST(SelectCandidates, UnsatisfiableThresholdGivesEmpty) {
  FeatureStats s;
  s.features = {{0.9, 0.1, 0.8, 1.0}, {0.5, 0.0, 0.5, 1.0}};
  RetrievalConfig c;
  c.tau1 = 1.0;
  EXPECT_TRUE(select_candidates(s, c).empty());
}

TEST(SelectCandidates, ThresholdsOutsideUnitIntervalRejected) {
  RetrievalConfig c;
  c.tau2 = 1.5;
  EXPECT_THROW(select_candidates({}, c), knobs::ConfigError);
}

TEST(SelectCandidates, MatchesBruteForceOnRandomInstances) {
  knobs::SeededRng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + rng.below(12);
    const std::size_t n_pos = 1 + rng.below(6), n_neg = 1 + rng.below(6);
    std::vector<SequenceFeatureVector> vs;
    for (std::size_t i = 0; i < n_pos + n_neg; ++i) {
      std::vector<double> f(m);
      // Coarse values so ties in both Δf and mean occur often.
      for (double& x : f) x = rng.uniform() < 0.5 ? 0.0 : double(1 + rng.below(3));
      vs.push_back(vec(f, i < n_pos ? Polarity::positive : Polarity::negative));
    }
    RetrievalConfig c{rng.uniform(), rng.uniform(), 1 + rng.below(8), rng.below(4)};
    const auto got = select_candidates(frequency_difference(vs), c);
    ASSERT_EQ(got, brute_force(vs, c)) << "trial " << trial;
    for (const auto& cand : got) {
      EXPECT_GE(cand.delta, c.tau1);
      EXPECT_GE(std::max(cand.pos_freq, cand.neg_freq), c.tau2);
    }
    EXPECT_EQ(got, select_candidates(frequency_difference(vs), c));
  }
}

TEST(Candidates, FileRoundTrip) {
  const std::vector<Candidate> cs{{2, 17, 0.85, 0.9, 0.05, 1.25, Polarity::positive},
                                  {2, 3, 0.7, 0.1, 0.8, 0.3333333333333333, Polarity::negative}};
  const auto path = std::filesystem::temp_directory_path() / "knobs_test_candidates.json";
  save_candidates(cs, path);
  EXPECT_EQ(load_candidates(path), cs);
  std::filesystem::remove(path);
}

TEST(CapturePairFeatures, CardinalityAndIdenticalSides) {
  auto plan = knobs::corpus::PlantedSpec::defaults();
  plan.pair_count = 6;
  const auto lm = knobs::testing::constructed_lm(plan, false);
  const auto sae = knobs::testing::constructed_sae();
  auto pairs = knobs::corpus::generate_planted_text_corpus(plan).pairs;
  const auto vs = capture_pair_features(pairs, lm, sae, 1);
  ASSERT_EQ(vs.size(), 12u);
  EXPECT_EQ(std::count_if(vs.begin(), vs.end(), [](auto& v) { return v.polarity == Polarity::positive; }), 6);
  pairs[0].negative = pairs[0].positive;
  const auto same = capture_pair_features({pairs[0]}, lm, sae, 1);
  EXPECT_EQ(same[0].features, same[1].features);
}

TEST(CapturePairFeatures, MarkerExcludedFromPool) {
  // Feature 5 (axis 5) fires only on the sequence-start embedding.
  auto plan = knobs::corpus::PlantedSpec::defaults();
  plan.pair_count = 3;
  const auto lm = knobs::testing::constructed_lm(plan, false);
  auto sae = knobs::testing::constructed_sae();
  sae.w_enc = Matrix(knobs::testing::kConstructedDim, 1);
  sae.w_enc(5, 0) = 1.0;
  sae.b_enc = {-0.5};
  sae.w_dec = Matrix(1, knobs::testing::kConstructedDim);
  const auto vs = capture_pair_features(knobs::corpus::generate_planted_text_corpus(plan).pairs, lm, sae, 0);
  for (const auto& v : vs) EXPECT_EQ(v.features[0], 0.0);
}

TEST(CapturePairFeatures, OverlongSampleSkippedNotFatal) {
  auto plan = knobs::corpus::PlantedSpec::defaults();
  plan.pair_count = 2;
  const auto lm = knobs::testing::constructed_lm(plan, false);
  auto pairs = knobs::corpus::generate_planted_text_corpus(plan).pairs;
  std::string longer;
  for (int i = 0; i < 100; ++i) longer += " bright";
  pairs[0].positive += longer;
  const auto vs = capture_pair_features(pairs, lm, knobs::testing::constructed_sae(), 1);
  EXPECT_EQ(vs.size(), 3u);
}

TEST(CapturePairFeatures, MarkerFeatureSeparatesPerfectly) {
  auto plan = knobs::corpus::PlantedSpec::defaults();
  plan.pair_count = 40;
  plan.marker_token = "zqx";
  const auto lm = knobs::testing::constructed_lm(plan, false);
  const auto vs = capture_pair_features(knobs::corpus::generate_planted_text_corpus(plan).pairs, lm,
                                        knobs::testing::constructed_sae(), 1);
  const auto s = frequency_difference(vs);
  EXPECT_EQ(s.features[4].pos_freq, 1.0);
  EXPECT_EQ(s.features[4].neg_freq, 0.0);
}

TEST(CapturePairFeatures, PlantedFeaturesRankFirstAndSecond) {
  auto plan = knobs::corpus::PlantedSpec::defaults();
  plan.pair_count = 100;
  const auto lm = knobs::testing::constructed_lm(plan, false);
  const auto vs = capture_pair_features(knobs::corpus::generate_planted_text_corpus(plan).pairs, lm,
                                        knobs::testing::constructed_sae(), 1);
  RetrievalConfig c;
  c.layer = 1;
  const auto ranked = select_candidates(frequency_difference(vs), c);
  ASSERT_GE(ranked.size(), 2u);
  std::vector<std::size_t> top{ranked[0].feature, ranked[1].feature};
  std::sort(top.begin(), top.end());
  EXPECT_EQ(top, (std::vector<std::size_t>{0, 1}));
  EXPECT_GE(ranked[1].delta, 0.9);
  EXPECT_EQ(ranked[0].dominant, Polarity::positive);
  EXPECT_EQ(ranked[1].dominant, Polarity::negative);
}
