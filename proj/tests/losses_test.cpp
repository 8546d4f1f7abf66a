#include "scala/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "scala/gradcheck.hpp"
#include "test_util.hpp"

using namespace scala;

namespace {

Tensor uniform_log_probs(int s_len, int vocab) {
  return Tensor::constant({s_len, vocab}, -std::log(static_cast<double>(vocab)));
}

TEST(CtcLossTest, SinglePathSingleFrame) {
  // S=1, V={blank,A}, p(A)=0.5 -> only path "A", loss = ln 2
  Tensor lp = uniform_log_probs(1, 2);
  Tensor loss = ctc_loss(lp, {1});
  EXPECT_NEAR(loss.value(), std::log(2.0), 1e-12);
}

TEST(CtcLossTest, ThreePathSum) {
  // S=2 uniform over {blank,A}: paths AA, -A, A- have total prob 0.75
  Tensor lp = uniform_log_probs(2, 2);
  Tensor loss = ctc_loss(lp, {1});
  EXPECT_NEAR(loss.value(), -std::log(0.75), 1e-12);
  EXPECT_NEAR(loss.value(), 0.287682072451781, 1e-12);
}

TEST(CtcLossTest, MatchesBruteForceEnumeration) {
  Rng rng(13);
  int tested = 0;
  while (tested < 400) {
    int s_len = 1 + rng.uniform_int(6);
    int vocab = 2 + rng.uniform_int(3);
    int n = 1 + rng.uniform_int(3);
    std::vector<int> y;
    for (int i = 0; i < n; ++i) y.push_back(1 + rng.uniform_int(vocab - 1));
    if (s_len < ctc_min_frames(y)) continue;
    Tensor logits = testutil::random_tensor({s_len, vocab}, rng, -2, 2);
    Tensor lp = log_softmax(logits, 1);
    double dp = ctc_loss(lp, y).value();
    double brute = oracle::ctc_loss_bruteforce(lp, y);
    ASSERT_NEAR(dp, brute, 1e-9) << "S=" << s_len << " V=" << vocab;
    ASSERT_GE(dp, -1e-12);
    ++tested;
  }
}

TEST(CtcLossTest, InfeasibleTargetRejected) {
  Tensor lp = uniform_log_probs(2, 3);
  // repeated token needs a separating blank: min frames = 3 > 2
  EXPECT_THROW(ctc_loss(lp, {1, 1}), InfeasibleTargetError);
  EXPECT_THROW(ctc_loss(uniform_log_probs(1, 3), {1, 2}),
               InfeasibleTargetError);
}

TEST(CtcLossTest, RejectsBlankInTarget) {
  Tensor lp = uniform_log_probs(3, 3);
  EXPECT_THROW(ctc_loss(lp, {0}), Error);
  EXPECT_THROW(ctc_loss(lp, {}), Error);
}

TEST(CtcLossTest, LongSequenceExtremeLogitsStayFinite) {
  Rng rng(17);
  const int s_len = 1000, vocab = 5;
  Tensor logits = testutil::random_tensor({s_len, vocab}, rng, -50, 50);
  Tensor lp = log_softmax(logits, 1);
  std::vector<int> y;
  for (int i = 0; i < 40; ++i) y.push_back(1 + rng.uniform_int(vocab - 1));
  Tensor loss = ctc_loss(lp, y);
  EXPECT_TRUE(std::isfinite(loss.value()));
  EXPECT_GE(loss.value(), 0.0);
}

TEST(CtcLossTest, GradientMatchesFiniteDifferences) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 211);
    int s_len = 3 + static_cast<int>(seed % 4);
    ParamStore params;
    params.add("logits", testutil::random_tensor({s_len, 4}, rng, -1.5, 1.5, true));
    std::vector<int> y = {1 + static_cast<int>(seed % 3), 3};
    auto loss = [&]() {
      return ctc_loss(log_softmax(params.get("logits"), 1), y);
    };
    EXPECT_LE(finite_diff_check(params, loss).max_rel_err, 1e-6)
        << "seed " << seed;
  }
}

AlignmentTrack track_with_labels(const std::vector<int>& labels) {
  AlignmentTrack track;
  track.labels = labels;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (!track.spans.empty() && track.spans.back().label == labels[i])
      track.spans.back().end = static_cast<int>(i) + 1;
    else
      track.spans.push_back({labels[i], static_cast<int>(i),
                             static_cast<int>(i) + 1});
  }
  return track;
}

MaskPlan plan_of(const std::vector<int>& indices, int s_len) {
  std::vector<bool> flags(static_cast<size_t>(s_len), false);
  for (int i : indices) flags[static_cast<size_t>(i)] = true;
  return MaskPlan::from_flags(flags);
}

TEST(SamplerTest, SupervisedFiltersSameLabel) {
  AlignmentTrack track = track_with_labels({1, 1, 2, 2, 3});
  ContrastiveConfig cfg;  // K=100
  Rng rng(1);
  auto samples = sample_contrastive(plan_of({0}, 5), track, cfg, rng);
  ASSERT_EQ(samples.size(), 1u);
  EXPECT_EQ(samples[0].anchor, 0);
  EXPECT_EQ(samples[0].negatives, (std::vector<int>{2, 3, 4}));
}

TEST(SamplerTest, UnsupervisedNoisyRateMatchesEnumeration) {
  // labels [A,A,B,B,C], anchor 0, K=1: candidates {1,2,3,4}, noisy iff 1
  AlignmentTrack track = track_with_labels({1, 1, 2, 2, 3});
  ContrastiveConfig cfg;
  cfg.supervised = false;
  cfg.negatives = 1;
  Rng rng(2);
  int noisy = 0;
  const int trials = 40000;
  for (int i = 0; i < trials; ++i) {
    auto samples = sample_contrastive(plan_of({0}, 5), track, cfg, rng);
    ASSERT_EQ(samples.size(), 1u);
    ASSERT_EQ(samples[0].negatives.size(), 1u);
    if (track.labels[static_cast<size_t>(samples[0].negatives[0])] == 1) ++noisy;
  }
  double rate = static_cast<double>(noisy) / trials;
  double sigma = std::sqrt(0.25 * 0.75 / trials);
  EXPECT_NEAR(rate, 0.25, 3 * sigma);
}

TEST(SamplerTest, DegenerateSingleLabelDropsAnchor) {
  AlignmentTrack track = track_with_labels({2, 2, 2, 2});
  ContrastiveConfig cfg;
  Rng rng(3);
  auto samples = sample_contrastive(plan_of({1}, 4), track, cfg, rng);
  EXPECT_TRUE(samples.empty());
}

TEST(SamplerTest, SupervisedNeverSamplesNoisyNegatives) {
  Rng rng(5);
  ContrastiveConfig cfg;
  cfg.negatives = 4;
  for (int trial = 0; trial < 300; ++trial) {
    int s_len = 2 + rng.uniform_int(12);
    std::vector<int> labels;
    for (int i = 0; i < s_len; ++i) labels.push_back(rng.uniform_int(4));
    AlignmentTrack track = track_with_labels(labels);
    std::vector<int> masked;
    for (int i = 0; i < s_len; ++i)
      if (rng.bernoulli(0.4)) masked.push_back(i);
    auto samples =
        sample_contrastive(plan_of(masked, s_len), track, cfg, rng);
    for (const auto& s : samples) {
      EXPECT_LE(static_cast<int>(s.negatives.size()), cfg.negatives);
      for (int k : s.negatives) {
        EXPECT_NE(k, s.anchor);
        EXPECT_NE(labels[static_cast<size_t>(k)], labels[static_cast<size_t>(s.anchor)]);
      }
    }
  }
}

TEST(SamplerTest, SilenceAnchorsExcludedWhenConfigured) {
  AlignmentTrack track = track_with_labels({0, 0, 1, 2});
  ContrastiveConfig cfg;
  Rng rng(7);
  auto with_sil = sample_contrastive(plan_of({0, 2}, 4), track, cfg, rng);
  EXPECT_EQ(with_sil.size(), 2u);
  auto without_sil =
      sample_contrastive(plan_of({0, 2}, 4), track, cfg, rng, /*silence=*/0);
  ASSERT_EQ(without_sil.size(), 1u);
  EXPECT_EQ(without_sil[0].anchor, 2);
}

TEST(SamplerTest, DeterministicUnderSeed) {
  AlignmentTrack track = track_with_labels({1, 2, 3, 1, 2, 3, 1, 2});
  ContrastiveConfig cfg;
  cfg.negatives = 3;
  Rng r1(11), r2(11);
  auto s1 = sample_contrastive(plan_of({0, 3, 5}, 8), track, cfg, r1);
  auto s2 = sample_contrastive(plan_of({0, 3, 5}, 8), track, cfg, r2);
  ASSERT_EQ(s1.size(), s2.size());
  for (size_t i = 0; i < s1.size(); ++i) {
    EXPECT_EQ(s1[i].anchor, s2[i].anchor);
    EXPECT_EQ(s1[i].negatives, s2[i].negatives);
  }
}

TEST(SclLossTest, ClosedFormSingleNegative) {
  // sim(c_m,q_m)=1, sim(c_m,q_n)=0, tau=0.1 -> ln(1+e^-10)
  Tensor c = Tensor::from_values({2, 2}, {1, 0, 0, 1});   // c_0=[1,0]
  Tensor q = Tensor::from_values({2, 2}, {2, 0, 0, 3});   // q_0=[2,0], q_1=[0,3]
  std::vector<ContrastiveSample> samples = {{0, {1}}};
  double loss = scl_loss(c, q, samples, 0.1).value();
  EXPECT_NEAR(loss, std::log(1.0 + std::exp(-10.0)), 1e-15);
  EXPECT_NEAR(loss, 4.5398899216870535e-05, 1e-12);
}

TEST(SclLossTest, UniformSimilaritiesGiveLogN) {
  // all q columns identical -> all similarities equal -> softmax uniform
  const int s_len = 101;
  std::vector<double> cv(static_cast<size_t>(2 * s_len), 0.0);
  std::vector<double> qv(static_cast<size_t>(2 * s_len));
  Rng rng(3);
  for (int j = 0; j < s_len; ++j) {
    cv[static_cast<size_t>(j)] = 0.3;        // row 0
    cv[static_cast<size_t>(s_len + j)] = -0.7;  // row 1
    qv[static_cast<size_t>(j)] = 1.0;
    qv[static_cast<size_t>(s_len + j)] = 2.0;
  }
  Tensor c = Tensor::from_values({2, s_len}, cv);
  Tensor q = Tensor::from_values({2, s_len}, qv);
  ContrastiveSample sample;
  sample.anchor = 0;
  for (int k = 1; k <= 100; ++k) sample.negatives.push_back(k);
  double loss = scl_loss(c, q, {sample}, 0.1).value();
  EXPECT_NEAR(loss, std::log(101.0), 1e-12);
  EXPECT_NEAR(loss, 4.61512051684126, 1e-10);
}

std::vector<ContrastiveSample> random_samples(int s_len, int max_anchors,
                                              Rng& rng) {
  std::vector<ContrastiveSample> samples;
  int n_anchors = 1 + rng.uniform_int(max_anchors);
  for (int a = 0; a < n_anchors; ++a) {
    ContrastiveSample s;
    s.anchor = rng.uniform_int(s_len);
    std::vector<int> pool;
    for (int k = 0; k < s_len; ++k)
      if (k != s.anchor) pool.push_back(k);
    s.negatives = rng.sample_without_replacement(
        pool, static_cast<size_t>(1 + rng.uniform_int(s_len - 1)));
    samples.push_back(std::move(s));
  }
  return samples;
}

TEST(SclLossTest, MatchesNaiveEvaluation) {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    int s_len = 3 + rng.uniform_int(10);
    Tensor c = testutil::random_tensor({4, s_len}, rng, -1, 1);
    Tensor q = testutil::random_tensor({4, s_len}, rng, -1, 1);
    auto samples = random_samples(s_len, 8, rng);
    double fused = scl_loss(c, q, samples, 0.1).value();
    double naive = oracle::scl_loss_naive(c, q, samples, 0.1);
    ASSERT_NEAR(fused, naive, 1e-10);
    ASSERT_GE(fused, -1e-12);
  }
}

TEST(SclLossTest, GradientMatchesFiniteDifferences) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 307);
    int s_len = 4 + static_cast<int>(seed % 5);
    ParamStore params;
    params.add("c", testutil::random_tensor({3, s_len}, rng, -1, 1, true));
    params.add("q", testutil::random_tensor({3, s_len}, rng, -1, 1, true));
    auto samples = random_samples(s_len, 4, rng);
    auto loss = [&]() {
      return scl_loss(params.get("c"), params.get("q"), samples, 0.1);
    };
    EXPECT_LE(finite_diff_check(params, loss).max_rel_err, 1e-5)
        << "seed " << seed;
  }
}

TEST(SclLossTest, StrictlyDecreasingInPositiveSimilarity) {
  // rotate q_0 toward c_0: higher positive similarity must lower the loss
  std::vector<ContrastiveSample> samples = {{0, {1, 2}}};
  double prev = std::numeric_limits<double>::infinity();
  for (double angle : {1.2, 0.8, 0.4, 0.1}) {
    Tensor c = Tensor::from_values({2, 3}, {1, 0.2, -0.3, 0, 0.5, 0.9});
    Tensor q = Tensor::from_values(
        {2, 3},
        {std::cos(angle), 0.2, -0.6, std::sin(angle), -0.8, 0.4});
    double loss = scl_loss(c, q, samples, 0.1).value();
    EXPECT_LT(loss, prev);
    prev = loss;
  }
}

TEST(SclLossTest, InvariantToPositiveColumnRescaling) {
  Rng rng(41);
  Tensor c = testutil::random_tensor({3, 6}, rng, -1, 1);
  Tensor q = testutil::random_tensor({3, 6}, rng, -1, 1);
  auto samples = random_samples(6, 3, rng);
  double base = scl_loss(c, q, samples, 0.1).value();
  // rescale one column of c and one of q
  Tensor c2 = c.detach();
  Tensor q2 = q.detach();
  for (int r = 0; r < 3; ++r) {
    c2.at(r, 2) *= 7.5;
    q2.at(r, 4) *= 0.03;
  }
  double scaled = scl_loss(c2, q2, samples, 0.1).value();
  EXPECT_NEAR(base, scaled, 1e-12);
}

TEST(SclLossTest, ZeroNormColumnRejected) {
  Tensor c = Tensor::from_values({2, 2}, {0, 1, 0, 1});  // c_0 = [0,0]
  Tensor q = Tensor::from_values({2, 2}, {1, 1, 1, 1});
  std::vector<ContrastiveSample> samples = {{0, {1}}};
  EXPECT_THROW(scl_loss(c, q, samples, 0.1), Error);
}

TEST(SclLossTest, EmptySamplesRejected) {
  Tensor c = Tensor::zeros({2, 2});
  Tensor q = Tensor::zeros({2, 2});
  EXPECT_THROW(scl_loss(c, q, {}, 0.1), Error);
}

}  // namespace
