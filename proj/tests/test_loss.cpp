#include <gtest/gtest.h>

#include <set>

#include "dmwa/loss.hpp"
#include "gradient_check.hpp"

using namespace dmwa;
using dmwa::testing::compare_gradients;
using dmwa::testing::numeric_gradient;

namespace {

using Mat = Matrix<double>;
using Vec = Vector<double>;
using V = std::vector<double>;

Mat random_matrix(Index r, Index c, Rng& rng) {
  Mat m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

double loss_value(const Mat& s, const Mat& i, const QuadrupletBatch& q, const Vec& w, const LossConfig& c) {
  Tape<double> tape;
  return weighted_quadruplet_loss(tape.constant(s), tape.constant(i), q, w, c).total.value()(0, 0);
}

}  // namespace

TEST(SampleQuadruplets, TwoClassesForceNegatives) {
  const std::vector<int> labels = {0, 0, 1, 1};
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = sample_quadruplets(labels, rng);
    ASSERT_EQ(q.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(q.anchor_sketch[i], static_cast<Index>(i));
      EXPECT_EQ(q.positive_image[i], static_cast<Index>(i));
      EXPECT_NE(labels[q.negative_image[i]], labels[i]);
      EXPECT_NE(labels[q.negative_sketch[i]], labels[i]);
    }
  }
}

TEST(SampleQuadruplets, PairHasUniqueChoice) {
  const std::vector<int> labels = {3, 7};
  Rng rng(2);
  const auto q = sample_quadruplets(labels, rng);
  EXPECT_EQ(q.negative_image, (std::vector<Index>{1, 0}));
  EXPECT_EQ(q.negative_sketch, (std::vector<Index>{1, 0}));
}

TEST(SampleQuadruplets, SingleClassThrows) {
  const std::vector<int> labels = {5, 5, 5, 5};
  Rng rng(3);
  EXPECT_THROW(sample_quadruplets(labels, rng), NoNegativeError);
}

TEST(SampleQuadruplets, DeterministicAndCoversCandidates) {
  const std::vector<int> labels = {0, 1, 2, 3, 0, 1};
  Rng a(4), b(4);
  const auto qa = sample_quadruplets(labels, a);
  const auto qb = sample_quadruplets(labels, b);
  EXPECT_EQ(qa.negative_image, qb.negative_image);
  EXPECT_EQ(qa.negative_sketch, qb.negative_sketch);
  std::set<Index> seen;
  Rng rng(5);
  for (int t = 0; t < 200; ++t) seen.insert(sample_quadruplets(labels, rng).negative_image[0]);
  EXPECT_EQ(seen, (std::set<Index>{1, 2, 3, 5}));
}

TEST(Triplet, HandExamples) {
  EXPECT_EQ(triplet_original(V{0}, V{1}, V{3}, 0.3), 0.0);
  EXPECT_NEAR(triplet_original(V{0}, V{1}, V{1.1}, 0.3), 0.2, 1e-12);
  EXPECT_EQ(triplet_original(V{1, 2}, V{1, 2}, V{4, 0}, 0.0), 0.0);
  EXPECT_EQ(triplet_domain(V{0, 0}, V{0, 1}, V{2, 0}, 0.5), 0.0);
  EXPECT_EQ(triplet_domain(V{1, 1}, V{1, 1}, V{0, 0}, 0.0), 0.0);
  EXPECT_NEAR(triplet_domain(V{0}, V{1}, V{1.1}, 0.3), 0.2, 1e-12);
  EXPECT_THROW(triplet_original(V{0}, V{1, 2}, V{0}, 0.3), DimensionError);
}

TEST(WeightedLoss, SingleSlotSum) {
  // anchor 0, positive 1, image negative 1.1 -> 0.2; sketch negative 1.0 -> 0.3
  Mat s(2, 1), i(2, 1);
  s << 0.0, 1.0;
  i << 1.0, 1.1;
  QuadrupletBatch q;
  q.anchor_sketch = {0};
  q.positive_image = {0};
  q.negative_image = {1};
  q.negative_sketch = {1};
  Tape<double> tape;
  const auto out = weighted_quadruplet_loss(tape.constant(s), tape.constant(i), q, Vec(Vec::Ones(1)), LossConfig{});
  EXPECT_NEAR(out.original_sum, 0.2, 1e-12);
  EXPECT_NEAR(out.domain_sum, 0.3, 1e-12);
  EXPECT_NEAR(out.total.value()(0, 0), 0.5, 1e-12);
}

TEST(WeightedLoss, WeightedDotProduct) {
  // per-slot sums 0.4 and 0.1 with weights 0.5 and 2.0
  Mat s(4, 1), i(4, 1);
  s << 0.0, 10.0, 10.0, 10.0;
  i << 1.0, 10.0, 1.1, 1.2;
  s(2) = 0.8;
  QuadrupletBatch q;
  q.anchor_sketch = {0, 0};
  q.positive_image = {0, 0};
  q.negative_image = {2, 3};   // image hinges 0.2, 0.1
  q.negative_sketch = {2, 1};  // sketch hinges 0.2, 0
  LossConfig c;
  c.beta = 0.0;
  Vec w(2);
  w << 0.5, 2.0;
  Tape<double> tape;
  const auto out = weighted_quadruplet_loss(tape.constant(s), tape.constant(i), q, w, c);
  EXPECT_NEAR(out.original.value()(0, 0) + out.domain.value()(0, 0), 0.4, 1e-12);
  EXPECT_NEAR(out.original.value()(1, 0) + out.domain.value()(1, 0), 0.1, 1e-12);
  EXPECT_NEAR(out.total.value()(0, 0), 0.4, 1e-12);
}

TEST(WeightedLoss, ZeroWeightsAnnihilate) {
  Rng rng(6);
  const std::vector<int> labels = {0, 1, 0, 1};
  const auto q = sample_quadruplets(labels, rng);
  Tape<double> tape;
  const auto s = tape.variable(random_matrix(4, 5, rng));
  const auto i = tape.variable(random_matrix(4, 5, rng));
  const auto out = weighted_quadruplet_loss(s, i, q, Vec(Vec::Zero(4)), LossConfig{});
  EXPECT_EQ(out.total.value()(0, 0), 0.0);
  tape.backward(out.total);
  EXPECT_EQ(tape.gradient(s), Mat::Zero(4, 5));
  EXPECT_EQ(tape.gradient(i), Mat::Zero(4, 5));
}

TEST(WeightedLoss, LengthMismatchThrows) {
  Rng rng(7);
  const std::vector<int> labels = {0, 1};
  const auto q = sample_quadruplets(labels, rng);
  Tape<double> tape;
  EXPECT_THROW(weighted_quadruplet_loss(tape.constant(Mat::Zero(2, 3)), tape.constant(Mat::Zero(2, 3)), q,
                                        Vec(Vec::Ones(3)), LossConfig{}),
               DimensionError);
}

TEST(WeightedLoss, NegativeMarginRejected) {
  LossConfig c;
  c.alpha = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(WeightedLoss, LinearInWeights) {
  Rng rng(8);
  const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
  const auto q = sample_quadruplets(labels, rng);
  const Mat sv = random_matrix(6, 4, rng), iv = random_matrix(6, 4, rng);
  Vec w(6);
  for (Index k = 0; k < 6; ++k) w(k) = rng.uniform();
  auto run = [&](const Vec& weights, Mat* gs, Mat* gi) {
    Tape<double> tape;
    const auto s = tape.variable(sv);
    const auto i = tape.variable(iv);
    const auto out = weighted_quadruplet_loss(s, i, q, weights, LossConfig{});
    tape.backward(out.total);
    *gs = tape.gradient(s);
    *gi = tape.gradient(i);
    return out.total.value()(0, 0);
  };
  Mat gs1, gi1, gs2, gi2;
  const double l1 = run(w, &gs1, &gi1);
  const double l2 = run(2.0 * w, &gs2, &gi2);
  EXPECT_EQ(l2, 2.0 * l1);
  EXPECT_EQ(gs2, 2.0 * gs1);
  EXPECT_EQ(gi2, 2.0 * gi1);
}

TEST(WeightedLoss, NonNegativeAndZeroWhenMarginsHold) {
  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    const std::vector<int> labels = {0, 1, 0, 1};
    const auto q = sample_quadruplets(labels, rng);
    Vec w(4);
    for (Index k = 0; k < 4; ++k) w(k) = rng.uniform();
    EXPECT_GE(loss_value(random_matrix(4, 3, rng), random_matrix(4, 3, rng), q, w, LossConfig{}), 0.0);
  }
  // classes far apart: every margin satisfied
  Mat s(2, 1), i(2, 1);
  s << 0.0, 10.0;
  i << 0.1, 10.1;
  const std::vector<int> labels = {0, 1};
  Rng r(10);
  EXPECT_EQ(loss_value(s, i, sample_quadruplets(labels, r), Vec(Vec::Ones(2)), LossConfig{}), 0.0);
}

TEST(WeightedLoss, TripletOnlyDropsDomainTerm) {
  Rng rng(11);
  const std::vector<int> labels = {0, 1, 2, 0};
  const auto q = sample_quadruplets(labels, rng);
  const Mat s = random_matrix(4, 3, rng), i = random_matrix(4, 3, rng);
  LossConfig full;
  LossConfig triplet;
  triplet.triplet_only = true;
  Tape<double> tape;
  const auto a = weighted_quadruplet_loss(tape.constant(s), tape.constant(i), q, Vec(Vec::Ones(4)), full);
  const auto b = weighted_quadruplet_loss(tape.constant(s), tape.constant(i), q, Vec(Vec::Ones(4)), triplet);
  EXPECT_EQ(b.domain_sum, 0.0);
  EXPECT_EQ(b.original_sum, a.original_sum);
  EXPECT_NEAR(a.total.value()(0, 0), b.total.value()(0, 0) + a.domain_sum, 1e-12);
  // per-slot oracle for the plain triplet
  double oracle = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    V anc(3), pos(3), neg(3);
    for (Index c = 0; c < 3; ++c) {
      anc[c] = s(q.anchor_sketch[k], c);
      pos[c] = i(q.positive_image[k], c);
      neg[c] = i(q.negative_image[k], c);
    }
    oracle += triplet_original(anc, pos, neg, 0.3);
  }
  EXPECT_NEAR(b.total.value()(0, 0), oracle, 1e-12);
}

TEST(WeightedLoss, MeanReductionDividesByBatch) {
  Rng rng(12);
  const std::vector<int> labels = {0, 1, 0, 1};
  const auto q = sample_quadruplets(labels, rng);
  const Mat s = random_matrix(4, 3, rng), i = random_matrix(4, 3, rng);
  LossConfig mean;
  mean.reduction = Reduction::mean;
  EXPECT_NEAR(loss_value(s, i, q, Vec(Vec::Ones(4)), mean), loss_value(s, i, q, Vec(Vec::Ones(4)), LossConfig{}) / 4.0, 1e-12);
}

TEST(WeightedLoss, GradientMatchesFiniteDifferences) {
  Rng rng(13);
  const std::vector<int> labels = {0, 1, 2, 0, 1};
  const auto q = sample_quadruplets(labels, rng);
  Mat sv = random_matrix(5, 4, rng), iv = random_matrix(5, 4, rng);
  Vec w(5);
  for (Index k = 0; k < 5; ++k) w(k) = 0.5 + rng.uniform();
  LossConfig c;
  c.alpha = 1.0;
  c.beta = 1.0;
  Tape<double> tape;
  const auto s = tape.variable(sv);
  const auto i = tape.variable(iv);
  tape.backward(weighted_quadruplet_loss(s, i, q, w, c).total);
  auto f = [&] { return loss_value(sv, iv, q, w, c); };
  const auto cs = compare_gradients(tape.gradient(s), numeric_gradient(sv, f));
  const auto ci = compare_gradients(tape.gradient(i), numeric_gradient(iv, f));
  EXPECT_TRUE(cs.ok) << cs.detail;
  EXPECT_TRUE(ci.ok) << ci.detail;
}

TEST(WeightedLoss, InactiveHingeHasZeroGradient) {
  Mat sv(2, 1), iv(2, 1);
  sv << 0.0, 10.0;
  iv << 0.0, 10.0;
  QuadrupletBatch q;
  q.anchor_sketch = {0};
  q.positive_image = {0};
  q.negative_image = {1};
  q.negative_sketch = {1};
  LossConfig c;
  c.alpha = 10.0;  // exactly at the kink: 0 - 10 + 10 = 0
  c.beta = 10.0;
  Tape<double> tape;
  const auto s = tape.variable(sv);
  const auto i = tape.variable(iv);
  const auto out = weighted_quadruplet_loss(s, i, q, Vec(Vec::Ones(1)), c);
  EXPECT_EQ(out.total.value()(0, 0), 0.0);
  tape.backward(out.total);
  EXPECT_EQ(tape.gradient(s), Mat::Zero(2, 1));
  EXPECT_EQ(tape.gradient(i), Mat::Zero(2, 1));
}
