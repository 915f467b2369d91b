#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "dmwa/rng.hpp"
#include "dmwa/tensor.hpp"
#include "dmwa/tensor_io.hpp"

using namespace dmwa;

namespace {

Matrix<double> random_matrix(Index r, Index c, Rng& rng, double scale = 1.0) {
  Matrix<double> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

Vector<double> random_distribution(Index n, Rng& rng) {
  Vector<double> v(n);
  for (Index i = 0; i < n; ++i) v(i) = rng.uniform(0.01, 1.0);
  return v / v.sum();
}

}  // namespace

TEST(Softmax, UniformInput) {
  Matrix<double> x = Matrix<double>::Zero(1, 3);
  const auto s = softmax(x, 1);
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(s(0, i), 1.0 / 3.0, 1e-12);
}

TEST(Softmax, LogInputsGiveProportions) {
  Matrix<double> x(1, 3);
  x << std::log(1.0), std::log(2.0), std::log(3.0);
  const auto s = softmax(x, 1);
  EXPECT_NEAR(s(0, 0), 1.0 / 6.0, 1e-12);
  EXPECT_NEAR(s(0, 1), 2.0 / 6.0, 1e-12);
  EXPECT_NEAR(s(0, 2), 3.0 / 6.0, 1e-12);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  Matrix<float> x(1, 2);
  x << 1000.0f, 0.0f;
  const auto s = softmax(x, 1);
  ASSERT_TRUE(all_finite(s));
  // 64-bit oracle: e^-1000 underflows to 0 as well.
  EXPECT_FLOAT_EQ(s(0, 0), 1.0f);
  EXPECT_NEAR(s(0, 1), 0.0f, 1e-30f);
}

TEST(Softmax, ColumnAxisSumsToOne) {
  Rng rng(3);
  const auto x = random_matrix(5, 4, rng, 3.0);
  const auto s = softmax(x, 0);
  for (Index c = 0; c < 4; ++c) EXPECT_NEAR(s.col(c).sum(), 1.0, 1e-6);
}

TEST(Softmax, InvalidAxisThrows) {
  Matrix<double> x = Matrix<double>::Zero(2, 2);
  EXPECT_THROW(softmax(x, 2), DimensionError);
}

TEST(SoftmaxProperty, RowsSumToOneForRandomInputs) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = random_matrix(1 + static_cast<Index>(rng.index(6)), 1 + static_cast<Index>(rng.index(9)), rng,
                                 rng.uniform(0.1, 50.0));
    const auto s = softmax(x, 1);
    for (Index r = 0; r < s.rows(); ++r) {
      EXPECT_NEAR(s.row(r).sum(), 1.0, 1e-6);
      EXPECT_TRUE((s.row(r).array() >= 0.0).all());
    }
  }
}

TEST(LayerNorm, ConstantVectorMapsToZero) {
  Matrix<double> x = Matrix<double>::Constant(1, 4, 2.5);
  const auto y = layer_norm(x, Matrix<double>::Ones(1, 4), Matrix<double>::Zero(1, 4));
  EXPECT_LT(y.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LayerNorm, TwoElementClosedForm) {
  Matrix<double> x(1, 2);
  x << 1.0, -1.0;
  const auto y = layer_norm(x, Matrix<double>::Ones(1, 2), Matrix<double>::Zero(1, 2));
  const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y(0, 0), expected, 1e-12);
  EXPECT_NEAR(y(0, 1), -expected, 1e-12);
}

TEST(L2Normalize, ThreeFourFive) {
  Vector<double> v(2);
  v << 3.0, 4.0;
  const auto n = l2_normalize(v);
  EXPECT_NEAR(n(0), 0.6, 1e-15);
  EXPECT_NEAR(n(1), 0.8, 1e-15);
}

TEST(L2Normalize, ZeroStaysZero) {
  const auto n = l2_normalize(Vector<double>::Zero(2));
  EXPECT_EQ(n(0), 0.0);
  EXPECT_EQ(n(1), 0.0);
}

TEST(L2NormalizeProperty, UnitNormForNonzeroInput) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto v = random_matrix(1 + static_cast<Index>(rng.index(20)), 1, rng, rng.uniform(1e-6, 1e6));
    EXPECT_NEAR(l2_normalize(v).norm(), 1.0, 1e-6);
  }
}

TEST(Kl, SelfDivergenceIsZero) {
  Rng rng(2);
  const auto p = random_distribution(7, rng);
  EXPECT_NEAR(kl_divergence(p, p), 0.0, 1e-9);
}

TEST(Kl, HandComputedPair) {
  Vector<double> p(2), q(2);
  p << 0.5, 0.5;
  q << 0.25, 0.75;
  // Oracle: direct summation of p_i (ln p_i - ln q_i).
  const double oracle = 0.5 * (std::log(0.5) - std::log(0.25)) + 0.5 * (std::log(0.5) - std::log(0.75));
  EXPECT_NEAR(oracle, 0.14384, 5e-6);
  EXPECT_NEAR(kl_divergence(p, q), oracle, 1e-12);
}

TEST(Kl, ContributionsSumToReduced) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_distribution(9, rng);
    const auto q = random_distribution(9, rng);
    EXPECT_NEAR(kl_contributions(p, q).sum(), kl_divergence(p, q), 1e-9);
  }
}

TEST(Kl, UnnormalizedInputThrows) {
  Vector<double> p(2), q(2);
  p << 0.5, 0.6;
  q << 0.5, 0.5;
  EXPECT_THROW(kl_divergence(p, q), NormalizationError);
  EXPECT_THROW(kl_divergence(q, p), NormalizationError);
  Vector<double> negative(2);
  negative << 1.5, -0.5;
  EXPECT_THROW(kl_divergence(negative, q), NormalizationError);
}

TEST(Kl, ZeroInQIsClamped) {
  Vector<double> p(2), q(2);
  p << 0.5, 0.5;
  q << 1.0, 0.0;
  const double v = kl_divergence(p, q);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 0.5 * std::log(0.5) + 0.5 * (std::log(0.5) - std::log(1e-8)), 1e-9);
}

TEST(KlProperty, NonNegativeAndZeroOnlyWhenEqual) {
  Rng rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = 2 + static_cast<Index>(rng.index(10));
    const auto p = random_distribution(n, rng);
    const auto q = random_distribution(n, rng);
    const double kl = kl_divergence(p, q);
    EXPECT_GE(kl, -1e-9);
    if ((p - q).cwiseAbs().maxCoeff() > 1e-3) EXPECT_GT(kl, 1e-9);
  }
}

TEST(Cosine, BasicCases) {
  Vector<double> v(3), e1(2), e2(2);
  v << 1.0, -2.0, 0.5;
  e1 << 1.0, 0.0;
  e2 << 0.0, 1.0;
  EXPECT_NEAR(cosine_similarity(v, v), 1.0, 1e-12);
  EXPECT_NEAR(cosine_similarity(v, Vector<double>(-v)), -1.0, 1e-12);
  EXPECT_EQ(cosine_similarity(e1, e2), 0.0);
}

TEST(Cosine, ZeroVectorThrows) {
  Vector<double> v(2), z = Vector<double>::Zero(2);
  v << 1.0, 1.0;
  EXPECT_THROW(cosine_similarity(v, z), DegenerateVectorError);
}

TEST(TensorIo, RoundTrip) {
  Tensor t;
  t.shape = {2, 3, 1};
  t.values = {1.0f, -2.5f, 3.25f, 0.0f, 1e-30f, 7.0f};
  const auto bytes = encode_tensor(t);
  ASSERT_EQ(bytes.size(), 4u + 4u + 4u + 3u * 4u + 6u * 4u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DMWA");
  EXPECT_EQ(decode_tensor(bytes), t);
}

TEST(TensorIo, LittleEndianLayout) {
  Tensor t;
  t.shape = {1};
  t.values = {1.0f};
  const auto bytes = encode_tensor(t);
  // version 1
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  // 1.0f = 0x3f800000
  EXPECT_EQ(bytes[bytes.size() - 1], 0x3f);
  EXPECT_EQ(bytes[bytes.size() - 2], 0x80);
}

TEST(TensorIo, BadMagic) {
  Tensor t{{1}, {2.0f}};
  auto bytes = encode_tensor(t);
  bytes[0] = 'X';
  try {
    decode_tensor(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0);
  }
}

TEST(TensorIo, UnsupportedVersion) {
  Tensor t{{1}, {2.0f}};
  auto bytes = encode_tensor(t);
  bytes[4] = 2;
  try {
    decode_tensor(bytes);
    FAIL();
  } catch (const UnsupportedVersionError& e) {
    EXPECT_EQ(e.version(), 2u);
    EXPECT_EQ(e.offset(), 4);
  }
}

TEST(TensorIo, TruncationReportsOffset) {
  Tensor t{{2, 2}, {1, 2, 3, 4}};
  const auto bytes = encode_tensor(t);
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    try {
      decode_tensor(part);
      FAIL() << "cut at " << cut;
    } catch (const FormatError& e) {
      EXPECT_LE(e.offset(), static_cast<long long>(cut));
      EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
    }
  }
}

TEST(TensorIo, TrailingBytesRejected) {
  Tensor t{{1}, {2.0f}};
  auto bytes = encode_tensor(t);
  bytes.push_back(0);
  EXPECT_THROW(decode_tensor(bytes), FormatError);
}

TEST(TensorIo, ZeroExtentRejected) {
  Tensor t{{1}, {2.0f}};
  auto bytes = encode_tensor(t);
  bytes[12] = 0;
  EXPECT_THROW(decode_tensor(bytes), FormatError);
}

TEST(TensorIo, FileRoundTripAndMatrixConversion) {
  Rng rng(1);
  Matrix<float> m = random_matrix(3, 5, rng).cast<float>();
  const auto path = std::filesystem::temp_directory_path() / "dmwa_tensor_io_test.bin";
  write_tensor(path, to_tensor(m));
  const auto back = to_matrix<float>(read_tensor(path));
  std::filesystem::remove(path);
  EXPECT_EQ(back, m);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, SplitStreamsDiffer) {
  const Rng root(7);
  Rng a = root.split(1), b = root.split(2);
  int equal = 0;
  for (int i = 0; i < 100; ++i) equal += a.next_u64() == b.next_u64();
  EXPECT_EQ(equal, 0);
}

TEST(Rng, UniformIntCoversRangeUniformly) {
  Rng rng(9);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) ++counts[static_cast<std::size_t>(rng.uniform_int(0, 4))];
  for (const int c : counts) EXPECT_NEAR(c, 10000, 400);
}

TEST(Rng, NormalMoments) {
  Rng rng(10);
  double sum = 0, sq = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.02);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng rng(4);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(std::span<int>(v));
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
}
