#include <gtest/gtest.h>

#include <fstream>
#include <json.hpp>

#include "dmwa/retrieval.hpp"
#include "dmwa/weighting.hpp"
#include "retrieval_oracle.hpp"

using namespace dmwa;
using dmwa::testing::brute_force_metrics;

namespace {

using Mat = Matrix<double>;

Mat row_scores(std::initializer_list<double> v) {
  Mat m(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.encoder.grid = 8;
  c.encoder.patch = 4;
  c.encoder.width = 8;
  c.encoder.heads = 2;
  c.encoder.layers = 1;
  c.encoder.mlp_ratio = 2;
  c.num_classes = 4;
  c.seen = {true, true, false, false};
  c.text_dim = 8;
  c.cross_heads = 2;
  return c;
}

Mat random_samples(Index n, int dim, Rng& rng) {
  Mat m(n, dim);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST(RankAndScore, SingleRelevantFirst) {
  const std::vector<int> q = {1}, g = {1, 0, 0};
  const std::vector<int> ks = {2};
  const auto r = rank_and_score(row_scores({0.9, 0.5, 0.1}), q, g, ks);
  EXPECT_EQ(r.map_all, 1.0);
  EXPECT_EQ(r.first_relevant_rank[0], 1);
  EXPECT_EQ(r.precision_at.at(2), 0.5);
}

TEST(RankAndScore, TwoRelevantAtOneAndThree) {
  const std::vector<int> q = {1}, g = {1, 0, 1, 0};
  const std::vector<int> ks = {2};
  const auto r = rank_and_score(row_scores({0.9, 0.8, 0.7, 0.6}), q, g, ks);
  EXPECT_NEAR(r.map_all, 5.0 / 6.0, 1e-15);
  EXPECT_EQ(r.rankings[0], (std::vector<Index>{0, 1, 2, 3}));
  EXPECT_NEAR(r.map_at.at(2), 1.0 / 2.0, 1e-15);  // only rank 1 within K, divided by min(2, 2)
}

TEST(RankAndScore, TiesBreakByGalleryId) {
  const std::vector<int> q = {0}, g = {1, 0, 1, 0};
  const std::vector<int> ks = {1};
  const auto r = rank_and_score(row_scores({0.5, 0.5, 0.5, 0.5}), q, g, ks);
  EXPECT_EQ(r.rankings[0], (std::vector<Index>{0, 1, 2, 3}));
  EXPECT_NEAR(r.map_all, (1.0 / 2.0 + 2.0 / 4.0) / 2.0, 1e-15);
  const auto again = rank_and_score(row_scores({0.5, 0.5, 0.5, 0.5}), q, g, ks);
  EXPECT_EQ(again.map_all, r.map_all);
}

TEST(RankAndScore, AllRelevantIsExactlyOne) {
  Rng rng(1);
  Mat s(3, 20);
  for (Index i = 0; i < s.size(); ++i) s.data()[i] = rng.normal();
  const std::vector<int> q(3, 2), g(20, 2);
  const std::vector<int> ks = {5, 100};
  const auto r = rank_and_score(s, q, g, ks);
  EXPECT_EQ(r.map_all, 1.0);
  EXPECT_EQ(r.map_at.at(5), 1.0);
  EXPECT_DOUBLE_EQ(r.precision_at.at(100), 0.2);
}

TEST(RankAndScore, ExcludesQueriesWithoutRelevantItems) {
  const std::vector<int> q = {0, 7}, g = {0, 1};
  const std::vector<int> ks = {1};
  const auto r = rank_and_score(Mat::Zero(2, 2), q, g, ks);
  EXPECT_EQ(r.excluded_queries, 1);
  EXPECT_EQ(r.average_precision.size(), 1u);
  EXPECT_EQ(r.query_ids, (std::vector<Index>{0}));
}

TEST(RankAndScore, Errors) {
  const std::vector<int> ks = {1};
  const std::vector<int> q = {0}, none;
  EXPECT_THROW(rank_and_score(Mat(1, 0), q, none, ks), EmptyInputError);
  const std::vector<int> g = {0, 1};
  EXPECT_THROW(rank_and_score(Mat::Zero(1, 3), q, g, ks), DimensionError);
  const std::vector<int> bad_k = {0};
  EXPECT_THROW(rank_and_score(Mat::Zero(1, 2), q, g, bad_k), ConfigError);
}

TEST(RankAndScore, MatchesBruteForceOracle) {
  Rng rng(2);
  const std::vector<int> ks = {10, 200};
  for (int instance = 0; instance < 3; ++instance) {
    Mat s(50, 500);
    for (Index i = 0; i < s.size(); ++i) s.data()[i] = rng.uniform();
    for (Index i = 0; i < 200; ++i) s(rng.index(50), rng.index(500)) = 0.5;  // some ties
    std::vector<int> q(50), g(500);
    for (auto& l : q) l = static_cast<int>(rng.index(12));
    for (auto& l : g) l = static_cast<int>(rng.index(10));
    const auto r = rank_and_score(s, q, g, ks);
    const auto o = brute_force_metrics(s, q, g, ks);
    EXPECT_EQ(static_cast<int>(r.average_precision.size()), o.evaluated);
    EXPECT_NEAR(r.map_all, o.map_all, 1e-9);
    for (int k : ks) {
      EXPECT_NEAR(r.map_at.at(k), o.map_at.at(k), 1e-9);
      EXPECT_NEAR(r.precision_at.at(k), o.precision_at.at(k), 1e-9);
    }
  }
}

TEST(RankAndScore, InvariantUnderIncreasingTransform) {
  Rng rng(3);
  Mat s(10, 60);
  for (Index i = 0; i < s.size(); ++i) s.data()[i] = rng.normal();
  std::vector<int> q(10), g(60);
  for (auto& l : q) l = static_cast<int>(rng.index(4));
  for (auto& l : g) l = static_cast<int>(rng.index(4));
  const std::vector<int> ks = {5, 20};
  const auto a = rank_and_score(s, q, g, ks);
  const Mat t = (s.array() * 3.0).exp() + 2.0;
  const auto b = rank_and_score(t, q, g, ks);
  EXPECT_EQ(a.rankings, b.rankings);
  EXPECT_EQ(a.map_all, b.map_all);
  EXPECT_EQ(a.map_at, b.map_at);
  EXPECT_EQ(a.precision_at, b.precision_at);
}

TEST(RankAndScore, HitCountsNonDecreasingInK) {
  Rng rng(4);
  Mat s(5, 40);
  for (Index i = 0; i < s.size(); ++i) s.data()[i] = rng.normal();
  std::vector<int> q(5), g(40);
  for (auto& l : q) l = static_cast<int>(rng.index(3));
  for (auto& l : g) l = static_cast<int>(rng.index(3));
  std::vector<int> ks;
  for (int k = 1; k <= 40; ++k) ks.push_back(k);
  const auto r = rank_and_score(s, q, g, ks);
  double previous = 0.0;
  for (int k : ks) {
    const double hits = k * r.precision_at.at(k) * static_cast<double>(r.average_precision.size());
    EXPECT_NEAR(hits, std::round(hits), 1e-9);
    EXPECT_GE(hits, previous - 1e-9);
    previous = hits;
  }
}

TEST(RankAndScore, MapIsMeanOfAps) {
  Rng rng(5);
  Mat s(8, 30);
  for (Index i = 0; i < s.size(); ++i) s.data()[i] = rng.normal();
  std::vector<int> q(8), g(30);
  for (auto& l : q) l = static_cast<int>(rng.index(3));
  for (auto& l : g) l = static_cast<int>(rng.index(3));
  const std::vector<int> ks = {10};
  const auto r = rank_and_score(s, q, g, ks);
  double sum = 0.0;
  for (double ap : r.average_precision) {
    sum += ap;
    EXPECT_GE(ap, 0.0);
    EXPECT_LE(ap, 1.0);
  }
  EXPECT_NEAR(r.map_all, sum / static_cast<double>(r.average_precision.size()), 1e-12);
  for (const auto& ranking : r.rankings) {
    std::vector<Index> sorted = ranking;
    std::sort(sorted.begin(), sorted.end());
    for (Index i = 0; i < 30; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
  }
}

TEST(ChanceMap, MeanRelevantFraction) {
  const std::vector<int> q = {0, 0, 1}, g = {0, 1, 1, 1};
  EXPECT_NEAR(chance_map(q, g), (0.25 + 0.25 + 0.75) / 3.0, 1e-15);
  const std::vector<int> none;
  EXPECT_THROW(chance_map(none, g), EmptyInputError);
}

TEST(Report, JsonAndCsvFiles) {
  const std::vector<int> q = {1}, g = {1, 0, 1, 0};
  const std::vector<int> ks = {2};
  const auto r = rank_and_score(row_scores({0.9, 0.8, 0.7, 0.6}), q, g, ks, "unseen");
  const auto dir = std::filesystem::temp_directory_path() / "dmwa_test_report";
  std::filesystem::remove_all(dir);
  write_report(dir, r);
  std::ifstream in(dir / "report.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["split"], "unseen");
  EXPECT_NEAR(j["mAP@all"].get<double>(), 5.0 / 6.0, 1e-15);
  EXPECT_EQ(j["Prec@2"].get<double>(), 0.5);
  EXPECT_EQ(j["excluded_queries"].get<int>(), 0);
  std::ifstream csv(dir / "per_query.csv");
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  EXPECT_EQ(header, "query_id,ap,first_relevant_rank");
  EXPECT_EQ(row.substr(0, 2), "0,");
  EXPECT_EQ(row.back(), '1');
  std::filesystem::remove_all(dir);
}

TEST(ScoreMode, Names) {
  EXPECT_EQ(parse_score_mode("fast"), ScoreMode::fast);
  EXPECT_EQ(parse_score_mode(score_mode_name(ScoreMode::cross)), ScoreMode::cross);
  EXPECT_THROW(parse_score_mode("exact"), ConfigError);
}

TEST(EmbedSplit, ShapesDeterminismAndGuard) {
  const auto model = Model<double>::initialize(tiny_model_config(), 1);
  Rng rng(6);
  const Mat samples = random_samples(40, 64, rng);  // more than one chunk
  const std::vector<int> labels(40, 2);
  const auto a = embed_split(samples, labels, model, Modality::sketch, true);
  const auto b = embed_split(samples, labels, model, Modality::sketch, true);
  ASSERT_EQ(a.size(), 40u);
  EXPECT_EQ(a[0].global.size(), 8);
  EXPECT_EQ(a[0].local.rows(), 4);
  for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(a[i].global, b[i].global);
  std::vector<int> mixed = labels;
  mixed[7] = 0;
  EXPECT_THROW(embed_split(samples, mixed, model, Modality::sketch, true), SplitViolationError);
  EXPECT_NO_THROW(embed_split(samples, mixed, model, Modality::sketch, false));
  EXPECT_THROW(embed_split(Mat(random_samples(2, 10, rng)), std::span<const int>(labels).first(2), model,
                           Modality::image),
               DimensionError);
}

TEST(PairScore, FastSelfScoreIsOne) {
  const auto model = Model<double>::initialize(tiny_model_config(), 2);
  Rng rng(7);
  const Mat samples = random_samples(3, 64, rng);
  const std::vector<int> labels = {2, 3, 2};
  auto sets = embed_split(samples, labels, model, Modality::sketch);
  auto as_image = sets[1];
  as_image.modality = Modality::image;
  EXPECT_NEAR(pair_score(sets[1], as_image, model.weights.cross, 2, ScoreMode::fast), 1.0, 1e-6);
  for (ScoreMode mode : {ScoreMode::fast, ScoreMode::cross}) {
    const double s = pair_score(sets[0], sets[2], model.weights.cross, 2, mode);
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(PairScore, CrossMatchesTapeComputation) {
  const auto model = Model<double>::initialize(tiny_model_config(), 3);
  Rng rng(8);
  const std::vector<int> labels = {2, 3};
  const auto q = embed_split(random_samples(1, 64, rng), std::span<const int>(labels).first(1), model,
                             Modality::sketch);
  const auto g = embed_split(random_samples(1, 64, rng), std::span<const int>(labels).last(1), model,
                             Modality::image);
  const auto& cross = model.weights.cross;
  auto tokens = [](const TokenSet<double>& t) {
    Mat m(t.local.rows() + 1, t.global.size());
    m.row(0) = t.global;
    m.bottomRows(t.local.rows()) = t.local;
    return m;
  };
  const auto attended = cross_attend_pairs(tokens(q[0]), tokens(g[0]), cross, 2, 5);
  const double expected = cosine_similarity(attended.sketch.row(0), attended.image.row(0));
  EXPECT_NEAR(pair_score(q[0], g[0], cross, 2, ScoreMode::cross), expected, 1e-12);
}

TEST(ScoreMatrix, ZeroedCrossAttentionRanksLikeFastMode) {
  auto model = Model<double>::initialize(tiny_model_config(), 4);
  model.weights.cross.wo.setZero();
  Rng rng(9);
  std::vector<int> ql(6), gl(20);
  for (auto& l : ql) l = 2 + static_cast<int>(rng.index(2));
  for (auto& l : gl) l = 2 + static_cast<int>(rng.index(2));
  const auto q = embed_split(random_samples(6, 64, rng), ql, model, Modality::sketch);
  const auto g = embed_split(random_samples(20, 64, rng), gl, model, Modality::image);
  const auto fast = score_matrix<double>(q, g, model.weights.cross, 2, ScoreMode::fast);
  const auto cross = score_matrix<double>(q, g, model.weights.cross, 2, ScoreMode::cross);
  EXPECT_LE((fast - cross).cwiseAbs().maxCoeff(), 1e-12);
  const std::vector<int> ks = {5};
  EXPECT_EQ(rank_and_score(fast, ql, gl, ks).rankings, rank_and_score(cross, ql, gl, ks).rankings);
}

TEST(ScoreMatrix, EntriesMatchPairScore) {
  const auto model = Model<double>::initialize(tiny_model_config(), 5);
  Rng rng(10);
  const std::vector<int> ql = {2, 3, 3}, gl = {2, 2, 3, 3};
  const auto q = embed_split(random_samples(3, 64, rng), ql, model, Modality::sketch);
  const auto g = embed_split(random_samples(4, 64, rng), gl, model, Modality::image);
  const auto s = score_matrix<double>(q, g, model.weights.cross, 2, ScoreMode::cross);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 4; ++j)
      EXPECT_NEAR(s(i, j), pair_score(q[i], g[j], model.weights.cross, 2, ScoreMode::cross), 1e-12);
}
