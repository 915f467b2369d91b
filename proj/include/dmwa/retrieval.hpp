#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dmwa/encoders.hpp"
#include "dmwa/model.hpp"

namespace dmwa {

// cross: cosine between the two global tokens after the residual
//        cross-attention block in each direction.
// fast:  cosine between the uni-modal global tokens.
enum class ScoreMode { cross, fast };

const char* score_mode_name(ScoreMode mode);
ScoreMode parse_score_mode(const std::string& name);

struct RetrievalReport {
  std::string split;
  Index query_count = 0;
  Index gallery_count = 0;
  // Queries with no relevant gallery item; not part of any mean.
  Index excluded_queries = 0;

  // One entry per evaluated query.
  std::vector<Index> query_ids;
  std::vector<std::vector<Index>> rankings;  // gallery ids, best first
  std::vector<double> average_precision;     // AP over the full ranking
  std::vector<Index> first_relevant_rank;    // 1-based

  double map_all = 0.0;
  std::map<int, double> map_at;        // K -> mAP@K
  std::map<int, double> precision_at;  // K -> Prec@K
};

// Uni-modal encoding of every row of `samples` [N x grid*grid*channels].
// With `strict_zero_shot`, any label belonging to a seen class raises
// SplitViolationError. Text features are never consulted.
template <typename Scalar>
std::vector<TokenSet<Scalar>> embed_split(const Matrix<Scalar>& samples, std::span<const int> labels,
                                          const Model<Scalar>& model, Modality modality,
                                          bool strict_zero_shot = false);

template <typename Scalar>
Scalar pair_score(const TokenSet<Scalar>& query, const TokenSet<Scalar>& gallery_item,
                  const AttentionWeights<Matrix<Scalar>>& cross, int heads, ScoreMode mode);

// Projections of one token set reused across all pairs it takes part in.
template <typename Scalar>
struct CrossAttentionCache {
  RowVector<Scalar> global;
  RowVector<Scalar> global_query;  // global * Wq
  Matrix<Scalar> keys;             // [global; local] * Wk
  Matrix<Scalar> values;           // [global; local] * Wv
};

template <typename Scalar>
CrossAttentionCache<Scalar> make_cache(const TokenSet<Scalar>& tokens, const AttentionWeights<Matrix<Scalar>>& cross);

// Global row of the residual cross-attention block with queries from
// `query` and keys/values from `kv`.
template <typename Scalar>
RowVector<Scalar> cross_attended_global(const CrossAttentionCache<Scalar>& query,
                                        const CrossAttentionCache<Scalar>& kv,
                                        const AttentionWeights<Matrix<Scalar>>& cross, int heads);

// Scores [queries x gallery].
template <typename Scalar>
Matrix<double> score_matrix(std::span<const TokenSet<Scalar>> queries, std::span<const TokenSet<Scalar>> gallery,
                            const AttentionWeights<Matrix<Scalar>>& cross, int heads, ScoreMode mode);

// Ranks each query's gallery by descending score (ties by ascending
// gallery id) and computes AP, mAP@all, mAP@K and Prec@K. AP@K divides by
// min(K, #relevant); Prec@K divides by K.
RetrievalReport rank_and_score(const Matrix<double>& scores, std::span<const int> query_labels,
                               std::span<const int> gallery_labels, std::span<const int> k_list,
                               const std::string& split = "test");

// Writes `report.json` (metric name -> value, counters) and
// `per_query.csv` (query_id,ap,first_relevant_rank).
void write_report(const std::filesystem::path& dir, const RetrievalReport& report);
std::string report_json(const RetrievalReport& report);

// Mean over queries of (#relevant / gallery size).
double chance_map(std::span<const int> query_labels, std::span<const int> gallery_labels);

}  // namespace dmwa
