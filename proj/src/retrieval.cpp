#include "dmwa/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace dmwa {

const char* score_mode_name(ScoreMode mode) { return mode == ScoreMode::cross ? "cross" : "fast"; }

ScoreMode parse_score_mode(const std::string& name) {
  if (name == "cross") return ScoreMode::cross;
  if (name == "fast") return ScoreMode::fast;
  throw ConfigError("unknown score mode `" + name + "` (expected cross or fast)");
}

template <typename Scalar>
std::vector<TokenSet<Scalar>> embed_split(const Matrix<Scalar>& samples, std::span<const int> labels,
                                          const Model<Scalar>& model, Modality modality, bool strict_zero_shot) {
  const auto& cfg = model.config.encoder;
  if (samples.cols() != cfg.sample_dim()) {
    throw DimensionError("embed_split: samples have " + std::to_string(samples.cols()) +
                         " values each, checkpoint expects grid " + std::to_string(cfg.grid) + "x" +
                         std::to_string(cfg.grid) + "x" + std::to_string(cfg.channels));
  }
  if (static_cast<Index>(labels.size()) != samples.rows()) {
    throw DimensionError("embed_split: " + std::to_string(samples.rows()) + " samples but " +
                         std::to_string(labels.size()) + " labels");
  }
  if (strict_zero_shot) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto c = static_cast<std::size_t>(labels[i]);
      if (c < model.config.seen.size() && model.config.seen[c]) {
        throw SplitViolationError("embed_split: sample " + std::to_string(i) + " belongs to seen class " +
                                  std::to_string(labels[i]));
      }
    }
  }
  constexpr Index kChunk = 32;
  std::vector<TokenSet<Scalar>> out;
  out.reserve(static_cast<std::size_t>(samples.rows()));
  for (Index start = 0; start < samples.rows(); start += kChunk) {
    const Index n = std::min(kChunk, samples.rows() - start);
    Tape<Scalar> tape;
    const auto bound = bind(tape, model.weights, false);
    const auto encoded = encode(tape, Matrix<Scalar>(samples.middleRows(start, n)), cfg, bound.encoder(modality));
    for (auto& t : split_tokens(encoded.value(), cfg.sequence_length(), modality)) out.push_back(std::move(t));
  }
  return out;
}

template <typename Scalar>
CrossAttentionCache<Scalar> make_cache(const TokenSet<Scalar>& tokens, const AttentionWeights<Matrix<Scalar>>& cross) {
  Matrix<Scalar> full(tokens.local.rows() + 1, tokens.global.size());
  full.row(0) = tokens.global;
  full.bottomRows(tokens.local.rows()) = tokens.local;
  CrossAttentionCache<Scalar> c;
  c.global = tokens.global;
  c.global_query = tokens.global * cross.wq;
  c.keys = full * cross.wk;
  c.values = full * cross.wv;
  return c;
}

template <typename Scalar>
RowVector<Scalar> cross_attended_global(const CrossAttentionCache<Scalar>& query, const CrossAttentionCache<Scalar>& kv,
                                        const AttentionWeights<Matrix<Scalar>>& cross, int heads) {
  const Index width = query.global.size();
  if (kv.keys.cols() != width) {
    throw DimensionError("cross_attended_global: query width " + std::to_string(width) + " vs " +
                         std::to_string(kv.keys.cols()));
  }
  const Index head_width = width / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(head_width));
  RowVector<Scalar> mixed(width);
  for (int h = 0; h < heads; ++h) {
    const auto k = kv.keys.middleCols(h * head_width, head_width);
    Vector<Scalar> logits = (k * query.global_query.segment(h * head_width, head_width).transpose()) * scale;
    logits = (logits.array() - logits.maxCoeff()).exp();
    logits /= logits.sum();
    mixed.segment(h * head_width, head_width) = logits.transpose() * kv.values.middleCols(h * head_width, head_width);
  }
  return query.global + mixed * cross.wo;
}

template <typename Scalar>
Scalar pair_score(const TokenSet<Scalar>& query, const TokenSet<Scalar>& gallery_item,
                  const AttentionWeights<Matrix<Scalar>>& cross, int heads, ScoreMode mode) {
  if (mode == ScoreMode::fast) return cosine_similarity(query.global, gallery_item.global);
  const auto q = make_cache(query, cross);
  const auto g = make_cache(gallery_item, cross);
  return cosine_similarity(cross_attended_global(q, g, cross, heads), cross_attended_global(g, q, cross, heads));
}

template <typename Scalar>
Matrix<double> score_matrix(std::span<const TokenSet<Scalar>> queries, std::span<const TokenSet<Scalar>> gallery,
                            const AttentionWeights<Matrix<Scalar>>& cross, int heads, ScoreMode mode) {
  Matrix<double> scores(static_cast<Index>(queries.size()), static_cast<Index>(gallery.size()));
  if (mode == ScoreMode::fast) {
    for (std::size_t i = 0; i < queries.size(); ++i) {
      for (std::size_t j = 0; j < gallery.size(); ++j) {
        scores(static_cast<Index>(i), static_cast<Index>(j)) =
            static_cast<double>(cosine_similarity(queries[i].global, gallery[j].global));
      }
    }
    return scores;
  }
  std::vector<CrossAttentionCache<Scalar>> qc, gc;
  for (const auto& q : queries) qc.push_back(make_cache(q, cross));
  for (const auto& g : gallery) gc.push_back(make_cache(g, cross));
  for (std::size_t i = 0; i < queries.size(); ++i) {
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      scores(static_cast<Index>(i), static_cast<Index>(j)) = static_cast<double>(cosine_similarity(
          cross_attended_global(qc[i], gc[j], cross, heads), cross_attended_global(gc[j], qc[i], cross, heads)));
    }
  }
  return scores;
}

RetrievalReport rank_and_score(const Matrix<double>& scores, std::span<const int> query_labels,
                               std::span<const int> gallery_labels, std::span<const int> k_list,
                               const std::string& split) {
  const Index nq = scores.rows();
  const Index ng = scores.cols();
  if (ng == 0 || gallery_labels.empty()) throw EmptyInputError("rank_and_score: empty gallery");
  if (nq == 0 || query_labels.empty()) throw EmptyInputError("rank_and_score: no queries");
  if (static_cast<Index>(query_labels.size()) != nq || static_cast<Index>(gallery_labels.size()) != ng) {
    throw DimensionError("rank_and_score: scores " + shape_string(scores) + " vs " +
                         std::to_string(query_labels.size()) + " query and " + std::to_string(gallery_labels.size()) +
                         " gallery labels");
  }
  for (int k : k_list) {
    if (k <= 0) throw ConfigError("rank_and_score: K must be positive, got " + std::to_string(k));
  }

  RetrievalReport report;
  report.split = split;
  report.query_count = nq;
  report.gallery_count = ng;
  std::map<int, double> map_sum, prec_sum;
  for (int k : k_list) map_sum[k] = prec_sum[k] = 0.0;

  std::vector<Index> order(static_cast<std::size_t>(ng));
  for (Index q = 0; q < nq; ++q) {
    const int label = query_labels[static_cast<std::size_t>(q)];
    const auto relevant_total = static_cast<Index>(std::count(gallery_labels.begin(), gallery_labels.end(), label));
    if (relevant_total == 0) {
      ++report.excluded_queries;
      continue;
    }
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
      const double sa = scores(q, a), sb = scores(q, b);
      if (sa != sb) return sa > sb;
      return a < b;
    });

    // precision_sum[r] = Σ over relevant ranks <= r of Precision@rank.
    std::vector<double> precision_sum(static_cast<std::size_t>(ng) + 1, 0.0);
    std::vector<Index> hits(static_cast<std::size_t>(ng) + 1, 0);
    Index first = 0;
    for (Index r = 1; r <= ng; ++r) {
      const bool rel = gallery_labels[static_cast<std::size_t>(order[static_cast<std::size_t>(r - 1)])] == label;
      hits[r] = hits[r - 1] + (rel ? 1 : 0);
      precision_sum[r] = precision_sum[r - 1] + (rel ? static_cast<double>(hits[r]) / static_cast<double>(r) : 0.0);
      if (rel && first == 0) first = r;
    }
    const double ap = precision_sum[ng] / static_cast<double>(relevant_total);
    for (int k : k_list) {
      const Index kk = std::min<Index>(k, ng);
      map_sum[k] += precision_sum[kk] / static_cast<double>(std::min<Index>(k, relevant_total));
      prec_sum[k] += static_cast<double>(hits[kk]) / static_cast<double>(k);
    }
    report.query_ids.push_back(q);
    report.rankings.push_back(order);
    report.average_precision.push_back(ap);
    report.first_relevant_rank.push_back(first);
  }
  const auto evaluated = static_cast<double>(report.average_precision.size());
  if (evaluated > 0) {
    report.map_all = std::accumulate(report.average_precision.begin(), report.average_precision.end(), 0.0) / evaluated;
    for (int k : k_list) {
      report.map_at[k] = map_sum[k] / evaluated;
      report.precision_at[k] = prec_sum[k] / evaluated;
    }
  }
  return report;
}

std::string report_json(const RetrievalReport& report) {
  nlohmann::ordered_json j;
  j["split"] = report.split;
  j["queries"] = report.query_count;
  j["gallery"] = report.gallery_count;
  j["evaluated_queries"] = report.average_precision.size();
  j["excluded_queries"] = report.excluded_queries;
  j["mAP@all"] = report.map_all;
  for (const auto& [k, v] : report.map_at) j["mAP@" + std::to_string(k)] = v;
  for (const auto& [k, v] : report.precision_at) j["Prec@" + std::to_string(k)] = v;
  return j.dump(2);
}

void write_report(const std::filesystem::path& dir, const RetrievalReport& report) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw Error("cannot write " + (dir / "report.json").string());
    out << report_json(report) << '\n';
  }
  std::ofstream csv(dir / "per_query.csv");
  if (!csv) throw Error("cannot write " + (dir / "per_query.csv").string());
  csv << "query_id,ap,first_relevant_rank\n";
  csv.precision(17);
  for (std::size_t i = 0; i < report.query_ids.size(); ++i) {
    csv << report.query_ids[i] << ',' << report.average_precision[i] << ',' << report.first_relevant_rank[i] << '\n';
  }
}

double chance_map(std::span<const int> query_labels, std::span<const int> gallery_labels) {
  if (query_labels.empty() || gallery_labels.empty()) throw EmptyInputError("chance_map: empty split");
  double total = 0.0;
  for (int label : query_labels) {
    total += static_cast<double>(std::count(gallery_labels.begin(), gallery_labels.end(), label)) /
             static_cast<double>(gallery_labels.size());
  }
  return total / static_cast<double>(query_labels.size());
}

#define DMWA_INSTANTIATE(S)                                                                                      \
  template std::vector<TokenSet<S>> embed_split(const Matrix<S>&, std::span<const int>, const Model<S>&, Modality, \
                                                bool);                                                           \
  template CrossAttentionCache<S> make_cache(const TokenSet<S>&, const AttentionWeights<Matrix<S>>&);            \
  template RowVector<S> cross_attended_global(const CrossAttentionCache<S>&, const CrossAttentionCache<S>&,      \
                                              const AttentionWeights<Matrix<S>>&, int);                          \
  template S pair_score(const TokenSet<S>&, const TokenSet<S>&, const AttentionWeights<Matrix<S>>&, int,         \
                        ScoreMode);                                                                              \
  template Matrix<double> score_matrix(std::span<const TokenSet<S>>, std::span<const TokenSet<S>>,               \
                                       const AttentionWeights<Matrix<S>>&, int, ScoreMode);

DMWA_INSTANTIATE(float)
DMWA_INSTANTIATE(double)

#undef DMWA_INSTANTIATE

}  // namespace dmwa
