#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rvos/frontend.hpp"
#include "rvos/params.hpp"
#include "rvos/rng.hpp"
#include "rvos/tensor.hpp"

namespace rvos {

/// A per-frame set of object queries. origin_ids are stable indices into the
/// initial query list and stay injective through pruning.
struct ObjectQuerySet {
  Tensor embeddings;                    // [N_l, d]
  std::vector<double> confidence;
  std::vector<std::size_t> origin_ids;
  std::vector<double> cls_prob;         // filled for the final set
  std::size_t size() const { return origin_ids.size(); }
};

/// Exact multiply-accumulate accounting with the decoder cost model:
/// self-attention N^2*d, projections/feed-forward N*d^2 per layer. The
/// cross-modal attention terms (N*(M+K)*d) are tracked separately and are
/// not part of total().
struct CostLedger {
  struct Row {
    std::size_t layer;
    std::size_t n_queries;
    std::uint64_t attn_macs;
    std::uint64_t ffn_macs;
  };
  std::vector<Row> rows;
  std::uint64_t cross_modal_macs = 0;

  std::uint64_t total() const;
  std::string to_csv() const;  // layer,n_queries,attn_macs,ffn_macs

  /// The same accounting without running tensors: the retention chain is
  /// ceil(N/k) per layer, floored at min_queries.
  static CostLedger simulate(std::size_t n, std::size_t layers, std::size_t d, std::size_t k,
                             std::size_t min_queries = 1);
  static std::uint64_t unpruned_total(std::size_t n, std::size_t layers, std::size_t d);
};

/// Language-guided selection: the n_q feature positions with the highest
/// max-over-tokens similarity, ties broken by position index ascending.
ObjectQuerySet init_queries(std::size_t n_q, const FrameFeatures& frame,
                            const TextFeatures& text);

/// Eq.-style confidence: mean attention received from other queries plus the
/// best token-to-query attention. For a single query the first term is 0.
std::vector<double> confidence_scores(const Tensor& a_s, const Tensor& a_c);

/// Keep the ceil(N/k) highest-scoring queries (at least min_queries), ties
/// broken by origin_id ascending. Gradient flows through retained rows only.
ObjectQuerySet prune(const ObjectQuerySet& q, const std::vector<double>& scores,
                     std::size_t k, std::size_t min_queries = 1);

/// Sigmoid of the best scaled dot-product similarity over content tokens
/// (the sentence token is excluded from the max).
Tensor classification_score(const Tensor& object_embedding, const TextFeatures& text);

enum class PruneMode { kConfidence, kRandom };

struct DecodeOptions {
  std::size_t k = 2;
  std::size_t min_queries = 1;
  PruneMode mode = PruneMode::kConfidence;
  Rng* rng = nullptr;  // required for random pruning
};

struct DecoderLayerOutput {
  ObjectQuerySet queries;
  Tensor a_s;  // [N, N] head-averaged self-attention weights
  Tensor a_c;  // [K, N] head-averaged token-to-query weights
};

struct QueryDecoderConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t layers = 4;
  std::size_t ffn_mult = 4;
};

class QueryDecoder {
 public:
  explicit QueryDecoder(QueryDecoderConfig cfg) : cfg_(cfg) {}

  void init_params(ParamStore& store, Rng& rng) const;

  DecoderLayerOutput decoder_layer(ParamCtx& ctx, const ObjectQuerySet& q,
                                   const FrameFeatures& frame, const TextFeatures& text,
                                   std::size_t layer) const;

  /// L rounds of decoder_layer + prune, then classification probabilities
  /// for the survivors. The ledger records the exact cost-model counts.
  std::pair<ObjectQuerySet, CostLedger> decode_frame(ParamCtx& ctx, const FrameFeatures& frame,
                                                     const TextFeatures& text, std::size_t n_q,
                                                     const DecodeOptions& opts) const;

  const QueryDecoderConfig& config() const { return cfg_; }

 private:
  QueryDecoderConfig cfg_;
};

}  // namespace rvos
