#include "rvos/query_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "rvos/attention.hpp"

namespace rvos {

std::uint64_t CostLedger::total() const {
  std::uint64_t t = 0;
  for (const Row& r : rows) t += r.attn_macs + r.ffn_macs;
  return t;
}

std::string CostLedger::to_csv() const {
  std::ostringstream os;
  os << "layer,n_queries,attn_macs,ffn_macs\n";
  for (const Row& r : rows)
    os << r.layer << "," << r.n_queries << "," << r.attn_macs << "," << r.ffn_macs << "\n";
  return os.str();
}

CostLedger CostLedger::simulate(std::size_t n, std::size_t layers, std::size_t d,
                                std::size_t k, std::size_t min_queries) {
  if (k < 1) throw std::invalid_argument("ledger: retention divisor must be >= 1");
  CostLedger ledger;
  std::size_t cur = n;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::uint64_t nn = cur;
    ledger.rows.push_back(Row{l, cur, nn * nn * d, nn * d * d});
    std::size_t kept = (cur + k - 1) / k;
    kept = std::max(kept, std::min(min_queries, cur));
    cur = kept;
  }
  return ledger;
}

std::uint64_t CostLedger::unpruned_total(std::size_t n, std::size_t layers, std::size_t d) {
  const std::uint64_t nn = n, dd = d;
  return static_cast<std::uint64_t>(layers) * (nn * nn * dd + nn * dd * dd);
}

ObjectQuerySet init_queries(std::size_t n_q, const FrameFeatures& frame,
                            const TextFeatures& text) {
  const Shape& s = frame.f_img.shape();
  const std::size_t hp = s[0], wp = s[1], d = s[2];
  const std::size_t positions = hp * wp;
  if (n_q < 1 || n_q > positions)
    throw std::invalid_argument("init_queries: n_q=" + std::to_string(n_q) +
                                " outside [1, " + std::to_string(positions) + "]");
  const auto fv = frame.f_img.values();
  const auto tv = text.tokens.values();
  const std::size_t k_tokens = text.count();

  std::vector<double> best(positions, 0.0);
  for (std::size_t pos = 0; pos < positions; ++pos) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t tok = 0; tok < k_tokens; ++tok) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += fv[pos * d + c] * tv[tok * d + c];
      mx = std::max(mx, dot);
    }
    best[pos] = mx;
  }
  std::vector<std::size_t> order(positions);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (best[a] != best[b]) return best[a] > best[b];
    return a < b;
  });
  order.resize(n_q);

  ObjectQuerySet q;
  Tensor flat = reshape(frame.f_img, Shape{positions, d});
  q.embeddings = gather_rows(flat, order);
  q.confidence.reserve(n_q);
  for (std::size_t i = 0; i < n_q; ++i) q.confidence.push_back(best[order[i]]);
  q.origin_ids.resize(n_q);
  std::iota(q.origin_ids.begin(), q.origin_ids.end(), 0);
  return q;
}

std::vector<double> confidence_scores(const Tensor& a_s, const Tensor& a_c) {
  const std::size_t n = a_s.shape().at(0);
  if (a_s.shape() != Shape{n, n})
    throw std::invalid_argument("confidence_scores: a_s must be square, got " +
                                shape_str(a_s.shape()));
  if (a_c.shape().size() != 2 || a_c.shape()[1] != n)
    throw std::invalid_argument("confidence_scores: a_c " + shape_str(a_c.shape()) +
                                " does not match " + std::to_string(n) + " queries");
  const auto sv = a_s.values();
  const auto cv = a_c.values();
  const std::size_t k = a_c.shape()[0];
  std::vector<double> scores(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double received = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (i != j) received += sv[i * n + j];
    const double mean_received = n > 1 ? received / static_cast<double>(n - 1) : 0.0;
    double best = cv[j];
    for (std::size_t t = 1; t < k; ++t) best = std::max(best, cv[t * n + j]);
    scores[j] = mean_received + best;
  }
  return scores;
}

ObjectQuerySet prune(const ObjectQuerySet& q, const std::vector<double>& scores,
                     std::size_t k, std::size_t min_queries) {
  if (k < 1) throw std::invalid_argument("prune: retention divisor must be >= 1");
  const std::size_t n = q.size();
  if (scores.size() != n)
    throw std::invalid_argument("prune: " + std::to_string(scores.size()) + " scores for " +
                                std::to_string(n) + " queries");
  std::size_t keep = (n + k - 1) / k;
  keep = std::max(keep, std::min(min_queries, n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return q.origin_ids[a] < q.origin_ids[b];
  });
  order.resize(keep);
  std::sort(order.begin(), order.end());  // retained rows keep their relative order

  ObjectQuerySet out;
  out.embeddings = gather_rows(q.embeddings, order);
  out.confidence.reserve(keep);
  out.origin_ids.reserve(keep);
  for (std::size_t row : order) {
    out.confidence.push_back(scores[row]);
    out.origin_ids.push_back(q.origin_ids[row]);
  }
  return out;
}

Tensor classification_score(const Tensor& object_embedding, const TextFeatures& text) {
  const std::size_t d = object_embedding.shape().at(0);
  const std::size_t k = text.count();
  Tensor content = slice_rows(text.tokens, 1, k);
  Tensor sims = scale(matmul(content, reshape(object_embedding, Shape{d, 1})),
                      1.0 / std::sqrt(static_cast<double>(d)));
  return sigmoid(reduce_max(sims));
}

namespace {

std::string layer_name(std::size_t layer, const char* part) {
  return "qdec.layer" + std::to_string(layer) + "." + part;
}

AttentionParams fetch_attention(ParamCtx& ctx, const std::string& base) {
  return {ctx(base + ".wq"), ctx(base + ".wk"), ctx(base + ".wv"), ctx(base + ".wo")};
}

Tensor residual_ln(ParamCtx& ctx, const std::string& ln, const Tensor& x, const Tensor& dx) {
  return layer_norm(add(x, dx), ctx(ln + ".g"), ctx(ln + ".b"));
}

}  // namespace

void QueryDecoder::init_params(ParamStore& store, Rng& rng) const {
  const std::size_t d = cfg_.d, hidden = cfg_.ffn_mult * cfg_.d;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    auto attn = [&](const char* part) {
      const std::string base = layer_name(l, part);
      for (const char* w : {".wq", ".wk", ".wv", ".wo"})
        store.define(base + w, {d, d}, xavier_uniform(rng, d, d, d * d));
    };
    auto ln = [&](const char* part) {
      const std::string base = layer_name(l, part);
      store.define(base + ".g", {d}, std::vector<double>(d, 1.0));
      store.define(base + ".b", {d}, std::vector<double>(d, 0.0));
    };
    attn("self");
    ln("self_ln");
    attn("img");
    ln("img_ln");
    attn("txt");
    ln("txt_ln");
    store.define(layer_name(l, "ffn.w1"), {d, hidden},
                 xavier_uniform(rng, d, hidden, d * hidden));
    store.define(layer_name(l, "ffn.b1"), {hidden}, std::vector<double>(hidden, 0.0));
    store.define(layer_name(l, "ffn.w2"), {hidden, d},
                 xavier_uniform(rng, hidden, d, hidden * d));
    store.define(layer_name(l, "ffn.b2"), {d}, std::vector<double>(d, 0.0));
    ln("ffn_ln");
  }
}

DecoderLayerOutput QueryDecoder::decoder_layer(ParamCtx& ctx, const ObjectQuerySet& q,
                                               const FrameFeatures& frame,
                                               const TextFeatures& text,
                                               std::size_t layer) const {
  if (layer >= cfg_.layers)
    throw std::invalid_argument("decoder_layer: layer " + std::to_string(layer) +
                                " out of " + std::to_string(cfg_.layers));
  const Shape& fs = frame.f_img.shape();
  Tensor img_tokens = reshape(frame.f_img, Shape{fs[0] * fs[1], fs[2]});

  Tensor e = q.embeddings;
  AttentionOutput self = mhsa(e, fetch_attention(ctx, layer_name(layer, "self")), cfg_.heads);
  e = residual_ln(ctx, layer_name(layer, "self_ln"), e, self.output);

  AttentionOutput img = cross_attention(e, img_tokens,
                                        fetch_attention(ctx, layer_name(layer, "img")),
                                        cfg_.heads);
  e = residual_ln(ctx, layer_name(layer, "img_ln"), e, img.output);

  AttentionOutput txt = cross_attention(e, text.tokens,
                                        fetch_attention(ctx, layer_name(layer, "txt")),
                                        cfg_.heads, /*with_token_to_query=*/true);
  e = residual_ln(ctx, layer_name(layer, "txt_ln"), e, txt.output);

  Tensor hidden = gelu(add_rowwise(matmul(e, ctx(layer_name(layer, "ffn.w1"))),
                                   ctx(layer_name(layer, "ffn.b1"))));
  Tensor ffn = add_rowwise(matmul(hidden, ctx(layer_name(layer, "ffn.w2"))),
                           ctx(layer_name(layer, "ffn.b2")));
  e = residual_ln(ctx, layer_name(layer, "ffn_ln"), e, ffn);

  DecoderLayerOutput out;
  out.queries = ObjectQuerySet{e, q.confidence, q.origin_ids, {}};
  out.a_s = self.weights;
  out.a_c = txt.token_to_query;
  return out;
}

std::pair<ObjectQuerySet, CostLedger> QueryDecoder::decode_frame(
    ParamCtx& ctx, const FrameFeatures& frame, const TextFeatures& text, std::size_t n_q,
    const DecodeOptions& opts) const {
  if (opts.mode == PruneMode::kRandom && opts.rng == nullptr)
    throw std::invalid_argument("decode_frame: random pruning needs an rng");
  const std::size_t d = cfg_.d;
  const Shape& fs = frame.f_img.shape();
  const std::size_t m_tokens = fs[0] * fs[1];
  const std::size_t k_tokens = text.count();

  ObjectQuerySet q = init_queries(n_q, frame, text);
  CostLedger ledger;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::uint64_t n = q.size();
    ledger.rows.push_back(CostLedger::Row{l, q.size(), n * n * d, n * d * d});
    ledger.cross_modal_macs += n * (m_tokens + k_tokens) * d;

    DecoderLayerOutput layer_out = decoder_layer(ctx, q, frame, text, l);
    std::vector<double> scores;
    if (opts.mode == PruneMode::kConfidence) {
      scores = confidence_scores(layer_out.a_s, layer_out.a_c);
    } else {
      scores.resize(q.size());
      for (double& s : scores) s = opts.rng->uniform();
    }
    q = prune(layer_out.queries, scores, opts.k, opts.min_queries);
  }
  q.cls_prob.reserve(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    Tensor row = reshape(slice_rows(q.embeddings, i, i + 1), Shape{d});
    q.cls_prob.push_back(classification_score(row, text).item());
  }
  return {q, ledger};
}

}  // namespace rvos
