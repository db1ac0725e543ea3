#include "rvos/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace rvos {

namespace {

AttentionOutput attend(const Tensor& query, const Tensor& kv, const AttentionParams& p,
                       std::size_t heads, bool with_token_to_query) {
  if (query.shape().size() != 2 || kv.shape().size() != 2)
    throw std::invalid_argument("attention: expected 2-D query/kv, got " +
                                shape_str(query.shape()) + " and " + shape_str(kv.shape()));
  const std::size_t d = query.shape()[1];
  if (kv.shape()[1] != d)
    throw std::invalid_argument("attention: width mismatch " + shape_str(query.shape()) +
                                " vs " + shape_str(kv.shape()));
  if (heads == 0 || d % heads != 0)
    throw std::invalid_argument("attention: d=" + std::to_string(d) +
                                " not divisible by heads=" + std::to_string(heads));
  const std::size_t dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor q = matmul(query, p.wq);
  Tensor k = matmul(kv, p.wk);
  Tensor v = matmul(kv, p.wv);

  std::vector<Tensor> head_outs, head_w;
  std::vector<Tensor> token_w;
  for (std::size_t hidx = 0; hidx < heads; ++hidx) {
    Tensor qh = slice_cols(q, hidx * dh, (hidx + 1) * dh);
    Tensor kh = slice_cols(k, hidx * dh, (hidx + 1) * dh);
    Tensor vh = slice_cols(v, hidx * dh, (hidx + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_scale);  // [n x m]
    Tensor w = softmax_rows(scores);
    head_w.push_back(w);
    head_outs.push_back(matmul(w, vh));
    if (with_token_to_query) token_w.push_back(softmax_rows(transpose(scores)));
  }

  AttentionOutput out;
  out.output = matmul(concat_cols(head_outs), p.wo);
  out.head_weights = head_w;
  Tensor acc = head_w[0];
  for (std::size_t hidx = 1; hidx < heads; ++hidx) acc = add(acc, head_w[hidx]);
  out.weights = scale(acc, 1.0 / static_cast<double>(heads));
  if (with_token_to_query) {
    Tensor tacc = token_w[0];
    for (std::size_t hidx = 1; hidx < heads; ++hidx) tacc = add(tacc, token_w[hidx]);
    out.token_to_query = scale(tacc, 1.0 / static_cast<double>(heads));
  }
  return out;
}

}  // namespace

AttentionOutput mhsa(const Tensor& x, const AttentionParams& p, std::size_t heads) {
  return attend(x, x, p, heads, false);
}

AttentionOutput cross_attention(const Tensor& query, const Tensor& kv,
                                const AttentionParams& p, std::size_t heads,
                                bool with_token_to_query) {
  return attend(query, kv, p, heads, with_token_to_query);
}

Tensor deformable_cross_attention(const Tensor& query, const Tensor& memory,
                                  const Tensor& reference_point, const DeformableParams& p) {
  if (query.shape().size() != 1)
    throw std::invalid_argument("deformable: query must be 1-D, got " +
                                shape_str(query.shape()));
  if (memory.shape().size() != 3)
    throw std::invalid_argument("deformable: memory must be [h,w,d], got " +
                                shape_str(memory.shape()));
  if (reference_point.shape() != Shape{2})
    throw std::invalid_argument("deformable: reference point must be [2], got " +
                                shape_str(reference_point.shape()));
  const std::size_t d = query.shape()[0];
  const std::size_t h = memory.shape()[0], w = memory.shape()[1];
  const std::size_t np = p.num_points;
  if (np < 1) throw std::invalid_argument("deformable: num_points must be >= 1");
  if (p.offset_proj.shape() != Shape{d, 2 * np} || p.weight_proj.shape() != Shape{d, np})
    throw std::invalid_argument("deformable: projector shapes " +
                                shape_str(p.offset_proj.shape()) + " / " +
                                shape_str(p.weight_proj.shape()) + " do not fit d=" +
                                std::to_string(d) + ", p=" + std::to_string(np));

  Tensor q_row = reshape(query, Shape{1, d});
  const double off_scale = 1.0 / static_cast<double>(std::max(h, w));
  Tensor offsets = scale(reshape(matmul(q_row, p.offset_proj), Shape{np, 2}), off_scale);
  Tensor locations = add_rowwise(offsets, reference_point);
  Tensor feats = bilinear_sample(memory, locations);               // [p x d]
  Tensor weights = softmax_rows(matmul(q_row, p.weight_proj));     // [1 x p]
  return reshape(matmul(weights, feats), Shape{d});
}

}  // namespace rvos
