#pragma once

#include <vector>

#include "rvos/tensor.hpp"

namespace rvos {

/// Projection weights of one attention block, all [d x d] and bias-free.
struct AttentionParams {
  Tensor wq, wk, wv, wo;
};

/// Attention result with its post-softmax weights retained. `weights` is the
/// head average of the per-head row-stochastic matrices; for cross attention
/// `token_to_query` additionally holds the head-averaged softmax of the
/// transposed scores (each key's distribution over queries).
struct AttentionOutput {
  Tensor output;                    // [n x d]
  Tensor weights;                   // [n x m]
  std::vector<Tensor> head_weights; // heads x [n x m]
  Tensor token_to_query;            // [m x n], only set when requested
};

/// Multi-head self-attention with per-head scale 1/sqrt(d/heads).
AttentionOutput mhsa(const Tensor& x, const AttentionParams& p, std::size_t heads);

/// Query/key-value attention with distinct key-value source.
AttentionOutput cross_attention(const Tensor& query, const Tensor& kv,
                                const AttentionParams& p, std::size_t heads,
                                bool with_token_to_query = false);

struct DeformableParams {
  std::size_t num_points = 16;
  Tensor offset_proj;  // [d x 2p]
  Tensor weight_proj;  // [d x p]
};

/// Gathers `num_points` bilinear samples at reference_point + projected
/// offsets (offsets scaled by 1/max(h,w)) and blends them with a softmax of
/// projected logits. Differentiable in the query, the memory and the
/// reference point.
Tensor deformable_cross_attention(const Tensor& query, const Tensor& memory,
                                  const Tensor& reference_point, const DeformableParams& p);

}  // namespace rvos
