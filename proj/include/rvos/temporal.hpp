#pragma once

#include <utility>
#include <vector>

#include "rvos/params.hpp"
#include "rvos/tensor.hpp"

namespace rvos {

/// Per-object momentum memory. Updates are tracking bookkeeping: plain
/// values, no gradient across frames.
struct ObjectMemory {
  std::size_t rows = 0;
  std::size_t dim = 0;
  double alpha = 0.1;
  std::vector<double> m;  // rows x dim
};

/// Hungarian alignment of a frame's objects against the memory rows, with
/// cosine-distance cost. Returns the reordered (differentiable) embeddings
/// and the permutation applied: slot i now holds input row perm[i].
std::pair<Tensor, std::vector<std::size_t>> align_objects(const ObjectMemory& memory,
                                                          const Tensor& objects);

/// Eq.-style momentum update: each row blends toward its aligned embedding
/// with gate alpha * clamp(cos(embedding, sentence), 0, 1). Every updated
/// entry stays inside [min(old,new), max(old,new)].
void update_memory(ObjectMemory& memory, std::span<const double> aligned,
                   std::span<const double> sentence);

struct TemporalConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t blocks = 3;  // L_t
  double alpha = 0.1;
};

struct EnhancedVideo {
  std::vector<Tensor> frames;                        // T x [N_s, d]
  std::vector<std::vector<std::size_t>> permutations;
  ObjectMemory memory;
};

/// Memory-augmented tracking plus the cross-modal temporal decoder.
class TemporalEnhancer {
 public:
  explicit TemporalEnhancer(TemporalConfig cfg) : cfg_(cfg) {}

  void init_params(ParamStore& store, Rng& rng) const;

  /// One block: per-slot temporal self-attention, sentence-query cross
  /// attention producing one context vector per frame, then the layer-norm
  /// residual enhancement broadcast over that frame's slots.
  std::vector<Tensor> temporal_block(ParamCtx& ctx, const std::vector<Tensor>& frames,
                                     const std::vector<Tensor>& sentences,
                                     std::size_t block) const;

  /// Sequential align/update over t, then `blocks` temporal blocks.
  EnhancedVideo enhance(ParamCtx& ctx, const std::vector<Tensor>& frames,
                        const std::vector<Tensor>& sentences) const;

  const TemporalConfig& config() const { return cfg_; }

 private:
  TemporalConfig cfg_;
};

}  // namespace rvos
