#pragma once

#include "rvos/frontend.hpp"
#include "rvos/params.hpp"
#include "rvos/tensor.hpp"

namespace rvos {

/// Sigmoid-parameterized box: normalized center, width, height, each
/// strictly inside (0,1) and differentiable w.r.t. the object embedding.
struct BoxPrediction {
  Tensor cxcywh;  // [4]
  Tensor center() const;  // [2] = (cx, cy)
};

struct MaskLogits {
  Tensor grid;  // [H/4, W/4] pre-sigmoid
};

/// Dot product of a mask embedding with every f_seg position, scaled 1/sqrt(d).
MaskLogits mask_generate(const Tensor& mask_embedding, const Tensor& f_seg);

struct MaskDecoderConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t blocks = 3;       // L_m
  std::size_t num_points = 16;
  std::size_t ffn_mult = 4;
};

/// Box head plus the deformation/cross-modal refinement stack. The box is
/// predicted once from the incoming embedding; its center is the reference
/// point of every deformable block.
class MaskDecoder {
 public:
  explicit MaskDecoder(MaskDecoderConfig cfg) : cfg_(cfg) {}

  void init_params(ParamStore& store, Rng& rng) const;

  BoxPrediction box_head(ParamCtx& ctx, const Tensor& object_embedding) const;

  /// blocks=0 bypasses refinement and returns the embedding unchanged.
  Tensor mask_decode(ParamCtx& ctx, const Tensor& object_embedding, const BoxPrediction& box,
                     const Tensor& f_seg, const TextFeatures& text) const;
  Tensor mask_decode(ParamCtx& ctx, const Tensor& object_embedding, const BoxPrediction& box,
                     const Tensor& f_seg, const TextFeatures& text, std::size_t blocks) const;

  const MaskDecoderConfig& config() const { return cfg_; }

 private:
  MaskDecoderConfig cfg_;
};

}  // namespace rvos
