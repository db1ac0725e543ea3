#pragma once

#include <span>
#include <utility>
#include <vector>

#include "rvos/params.hpp"
#include "rvos/tensor.hpp"

namespace rvos {

/// Per-frame visual features: f_img at stride 8 and the high-resolution
/// f_seg map at stride 4.
struct FrameFeatures {
  Tensor f_img;  // [H/8, W/8, d]
  Tensor f_seg;  // [H/4, W/4, d]
};

/// Encoded text program. Row 0 is the sentence token.
struct TextFeatures {
  Tensor tokens;  // [K, d]
  Tensor cls() const;
  std::size_t count() const { return tokens.shape()[0]; }
};

// Composable building blocks used by the image path.
Tensor linear_last(const Tensor& x3d, const Tensor& w, const Tensor& b);
Tensor conv3x3(const Tensor& x3d, const Tensor& w /*[9c_in, c_out]*/, const Tensor& b);
Tensor group_norm(const Tensor& x3d, std::size_t groups, const Tensor& gain, const Tensor& bias);

struct FrontendConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t vocab = 24;
  std::size_t max_tokens = 8;  // including the sentence token
  std::size_t groups = 8;
};

/// Frame/text encoders and the bidirectional fusion block, with the FPN head
/// that produces f_seg.
class Frontend {
 public:
  explicit Frontend(FrontendConfig cfg);

  void init_params(ParamStore& store, Rng& rng) const;

  /// Two strided patch-merge stages H x W x 3 -> H/8 x W/8 x d.
  Tensor encode_frame(ParamCtx& ctx, const Tensor& frame) const;

  /// Embedding + positional vectors + one self-attention block. A dedicated
  /// sentence id is prepended at position 0.
  TextFeatures encode_text(ParamCtx& ctx, std::span<const int> token_ids) const;

  /// One bidirectional cross-attention block with residual + layer norm,
  /// then the FPN producing f_seg.
  std::pair<FrameFeatures, TextFeatures> fuse(ParamCtx& ctx, const Tensor& raw_features,
                                              const TextFeatures& text) const;

  const FrontendConfig& config() const { return cfg_; }

 private:
  FrontendConfig cfg_;
};

}  // namespace rvos
