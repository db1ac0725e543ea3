#pragma once

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include "rvos/mask_decoder.hpp"
#include "rvos/tensor.hpp"

namespace rvos {

struct LossWeights {
  double cls = 4.0;
  double l1 = 5.0;
  double giou = 2.0;
  double dice = 5.0;
  double focal = 5.0;
  double proj = 5.0;
};

/// Minimum-cost assignment on an n x m matrix (row-major). Returns the
/// injective pairs, |pairs| = min(n,m), sorted by row, with deterministic
/// lexicographic (row, column) tie-breaking, plus the total cost.
struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double total_cost = 0.0;
};
Assignment hungarian(const std::vector<double>& cost, std::size_t n, std::size_t m);

/// Binary focal term on a probability. target 1: -balance*(1-p)^gamma*ln p;
/// target 0: -(1-balance)*p^gamma*ln(1-p).
Tensor focal_loss(const Tensor& p, int target, double gamma = 2.0, double balance = 0.25);

/// lambda_l1 * |pred - gt|_1 in cxcywh space + lambda_giou * (1 - GIoU) on
/// corner form.
Tensor box_loss(const Tensor& pred_cxcywh, const std::array<double, 4>& gt_cxcywh,
                const LossWeights& w);

/// Differentiable generalized IoU of two cxcywh boxes (tensor vs constant).
Tensor giou_cxcywh(const Tensor& pred_cxcywh, const std::array<double, 4>& gt_cxcywh);

/// DICE + per-pixel focal + axis-projection DICE against the rasterized box.
/// gt_mask is a 0/1 grid matching the logits extents.
Tensor mask_loss(const MaskLogits& logits, const std::vector<double>& gt_mask,
                 const std::array<double, 4>& gt_box, const LossWeights& w);

/// Soft DICE distance 1 - (2<a,b>+1)/(sum a + sum b + 1) for same-length vectors.
Tensor dice_distance(const Tensor& a, const Tensor& b);

/// Cells whose center lies inside the (cx,cy,w,h) box, as a 0/1 grid.
std::vector<double> rasterize_box(const std::array<double, 4>& box, std::size_t gh,
                                  std::size_t gw);

struct FramePrediction {
  Tensor cls;       // scalar probability
  Tensor box;       // [4] cxcywh
  MaskLogits mask;  // [gh, gw]
};

struct PredictionSequence {
  std::vector<FramePrediction> frames;
  double mean_cls() const;
};

struct GtFrame {
  bool present = true;
  std::array<double, 4> box{};
  std::vector<double> mask;  // 0/1 grid at logits extents
};

struct GroundTruthSequence {
  std::vector<GtFrame> frames;
  std::size_t mask_h = 0, mask_w = 0;
};

/// Per-frame matching cost, normalized by the frame count. Box and mask
/// terms are skipped on absent-object frames.
Tensor matching_cost(const GroundTruthSequence& gt, const PredictionSequence& p,
                     const LossWeights& w);

/// Lowest-cost candidate receives the full loss; every other candidate only
/// its frame-averaged classification focal toward 0. Returns the loss and
/// the positive index.
std::pair<Tensor, std::size_t> training_loss(const GroundTruthSequence& gt,
                                             const std::vector<PredictionSequence>& candidates,
                                             const LossWeights& w);

}  // namespace rvos
