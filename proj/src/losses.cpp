#include "rvos/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rvos {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kProbEps = 1e-12;

// Potentials-based assignment for n <= m, rows processed in order and
// column scans ascending so equal-cost choices resolve to the first found.
std::vector<std::size_t> solve_rows_leq_cols(const std::vector<double>& cost, std::size_t n,
                                             std::size_t m) {
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace

Assignment hungarian(const std::vector<double>& cost, std::size_t n, std::size_t m) {
  if (n == 0 || m == 0 || cost.size() != n * m)
    throw std::invalid_argument("hungarian: bad matrix, " + std::to_string(n) + "x" +
                                std::to_string(m) + " with " + std::to_string(cost.size()) +
                                " entries");
  for (double c : cost)
    if (std::isnan(c)) throw std::invalid_argument("hungarian: NaN cost entry");

  Assignment out;
  if (n <= m) {
    auto row_to_col = solve_rows_leq_cols(cost, n, m);
    for (std::size_t i = 0; i < n; ++i) out.pairs.emplace_back(i, row_to_col[i]);
  } else {
    std::vector<double> t(m * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) t[j * n + i] = cost[i * m + j];
    auto col_to_row = solve_rows_leq_cols(t, m, n);
    for (std::size_t j = 0; j < m; ++j) out.pairs.emplace_back(col_to_row[j], j);
    std::sort(out.pairs.begin(), out.pairs.end());
  }
  for (const auto& [r, c] : out.pairs) out.total_cost += cost[r * m + c];
  return out;
}

Tensor focal_loss(const Tensor& p, int target, double gamma, double balance) {
  if (p.size() != 1) throw std::invalid_argument("focal_loss: probability must be scalar");
  Tensor safe = clamp(p, kProbEps, 1.0 - kProbEps);
  if (target == 1) {
    Tensor one_minus = add_scalar(neg(p), 1.0);
    return scale(mul(pow_const(one_minus, gamma), log_elem(safe)), -balance);
  }
  Tensor one_minus_safe = add_scalar(neg(safe), 1.0);
  return scale(mul(pow_const(p, gamma), log_elem(one_minus_safe)), -(1.0 - balance));
}

namespace {

Tensor box_elem(const Tensor& cxcywh, std::size_t i) {
  return reshape(slice_cols(reshape(cxcywh, Shape{1, 4}), i, i + 1), Shape{});
}

}  // namespace

Tensor giou_cxcywh(const Tensor& pred_cxcywh, const std::array<double, 4>& gt) {
  Tape& t = *pred_cxcywh.tape();
  Tensor cx = box_elem(pred_cxcywh, 0), cy = box_elem(pred_cxcywh, 1);
  Tensor w = box_elem(pred_cxcywh, 2), h = box_elem(pred_cxcywh, 3);
  Tensor px1 = sub(cx, scale(w, 0.5)), px2 = add(cx, scale(w, 0.5));
  Tensor py1 = sub(cy, scale(h, 0.5)), py2 = add(cy, scale(h, 0.5));
  Tensor gx1 = t.scalar(gt[0] - gt[2] / 2), gx2 = t.scalar(gt[0] + gt[2] / 2);
  Tensor gy1 = t.scalar(gt[1] - gt[3] / 2), gy2 = t.scalar(gt[1] + gt[3] / 2);

  Tensor inter_w = relu(sub(min_elem(px2, gx2), max_elem(px1, gx1)));
  Tensor inter_h = relu(sub(min_elem(py2, gy2), max_elem(py1, gy1)));
  Tensor inter = mul(inter_w, inter_h);
  Tensor area_p = mul(w, h);
  Tensor union_ = sub(add_scalar(area_p, gt[2] * gt[3]), inter);
  Tensor iou = div(inter, union_);
  Tensor enc_w = sub(max_elem(px2, gx2), min_elem(px1, gx1));
  Tensor enc_h = sub(max_elem(py2, gy2), min_elem(py1, gy1));
  Tensor enclose = mul(enc_w, enc_h);
  return sub(iou, div(sub(enclose, union_), enclose));
}

Tensor box_loss(const Tensor& pred_cxcywh, const std::array<double, 4>& gt,
                const LossWeights& w) {
  if (pred_cxcywh.size() != 4) throw std::invalid_argument("box_loss: prediction must be [4]");
  if (gt[2] <= 0.0 || gt[3] <= 0.0)
    throw std::invalid_argument("box_loss: ground-truth extents must be positive");
  Tape& t = *pred_cxcywh.tape();
  Tensor gt_leaf = t.input({4}, {gt[0], gt[1], gt[2], gt[3]});
  Tensor l1 = reduce_sum(abs_elem(sub(reshape(pred_cxcywh, Shape{4}), gt_leaf)));
  Tensor giou_term = add_scalar(neg(giou_cxcywh(pred_cxcywh, gt)), 1.0);
  return add(scale(l1, w.l1), scale(giou_term, w.giou));
}

Tensor dice_distance(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dice: length mismatch");
  Tensor num = add_scalar(scale(reduce_sum(mul(a, b)), 2.0), 1.0);
  Tensor den = add_scalar(add(reduce_sum(a), reduce_sum(b)), 1.0);
  return add_scalar(neg(div(num, den)), 1.0);
}

std::vector<double> rasterize_box(const std::array<double, 4>& box, std::size_t gh,
                                  std::size_t gw) {
  std::vector<double> grid(gh * gw, 0.0);
  const double x1 = box[0] - box[2] / 2, x2 = box[0] + box[2] / 2;
  const double y1 = box[1] - box[3] / 2, y2 = box[1] + box[3] / 2;
  for (std::size_t y = 0; y < gh; ++y) {
    const double cy = (static_cast<double>(y) + 0.5) / static_cast<double>(gh);
    for (std::size_t x = 0; x < gw; ++x) {
      const double cx = (static_cast<double>(x) + 0.5) / static_cast<double>(gw);
      if (cx >= x1 && cx <= x2 && cy >= y1 && cy <= y2) grid[y * gw + x] = 1.0;
    }
  }
  return grid;
}

Tensor mask_loss(const MaskLogits& logits, const std::vector<double>& gt_mask,
                 const std::array<double, 4>& gt_box, const LossWeights& w) {
  const Shape& s = logits.grid.shape();
  const std::size_t gh = s.at(0), gw = s.at(1);
  if (gt_mask.size() != gh * gw)
    throw std::invalid_argument("mask_loss: ground truth has " +
                                std::to_string(gt_mask.size()) + " cells, logits " +
                                shape_str(s));
  Tape& t = *logits.grid.tape();
  Tensor p = sigmoid(reshape(logits.grid, Shape{gh * gw}));
  Tensor gt = t.input({gh * gw}, gt_mask);

  Tensor dice_term = dice_distance(p, gt);

  // per-pixel focal, mean reduced
  Tensor p_safe = clamp(p, kProbEps, 1.0 - kProbEps);
  Tensor one_minus_p = add_scalar(neg(p), 1.0);
  Tensor pos = scale(mul(mul(pow_const(one_minus_p, 2.0), log_elem(p_safe)), gt), -0.25);
  Tensor neg_mask = add_scalar(neg(gt), 1.0);
  Tensor one_minus_safe = add_scalar(neg(p_safe), 1.0);
  Tensor negs = scale(mul(mul(pow_const(p, 2.0), log_elem(one_minus_safe)), neg_mask), -0.75);
  Tensor focal_term = reduce_mean(add(pos, negs));

  // axis max-projections of the soft mask vs the box indicator
  Tensor grid2d = reshape(p, Shape{gh, gw});
  Tensor proj_y = max_rows(grid2d);             // [gh]
  Tensor proj_x = max_rows(transpose(grid2d));  // [gw]
  const std::vector<double> box_grid = rasterize_box(gt_box, gh, gw);
  std::vector<double> by(gh, 0.0), bx(gw, 0.0);
  for (std::size_t y = 0; y < gh; ++y)
    for (std::size_t x = 0; x < gw; ++x)
      if (box_grid[y * gw + x] > 0.0) {
        by[y] = 1.0;
        bx[x] = 1.0;
      }
  Tensor proj_term = scale(add(dice_distance(proj_x, t.input({gw}, bx)),
                               dice_distance(proj_y, t.input({gh}, by))),
                           0.5);

  return add(add(scale(dice_term, w.dice), scale(focal_term, w.focal)),
             scale(proj_term, w.proj));
}

double PredictionSequence::mean_cls() const {
  double s = 0.0;
  for (const FramePrediction& f : frames) s += f.cls.item();
  return frames.empty() ? 0.0 : s / static_cast<double>(frames.size());
}

Tensor matching_cost(const GroundTruthSequence& gt, const PredictionSequence& p,
                     const LossWeights& w) {
  if (gt.frames.size() != p.frames.size() || gt.frames.empty())
    throw std::invalid_argument("matching_cost: sequence lengths disagree");
  const std::size_t t_count = gt.frames.size();
  Tensor total;
  for (std::size_t t = 0; t < t_count; ++t) {
    const GtFrame& g = gt.frames[t];
    const FramePrediction& f = p.frames[t];
    Tensor frame_cost = scale(focal_loss(f.cls, g.present ? 1 : 0), w.cls);
    if (g.present) {
      frame_cost = add(frame_cost, box_loss(f.box, g.box, w));
      frame_cost = add(frame_cost, mask_loss(f.mask, g.mask, g.box, w));
    }
    total = t == 0 ? frame_cost : add(total, frame_cost);
  }
  return scale(total, 1.0 / static_cast<double>(t_count));
}

std::pair<Tensor, std::size_t> training_loss(const GroundTruthSequence& gt,
                                             const std::vector<PredictionSequence>& candidates,
                                             const LossWeights& w) {
  if (candidates.empty()) throw std::invalid_argument("training_loss: no candidates");
  std::vector<Tensor> costs;
  costs.reserve(candidates.size());
  for (const PredictionSequence& c : candidates) costs.push_back(matching_cost(gt, c, w));
  std::size_t positive = 0;
  for (std::size_t i = 1; i < costs.size(); ++i)
    if (costs[i].item() < costs[positive].item()) positive = i;

  Tensor loss = costs[positive];
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (i == positive) continue;
    const std::size_t t_count = candidates[i].frames.size();
    Tensor neg_total;
    for (std::size_t t = 0; t < t_count; ++t) {
      Tensor term = scale(focal_loss(candidates[i].frames[t].cls, 0), w.cls);
      neg_total = t == 0 ? term : add(neg_total, term);
    }
    loss = add(loss, scale(neg_total, 1.0 / static_cast<double>(t_count)));
  }
  return {loss, positive};
}

}  // namespace rvos
