#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace rvos {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

/// Handle to a value node on a Tape. Copies are cheap; handles stay valid
/// until the owning tape is cleared or destroyed.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  const Shape& shape() const;
  std::size_t size() const;
  std::span<const double> values() const;
  std::span<const double> grad() const;  // empty until backward reaches it
  double item() const;                   // value of a one-element tensor

  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Append-only record of a computation. Nodes are stored in creation order,
/// which is a topological order by construction; backward() walks it in
/// reverse and accumulates gradients additively across fan-out.
///
/// A tape is single-writer: it must not be mutated from two threads.
class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;         // allocated lazily during backward
    std::function<void(Tape&)> back;  // null for leaves
  };

  Tensor input(Shape shape, std::vector<double> values);
  Tensor scalar(double v);
  Tensor zeros(Shape shape);
  Tensor full(Shape shape, double v);

  /// Reverse sweep from a one-element loss. Resets all gradients first.
  void backward(const Tensor& loss);

  void clear();
  std::size_t node_count() const { return nodes_.size(); }

  Node& node(std::uint32_t id) { return nodes_[id]; }
  const Node& node(std::uint32_t id) const { return nodes_[id]; }
  std::uint32_t next_id() const { return static_cast<std::uint32_t>(nodes_.size()); }
  Tensor emplace(Shape shape, std::vector<double> values, std::function<void(Tape&)> back);
  std::vector<double>& grad_buf(std::uint32_t id);

 private:
  std::vector<Node> nodes_;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor abs_elem(const Tensor& a);
Tensor min_elem(const Tensor& a, const Tensor& b);
Tensor max_elem(const Tensor& a, const Tensor& b);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor pow_const(const Tensor& a, double e);
Tensor sqrt_elem(const Tensor& a);
Tensor log_elem(const Tensor& a);
Tensor exp_elem(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);

// ---- shape / data movement ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);                       // 2-D
Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1);
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);
Tensor gather_rows(const Tensor& a, std::vector<std::size_t> rows);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor patch_merge(const Tensor& a, std::size_t s);      // [h,w,c] -> [h/s,w/s,s*s*c]
Tensor upsample_nearest_2x(const Tensor& a);             // [h,w,c] -> [2h,2w,c]
Tensor im2col_3x3(const Tensor& a);                      // [h,w,c] -> [h*w, 9c], zero padded

// ---- linear algebra / normalization ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x);                      // normalize only, eps 1e-5
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor add_rowwise(const Tensor& x, const Tensor& b);    // [m,n] + [n] per row
Tensor mul_rowwise(const Tensor& x, const Tensor& g);

// ---- reductions ----
Tensor reduce_sum(const Tensor& a);
Tensor reduce_mean(const Tensor& a);
Tensor reduce_max(const Tensor& a);                      // subgradient to first argmax
Tensor max_rows(const Tensor& a);                        // [m,n] -> [m]
Tensor dot(const Tensor& a, const Tensor& b);            // 1-D pair -> scalar

// ---- sampling & similarity ----
/// Four-neighbour bilinear blend on a [h,w,c] map at p normalized points
/// [p,2] (x, y) in [0,1]^2, pixel-center aligned (u maps to u*(w-1)).
/// Out-of-range coordinates clamp to the border; gradients flow to both
/// the map and the coordinates.
Tensor bilinear_sample(const Tensor& map, const Tensor& points);
Tensor cosine_rows(const Tensor& a, const Tensor& b);    // [m,d],[m,d] -> [m]

/// Central-difference gradient check. Builds f on a fresh tape per probe,
/// steps each element by step*max(1,|x|), and returns the max over elements
/// of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;
double finite_diff_check(const ScalarFn& f, const Shape& shape,
                         const std::vector<double>& x0, double step = 1e-5);

}  // namespace rvos
