#include "rvos/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rvos {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

Tape& same_tape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.valid() && b.valid(), std::string(op) + ": unbound tensor");
  require(a.tape() == b.tape(), std::string(op) + ": operands on different tapes");
  return *a.tape();
}

void check_rank(const Tensor& a, std::size_t rank, const char* op) {
  require(a.shape().size() == rank,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
              shape_str(a.shape()));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
std::size_t Tensor::size() const { return tape_->node(id_).val.size(); }
std::span<const double> Tensor::values() const { return tape_->node(id_).val; }
std::span<const double> Tensor::grad() const { return tape_->node(id_).grad; }

double Tensor::item() const {
  const auto& v = tape_->node(id_).val;
  require(v.size() == 1, "item: tensor has " + std::to_string(v.size()) + " elements");
  return v[0];
}

Tensor Tape::emplace(Shape shape, std::vector<double> values, std::function<void(Tape&)> back) {
  require(numel(shape) == values.size(), "tape: shape " + shape_str(shape) +
                                             " does not match value count " +
                                             std::to_string(values.size()));
  nodes_.push_back(Node{std::move(shape), std::move(values), {}, std::move(back)});
  return Tensor(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tensor Tape::input(Shape shape, std::vector<double> values) {
  return emplace(std::move(shape), std::move(values), nullptr);
}

Tensor Tape::scalar(double v) { return emplace(Shape{}, {v}, nullptr); }

Tensor Tape::zeros(Shape shape) {
  std::vector<double> v(numel(shape), 0.0);
  return emplace(std::move(shape), std::move(v), nullptr);
}

Tensor Tape::full(Shape shape, double x) {
  std::vector<double> v(numel(shape), x);
  return emplace(std::move(shape), std::move(v), nullptr);
}

std::vector<double>& Tape::grad_buf(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
  return n.grad;
}

void Tape::backward(const Tensor& loss) {
  require(loss.valid() && loss.tape() == this, "backward: loss not on this tape");
  require(numel(node(loss.id()).shape) == 1,
          "backward: loss must be scalar, got " + shape_str(node(loss.id()).shape));
  for (Node& n : nodes_) n.grad.clear();
  grad_buf(loss.id())[0] = 1.0;
  for (std::uint32_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.grad.empty() && n.back) n.back(*this);
  }
}

void Tape::clear() { nodes_.clear(); }

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

namespace {

// Shared skeleton for binary elementwise ops with per-element backward rules.
template <class Fwd, class Bwd>
Tensor binary_elem(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Bwd bwd) {
  Tape& t = same_tape(a, b, op);
  check_same_shape(a, b, op);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  const std::uint32_t oid = t.next_id(), ai = a.id(), bi = b.id();
  return t.emplace(a.shape(), std::move(out), [oid, ai, bi, bwd](Tape& tp) {
    const auto& g = tp.node(oid).grad;
    const auto& av2 = tp.node(ai).val;
    const auto& bv2 = tp.node(bi).val;
    auto& ga = tp.grad_buf(ai);
    auto& gb = tp.grad_buf(bi);
    for (std::size_t i = 0; i < g.size(); ++i) bwd(g[i], av2[i], bv2[i], ga[i], gb[i]);
  });
}

template <class Fwd, class Bwd>
Tensor unary_elem(const Tensor& a, const char* op, Fwd fwd, Bwd bwd) {
  require(a.valid(), std::string(op) + ": unbound tensor");
  Tape& t = *a.tape();
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  const std::uint32_t oid = t.next_id(), ai = a.id();
  return t.emplace(a.shape(), std::move(out), [oid, ai, bwd](Tape& tp) {
    const auto& g = tp.node(oid).grad;
    const auto& av2 = tp.node(ai).val;
    const auto& yv = tp.node(oid).val;
    auto& ga = tp.grad_buf(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bwd(av2[i], yv[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elem(a, b, "add", [](double x, double y) { return x + y; },
                     [](double g, double, double, double& ga, double& gb) {
                       ga += g;
                       gb += g;
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elem(a, b, "sub", [](double x, double y) { return x - y; },
                     [](double g, double, double, double& ga, double& gb) {
                       ga += g;
                       gb -= g;
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elem(a, b, "mul", [](double x, double y) { return x * y; },
                     [](double g, double x, double y, double& ga, double& gb) {
                       ga += g * y;
                       gb += g * x;
                     });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_elem(a, b, "div", [](double x, double y) { return x / y; },
                     [](double g, double x, double y, double& ga, double& gb) {
                       ga += g / y;
                       gb -= g * x / (y * y);
                     });
}

Tensor min_elem(const Tensor& a, const Tensor& b) {
  return binary_elem(a, b, "min_elem", [](double x, double y) { return x <= y ? x : y; },
                     [](double g, double x, double y, double& ga, double& gb) {
                       (x <= y ? ga : gb) += g;
                     });
}

Tensor max_elem(const Tensor& a, const Tensor& b) {
  return binary_elem(a, b, "max_elem", [](double x, double y) { return x >= y ? x : y; },
                     [](double g, double x, double y, double& ga, double& gb) {
                       (x >= y ? ga : gb) += g;
                     });
}

Tensor scale(const Tensor& a, double s) {
  return unary_elem(a, "scale", [s](double x) { return s * x; },
                    [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_elem(a, "add_scalar", [s](double x) { return x + s; },
                    [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor abs_elem(const Tensor& a) {
  return unary_elem(a, "abs", [](double x) { return std::fabs(x); },
                    [](double x, double) { return x >= 0.0 ? 1.0 : -1.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  require(lo <= hi, "clamp: lo > hi");
  return unary_elem(a, "clamp", [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
                    [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor pow_const(const Tensor& a, double e) {
  return unary_elem(a, "pow_const", [e](double x) { return std::pow(x, e); },
                    [e](double x, double) { return e * std::pow(x, e - 1.0); });
}

Tensor sqrt_elem(const Tensor& a) {
  return unary_elem(a, "sqrt", [](double x) { return std::sqrt(x); },
                    [](double, double y) { return 0.5 / y; });
}

Tensor log_elem(const Tensor& a) {
  return unary_elem(a, "log", [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Tensor exp_elem(const Tensor& a) {
  return unary_elem(a, "exp", [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_elem(a, "sigmoid",
                    [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                                   : std::exp(x) / (1.0 + std::exp(x)); },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary_elem(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary_elem(a, "gelu",
                    [=](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
                    [=](double x, double) {
                      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                      return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
                    });
}

// ---------------------------------------------------------------------------
// shape / data movement
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  require(a.valid(), "reshape: unbound tensor");
  require(numel(shape) == a.size(), "reshape: cannot view " + shape_str(a.shape()) + " as " +
                                        shape_str(shape));
  Tape& t = *a.tape();
  std::vector<double> out(a.values().begin(), a.values().end());
  const std::uint32_t oid = t.next_id(), ai = a.id();
  return t.emplace(std::move(shape), std::move(out), [oid, ai](Tape& tp) {
    const auto& g = tp.node(oid).grad;
    auto& ga = tp.grad_buf(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor transpose(const Tensor& a) {
  check_rank(a, 2, "transpose");
  Tape& t = *a.tape();
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const auto av = a.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  const std::uint32_t oid = t.next_id(), ai = a.id();
  return t.emplace(Shape{n, m}, std::move(out), [oid, ai, m, n](Tape& tp) {
    const auto& g = tp.node(oid).grad;
    auto& ga = tp.grad_buf(ai);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
  check_rank(a, 2, "slice_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  require(r0 < r1 && r1 <= m, "slice_rows: range [" + std::to_string(r0) + "," +
                                  std::to_string(r1) + ") out of " + std::to_string(m));
  Tape& t = *a.tape();
  const auto av = a.values();
  std::vector<double> out(av.begin() + r0 * n, av.begin() + r1 * n);
  const std::uint32_t oid = t.next_id(), ai = a.id();
  return t.emplace(Shape{r1 - r0, n}, std::move(out), [oid, ai, r0, n](Tape& tp) {
    const auto& g = tp.node(oid).grad;
    auto& ga = tp.grad_buf(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[r0 * n + i] += g[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  check_rank(a, 2, "slice_cols");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  require(c0 < c1 && c1 <= n, "slice_cols: range out of " + std::to_string(n));
  Tape& t = *a.tape();
  const auto av = a.values();
  const std::size_t w = c1 - c0;
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = av[i * n + c0 + j];
  const std::uint32_t oid = t.next_id(), ai = a.id();
  return t.emplace(Shape{m, w}, std::move(out), [oid, ai, m, n, c0, w](Tape& tp) {
    const auto& g = tp.node(oid).grad;
    auto& ga = tp.grad_buf(ai);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * n + c0 + j] += g[i * w + j];
  });
}

Tensor gather_rows(const Tensor& a, std::vector<std::size_t> rows) {
  check_rank(a, 2, "gather_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  for (std::size_t r : rows)
    require(r < m, "gather_rows: index " + std::to_string(r) + " out of " + std::to_string(m));
  Tape& t = *a.tape();
  const auto av = a.values();
  std::vector<double> out(rows.size() * n);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(av.begin() + rows[i] * n, n, out.begin() + i * n);
  const std::uint32_t oid = t.next_id(), ai = a.id();
  const std::size_t k = rows.size();
  return t.emplace(Shape{k, n}, std::move(out),
                   [oid, ai, n, rows = std::move(rows)](Tape& tp) {
                     const auto& g = tp.node(oid).grad;
                     auto& ga = tp.grad_buf(ai);
                     for (std::size_t i = 0; i < rows.size(); ++i)
                       for (std::size_t j = 0; j < n; ++j) ga[rows[i] * n + j] += g[i * n + j];
                   });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_rows: no parts");
  Tape& t = *parts[0].tape();
  const std::size_t n = parts[0].shape().at(1);
  std::size_t m = 0;
  for (const Tensor& p : parts) {
    check_rank(p, 2, "concat_rows");
    require(p.shape()[1] == n, "concat_rows: column mismatch " + shape_str(p.shape()));
    m += p.shape()[0];
  }
  std::vector<double> out;
  out.reserve(m * n);
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> row_counts;
  for (const Tensor& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
    ids.push_back(p.id());
    row_counts.push_back(p.shape()[0]);
  }
  const std::uint32_t oid = t.next_id();
  return t.emplace(Shape{m, n}, std::move(out),
                   [oid, n, ids = std::move(ids), row_counts = std::move(row_counts)](Tape& tp) {
                     const auto& g = tp.node(oid).grad;
                     std::size_t off = 0;
                     for (std::size_t p = 0; p < ids.size(); ++p) {
                       auto& ga = tp.grad_buf(ids[p]);
                       const std::size_t cnt = row_counts[p] * n;
                       for (std::size_t i = 0; i < cnt; ++i) ga[i] += g[off + i];
                       off += cnt;
                     }
                   });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_cols: no parts");
  Tape& t = *parts[0].tape();
  const std::size_t m = parts[0].shape().at(0);
  std::size_t n = 0;
  for (const Tensor& p : parts) {
    check_rank(p, 2, "concat_cols");
    require(p.shape()[0] == m, "concat_cols: row mismatch " + shape_str(p.shape()));
    n += p.shape()[1];
  }
  std::vector<double> out(m * n);
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> widths;
  std::size_t coff = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.shape()[1];
    const auto pv = p.values();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(pv.begin() + i * w, w, out.begin() + i * n + coff);
    coff += w;
    ids.push_back(p.id());
    widths.push_back(w);
  }
  const std::uint32_t oid = t.next_id();
  return t.emplace(Shape{m, n}, std::move(out),
                   [oid, m, n, ids = std::move(ids), widths = std::move(widths)](Tape& tp) {
                     const auto& g = tp.node(oid).grad;
                     std::size_t coff2 = 0;
                     for (std::size_t p = 0; p < ids.size(); ++p) {
                       auto& ga = tp.grad_buf(ids[p]);
                       const std::size_t w = widths[p];
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < w; ++j)
                           ga[i * w + j] += g[i * n + coff2 + j];
                       coff2 += w;
                     }
                   });
}

Tensor patch_merge(const Tensor& a, std::size_t s) {
  check_rank(a, 3, "patch_merge");
  const std::size_t h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
  require(s >= 1 && h % s == 0 && w % s == 0,
          "patch_merge: " + shape_str(a.shape()) + " not divisible by " + std::to_string(s));
  Tape& t = *a.tape();
  const std::size_t oh = h / s, ow = w / s, oc = s * s * c;
  const auto av = a.values();
  std::vector<double> out(oh * ow * oc);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t dy = 0; dy < s; ++dy)
        for (std::size_t dx = 0; dx < s; ++dx)
          for (std::size_t ch = 0; ch < c; ++ch)
            out[(y * ow + x) * oc + (dy * s + dx) * c + ch] =
                av[((y * s + dy) * w + (x * s + dx)) * c + ch];
  const std::uint32_t oid = t.next_id(), ai = a.id();
  return t.emplace(Shape{oh, ow, oc}, std::move(out), [oid, ai, s, h, w, c](Tape& tp) {
    const auto& g = tp.node(oid).grad;
    auto& ga = tp.grad_buf(ai);
    const std::size_t oh2 = h / s, ow2 = w / s, oc2 = s * s * c;
    for (std::size_t y = 0; y < oh2; ++y)
      for (std::size_t x = 0; x < ow2; ++x)
        for (std::size_t dy = 0; dy < s; ++dy)
          for (std::size_t dx = 0; dx < s; ++dx)
            for (std::size_t ch = 0; ch < c; ++ch)
              ga[((y * s + dy) * w + (x * s + dx)) * c + ch] +=
                  g[(y * ow2 + x) * oc2 + (dy * s + dx) * c + ch];
  });
}

Tensor upsample_nearest_2x(const Tensor& a) {
  check_rank(a, 3, "upsample_nearest_2x");
  const std::size_t h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
  Tape& t = *a.tape();
  const auto av = a.values();
  std::vector<double> out(4 * h * w * c);
  for (std::size_t y = 0; y < 2 * h; ++y)
    for (std::size_t x = 0; x < 2 * w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(y * 2 * w + x) * c + ch] = av[((y / 2) * w + (x / 2)) * c + ch];
  const std::uint32_t oid = t.next_id(), ai = a.id();
  return t.emplace(Shape{2 * h, 2 * w, c}, std::move(out), [oid, ai, h, w, c](Tape& tp) {
    const auto& g = tp.node(oid).grad;
    auto& ga = tp.grad_buf(ai);
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t x = 0; x < 2 * w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch)
          ga[((y / 2) * w + (x / 2)) * c + ch] += g[(y * 2 * w + x) * c + ch];
  });
}

Tensor im2col_3x3(const Tensor& a) {
  check_rank(a, 3, "im2col_3x3");
  const std::size_t h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
  Tape& t = *a.tape();
  const auto av = a.values();
  std::vector<double> out(h * w * 9 * c, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (int ky = -1; ky <= 1; ++ky)
        for (int kx = -1; kx <= 1; ++kx) {
          const long sy = static_cast<long>(y) + ky, sx = static_cast<long>(x) + kx;
          if (sy < 0 || sy >= static_cast<long>(h) || sx < 0 || sx >= static_cast<long>(w))
            continue;
          const std::size_t tap = static_cast<std::size_t>((ky + 1) * 3 + (kx + 1));
          for (std::size_t ch = 0; ch < c; ++ch)
            out[(y * w + x) * 9 * c + tap * c + ch] = av[(sy * w + sx) * c + ch];
        }
  const std::uint32_t oid = t.next_id(), ai = a.id();
  return t.emplace(Shape{h * w, 9 * c}, std::move(out), [oid, ai, h, w, c](Tape& tp) {
    const auto& g = tp.node(oid).grad;
    auto& ga = tp.grad_buf(ai);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (int ky = -1; ky <= 1; ++ky)
          for (int kx = -1; kx <= 1; ++kx) {
            const long sy = static_cast<long>(y) + ky, sx = static_cast<long>(x) + kx;
            if (sy < 0 || sy >= static_cast<long>(h) || sx < 0 || sx >= static_cast<long>(w))
              continue;
            const std::size_t tap = static_cast<std::size_t>((ky + 1) * 3 + (kx + 1));
            for (std::size_t ch = 0; ch < c; ++ch)
              ga[(sy * w + sx) * c + ch] += g[(y * w + x) * 9 * c + tap * c + ch];
          }
  });
}

// ---------------------------------------------------------------------------
// linear algebra / normalization
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& t = same_tape(a, b, "matmul");
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  require(k == k2, "matmul: inner extents disagree, " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
  const double* av = a.values().data();
  const double* bv = b.values().data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  const std::uint32_t oid = t.next_id(), ai = a.id(), bi = b.id();
  return t.emplace(Shape{m, n}, std::move(out), [oid, ai, bi, m, k, n](Tape& tp) {
    const double* g = tp.node(oid).grad.data();
    const double* av2 = tp.node(ai).val.data();
    const double* bv2 = tp.node(bi).val.data();
    auto& ga = tp.grad_buf(ai);
    auto& gb = tp.grad_buf(bi);
    // dA = dC * B^T  (row dot row)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double* grow = g + i * n;
        const double* brow = bv2 + p * n;
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
        ga[i * k + p] += acc;
      }
    // dB = A^T * dC  (axpy rows)
    for (std::size_t i = 0; i < m; ++i) {
      const double* grow = g + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = av2[i * k + p];
        if (aip == 0.0) continue;
        double* gbrow = gb.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
      }
    }
  });
}

Tensor softmax_rows(const Tensor& x) {
  check_rank(x, 2, "softmax_rows");
  Tape& t = *x.tape();
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  const auto xv = x.values();
  for (double v : xv)
    if (std::isnan(v)) throw std::domain_error("softmax_rows: NaN input");
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      sum += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= sum;
  }
  const std::uint32_t oid = t.next_id(), xi = x.id();
  return t.emplace(Shape{m, n}, std::move(out), [oid, xi, m, n](Tape& tp) {
    const auto& g = tp.node(oid).grad;
    const auto& y = tp.node(oid).val;
    auto& gx = tp.grad_buf(xi);
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        gx[i * n + j] += y[i * n + j] * (g[i * n + j] - s);
    }
  });
}

namespace {

constexpr double kLayerNormEps = 1e-5;

// Normalization over the last axis; rows = all leading axes flattened.
Tensor layer_norm_core(const Tensor& x) {
  require(x.valid() && !x.shape().empty(), "layer_norm: unbound or rank-0 tensor");
  Tape& t = *x.tape();
  const std::size_t d = x.shape().back();
  require(d >= 2, "layer_norm: last extent must be >= 2, got " + shape_str(x.shape()));
  const std::size_t rows = x.size() / d;
  const auto xv = x.values();
  std::vector<double> out(x.size());
  std::vector<double> inv_std(rows), mean(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    mean[r] = mu;
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (row[j] - mu) * inv;
  }
  const std::uint32_t oid = t.next_id(), xi = x.id();
  return t.emplace(x.shape(), std::move(out),
                   [oid, xi, d, rows, mean = std::move(mean),
                    inv_std = std::move(inv_std)](Tape& tp) {
                     const auto& g = tp.node(oid).grad;
                     const auto& xh = tp.node(oid).val;  // normalized values
                     auto& gx = tp.grad_buf(xi);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double gsum = 0.0, gxsum = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                         gsum += g[r * d + j];
                         gxsum += g[r * d + j] * xh[r * d + j];
                       }
                       const double invd = 1.0 / static_cast<double>(d);
                       for (std::size_t j = 0; j < d; ++j)
                         gx[r * d + j] += inv_std[r] * (g[r * d + j] - gsum * invd -
                                                        xh[r * d + j] * gxsum * invd);
                     }
                   });
}

}  // namespace

Tensor layer_norm(const Tensor& x) { return layer_norm_core(x); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const std::size_t d = x.shape().back();
  require(gain.shape() == Shape{d} && bias.shape() == Shape{d},
          "layer_norm: affine params must be [" + std::to_string(d) + "], got " +
              shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  Tensor xhat = layer_norm_core(x);
  if (x.shape().size() == 1) return add(mul(xhat, gain), bias);
  const std::size_t rows = x.size() / d;
  Tensor flat = reshape(xhat, Shape{rows, d});
  Tensor affine = add_rowwise(mul_rowwise(flat, gain), bias);
  return reshape(affine, x.shape());
}

Tensor add_rowwise(const Tensor& x, const Tensor& b) {
  Tape& t = same_tape(x, b, "add_rowwise");
  check_rank(x, 2, "add_rowwise");
  check_rank(b, 1, "add_rowwise");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  require(b.shape()[0] == n, "add_rowwise: " + shape_str(x.shape()) + " vs " +
                                 shape_str(b.shape()));
  const auto xv = x.values();
  const auto bv = b.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  const std::uint32_t oid = t.next_id(), xi = x.id(), bi = b.id();
  return t.emplace(Shape{m, n}, std::move(out), [oid, xi, bi, m, n](Tape& tp) {
    const auto& g = tp.node(oid).grad;
    auto& gx = tp.grad_buf(xi);
    auto& gb = tp.grad_buf(bi);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        gx[i * n + j] += g[i * n + j];
        gb[j] += g[i * n + j];
      }
  });
}

Tensor mul_rowwise(const Tensor& x, const Tensor& gmul) {
  Tape& t = same_tape(x, gmul, "mul_rowwise");
  check_rank(x, 2, "mul_rowwise");
  check_rank(gmul, 1, "mul_rowwise");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  require(gmul.shape()[0] == n, "mul_rowwise: " + shape_str(x.shape()) + " vs " +
                                    shape_str(gmul.shape()));
  const auto xv = x.values();
  const auto gv = gmul.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] * gv[j];
  const std::uint32_t oid = t.next_id(), xi = x.id(), gi = gmul.id();
  return t.emplace(Shape{m, n}, std::move(out), [oid, xi, gi, m, n](Tape& tp) {
    const auto& g = tp.node(oid).grad;
    const auto& xv2 = tp.node(xi).val;
    const auto& gv2 = tp.node(gi).val;
    auto& gx = tp.grad_buf(xi);
    auto& gg = tp.grad_buf(gi);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        gx[i * n + j] += g[i * n + j] * gv2[j];
        gg[j] += g[i * n + j] * xv2[i * n + j];
      }
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor reduce_sum(const Tensor& a) {
  require(a.valid(), "reduce_sum: unbound tensor");
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.values()) s += v;
  const std::uint32_t oid = t.next_id(), ai = a.id();
  return t.emplace(Shape{}, {s}, [oid, ai](Tape& tp) {
    const double g = tp.node(oid).grad[0];
    auto& ga = tp.grad_buf(ai);
    for (double& v : ga) v += g;
  });
}

Tensor reduce_mean(const Tensor& a) {
  require(a.valid(), "reduce_mean: unbound tensor");
  Tape& t = *a.tape();
  const double inv = 1.0 / static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.values()) s += v;
  const std::uint32_t oid = t.next_id(), ai = a.id();
  return t.emplace(Shape{}, {s * inv}, [oid, ai, inv](Tape& tp) {
    const double g = tp.node(oid).grad[0] * inv;
    auto& ga = tp.grad_buf(ai);
    for (double& v : ga) v += g;
  });
}

Tensor reduce_max(const Tensor& a) {
  require(a.valid() && a.size() > 0, "reduce_max: empty tensor");
  Tape& t = *a.tape();
  const auto av = a.values();
  std::size_t arg = 0;
  for (std::size_t i = 1; i < av.size(); ++i)
    if (av[i] > av[arg]) arg = i;
  const std::uint32_t oid = t.next_id(), ai = a.id();
  return t.emplace(Shape{}, {av[arg]}, [oid, ai, arg](Tape& tp) {
    tp.grad_buf(ai)[arg] += tp.node(oid).grad[0];
  });
}

Tensor max_rows(const Tensor& a) {
  check_rank(a, 2, "max_rows");
  Tape& t = *a.tape();
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const auto av = a.values();
  std::vector<double> out(m);
  std::vector<std::size_t> args(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (av[i * n + j] > av[i * n + arg]) arg = j;
    args[i] = arg;
    out[i] = av[i * n + arg];
  }
  const std::uint32_t oid = t.next_id(), ai = a.id();
  return t.emplace(Shape{m}, std::move(out), [oid, ai, n, args = std::move(args)](Tape& tp) {
    const auto& g = tp.node(oid).grad;
    auto& ga = tp.grad_buf(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i * n + args[i]] += g[i];
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  check_rank(a, 1, "dot");
  check_rank(b, 1, "dot");
  return reduce_sum(mul(a, b));
}

// ---------------------------------------------------------------------------
// sampling & similarity
// ---------------------------------------------------------------------------

Tensor bilinear_sample(const Tensor& map, const Tensor& points) {
  Tape& t = same_tape(map, points, "bilinear_sample");
  check_rank(map, 3, "bilinear_sample");
  check_rank(points, 2, "bilinear_sample");
  require(points.shape()[1] == 2, "bilinear_sample: points must be [p,2], got " +
                                      shape_str(points.shape()));
  const std::size_t h = map.shape()[0], w = map.shape()[1], c = map.shape()[2];
  require(h >= 2 && w >= 2, "bilinear_sample: map extents must be >= 2, got " +
                                shape_str(map.shape()));
  const std::size_t p = points.shape()[0];
  const auto mv = map.values();
  const auto pv = points.values();
  for (double v : pv)
    if (!std::isfinite(v)) throw std::domain_error("bilinear_sample: non-finite coordinate");

  struct Cell {
    std::size_t x0, y0;
    double fx, fy;
    bool x_inside, y_inside;  // raw coordinate within the unclamped range
  };
  std::vector<Cell> cells(p);
  std::vector<double> out(p * c);
  for (std::size_t i = 0; i < p; ++i) {
    const double gx = pv[i * 2 + 0] * static_cast<double>(w - 1);
    const double gy = pv[i * 2 + 1] * static_cast<double>(h - 1);
    const double cx = std::min(std::max(gx, 0.0), static_cast<double>(w - 1));
    const double cy = std::min(std::max(gy, 0.0), static_cast<double>(h - 1));
    const std::size_t x0 = std::min(static_cast<std::size_t>(cx), w - 2);
    const std::size_t y0 = std::min(static_cast<std::size_t>(cy), h - 2);
    const double fx = cx - static_cast<double>(x0);
    const double fy = cy - static_cast<double>(y0);
    cells[i] = {x0, y0, fx, fy, gx >= 0.0 && gx <= static_cast<double>(w - 1),
                gy >= 0.0 && gy <= static_cast<double>(h - 1)};
    const double* f00 = mv.data() + (y0 * w + x0) * c;
    const double* f01 = mv.data() + (y0 * w + x0 + 1) * c;
    const double* f10 = mv.data() + ((y0 + 1) * w + x0) * c;
    const double* f11 = mv.data() + ((y0 + 1) * w + x0 + 1) * c;
    for (std::size_t ch = 0; ch < c; ++ch)
      out[i * c + ch] = (1.0 - fy) * ((1.0 - fx) * f00[ch] + fx * f01[ch]) +
                        fy * ((1.0 - fx) * f10[ch] + fx * f11[ch]);
  }
  const std::uint32_t oid = t.next_id(), mi = map.id(), pi = points.id();
  return t.emplace(Shape{p, c}, std::move(out),
                   [oid, mi, pi, h, w, c, cells = std::move(cells)](Tape& tp) {
                     const auto& g = tp.node(oid).grad;
                     const auto& mv2 = tp.node(mi).val;
                     auto& gm = tp.grad_buf(mi);
                     auto& gp = tp.grad_buf(pi);
                     for (std::size_t i = 0; i < cells.size(); ++i) {
                       const Cell& cl = cells[i];
                       const std::size_t i00 = (cl.y0 * w + cl.x0) * c;
                       const std::size_t i01 = (cl.y0 * w + cl.x0 + 1) * c;
                       const std::size_t i10 = ((cl.y0 + 1) * w + cl.x0) * c;
                       const std::size_t i11 = ((cl.y0 + 1) * w + cl.x0 + 1) * c;
                       double dx_acc = 0.0, dy_acc = 0.0;
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         const double go = g[i * c + ch];
                         if (go == 0.0) continue;
                         gm[i00 + ch] += go * (1.0 - cl.fy) * (1.0 - cl.fx);
                         gm[i01 + ch] += go * (1.0 - cl.fy) * cl.fx;
                         gm[i10 + ch] += go * cl.fy * (1.0 - cl.fx);
                         gm[i11 + ch] += go * cl.fy * cl.fx;
                         dx_acc += go * ((1.0 - cl.fy) * (mv2[i01 + ch] - mv2[i00 + ch]) +
                                         cl.fy * (mv2[i11 + ch] - mv2[i10 + ch]));
                         dy_acc += go * ((1.0 - cl.fx) * (mv2[i10 + ch] - mv2[i00 + ch]) +
                                         cl.fx * (mv2[i11 + ch] - mv2[i01 + ch]));
                       }
                       if (cl.x_inside) gp[i * 2 + 0] += dx_acc * static_cast<double>(w - 1);
                       if (cl.y_inside) gp[i * 2 + 1] += dy_acc * static_cast<double>(h - 1);
                     }
                   });
}

Tensor cosine_rows(const Tensor& a, const Tensor& b) {
  Tape& t = same_tape(a, b, "cosine_rows");
  check_rank(a, 2, "cosine_rows");
  check_same_shape(a, b, "cosine_rows");
  const std::size_t m = a.shape()[0], d = a.shape()[1];
  const auto av = a.values();
  const auto bv = b.values();
  constexpr double kZeroNorm = 1e-12;
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      ab += av[i * d + j] * bv[i * d + j];
      aa += av[i * d + j] * av[i * d + j];
      bb += bv[i * d + j] * bv[i * d + j];
    }
    const double na = std::sqrt(aa), nb = std::sqrt(bb);
    out[i] = (na < kZeroNorm || nb < kZeroNorm) ? 0.0 : ab / (na * nb);
  }
  const std::uint32_t oid = t.next_id(), ai = a.id(), bi = b.id();
  return t.emplace(Shape{m}, std::move(out), [oid, ai, bi, m, d](Tape& tp) {
    const auto& g = tp.node(oid).grad;
    const auto& c = tp.node(oid).val;
    const auto& av2 = tp.node(ai).val;
    const auto& bv2 = tp.node(bi).val;
    auto& ga = tp.grad_buf(ai);
    auto& gb = tp.grad_buf(bi);
    for (std::size_t i = 0; i < m; ++i) {
      if (g[i] == 0.0) continue;
      double aa = 0.0, bb = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        aa += av2[i * d + j] * av2[i * d + j];
        bb += bv2[i * d + j] * bv2[i * d + j];
      }
      const double na = std::sqrt(aa), nb = std::sqrt(bb);
      if (na < kZeroNorm || nb < kZeroNorm) continue;
      for (std::size_t j = 0; j < d; ++j) {
        ga[i * d + j] += g[i] * (bv2[i * d + j] / (na * nb) - c[i] * av2[i * d + j] / aa);
        gb[i * d + j] += g[i] * (av2[i * d + j] / (na * nb) - c[i] * bv2[i * d + j] / bb);
      }
    }
  });
}

double finite_diff_check(const ScalarFn& f, const Shape& shape,
                         const std::vector<double>& x0, double step) {
  require(numel(shape) == x0.size(), "finite_diff_check: shape/value mismatch");
  std::vector<double> analytic(x0.size(), 0.0);
  {
    Tape tape;
    Tensor x = tape.input(shape, x0);
    Tensor y = f(tape, x);
    require(y.size() == 1, "finite_diff_check: f must return a scalar");
    tape.backward(y);
    if (!x.grad().empty())
      analytic.assign(x.grad().begin(), x.grad().end());
  }
  auto eval = [&](const std::vector<double>& xs) {
    Tape tape;
    Tensor x = tape.input(shape, xs);
    return f(tape, x).item();
  };
  double worst = 0.0;
  std::vector<double> probe = x0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double h = step * std::max(1.0, std::fabs(x0[i]));
    probe[i] = x0[i] + h;
    const double up = eval(probe);
    probe[i] = x0[i] - h;
    const double dn = eval(probe);
    probe[i] = x0[i];
    const double numeric = (up - dn) / (2.0 * h);
    const double rel = std::fabs(analytic[i] - numeric) /
                       std::max(1e-8, std::fabs(analytic[i]) + std::fabs(numeric));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace rvos
