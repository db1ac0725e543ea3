#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "rvos/attention.hpp"
#include "rvos/rng.hpp"
#include "rvos/tensor.hpp"

using namespace rvos;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

AttentionParams random_attention(Tape& t, Rng& rng, std::size_t d) {
  return {t.input({d, d}, random_vec(rng, d * d)), t.input({d, d}, random_vec(rng, d * d)),
          t.input({d, d}, random_vec(rng, d * d)), t.input({d, d}, random_vec(rng, d * d))};
}

}  // namespace

TEST_CASE("mhsa singleton token has weight exactly one") {
  Rng rng(5);
  Tape t;
  auto p = random_attention(t, rng, 4);
  auto out = mhsa(t.input({1, 4}, random_vec(rng, 4)), p, 2);
  CHECK(out.output.shape() == Shape{1, 4});
  CHECK(out.weights.values()[0] == doctest::Approx(1.0));
  for (const Tensor& hw : out.head_weights) CHECK(hw.values()[0] == doctest::Approx(1.0));
}

TEST_CASE("mhsa is permutation equivariant and symmetric under duplicates") {
  Rng rng(6);
  Tape t;
  auto p = random_attention(t, rng, 4);
  auto row = random_vec(rng, 4);
  std::vector<double> two_rows(row);
  two_rows.insert(two_rows.end(), row.begin(), row.end());
  auto out = mhsa(t.input({2, 4}, two_rows), p, 2);
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(out.output.values()[j] == doctest::Approx(out.output.values()[4 + j]).epsilon(1e-12));

  // permuting input rows permutes output rows identically
  auto rows = random_vec(rng, 3 * 4);
  std::vector<double> perm(rows.begin() + 4, rows.end());
  perm.insert(perm.end(), rows.begin(), rows.begin() + 4);  // rotate rows by one
  auto a = mhsa(t.input({3, 4}, rows), p, 2);
  auto b = mhsa(t.input({3, 4}, perm), p, 2);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(a.output.values()[i * 4 + j] ==
            doctest::Approx(b.output.values()[((i + 2) % 3) * 4 + j]).epsilon(1e-9));
}

TEST_CASE("mhsa matches a one-head-at-a-time loop oracle") {
  Rng rng(8);
  const std::size_t n = 3, d = 4, heads = 2, dh = d / heads;
  Tape t;
  auto p = random_attention(t, rng, d);
  auto xv = random_vec(rng, n * d);
  auto out = mhsa(t.input({n, d}, xv), p, heads);

  // oracle: explicit loops per head
  auto matv = [&](const Tensor& w, const std::vector<double>& x, std::size_t rows) {
    std::vector<double> y(rows * d, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k2 = 0; k2 < d; ++k2)
          y[i * d + j] += x[i * d + k2] * w.values()[k2 * d + j];
    return y;
  };
  auto q = matv(p.wq, xv, n), k = matv(p.wk, xv, n), v = matv(p.wv, xv, n);
  std::vector<double> merged(n * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> scores(n);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c)
          s += q[i * d + h * dh + c] * k[j * d + h * dh + c];
        scores[j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (double& s : scores) {
        s = std::exp(s - mx);
        z += s;
      }
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < dh; ++c)
          merged[i * d + h * dh + c] += scores[j] / z * v[j * d + h * dh + c];
    }
  }
  std::vector<double> expect(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k2 = 0; k2 < d; ++k2)
        expect[i * d + j] += merged[i * d + k2] * p.wo.values()[k2 * d + j];
  for (std::size_t i = 0; i < n * d; ++i)
    CHECK(out.output.values()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("mhsa rejects indivisible head count") {
  Tape t;
  Rng rng(9);
  auto p = random_attention(t, rng, 4);
  CHECK_THROWS_AS(mhsa(t.zeros({2, 4}), p, 3), std::invalid_argument);
}

TEST_CASE("cross attention with a single key gives weight one") {
  Rng rng(10);
  Tape t;
  auto p = random_attention(t, rng, 8);
  auto out = cross_attention(t.input({3, 8}, random_vec(rng, 24)),
                             t.input({1, 8}, random_vec(rng, 8)), p, 4);
  for (std::size_t i = 0; i < 3; ++i) CHECK(out.weights.values()[i] == doctest::Approx(1.0));
}

TEST_CASE("cross attention output is invariant to duplicate kv rows") {
  Rng rng(12);
  Tape t;
  auto p = random_attention(t, rng, 8);
  auto kvrow = random_vec(rng, 8);
  std::vector<double> kv2(kvrow);
  kv2.insert(kv2.end(), kvrow.begin(), kvrow.end());
  auto qv = random_vec(rng, 2 * 8);
  auto a = cross_attention(t.input({2, 8}, qv), t.input({1, 8}, kvrow), p, 4);
  auto b = cross_attention(t.input({2, 8}, qv), t.input({2, 8}, kv2), p, 4);
  for (std::size_t i = 0; i < 16; ++i)
    CHECK(a.output.values()[i] == doctest::Approx(b.output.values()[i]).epsilon(1e-12));
}

TEST_CASE("cross attention matches loop oracle on 2x8 vs 3x8") {
  Rng rng(14);
  const std::size_t n = 2, m = 3, d = 8, heads = 4, dh = d / heads;
  Tape t;
  auto p = random_attention(t, rng, d);
  auto qv = random_vec(rng, n * d);
  auto kvv = random_vec(rng, m * d);
  auto out = cross_attention(t.input({n, d}, qv), t.input({m, d}, kvv), p, heads);

  auto matv = [&](const Tensor& w, const std::vector<double>& x, std::size_t rows) {
    std::vector<double> y(rows * d, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k2 = 0; k2 < d; ++k2)
          y[i * d + j] += x[i * d + k2] * w.values()[k2 * d + j];
    return y;
  };
  auto q = matv(p.wq, qv, n), k = matv(p.wk, kvv, m), v = matv(p.wv, kvv, m);
  std::vector<double> merged(n * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> scores(m);
      double mx = -1e300;
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c)
          s += q[i * d + h * dh + c] * k[j * d + h * dh + c];
        scores[j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (double& s : scores) {
        s = std::exp(s - mx);
        z += s;
      }
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t c = 0; c < dh; ++c)
          merged[i * d + h * dh + c] += scores[j] / z * v[j * d + h * dh + c];
    }
  std::vector<double> expect(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k2 = 0; k2 < d; ++k2)
        expect[i * d + j] += merged[i * d + k2] * p.wo.values()[k2 * d + j];
  for (std::size_t i = 0; i < n * d; ++i)
    CHECK(out.output.values()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("attention weight matrices are row-stochastic") {
  Rng rng(15);
  Tape t;
  auto p = random_attention(t, rng, 8);
  auto out = cross_attention(t.input({4, 8}, random_vec(rng, 32)),
                             t.input({5, 8}, random_vec(rng, 40)), p, 4, true);
  auto rowsum_one = [](const Tensor& w) {
    const std::size_t rows = w.shape()[0], cols = w.shape()[1];
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += w.values()[i * cols + j];
      CHECK(std::fabs(s - 1.0) <= 1e-9);
    }
  };
  rowsum_one(out.weights);
  rowsum_one(out.token_to_query);
  for (const Tensor& hw : out.head_weights) rowsum_one(hw);
}

TEST_CASE("deformable attention with zero offsets samples the reference point") {
  Rng rng(16);
  const std::size_t d = 6, h = 5, w = 4, np = 3;
  Tape t;
  auto mapv = random_vec(rng, h * w * d);
  Tensor memory = t.input({h, w, d}, mapv);
  DeformableParams p{np, t.zeros({d, 2 * np}), t.zeros({d, np})};
  Tensor query = t.input({d}, random_vec(rng, d));
  Tensor ref = t.input({2}, {1.0 / 3.0, 0.5});  // x maps to col 1, y maps to row 2
  Tensor out = deformable_cross_attention(query, memory, ref, p);
  for (std::size_t c = 0; c < d; ++c)
    CHECK(out.values()[c] == doctest::Approx(mapv[(2 * w + 1) * d + c]).epsilon(1e-12));
}

TEST_CASE("deformable attention on a constant field returns the constant") {
  Rng rng(18);
  const std::size_t d = 4, np = 5;
  Tape t;
  std::vector<double> mapv(3 * 3 * d);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t c = 0; c < d; ++c) mapv[i * d + c] = 0.5 + static_cast<double>(c);
  Tensor memory = t.input({3, 3, d}, mapv);
  DeformableParams p{np, t.input({d, 2 * np}, random_vec(rng, d * 2 * np)),
                     t.input({d, np}, random_vec(rng, d * np))};
  Tensor out = deformable_cross_attention(t.input({d}, random_vec(rng, d)), memory,
                                          t.input({2}, {0.4, 0.6}), p);
  for (std::size_t c = 0; c < d; ++c)
    CHECK(out.values()[c] == doctest::Approx(0.5 + static_cast<double>(c)).epsilon(1e-12));
}

TEST_CASE("deformable output is invariant to constant shifts of weight logits") {
  Rng rng(19);
  const std::size_t d = 4, np = 6;
  Tape t;
  Tensor memory = t.input({4, 4, d}, random_vec(rng, 16 * d));
  auto wp = random_vec(rng, d * np);
  Tensor query = t.input({d}, std::vector<double>(d, 1.0));  // so a logit shift is constant
  auto shifted = wp;
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < np; ++c) shifted[r * np + c] += 0.75;  // adds d*0.75 per logit
  DeformableParams p1{np, t.input({d, 2 * np}, random_vec(rng, d * 2 * np)), t.input({d, np}, wp)};
  DeformableParams p2{np, p1.offset_proj, t.input({d, np}, shifted)};
  Tensor o1 = deformable_cross_attention(query, memory, t.input({2}, {0.3, 0.7}), p1);
  Tensor o2 = deformable_cross_attention(query, memory, t.input({2}, {0.3, 0.7}), p2);
  for (std::size_t c = 0; c < d; ++c)
    CHECK(o1.values()[c] == doctest::Approx(o2.values()[c]).epsilon(1e-12));
}

TEST_CASE("deformable gradient w.r.t. reference point matches finite difference") {
  Rng rng(20);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 4, h = 5, w = 5, np = 4;
    auto mapv = random_vec(rng, h * w * d);
    auto qv = random_vec(rng, d);
    auto off = random_vec(rng, d * 2 * np, -0.3, 0.3);
    auto wts = random_vec(rng, d * np);
    auto probe = random_vec(rng, d);
    std::vector<double> ref = {rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75)};
    double err = finite_diff_check(
        [&](Tape& t, const Tensor& r) {
          DeformableParams p{np, t.input({d, 2 * np}, off), t.input({d, np}, wts)};
          Tensor out = deformable_cross_attention(t.input({d}, qv),
                                                  t.input({h, w, d}, mapv), r, p);
          return reduce_sum(mul(out, t.input({d}, probe)));
        },
        {2}, ref);
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("mhsa gradients pass the finite-difference check") {
  Rng rng(21);
  const std::size_t n = 3, d = 4;
  auto wq = random_vec(rng, d * d), wk = random_vec(rng, d * d);
  auto wv = random_vec(rng, d * d), wo = random_vec(rng, d * d);
  auto probe = random_vec(rng, n * d);
  double err = finite_diff_check(
      [&](Tape& t, const Tensor& x) {
        AttentionParams p{t.input({d, d}, wq), t.input({d, d}, wk), t.input({d, d}, wv),
                          t.input({d, d}, wo)};
        return reduce_sum(mul(mhsa(x, p, 2).output, t.input({n, d}, probe)));
      },
      {n, d}, random_vec(rng, n * d));
  CHECK(err <= 1e-5);
}
