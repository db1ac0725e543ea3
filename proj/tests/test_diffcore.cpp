#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "rvos/rng.hpp"
#include "rvos/serialize.hpp"
#include "rvos/tensor.hpp"

using namespace rvos;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("matmul identity and projector") {
  Tape t;
  Tensor eye = t.input({2, 2}, {1, 0, 0, 1});
  Tensor a = t.input({2, 2}, {1, 2, 3, 4});
  Tensor r = matmul(eye, a);
  CHECK(r.values()[0] == 1.0);
  CHECK(r.values()[1] == 2.0);
  CHECK(r.values()[2] == 3.0);
  CHECK(r.values()[3] == 4.0);

  Tensor proj = t.input({2, 2}, {1, 0, 0, 0});
  Tensor b = t.input({2, 2}, {5, 6, 7, 8});
  Tensor r2 = matmul(proj, b);
  CHECK(r2.values()[0] == 5.0);
  CHECK(r2.values()[1] == 6.0);
  CHECK(r2.values()[2] == 0.0);
  CHECK(r2.values()[3] == 0.0);
}

TEST_CASE("matmul matches triple-loop oracle exactly") {
  Rng rng(7);
  const std::size_t m = 3, k = 4, n = 2;
  auto av = random_vec(rng, m * k);
  auto bv = random_vec(rng, k * n);
  Tape t;
  Tensor r = matmul(t.input({m, k}, av), t.input({k, n}, bv));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += av[i * k + p] * bv[p * n + j];
      CHECK(r.values()[i * n + j] == doctest::Approx(acc).epsilon(1e-15));
    }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape t;
  Tensor a = t.zeros({3, 4});
  Tensor b = t.zeros({5, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       doctest::Contains("[3x4]"), std::invalid_argument);
}

TEST_CASE("softmax_rows trivial values") {
  Tape t;
  Tensor r = softmax_rows(t.input({1, 3}, {0, 0, 0}));
  for (double v : r.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-14));

  Tensor r2 = softmax_rows(t.input({1, 2}, {std::log(2.0), std::log(1.0)}));
  CHECK(r2.values()[0] == doctest::Approx(2.0 / 3).epsilon(1e-14));
  CHECK(r2.values()[1] == doctest::Approx(1.0 / 3).epsilon(1e-14));
}

TEST_CASE("softmax_rows rejects NaN") {
  Tape t;
  Tensor x = t.input({1, 2}, {0.0, std::nan("")});
  CHECK_THROWS_AS(softmax_rows(x), std::domain_error);
}

TEST_CASE("softmax_rows rows sum to one within 1e-12 over [-50,50]") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(16);
    Tape t;
    Tensor y = softmax_rows(t.input({3, n}, random_vec(rng, 3 * n, -50.0, 50.0)));
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += y.values()[r * n + j];
      CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("softmax gradient matches finite difference at 1e-6") {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    auto x0 = random_vec(rng, 6);
    auto probe = random_vec(rng, 6);
    double err = finite_diff_check(
        [&](Tape& t, const Tensor& x) {
          return reduce_sum(mul(softmax_rows(x), t.input({2, 3}, probe)));
        },
        {2, 3}, x0);
    CHECK(err <= 1e-6);
  }
}

TEST_CASE("layer_norm constant vector is zero under epsilon guard") {
  Tape t;
  Tensor g = t.full({4}, 1.0);
  Tensor b = t.zeros({4});
  Tensor y = layer_norm(t.full({4}, 3.5), g, b);
  for (double v : y.values()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("layer_norm of [1,-1] is unit variance up to epsilon correction") {
  Tape t;
  Tensor y = layer_norm(t.input({2}, {1.0, -1.0}), t.full({2}, 1.0), t.zeros({2}));
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(y.values()[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(y.values()[1] == doctest::Approx(-expect).epsilon(1e-12));
}

TEST_CASE("layer_norm gradient matches finite difference") {
  Rng rng(17);
  auto x0 = random_vec(rng, 8);
  auto probe = random_vec(rng, 8);
  auto gain = random_vec(rng, 4, 0.5, 1.5);
  double err = finite_diff_check(
      [&](Tape& t, const Tensor& x) {
        Tensor g = t.input({4}, gain);
        Tensor y = layer_norm(x, g, t.zeros({4}));
        return reduce_sum(mul(y, t.input({2, 4}, probe)));
      },
      {2, 4}, x0);
  CHECK(err <= 1e-6);
}

TEST_CASE("bilinear_sample hits pixel centers and cell centers") {
  Tape t;
  // 2x2 map, 3 channels: feature vector = (10*y + x) replicated
  std::vector<double> map(2 * 2 * 3);
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x)
      for (std::size_t c = 0; c < 3; ++c) map[(y * 2 + x) * 3 + c] = 10.0 * y + x;
  Tensor m = t.input({2, 2, 3}, map);

  Tensor on_center = bilinear_sample(m, t.input({1, 2}, {1.0, 0.0}));  // (x=1, y=0)
  for (std::size_t c = 0; c < 3; ++c) CHECK(on_center.values()[c] == doctest::Approx(1.0));

  Tensor mid = bilinear_sample(m, t.input({1, 2}, {0.5, 0.5}));
  const double mean4 = (0.0 + 1.0 + 10.0 + 11.0) / 4.0;
  for (std::size_t c = 0; c < 3; ++c)
    CHECK(mid.values()[c] == doctest::Approx(mean4).epsilon(1e-14));
}

TEST_CASE("bilinear_sample clamps out-of-range points to the border") {
  Tape t;
  Tensor m = t.input({2, 2, 1}, {0.0, 1.0, 10.0, 11.0});
  Tensor out = bilinear_sample(m, t.input({2, 2}, {-0.7, -0.2, 1.4, 1.9}));
  CHECK(out.values()[0] == doctest::Approx(0.0));
  CHECK(out.values()[1] == doctest::Approx(11.0));
}

TEST_CASE("bilinear coordinate gradient matches finite difference on both axes") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t h = 3 + rng.uniform_int(3), w = 3 + rng.uniform_int(3), c = 2;
    auto map = random_vec(rng, h * w * c);
    std::vector<double> pts = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9),
                               rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    auto probe = random_vec(rng, 2 * c);
    double err = finite_diff_check(
        [&](Tape& t, const Tensor& p) {
          Tensor m = t.input({h, w, c}, map);
          return reduce_sum(mul(bilinear_sample(m, p), t.input({2, c}, probe)));
        },
        {2, 2}, pts);
    CHECK(err <= 1e-5);
    // map gradient too
    double err_map = finite_diff_check(
        [&](Tape& t, const Tensor& m) {
          Tensor p = t.input({2, 2}, pts);
          return reduce_sum(mul(bilinear_sample(m, p), t.input({2, c}, probe)));
        },
        {h, w, c}, map);
    CHECK(err_map <= 1e-5);
  }
}

TEST_CASE("backward of sum gives all-ones gradient") {
  Tape t;
  Tensor x = t.input({3}, {4.0, 5.0, 6.0});
  t.backward(reduce_sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of dot(x,x) gives 2x") {
  Tape t;
  Tensor x = t.input({3}, {1.0, -2.0, 3.0});
  t.backward(dot(x, x));
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(-4.0));
  CHECK(x.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape t;
  Tensor x = t.input({2}, {1.0, 2.0});
  CHECK_THROWS_AS(t.backward(x), std::invalid_argument);
}

TEST_CASE("fan-out doubles the gradient") {
  Tape t1, t2;
  Tensor x1 = t1.input({3}, {1.0, 2.0, 3.0});
  t1.backward(reduce_sum(add(x1, x1)));
  Tensor x2 = t2.input({3}, {1.0, 2.0, 3.0});
  t2.backward(reduce_sum(x2));
  for (std::size_t i = 0; i < 3; ++i) CHECK(x1.grad()[i] == 2.0 * x2.grad()[i]);
}

TEST_CASE("finite_diff_check on sum of squares is near machine precision") {
  double err = finite_diff_check(
      [](Tape&, const Tensor& x) { return reduce_sum(mul(x, x)); }, {3}, {1.0, 2.0, 3.0});
  CHECK(err <= 1e-8);
  // and the analytic gradient is [2,4,6]
  Tape t;
  Tensor x = t.input({3}, {1.0, 2.0, 3.0});
  t.backward(reduce_sum(mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
  CHECK(x.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("softmax-crossentropy composite passes at 1e-6") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    auto x0 = random_vec(rng, 5);
    const std::size_t target = rng.uniform_int(5);
    double err = finite_diff_check(
        [&](Tape& t, const Tensor& x) {
          Tensor p = softmax_rows(reshape(x, {1, 5}));
          Tensor pt = slice_cols(p, target, target + 1);
          return neg(log_elem(reshape(pt, Shape{})));
        },
        {5}, x0);
    CHECK(err <= 1e-6);
  }
}

TEST_CASE("tape replay determinism: same seed gives bit-identical values and grads") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tape t;
    Tensor a = t.input({3, 3}, random_vec(rng, 9));
    Tensor b = t.input({3, 3}, random_vec(rng, 9));
    Tensor y = reduce_sum(mul(softmax_rows(matmul(a, b)), gelu(b)));
    t.backward(y);
    std::vector<double> out(y.values().begin(), y.values().end());
    out.insert(out.end(), a.grad().begin(), a.grad().end());
    out.insert(out.end(), b.grad().begin(), b.grad().end());
    return out;
  };
  auto r1 = run(99), r2 = run(99);
  REQUIRE(r1.size() == r2.size());
  for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);
}

TEST_CASE("elementwise and movement ops pass finite-difference checks") {
  Rng rng(41);
  auto check = [&](const char* name, const ScalarFn& f, const Shape& shape,
                   std::vector<double> x0, double tol = 1e-5) {
    double err = finite_diff_check(f, shape, x0);
    INFO(name);
    CHECK(err <= tol);
  };

  for (int trial = 0; trial < 8; ++trial) {
    auto v6 = random_vec(rng, 6);
    auto w6 = random_vec(rng, 6);
    auto pos6 = random_vec(rng, 6, 0.2, 2.0);
    Shape s23{2, 3};

    check("add", [&](Tape& t, const Tensor& x) {
      return reduce_sum(mul(add(x, t.input(s23, w6)), t.input(s23, w6)));
    }, s23, v6);
    check("sub", [&](Tape& t, const Tensor& x) {
      return reduce_sum(mul(sub(x, t.input(s23, w6)), t.input(s23, w6)));
    }, s23, v6);
    check("mul+div", [&](Tape& t, const Tensor& x) {
      return reduce_sum(div(mul(x, t.input(s23, w6)), t.input(s23, pos6)));
    }, s23, v6);
    check("scale+add_scalar", [&](Tape&, const Tensor& x) {
      return reduce_sum(add_scalar(scale(x, -1.7), 0.3));
    }, s23, v6);
    check("sigmoid", [&](Tape& t, const Tensor& x) {
      return reduce_sum(mul(sigmoid(x), t.input(s23, w6)));
    }, s23, v6);
    check("gelu", [&](Tape& t, const Tensor& x) {
      return reduce_sum(mul(gelu(x), t.input(s23, w6)));
    }, s23, v6);
    check("exp+log+sqrt+pow", [&](Tape&, const Tensor& x) {
      return reduce_sum(pow_const(sqrt_elem(log_elem(exp_elem(x))), 3.0));
    }, s23, pos6);
    check("transpose+reshape", [&](Tape& t, const Tensor& x) {
      return reduce_sum(mul(reshape(transpose(x), {3, 2}), t.input({3, 2}, w6)));
    }, s23, v6);
    check("slice+concat", [&](Tape& t, const Tensor& x) {
      Tensor top = slice_rows(x, 0, 1);
      Tensor bot = slice_rows(x, 1, 2);
      std::vector<Tensor> parts = {bot, top};
      Tensor r = concat_rows(parts);
      Tensor l = slice_cols(r, 0, 2);
      Tensor rr = slice_cols(r, 2, 3);
      std::vector<Tensor> cols = {rr, l};
      return reduce_sum(mul(concat_cols(cols), t.input(s23, w6)));
    }, s23, v6);
    auto probe9 = random_vec(rng, 9);
    check("gather_rows", [&](Tape& t, const Tensor& x) {
      return reduce_sum(mul(gather_rows(x, {1, 1, 0}), t.input({3, 3}, probe9)));
    }, s23, v6);
    check("add_rowwise+mul_rowwise", [&](Tape& t, const Tensor& x) {
      Tensor b = t.input({3}, {w6[0], w6[1], w6[2]});
      return reduce_sum(mul_rowwise(add_rowwise(x, b), b));
    }, s23, v6);
    check("reduce_mean", [&](Tape&, const Tensor& x) { return reduce_mean(x); }, s23, v6);
    check("reduce_max", [&](Tape&, const Tensor& x) { return reduce_max(x); }, s23, v6);
    check("max_rows", [&](Tape& t, const Tensor& x) {
      return reduce_sum(mul(max_rows(x), t.input({2}, {w6[0], w6[1]})));
    }, s23, v6);
    check("abs+minmax+clamp", [&](Tape& t, const Tensor& x) {
      Tensor other = t.input(s23, w6);
      return reduce_sum(clamp(max_elem(abs_elem(x), min_elem(x, other)), -1.5, 1.5));
    }, s23, pos6);
    check("cosine_rows", [&](Tape& t, const Tensor& x) {
      Tensor b = t.input(s23, pos6);
      return reduce_sum(mul(cosine_rows(x, b), t.input({2}, {w6[0], w6[1]})));
    }, s23, v6);
  }

  // 3-D movement ops
  for (int trial = 0; trial < 4; ++trial) {
    auto v48 = random_vec(rng, 4 * 4 * 3);
    auto probe48 = random_vec(rng, 48);
    auto probe192 = random_vec(rng, 192);
    auto probe432 = random_vec(rng, 16 * 27);
    check("patch_merge", [&](Tape& t, const Tensor& x) {
      return reduce_sum(mul(patch_merge(x, 2), t.input({2, 2, 12}, probe48)));
    }, {4, 4, 3}, v48);
    check("upsample_nearest_2x", [&](Tape& t, const Tensor& x) {
      return reduce_sum(mul(upsample_nearest_2x(x), t.input({8, 8, 3}, probe192)));
    }, {4, 4, 3}, v48);
    check("im2col_3x3", [&](Tape& t, const Tensor& x) {
      return reduce_sum(mul(im2col_3x3(x), t.input({16, 27}, probe432)));
    }, {4, 4, 3}, v48);
  }
}

TEST_CASE("patch_merge and upsample layouts are exact") {
  Tape t;
  std::vector<double> v(16);
  for (std::size_t i = 0; i < 16; ++i) v[i] = static_cast<double>(i);
  Tensor x = t.input({4, 4, 1}, v);
  Tensor pm = patch_merge(x, 2);
  CHECK(pm.shape() == Shape{2, 2, 4});
  // top-left patch holds pixels (0,0),(0,1),(1,0),(1,1) -> 0,1,4,5
  CHECK(pm.values()[0] == 0.0);
  CHECK(pm.values()[1] == 1.0);
  CHECK(pm.values()[2] == 4.0);
  CHECK(pm.values()[3] == 5.0);

  Tensor up = upsample_nearest_2x(t.input({1, 2, 1}, {3.0, 7.0}));
  CHECK(up.shape() == Shape{2, 4, 1});
  CHECK(up.values()[0] == 3.0);
  CHECK(up.values()[1] == 3.0);
  CHECK(up.values()[2] == 7.0);
  CHECK(up.values()[3] == 7.0);
}

TEST_CASE("tensor records round-trip and use the documented layout") {
  std::ostringstream os(std::ios::binary);
  write_tensor_record(os, {2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const std::string bytes = os.str();
  REQUIRE(bytes.size() == 4 + 4 + 8 + 48);
  CHECK(bytes.substr(0, 4) == "RDT1");
  CHECK(static_cast<unsigned char>(bytes[4]) == 2);  // rank, little-endian u32
  CHECK(static_cast<unsigned char>(bytes[8]) == 2);  // extent 0
  CHECK(static_cast<unsigned char>(bytes[12]) == 3); // extent 1

  std::istringstream is(bytes, std::ios::binary);
  TensorRecord rec = read_tensor_record(is);
  CHECK(rec.shape == Shape{2, 3});
  CHECK(rec.values == std::vector<double>{1, 2, 3, 4, 5, 6});

  // scalar (rank 0) round-trips too
  std::ostringstream os2(std::ios::binary);
  write_tensor_record(os2, {}, std::vector<double>{42.5});
  std::istringstream is2(os2.str(), std::ios::binary);
  TensorRecord rec2 = read_tensor_record(is2);
  CHECK(rec2.shape.empty());
  CHECK(rec2.values[0] == 42.5);
}
