#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "omni/optim.hpp"
#include "omni/tensor.hpp"

using namespace omni;

namespace {

// independent central-difference oracle for a scalar f over one tensor
double fd_grad(const std::function<double(std::vector<double>&)>& f, std::vector<double>& x,
               size_t i, double h = 1e-5) {
  double saved = x[i];
  x[i] = saved + h;
  double fp = f(x);
  x[i] = saved - h;
  double fm = f(x);
  x[i] = saved;
  return (fp - fm) / (2 * h);
}

double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-12});
}

// Checks analytic grads of builder() (scalar graph over leaf x) against FD.
void check_op_grad(Tensor x, const std::function<Tensor(const Tensor&)>& builder,
                   double tol = 1e-6, double h = 1e-5) {
  x.zero_grad();
  Tensor loss = builder(x);
  loss.backward();
  std::vector<double> analytic = x.grad();
  auto eval = [&](std::vector<double>& vals) {
    x.values() = vals;
    return builder(x).item();
  };
  std::vector<double> v = x.values();
  for (size_t i = 0; i < v.size(); ++i) {
    double num = fd_grad(eval, v, i, h);
    x.values() = v;
    CAPTURE(i);
    CHECK(rel_err(analytic[i], num) < tol);
  }
}

Tensor randt(Rng& rng, Shape s, double lo = -1, double hi = 1, bool rg = true) {
  std::vector<double> v(numel(s));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(s, v, rg);
}

}  // namespace

TEST_CASE("elementwise forward basics") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4}, false);
  Tensor b = Tensor::from({2, 2}, {10, 20, 30, 40}, false);
  CHECK(add(a, b).values() == std::vector<double>{11, 22, 33, 44});
  CHECK(mul(a, 2.0).values() == std::vector<double>{2, 4, 6, 8});
  Tensor row = Tensor::from({2}, {100, 200}, false);
  CHECK(add(a, row).values() == std::vector<double>{101, 202, 103, 204});
  Tensor col = Tensor::from({2, 1}, {1, -1}, false);
  CHECK(mul(a, col).values() == std::vector<double>{1, 2, -3, -4});
}

TEST_CASE("matmul forward") {
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, false);
  Tensor b = Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12}, false);
  Tensor c = matmul(a, b);
  CHECK(c.values() == std::vector<double>{58, 64, 139, 154});
  Tensor bt = Tensor::from({2, 3}, {7, 9, 11, 8, 10, 12}, false);
  CHECK(matmul_nt(a, bt).values() == std::vector<double>{58, 64, 139, 154});
}

TEST_CASE("gradient oracle across the op catalog") {
  Rng rng(42);

  SUBCASE("activations") {
    Tensor x = randt(rng, {3, 4}, -2, 2);
    check_op_grad(x, [](const Tensor& t) { return sum(sigmoid(t)); });
    check_op_grad(x, [](const Tensor& t) { return sum(softplus(t)); });
    check_op_grad(x, [](const Tensor& t) { return sum(tanh(t)); });
    check_op_grad(x, [](const Tensor& t) { return sum(exp(t)); });
    check_op_grad(x, [](const Tensor& t) { return sum(silu(t)); });
    check_op_grad(x, [](const Tensor& t) { return mean(mul(t, t)); });
  }

  SUBCASE("matmul both sides") {
    Tensor a = randt(rng, {3, 5});
    Tensor b = randt(rng, {5, 4}, -1, 1, false);
    check_op_grad(a, [&](const Tensor& t) { return sum(matmul(t, b)); });
    Tensor a2 = randt(rng, {3, 5}, -1, 1, false);
    Tensor b2 = randt(rng, {5, 4});
    check_op_grad(b2, [&](const Tensor& t) { return sum(mul(matmul(a2, t), matmul(a2, t))); });
    Tensor c = randt(rng, {4, 5});
    check_op_grad(c, [&](const Tensor& t) { return sum(mul(matmul_nt(a2, t), matmul_nt(a2, t))); });
  }

  SUBCASE("conv2d stride and padding") {
    for (int stride : {1, 2}) {
      for (Pad pad : {Pad::same, Pad::valid}) {
        Tensor x = randt(rng, {5, 6, 2});
        Tensor w = randt(rng, {3, 3, 2, 3});
        Tensor b = randt(rng, {3});
        check_op_grad(x, [&](const Tensor& t) {
          return sum(mul(conv2d(t, w, b, stride, pad), conv2d(t, w, b, stride, pad)));
        });
        check_op_grad(w, [&](const Tensor& t) { return sum(conv2d(x, t, b, stride, pad)); });
        check_op_grad(b, [&](const Tensor& t) { return sum(conv2d(x, w, t, stride, pad)); });
      }
    }
  }

  SUBCASE("pool and upsample") {
    Tensor x = randt(rng, {4, 6, 3});
    check_op_grad(x, [](const Tensor& t) { return sum(mul(avg_pool2d(t, 2), avg_pool2d(t, 2))); });
    check_op_grad(x, [](const Tensor& t) { return sum(mul(upsample_nearest(t, 2), upsample_nearest(t, 2))); });
    check_op_grad(x, [](const Tensor& t) {
      return sum(mul(upsample_bilinear(t, 7, 9), upsample_bilinear(t, 7, 9)));
    });
  }

  SUBCASE("layer_norm and softmax") {
    Tensor x = randt(rng, {4, 6});
    Tensor g = randt(rng, {6}, 0.5, 1.5);
    Tensor b = randt(rng, {6});
    check_op_grad(x, [&](const Tensor& t) { return sum(mul(layer_norm(t, g, b), layer_norm(t, g, b))); }, 1e-5);
    check_op_grad(g, [&](const Tensor& t) { return sum(mul(layer_norm(x, t, b), layer_norm(x, t, b))); }, 1e-5);
    check_op_grad(x, [](const Tensor& t) { return sum(mul(softmax_rows(t), softmax_rows(t))); });
  }

  SUBCASE("shape ops") {
    Tensor x = randt(rng, {4, 6});
    check_op_grad(x, [](const Tensor& t) {
      return sum(mul(slice_cols(t, 1, 4), slice_cols(t, 1, 4)));
    });
    check_op_grad(x, [](const Tensor& t) {
      return sum(mul(slice_rows(t, 1, 3), slice_rows(t, 1, 3)));
    });
    std::vector<int64_t> idx{3, 0, 0, 2};
    check_op_grad(x, [&](const Tensor& t) {
      return sum(mul(gather_rows(t, idx), gather_rows(t, idx)));
    });
    check_op_grad(x, [](const Tensor& t) {
      auto r = reshape(t, {6, 4});
      return sum(mul(r, r));
    });
    check_op_grad(x, [](const Tensor& t) {
      auto c = concat_rows({t, t});
      return sum(mul(c, c));
    });
    check_op_grad(x, [](const Tensor& t) {
      auto c = concat_cols({t, mul(t, 2.0)});
      return sum(mul(c, c));
    });
  }

  SUBCASE("reductions and losses") {
    Tensor a = randt(rng, {5, 3});
    Tensor b = randt(rng, {5, 3}, -1, 1, false);
    check_op_grad(a, [&](const Tensor& t) { return mse(t, b); });
    check_op_grad(a, [&](const Tensor& t) { return l1(t, b); }, 1e-6, 1e-6);
    check_op_grad(a, [&](const Tensor& t) { return sum(abs(t)); }, 1e-6, 1e-6);
  }

  SUBCASE("scatter_mean") {
    Tensor x = randt(rng, {6, 3});
    std::vector<int64_t> bins{0, 2, 2, -1, 0, 1};
    check_op_grad(x, [&](const Tensor& t) {
      auto s = scatter_mean(t, bins, 4);
      return sum(mul(s, s));
    });
  }

  SUBCASE("weighted_pool and normalize_rows") {
    Tensor v = randt(rng, {6, 4});
    Tensor w = randt(rng, {2, 3});
    check_op_grad(v, [&](const Tensor& t) { return sum(mul(weighted_pool(t, w), weighted_pool(t, w))); });
    check_op_grad(w, [&](const Tensor& t) { return sum(mul(weighted_pool(v, t), weighted_pool(v, t))); });
    Tensor q = randt(rng, {5, 4}, 0.2, 1.5);
    Tensor probe = randt(rng, {5, 4}, -1, 1, false);
    check_op_grad(q, [&](const Tensor& t) {
      return sum(mul(normalize_rows(t), probe));
    }, 1e-5);
  }
}

TEST_CASE("bilinear_sample_2d semantics") {
  // 2x3 grid, 2 channels
  Tensor grid = Tensor::from({2, 3, 2}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, true);

  SUBCASE("exact node") {
    Tensor c = Tensor::from({1, 2}, {1.0, 2.0}, false);
    Tensor out = bilinear_sample_2d(grid, c);
    CHECK(out.values()[0] == doctest::Approx(10).epsilon(1e-12));
    CHECK(out.values()[1] == doctest::Approx(11).epsilon(1e-12));
  }
  SUBCASE("cell center is mean of corners") {
    Tensor c = Tensor::from({1, 2}, {0.5, 0.5}, false);
    Tensor out = bilinear_sample_2d(grid, c);
    CHECK(out.values()[0] == doctest::Approx((0 + 2 + 6 + 8) / 4.0).epsilon(1e-12));
  }
  SUBCASE("far outside gives zero") {
    Tensor c = Tensor::from({2, 2}, {-5.0, 0.0, 0.0, 40.0}, false);
    Tensor out = bilinear_sample_2d(grid, c);
    for (double v : out.values()) CHECK(v == 0.0);
  }
  SUBCASE("gradient w.r.t. coords matches finite differences") {
    Rng rng(3);
    std::vector<double> cv(8);
    for (auto& x : cv) x = rng.uniform(0.1, 1.4);
    Tensor coords = Tensor::from({4, 2}, cv, true);
    coords.zero_grad();
    Tensor out = bilinear_sample_2d(grid, coords);
    Tensor loss = sum(mul(out, out));
    loss.backward();
    auto analytic = coords.grad();
    auto eval = [&](std::vector<double>& vals) {
      Tensor c2 = Tensor::from({4, 2}, vals, false);
      auto o = bilinear_sample_2d(grid, c2);
      return sum(mul(o, o)).item();
    };
    std::vector<double> v = cv;
    for (size_t i = 0; i < v.size(); ++i) {
      double num = fd_grad(eval, v, i);
      CHECK(rel_err(analytic[i], num) < 1e-6);
    }
  }
}

TEST_CASE("softmax rows sum to one and layernorm is standardized") {
  Rng rng(11);
  Tensor x = randt(rng, {8, 16}, -3, 3, false);
  Tensor s = softmax_rows(x);
  for (int64_t i = 0; i < 8; ++i) {
    double acc = 0;
    for (int64_t c = 0; c < 16; ++c) acc += s.values()[i * 16 + c];
    CHECK(std::fabs(acc - 1.0) < 1e-12);
  }
  Tensor g = Tensor::from({16}, std::vector<double>(16, 1.0), false);
  Tensor b = Tensor::from({16}, std::vector<double>(16, 0.0), false);
  Tensor ln = layer_norm(x, g, b);
  for (int64_t i = 0; i < 8; ++i) {
    double m = 0, var = 0;
    for (int64_t c = 0; c < 16; ++c) m += ln.values()[i * 16 + c];
    m /= 16;
    for (int64_t c = 0; c < 16; ++c) {
      double d = ln.values()[i * 16 + c] - m;
      var += d * d;
    }
    var /= 16;
    CHECK(std::fabs(m) < 1e-9);
    CHECK(std::fabs(var - 1.0) < 1e-6);
  }
}

TEST_CASE("forward determinism") {
  Rng rng(5);
  Tensor x = randt(rng, {7, 9}, -2, 2, false);
  Tensor w = randt(rng, {9, 4}, -1, 1, false);
  auto run = [&]() {
    Tensor y = softmax_rows(matmul(tanh(x), w));
    return y.values();
  };
  CHECK(run() == run());
}

TEST_CASE("scatter_mean semantics") {
  Tensor x = Tensor::from({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, false);
  std::vector<int64_t> bins{1, 1, -1, 0};
  Tensor out = scatter_mean(x, bins, 3);
  CHECK(out.values() == std::vector<double>{7, 8, 2, 3, 0, 0});
}

TEST_CASE("checked mode flags non-finite values") {
  set_checked_mode(true);
  Tensor x = Tensor::from({1}, {1000.0}, false);
  CHECK_THROWS(exp(exp(x)));
  set_checked_mode(false);
}
