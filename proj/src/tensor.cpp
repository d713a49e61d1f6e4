#include "omni/tensor.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace omni {

namespace {

Precision g_prec = Precision::f64;
bool g_checked = false;

void finish_values(std::vector<double>& v, const char* op) {
  if (g_prec == Precision::f32) {
    for (double& x : v) x = double(float(x));
  }
  if (g_checked) {
    for (double x : v) {
      if (!std::isfinite(x)) fail(std::string("non-finite value produced by op ") + op);
    }
  }
}

using NodePtr = std::shared_ptr<TensorNode>;

Tensor make(Shape s, std::vector<double> v, std::vector<Tensor> parents, const char* op) {
  OMNI_CHECK(int64_t(v.size()) == ::omni::numel(s), std::string(op) + ": value size mismatch");
  finish_values(v, op);
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(s);
  n->v = std::move(v);
  for (const Tensor& p : parents) {
    if (p.requires_grad()) n->requires_grad = true;
    n->parents.push_back(p.node());
  }
  return Tensor(std::move(n));
}

enum class Bcast { none, row, col };

Bcast bcast_kind(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Bcast::none;
  int64_t lastd = a.empty() ? 1 : a.back();
  if ((b.size() == 1 && b[0] == lastd) || (b.size() == 2 && b[0] == 1 && b[1] == lastd))
    return Bcast::row;
  if (a.size() == 2 && b.size() == 2 && b[0] == a[0] && b[1] == 1) return Bcast::col;
  fail(std::string(op) + ": incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

Precision default_precision() { return g_prec; }
void set_default_precision(Precision p) { g_prec = p; }
bool checked_mode() { return g_checked; }
void set_checked_mode(bool on) { g_checked = on; }

Tensor Tensor::zeros(Shape s, bool rg) {
  std::vector<double> v(size_t(::omni::numel(s)), 0.0);
  auto t = make(std::move(s), std::move(v), {}, "zeros");
  t.node()->requires_grad = rg;
  return t;
}

Tensor Tensor::full(Shape s, double fill, bool rg) {
  std::vector<double> v(::omni::numel(s), fill);
  auto t = make(std::move(s), std::move(v), {}, "full");
  t.node()->requires_grad = rg;
  return t;
}

Tensor Tensor::from(Shape s, std::vector<double> vals, bool rg) {
  auto t = make(std::move(s), std::move(vals), {}, "from");
  t.node()->requires_grad = rg;
  return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

void Tensor::backward() const {
  OMNI_CHECK(numel() == 1, "backward() root must be scalar");
  static uint64_t epoch_counter = 0;
  const uint64_t epoch = ++epoch_counter;

  // iterative post-order DFS
  std::vector<TensorNode*> order;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  node_->epoch = epoch;
  stack.push_back({node_.get(), 0});
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      TensorNode* p = n->parents[i++].get();
      if (p->epoch != epoch) {
        p->epoch = epoch;
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->grad_buf()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->requires_grad && n->backward_fn) n->backward_fn();
  }
}

// ---- elementwise binaries ----

namespace {

template <class FwdF, class BwdF>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* op, FwdF f, BwdF dfdab) {
  Bcast bc = bcast_kind(a.shape(), b.shape(), op);
  const auto& av = a.values();
  const auto& bv = b.values();
  int64_t n = a.numel();
  int64_t C = a.shape().empty() ? 1 : a.shape().back();
  std::vector<double> out(n);
  auto bidx = [bc, C](int64_t i) -> int64_t {
    switch (bc) {
      case Bcast::none: return i;
      case Bcast::row: return i % C;
      case Bcast::col: return i / C;
    }
    return 0;
  };
  for (int64_t i = 0; i < n; ++i) out[i] = f(av[i], bv[bidx(i)]);
  Tensor t = make(a.shape(), std::move(out), {a, b}, op);
  if (t.requires_grad()) {
    auto an = a.node(), bn = b.node();
    auto tn = t.node().get();
    t.node()->backward_fn = [an, bn, tn, bidx, f, dfdab, n]() {
      const auto& go = tn->g;
      if (an->requires_grad) {
        auto& ga = an->grad_buf();
        for (int64_t i = 0; i < n; ++i) {
          auto [da, db] = dfdab(an->v[i], bn->v[bidx(i)]);
          (void)db;
          ga[i] += go[i] * da;
        }
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_buf();
        for (int64_t i = 0; i < n; ++i) {
          auto [da, db] = dfdab(an->v[i], bn->v[bidx(i)]);
          (void)da;
          gb[bidx(i)] += go[i] * db;
        }
      }
    };
  }
  return t;
}

struct DD { double da, db; };

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "add", [](double x, double y) { return x + y; },
                   [](double, double) { return DD{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                   [](double, double) { return DD{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "mul", [](double x, double y) { return x * y; },
                   [](double x, double y) { return DD{y, x}; });
}

namespace {

template <class FwdF, class DerF>
Tensor unary_op(const Tensor& x, const char* op, FwdF f, DerF df) {
  const auto& xv = x.values();
  int64_t n = x.numel();
  std::vector<double> out(n);
  for (int64_t i = 0; i < n; ++i) out[i] = f(xv[i]);
  Tensor t = make(x.shape(), std::move(out), {x}, op);
  if (t.requires_grad()) {
    auto xn = x.node();
    auto tn = t.node().get();
    t.node()->backward_fn = [xn, tn, df, n]() {
      auto& gx = xn->grad_buf();
      for (int64_t i = 0; i < n; ++i) gx[i] += tn->g[i] * df(xn->v[i], tn->v[i]);
    };
  }
  return t;
}

}  // namespace

Tensor mul(const Tensor& a, double k) {
  return unary_op(a, "mulk", [k](double x) { return x * k; },
                  [k](double, double) { return k; });
}

Tensor add(const Tensor& a, double k) {
  return unary_op(a, "addk", [k](double x) { return x + k; },
                  [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(x, "sigmoid",
                  [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                                               : std::exp(v) / (1.0 + std::exp(v)); },
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary_op(x, "softplus",
                  [](double v) { return v > 0 ? v + std::log1p(std::exp(-v))
                                              : std::log1p(std::exp(v)); },
                  [](double v, double) {
                    return v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                                  : std::exp(v) / (1.0 + std::exp(v));
                  });
}

Tensor tanh(const Tensor& x) {
  return unary_op(x, "tanh", [](double v) { return std::tanh(v); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary_op(x, "exp", [](double v) { return std::exp(v); },
                  [](double, double y) { return y; });
}

Tensor abs(const Tensor& x) {
  return unary_op(x, "abs", [](double v) { return std::fabs(v); },
                  [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor silu(const Tensor& x) { return mul(x, sigmoid(x)); }

// ---- matmul family ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  OMNI_CHECK(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[1] == b.shape()[0],
             "matmul shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  int64_t N = a.shape()[0], K = a.shape()[1], M = b.shape()[1];
  std::vector<double> out(N * M, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (int64_t i = 0; i < N; ++i) {
    double* o = out.data() + i * M;
    for (int64_t k = 0; k < K; ++k) {
      double aik = A[i * K + k];
      const double* brow = B + k * M;
      for (int64_t j = 0; j < M; ++j) o[j] += aik * brow[j];
    }
  }
  Tensor t = make({N, M}, std::move(out), {a, b}, "matmul");
  if (t.requires_grad()) {
    auto an = a.node(), bn = b.node();
    auto tn = t.node().get();
    t.node()->backward_fn = [an, bn, tn, N, K, M]() {
      const double* G = tn->g.data();
      if (an->requires_grad) {  // dA = G B^T
        auto& ga = an->grad_buf();
#pragma omp parallel for schedule(static) num_threads(max_threads())
        for (int64_t i = 0; i < N; ++i)
          for (int64_t k = 0; k < K; ++k) {
            double s = 0;
            const double* brow = bn->v.data() + k * M;
            const double* grow = G + i * M;
            for (int64_t j = 0; j < M; ++j) s += grow[j] * brow[j];
            ga[i * K + k] += s;
          }
      }
      if (bn->requires_grad) {  // dB = A^T G
        auto& gb = bn->grad_buf();
#pragma omp parallel for schedule(static) num_threads(max_threads())
        for (int64_t k = 0; k < K; ++k) {
          double* grow_out = gb.data() + k * M;
          for (int64_t i = 0; i < N; ++i) {
            double aik = an->v[i * K + k];
            const double* grow = G + i * M;
            for (int64_t j = 0; j < M; ++j) grow_out[j] += aik * grow[j];
          }
        }
      }
    };
  }
  return t;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  OMNI_CHECK(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[1] == b.shape()[1],
             "matmul_nt shapes");
  int64_t N = a.shape()[0], K = a.shape()[1], M = b.shape()[0];
  std::vector<double> out(N * M);
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (int64_t i = 0; i < N; ++i)
    for (int64_t j = 0; j < M; ++j) {
      double s = 0;
      const double* ar = a.values().data() + i * K;
      const double* br = b.values().data() + j * K;
      for (int64_t k = 0; k < K; ++k) s += ar[k] * br[k];
      out[i * M + j] = s;
    }
  Tensor t = make({N, M}, std::move(out), {a, b}, "matmul_nt");
  if (t.requires_grad()) {
    auto an = a.node(), bn = b.node();
    auto tn = t.node().get();
    t.node()->backward_fn = [an, bn, tn, N, K, M]() {
      const double* G = tn->g.data();
      if (an->requires_grad) {  // dA = G B
        auto& ga = an->grad_buf();
        for (int64_t i = 0; i < N; ++i)
          for (int64_t j = 0; j < M; ++j) {
            double gij = G[i * M + j];
            const double* br = bn->v.data() + j * K;
            double* gr = ga.data() + i * K;
            for (int64_t k = 0; k < K; ++k) gr[k] += gij * br[k];
          }
      }
      if (bn->requires_grad) {  // dB = G^T A
        auto& gb = bn->grad_buf();
        for (int64_t i = 0; i < N; ++i)
          for (int64_t j = 0; j < M; ++j) {
            double gij = G[i * M + j];
            const double* ar = an->v.data() + i * K;
            double* gr = gb.data() + j * K;
            for (int64_t k = 0; k < K; ++k) gr[k] += gij * ar[k];
          }
      }
    };
  }
  return t;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

// ---- conv / pooling / resampling ----

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, Pad pad) {
  OMNI_CHECK(x.shape().size() == 3 && w.shape().size() == 4, "conv2d rank");
  OMNI_CHECK(stride == 1 || stride == 2, "conv2d stride must be 1 or 2");
  int64_t H = x.shape()[0], W = x.shape()[1], Ci = x.shape()[2];
  int64_t kh = w.shape()[0], kw = w.shape()[1], Co = w.shape()[3];
  OMNI_CHECK(w.shape()[2] == Ci, "conv2d channel mismatch");
  OMNI_CHECK(b.shape() == Shape{Co}, "conv2d bias shape");
  int64_t OH, OW, pt, pl;
  if (pad == Pad::same) {
    OH = (H + stride - 1) / stride;
    OW = (W + stride - 1) / stride;
    int64_t ph = std::max<int64_t>(0, (OH - 1) * stride + kh - H);
    int64_t pw = std::max<int64_t>(0, (OW - 1) * stride + kw - W);
    pt = ph / 2;
    pl = pw / 2;
  } else {
    OMNI_CHECK(H >= kh && W >= kw, "conv2d valid: kernel larger than input");
    OH = (H - kh) / stride + 1;
    OW = (W - kw) / stride + 1;
    pt = pl = 0;
  }
  std::vector<double> out(OH * OW * Co);
  const double* X = x.values().data();
  const double* Wt = w.values().data();
  const double* B = b.values().data();
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (int64_t oy = 0; oy < OH; ++oy)
    for (int64_t ox = 0; ox < OW; ++ox) {
      double* o = out.data() + (oy * OW + ox) * Co;
      for (int64_t c = 0; c < Co; ++c) o[c] = B[c];
      for (int64_t ky = 0; ky < kh; ++ky) {
        int64_t iy = oy * stride + ky - pt;
        if (iy < 0 || iy >= H) continue;
        for (int64_t kx = 0; kx < kw; ++kx) {
          int64_t ix = ox * stride + kx - pl;
          if (ix < 0 || ix >= W) continue;
          const double* xr = X + (iy * W + ix) * Ci;
          const double* wr = Wt + ((ky * kw + kx) * Ci) * Co;
          for (int64_t ci = 0; ci < Ci; ++ci) {
            double xv = xr[ci];
            const double* wc = wr + ci * Co;
            for (int64_t c = 0; c < Co; ++c) o[c] += xv * wc[c];
          }
        }
      }
    }
  Tensor t = make({OH, OW, Co}, std::move(out), {x, w, b}, "conv2d");
  if (t.requires_grad()) {
    auto xn = x.node(), wn = w.node(), bn = b.node();
    auto tn = t.node().get();
    t.node()->backward_fn = [=]() {
      const double* G = tn->g.data();
      if (bn->requires_grad) {
        auto& gb = bn->grad_buf();
        for (int64_t i = 0; i < OH * OW; ++i)
          for (int64_t c = 0; c < Co; ++c) gb[c] += G[i * Co + c];
      }
      if (wn->requires_grad) {
        auto& gw = wn->grad_buf();
#pragma omp parallel for schedule(static) num_threads(max_threads())
        for (int64_t ky = 0; ky < kh; ++ky)
          for (int64_t kx = 0; kx < kw; ++kx)
            for (int64_t oy = 0; oy < OH; ++oy) {
              int64_t iy = oy * stride + ky - pt;
              if (iy < 0 || iy >= H) continue;
              for (int64_t ox = 0; ox < OW; ++ox) {
                int64_t ix = ox * stride + kx - pl;
                if (ix < 0 || ix >= W) continue;
                const double* xr = xn->v.data() + (iy * W + ix) * Ci;
                const double* gr = G + (oy * OW + ox) * Co;
                double* wr = gw.data() + ((ky * kw + kx) * Ci) * Co;
                for (int64_t ci = 0; ci < Ci; ++ci) {
                  double xv = xr[ci];
                  double* wc = wr + ci * Co;
                  for (int64_t c = 0; c < Co; ++c) wc[c] += xv * gr[c];
                }
              }
            }
      }
      if (xn->requires_grad) {
        auto& gx = xn->grad_buf();
        // gather form: each input pixel sums over the outputs it fed
#pragma omp parallel for schedule(static) num_threads(max_threads())
        for (int64_t iy = 0; iy < H; ++iy)
          for (int64_t ix = 0; ix < W; ++ix) {
            double* gr = gx.data() + (iy * W + ix) * Ci;
            for (int64_t ky = 0; ky < kh; ++ky) {
              int64_t num = iy + pt - ky;
              if (num < 0 || num % stride) continue;
              int64_t oy = num / stride;
              if (oy >= OH) continue;
              for (int64_t kx = 0; kx < kw; ++kx) {
                int64_t numx = ix + pl - kx;
                if (numx < 0 || numx % stride) continue;
                int64_t ox = numx / stride;
                if (ox >= OW) continue;
                const double* go = G + (oy * OW + ox) * Co;
                const double* wr = wn->v.data() + ((ky * kw + kx) * Ci) * Co;
                for (int64_t ci = 0; ci < Ci; ++ci) {
                  const double* wc = wr + ci * Co;
                  double s = 0;
                  for (int64_t c = 0; c < Co; ++c) s += wc[c] * go[c];
                  gr[ci] += s;
                }
              }
            }
          }
      }
    };
  }
  return t;
}

Tensor avg_pool2d(const Tensor& x, int k) {
  OMNI_CHECK(x.shape().size() == 3, "avg_pool2d rank");
  int64_t H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
  OMNI_CHECK(H % k == 0 && W % k == 0, "avg_pool2d: dims not divisible by k");
  int64_t OH = H / k, OW = W / k;
  double inv = 1.0 / (k * k);
  std::vector<double> out(OH * OW * C, 0.0);
  for (int64_t oy = 0; oy < OH; ++oy)
    for (int64_t ox = 0; ox < OW; ++ox)
      for (int64_t dy = 0; dy < k; ++dy)
        for (int64_t dx = 0; dx < k; ++dx) {
          const double* xr = x.values().data() + ((oy * k + dy) * W + ox * k + dx) * C;
          double* o = out.data() + (oy * OW + ox) * C;
          for (int64_t c = 0; c < C; ++c) o[c] += xr[c] * inv;
        }
  Tensor t = make({OH, OW, C}, std::move(out), {x}, "avg_pool2d");
  if (t.requires_grad()) {
    auto xn = x.node();
    auto tn = t.node().get();
    t.node()->backward_fn = [=]() {
      auto& gx = xn->grad_buf();
      for (int64_t oy = 0; oy < OH; ++oy)
        for (int64_t ox = 0; ox < OW; ++ox)
          for (int64_t dy = 0; dy < k; ++dy)
            for (int64_t dx = 0; dx < k; ++dx) {
              double* gr = gx.data() + ((oy * k + dy) * W + ox * k + dx) * C;
              const double* go = tn->g.data() + (oy * OW + ox) * C;
              for (int64_t c = 0; c < C; ++c) gr[c] += go[c] * inv;
            }
    };
  }
  return t;
}

Tensor upsample_nearest(const Tensor& x, int f) {
  OMNI_CHECK(x.shape().size() == 3, "upsample_nearest rank");
  int64_t H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
  int64_t OH = H * f, OW = W * f;
  std::vector<double> out(OH * OW * C);
  for (int64_t oy = 0; oy < OH; ++oy)
    for (int64_t ox = 0; ox < OW; ++ox) {
      const double* xr = x.values().data() + ((oy / f) * W + ox / f) * C;
      double* o = out.data() + (oy * OW + ox) * C;
      std::copy(xr, xr + C, o);
    }
  Tensor t = make({OH, OW, C}, std::move(out), {x}, "upsample_nearest");
  if (t.requires_grad()) {
    auto xn = x.node();
    auto tn = t.node().get();
    t.node()->backward_fn = [=]() {
      auto& gx = xn->grad_buf();
      for (int64_t oy = 0; oy < OH; ++oy)
        for (int64_t ox = 0; ox < OW; ++ox) {
          double* gr = gx.data() + ((oy / f) * W + ox / f) * C;
          const double* go = tn->g.data() + (oy * OW + ox) * C;
          for (int64_t c = 0; c < C; ++c) gr[c] += go[c];
        }
    };
  }
  return t;
}

namespace {

struct LerpIdx {
  int64_t i0, i1;
  double f;
};

LerpIdx edge_lerp(int64_t out, int64_t in, int64_t o) {
  double s = (o + 0.5) * double(in) / double(out) - 0.5;
  s = std::clamp(s, 0.0, double(in - 1));
  int64_t i0 = std::min<int64_t>(int64_t(std::floor(s)), in - 1);
  int64_t i1 = std::min<int64_t>(i0 + 1, in - 1);
  return {i0, i1, s - double(i0)};
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, int64_t oh, int64_t ow) {
  OMNI_CHECK(x.shape().size() == 3, "upsample_bilinear rank");
  int64_t H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
  std::vector<double> out(oh * ow * C, 0.0);
  for (int64_t oy = 0; oy < oh; ++oy) {
    LerpIdx ly = edge_lerp(oh, H, oy);
    for (int64_t ox = 0; ox < ow; ++ox) {
      LerpIdx lx = edge_lerp(ow, W, ox);
      double* o = out.data() + (oy * ow + ox) * C;
      const double* p00 = x.values().data() + (ly.i0 * W + lx.i0) * C;
      const double* p01 = x.values().data() + (ly.i0 * W + lx.i1) * C;
      const double* p10 = x.values().data() + (ly.i1 * W + lx.i0) * C;
      const double* p11 = x.values().data() + (ly.i1 * W + lx.i1) * C;
      double w00 = (1 - ly.f) * (1 - lx.f), w01 = (1 - ly.f) * lx.f;
      double w10 = ly.f * (1 - lx.f), w11 = ly.f * lx.f;
      for (int64_t c = 0; c < C; ++c)
        o[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
    }
  }
  Tensor t = make({oh, ow, C}, std::move(out), {x}, "upsample_bilinear");
  if (t.requires_grad()) {
    auto xn = x.node();
    auto tn = t.node().get();
    t.node()->backward_fn = [=]() {
      auto& gx = xn->grad_buf();
      for (int64_t oy = 0; oy < oh; ++oy) {
        LerpIdx ly = edge_lerp(oh, H, oy);
        for (int64_t ox = 0; ox < ow; ++ox) {
          LerpIdx lx = edge_lerp(ow, W, ox);
          const double* go = tn->g.data() + (oy * ow + ox) * C;
          double w[4] = {(1 - ly.f) * (1 - lx.f), (1 - ly.f) * lx.f, ly.f * (1 - lx.f),
                         ly.f * lx.f};
          int64_t idx[4] = {(ly.i0 * W + lx.i0) * C, (ly.i0 * W + lx.i1) * C,
                            (ly.i1 * W + lx.i0) * C, (ly.i1 * W + lx.i1) * C};
          for (int q = 0; q < 4; ++q)
            for (int64_t c = 0; c < C; ++c) gx[idx[q] + c] += w[q] * go[c];
        }
      }
    };
  }
  return t;
}

// ---- normalization / softmax ----

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  OMNI_CHECK(x.shape().size() == 2, "layer_norm expects [N,C]");
  int64_t N = x.shape()[0], C = x.shape()[1];
  OMNI_CHECK(gamma.numel() == C && beta.numel() == C, "layer_norm affine shape");
  std::vector<double> out(N * C), mu(N), istd(N);
  for (int64_t i = 0; i < N; ++i) {
    const double* xr = x.values().data() + i * C;
    double m = 0;
    for (int64_t c = 0; c < C; ++c) m += xr[c];
    m /= C;
    double var = 0;
    for (int64_t c = 0; c < C; ++c) var += (xr[c] - m) * (xr[c] - m);
    var /= C;
    double is = 1.0 / std::sqrt(var + eps);
    mu[i] = m;
    istd[i] = is;
    double* o = out.data() + i * C;
    for (int64_t c = 0; c < C; ++c)
      o[c] = (xr[c] - m) * is * gamma.values()[c] + beta.values()[c];
  }
  Tensor t = make({N, C}, std::move(out), {x, gamma, beta}, "layer_norm");
  if (t.requires_grad()) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    auto tn = t.node().get();
    t.node()->backward_fn = [=]() {
      for (int64_t i = 0; i < N; ++i) {
        const double* xr = xn->v.data() + i * C;
        const double* go = tn->g.data() + i * C;
        double m = mu[i], is = istd[i];
        if (gn->requires_grad || bn->requires_grad) {
          auto& gg = gn->grad_buf();
          auto& gb = bn->grad_buf();
          for (int64_t c = 0; c < C; ++c) {
            gg[c] += go[c] * (xr[c] - m) * is;
            gb[c] += go[c];
          }
        }
        if (xn->requires_grad) {
          auto& gx = xn->grad_buf();
          // d xhat
          double sum_d = 0, sum_dx = 0;
          for (int64_t c = 0; c < C; ++c) {
            double d = go[c] * gn->v[c];
            sum_d += d;
            sum_dx += d * (xr[c] - m) * is;
          }
          for (int64_t c = 0; c < C; ++c) {
            double d = go[c] * gn->v[c];
            double xh = (xr[c] - m) * is;
            gx[i * C + c] += is * (d - sum_d / C - xh * sum_dx / C);
          }
        }
      }
    };
  }
  return t;
}

Tensor softmax_rows(const Tensor& x) {
  OMNI_CHECK(x.shape().size() == 2, "softmax_rows expects [N,C]");
  int64_t N = x.shape()[0], C = x.shape()[1];
  std::vector<double> out(N * C);
  for (int64_t i = 0; i < N; ++i) {
    const double* xr = x.values().data() + i * C;
    double mx = xr[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, xr[c]);
    double s = 0;
    double* o = out.data() + i * C;
    for (int64_t c = 0; c < C; ++c) {
      o[c] = std::exp(xr[c] - mx);
      s += o[c];
    }
    for (int64_t c = 0; c < C; ++c) o[c] /= s;
  }
  Tensor t = make({N, C}, std::move(out), {x}, "softmax_rows");
  if (t.requires_grad()) {
    auto xn = x.node();
    auto tn = t.node().get();
    t.node()->backward_fn = [=]() {
      auto& gx = xn->grad_buf();
      for (int64_t i = 0; i < N; ++i) {
        const double* y = tn->v.data() + i * C;
        const double* go = tn->g.data() + i * C;
        double dot = 0;
        for (int64_t c = 0; c < C; ++c) dot += y[c] * go[c];
        for (int64_t c = 0; c < C; ++c) gx[i * C + c] += y[c] * (go[c] - dot);
      }
    };
  }
  return t;
}

// ---- shape ops ----

Tensor concat_rows(const std::vector<Tensor>& xs) {
  OMNI_CHECK(!xs.empty(), "concat_rows: empty list");
  Shape s = xs[0].shape();
  int64_t inner = numel(s) / s[0];
  int64_t rows = 0;
  for (const auto& x : xs) {
    OMNI_CHECK(x.numel() / x.shape()[0] == inner, "concat_rows inner-dim mismatch");
    rows += x.shape()[0];
  }
  s[0] = rows;
  std::vector<double> out;
  out.reserve(rows * inner);
  for (const auto& x : xs) out.insert(out.end(), x.values().begin(), x.values().end());
  Tensor t = make(s, std::move(out), xs, "concat_rows");
  if (t.requires_grad()) {
    auto tn = t.node().get();
    std::vector<NodePtr> ps;
    for (const auto& x : xs) ps.push_back(x.node());
    t.node()->backward_fn = [tn, ps]() {
      int64_t off = 0;
      for (const auto& p : ps) {
        int64_t n = int64_t(p->v.size());
        if (p->requires_grad) {
          auto& gp = p->grad_buf();
          for (int64_t i = 0; i < n; ++i) gp[i] += tn->g[off + i];
        }
        off += n;
      }
    };
  }
  return t;
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  OMNI_CHECK(!xs.empty(), "concat_cols: empty list");
  int64_t N = xs[0].shape()[0];
  int64_t C = 0;
  for (const auto& x : xs) {
    OMNI_CHECK(x.shape().size() == 2 && x.shape()[0] == N, "concat_cols shape");
    C += x.shape()[1];
  }
  std::vector<double> out(N * C);
  int64_t off = 0;
  for (const auto& x : xs) {
    int64_t c = x.shape()[1];
    for (int64_t i = 0; i < N; ++i)
      std::copy(x.values().begin() + i * c, x.values().begin() + (i + 1) * c,
                out.begin() + i * C + off);
    off += c;
  }
  Tensor t = make({N, C}, std::move(out), xs, "concat_cols");
  if (t.requires_grad()) {
    auto tn = t.node().get();
    std::vector<NodePtr> ps;
    for (const auto& x : xs) ps.push_back(x.node());
    t.node()->backward_fn = [tn, ps, N, C]() {
      int64_t off = 0;
      for (const auto& p : ps) {
        int64_t c = int64_t(p->v.size()) / N;
        if (p->requires_grad) {
          auto& gp = p->grad_buf();
          for (int64_t i = 0; i < N; ++i)
            for (int64_t j = 0; j < c; ++j) gp[i * c + j] += tn->g[i * C + off + j];
        }
        off += c;
      }
    };
  }
  return t;
}

Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1) {
  OMNI_CHECK(x.shape().size() == 2 && c0 >= 0 && c1 <= x.shape()[1] && c0 < c1,
             "slice_cols range");
  int64_t N = x.shape()[0], C = x.shape()[1], c = c1 - c0;
  std::vector<double> out(N * c);
  for (int64_t i = 0; i < N; ++i)
    std::copy(x.values().begin() + i * C + c0, x.values().begin() + i * C + c1,
              out.begin() + i * c);
  Tensor t = make({N, c}, std::move(out), {x}, "slice_cols");
  if (t.requires_grad()) {
    auto xn = x.node();
    auto tn = t.node().get();
    t.node()->backward_fn = [=]() {
      auto& gx = xn->grad_buf();
      for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < c; ++j) gx[i * C + c0 + j] += tn->g[i * c + j];
    };
  }
  return t;
}

Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1) {
  OMNI_CHECK(!x.shape().empty() && r0 >= 0 && r1 <= x.shape()[0] && r0 < r1,
             "slice_rows range");
  Shape s = x.shape();
  int64_t inner = x.numel() / s[0];
  s[0] = r1 - r0;
  std::vector<double> out(x.values().begin() + r0 * inner, x.values().begin() + r1 * inner);
  Tensor t = make(s, std::move(out), {x}, "slice_rows");
  if (t.requires_grad()) {
    auto xn = x.node();
    auto tn = t.node().get();
    int64_t n = (r1 - r0) * inner;
    t.node()->backward_fn = [=]() {
      auto& gx = xn->grad_buf();
      for (int64_t i = 0; i < n; ++i) gx[r0 * inner + i] += tn->g[i];
    };
  }
  return t;
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx) {
  OMNI_CHECK(!x.shape().empty(), "gather_rows rank");
  int64_t R = x.shape()[0];
  int64_t inner = x.numel() / R;
  Shape s = x.shape();
  s[0] = int64_t(idx.size());
  std::vector<double> out(idx.size() * inner);
  for (size_t i = 0; i < idx.size(); ++i) {
    OMNI_CHECK(idx[i] >= 0 && idx[i] < R, "gather_rows index out of range");
    std::copy(x.values().begin() + idx[i] * inner, x.values().begin() + (idx[i] + 1) * inner,
              out.begin() + int64_t(i) * inner);
  }
  Tensor t = make(s, std::move(out), {x}, "gather_rows");
  if (t.requires_grad()) {
    auto xn = x.node();
    auto tn = t.node().get();
    auto ids = idx;
    t.node()->backward_fn = [=]() {
      auto& gx = xn->grad_buf();
      for (size_t i = 0; i < ids.size(); ++i)
        for (int64_t j = 0; j < inner; ++j)
          gx[ids[i] * inner + j] += tn->g[int64_t(i) * inner + j];
    };
  }
  return t;
}

Tensor reshape(const Tensor& x, Shape s) {
  OMNI_CHECK(numel(s) == x.numel(), "reshape numel mismatch");
  Tensor t = make(std::move(s), x.values(), {x}, "reshape");
  if (t.requires_grad()) {
    auto xn = x.node();
    auto tn = t.node().get();
    t.node()->backward_fn = [=]() {
      auto& gx = xn->grad_buf();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += tn->g[i];
    };
  }
  return t;
}

// ---- reductions ----

namespace {

Tensor reduce_op(const Tensor& x, double scale, const char* op) {
  double s = 0;
  for (double v : x.values()) s += v;
  Tensor t = make({1}, {s * scale}, {x}, op);
  if (t.requires_grad()) {
    auto xn = x.node();
    auto tn = t.node().get();
    t.node()->backward_fn = [=]() {
      auto& gx = xn->grad_buf();
      double g = tn->g[0] * scale;
      for (double& v : gx) v += g;
    };
  }
  return t;
}

}  // namespace

Tensor sum(const Tensor& x) { return reduce_op(x, 1.0, "sum"); }
Tensor mean(const Tensor& x) { return reduce_op(x, 1.0 / double(x.numel()), "mean"); }

Tensor mse(const Tensor& a, const Tensor& b) {
  OMNI_CHECK(a.shape() == b.shape(), "mse shape mismatch");
  int64_t n = a.numel();
  double s = 0;
  for (int64_t i = 0; i < n; ++i) {
    double d = a.values()[i] - b.values()[i];
    s += d * d;
  }
  Tensor t = make({1}, {s / n}, {a, b}, "mse");
  if (t.requires_grad()) {
    auto an = a.node(), bn = b.node();
    auto tn = t.node().get();
    t.node()->backward_fn = [=]() {
      double g = tn->g[0] * 2.0 / n;
      for (int64_t i = 0; i < n; ++i) {
        double d = (an->v[i] - bn->v[i]) * g;
        if (an->requires_grad) an->grad_buf()[i] += d;
        if (bn->requires_grad) bn->grad_buf()[i] -= d;
      }
    };
  }
  return t;
}

Tensor l1(const Tensor& a, const Tensor& b) {
  OMNI_CHECK(a.shape() == b.shape(), "l1 shape mismatch");
  int64_t n = a.numel();
  double s = 0;
  for (int64_t i = 0; i < n; ++i) s += std::fabs(a.values()[i] - b.values()[i]);
  Tensor t = make({1}, {s / n}, {a, b}, "l1");
  if (t.requires_grad()) {
    auto an = a.node(), bn = b.node();
    auto tn = t.node().get();
    t.node()->backward_fn = [=]() {
      double g = tn->g[0] / n;
      for (int64_t i = 0; i < n; ++i) {
        double d = an->v[i] - bn->v[i];
        double sg = d > 0 ? g : (d < 0 ? -g : 0.0);
        if (an->requires_grad) an->grad_buf()[i] += sg;
        if (bn->requires_grad) bn->grad_buf()[i] -= sg;
      }
    };
  }
  return t;
}

Tensor scatter_mean(const Tensor& x, const std::vector<int64_t>& bins, int64_t n_bins) {
  OMNI_CHECK(x.shape().size() == 2 && int64_t(bins.size()) == x.shape()[0],
             "scatter_mean shapes");
  int64_t N = x.shape()[0], C = x.shape()[1];
  std::vector<double> out(n_bins * C, 0.0);
  std::vector<int64_t> count(n_bins, 0);
  for (int64_t i = 0; i < N; ++i) {
    int64_t b = bins[i];
    if (b < 0) continue;
    OMNI_CHECK(b < n_bins, "scatter_mean bin out of range");
    count[b]++;
    for (int64_t c = 0; c < C; ++c) out[b * C + c] += x.values()[i * C + c];
  }
  for (int64_t b = 0; b < n_bins; ++b)
    if (count[b])
      for (int64_t c = 0; c < C; ++c) out[b * C + c] /= count[b];
  Tensor t = make({n_bins, C}, std::move(out), {x}, "scatter_mean");
  if (t.requires_grad()) {
    auto xn = x.node();
    auto tn = t.node().get();
    auto bcopy = bins;
    auto ccopy = count;
    t.node()->backward_fn = [=]() {
      auto& gx = xn->grad_buf();
      for (int64_t i = 0; i < N; ++i) {
        int64_t b = bcopy[i];
        if (b < 0) continue;
        double inv = 1.0 / double(ccopy[b]);
        for (int64_t c = 0; c < C; ++c) gx[i * C + c] += tn->g[b * C + c] * inv;
      }
    };
  }
  return t;
}

Tensor bilinear_sample_2d(const Tensor& grid, const Tensor& coords) {
  OMNI_CHECK(grid.shape().size() == 3, "bilinear_sample_2d grid rank");
  OMNI_CHECK(coords.shape().size() == 2 && coords.shape()[1] == 2,
             "bilinear_sample_2d coords shape");
  int64_t H = grid.shape()[0], W = grid.shape()[1], C = grid.shape()[2];
  int64_t N = coords.shape()[0];
  std::vector<double> out(N * C, 0.0);
  auto sample_at = [&](double u, double v, double* o, const double* G) {
    int64_t i0 = int64_t(std::floor(u)), j0 = int64_t(std::floor(v));
    double fu = u - double(i0), fv = v - double(j0);
    for (int di = 0; di < 2; ++di)
      for (int dj = 0; dj < 2; ++dj) {
        int64_t i = i0 + di, j = j0 + dj;
        if (i < 0 || i >= H || j < 0 || j >= W) continue;
        double w = (di ? fu : 1 - fu) * (dj ? fv : 1 - fv);
        const double* gr = G + (i * W + j) * C;
        for (int64_t c = 0; c < C; ++c) o[c] += w * gr[c];
      }
  };
  for (int64_t n = 0; n < N; ++n)
    sample_at(coords.values()[n * 2], coords.values()[n * 2 + 1], out.data() + n * C,
              grid.values().data());
  Tensor t = make({N, C}, std::move(out), {grid, coords}, "bilinear_sample_2d");
  if (t.requires_grad()) {
    auto gn = grid.node(), cn = coords.node();
    auto tn = t.node().get();
    t.node()->backward_fn = [=]() {
      for (int64_t n = 0; n < N; ++n) {
        double u = cn->v[n * 2], v = cn->v[n * 2 + 1];
        int64_t i0 = int64_t(std::floor(u)), j0 = int64_t(std::floor(v));
        double fu = u - double(i0), fv = v - double(j0);
        const double* go = tn->g.data() + n * C;
        double du = 0, dv = 0;
        for (int di = 0; di < 2; ++di)
          for (int dj = 0; dj < 2; ++dj) {
            int64_t i = i0 + di, j = j0 + dj;
            if (i < 0 || i >= H || j < 0 || j >= W) continue;
            double wu = di ? fu : 1 - fu;
            double wv = dj ? fv : 1 - fv;
            double su = di ? 1.0 : -1.0;
            double sv = dj ? 1.0 : -1.0;
            const double* gr = gn->v.data() + (i * W + j) * C;
            double dot = 0;
            for (int64_t c = 0; c < C; ++c) dot += go[c] * gr[c];
            du += su * wv * dot;
            dv += sv * wu * dot;
            if (gn->requires_grad) {
              auto& gg = gn->grad_buf();
              double w = wu * wv;
              for (int64_t c = 0; c < C; ++c) gg[(i * W + j) * C + c] += w * go[c];
            }
          }
        if (cn->requires_grad) {
          auto& gc = cn->grad_buf();
          gc[n * 2] += du;
          gc[n * 2 + 1] += dv;
        }
      }
    };
  }
  return t;
}

Tensor weighted_pool(const Tensor& values, const Tensor& weights) {
  OMNI_CHECK(values.shape().size() == 2 && weights.shape().size() == 2, "weighted_pool rank");
  int64_t N = weights.shape()[0], P = weights.shape()[1], C = values.shape()[1];
  OMNI_CHECK(values.shape()[0] == N * P, "weighted_pool: values rows != N*P");
  std::vector<double> out(N * C, 0.0);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t p = 0; p < P; ++p) {
      double w = weights.values()[n * P + p];
      const double* vr = values.values().data() + (n * P + p) * C;
      double* o = out.data() + n * C;
      for (int64_t c = 0; c < C; ++c) o[c] += w * vr[c];
    }
  Tensor t = make({N, C}, std::move(out), {values, weights}, "weighted_pool");
  if (t.requires_grad()) {
    auto vn = values.node(), wn = weights.node();
    auto tn = t.node().get();
    t.node()->backward_fn = [=]() {
      for (int64_t n = 0; n < N; ++n)
        for (int64_t p = 0; p < P; ++p) {
          const double* go = tn->g.data() + n * C;
          const double* vr = vn->v.data() + (n * P + p) * C;
          double w = wn->v[n * P + p];
          if (vn->requires_grad) {
            auto& gv = vn->grad_buf();
            for (int64_t c = 0; c < C; ++c) gv[(n * P + p) * C + c] += w * go[c];
          }
          if (wn->requires_grad) {
            double dot = 0;
            for (int64_t c = 0; c < C; ++c) dot += go[c] * vr[c];
            wn->grad_buf()[n * P + p] += dot;
          }
        }
    };
  }
  return t;
}

Tensor normalize_rows(const Tensor& x, double eps) {
  OMNI_CHECK(x.shape().size() == 2, "normalize_rows rank");
  int64_t N = x.shape()[0], C = x.shape()[1];
  std::vector<double> out(N * C), norms(N);
  for (int64_t i = 0; i < N; ++i) {
    const double* xr = x.values().data() + i * C;
    double s = eps;
    for (int64_t c = 0; c < C; ++c) s += xr[c] * xr[c];
    double nrm = std::sqrt(s);
    norms[i] = nrm;
    for (int64_t c = 0; c < C; ++c) out[i * C + c] = xr[c] / nrm;
  }
  Tensor t = make({N, C}, std::move(out), {x}, "normalize_rows");
  if (t.requires_grad()) {
    auto xn = x.node();
    auto tn = t.node().get();
    t.node()->backward_fn = [=]() {
      auto& gx = xn->grad_buf();
      for (int64_t i = 0; i < N; ++i) {
        const double* y = tn->v.data() + i * C;
        const double* go = tn->g.data() + i * C;
        double dot = 0;
        for (int64_t c = 0; c < C; ++c) dot += y[c] * go[c];
        for (int64_t c = 0; c < C; ++c) gx[i * C + c] += (go[c] - y[c] * dot) / norms[i];
      }
    };
  }
  return t;
}

Tensor detach(const Tensor& x) {
  return Tensor::from(x.shape(), x.values(), false);
}

}  // namespace omni
