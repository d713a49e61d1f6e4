#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "omni/common.hpp"

namespace omni {

enum class Precision { f64, f32 };

Precision default_precision();
void set_default_precision(Precision p);
bool checked_mode();
void set_checked_mode(bool on);

struct TensorNode {
  Shape shape;
  std::vector<double> v;
  std::vector<double> g;  // allocated lazily on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward_fn;  // accumulates into parents' g
  uint64_t epoch = 0;                 // topo-sort marker

  std::vector<double>& grad_buf() {
    if (g.empty()) g.assign(v.size(), 0.0);
    return g;
  }
};

// Value-semantic handle to a node of the computation graph.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape s, bool requires_grad = false);
  static Tensor full(Shape s, double fill, bool requires_grad = false);
  static Tensor from(Shape s, std::vector<double> vals, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t size(size_t d) const { return node_->shape[d]; }
  int64_t numel() const { return int64_t(node_->v.size()); }
  std::vector<double>& values() { return node_->v; }
  const std::vector<double>& values() const { return node_->v; }
  const std::vector<double>& grad() const { return node_->grad_buf(); }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const {
    OMNI_CHECK(numel() == 1, "item() on non-scalar");
    return node_->v[0];
  }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  void zero_grad() { node_->g.assign(node_->v.size(), 0.0); }

  // Reverse pass from a scalar root.
  void backward() const;

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// ---- op catalog ----

// Elementwise binaries; b may have equal shape, be a row [C] against [N,C],
// or a column [N,1] against [N,C].
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, double k);
Tensor add(const Tensor& a, double k);

Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor silu(const Tensor& x);  // x * sigmoid(x)

Tensor matmul(const Tensor& a, const Tensor& b);     // [N,K]x[K,M]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [N,K]x[M,K]^T -> [N,M]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x[N,Ci] w[Ci,Co] b[Co]

enum class Pad { same, valid };
// x [H,W,Ci], w [kh,kw,Ci,Co], b [Co]; stride 1 or 2.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, Pad pad);
Tensor avg_pool2d(const Tensor& x, int k);             // [H,W,C] -> [H/k,W/k,C]
Tensor upsample_nearest(const Tensor& x, int f);
Tensor upsample_bilinear(const Tensor& x, int64_t oh, int64_t ow);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-6);                  // normalizes last dim of [N,C]
Tensor softmax_rows(const Tensor& x);                  // [N,C] softmax over C

Tensor concat_rows(const std::vector<Tensor>& xs);     // along dim 0
Tensor concat_cols(const std::vector<Tensor>& xs);     // [N,Ci] -> [N,sum Ci]
Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1);
Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1);
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx);
Tensor reshape(const Tensor& x, Shape s);

Tensor sum(const Tensor& x);   // -> [1]
Tensor mean(const Tensor& x);  // -> [1]
Tensor mse(const Tensor& a, const Tensor& b);
Tensor l1(const Tensor& a, const Tensor& b);

// rows of x averaged into bins; bin < 0 drops the row. out [n_bins, C].
Tensor scatter_mean(const Tensor& x, const std::vector<int64_t>& bins, int64_t n_bins);

// grid [H,W,C], coords [N,2] in grid units (coord 0 indexes H). Zero padding
// outside the grid; contributions fade to zero beyond the border nodes.
Tensor bilinear_sample_2d(const Tensor& grid, const Tensor& coords);

// values [N*P,C] with weights [N,P] -> [N,C] (per-row weighted sum of P rows)
Tensor weighted_pool(const Tensor& values, const Tensor& weights);

Tensor normalize_rows(const Tensor& x, double eps = 1e-12);  // rows scaled to unit norm
Tensor detach(const Tensor& x);

}  // namespace omni
