#include "omni/collab.hpp"

#include <cmath>
#include <cstdio>

#include "omni/metrics.hpp"

namespace omni {

namespace {

int64_t nearest_cell(double coord, int64_t n) {
  return std::clamp<int64_t>(std::llround(coord), 0, n - 1);
}

double finalize_scalar(double v, const char* who) {
  if (default_precision() == Precision::f32) v = double(float(v));
  if (checked_mode()) OMNI_CHECK(std::isfinite(v), std::string(who) + ": non-finite value");
  return v;
}

int64_t masked_count(const std::vector<double>& mask) {
  int64_t c = 0;
  for (double m : mask) {
    OMNI_CHECK(m == 0.0 || m == 1.0, "mask values must be 0 or 1");
    if (m != 0.0) ++c;
  }
  return c;
}

Tensor average_over_views(const std::vector<Tensor>& terms) {
  Tensor acc = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return terms.size() == 1 ? acc : mul(acc, 1.0 / double(terms.size()));
}

}  // namespace

Triplane fuse_pixel_to_triplane(const Tensor& features, const std::vector<Vec3>& positions,
                                const Triplane& planes, const Dense& lin) {
  OMNI_CHECK(features.shape().size() == 2, "fuse_pixel_to_triplane: features must be [N,C]");
  OMNI_CHECK(size_t(features.shape()[0]) == positions.size(),
             "fuse_pixel_to_triplane: one position per feature row");
  OMNI_CHECK(lin.w.shape()[0] == features.shape()[1] && lin.w.shape()[1] == planes.C,
             "fuse_pixel_to_triplane: linear layer shape mismatch");

  const int64_t n = features.shape()[0];
  std::vector<bool> inside(size_t(n), false);
  bool any = false;
  for (int64_t i = 0; i < n; ++i) {
    inside[size_t(i)] = world_in_volume(planes.spec, positions[size_t(i)]);
    any = any || inside[size_t(i)];
  }
  if (!any) return planes;

  Triplane out = planes;
  for (PlaneId pid : {PlaneId::hw, PlaneId::zh, PlaneId::wz}) {
    int64_t rows = planes.rows(pid), cols = planes.cols(pid);
    std::vector<int64_t> bins(size_t(n), -1);
    std::vector<double> occ;
    occ.assign(size_t(rows * cols), 0.0);
    for (int64_t i = 0; i < n; ++i) {
      if (!inside[size_t(i)]) continue;
      PlaneUV uv = world_to_plane_uv(planes.spec, positions[size_t(i)]);
      const double* c = pid == PlaneId::hw ? uv.hw : (pid == PlaneId::zh ? uv.zh : uv.wz);
      int64_t cell = nearest_cell(c[0], rows) * cols + nearest_cell(c[1], cols);
      bins[size_t(i)] = cell;
      occ[size_t(cell)] = 1.0;
    }
    Tensor update = mul(lin(scatter_mean(features, bins, rows * cols)),
                        Tensor::from({rows * cols, 1}, occ));
    Tensor fused = add(planes.plane(pid), update);
    (pid == PlaneId::hw ? out.hw : pid == PlaneId::zh ? out.zh : out.wz) = fused;
  }
  return out;
}

VolumeMaskSet compute_volume_masks(const GaussianSet& gp, const std::vector<CameraModel>& cams,
                                   const VolumeSpec& spec, const RenderSettings& settings) {
  VolumeMaskSet out;
  OMNI_CHECK(!cams.empty(), "compute_volume_masks: no views");
  out.width = cams[0].width;
  out.height = cams[0].height;
  for (const auto& cam : cams) {
    OMNI_CHECK(cam.width == out.width && cam.height == out.height,
               "compute_volume_masks: view sizes differ");
    RenderOutput r = render(gp, cam, settings);
    std::vector<double> mask(r.depth.size(), 0.0);
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x) {
        size_t i = size_t(y) * cam.width + x;
        // No coverage, or so little that the rendered depth is dominated by
        // the denominator floor and carries no geometric information.
        if (r.alpha[i] <= settings.depth_denom_floor) continue;
        double d = ray_depth_from_z(cam, x + 0.5, y + 0.5, r.depth[i]);
        if (d > 0 && world_in_volume(spec, unproject_pixel(cam, x + 0.5, y + 0.5, d)))
          mask[i] = 1.0;
      }
    out.mask.push_back(std::move(mask));
    out.depth.push_back(std::move(r.depth));
  }
  return out;
}

Tensor masked_photometric_loss(const Tensor& rendered, const Tensor& target,
                               const std::vector<double>& mask) {
  OMNI_CHECK(rendered.shape() == target.shape() && rendered.shape().size() == 2,
             "masked_photometric_loss: shapes must match, [N,C]");
  const int64_t n = rendered.shape()[0], c = rendered.shape()[1];
  OMNI_CHECK(int64_t(mask.size()) == n, "masked_photometric_loss: mask length mismatch");
  const int64_t count = masked_count(mask);
  if (count == 0) {
    std::fprintf(stderr, "warning: masked_photometric_loss over an all-zero mask returns 0\n");
    return Tensor::scalar(0.0);
  }

  // Mirrors the arithmetic of mse() so an all-ones mask reproduces it
  // bit-for-bit.
  const double* a = rendered.values().data();
  const double* b = target.values().data();
  double s = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) {
      double d = a[i * c + j] - b[i * c + j];
      s += mask[size_t(i)] * (d * d);
    }
  const double denom = double(count * c);

  auto node = std::make_shared<TensorNode>();
  node->shape = {1};
  node->v = {finalize_scalar(s / denom, "masked_photometric_loss")};
  node->parents = {rendered.node(), target.node()};
  node->requires_grad = rendered.requires_grad() || target.requires_grad();
  if (node->requires_grad) {
    auto an = rendered.node(), bn = target.node();
    TensorNode* raw = node.get();
    std::vector<double> m = mask;
    node->backward_fn = [an, bn, raw, m, n, c, denom]() {
      double k = 2.0 * raw->grad_buf()[0] / denom;
      for (int64_t i = 0; i < n; ++i) {
        if (m[size_t(i)] == 0.0) continue;
        for (int64_t j = 0; j < c; ++j) {
          double d = an->v[size_t(i * c + j)] - bn->v[size_t(i * c + j)];
          if (an->requires_grad) an->grad_buf()[size_t(i * c + j)] += k * d;
          if (bn->requires_grad) bn->grad_buf()[size_t(i * c + j)] -= k * d;
        }
      }
    };
  }
  return Tensor(node);
}

Tensor depth_alignment_loss(const Tensor& dv, const Tensor& dp, const std::vector<double>& mask) {
  OMNI_CHECK(dv.shape() == dp.shape() && dv.shape().size() == 2,
             "depth_alignment_loss: shapes must match, [N,C]");
  const int64_t n = dv.shape()[0], c = dv.shape()[1];
  OMNI_CHECK(int64_t(mask.size()) == n, "depth_alignment_loss: mask length mismatch");
  const int64_t count = masked_count(mask);
  if (count == 0) {
    std::fprintf(stderr, "warning: depth_alignment_loss over an all-zero mask returns 0\n");
    return Tensor::scalar(0.0);
  }

  const double* a = dv.values().data();
  const double* b = dp.values().data();
  double s = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j)
      s += mask[size_t(i)] * std::abs(a[i * c + j] - b[i * c + j]);
  const double denom = double(count * c);

  auto node = std::make_shared<TensorNode>();
  node->shape = {1};
  node->v = {finalize_scalar(s / denom, "depth_alignment_loss")};
  // dp is a constant target: it is not a parent, so no gradient can reach it.
  node->parents = {dv.node()};
  node->requires_grad = dv.requires_grad();
  if (node->requires_grad) {
    auto an = dv.node();
    auto bn = dp.node();  // values only
    TensorNode* raw = node.get();
    std::vector<double> m = mask;
    node->backward_fn = [an, bn, raw, m, n, c, denom]() {
      double k = raw->grad_buf()[0] / denom;
      auto& g = an->grad_buf();
      for (int64_t i = 0; i < n; ++i) {
        if (m[size_t(i)] == 0.0) continue;
        for (int64_t j = 0; j < c; ++j) {
          double d = an->v[size_t(i * c + j)] - bn->v[size_t(i * c + j)];
          g[size_t(i * c + j)] += d > 0 ? k : (d < 0 ? -k : 0.0);
        }
      }
    };
  }
  return Tensor(node);
}

LossReport total_loss(const LossInputs& in, const VolumeMaskSet& masks, const LossWeights& w) {
  w.validate();
  OMNI_CHECK(!in.full_rgb.empty() && in.full_rgb.size() == in.full_target.size(),
             "total_loss: need at least one novel view with targets");
  // kv may be zero (pixel-only ablation): every volume term is then
  // identically zero.
  const size_t kv = in.vol_rgb.size();
  OMNI_CHECK(in.vol_target.size() == kv && in.vol_depth.size() == kv &&
                 in.gp_depth.size() == kv && masks.mask.size() == kv,
             "total_loss: inconsistent volume-view inputs");

  LossReport rep;

  std::vector<Tensor> full_terms;
  for (size_t i = 0; i < in.full_rgb.size(); ++i)
    full_terms.push_back(mse(in.full_rgb[i], in.full_target[i]));
  Tensor full_mse = average_over_views(full_terms);
  rep.full_mse = full_mse.item();

  const LpipsFn& hook = lpips_hook();
  if (hook) {
    double acc = 0;
    for (size_t i = 0; i < in.full_rgb.size(); ++i)
      acc += hook(in.full_rgb[i].values(), in.full_target[i].values(), in.width, in.height, 3);
    rep.full_lpips = acc / double(in.full_rgb.size());
  }

  std::vector<Tensor> v_mse_terms, v_dpt_terms;
  double v_lpips_acc = 0;
  for (size_t i = 0; i < kv; ++i) {
    const auto& m = masks.mask[i];
    rep.masked_fraction.push_back(m.empty() ? 0.0
                                            : double(masked_count(m)) / double(m.size()));
    v_mse_terms.push_back(masked_photometric_loss(in.vol_rgb[i], in.vol_target[i], m));
    v_dpt_terms.push_back(depth_alignment_loss(in.vol_depth[i], in.gp_depth[i], m));
    if (hook) {
      std::vector<double> a = in.vol_rgb[i].values(), b = in.vol_target[i].values();
      for (size_t px = 0; px < m.size(); ++px)
        for (int ch = 0; ch < 3; ++ch) {
          a[px * 3 + size_t(ch)] *= m[px];
          b[px * 3 + size_t(ch)] *= m[px];
        }
      v_lpips_acc += hook(a, b, in.width, in.height, 3);
    }
  }
  Tensor v_mse_t = kv == 0 ? Tensor::scalar(0.0) : average_over_views(v_mse_terms);
  Tensor v_dpt_t = kv == 0 ? Tensor::scalar(0.0) : average_over_views(v_dpt_terms);
  rep.v_mse = v_mse_t.item();
  rep.v_dpt = v_dpt_t.item();
  if (hook && kv > 0) rep.v_lpips = v_lpips_acc / double(kv);

  Tensor lv = add(add(v_mse_t, mul(Tensor::scalar(rep.v_lpips), w.lambda_v1)),
                  mul(v_dpt_t, w.lambda_v2));
  rep.loss = add(add(full_mse, mul(Tensor::scalar(rep.full_lpips), w.lambda1)),
                 mul(lv, w.lambda2));
  rep.v_total = lv.item();
  rep.total = rep.loss.item();
  return rep;
}

}  // namespace omni
