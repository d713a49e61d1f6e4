#include "omni/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace omni {

namespace {

// A projected splat ready for compositing.
struct Prep {
  double mx = 0, my = 0;          // 2D mean, pixel units
  double a = 0, b = 0, c = 0;     // 2D covariance [[a,b],[b,c]]
  double ca = 0, cb = 0, cc = 0;  // conic (inverse covariance)
  double z = 0;                   // camera-frame depth
  double alpha = 0;
  double col[3] = {0, 0, 0};
  double r_cull = 0;  // radius beyond which alpha' < skip threshold
  int idx = 0;        // index into the caller's arrays
};

// Extra per-splat state needed only by the backward pass.
struct PrepAux {
  double t[3];        // camera-frame position
  double s[3];        // scales
  double qn[4];       // normalized quaternion
  double qraw_norm;   // norm of the raw quaternion
  double sigma3[9];   // 3D covariance
};

bool project_core(const double* mean, const double* scale, const double* quat_raw, double alpha,
                  const CameraModel& cam, double reg, Prep& p, PrepAux* aux) {
  Vec3 t = mat_vec(cam.rotation, {mean[0], mean[1], mean[2]}) + cam.translation;
  if (!(t[2] > cam.near_plane)) return false;

  // Conservative 3D frustum culling: discard splats whose 3.5-sigma bounding
  // sphere misses every side plane of the view cone. The perspective
  // linearization below is invalid for splats grazing the z = 0 plane far
  // outside the frustum (the Jacobian ~1/z^2 inflates their footprint to the
  // whole image even though they are physically invisible), and the 2D
  // 3-sigma bounds test cannot catch that because it uses the inflated
  // covariance.
  {
    double smax = std::max({std::abs(scale[0]), std::abs(scale[1]), std::abs(scale[2])});
    double margin = 3.5 * smax;
    double lo_x = (0.0 - cam.cx) / cam.fx, hi_x = (cam.width - cam.cx) / cam.fx;
    double lo_y = (0.0 - cam.cy) / cam.fy, hi_y = (cam.height - cam.cy) / cam.fy;
    // Signed distance to each outward side plane through the camera center.
    if ((t[0] - hi_x * t[2]) / std::sqrt(1 + hi_x * hi_x) > margin) return false;
    if ((lo_x * t[2] - t[0]) / std::sqrt(1 + lo_x * lo_x) > margin) return false;
    if ((t[1] - hi_y * t[2]) / std::sqrt(1 + hi_y * hi_y) > margin) return false;
    if ((lo_y * t[2] - t[1]) / std::sqrt(1 + lo_y * lo_y) > margin) return false;
  }

  double qn = std::sqrt(quat_raw[0] * quat_raw[0] + quat_raw[1] * quat_raw[1] +
                        quat_raw[2] * quat_raw[2] + quat_raw[3] * quat_raw[3]);
  OMNI_CHECK(qn > 1e-12, "project_splat: degenerate quaternion");
  Quat q{quat_raw[0] / qn, quat_raw[1] / qn, quat_raw[2] / qn, quat_raw[3] / qn};
  Mat3 sigma3 = covariance_3d({scale[0], scale[1], scale[2]}, q);

  double iz = 1.0 / t[2];
  double j00 = cam.fx * iz, j02 = -cam.fx * t[0] * iz * iz;
  double j11 = cam.fy * iz, j12 = -cam.fy * t[1] * iz * iz;
  // U = J * R (2x3)
  const Mat3& r = cam.rotation;
  double u0[3], u1[3];
  for (int k = 0; k < 3; ++k) {
    u0[k] = j00 * r[0 * 3 + k] + j02 * r[2 * 3 + k];
    u1[k] = j11 * r[1 * 3 + k] + j12 * r[2 * 3 + k];
  }
  // Sigma' = U Sigma3 U^T + reg * I
  double su0[3], su1[3];
  for (int i = 0; i < 3; ++i) {
    su0[i] = sigma3[i * 3 + 0] * u0[0] + sigma3[i * 3 + 1] * u0[1] + sigma3[i * 3 + 2] * u0[2];
    su1[i] = sigma3[i * 3 + 0] * u1[0] + sigma3[i * 3 + 1] * u1[1] + sigma3[i * 3 + 2] * u1[2];
  }
  p.a = u0[0] * su0[0] + u0[1] * su0[1] + u0[2] * su0[2] + reg;
  p.b = u0[0] * su1[0] + u0[1] * su1[1] + u0[2] * su1[2];
  p.c = u1[0] * su1[0] + u1[1] * su1[1] + u1[2] * su1[2] + reg;

  double det = p.a * p.c - p.b * p.b;
  if (!(det > 0) || !(p.a > 0)) return false;
  // Non-finite projections (NaN parameters upstream) are culled rather than
  // propagated into tile binning, where they would index out of bounds.
  if (!std::isfinite(p.a) || !std::isfinite(p.b) || !std::isfinite(p.c)) return false;
  p.ca = p.c / det;
  p.cb = -p.b / det;
  p.cc = p.a / det;

  p.mx = cam.fx * t[0] * iz + cam.cx;
  p.my = cam.fy * t[1] * iz + cam.cy;
  if (!std::isfinite(p.mx) || !std::isfinite(p.my)) return false;
  p.z = t[2];
  p.alpha = alpha;

  // 3-sigma image-bounds test (closed rectangle).
  double lmax = 0.5 * (p.a + p.c) + std::sqrt(0.25 * (p.a - p.c) * (p.a - p.c) + p.b * p.b);
  double r3 = 3.0 * std::sqrt(std::max(lmax, 0.0));
  if (p.mx + r3 < 0 || p.mx - r3 > cam.width || p.my + r3 < 0 || p.my - r3 > cam.height)
    return false;
  if (aux) {
    aux->t[0] = t[0];
    aux->t[1] = t[1];
    aux->t[2] = t[2];
    for (int i = 0; i < 3; ++i) aux->s[i] = scale[i];
    for (int i = 0; i < 4; ++i) aux->qn[i] = q[i];
    aux->qraw_norm = qn;
    for (int i = 0; i < 9; ++i) aux->sigma3[i] = sigma3[i];
  }
  return true;
}

double cull_radius(const Prep& p, double skip_alpha) {
  // alpha * exp(-q/2) >= skip  =>  q <= 2 ln(alpha/skip); |d|^2 <= lmax * q.
  if (skip_alpha <= 0) return std::numeric_limits<double>::infinity();
  if (p.alpha < skip_alpha) return -1.0;  // never passes the skip test
  double lmax = 0.5 * (p.a + p.c) + std::sqrt(0.25 * (p.a - p.c) * (p.a - p.c) + p.b * p.b);
  double qmax = 2.0 * std::log(p.alpha / skip_alpha);
  return std::sqrt(std::max(lmax * qmax, 0.0)) + 1e-9;
}

struct Prepared {
  std::vector<Prep> splats;   // valid only, sorted by (z, idx)
  std::vector<PrepAux> aux;   // parallel to splats when requested
};

template <typename Getter>
Prepared prepare(int64_t n, Getter get, const CameraModel& cam, const RenderSettings& st,
                 bool want_aux) {
  Prepared out;
  out.splats.reserve(size_t(n));
  if (want_aux) out.aux.reserve(size_t(n));
  for (int64_t i = 0; i < n; ++i) {
    double mean[3], scale[3], quat[4], alpha, col[3];
    get(i, mean, scale, quat, alpha, col);
    Prep p;
    PrepAux a;
    if (!project_core(mean, scale, quat, alpha, cam, st.cov_regularizer, p, want_aux ? &a : nullptr))
      continue;
    p.idx = int(i);
    p.col[0] = col[0];
    p.col[1] = col[1];
    p.col[2] = col[2];
    p.r_cull = cull_radius(p, st.cull_tiles ? st.skip_alpha : 0.0);
    if (st.cull_tiles && p.r_cull < 0) continue;  // alpha below skip everywhere
    out.splats.push_back(p);
    if (want_aux) out.aux.push_back(a);
  }
  std::vector<size_t> order(out.splats.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t x, size_t y) {
    if (out.splats[x].z != out.splats[y].z) return out.splats[x].z < out.splats[y].z;
    return out.splats[x].idx < out.splats[y].idx;
  });
  Prepared sorted;
  sorted.splats.reserve(order.size());
  if (want_aux) sorted.aux.reserve(order.size());
  for (size_t i : order) {
    sorted.splats.push_back(out.splats[i]);
    if (want_aux) sorted.aux.push_back(out.aux[i]);
  }
  return sorted;
}

// One record per splat that actually contributed to a pixel (backward replay).
struct Contrib {
  int pos;  // position in the tile's splat list
  double dx, dy, g, ap, T;
  bool clipped;
};

// Front-to-back compositing for one pixel. `list` indexes into `sp` in global
// depth order. Writes (r,g,b,depth,alpha) and optionally records contributors.
void composite_pixel(double px, double py, const Prep* sp, const int* list, size_t n,
                     const RenderSettings& st, double out5[5], std::vector<Contrib>* rec,
                     double* T_end_out) {
  double T = 1.0;
  double rgb[3] = {0, 0, 0}, dnum = 0, wsum = 0;
  for (size_t i = 0; i < n; ++i) {
    if (st.stop_transmittance > 0 && T < st.stop_transmittance) break;
    const Prep& s = sp[list[i]];
    double dx = px - s.mx, dy = py - s.my;
    double q = s.ca * dx * dx + 2.0 * s.cb * dx * dy + s.cc * dy * dy;
    if (q < 0) continue;
    double g = std::exp(-0.5 * q);
    double ap = s.alpha * g;
    bool clipped = ap > st.alpha_clip;
    if (clipped) ap = st.alpha_clip;
    if (ap < st.skip_alpha) continue;
    double w = ap * T;
    rgb[0] += s.col[0] * w;
    rgb[1] += s.col[1] * w;
    rgb[2] += s.col[2] * w;
    dnum += s.z * w;
    wsum += w;
    if (rec) rec->push_back({int(i), dx, dy, g, ap, T, clipped});
    T *= (1.0 - ap);
  }
  out5[0] = rgb[0] + T * st.background[0];
  out5[1] = rgb[1] + T * st.background[1];
  out5[2] = rgb[2] + T * st.background[2];
  out5[3] = dnum / std::max(wsum, st.depth_denom_floor);
  out5[4] = 1.0 - T;
  if (T_end_out) *T_end_out = T;
}

struct TileGrid {
  int tiles_x = 1, tiles_y = 1, tile = 16;
  std::vector<std::vector<int>> lists;  // per tile, indices into splats, depth order
};

TileGrid build_tiles(const std::vector<Prep>& sp, const CameraModel& cam,
                     const RenderSettings& st) {
  TileGrid g;
  g.tile = std::max(1, st.tile);
  g.tiles_x = (cam.width + g.tile - 1) / g.tile;
  g.tiles_y = (cam.height + g.tile - 1) / g.tile;
  g.lists.assign(size_t(g.tiles_x) * g.tiles_y, {});
  for (int i = 0; i < int(sp.size()); ++i) {
    int tx0 = 0, tx1 = g.tiles_x - 1, ty0 = 0, ty1 = g.tiles_y - 1;
    double r = st.cull_tiles ? sp[i].r_cull : std::numeric_limits<double>::infinity();
    if (std::isfinite(r)) {
      // pixel ix has center ix+0.5; covered if |ix+0.5 - mx| <= r
      int px0 = int(std::floor(sp[i].mx - r - 0.5));
      int px1 = int(std::ceil(sp[i].mx + r - 0.5));
      int py0 = int(std::floor(sp[i].my - r - 0.5));
      int py1 = int(std::ceil(sp[i].my + r - 0.5));
      tx0 = std::max(0, px0 / g.tile);
      tx1 = std::min(g.tiles_x - 1, px1 < 0 ? -1 : px1 / g.tile);
      ty0 = std::max(0, py0 / g.tile);
      ty1 = std::min(g.tiles_y - 1, py1 < 0 ? -1 : py1 / g.tile);
      if (px0 < 0) tx0 = 0;
      if (py0 < 0) ty0 = 0;
    }
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx) g.lists[size_t(ty) * g.tiles_x + tx].push_back(i);
  }
  return g;
}

// Tiled forward over the whole image into an interleaved [H,W,5] buffer.
void forward_tiled(const std::vector<Prep>& sp, const TileGrid& grid, const CameraModel& cam,
                   const RenderSettings& st, double* out5) {
  int n_tiles = grid.tiles_x * grid.tiles_y;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(max_threads())
#endif
  for (int t = 0; t < n_tiles; ++t) {
    int tx = t % grid.tiles_x, ty = t / grid.tiles_x;
    const auto& list = grid.lists[size_t(t)];
    int x0 = tx * grid.tile, x1 = std::min(cam.width, x0 + grid.tile);
    int y0 = ty * grid.tile, y1 = std::min(cam.height, y0 + grid.tile);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x)
        composite_pixel(x + 0.5, y + 0.5, sp.data(), list.data(), list.size(), st,
                        out5 + (size_t(y) * cam.width + x) * 5, nullptr, nullptr);
  }
}

RenderOutput unpack(const std::vector<double>& out5, const CameraModel& cam) {
  RenderOutput r;
  r.width = cam.width;
  r.height = cam.height;
  size_t n = size_t(cam.width) * cam.height;
  r.rgb.resize(n * 3);
  r.depth.resize(n);
  r.alpha.resize(n);
  for (size_t i = 0; i < n; ++i) {
    r.rgb[i * 3 + 0] = out5[i * 5 + 0];
    r.rgb[i * 3 + 1] = out5[i * 5 + 1];
    r.rgb[i * 3 + 2] = out5[i * 5 + 2];
    r.depth[i] = out5[i * 5 + 3];
    r.alpha[i] = out5[i * 5 + 4];
  }
  return r;
}

Prepared prepare_set(const GaussianSet& gs, const CameraModel& cam, const RenderSettings& st) {
  return prepare(
      int64_t(gs.size()),
      [&](int64_t i, double* mean, double* scale, double* quat, double& alpha, double* col) {
        const Gaussian3D& g = gs.items[size_t(i)];
        for (int k = 0; k < 3; ++k) mean[k] = g.mean[k];
        for (int k = 0; k < 3; ++k) scale[k] = g.scale[k];
        for (int k = 0; k < 4; ++k) quat[k] = g.quat[k];
        for (int k = 0; k < 3; ++k) col[k] = g.color[k];
        alpha = g.opacity;
      },
      cam, st, /*want_aux=*/false);
}

// Maps accumulated screen-space gradients of one splat back to its 3D
// parameters. Gradients are w.r.t. (mean2d, conic a/b/c, z, alpha, color).
void backprop_splat(const Prep& p, const PrepAux& ax, const CameraModel& cam, const double acc[10],
                    double* g_mean, double* g_alpha, double* g_scale, double* g_quat,
                    double* g_col) {
  double gmx = acc[0], gmy = acc[1];
  double gca = acc[2], gcb = acc[3], gcc = acc[4];
  double galpha = acc[5];
  g_alpha[0] += galpha;
  g_col[0] += acc[6];
  g_col[1] += acc[7];
  g_col[2] += acc[8];
  double gz = acc[9];

  // conic -> 2D covariance: d(inv M) = -M^-1 dM M^-1, with the (a, 2b, c)
  // quadratic-form parameterization folded in symmetrically.
  double m00 = p.ca, m01 = p.cb, m11 = p.cc;
  double gm00 = gca, gm01 = 0.5 * gcb, gm11 = gcc;
  // GS = -M * GM * M  (all symmetric 2x2)
  double t00 = m00 * gm00 + m01 * gm01, t01 = m00 * gm01 + m01 * gm11;
  double t10 = m01 * gm00 + m11 * gm01, t11 = m01 * gm01 + m11 * gm11;
  double gs00 = -(t00 * m00 + t01 * m01);
  double gs01 = -(t00 * m01 + t01 * m11);
  double gs11 = -(t10 * m01 + t11 * m11);
  // Symmetric upstream gradient on Sigma' (regularizer passes through).
  double GSp[4] = {gs00, gs01, gs01, gs11};

  // Recompute U = J * R and pieces of the chain.
  const Mat3& r = cam.rotation;
  double x = ax.t[0], y = ax.t[1], z = ax.t[2];
  double iz = 1.0 / z;
  double j00 = cam.fx * iz, j02 = -cam.fx * x * iz * iz;
  double j11 = cam.fy * iz, j12 = -cam.fy * y * iz * iz;
  double U[6];
  for (int k = 0; k < 3; ++k) {
    U[k] = j00 * r[0 * 3 + k] + j02 * r[2 * 3 + k];
    U[3 + k] = j11 * r[1 * 3 + k] + j12 * r[2 * 3 + k];
  }
  // dSigma3 = U^T GSp U (3x3 symmetric)
  Mat3 dS3;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      dS3[i * 3 + j] = U[i] * (GSp[0] * U[j] + GSp[1] * U[3 + j]) +
                       U[3 + i] * (GSp[2] * U[j] + GSp[3] * U[3 + j]);
  // dU = 2 * GSp * U * Sigma3
  double US[6];  // U * Sigma3
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      US[i * 3 + j] = U[i * 3 + 0] * ax.sigma3[0 * 3 + j] + U[i * 3 + 1] * ax.sigma3[1 * 3 + j] +
                      U[i * 3 + 2] * ax.sigma3[2 * 3 + j];
  double dU[6];
  for (int j = 0; j < 3; ++j) {
    dU[j] = 2.0 * (GSp[0] * US[j] + GSp[1] * US[3 + j]);
    dU[3 + j] = 2.0 * (GSp[2] * US[j] + GSp[3] * US[3 + j]);
  }
  // dJ = dU * R^T; J has 4 active entries (j00, j02, j11, j12)
  double dj00 = dU[0] * r[0] + dU[1] * r[1] + dU[2] * r[2];
  double dj02 = dU[0] * r[6] + dU[1] * r[7] + dU[2] * r[8];
  double dj11 = dU[3] * r[3] + dU[4] * r[4] + dU[5] * r[5];
  double dj12 = dU[3] * r[6] + dU[4] * r[7] + dU[5] * r[8];

  // Scales and quaternion via Sigma3 = R(q) diag(s^2) R(q)^T.
  Vec3 ds{0, 0, 0};
  Quat dqn{0, 0, 0, 0};
  covariance_3d_backward({ax.s[0], ax.s[1], ax.s[2]}, {ax.qn[0], ax.qn[1], ax.qn[2], ax.qn[3]},
                         dS3, ds, dqn);
  for (int k = 0; k < 3; ++k) g_scale[k] += ds[k];
  // through normalization: dq_raw = (dqn - qn (qn . dqn)) / |q_raw|
  double dotq = dqn[0] * ax.qn[0] + dqn[1] * ax.qn[1] + dqn[2] * ax.qn[2] + dqn[3] * ax.qn[3];
  for (int k = 0; k < 4; ++k) g_quat[k] += (dqn[k] - ax.qn[k] * dotq) / ax.qraw_norm;

  // Camera-frame position gradient from J, mean2d and the depth output.
  double gt[3] = {0, 0, 0};
  gt[0] += dj02 * (-cam.fx * iz * iz);
  gt[1] += dj12 * (-cam.fy * iz * iz);
  gt[2] += dj00 * (-cam.fx * iz * iz) + dj11 * (-cam.fy * iz * iz) +
           dj02 * (2.0 * cam.fx * x * iz * iz * iz) + dj12 * (2.0 * cam.fy * y * iz * iz * iz);
  gt[0] += gmx * cam.fx * iz;
  gt[2] += gmx * (-cam.fx * x * iz * iz);
  gt[1] += gmy * cam.fy * iz;
  gt[2] += gmy * (-cam.fy * y * iz * iz);
  gt[2] += gz;
  // world mean: t = R mu + tr  =>  dmu = R^T gt
  for (int k = 0; k < 3; ++k)
    g_mean[k] += r[0 * 3 + k] * gt[0] + r[1 * 3 + k] * gt[1] + r[2 * 3 + k] * gt[2];
}

}  // namespace

SplatProjection project_splat(const Gaussian3D& g, const CameraModel& cam,
                              double cov_regularizer) {
  SplatProjection sp;
  Prep p;
  double mean[3] = {g.mean[0], g.mean[1], g.mean[2]};
  double scale[3] = {g.scale[0], g.scale[1], g.scale[2]};
  double quat[4] = {g.quat[0], g.quat[1], g.quat[2], g.quat[3]};
  sp.valid = project_core(mean, scale, quat, g.opacity, cam, cov_regularizer, p, nullptr);
  sp.mean2d[0] = p.mx;
  sp.mean2d[1] = p.my;
  sp.cov2d[0] = p.a;
  sp.cov2d[1] = p.b;
  sp.cov2d[2] = p.c;
  sp.depth = p.z;
  return sp;
}

RenderOutput render(const GaussianSet& gs, const CameraModel& cam, const RenderSettings& st) {
  cam.validate();
  Prepared prep = prepare_set(gs, cam, st);
  TileGrid grid = build_tiles(prep.splats, cam, st);
  std::vector<double> out5(size_t(cam.width) * cam.height * 5);
  forward_tiled(prep.splats, grid, cam, st, out5.data());
  return unpack(out5, cam);
}

RenderOutput brute_force_render(const GaussianSet& gs, const CameraModel& cam,
                                const RenderSettings& settings) {
  cam.validate();
  RenderSettings st = settings;
  st.stop_transmittance = 0;  // no early termination
  st.cull_tiles = false;
  Prepared prep = prepare_set(gs, cam, st);
  std::vector<int> all(prep.splats.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = int(i);
  std::vector<double> out5(size_t(cam.width) * cam.height * 5);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x)
      composite_pixel(x + 0.5, y + 0.5, prep.splats.data(), all.data(), all.size(), st,
                      out5.data() + (size_t(y) * cam.width + x) * 5, nullptr, nullptr);
  return unpack(out5, cam);
}

Tensor render_diff(const GaussianTensors& gt, const CameraModel& cam, const RenderSettings& st) {
  cam.validate();
  const int64_t n = gt.means.size(0);
  OMNI_CHECK(gt.means.shape() == Shape({n, 3}), "render_diff: means must be [N,3]");
  OMNI_CHECK(gt.opacities.shape() == Shape({n, 1}), "render_diff: opacities must be [N,1]");
  OMNI_CHECK(gt.scales.shape() == Shape({n, 3}), "render_diff: scales must be [N,3]");
  OMNI_CHECK(gt.quats.shape() == Shape({n, 4}), "render_diff: quats must be [N,4]");
  OMNI_CHECK(gt.colors.shape() == Shape({n, 3}), "render_diff: colors must be [N,3]");

  const std::vector<double>& mv = gt.means.values();
  const std::vector<double>& ov = gt.opacities.values();
  const std::vector<double>& sv = gt.scales.values();
  const std::vector<double>& qv = gt.quats.values();
  const std::vector<double>& cv = gt.colors.values();

  auto prep = std::make_shared<Prepared>(prepare(
      n,
      [&](int64_t i, double* mean, double* scale, double* quat, double& alpha, double* col) {
        for (int k = 0; k < 3; ++k) mean[k] = mv[size_t(i) * 3 + k];
        for (int k = 0; k < 3; ++k) scale[k] = sv[size_t(i) * 3 + k];
        for (int k = 0; k < 4; ++k) quat[k] = qv[size_t(i) * 4 + k];
        for (int k = 0; k < 3; ++k) col[k] = cv[size_t(i) * 3 + k];
        alpha = ov[size_t(i)];
      },
      cam, st, /*want_aux=*/true));
  auto grid = std::make_shared<TileGrid>(build_tiles(prep->splats, cam, st));

  std::vector<double> out5(size_t(cam.width) * cam.height * 5);
  forward_tiled(prep->splats, *grid, cam, st, out5.data());
  if (default_precision() == Precision::f32)
    for (double& v : out5) v = double(float(v));
  if (checked_mode())
    for (double v : out5)
      OMNI_CHECK(std::isfinite(v), "render_diff: non-finite output");

  auto node = std::make_shared<TensorNode>();
  node->shape = {cam.height, cam.width, 5};
  node->v = std::move(out5);
  std::vector<std::shared_ptr<TensorNode>> parents = {gt.means.node(), gt.opacities.node(),
                                                      gt.scales.node(), gt.quats.node(),
                                                      gt.colors.node()};
  for (const auto& p : parents) node->requires_grad = node->requires_grad || p->requires_grad;
  node->parents = parents;
  if (!node->requires_grad) return Tensor(node);

  TensorNode* out_raw = node.get();
  RenderSettings stc = st;
  CameraModel camc = cam;
  node->backward_fn = [prep, grid, parents, out_raw, stc, camc]() {
    const std::vector<double>& go = out_raw->grad_buf();
    const int W = camc.width, H = camc.height;
    const auto& sp = prep->splats;
    int n_tiles = grid->tiles_x * grid->tiles_y;
    // Per-tile local accumulators: 10 doubles per splat in the tile's list
    // (gmx, gmy, gca, gcb, gcc, galpha, gcol rgb, gz).
    std::vector<std::vector<double>> tile_acc;
    tile_acc.resize(size_t(n_tiles));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(max_threads())
#endif
    for (int t = 0; t < n_tiles; ++t) {
      const auto& list = grid->lists[size_t(t)];
      if (list.empty()) continue;
      auto& acc = tile_acc[size_t(t)];
      acc.assign(list.size() * 10, 0.0);
      int tx = t % grid->tiles_x, ty = t / grid->tiles_x;
      int x0 = tx * grid->tile, x1 = std::min(W, x0 + grid->tile);
      int y0 = ty * grid->tile, y1 = std::min(H, y0 + grid->tile);
      std::vector<Contrib> rec;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          rec.clear();
          double o5[5], T_end = 1.0;
          composite_pixel(x + 0.5, y + 0.5, sp.data(), list.data(), list.size(), stc, o5, &rec,
                          &T_end);
          const double* g = go.data() + (size_t(y) * W + x) * 5;
          double gr[3] = {g[0], g[1], g[2]};
          double gD = g[3], gA = g[4];
          if (gr[0] == 0 && gr[1] == 0 && gr[2] == 0 && gD == 0 && gA == 0) continue;
          // recover wsum/dnum from the records
          double wsum = 0, dnum = 0;
          for (const Contrib& c : rec) {
            double w = c.ap * c.T;
            wsum += w;
            dnum += sp[list[size_t(c.pos)]].z * w;
          }
          double denom = std::max(wsum, stc.depth_denom_floor);
          double gdnum = gD / denom;
          double gwsum = (wsum > stc.depth_denom_floor) ? -gD * dnum / (denom * denom) : 0.0;
          // suffix accumulators, bg folded into the color suffix
          double S[3] = {T_end * stc.background[0], T_end * stc.background[1],
                         T_end * stc.background[2]};
          double SD = 0, SW = 0;
          for (size_t ri = rec.size(); ri-- > 0;) {
            const Contrib& c = rec[ri];
            const Prep& s = sp[list[size_t(c.pos)]];
            double w = c.ap * c.T;
            double one = 1.0 - c.ap;
            double dap = gA * T_end / one;
            for (int k = 0; k < 3; ++k) dap += gr[k] * (s.col[k] * c.T - S[k] / one);
            dap += gdnum * (s.z * c.T - SD / one);
            dap += gwsum * (c.T - SW / one);
            double* a = acc.data() + size_t(c.pos) * 10;
            for (int k = 0; k < 3; ++k) a[6 + k] += gr[k] * w;
            a[9] += gdnum * w;
            S[0] += s.col[0] * w;
            S[1] += s.col[1] * w;
            S[2] += s.col[2] * w;
            SD += s.z * w;
            SW += w;
            if (c.clipped) continue;  // flat region of the alpha ceiling
            double galpha = dap * c.g;
            double gG = dap * s.alpha;
            double gq = -0.5 * c.g * gG;
            double gdx = gq * (2.0 * s.ca * c.dx + 2.0 * s.cb * c.dy);
            double gdy = gq * (2.0 * s.cb * c.dx + 2.0 * s.cc * c.dy);
            a[0] += -gdx;
            a[1] += -gdy;
            a[2] += gq * c.dx * c.dx;
            a[3] += gq * 2.0 * c.dx * c.dy;
            a[4] += gq * c.dy * c.dy;
            a[5] += galpha;
          }
        }
    }
    // Fixed-order reduction across tiles into per-splat totals.
    std::vector<double> total(sp.size() * 10, 0.0);
    for (int t = 0; t < n_tiles; ++t) {
      const auto& list = grid->lists[size_t(t)];
      const auto& acc = tile_acc[size_t(t)];
      if (acc.empty()) continue;
      for (size_t j = 0; j < list.size(); ++j)
        for (int k = 0; k < 10; ++k) total[size_t(list[j]) * 10 + k] += acc[j * 10 + k];
    }
    auto& gm = parents[0]->grad_buf();
    auto& ga = parents[1]->grad_buf();
    auto& gsc = parents[2]->grad_buf();
    auto& gq = parents[3]->grad_buf();
    auto& gc = parents[4]->grad_buf();
    for (size_t i = 0; i < sp.size(); ++i) {
      const double* acc = total.data() + i * 10;
      bool any = false;
      for (int k = 0; k < 10; ++k) any = any || acc[k] != 0;
      if (!any) continue;
      size_t idx = size_t(sp[i].idx);
      backprop_splat(sp[i], prep->aux[i], camc, acc, gm.data() + idx * 3, ga.data() + idx,
                     gsc.data() + idx * 3, gq.data() + idx * 4, gc.data() + idx * 3);
    }
  };
  return Tensor(node);
}

}  // namespace omni
