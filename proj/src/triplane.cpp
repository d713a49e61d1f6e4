#include "omni/triplane.hpp"

#include <cmath>

namespace omni {

namespace {

// (row, col) of query index i on a plane, plus the pillar points along the
// plane's dropped axis.
std::vector<Vec3> query_pillar(const VolumeSpec& spec, PlaneId plane, int64_t i0, int64_t i1,
                               int n_pillar) {
  switch (plane) {
    case PlaneId::hw:
      return pillar_points(spec, i0, i1, n_pillar);
    case PlaneId::zh:
      return pillar_points_zh(spec, i0, i1, n_pillar);
    case PlaneId::wz:
      return pillar_points_wz(spec, i0, i1, n_pillar);
  }
  fail("query_pillar: bad plane");
}

}  // namespace

Refs2DQuery build_reference_points_2d(const VolumeSpec& spec,
                                      const std::vector<CameraModel>& cams, PlaneId plane,
                                      int64_t i0, int64_t i1, int n_pillar) {
  OMNI_CHECK(!cams.empty(), "build_reference_points_2d: need at least one camera");
  std::vector<Vec3> pts = query_pillar(spec, plane, i0, i1, n_pillar);
  Refs2DQuery out;
  out.per_view.resize(cams.size());
  for (size_t k = 0; k < cams.size(); ++k) {
    for (const Vec3& p : pts) {
      auto pr = project_point(cams[k], p);
      if (pr.valid) out.per_view[k].push_back({pr.u, pr.v});
    }
    if (!out.per_view[k].empty()) out.kprime++;
  }
  return out;
}

Refs3DQuery build_reference_points_3d(const VolumeSpec& spec, PlaneId plane, int64_t i0,
                                      int64_t i1, int n_points_3d, int n_pillar) {
  Refs3DQuery out;
  std::vector<Vec3> pts = query_pillar(spec, plane, i0, i1, n_pillar);
  int own = int(plane);
  for (int j = 0; j < n_points_3d; ++j)
    out.per_plane[size_t(own)].push_back({double(i0), double(i1)});
  for (int pl = 0; pl < 3; ++pl) {
    if (pl == own) continue;
    for (int j = 0; j < n_points_3d; ++j) {
      PlaneUV uv = world_to_plane_uv(spec, pts[size_t(j % n_pillar)]);
      const double* pair = pl == 0 ? uv.hw : (pl == 1 ? uv.zh : uv.wz);
      out.per_plane[size_t(pl)].push_back({pair[0], pair[1]});
    }
  }
  return out;
}

Refs2DBatch build_refs_2d_batch(const VolumeSpec& spec, const std::vector<CameraModel>& cams,
                                PlaneId plane, const DeformAttnConfig& cfg) {
  cfg.validate();
  int64_t rows = plane == PlaneId::hw ? spec.H : (plane == PlaneId::zh ? spec.Z : spec.W);
  int64_t cols = plane == PlaneId::hw ? spec.W : (plane == PlaneId::zh ? spec.H : spec.Z);
  Refs2DBatch b;
  b.K = int(cams.size());
  b.n_q = rows * cols;
  b.n_points = cfg.n_points_2d;
  b.base.assign(size_t(b.K) * b.n_q * b.n_points * 2, 0.0);
  b.view_ok.assign(size_t(b.K) * b.n_q, 0.0);
  b.inv_kprime.assign(size_t(b.n_q), 1.0);
  b.any_view.assign(size_t(b.n_q), 0.0);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) {
      int64_t qi = r * cols + c;
      Refs2DQuery rq = build_reference_points_2d(spec, cams, plane, r, c, cfg.n_pillar);
      for (int k = 0; k < b.K; ++k) {
        const auto& vl = rq.per_view[size_t(k)];
        double* dst = b.base.data() + (size_t(k) * b.n_q + qi) * b.n_points * 2;
        if (vl.empty()) continue;
        b.view_ok[size_t(k) * b.n_q + qi] = 1.0;
        for (int p = 0; p < b.n_points; ++p) {
          const auto& uv = vl[size_t(p) % vl.size()];
          dst[p * 2 + 0] = uv[1] - 0.5;  // sample row from v
          dst[p * 2 + 1] = uv[0] - 0.5;  // sample col from u
        }
      }
      if (rq.kprime > 0) {
        b.any_view[size_t(qi)] = 1.0;
        b.inv_kprime[size_t(qi)] = 1.0 / double(rq.kprime);
      }
    }
  return b;
}

Refs3DBatch build_refs_3d_batch(const VolumeSpec& spec, PlaneId plane,
                                const DeformAttnConfig& cfg) {
  cfg.validate();
  int64_t rows = plane == PlaneId::hw ? spec.H : (plane == PlaneId::zh ? spec.Z : spec.W);
  int64_t cols = plane == PlaneId::hw ? spec.W : (plane == PlaneId::zh ? spec.H : spec.Z);
  Refs3DBatch b;
  b.n_q = rows * cols;
  b.n_points = cfg.n_points_3d;
  for (auto& v : b.base) v.assign(size_t(b.n_q) * b.n_points * 2, 0.0);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) {
      int64_t qi = r * cols + c;
      Refs3DQuery rq = build_reference_points_3d(spec, plane, r, c, cfg.n_points_3d, cfg.n_pillar);
      for (int pl = 0; pl < 3; ++pl)
        for (int p = 0; p < b.n_points; ++p) {
          b.base[size_t(pl)][(size_t(qi) * b.n_points + p) * 2 + 0] =
              rq.per_plane[size_t(pl)][size_t(p)][0];
          b.base[size_t(pl)][(size_t(qi) * b.n_points + p) * 2 + 1] =
              rq.per_plane[size_t(pl)][size_t(p)][1];
        }
    }
  return b;
}

namespace {

// Zero weights, small distinct biases: sampling points start spread slightly
// around their reference instead of stacked on it (keeps the bilinear
// interpolation away from its grid-node derivative kinks at initialization).
void spread_offset_bias(Dense& d, Rng& rng) {
  for (auto& v : d.b.values()) v = rng.uniform(-0.1, 0.1);
}

}  // namespace

DeformAttnParams make_cida_params(ParameterStore& ps, Rng& rng, const std::string& name,
                                  int64_t c, int64_t c_feat, const DeformAttnConfig& cfg) {
  cfg.validate();
  OMNI_CHECK(c % cfg.n_heads == 0, "cida: C must be divisible by n_heads");
  DeformAttnParams p;
  p.offset = Dense(ps, rng, name + ".offset", c, int64_t(cfg.n_heads) * cfg.n_points_2d * 2,
                   /*zero_init=*/true);
  spread_offset_bias(p.offset, rng);
  p.weight = Dense(ps, rng, name + ".weight", c, int64_t(cfg.n_heads) * cfg.n_points_2d);
  p.value = Dense(ps, rng, name + ".value", c_feat, c);
  p.out = Dense(ps, rng, name + ".out", c, c);
  return p;
}

DeformAttnParams make_cpda_params(ParameterStore& ps, Rng& rng, const std::string& name,
                                  int64_t c, const DeformAttnConfig& cfg) {
  cfg.validate();
  OMNI_CHECK(c % cfg.n_heads == 0, "cpda: C must be divisible by n_heads");
  DeformAttnParams p;
  p.offset = Dense(ps, rng, name + ".offset", c, int64_t(cfg.n_heads) * 3 * cfg.n_points_3d * 2,
                   /*zero_init=*/true);
  spread_offset_bias(p.offset, rng);
  p.weight = Dense(ps, rng, name + ".weight", c, int64_t(cfg.n_heads) * 3 * cfg.n_points_3d);
  p.value = Dense(ps, rng, name + ".value", c, c);
  p.out = Dense(ps, rng, name + ".out", c, c);
  return p;
}

Tensor cida_branch(const Tensor& q, const Refs2DBatch& refs, const std::vector<Tensor>& feats,
                   const DeformAttnConfig& cfg, const DeformAttnParams& p) {
  const int64_t nq = q.size(0), c = q.size(1);
  const int nh = cfg.n_heads, np = cfg.n_points_2d;
  const int64_t ch = c / nh;
  OMNI_CHECK(int64_t(feats.size()) == refs.K, "cida: view count mismatch");
  OMNI_CHECK(nq == refs.n_q && np == refs.n_points, "cida: refs do not match query/config");

  Tensor off = p.offset(q);                    // [nq, nh*np*2]
  Tensor wl = p.weight(q);                     // [nq, nh*np]
  Tensor acc;
  for (int k = 0; k < refs.K; ++k) {
    const Tensor& f = feats[size_t(k)];
    OMNI_CHECK(f.shape().size() == 3, "cida: features must be [H,W,C]");
    int64_t hf = f.size(0), wf = f.size(1), cf = f.size(2);
    Tensor vm = p.value(reshape(f, {hf * wf, cf}));  // [hf*wf, c]
    std::vector<double> base_v(refs.base.begin() + (size_t(k) * nq) * np * 2,
                               refs.base.begin() + (size_t(k) * nq + nq) * np * 2);
    Tensor base = Tensor::from({nq, int64_t(np) * 2}, std::move(base_v));
    std::vector<Tensor> heads;
    for (int h = 0; h < nh; ++h) {
      Tensor oh = slice_cols(off, int64_t(h) * np * 2, int64_t(h + 1) * np * 2);
      Tensor coords = reshape(add(mul(tanh(oh), cfg.offset_scale), base), {nq * np, 2});
      Tensor grid = reshape(slice_cols(vm, h * ch, (h + 1) * ch), {hf, wf, ch});
      Tensor samp = bilinear_sample_2d(grid, coords);                 // [nq*np, ch]
      Tensor wh = softmax_rows(slice_cols(wl, int64_t(h) * np, int64_t(h + 1) * np));
      heads.push_back(weighted_pool(samp, wh));                       // [nq, ch]
    }
    Tensor da = p.out(concat_cols(heads));
    std::vector<double> ok_v(refs.view_ok.begin() + size_t(k) * nq,
                             refs.view_ok.begin() + size_t(k) * nq + nq);
    Tensor masked = mul(da, Tensor::from({nq, 1}, std::move(ok_v)));
    acc = acc.defined() ? add(acc, masked) : masked;
  }
  return mul(acc, Tensor::from({nq, 1}, refs.inv_kprime));
}

Tensor cida(const Tensor& q, const Refs2DBatch& refs, const std::vector<Tensor>& feats,
            const DeformAttnConfig& cfg, const DeformAttnParams& p) {
  Tensor branch = cida_branch(q, refs, feats, cfg, p);
  std::vector<double> keep(size_t(refs.n_q));
  for (int64_t i = 0; i < refs.n_q; ++i) keep[size_t(i)] = 1.0 - refs.any_view[size_t(i)];
  return add(mul(q, Tensor::from({refs.n_q, 1}, std::move(keep))), branch);
}

Tensor cpda(const Tensor& q, const Refs3DBatch& refs, const Triplane& memory,
            const DeformAttnConfig& cfg, const DeformAttnParams& p) {
  const int64_t nq = q.size(0), c = q.size(1);
  const int nh = cfg.n_heads, np = cfg.n_points_3d;
  const int64_t ch = c / nh;
  OMNI_CHECK(nq == refs.n_q && np == refs.n_points, "cpda: refs do not match query/config");

  Tensor off = p.offset(q);  // [nq, nh*3*np*2]
  Tensor wl = p.weight(q);   // [nq, nh*3*np]
  Tensor vm[3];
  for (int pl = 0; pl < 3; ++pl) vm[pl] = p.value(memory.plane(PlaneId(pl)));
  Tensor bases[3];
  for (int pl = 0; pl < 3; ++pl)
    bases[pl] = Tensor::from({nq, int64_t(np) * 2}, refs.base[size_t(pl)]);

  std::vector<Tensor> heads;
  for (int h = 0; h < nh; ++h) {
    Tensor wj = softmax_rows(
        slice_cols(wl, int64_t(h) * 3 * np, int64_t(h + 1) * 3 * np));  // joint over planes
    Tensor head_out;
    for (int pl = 0; pl < 3; ++pl) {
      int64_t o0 = (int64_t(h) * 3 * np + int64_t(pl) * np) * 2;
      Tensor oh = slice_cols(off, o0, o0 + int64_t(np) * 2);
      Tensor coords = reshape(add(mul(tanh(oh), cfg.offset_scale), bases[pl]), {nq * np, 2});
      int64_t rows = memory.rows(PlaneId(pl)), cols = memory.cols(PlaneId(pl));
      Tensor grid = reshape(slice_cols(vm[pl], h * ch, (h + 1) * ch), {rows, cols, ch});
      Tensor samp = bilinear_sample_2d(grid, coords);
      Tensor wpl = slice_cols(wj, int64_t(pl) * np, int64_t(pl + 1) * np);
      Tensor part = weighted_pool(samp, wpl);
      head_out = head_out.defined() ? add(head_out, part) : part;
    }
    heads.push_back(head_out);
  }
  return p.out(concat_cols(heads));
}

TriplaneEncoder::TriplaneEncoder(ParameterStore& ps, Rng& rng, const std::string& name,
                                 const VolumeSpec& spec_, const TriplaneEncoderConfig& cfg_)
    : spec(spec_), cfg(cfg_) {
  spec.validate();
  cfg.attn.validate();
  OMNI_CHECK(cfg.n_layers >= 1, "TriplaneEncoder: need at least one layer");
  const int64_t c = cfg.C;
  emb[0] = ps.add(name + ".emb_hw", {spec.H * spec.W, c},
                  init_normal(rng, 0.02, spec.H * spec.W * c));
  emb[1] = ps.add(name + ".emb_zh", {spec.Z * spec.H, c},
                  init_normal(rng, 0.02, spec.Z * spec.H * c));
  emb[2] = ps.add(name + ".emb_wz", {spec.W * spec.Z, c},
                  init_normal(rng, 0.02, spec.W * spec.Z * c));
  for (int l = 0; l < cfg.n_layers; ++l) {
    TriplaneLayerParams lp;
    lp.has_cida = (l + 1 < cfg.n_layers);  // final layer is cross-plane only
    std::string ln = name + ".layer" + std::to_string(l);
    if (lp.has_cida) {
      lp.n1 = Norm(ps, ln + ".n1", c);
      lp.cida = make_cida_params(ps, rng, ln + ".cida", c, cfg.feat_channels, cfg.attn);
    }
    lp.n2 = Norm(ps, ln + ".n2", c);
    lp.cpda = make_cpda_params(ps, rng, ln + ".cpda", c, cfg.attn);
    lp.n3 = Norm(ps, ln + ".n3", c);
    lp.ff1 = Dense(ps, rng, ln + ".ff1", c, 4 * c);
    lp.ff2 = Dense(ps, rng, ln + ".ff2", 4 * c, c);
    layers.push_back(lp);
  }
}

Triplane TriplaneEncoder::initial_planes() const {
  return Triplane{spec, cfg.C, emb[0], emb[1], emb[2]};
}

Triplane TriplaneEncoder::encode(const std::vector<Tensor>& feats,
                                 const std::vector<CameraModel>& cams,
                                 const Triplane* initial_override) const {
  Refs2DBatch r2[3];
  Refs3DBatch r3[3];
  for (int pl = 0; pl < 3; ++pl) {
    r2[pl] = build_refs_2d_batch(spec, cams, PlaneId(pl), cfg.attn);
    r3[pl] = build_refs_3d_batch(spec, PlaneId(pl), cfg.attn);
  }
  Tensor x[3];
  if (initial_override) {
    x[0] = initial_override->hw;
    x[1] = initial_override->zh;
    x[2] = initial_override->wz;
  } else {
    for (int pl = 0; pl < 3; ++pl) x[pl] = emb[pl];
  }
  for (const TriplaneLayerParams& lp : layers) {
    if (lp.has_cida)
      for (int pl = 0; pl < 3; ++pl)
        x[pl] = add(x[pl], cida_branch(lp.n1(x[pl]), r2[pl], feats, cfg.attn, lp.cida));
    Tensor y[3];
    for (int pl = 0; pl < 3; ++pl) y[pl] = lp.n2(x[pl]);
    Triplane mem{spec, cfg.C, y[0], y[1], y[2]};
    for (int pl = 0; pl < 3; ++pl)
      x[pl] = add(x[pl], cpda(y[pl], r3[pl], mem, cfg.attn, lp.cpda));
    for (int pl = 0; pl < 3; ++pl)
      x[pl] = add(x[pl], lp.ff2(silu(lp.ff1(lp.n3(x[pl])))));
  }
  return Triplane{spec, cfg.C, x[0], x[1], x[2]};
}

Tensor sample_triplane_features(const Triplane& tp, const std::vector<Vec3>& pts) {
  const int64_t n = int64_t(pts.size());
  std::vector<double> chw(size_t(n) * 2), czh(size_t(n) * 2), cwz(size_t(n) * 2);
  for (int64_t i = 0; i < n; ++i) {
    PlaneUV uv = world_to_plane_uv(tp.spec, pts[size_t(i)]);
    chw[size_t(i) * 2] = uv.hw[0];
    chw[size_t(i) * 2 + 1] = uv.hw[1];
    czh[size_t(i) * 2] = uv.zh[0];
    czh[size_t(i) * 2 + 1] = uv.zh[1];
    cwz[size_t(i) * 2] = uv.wz[0];
    cwz[size_t(i) * 2 + 1] = uv.wz[1];
  }
  Tensor fhw = bilinear_sample_2d(reshape(tp.hw, {tp.spec.H, tp.spec.W, tp.C}),
                                  Tensor::from({n, 2}, std::move(chw)));
  Tensor fzh = bilinear_sample_2d(reshape(tp.zh, {tp.spec.Z, tp.spec.H, tp.C}),
                                  Tensor::from({n, 2}, std::move(czh)));
  Tensor fwz = bilinear_sample_2d(reshape(tp.wz, {tp.spec.W, tp.spec.Z, tp.C}),
                                  Tensor::from({n, 2}, std::move(cwz)));
  return add(add(fhw, fzh), fwz);
}

Tensor sample_triplane_feature(const Triplane& tp, const Vec3& p) {
  return sample_triplane_features(tp, {p});
}

VoxelGaussianHead::VoxelGaussianHead(ParameterStore& ps, Rng& rng, const std::string& name,
                                     int64_t c, int64_t v, bool zero_last)
    : V(v) {
  l1 = Dense(ps, rng, name + ".l1", c, c);
  l2 = Dense(ps, rng, name + ".l2", c, c);
  l3 = Dense(ps, rng, name + ".l3", c, V * 14, zero_last);
}

GaussianTensors decode_voxel_gaussians(const Triplane& tp, const VoxelGaussianHead& head) {
  const VolumeSpec& s = tp.spec;
  const int64_t nvox = s.voxel_count();
  std::vector<Vec3> centers;
  centers.resize(size_t(nvox));
  std::vector<double> center_v(size_t(nvox) * 3);
  for (int64_t h = 0; h < s.H; ++h)
    for (int64_t w = 0; w < s.W; ++w)
      for (int64_t z = 0; z < s.Z; ++z) {
        int64_t i = (h * s.W + w) * s.Z + z;
        centers[size_t(i)] = voxel_to_world(s, h, w, z);
        for (int k = 0; k < 3; ++k) center_v[size_t(i) * 3 + k] = centers[size_t(i)][k];
      }
  Tensor center_t = Tensor::from({nvox, 3}, std::move(center_v));

  Tensor f = sample_triplane_features(tp, centers);
  Tensor hidden = silu(head.l2(silu(head.l1(f))));
  Tensor raw = head.l3(hidden);  // [nvox, V*14]

  Vec3 vs = s.voxel_size();
  Tensor half_vs = Tensor::from({3}, {0.5 * vs[0], 0.5 * vs[1], 0.5 * vs[2]});
  // softplus(raw + s0) with softplus(s0) = 0.5 * voxel_size per axis
  Tensor s0 = Tensor::from({3}, {std::log(std::exp(0.5 * vs[0]) - 1.0),
                                 std::log(std::exp(0.5 * vs[1]) - 1.0),
                                 std::log(std::exp(0.5 * vs[2]) - 1.0)});
  Tensor w_one = Tensor::from({4}, {1.0, 0.0, 0.0, 0.0});

  std::vector<Tensor> means, opac, scales, quats, colors;
  for (int64_t v = 0; v < head.V; ++v) {
    int64_t b = v * 14;
    Tensor delta = mul(tanh(slice_cols(raw, b, b + 3)), half_vs);
    means.push_back(add(delta, center_t));
    opac.push_back(sigmoid(slice_cols(raw, b + 3, b + 4)));
    scales.push_back(softplus(add(slice_cols(raw, b + 4, b + 7), s0)));
    quats.push_back(add(slice_cols(raw, b + 7, b + 11), w_one));
    colors.push_back(sigmoid(slice_cols(raw, b + 11, b + 14)));
  }
  GaussianTensors g;
  g.means = concat_rows(means);
  g.opacities = concat_rows(opac);
  g.scales = concat_rows(scales);
  g.quats = concat_rows(quats);
  g.colors = concat_rows(colors);
  return g;
}

GaussianSet to_gaussian_set(const GaussianTensors& g, GaussianSource tag) {
  GaussianSet out;
  const int64_t n = g.means.size(0);
  out.items.resize(size_t(n));
  const auto& mv = g.means.values();
  const auto& ov = g.opacities.values();
  const auto& sv = g.scales.values();
  const auto& qv = g.quats.values();
  const auto& cv = g.colors.values();
  for (int64_t i = 0; i < n; ++i) {
    Gaussian3D& x = out.items[size_t(i)];
    x.mean = {mv[size_t(i) * 3], mv[size_t(i) * 3 + 1], mv[size_t(i) * 3 + 2]};
    x.opacity = ov[size_t(i)];
    x.scale = {sv[size_t(i) * 3], sv[size_t(i) * 3 + 1], sv[size_t(i) * 3 + 2]};
    double qn = 0;
    for (int k = 0; k < 4; ++k) qn += qv[size_t(i) * 4 + k] * qv[size_t(i) * 4 + k];
    qn = std::sqrt(qn);
    OMNI_CHECK(qn > 1e-12, "to_gaussian_set: degenerate quaternion");
    for (int k = 0; k < 4; ++k) x.quat[size_t(k)] = qv[size_t(i) * 4 + k] / qn;
    x.color = {cv[size_t(i) * 3], cv[size_t(i) * 3 + 1], cv[size_t(i) * 3 + 2]};
    x.source = tag;
  }
  return out;
}

}  // namespace omni
