#pragma once

#include "omni/gaussians.hpp"
#include "omni/nn.hpp"
#include "omni/renderer.hpp"

namespace omni {

struct DeformAttnConfig {
  int n_heads = 4;
  int n_points_2d = 4;  // sampling points per view (cross-image attention)
  int n_points_3d = 4;  // sampling points per plane (cross-plane attention)
  int n_pillar = 4;     // pillar points along the dropped axis
  double offset_scale = 4.0;  // tanh bound on learned offsets, grid units

  void validate() const {
    OMNI_CHECK(n_heads >= 1 && n_points_2d >= 1 && n_points_3d >= 1 && n_pillar >= 1,
               "DeformAttnConfig: counts must be >= 1");
  }
};

enum class PlaneId { hw = 0, zh = 1, wz = 2 };

// Plane grids as [rows*cols, C] tensors; rows/cols per plane:
// hw: H x W, zh: Z x H, wz: W x Z.
struct Triplane {
  VolumeSpec spec;
  int64_t C = 0;
  Tensor hw, zh, wz;

  const Tensor& plane(PlaneId p) const { return p == PlaneId::hw ? hw : (p == PlaneId::zh ? zh : wz); }
  int64_t rows(PlaneId p) const { return p == PlaneId::hw ? spec.H : (p == PlaneId::zh ? spec.Z : spec.W); }
  int64_t cols(PlaneId p) const { return p == PlaneId::hw ? spec.W : (p == PlaneId::zh ? spec.H : spec.Z); }
};

// ---- reference points ----

// Per-query cross-image references: valid pillar projections per view, in
// pixel coordinates of that view.
struct Refs2DQuery {
  std::vector<std::vector<std::array<double, 2>>> per_view;  // (u,v), valid only
  int kprime = 0;
};
Refs2DQuery build_reference_points_2d(const VolumeSpec& spec,
                                      const std::vector<CameraModel>& cams, PlaneId plane,
                                      int64_t i0, int64_t i1, int n_pillar);

// Per-query cross-plane references in plane grid coordinates (row, col),
// indexed by target plane (hw, zh, wz). n_points_3d entries per plane.
struct Refs3DQuery {
  std::array<std::vector<std::array<double, 2>>, 3> per_plane;
};
Refs3DQuery build_reference_points_3d(const VolumeSpec& spec, PlaneId plane, int64_t i0,
                                      int64_t i1, int n_points_3d, int n_pillar);

// Batched references for one whole plane of queries.
struct Refs2DBatch {
  int K = 0;
  int64_t n_q = 0;
  int n_points = 0;
  std::vector<double> base;        // K*n_q*n_points*2 sample coords (row, col)
  std::vector<double> view_ok;     // K*n_q, 1/0: view correlated with query
  std::vector<double> inv_kprime;  // n_q
  std::vector<double> any_view;    // n_q, 1/0: K' > 0
};
Refs2DBatch build_refs_2d_batch(const VolumeSpec& spec, const std::vector<CameraModel>& cams,
                                PlaneId plane, const DeformAttnConfig& cfg);

struct Refs3DBatch {
  int64_t n_q = 0;
  int n_points = 0;                        // per target plane
  std::array<std::vector<double>, 3> base; // n_q*n_points*2 grid coords (row, col)
};
Refs3DBatch build_refs_3d_batch(const VolumeSpec& spec, PlaneId plane,
                                const DeformAttnConfig& cfg);

// ---- deformable attention ----

struct DeformAttnParams {
  Dense offset;  // C -> n_heads*P*2, zero-initialized
  Dense weight;  // C -> n_heads*P_total
  Dense value;   // C_in -> C
  Dense out;     // C -> C
};

DeformAttnParams make_cida_params(ParameterStore& ps, Rng& rng, const std::string& name,
                                  int64_t c, int64_t c_feat, const DeformAttnConfig& cfg);
DeformAttnParams make_cpda_params(ParameterStore& ps, Rng& rng, const std::string& name,
                                  int64_t c, const DeformAttnConfig& cfg);

// Attention branch only: per-view deformable attention averaged over the
// correlated views, zero rows where no view is correlated.
Tensor cida_branch(const Tensor& q, const Refs2DBatch& refs, const std::vector<Tensor>& feats,
                   const DeformAttnConfig& cfg, const DeformAttnParams& p);
// Full operation: branch result where K' > 0, the query itself where K' = 0.
Tensor cida(const Tensor& q, const Refs2DBatch& refs, const std::vector<Tensor>& feats,
            const DeformAttnConfig& cfg, const DeformAttnParams& p);

// Cross-plane deformable attention; softmax spans the three planes jointly.
Tensor cpda(const Tensor& q, const Refs3DBatch& refs, const Triplane& memory,
            const DeformAttnConfig& cfg, const DeformAttnParams& p);

// ---- encoder ----

struct TriplaneLayerParams {
  bool has_cida = true;
  Norm n1, n2, n3;
  DeformAttnParams cida, cpda;
  Dense ff1, ff2;
};

struct TriplaneEncoderConfig {
  int64_t C = 64;
  int n_layers = 3;  // last layer is cross-plane only
  int64_t feat_channels = 64;
  DeformAttnConfig attn;
};

struct TriplaneEncoder {
  VolumeSpec spec;
  TriplaneEncoderConfig cfg;
  Tensor emb[3];
  std::vector<TriplaneLayerParams> layers;

  TriplaneEncoder(ParameterStore& ps, Rng& rng, const std::string& name, const VolumeSpec& spec,
                  const TriplaneEncoderConfig& cfg);

  // feats: K feature maps [Hf,Wf,Cf]; cams scaled to the feature resolution.
  // initial_override (optional): starting plane tensors instead of the
  // learned embeddings (used by pixel-to-volume fusion).
  Triplane encode(const std::vector<Tensor>& feats, const std::vector<CameraModel>& cams,
                  const Triplane* initial_override = nullptr) const;

  Triplane initial_planes() const;
};

// ---- decoding ----

Tensor sample_triplane_features(const Triplane& tp, const std::vector<Vec3>& pts);  // [N,C]
Tensor sample_triplane_feature(const Triplane& tp, const Vec3& p);                  // [1,C]

struct VoxelGaussianHead {
  int64_t V = 3;
  Dense l1, l2, l3;
  VoxelGaussianHead() = default;
  VoxelGaussianHead(ParameterStore& ps, Rng& rng, const std::string& name, int64_t c, int64_t V,
                    bool zero_last = false);
};

// One Gaussian row per (v, voxel), v-major; means = voxel center + bounded
// offset. Differentiable through the triplane.
GaussianTensors decode_voxel_gaussians(const Triplane& tp, const VoxelGaussianHead& head);

// Snapshot of the current values as renderable Gaussians (detached).
GaussianSet to_gaussian_set(const GaussianTensors& g, GaussianSource tag);

}  // namespace omni
