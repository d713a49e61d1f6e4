#pragma once

#include "omni/gaussians.hpp"
#include "omni/tensor.hpp"

namespace omni {

struct RenderSettings {
  double skip_alpha = 1.0 / 255.0;  // per-splat alpha below this is skipped
  double alpha_clip = 0.999;        // per-splat alpha ceiling
  double stop_transmittance = 1e-4; // early termination; <= 0 disables
  double cov_regularizer = 0.3;     // px^2 added to the 2D covariance diagonal
  int tile = 16;
  bool cull_tiles = true;           // conservative per-splat tile culling
  double depth_denom_floor = 1e-8;
  Vec3 background{0, 0, 0};

  RenderSettings with_thresholds_disabled() const {
    RenderSettings s = *this;
    s.skip_alpha = 0;
    s.stop_transmittance = 0;
    s.cull_tiles = false;
    return s;
  }
};

struct SplatProjection {
  double mean2d[2] = {0, 0};
  double cov2d[3] = {0, 0, 0};  // (a, b, c) of [[a,b],[b,c]], regularizer included
  double depth = 0;             // camera-frame z
  bool valid = false;           // in front of near plane and 3-sigma box hits the image
};

SplatProjection project_splat(const Gaussian3D& g, const CameraModel& cam,
                              double cov_regularizer = 0.3);

struct RenderOutput {
  int width = 0, height = 0;
  std::vector<double> rgb;    // h*w*3
  std::vector<double> depth;  // h*w, alpha-weighted expected z
  std::vector<double> alpha;  // h*w
};

// Tiled front-to-back compositor (parallel across tiles).
RenderOutput render(const GaussianSet& gs, const CameraModel& cam,
                    const RenderSettings& settings = {});

// Serial per-pixel loop over all depth-sorted splats; no tiling, no early
// stop, no culling beyond projection validity. Reference for the tiled path.
RenderOutput brute_force_render(const GaussianSet& gs, const CameraModel& cam,
                                const RenderSettings& settings = {});

// Differentiable splat parameters, one row per Gaussian.
struct GaussianTensors {
  Tensor means;      // [N,3]
  Tensor opacities;  // [N,1]
  Tensor scales;     // [N,3]
  Tensor quats;      // [N,4] raw; normalized internally
  Tensor colors;     // [N,3]
};

// Renders through the tape; output [H,W,5] = (r,g,b,depth,alpha) with an
// analytic backward into all five parameter tensors.
Tensor render_diff(const GaussianTensors& gt, const CameraModel& cam,
                   const RenderSettings& settings = {});

}  // namespace omni
