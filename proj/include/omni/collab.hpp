#pragma once

#include "omni/renderer.hpp"
#include "omni/triplane.hpp"

namespace omni {

struct LossWeights {
  double lambda1 = 0.05;    // full-render perceptual
  double lambda2 = 1.0;     // volume composite
  double lambda_v1 = 0.05;  // volume perceptual
  double lambda_v2 = 0.01;  // volume depth

  void validate() const {
    OMNI_CHECK(lambda1 >= 0 && lambda2 >= 0 && lambda_v1 >= 0 && lambda_v2 >= 0,
               "LossWeights: weights must be >= 0");
  }
};

// Per-view binary masks at input resolution, plus the pixel-branch depth
// renders that produced them. Everything here is constant in the backward
// pass: masks depend only on the pixel Gaussians' current values.
struct VolumeMaskSet {
  int width = 0, height = 0;
  std::vector<std::vector<double>> mask;   // K x h*w, values in {0,1}
  std::vector<std::vector<double>> depth;  // K x h*w, camera-z depth render
};

// Bins in-volume pixel Gaussians into the nearest cell of each plane,
// averages their features per cell, applies the linear layer and adds the
// result onto the plane queries. Gradients flow into the features; the
// binning itself is a discrete decision over the current positions.
// With no in-volume Gaussian the planes are returned untouched.
Triplane fuse_pixel_to_triplane(const Tensor& features, const std::vector<Vec3>& positions,
                                const Triplane& planes, const Dense& lin);

VolumeMaskSet compute_volume_masks(const GaussianSet& gp, const std::vector<CameraModel>& cams,
                                   const VolumeSpec& spec, const RenderSettings& settings = {});

// Mean squared error over masked rows only (normalized by masked count, not
// image size). All-zero mask returns 0 and logs a warning.
Tensor masked_photometric_loss(const Tensor& rendered, const Tensor& target,
                               const std::vector<double>& mask);

// Masked mean absolute depth difference. The pixel-branch depth dp is a
// constant target: the gradient flows only into dv.
Tensor depth_alignment_loss(const Tensor& dv, const Tensor& dp, const std::vector<double>& mask);

struct LossReport {
  double full_mse = 0, full_lpips = 0;
  double v_mse = 0, v_lpips = 0, v_dpt = 0;
  double v_total = 0;  // v_mse + lambda_v1 * v_lpips + lambda_v2 * v_dpt
  double total = 0;    // full_mse + lambda1 * full_lpips + lambda2 * v_total
  std::vector<double> masked_fraction;  // per input view
  Tensor loss;                          // differentiable scalar, equals total
};

struct LossInputs {
  // Novel-view renders of the full set G with their targets; rows are
  // pixels, [R,3].
  std::vector<Tensor> full_rgb;
  std::vector<Tensor> full_target;
  // Input-view renders of the volume branch, their targets and depths
  // [R,1], plus the pixel-branch depths used as alignment targets.
  std::vector<Tensor> vol_rgb;
  std::vector<Tensor> vol_target;
  std::vector<Tensor> vol_depth;
  std::vector<Tensor> gp_depth;
  int width = 0, height = 0;  // view resolution, used by the lpips hook
};

// Composes the decomposed objective; every component is averaged over its
// views. Perceptual terms come from the lpips hook and are zero while the
// hook is unset.
LossReport total_loss(const LossInputs& in, const VolumeMaskSet& masks, const LossWeights& w);

}  // namespace omni
