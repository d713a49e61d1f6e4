#pragma once

#include <string>

#include "omni/geometry.hpp"

namespace omni {

using Quat = std::array<double, 4>;  // (w, x, y, z)

enum class GaussianSource : uint8_t { volume = 0, pixel = 1 };

struct Gaussian3D {
  Vec3 mean{0, 0, 0};
  double opacity = 0.5;       // (0,1)
  Vec3 scale{1, 1, 1};        // per-axis, meters, > 0
  Quat quat{1, 0, 0, 0};      // unit
  Vec3 color{0.5, 0.5, 0.5};  // [0,1]
  GaussianSource source = GaussianSource::volume;
};

struct GaussianSet {
  std::vector<Gaussian3D> items;
  size_t size() const { return items.size(); }
};

GaussianSet merge_gaussians(const GaussianSet& gv, const GaussianSet& gp);

Mat3 rotation_from_quat(const Quat& q);  // expects unit q

// Sigma = R diag(s^2) R^T
Mat3 covariance_3d(const Vec3& s, const Quat& q);

// Analytic backward of covariance_3d: given dL/dSigma (full 3x3), accumulates
// dL/ds and dL/dq for a unit quaternion input.
void covariance_3d_backward(const Vec3& s, const Quat& q, const Mat3& d_sigma, Vec3& d_s,
                            Quat& d_q);

// Partial of the rotation matrix w.r.t. unit-quaternion component k (0..3).
Mat3 rotation_quat_partial(const Quat& q, int k);

// Binary little-endian PLY in the common splat-viewer layout: position,
// f_dc_0..2 (degree-0 SH from RGB), opacity logit, log-scales, quaternion.
void export_ply(const GaussianSet& gs, const std::string& path);
GaussianSet import_ply(const std::string& path);

}  // namespace omni
