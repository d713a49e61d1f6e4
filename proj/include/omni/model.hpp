#pragma once

#include <optional>

#include "omni/collab.hpp"
#include "omni/optim.hpp"
#include "omni/pixel.hpp"
#include "omni/scene.hpp"
#include "omni/triplane.hpp"

namespace omni {

enum class BranchMode { full, volume_only, pixel_only };

const char* branch_mode_name(BranchMode m);
BranchMode branch_mode_from_name(const std::string& s);

// Complete run configuration. Every field has a desk-scale default; the JSON
// loader fills in only the keys present and rejects unknown ones.
struct RunConfig {
  // rig / data
  int image_width = 112, image_height = 64;
  double hfov_deg = 70.0;
  int K = 6;
  double bin_size = 0.8;
  VolumeSpec volume;  // defaults to desk_volume()

  // model
  int64_t triplane_channels = 64;
  int triplane_layers = 3;
  DeformAttnConfig attn;
  int64_t gaussians_per_voxel = 2;
  PixelConfig pixel;

  // loss / optimizer
  LossWeights weights;
  AdamSchedule opt;  // total_steps is kept equal to steps

  // training
  int64_t steps = 3000;
  int64_t checkpoint_every = 500;
  int novel_views_per_step = 2;
  int input_views_per_step = 2;
  uint64_t param_seed = 1;
  uint64_t train_seed = 2;
  double depth_init_sigma = 0.1;

  // ablations
  BranchMode mode = BranchMode::full;
  bool use_depth_init = true;
  bool use_fusion = true;
  bool use_decomposition = true;  // off: volume-branch supervision disabled

  RunConfig();

  void validate() const;

  // Parses a JSON document; unknown keys anywhere are an error.
  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_json_file(const std::string& path);
  std::string to_json_text() const;  // round-trips through from_json_text

  RigConfig rig() const;
};

// Everything the model computes for one bin sample.
struct ForwardResult {
  // Pixel branch (empty tensors when mode == volume_only).
  FeatureMapSet features;
  PixelDecodeResult pixel;
  // Volume branch (empty when mode == pixel_only).
  Triplane planes;
  GaussianTensors volume;
  bool has_pixel = false, has_volume = false;
  bool fused = false;  // fusion actually changed the planes' inputs
};

class OmniModel {
 public:
  explicit OmniModel(const RunConfig& cfg);

  ForwardResult forward(const ImageSet& images, const std::vector<CameraModel>& cams,
                        const DepthInitMap& init);

  // Builds the (possibly noisy) per-pixel depth initialization for a bin's
  // input views from their ground-truth depth maps.
  DepthInitMap make_depth_init(const BinSample& bin) const;

  ParameterStore& params() { return ps_; }
  const ParameterStore& params() const { return ps_; }
  const RunConfig& config() const { return cfg_; }

 private:
  RunConfig cfg_;
  ParameterStore ps_;
  PixelDecoratorParams pix_;
  std::optional<TriplaneEncoder> tp_;
  VoxelGaussianHead head_;
  Dense fusion_lin_;
};

// [H,W,3] constant tensor from a row-major rgb buffer.
Tensor image_tensor(const std::vector<double>& rgb, int width, int height);

}  // namespace omni
