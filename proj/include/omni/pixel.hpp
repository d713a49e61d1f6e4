#pragma once

#include "omni/nn.hpp"
#include "omni/renderer.hpp"

namespace omni {

// K-view inputs / per-view feature grids. Images are [H,W,3] tensors; feature
// maps are [Hf,Wf,C] with Hf = H / factor.
using ImageSet = std::vector<Tensor>;

struct FeatureMapSet {
  std::vector<Tensor> maps;
  int factor = 1;
};

struct PixelConfig {
  int64_t feat_channels = 64;
  int factor = 4;  // image -> feature downsample (two stride-2 stages)
  std::array<int64_t, 2> enc_widths{32, 48};
  std::array<int64_t, 3> unet_widths{32, 64, 128};
  std::array<int, 3> unet_patches{4, 2, 1};  // cross-attention patch per level
  int64_t attn_dim = 64;
  int64_t head_hidden = 64;
  double delta_scale = 0.05;  // offset bound as a fraction of ray depth
  double depth_clamp = 2.0;   // smooth bound on the log-depth residual
  bool use_depth_init = true;
  double d_near = 0.2;  // base depth for the from-scratch ablation

  void validate() const {
    OMNI_CHECK(factor == 4, "PixelConfig: encoder is built for factor 4");
    OMNI_CHECK(feat_channels >= 1 && attn_dim >= 1 && head_hidden >= 1,
               "PixelConfig: widths must be >= 1");
    for (int p : unet_patches) OMNI_CHECK(p >= 1, "PixelConfig: patch sizes must be >= 1");
    OMNI_CHECK(delta_scale >= 0 && depth_clamp > 0 && d_near > 0,
               "PixelConfig: bounds must be positive");
  }
};

// Per-pixel initial depth (camera-frame z, meters) per view.
struct DepthInitMap {
  int width = 0, height = 0;
  std::vector<std::vector<double>> z;  // K views, h*w row-major
  double sigma = 0;
  uint64_t seed = 0;
};

// init = gt_z * exp(sigma * n), n ~ N(0,1) per pixel, deterministic per seed.
DepthInitMap depth_init_oracle(const std::vector<std::vector<double>>& gt_z, int width,
                               int height, double sigma, uint64_t seed);

// ---- feature extraction ----

struct ImageEncoderParams {
  Conv c1, c2, c3;  // stride 2, stride 2, stride 1
};
ImageEncoderParams make_image_encoder(ParameterStore& ps, Rng& rng, const std::string& name,
                                      const PixelConfig& cfg);
FeatureMapSet encode_images(const ImageSet& images, const ImageEncoderParams& p,
                            const PixelConfig& cfg);

// ---- cross-view patchified attention ----

struct CrossAttnParams {
  Dense q, k, v, out;  // out is zero-initialized (residual starts as identity)
  int64_t token_dim = 0, attn_dim = 0;
};
CrossAttnParams make_cross_attn_params(ParameterStore& ps, Rng& rng, const std::string& name,
                                       int64_t token_dim, int64_t attn_dim);

// Folds each view into (patch x patch x C) tokens; queries are one view's
// tokens, keys/values span all views; unfolds and adds the residual.
FeatureMapSet patchified_cross_attention(const FeatureMapSet& feats, int patch,
                                         const CrossAttnParams& p);

// ---- multi-view U-Net ----

struct MvUNetParams {
  Conv stem;  // feat_channels + 6 (Plucker) -> widths[0]
  std::array<Conv, 3> down_a;
  std::array<CrossAttnParams, 3> attn_down;
  std::array<Conv, 2> down_s;  // stride-2 transitions
  std::array<Conv, 2> up_c;    // post-upsample, indexed by target level
  std::array<Conv, 2> up_m;    // after skip concat
  std::array<CrossAttnParams, 2> attn_up;
  Conv out;  // widths[0] -> feat_channels
};
MvUNetParams make_mv_unet(ParameterStore& ps, Rng& rng, const std::string& name,
                          const PixelConfig& cfg);

Tensor plucker_tensor(const PluckerMap& m);  // [H,W,6] constant

// plucker: one [Hf,Wf,6] tensor per view at feature resolution.
FeatureMapSet mv_unet(const FeatureMapSet& feats, const std::vector<Tensor>& plucker,
                      const MvUNetParams& p, const PixelConfig& cfg);

// ---- per-pixel Gaussian head ----

struct PixelHeadParams {
  Conv c1, c2, c3;  // c3 emits 15 raw channels and starts at zero
};
PixelHeadParams make_pixel_head(ParameterStore& ps, Rng& rng, const std::string& name,
                                const PixelConfig& cfg);

struct PixelDecodeResult {
  GaussianTensors g;               // K*R rows, view-major, pixels row-major
  std::vector<Tensor> ray_depth;   // per view [R,1], meters along the pixel ray
};
PixelDecodeResult decode_pixel_gaussians(const FeatureMapSet& feats,
                                         const std::vector<CameraModel>& cams,
                                         const DepthInitMap& init, const PixelHeadParams& p,
                                         const PixelConfig& cfg);

// ---- assembled decorator ----

struct PixelDecoratorParams {
  ImageEncoderParams enc;
  MvUNetParams unet;
  PixelHeadParams head;
};
PixelDecoratorParams make_pixel_decorator(ParameterStore& ps, Rng& rng, const std::string& name,
                                          const PixelConfig& cfg);

struct PixelDecoratorResult {
  FeatureMapSet features;  // U-Net output (consumed by pixel-to-volume fusion)
  PixelDecodeResult decode;
};
PixelDecoratorResult run_pixel_decorator(const ImageSet& images,
                                         const std::vector<CameraModel>& cams,
                                         const DepthInitMap& init,
                                         const PixelDecoratorParams& p, const PixelConfig& cfg);

}  // namespace omni
