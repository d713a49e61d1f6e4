#include "omni/model.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace omni {

namespace {

using json = nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* ctx) {
  OMNI_CHECK(j.is_object(), std::string("config: ") + ctx + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    OMNI_CHECK(ok.count(it.key()), std::string("config: unknown key '") + it.key() + "' in " + ctx);
}

template <typename T>
void get_if(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

Vec3 vec_get(const json& j) {
  OMNI_CHECK(j.is_array() && j.size() == 3, "config: expected a 3-element array");
  return {j.at(0), j.at(1), j.at(2)};
}

}  // namespace

const char* branch_mode_name(BranchMode m) {
  switch (m) {
    case BranchMode::full: return "full";
    case BranchMode::volume_only: return "volume-only";
    case BranchMode::pixel_only: return "pixel-only";
  }
  fail("unknown branch mode");
}

BranchMode branch_mode_from_name(const std::string& s) {
  if (s == "full") return BranchMode::full;
  if (s == "volume-only") return BranchMode::volume_only;
  if (s == "pixel-only") return BranchMode::pixel_only;
  fail("config: mode must be full, volume-only or pixel-only, got '" + s + "'");
}

RunConfig::RunConfig() {
  volume = desk_volume();
  opt.total_steps = steps;
}

void RunConfig::validate() const {
  OMNI_CHECK(image_width > 0 && image_height > 0, "config: image size must be positive");
  OMNI_CHECK(image_width % pixel.factor == 0 && image_height % pixel.factor == 0,
             "config: image size must be divisible by the encoder factor");
  OMNI_CHECK(K >= 1, "config: k must be >= 1");
  OMNI_CHECK(bin_size > 0, "config: bin_size must be > 0");
  OMNI_CHECK(triplane_channels >= 1 && triplane_layers >= 1,
             "config: triplane dimensions must be >= 1");
  OMNI_CHECK(gaussians_per_voxel >= 1, "config: gaussians_per_voxel must be >= 1");
  OMNI_CHECK(steps >= 0, "config: steps must be >= 0");
  OMNI_CHECK(checkpoint_every >= 1, "config: checkpoint_every must be >= 1");
  OMNI_CHECK(novel_views_per_step >= 1 && input_views_per_step >= 1,
             "config: views per step must be >= 1");
  OMNI_CHECK(depth_init_sigma >= 0, "config: depth_init_sigma must be >= 0");
  volume.validate();
  attn.validate();
  pixel.validate();
  weights.validate();
  OMNI_CHECK(opt.base_lr > 0 && opt.warmup_steps >= 0, "config: bad optimizer settings");
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(j, {"image", "bin_size", "volume", "model", "loss", "optim", "train", "ablation"},
             "top level");
  RunConfig c;

  if (j.contains("image")) {
    const json& s = j["image"];
    check_keys(s, {"width", "height", "hfov_deg", "k"}, "image");
    get_if(s, "width", c.image_width);
    get_if(s, "height", c.image_height);
    get_if(s, "hfov_deg", c.hfov_deg);
    get_if(s, "k", c.K);
  }
  get_if(j, "bin_size", c.bin_size);
  if (j.contains("volume")) {
    const json& s = j["volume"];
    check_keys(s, {"h", "w", "z", "min", "max"}, "volume");
    get_if(s, "h", c.volume.H);
    get_if(s, "w", c.volume.W);
    get_if(s, "z", c.volume.Z);
    if (s.contains("min")) c.volume.min_corner = vec_get(s["min"]);
    if (s.contains("max")) c.volume.max_corner = vec_get(s["max"]);
  }
  if (j.contains("model")) {
    const json& s = j["model"];
    check_keys(s,
               {"triplane_channels", "triplane_layers", "heads", "points_2d", "points_3d",
                "pillar", "offset_scale", "gaussians_per_voxel", "feat_channels", "enc_widths",
                "unet_widths", "unet_patches", "attn_dim", "head_hidden", "delta_scale",
                "depth_clamp", "d_near"},
               "model");
    get_if(s, "triplane_channels", c.triplane_channels);
    get_if(s, "triplane_layers", c.triplane_layers);
    get_if(s, "heads", c.attn.n_heads);
    get_if(s, "points_2d", c.attn.n_points_2d);
    get_if(s, "points_3d", c.attn.n_points_3d);
    get_if(s, "pillar", c.attn.n_pillar);
    get_if(s, "offset_scale", c.attn.offset_scale);
    get_if(s, "gaussians_per_voxel", c.gaussians_per_voxel);
    get_if(s, "feat_channels", c.pixel.feat_channels);
    get_if(s, "enc_widths", c.pixel.enc_widths);
    get_if(s, "unet_widths", c.pixel.unet_widths);
    get_if(s, "unet_patches", c.pixel.unet_patches);
    get_if(s, "attn_dim", c.pixel.attn_dim);
    get_if(s, "head_hidden", c.pixel.head_hidden);
    get_if(s, "delta_scale", c.pixel.delta_scale);
    get_if(s, "depth_clamp", c.pixel.depth_clamp);
    get_if(s, "d_near", c.pixel.d_near);
  }
  if (j.contains("loss")) {
    const json& s = j["loss"];
    check_keys(s, {"lambda1", "lambda2", "lambda_v1", "lambda_v2"}, "loss");
    get_if(s, "lambda1", c.weights.lambda1);
    get_if(s, "lambda2", c.weights.lambda2);
    get_if(s, "lambda_v1", c.weights.lambda_v1);
    get_if(s, "lambda_v2", c.weights.lambda_v2);
  }
  if (j.contains("optim")) {
    const json& s = j["optim"];
    check_keys(s, {"lr", "warmup", "beta1", "beta2", "eps", "weight_decay", "grad_clip"},
               "optim");
    get_if(s, "lr", c.opt.base_lr);
    get_if(s, "warmup", c.opt.warmup_steps);
    get_if(s, "beta1", c.opt.beta1);
    get_if(s, "beta2", c.opt.beta2);
    get_if(s, "eps", c.opt.eps);
    get_if(s, "weight_decay", c.opt.weight_decay);
    get_if(s, "grad_clip", c.opt.grad_clip);
  }
  if (j.contains("train")) {
    const json& s = j["train"];
    check_keys(s,
               {"steps", "checkpoint_every", "novel_views_per_step", "input_views_per_step",
                "train_seed", "param_seed", "depth_init_sigma"},
               "train");
    get_if(s, "steps", c.steps);
    get_if(s, "checkpoint_every", c.checkpoint_every);
    get_if(s, "novel_views_per_step", c.novel_views_per_step);
    get_if(s, "input_views_per_step", c.input_views_per_step);
    get_if(s, "train_seed", c.train_seed);
    get_if(s, "param_seed", c.param_seed);
    get_if(s, "depth_init_sigma", c.depth_init_sigma);
  }
  if (j.contains("ablation")) {
    const json& s = j["ablation"];
    check_keys(s, {"mode", "depth_init", "fusion", "decomposition"}, "ablation");
    if (s.contains("mode")) c.mode = branch_mode_from_name(s["mode"].get<std::string>());
    get_if(s, "depth_init", c.use_depth_init);
    get_if(s, "fusion", c.use_fusion);
    get_if(s, "decomposition", c.use_decomposition);
  }

  c.pixel.use_depth_init = c.use_depth_init;
  c.opt.total_steps = std::max<int64_t>(c.steps, 1);
  c.validate();
  return c;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  OMNI_CHECK(f.good(), "config: cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return from_json_text(os.str());
}

std::string RunConfig::to_json_text() const {
  json j;
  j["image"] = {{"width", image_width}, {"height", image_height}, {"hfov_deg", hfov_deg}, {"k", K}};
  j["bin_size"] = bin_size;
  j["volume"] = {{"h", volume.H},
                 {"w", volume.W},
                 {"z", volume.Z},
                 {"min", {volume.min_corner[0], volume.min_corner[1], volume.min_corner[2]}},
                 {"max", {volume.max_corner[0], volume.max_corner[1], volume.max_corner[2]}}};
  j["model"] = {{"triplane_channels", triplane_channels},
                {"triplane_layers", triplane_layers},
                {"heads", attn.n_heads},
                {"points_2d", attn.n_points_2d},
                {"points_3d", attn.n_points_3d},
                {"pillar", attn.n_pillar},
                {"offset_scale", attn.offset_scale},
                {"gaussians_per_voxel", gaussians_per_voxel},
                {"feat_channels", pixel.feat_channels},
                {"enc_widths", pixel.enc_widths},
                {"unet_widths", pixel.unet_widths},
                {"unet_patches", pixel.unet_patches},
                {"attn_dim", pixel.attn_dim},
                {"head_hidden", pixel.head_hidden},
                {"delta_scale", pixel.delta_scale},
                {"depth_clamp", pixel.depth_clamp},
                {"d_near", pixel.d_near}};
  j["loss"] = {{"lambda1", weights.lambda1},
               {"lambda2", weights.lambda2},
               {"lambda_v1", weights.lambda_v1},
               {"lambda_v2", weights.lambda_v2}};
  j["optim"] = {{"lr", opt.base_lr},     {"warmup", opt.warmup_steps},
                {"beta1", opt.beta1},    {"beta2", opt.beta2},
                {"eps", opt.eps},        {"weight_decay", opt.weight_decay},
                {"grad_clip", opt.grad_clip}};
  j["train"] = {{"steps", steps},
                {"checkpoint_every", checkpoint_every},
                {"novel_views_per_step", novel_views_per_step},
                {"input_views_per_step", input_views_per_step},
                {"train_seed", train_seed},
                {"param_seed", param_seed},
                {"depth_init_sigma", depth_init_sigma}};
  j["ablation"] = {{"mode", branch_mode_name(mode)},
                   {"depth_init", use_depth_init},
                   {"fusion", use_fusion},
                   {"decomposition", use_decomposition}};
  return j.dump(2);
}

RigConfig RunConfig::rig() const {
  RigConfig r;
  r.width = image_width;
  r.height = image_height;
  r.hfov_deg = hfov_deg;
  r.K = K;
  return r;
}

Tensor image_tensor(const std::vector<double>& rgb, int width, int height) {
  OMNI_CHECK(rgb.size() == size_t(width) * size_t(height) * 3, "image_tensor: size mismatch");
  return Tensor::from({height, width, 3}, rgb);
}

OmniModel::OmniModel(const RunConfig& cfg) : cfg_(cfg) {
  cfg_.pixel.use_depth_init = cfg_.use_depth_init;
  cfg_.opt.total_steps = std::max<int64_t>(cfg_.steps, 1);
  cfg_.validate();

  Rng rng(cfg_.param_seed);
  pix_ = make_pixel_decorator(ps_, rng, "pixel", cfg_.pixel);
  if (cfg_.mode != BranchMode::pixel_only) {
    TriplaneEncoderConfig tc;
    tc.C = cfg_.triplane_channels;
    tc.n_layers = cfg_.triplane_layers;
    tc.feat_channels = cfg_.pixel.feat_channels;
    tc.attn = cfg_.attn;
    tp_.emplace(ps_, rng, "triplane", cfg_.volume, tc);
    head_ = VoxelGaussianHead(ps_, rng, "voxel_head", tc.C, cfg_.gaussians_per_voxel);
    if (cfg_.mode == BranchMode::full && cfg_.use_fusion)
      fusion_lin_ = Dense(ps_, rng, "fusion.lin", cfg_.pixel.feat_channels, tc.C);
  }
}

DepthInitMap OmniModel::make_depth_init(const BinSample& bin) const {
  OMNI_CHECK(!bin.input.empty(), "make_depth_init: bin has no input views");
  std::vector<std::vector<double>> gt;
  for (const auto& v : bin.input) gt.push_back(v.depth);
  int w = bin.input[0].cam.width, h = bin.input[0].cam.height;
  return depth_init_oracle(gt, w, h, cfg_.depth_init_sigma,
                           cfg_.train_seed ^ (bin.scene.seed * 0x9e3779b97f4a7c15ull));
}

ForwardResult OmniModel::forward(const ImageSet& images, const std::vector<CameraModel>& cams,
                                 const DepthInitMap& init) {
  OMNI_CHECK(images.size() == cams.size() && !images.empty(),
             "forward: need one camera per image");
  ForwardResult r;

  FeatureMapSet enc = encode_images(images, pix_.enc, cfg_.pixel);
  std::vector<Tensor> plk;
  for (const auto& cam : cams)
    plk.push_back(plucker_tensor(camera_rays_plucker(cam.scaled(cfg_.pixel.factor))));
  r.features = mv_unet(enc, plk, pix_.unet, cfg_.pixel);

  if (cfg_.mode != BranchMode::volume_only) {
    r.pixel = decode_pixel_gaussians(r.features, cams, init, pix_.head, cfg_.pixel);
    r.has_pixel = true;
  }

  if (cfg_.mode != BranchMode::pixel_only) {
    std::vector<CameraModel> scams;
    for (const auto& cam : cams) scams.push_back(cam.scaled(cfg_.pixel.factor));

    Triplane initial = tp_->initial_planes();
    Triplane fused;
    const Triplane* override_planes = nullptr;
    if (r.has_pixel && cfg_.use_fusion) {
      // One feature row per pixel Gaussian: U-Net output upsampled to image
      // resolution, view-major like the decoded Gaussians.
      std::vector<Tensor> rows;
      for (const Tensor& m : r.features.maps) {
        int h = cams[0].height, w = cams[0].width;
        rows.push_back(reshape(upsample_bilinear(m, h, w),
                               {int64_t(h) * int64_t(w), cfg_.pixel.feat_channels}));
      }
      Tensor feat_rows = rows.size() == 1 ? rows[0] : concat_rows(rows);
      const std::vector<double>& mv = r.pixel.g.means.values();
      std::vector<Vec3> positions(mv.size() / 3, Vec3{0, 0, 0});
      for (size_t i = 0; i < positions.size(); ++i)
        positions[i] = {mv[i * 3], mv[i * 3 + 1], mv[i * 3 + 2]};
      fused = fuse_pixel_to_triplane(feat_rows, positions, initial, fusion_lin_);
      override_planes = &fused;
      r.fused = fused.hw.node() != initial.hw.node() || fused.zh.node() != initial.zh.node() ||
                fused.wz.node() != initial.wz.node();
    }

    r.planes = tp_->encode(r.features.maps, scams, override_planes);
    r.volume = decode_voxel_gaussians(r.planes, head_);
    r.has_volume = true;
  }
  return r;
}

}  // namespace omni
