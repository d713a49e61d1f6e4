#include "omni/pixel.hpp"

#include <cmath>

#include "omni/geometry.hpp"

namespace omni {

namespace {

void check_same_maps(const std::vector<Tensor>& maps, const char* who) {
  OMNI_CHECK(!maps.empty(), std::string(who) + ": no views");
  for (const auto& m : maps) {
    OMNI_CHECK(m.shape().size() == 3, std::string(who) + ": maps must be [H,W,C]");
    OMNI_CHECK(m.shape() == maps[0].shape(), std::string(who) + ": view shapes differ");
  }
}

// [H,W,Ca] + [H,W,Cb] -> [H,W,Ca+Cb]
Tensor concat_channels(const Tensor& a, const Tensor& b) {
  int64_t h = a.shape()[0], w = a.shape()[1];
  OMNI_CHECK(b.shape()[0] == h && b.shape()[1] == w, "concat_channels: spatial mismatch");
  Tensor flat = concat_cols({reshape(a, {h * w, a.shape()[2]}), reshape(b, {h * w, b.shape()[2]})});
  return reshape(flat, {h, w, a.shape()[2] + b.shape()[2]});
}

// Row order that groups each patch's pixels contiguously.
std::vector<int64_t> fold_index(int64_t h, int64_t w, int patch) {
  std::vector<int64_t> idx;
  idx.reserve(size_t(h * w));
  for (int64_t ti = 0; ti < h / patch; ++ti)
    for (int64_t tj = 0; tj < w / patch; ++tj)
      for (int a = 0; a < patch; ++a)
        for (int b = 0; b < patch; ++b) idx.push_back((ti * patch + a) * w + tj * patch + b);
  return idx;
}

std::vector<int64_t> invert_index(const std::vector<int64_t>& idx) {
  std::vector<int64_t> inv(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) inv[size_t(idx[i])] = int64_t(i);
  return inv;
}

// [H,W,C] -> [T, patch*patch*C] tokens
Tensor fold_tokens(const Tensor& x, int patch, const std::vector<int64_t>& idx) {
  int64_t h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  int64_t t = (h / patch) * (w / patch);
  Tensor rows = gather_rows(reshape(x, {h * w, c}), idx);
  return reshape(rows, {t, int64_t(patch) * patch * c});
}

Tensor unfold_tokens(const Tensor& tok, int patch, int64_t h, int64_t w, int64_t c,
                     const std::vector<int64_t>& inv) {
  Tensor rows = gather_rows(reshape(tok, {h * w, c}), inv);
  return reshape(rows, {h, w, c});
}

Tensor silu_conv(const Conv& cv, const Tensor& x) { return silu(cv(x)); }

void zero_param(Tensor t) {
  std::fill(t.values().begin(), t.values().end(), 0.0);
}

}  // namespace

// ---- depth initialization ----

DepthInitMap depth_init_oracle(const std::vector<std::vector<double>>& gt_z, int width,
                               int height, double sigma, uint64_t seed) {
  OMNI_CHECK(sigma >= 0, "depth_init_oracle: sigma must be >= 0");
  DepthInitMap out;
  out.width = width;
  out.height = height;
  out.sigma = sigma;
  out.seed = seed;
  Rng rng(seed);
  out.z.resize(gt_z.size());
  for (size_t i = 0; i < gt_z.size(); ++i) {
    OMNI_CHECK(gt_z[i].size() == size_t(width) * height, "depth_init_oracle: size mismatch");
    out.z[i].resize(gt_z[i].size());
    for (size_t j = 0; j < gt_z[i].size(); ++j) {
      OMNI_CHECK(gt_z[i][j] > 0, "depth_init_oracle: ground-truth depth must be positive");
      out.z[i][j] = sigma == 0 ? gt_z[i][j] : gt_z[i][j] * std::exp(sigma * rng.normal());
    }
  }
  return out;
}

// ---- feature extraction ----

ImageEncoderParams make_image_encoder(ParameterStore& ps, Rng& rng, const std::string& name,
                                      const PixelConfig& cfg) {
  cfg.validate();
  ImageEncoderParams p;
  p.c1 = Conv(ps, rng, name + ".c1", 3, 3, cfg.enc_widths[0], 2);
  p.c2 = Conv(ps, rng, name + ".c2", 3, cfg.enc_widths[0], cfg.enc_widths[1], 2);
  p.c3 = Conv(ps, rng, name + ".c3", 3, cfg.enc_widths[1], cfg.feat_channels, 1);
  return p;
}

FeatureMapSet encode_images(const ImageSet& images, const ImageEncoderParams& p,
                            const PixelConfig& cfg) {
  check_same_maps(images, "encode_images");
  int64_t h = images[0].shape()[0], w = images[0].shape()[1];
  OMNI_CHECK(images[0].shape()[2] == 3, "encode_images: images must be [H,W,3]");
  OMNI_CHECK(h % cfg.factor == 0 && w % cfg.factor == 0,
             "encode_images: image dims must divide by the downsample factor");
  FeatureMapSet out;
  out.factor = cfg.factor;
  for (const auto& img : images)
    out.maps.push_back(p.c3(silu_conv(p.c2, silu_conv(p.c1, img))));
  return out;
}

// ---- cross-view patchified attention ----

CrossAttnParams make_cross_attn_params(ParameterStore& ps, Rng& rng, const std::string& name,
                                       int64_t token_dim, int64_t attn_dim) {
  CrossAttnParams p;
  p.token_dim = token_dim;
  p.attn_dim = attn_dim;
  p.q = Dense(ps, rng, name + ".q", token_dim, attn_dim);
  p.k = Dense(ps, rng, name + ".k", token_dim, attn_dim);
  p.v = Dense(ps, rng, name + ".v", token_dim, attn_dim);
  p.out = Dense(ps, rng, name + ".out", attn_dim, token_dim, /*zero_init=*/true);
  return p;
}

FeatureMapSet patchified_cross_attention(const FeatureMapSet& feats, int patch,
                                         const CrossAttnParams& p) {
  check_same_maps(feats.maps, "patchified_cross_attention");
  int64_t h = feats.maps[0].shape()[0], w = feats.maps[0].shape()[1];
  int64_t c = feats.maps[0].shape()[2];
  OMNI_CHECK(patch >= 1 && h % patch == 0 && w % patch == 0,
             "patchified_cross_attention: spatial dims must divide by patch");
  OMNI_CHECK(p.token_dim == int64_t(patch) * patch * c,
             "patchified_cross_attention: params built for a different token size");

  const std::vector<int64_t> idx = fold_index(h, w, patch);
  const std::vector<int64_t> inv = invert_index(idx);
  std::vector<Tensor> tokens;
  for (const auto& m : feats.maps) tokens.push_back(fold_tokens(m, patch, idx));

  Tensor all = tokens.size() == 1 ? tokens[0] : concat_rows(tokens);
  Tensor keys = p.k(all), vals = p.v(all);
  double scale = 1.0 / std::sqrt(double(p.attn_dim));

  FeatureMapSet out;
  out.factor = feats.factor;
  for (const auto& tok : tokens) {
    Tensor scores = mul(matmul_nt(p.q(tok), keys), scale);
    Tensor ctx = matmul(softmax_rows(scores), vals);
    Tensor res = add(tok, p.out(ctx));
    out.maps.push_back(unfold_tokens(res, patch, h, w, c, inv));
  }
  return out;
}

// ---- multi-view U-Net ----

MvUNetParams make_mv_unet(ParameterStore& ps, Rng& rng, const std::string& name,
                          const PixelConfig& cfg) {
  cfg.validate();
  const auto& wds = cfg.unet_widths;
  MvUNetParams p;
  p.stem = Conv(ps, rng, name + ".stem", 3, cfg.feat_channels + 6, wds[0], 1);
  for (int l = 0; l < 3; ++l) {
    p.down_a[size_t(l)] = Conv(ps, rng, name + ".down_a" + std::to_string(l), 3, wds[size_t(l)],
                               wds[size_t(l)], 1);
    int64_t tok = int64_t(cfg.unet_patches[size_t(l)]) * cfg.unet_patches[size_t(l)] * wds[size_t(l)];
    p.attn_down[size_t(l)] =
        make_cross_attn_params(ps, rng, name + ".attn_down" + std::to_string(l), tok, cfg.attn_dim);
  }
  for (int l = 0; l < 2; ++l) {
    p.down_s[size_t(l)] = Conv(ps, rng, name + ".down_s" + std::to_string(l), 3, wds[size_t(l)],
                               wds[size_t(l) + 1], 2);
    p.up_c[size_t(l)] = Conv(ps, rng, name + ".up_c" + std::to_string(l), 3, wds[size_t(l) + 1],
                             wds[size_t(l)], 1);
    p.up_m[size_t(l)] = Conv(ps, rng, name + ".up_m" + std::to_string(l), 3, 2 * wds[size_t(l)],
                             wds[size_t(l)], 1);
    int64_t tok = int64_t(cfg.unet_patches[size_t(l)]) * cfg.unet_patches[size_t(l)] * wds[size_t(l)];
    p.attn_up[size_t(l)] =
        make_cross_attn_params(ps, rng, name + ".attn_up" + std::to_string(l), tok, cfg.attn_dim);
  }
  p.out = Conv(ps, rng, name + ".out", 3, wds[0], cfg.feat_channels, 1);
  return p;
}

Tensor plucker_tensor(const PluckerMap& m) {
  return Tensor::from({m.height, m.width, 6}, m.data);
}

FeatureMapSet mv_unet(const FeatureMapSet& feats, const std::vector<Tensor>& plucker,
                      const MvUNetParams& p, const PixelConfig& cfg) {
  check_same_maps(feats.maps, "mv_unet");
  OMNI_CHECK(plucker.size() == feats.maps.size(), "mv_unet: one Plucker map per view");
  int64_t h = feats.maps[0].shape()[0], w = feats.maps[0].shape()[1];
  for (const auto& pl : plucker)
    OMNI_CHECK(pl.shape() == Shape({h, w, 6}),
               "mv_unet: Plucker maps must match the feature resolution");

  const size_t K = feats.maps.size();
  FeatureMapSet x;
  x.factor = feats.factor;
  for (size_t i = 0; i < K; ++i)
    x.maps.push_back(silu_conv(p.stem, concat_channels(feats.maps[i], plucker[i])));

  std::array<FeatureMapSet, 3> skip;
  for (size_t l = 0; l < 3; ++l) {
    for (auto& m : x.maps) m = silu_conv(p.down_a[l], m);
    x = patchified_cross_attention(x, cfg.unet_patches[l], p.attn_down[l]);
    skip[l] = x;
    if (l < 2)
      for (auto& m : x.maps) m = silu_conv(p.down_s[l], m);
  }

  for (int l = 1; l >= 0; --l) {
    for (auto& m : x.maps) m = silu_conv(p.up_c[size_t(l)], upsample_nearest(m, 2));
    for (size_t i = 0; i < K; ++i)
      x.maps[i] = silu_conv(p.up_m[size_t(l)], concat_channels(x.maps[i], skip[size_t(l)].maps[i]));
    x = patchified_cross_attention(x, cfg.unet_patches[size_t(l)], p.attn_up[size_t(l)]);
  }

  for (auto& m : x.maps) m = p.out(m);
  return x;
}

// ---- per-pixel Gaussian head ----

PixelHeadParams make_pixel_head(ParameterStore& ps, Rng& rng, const std::string& name,
                                const PixelConfig& cfg) {
  cfg.validate();
  PixelHeadParams p;
  p.c1 = Conv(ps, rng, name + ".c1", 3, cfg.feat_channels, cfg.head_hidden, 1);
  p.c2 = Conv(ps, rng, name + ".c2", 3, cfg.head_hidden, cfg.head_hidden, 1);
  p.c3 = Conv(ps, rng, name + ".c3", 3, cfg.head_hidden, 15, 1);
  zero_param(p.c3.w);
  zero_param(p.c3.b);
  return p;
}

PixelDecodeResult decode_pixel_gaussians(const FeatureMapSet& feats,
                                         const std::vector<CameraModel>& cams,
                                         const DepthInitMap& init, const PixelHeadParams& p,
                                         const PixelConfig& cfg) {
  check_same_maps(feats.maps, "decode_pixel_gaussians");
  const size_t K = feats.maps.size();
  OMNI_CHECK(cams.size() == K, "decode_pixel_gaussians: one camera per view");
  const int W = cams[0].width, H = cams[0].height;
  const int64_t R = int64_t(W) * H;
  if (cfg.use_depth_init) {
    OMNI_CHECK(init.z.size() == K && init.width == W && init.height == H,
               "decode_pixel_gaussians: init resolution must match the images");
  }
  // softplus(s0) = 1: zero raw scale gives a one-pixel footprint at depth d.
  const double s0 = std::log(std::exp(1.0) - 1.0);
  const Tensor unit_quat = Tensor::from({4}, {1, 0, 0, 0});

  std::vector<Tensor> means, opac, scales, quats, colors, depths;
  for (size_t i = 0; i < K; ++i) {
    const CameraModel& cam = cams[i];
    OMNI_CHECK(cam.width == W && cam.height == H, "decode_pixel_gaussians: camera sizes differ");
    OMNI_CHECK(feats.maps[i].shape()[0] * feats.factor == H &&
                   feats.maps[i].shape()[1] * feats.factor == W,
               "decode_pixel_gaussians: feature grid does not match the camera");

    Tensor up = upsample_bilinear(feats.maps[i], H, W);
    Tensor raw = reshape(p.c3(silu(p.c2(silu(p.c1(up))))), {R, 15});
    Tensor dd = slice_cols(raw, 0, 1);

    // Per-pixel ray origins/directions and the along-ray init depth.
    std::vector<double> ov, rv, iv;
    ov.reserve(size_t(R) * 3);
    rv.reserve(size_t(R) * 3);
    iv.reserve(size_t(R));
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        Ray ray = pixel_ray(cam, x + 0.5, y + 0.5);
        for (int c = 0; c < 3; ++c) ov.push_back(ray.origin[size_t(c)]);
        for (int c = 0; c < 3; ++c) rv.push_back(ray.direction[size_t(c)]);
        if (cfg.use_depth_init)
          iv.push_back(ray_depth_from_z(cam, x + 0.5, y + 0.5, init.z[i][size_t(y) * W + x]));
      }
    Tensor origins = Tensor::from({R, 3}, std::move(ov));
    Tensor dirs = Tensor::from({R, 3}, std::move(rv));

    Tensor d;
    if (cfg.use_depth_init) {
      // Multiplicative residual with a smooth +-depth_clamp bound on the log.
      Tensor bounded = mul(tanh(mul(dd, 1.0 / cfg.depth_clamp)), cfg.depth_clamp);
      d = mul(exp(bounded), Tensor::from({R, 1}, std::move(iv)));
    } else {
      d = mul(exp(softplus(dd)), cfg.d_near);
    }

    Tensor delta = mul(tanh(slice_cols(raw, 1, 4)), mul(d, cfg.delta_scale));
    means.push_back(add(add(origins, mul(dirs, d)), delta));
    opac.push_back(sigmoid(slice_cols(raw, 4, 5)));
    scales.push_back(mul(softplus(add(slice_cols(raw, 5, 8), s0)), mul(d, 1.0 / cam.fx)));
    quats.push_back(add(slice_cols(raw, 8, 12), unit_quat));
    colors.push_back(sigmoid(slice_cols(raw, 12, 15)));
    depths.push_back(d);
  }

  PixelDecodeResult out;
  out.g.means = concat_rows(means);
  out.g.opacities = concat_rows(opac);
  out.g.scales = concat_rows(scales);
  out.g.quats = concat_rows(quats);
  out.g.colors = concat_rows(colors);
  out.ray_depth = std::move(depths);
  return out;
}

// ---- assembled decorator ----

PixelDecoratorParams make_pixel_decorator(ParameterStore& ps, Rng& rng, const std::string& name,
                                          const PixelConfig& cfg) {
  PixelDecoratorParams p;
  p.enc = make_image_encoder(ps, rng, name + ".enc", cfg);
  p.unet = make_mv_unet(ps, rng, name + ".unet", cfg);
  p.head = make_pixel_head(ps, rng, name + ".head", cfg);
  return p;
}

PixelDecoratorResult run_pixel_decorator(const ImageSet& images,
                                         const std::vector<CameraModel>& cams,
                                         const DepthInitMap& init,
                                         const PixelDecoratorParams& p, const PixelConfig& cfg) {
  OMNI_CHECK(images.size() == cams.size(), "run_pixel_decorator: one camera per image");
  FeatureMapSet f = encode_images(images, p.enc, cfg);
  std::vector<Tensor> plucker;
  for (const auto& cam : cams)
    plucker.push_back(plucker_tensor(camera_rays_plucker(cam.scaled(cfg.factor))));
  PixelDecoratorResult out;
  out.features = mv_unet(f, plucker, p.unet, cfg);
  out.decode = decode_pixel_gaussians(out.features, cams, init, p.head, cfg);
  return out;
}

}  // namespace omni
