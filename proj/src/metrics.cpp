#include "omni/metrics.hpp"

#include <cmath>
#include <limits>

namespace omni {

double psnr(const std::vector<double>& a, const std::vector<double>& b) {
  OMNI_CHECK(a.size() == b.size() && !a.empty(), "psnr: shape mismatch");
  double mse = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= double(a.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

namespace {

std::vector<double> gaussian_window_11() {
  std::vector<double> w(11);
  double sum = 0;
  for (int i = 0; i < 11; ++i) {
    double d = i - 5.0;
    w[size_t(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    sum += w[size_t(i)];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Separable 11x11 Gaussian filter, valid padding: [h,w] -> [h-10,w-10].
std::vector<double> filter_valid(const std::vector<double>& x, int h, int w,
                                 const std::vector<double>& k) {
  int oh = h - 10, ow = w - 10;
  std::vector<double> tmp(size_t(h) * ow);  // horizontal pass
  for (int y = 0; y < h; ++y)
    for (int x0 = 0; x0 < ow; ++x0) {
      double s = 0;
      for (int i = 0; i < 11; ++i) s += k[size_t(i)] * x[size_t(y) * w + x0 + i];
      tmp[size_t(y) * ow + x0] = s;
    }
  std::vector<double> out(size_t(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x0 = 0; x0 < ow; ++x0) {
      double s = 0;
      for (int i = 0; i < 11; ++i) s += k[size_t(i)] * tmp[size_t(y + i) * ow + x0];
      out[size_t(y) * ow + x0] = s;
    }
  return out;
}

}  // namespace

double ssim(const std::vector<double>& a, const std::vector<double>& b, int h, int w, int c) {
  OMNI_CHECK(a.size() == b.size(), "ssim: shape mismatch");
  OMNI_CHECK(a.size() == size_t(h) * w * c, "ssim: shape/size mismatch");
  OMNI_CHECK(h >= 11 && w >= 11, "ssim: image smaller than the 11x11 window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  std::vector<double> kern = gaussian_window_11();
  double total = 0;
  int64_t count = 0;
  std::vector<double> xa(size_t(h) * w), xb(size_t(h) * w), xaa(size_t(h) * w),
      xbb(size_t(h) * w), xab(size_t(h) * w);
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < h * w; ++i) {
      double va = a[size_t(i) * c + ch], vb = b[size_t(i) * c + ch];
      xa[size_t(i)] = va;
      xb[size_t(i)] = vb;
      xaa[size_t(i)] = va * va;
      xbb[size_t(i)] = vb * vb;
      xab[size_t(i)] = va * vb;
    }
    auto mu_a = filter_valid(xa, h, w, kern);
    auto mu_b = filter_valid(xb, h, w, kern);
    auto m_aa = filter_valid(xaa, h, w, kern);
    auto m_bb = filter_valid(xbb, h, w, kern);
    auto m_ab = filter_valid(xab, h, w, kern);
    for (size_t i = 0; i < mu_a.size(); ++i) {
      double ma = mu_a[i], mb = mu_b[i];
      double va = m_aa[i] - ma * ma;
      double vb = m_bb[i] - mb * mb;
      double cov = m_ab[i] - ma * mb;
      double num = (2 * ma * mb + c1) * (2 * cov + c2);
      double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
      total += num / den;
      count++;
    }
  }
  return total / double(count);
}

double pcc(const std::vector<double>& a, const std::vector<double>& b,
           const std::vector<uint8_t>* valid) {
  OMNI_CHECK(a.size() == b.size(), "pcc: shape mismatch");
  if (valid) OMNI_CHECK(valid->size() == a.size(), "pcc: mask shape mismatch");
  double sa = 0, sb = 0;
  int64_t n = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (valid && !(*valid)[i]) continue;
    sa += a[i];
    sb += b[i];
    n++;
  }
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  double ma = sa / double(n), mb = sb / double(n);
  double vaa = 0, vbb = 0, vab = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (valid && !(*valid)[i]) continue;
    double da = a[i] - ma, db = b[i] - mb;
    vaa += da * da;
    vbb += db * db;
    vab += da * db;
  }
  if (vaa <= 0 || vbb <= 0) return std::numeric_limits<double>::quiet_NaN();
  return vab / std::sqrt(vaa * vbb);
}

LpipsFn& lpips_hook() {
  static LpipsFn fn;  // unset by default
  return fn;
}

}  // namespace omni
