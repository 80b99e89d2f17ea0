#include "tsplat/ssim.hpp"

#include <array>
#include <cmath>

#include "tsplat/types.hpp"

namespace tsplat {

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr int kHalf = kSsimWindow / 2;

std::array<double, kSsimWindow> gaussian_taps() {
  std::array<double, kSsimWindow> w{};
  double sum = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kHalf;
    w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

const std::array<double, kSsimWindow>& taps() {
  static const auto w = gaussian_taps();
  return w;
}

// Separable valid-region windowed mean: output is (H-10) x (W-10).
Image1 window_mean(const Image1& img) {
  const auto& w = taps();
  const Eigen::Index h = img.rows(), wd = img.cols();
  Image1 tmp(h, wd - 2 * kHalf);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < wd - 2 * kHalf; ++x) {
      double s = 0;
      for (int k = 0; k < kSsimWindow; ++k) s += w[static_cast<std::size_t>(k)] * img(y, x + k);
      tmp(y, x) = s;
    }
  Image1 out(h - 2 * kHalf, wd - 2 * kHalf);
  for (Eigen::Index y = 0; y < h - 2 * kHalf; ++y)
    for (Eigen::Index x = 0; x < wd - 2 * kHalf; ++x) {
      double s = 0;
      for (int k = 0; k < kSsimWindow; ++k) s += w[static_cast<std::size_t>(k)] * tmp(y + k, x);
      out(y, x) = s;
    }
  return out;
}

// Adjoint of window_mean: scatters a valid-region gradient back to image
// coordinates.
Image1 window_mean_adjoint(const Image1& g, Eigen::Index h, Eigen::Index wd) {
  const auto& w = taps();
  Image1 tmp = Image1::Zero(h, wd - 2 * kHalf);
  for (Eigen::Index y = 0; y < g.rows(); ++y)
    for (Eigen::Index x = 0; x < g.cols(); ++x)
      for (int k = 0; k < kSsimWindow; ++k)
        tmp(y + k, x) += w[static_cast<std::size_t>(k)] * g(y, x);
  Image1 out = Image1::Zero(h, wd);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < tmp.cols(); ++x)
      for (int k = 0; k < kSsimWindow; ++k)
        out(y, x + k) += w[static_cast<std::size_t>(k)] * tmp(y, x);
  return out;
}

void check_shapes(const Image1& a, const Image1& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatchError("ssim: image shapes differ");
  if (a.rows() < kSsimWindow || a.cols() < kSsimWindow)
    throw ImageTooSmallError("ssim: images must be at least 11x11");
}

struct ChannelSsim {
  double value;
  Image1 d_a;  // filled only when with_grad
};

ChannelSsim ssim_channel(const Image1& a, const Image1& b, bool with_grad) {
  check_shapes(a, b);
  const Eigen::Index h = a.rows(), wd = a.cols();
  const Image1 mu_a = window_mean(a);
  const Image1 mu_b = window_mean(b);
  const Image1 m2a = window_mean(a * a);
  const Image1 m2b = window_mean(b * b);
  const Image1 mab = window_mean(a * b);

  const Image1 var_a = m2a - mu_a * mu_a;
  const Image1 var_b = m2b - mu_b * mu_b;
  const Image1 cov = mab - mu_a * mu_b;

  const Image1 a1 = 2.0 * mu_a * mu_b + kC1;
  const Image1 a2 = 2.0 * cov + kC2;
  const Image1 b1 = mu_a * mu_a + mu_b * mu_b + kC1;
  const Image1 b2 = var_a + var_b + kC2;
  const Image1 s = (a1 * a2) / (b1 * b2);

  ChannelSsim out;
  out.value = s.mean();
  if (!with_grad) return out;

  const double inv_n = 1.0 / static_cast<double>(s.size());
  const Image1 f = a1 / b1;
  const Image1 g = a2 / b2;
  // Direct partials of the per-pixel score.
  const Image1 ds_dvar = -(s / b2);
  const Image1 ds_dcov = f * (2.0 / b2);
  const Image1 ds_dmu = g * (2.0 * mu_b * b1 - 2.0 * mu_a * a1) / (b1 * b1) +
                        ds_dvar * (-2.0 * mu_a) + ds_dcov * (-mu_b);
  out.d_a = window_mean_adjoint(inv_n * ds_dmu, h, wd) +
            2.0 * a * window_mean_adjoint(inv_n * ds_dvar, h, wd) +
            b * window_mean_adjoint(inv_n * ds_dcov, h, wd);
  return out;
}

}  // namespace

double ssim(const Image1& a, const Image1& b) { return ssim_channel(a, b, false).value; }

double ssim(const Image3& a, const Image3& b) {
  double sum = 0;
  for (int c = 0; c < 3; ++c)
    sum += ssim_channel(a.ch[static_cast<std::size_t>(c)], b.ch[static_cast<std::size_t>(c)], false).value;
  return sum / 3.0;
}

SsimGradResult ssim_with_grad(const Image3& a, const Image3& b) {
  SsimGradResult out;
  out.value = 0;
  for (int c = 0; c < 3; ++c) {
    ChannelSsim ch =
        ssim_channel(a.ch[static_cast<std::size_t>(c)], b.ch[static_cast<std::size_t>(c)], true);
    out.value += ch.value / 3.0;
    out.d_a.ch[static_cast<std::size_t>(c)] = (1.0 / 3.0) * ch.d_a;
  }
  return out;
}

}  // namespace tsplat
