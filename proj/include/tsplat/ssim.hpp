#pragma once

#include "tsplat/image.hpp"

namespace tsplat {

// Mean local SSIM over an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
// C2 = 0.03^2 at dynamic range 1. The mean is taken over window centers where
// the full window fits; images must be at least 11x11. Multi-channel SSIM is
// the average of the per-channel values.
inline constexpr int kSsimWindow = 11;

double ssim(const Image1& a, const Image1& b);
double ssim(const Image3& a, const Image3& b);

struct SsimGradResult {
  double value;
  Image3 d_a;  // d(ssim)/d(a)
};

SsimGradResult ssim_with_grad(const Image3& a, const Image3& b);

}  // namespace tsplat
