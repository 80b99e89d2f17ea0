#pragma once

#include <array>
#include <Eigen/Core>

#include "tsplat/types.hpp"

namespace tsplat {

// Single-channel image, row = y, col = x.
using Image1 = Eigen::ArrayXXd;

// Planar RGB image.
struct Image3 {
  std::array<Image1, 3> ch;

  Image3() = default;
  Image3(Eigen::Index height, Eigen::Index width, double fill = 0.0) {
    for (auto& c : ch) c = Image1::Constant(height, width, fill);
  }

  Eigen::Index height() const { return ch[0].rows(); }
  Eigen::Index width() const { return ch[0].cols(); }

  Vec3 pixel(Eigen::Index y, Eigen::Index x) const {
    return {ch[0](y, x), ch[1](y, x), ch[2](y, x)};
  }
  void set_pixel(Eigen::Index y, Eigen::Index x, const Vec3& rgb) {
    ch[0](y, x) = rgb.x();
    ch[1](y, x) = rgb.y();
    ch[2](y, x) = rgb.z();
  }
};

inline bool same_shape(const Image3& a, const Image3& b) {
  return a.height() == b.height() && a.width() == b.width();
}

// Rec.601 luma weights.
inline Image1 luminance(const Image3& img) {
  return 0.299 * img.ch[0] + 0.587 * img.ch[1] + 0.114 * img.ch[2];
}

}  // namespace tsplat
