#pragma once

#include <vector>

#include "tsplat/core_math.hpp"
#include "tsplat/types.hpp"

namespace tsplat {

// Structure-of-arrays of learnable Gaussian parameters, one column per
// Gaussian. Opacity is stored as a logit and scales as logs so that
// unconstrained gradient steps keep sigmoid(opacity) in (0,1) and scales
// positive. set_tag records whether a Gaussian originated from the vision
// point cloud or from touch points; it is immutable and inherited by
// clones/splits.
struct GaussianSet {
  Mat3X means;           // 3 x N, world space
  Mat4X rotations;       // 4 x N, (w,x,y,z), renormalized before use
  Mat3X log_scales;      // 3 x N
  VecX opacity_logits;   // N
  MatX sh_coeffs;        // 48 x N, row = channel*16 + k
  std::vector<SetTag> set_tag;

  Eigen::Index size() const { return means.cols(); }

  void resize(Eigen::Index n) {
    means.resize(3, n);
    rotations.resize(4, n);
    log_scales.resize(3, n);
    opacity_logits.resize(n);
    sh_coeffs.resize(kShCoeffsPerGaussian, n);
    set_tag.resize(static_cast<std::size_t>(n), SetTag::kVision);
  }

  double opacity(Eigen::Index i) const { return sigmoid(opacity_logits[i]); }

  Mat3 covariance(Eigen::Index i) const {
    return covariance_from_params<double>(rotations.col(i), log_scales.col(i));
  }

  // Keeps only the Gaussians selected by `keep` (in order).
  GaussianSet subset(const std::vector<Eigen::Index>& keep) const {
    GaussianSet out;
    out.resize(static_cast<Eigen::Index>(keep.size()));
    for (Eigen::Index j = 0; j < out.size(); ++j) {
      const Eigen::Index i = keep[static_cast<std::size_t>(j)];
      out.means.col(j) = means.col(i);
      out.rotations.col(j) = rotations.col(i);
      out.log_scales.col(j) = log_scales.col(i);
      out.opacity_logits[j] = opacity_logits[i];
      out.sh_coeffs.col(j) = sh_coeffs.col(i);
      out.set_tag[static_cast<std::size_t>(j)] = set_tag[static_cast<std::size_t>(i)];
    }
    return out;
  }

  std::size_t count_tag(SetTag tag) const {
    std::size_t n = 0;
    for (SetTag t : set_tag) n += (t == tag) ? 1 : 0;
    return n;
  }
};

// Gradient carrier with the same shapes as the learnable fields.
struct GradientSet {
  Mat3X means;
  Mat4X rotations;
  Mat3X log_scales;
  VecX opacity_logits;
  MatX sh_coeffs;

  static GradientSet zeros(Eigen::Index n) {
    GradientSet g;
    g.means = Mat3X::Zero(3, n);
    g.rotations = Mat4X::Zero(4, n);
    g.log_scales = Mat3X::Zero(3, n);
    g.opacity_logits = VecX::Zero(n);
    g.sh_coeffs = MatX::Zero(kShCoeffsPerGaussian, n);
    return g;
  }

  Eigen::Index size() const { return means.cols(); }

  void add(const GradientSet& other) {
    means += other.means;
    rotations += other.rotations;
    log_scales += other.log_scales;
    opacity_logits += other.opacity_logits;
    sh_coeffs += other.sh_coeffs;
  }

  bool all_finite() const {
    return means.allFinite() && rotations.allFinite() && log_scales.allFinite() &&
           opacity_logits.allFinite() && sh_coeffs.allFinite();
  }
};

}  // namespace tsplat
