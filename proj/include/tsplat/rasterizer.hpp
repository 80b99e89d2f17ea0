#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "tsplat/camera.hpp"
#include "tsplat/gaussian_set.hpp"
#include "tsplat/image.hpp"

namespace tsplat {

inline constexpr double kAlphaCutoff = 1.0 / 255.0;
inline constexpr double kAlphaClamp = 0.99;
inline constexpr double kEarlyStopTransmittance = 1e-4;

struct RasterizeOptions {
  int tile_size = 16;
  int sh_degree = kShMaxDegree;
  Vec3 background = Vec3::Zero();
};

// One compositing term: alpha = min(0.99, f2d * sigmoid(opacity)).
struct Contribution {
  std::int32_t index;
  double f2d;
  double alpha;
};

using MaskImage = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Per-Gaussian view-dependent quantities cached by the forward pass and
// reused verbatim by the backward pass.
struct ProjectionCache {
  std::vector<char> valid;             // in front of the near plane
  Mat3X means_cam;
  Eigen::Matrix2Xd means2d;
  std::vector<Mat2> cov2d;             // regularized (raw + 0.3 I)
  std::vector<Mat2> cov2d_inv;
  VecX depths;
  VecX opacities;                      // sigmoid(logit)
  Mat3X colors;                        // SH color, clamped at 0
  std::vector<std::array<char, 3>> color_clamped;
  VecX radius;                         // screen-space support radius, 0 = culled
  std::vector<char> binned;            // overlaps at least one tile
};

struct RenderOutput {
  Image3 color;      // composited, clamped to [0,1]
  Image1 depth;      // opacity-weighted compositing, not normalized
  Image1 acc_alpha;  // 1 - final transmittance
  std::array<MaskImage, 3> color_clamped;  // composite exceeded 1

  // Contribution lists, ascending Gaussian depth; pixel p = y*W + x owns
  // entries [offsets[p], offsets[p+1]).
  std::vector<std::uint32_t> offsets;
  std::vector<Contribution> contribs;

  ProjectionCache cache;
  std::vector<std::vector<std::int32_t>> tile_lists;  // depth-ordered
  int tiles_x = 0, tiles_y = 0;
  RasterizeOptions options;

  Eigen::Index contrib_count(Eigen::Index pixel) const {
    return static_cast<Eigen::Index>(offsets[pixel + 1] - offsets[pixel]);
  }
};

struct DepthRender {
  Image1 depth;
  Image1 acc_alpha;
};

struct BackwardResult {
  GradientSet grads;
  // Per-Gaussian norm of the accumulated screen-space mean gradient, scaled
  // to half-image units ((W/2, H/2)) so densification thresholds behave like
  // the usual NDC convention.
  VecX mean2d_grad_norm;
  std::vector<char> visible;  // projected and binned to at least one tile
};

RenderOutput rasterize(const GaussianSet& gaussians, const Camera& camera,
                       const RasterizeOptions& options = {});

// Depth/occupancy-only path; shares the compositing kernel with rasterize
// and produces bit-identical depth and acc_alpha.
DepthRender render_depth_only(const GaussianSet& gaussians, const Camera& camera,
                              const RasterizeOptions& options = {});

BackwardResult rasterize_backward(const GaussianSet& gaussians, const Camera& camera,
                                  const RenderOutput& render, const Image3& dL_dcolor,
                                  const Image1& dL_ddepth);

}  // namespace tsplat
