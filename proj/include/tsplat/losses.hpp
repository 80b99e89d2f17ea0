#pragma once

#include <vector>

#include "tsplat/camera.hpp"
#include "tsplat/gaussian_set.hpp"
#include "tsplat/image.hpp"
#include "tsplat/rasterizer.hpp"

namespace tsplat {

// World-space contact points (the union over all touch patches).
struct TouchPointSet {
  Mat3X points;  // 3 x P
  std::vector<int> source_patch;

  Eigen::Index size() const { return points.cols(); }
};

enum class MaskVariant { kDecay, kThreshold };

struct ProximityMask {
  Image1 weights;  // in [0,1]; 0 at touch projections, 1 far away
  MaskVariant variant = MaskVariant::kDecay;
};

struct LossWeights {
  double lambda_photo_ssim = 0.2;  // SSIM share inside the photometric loss
  double lambda_t = 0.5;
  double lambda_s = 0.1;
  double beta = 10.0;         // edge sensitivity
  int top_k = 20;             // Gaussians kept per touch point
  double d_max = 0.0;         // candidate radius; <= 0 means auto at init
  double sigma_mask = 20.0;   // pixels
  MaskVariant mask_variant = MaskVariant::kDecay;
  bool restrict_lt_to_touch_set = false;
};

// ---------------------------------------------------------------------------
// Photometric loss
// ---------------------------------------------------------------------------

struct PhotometricResult {
  double loss;
  Image3 d_rendered;
};

// (1 - lambda) * L1 + lambda * (1 - SSIM).
PhotometricResult photometric_loss(const Image3& rendered, const Image3& target,
                                   double lambda_ssim = 0.2);

// ---------------------------------------------------------------------------
// 3D transmittance at touch points
// ---------------------------------------------------------------------------

// Average transmittance over the top-K Gaussians by influence*opacity within
// d_max of p. Returns 1 when no candidate exists. `selected` (optional)
// receives the kept Gaussian indices in rank order.
double transmittance_at_point(const Vec3& p, const GaussianSet& gaussians, int top_k,
                              double d_max, std::vector<Eigen::Index>* selected = nullptr,
                              bool restrict_to_touch_set = false);

struct TransmittanceLossResult {
  double loss;
  GradientSet grads;
};

// L_T = (1/P) sum_i T(p_i), differentiated with the top-K selection held
// fixed. Minimizing it drives transmittance at the touch points down.
TransmittanceLossResult transmittance_loss(const TouchPointSet& touch_points,
                                           const GaussianSet& gaussians, int top_k, double d_max,
                                           bool restrict_to_touch_set = false);

// ---------------------------------------------------------------------------
// Edge-aware smoothness
// ---------------------------------------------------------------------------

// 5x5 Sobel-Feldman gradients ([1,4,6,4,1] smoothing x [-1,-2,0,2,1]
// derivative), replicate padding. RGB input is reduced to luminance first.
void sobel_gradients_5x5(const Image1& image, Image1& gx, Image1& gy);
void sobel_gradients_5x5(const Image3& image, Image1& gx, Image1& gy);

// Adjoint of one Sobel pass; `horizontal` selects the x-derivative kernel.
Image1 sobel_adjoint_5x5(const Image1& d_out, bool horizontal);

// Exact squared Euclidean distance transform of a seed mask (Felzenszwalb &
// Huttenlocher). Entries are exact integers; all-empty masks map to +inf.
Image1 squared_distance_transform(const MaskImage& seeds);

// Projects touch points into the view, drops occluded ones (projected depth
// more than 0.05 units beyond the rendered depth), and turns the exact
// distance transform of the surviving projections into per-pixel weights.
ProximityMask proximity_mask(const TouchPointSet& touch_points, const Camera& camera,
                             const Image1& rendered_depth, double sigma_mask,
                             MaskVariant variant);

struct SmoothnessResult {
  double loss;
  Image1 d_depth;
};

// L_S = (1/N) sum_p mask(p) * (|dx D| e^{-beta |dx I|} + |dy D| e^{-beta |dy I|}).
SmoothnessResult edge_aware_smoothness(const Image1& depth, const Image3& image, double beta,
                                       const ProximityMask& mask);

}  // namespace tsplat
