#include "tsplat/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>

#include "tsplat/ssim.hpp"
#include "tsplat/threading.hpp"

namespace tsplat {

// ---------------------------------------------------------------------------
// Photometric
// ---------------------------------------------------------------------------

PhotometricResult photometric_loss(const Image3& rendered, const Image3& target,
                                   double lambda_ssim) {
  if (!same_shape(rendered, target))
    throw ShapeMismatchError("photometric_loss: image shapes differ");
  const double n = static_cast<double>(rendered.height() * rendered.width()) * 3.0;

  PhotometricResult out;
  double l1 = 0;
  out.d_rendered = Image3(rendered.height(), rendered.width());
  for (int c = 0; c < 3; ++c) {
    const Image1 diff = rendered.ch[static_cast<std::size_t>(c)] - target.ch[static_cast<std::size_t>(c)];
    l1 += diff.abs().sum();
    out.d_rendered.ch[static_cast<std::size_t>(c)] = diff.sign() * ((1.0 - lambda_ssim) / n);
  }
  l1 /= n;
  out.loss = (1.0 - lambda_ssim) * l1;

  if (lambda_ssim > 0.0) {
    const SsimGradResult s = ssim_with_grad(rendered, target);
    out.loss += lambda_ssim * (1.0 - s.value);
    for (int c = 0; c < 3; ++c)
      out.d_rendered.ch[static_cast<std::size_t>(c)] -= lambda_ssim * s.d_a.ch[static_cast<std::size_t>(c)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Transmittance
// ---------------------------------------------------------------------------

namespace {

struct Candidate {
  double influence;  // f * alpha
  Eigen::Index index;
};

// Regularized covariance inverse used by the influence evaluation.
Mat3 influence_inverse(const GaussianSet& g, Eigen::Index i) {
  Mat3 sigma = g.covariance(i);
  sigma.diagonal().array() += kCovInfluenceEps;
  return sigma.inverse();
}

// Ranks the given candidates by influence*opacity (ties by index) and keeps
// the top K. `inverses` must hold the regularized covariance inverse for
// every candidate index.
std::vector<Candidate> select_top_k(const Vec3& p, const GaussianSet& g,
                                    const std::vector<Eigen::Index>& candidates, int top_k,
                                    const std::vector<Mat3>& inverses) {
  std::vector<Candidate> ranked;
  ranked.reserve(candidates.size());
  for (const Eigen::Index i : candidates) {
    const Vec3 delta = p - g.means.col(i);
    const double f = std::exp(-0.5 * delta.dot(inverses[static_cast<std::size_t>(i)] * delta));
    ranked.push_back({f * g.opacity(i), i});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Candidate& a, const Candidate& b) {
    return a.influence > b.influence || (a.influence == b.influence && a.index < b.index);
  });
  if (static_cast<int>(ranked.size()) > top_k) ranked.resize(static_cast<std::size_t>(top_k));
  return ranked;
}

std::vector<Eigen::Index> candidates_in_ball(const Vec3& p, const GaussianSet& g, double d_max,
                                             bool restrict_to_touch_set) {
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    if (restrict_to_touch_set && g.set_tag[static_cast<std::size_t>(i)] != SetTag::kTouch) continue;
    if ((g.means.col(i) - p).norm() <= d_max) out.push_back(i);
  }
  return out;
}

// Uniform grid over Gaussian means with cell edge d_max; 21 bits per axis.
class MeanGrid {
 public:
  MeanGrid(const GaussianSet& g, double cell) : cell_(cell) {
    for (Eigen::Index i = 0; i < g.size(); ++i)
      cells_[key(g.means.col(i))].push_back(i);
  }

  // Gaussians in the 27 cells around p, ascending index within each cell.
  void gather(const Vec3& p, std::vector<Eigen::Index>& out) const {
    out.clear();
    const Eigen::Vector3i c = coords(p);
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const auto it = cells_.find(pack(c.x() + dx, c.y() + dy, c.z() + dz));
          if (it == cells_.end()) continue;
          out.insert(out.end(), it->second.begin(), it->second.end());
        }
  }

 private:
  Eigen::Vector3i coords(const Vec3& p) const {
    Eigen::Vector3i c;
    for (int a = 0; a < 3; ++a) {
      double v = std::floor(p[a] / cell_);
      v = std::clamp(v, -1048575.0, 1048575.0);
      c[a] = static_cast<int>(v);
    }
    return c;
  }
  static std::uint64_t pack(int x, int y, int z) {
    const auto m = [](int v) { return static_cast<std::uint64_t>(static_cast<std::uint32_t>(v)) & 0x1FFFFF; };
    return m(x) | (m(y) << 21) | (m(z) << 42);
  }
  std::uint64_t key(const Vec3& p) const {
    const Eigen::Vector3i c = coords(p);
    return pack(c.x(), c.y(), c.z());
  }

  double cell_;
  std::unordered_map<std::uint64_t, std::vector<Eigen::Index>> cells_;
};

}  // namespace

double transmittance_at_point(const Vec3& p, const GaussianSet& gaussians, int top_k, double d_max,
                              std::vector<Eigen::Index>* selected, bool restrict_to_touch_set) {
  std::vector<Mat3> inverses(static_cast<std::size_t>(gaussians.size()));
  const auto candidates = candidates_in_ball(p, gaussians, d_max, restrict_to_touch_set);
  for (const Eigen::Index i : candidates)
    inverses[static_cast<std::size_t>(i)] = influence_inverse(gaussians, i);
  const auto kept = select_top_k(p, gaussians, candidates, top_k, inverses);
  if (selected) {
    selected->clear();
    for (const Candidate& c : kept) selected->push_back(c.index);
  }
  if (kept.empty()) return 1.0;
  double sum = 0;
  for (const Candidate& c : kept) sum += 1.0 - c.influence;
  return sum / static_cast<double>(kept.size());
}

TransmittanceLossResult transmittance_loss(const TouchPointSet& touch_points,
                                           const GaussianSet& gaussians, int top_k, double d_max,
                                           bool restrict_to_touch_set) {
  const Eigen::Index n_points = touch_points.size();
  if (n_points == 0) throw EmptyTouchSetError("transmittance_loss: no touch points");
  const Eigen::Index n = gaussians.size();

  const MeanGrid grid(gaussians, d_max);

  // Candidate lists per point, then covariance inverses for every Gaussian
  // that appears in at least one list.
  std::vector<std::vector<Eigen::Index>> per_point(static_cast<std::size_t>(n_points));
  std::vector<char> marked(static_cast<std::size_t>(n), 0);
  for (Eigen::Index pi = 0; pi < n_points; ++pi) {
    const Vec3 p = touch_points.points.col(pi);
    auto& list = per_point[static_cast<std::size_t>(pi)];
    grid.gather(p, list);
    std::erase_if(list, [&](Eigen::Index i) {
      if (restrict_to_touch_set && gaussians.set_tag[static_cast<std::size_t>(i)] != SetTag::kTouch)
        return true;
      return (gaussians.means.col(i) - p).norm() > d_max;
    });
    for (const Eigen::Index i : list) marked[static_cast<std::size_t>(i)] = 1;
  }

  std::vector<Mat3> inverses(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      if (marked[i]) inverses[i] = influence_inverse(gaussians, static_cast<Eigen::Index>(i));
  });

  // Per-point transmittance and gradient pieces (selection held constant).
  struct Piece {
    Eigen::Index index;
    Vec3 d_mean;
    Mat3 d_sigma;
    double d_opacity;  // w.r.t. sigmoid value
  };
  std::vector<double> t_hat(static_cast<std::size_t>(n_points), 1.0);
  std::vector<std::vector<Piece>> pieces(static_cast<std::size_t>(n_points));
  const double inv_p = 1.0 / static_cast<double>(n_points);

  parallel_for(static_cast<std::size_t>(n_points), [&](std::size_t begin, std::size_t end) {
    for (std::size_t pi = begin; pi < end; ++pi) {
      const Vec3 p = touch_points.points.col(static_cast<Eigen::Index>(pi));
      const auto kept = select_top_k(p, gaussians, per_point[pi], top_k, inverses);
      if (kept.empty()) continue;
      const double inv_k = 1.0 / static_cast<double>(kept.size());
      double sum = 0;
      for (const Candidate& c : kept) {
        const Eigen::Index i = c.index;
        const Vec3 delta = p - gaussians.means.col(i);
        const Mat3& inv = inverses[static_cast<std::size_t>(i)];
        const Vec3 u = inv * delta;
        const double f = std::exp(-0.5 * delta.dot(u));
        const double opacity = gaussians.opacity(i);
        sum += 1.0 - f * opacity;

        // d L_T / d (f * alpha) = -inv_p * inv_k for every kept Gaussian.
        const double coeff = -inv_p * inv_k;
        Piece piece;
        piece.index = i;
        piece.d_opacity = coeff * f;
        const double d_f = coeff * opacity;
        piece.d_mean = d_f * f * u;  // d f / d mean = f * inv * (p - mean)
        piece.d_sigma = d_f * 0.5 * f * (u * u.transpose());
        pieces[pi].push_back(piece);
      }
      t_hat[pi] = sum * inv_k;
    }
  });

  // Deterministic merge in point order, then one covariance chain per
  // Gaussian.
  Mat3X d_means = Mat3X::Zero(3, n);
  std::vector<Mat3> d_sigmas(static_cast<std::size_t>(n), Mat3::Zero());
  VecX d_opacity = VecX::Zero(n);
  std::vector<char> touched(static_cast<std::size_t>(n), 0);
  double loss = 0;
  for (std::size_t pi = 0; pi < static_cast<std::size_t>(n_points); ++pi) {
    loss += t_hat[pi] * inv_p;
    for (const Piece& piece : pieces[pi]) {
      const std::size_t i = static_cast<std::size_t>(piece.index);
      touched[i] = 1;
      d_means.col(piece.index) += piece.d_mean;
      d_sigmas[i] += piece.d_sigma;
      d_opacity[piece.index] += piece.d_opacity;
    }
  }

  TransmittanceLossResult out;
  out.loss = loss;
  out.grads = GradientSet::zeros(n);
  out.grads.means = d_means;
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      if (!touched[i]) continue;
      const Eigen::Index gi = static_cast<Eigen::Index>(i);
      const double opacity = gaussians.opacity(gi);
      out.grads.opacity_logits[gi] = d_opacity[gi] * opacity * (1.0 - opacity);
      Vec4 dq;
      Vec3 dls;
      covariance_backward<double>(d_sigmas[i], gaussians.rotations.col(gi),
                                  gaussians.log_scales.col(gi), dq, dls);
      out.grads.rotations.col(gi) = dq;
      out.grads.log_scales.col(gi) = dls;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Sobel 5x5
// ---------------------------------------------------------------------------

namespace {

constexpr double kSmooth[5] = {1, 4, 6, 4, 1};
constexpr double kDeriv[5] = {-1, -2, 0, 2, 1};

inline Eigen::Index clamp_index(Eigen::Index v, Eigen::Index n) {
  return std::max<Eigen::Index>(0, std::min(v, n - 1));
}

void check_sobel_input(const Image1& image) {
  if (image.rows() < 5 || image.cols() < 5)
    throw ImageTooSmallError("sobel_gradients_5x5: image must be at least 5x5");
}

}  // namespace

void sobel_gradients_5x5(const Image1& image, Image1& gx, Image1& gy) {
  check_sobel_input(image);
  const Eigen::Index h = image.rows(), w = image.cols();

  // Separable passes; per-coordinate replicate clamping matches the direct
  // 25-tap convolution exactly.
  // The derivative taps are evaluated as paired differences so constant
  // images yield exactly zero.
  Image1 dx(h, w), sx(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      double s = 0;
      for (int k = -2; k <= 2; ++k) s += kSmooth[k + 2] * image(y, clamp_index(x + k, w));
      sx(y, x) = s;
      dx(y, x) = 2.0 * (image(y, clamp_index(x + 1, w)) - image(y, clamp_index(x - 1, w))) +
                 (image(y, clamp_index(x + 2, w)) - image(y, clamp_index(x - 2, w)));
    }
  gx.resize(h, w);
  gy.resize(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      double s = 0;
      for (int k = -2; k <= 2; ++k) s += kSmooth[k + 2] * dx(clamp_index(y + k, h), x);
      gx(y, x) = s;
      gy(y, x) = 2.0 * (sx(clamp_index(y + 1, h), x) - sx(clamp_index(y - 1, h), x)) +
                 (sx(clamp_index(y + 2, h), x) - sx(clamp_index(y - 2, h), x));
    }
}

void sobel_gradients_5x5(const Image3& image, Image1& gx, Image1& gy) {
  sobel_gradients_5x5(luminance(image), gx, gy);
}

Image1 sobel_adjoint_5x5(const Image1& d_out, bool horizontal) {
  const Eigen::Index h = d_out.rows(), w = d_out.cols();
  Image1 out = Image1::Zero(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      const double g = d_out(y, x);
      if (g == 0.0) continue;
      for (int u = -2; u <= 2; ++u)
        for (int v = -2; v <= 2; ++v) {
          const double weight =
              horizontal ? kSmooth[u + 2] * kDeriv[v + 2] : kDeriv[u + 2] * kSmooth[v + 2];
          out(clamp_index(y + u, h), clamp_index(x + v, w)) += weight * g;
        }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Distance transform and proximity mask
// ---------------------------------------------------------------------------

namespace {

constexpr double kEdtInf = 1e20;

// 1D squared distance transform (lower envelope of parabolas).
void dt_1d(const double* f, Eigen::Index n, double* d, int* v, double* z) {
  int k = 0;
  v[0] = 0;
  z[0] = -kEdtInf;
  z[1] = kEdtInf;
  for (Eigen::Index q = 1; q < n; ++q) {
    double s;
    while (true) {
      const double qq = static_cast<double>(q), vk = static_cast<double>(v[k]);
      s = ((f[q] + qq * qq) - (f[v[k]] + vk * vk)) / (2 * qq - 2 * vk);
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = static_cast<int>(q);
    z[k] = s;
    z[k + 1] = kEdtInf;
  }
  k = 0;
  for (Eigen::Index q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double dq = static_cast<double>(q) - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

Image1 squared_distance_transform(const MaskImage& seeds) {
  const Eigen::Index h = seeds.rows(), w = seeds.cols();
  Image1 dist(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) dist(y, x) = seeds(y, x) ? 0.0 : kEdtInf;

  const Eigen::Index n_max = std::max(h, w);
  std::vector<double> f(static_cast<std::size_t>(n_max)), d(static_cast<std::size_t>(n_max)),
      z(static_cast<std::size_t>(n_max) + 1);
  std::vector<int> v(static_cast<std::size_t>(n_max));

  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) f[static_cast<std::size_t>(x)] = dist(y, x);
    dt_1d(f.data(), w, d.data(), v.data(), z.data());
    for (Eigen::Index x = 0; x < w; ++x) dist(y, x) = d[static_cast<std::size_t>(x)];
  }
  for (Eigen::Index x = 0; x < w; ++x) {
    for (Eigen::Index y = 0; y < h; ++y) f[static_cast<std::size_t>(y)] = dist(y, x);
    dt_1d(f.data(), h, d.data(), v.data(), z.data());
    for (Eigen::Index y = 0; y < h; ++y) dist(y, x) = d[static_cast<std::size_t>(y)];
  }
  return dist;
}

ProximityMask proximity_mask(const TouchPointSet& touch_points, const Camera& camera,
                             const Image1& rendered_depth, double sigma_mask,
                             MaskVariant variant) {
  camera.validate();
  const Eigen::Index h = camera.height, w = camera.width;
  if (rendered_depth.rows() != h || rendered_depth.cols() != w)
    throw ShapeMismatchError("proximity_mask: depth shape does not match camera");

  ProximityMask out;
  out.variant = variant;

  MaskImage seeds = MaskImage::Constant(h, w, false);
  bool any = false;
  constexpr double kOcclusionMargin = 0.05;
  for (Eigen::Index pi = 0; pi < touch_points.size(); ++pi) {
    const Vec3 p_cam = camera.to_camera(touch_points.points.col(pi));
    if (p_cam.z() <= kNearPlane) continue;
    const Vec2 uv = camera.project(p_cam);
    const Eigen::Index px = static_cast<Eigen::Index>(std::lround(uv.x()));
    const Eigen::Index py = static_cast<Eigen::Index>(std::lround(uv.y()));
    if (px < 0 || px >= w || py < 0 || py >= h) continue;
    if (p_cam.z() > rendered_depth(py, px) + kOcclusionMargin) continue;  // occluded touch
    seeds(py, px) = true;
    any = true;
  }

  if (!any) {
    out.weights = Image1::Constant(h, w, 1.0);
    return out;
  }

  const Image1 dist_sq = squared_distance_transform(seeds);
  out.weights.resize(h, w);
  if (variant == MaskVariant::kDecay) {
    if (sigma_mask <= 0.0) {
      out.weights = (dist_sq > 0.0).cast<double>();
    } else {
      out.weights = 1.0 - (-dist_sq / (2.0 * sigma_mask * sigma_mask)).exp();
    }
  } else {
    out.weights = (dist_sq > sigma_mask * sigma_mask).cast<double>();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Edge-aware smoothness
// ---------------------------------------------------------------------------

SmoothnessResult edge_aware_smoothness(const Image1& depth, const Image3& image, double beta,
                                       const ProximityMask& mask) {
  if (depth.rows() != image.height() || depth.cols() != image.width())
    throw ShapeMismatchError("edge_aware_smoothness: depth and image shapes differ");
  if (mask.weights.rows() != depth.rows() || mask.weights.cols() != depth.cols())
    throw ShapeMismatchError("edge_aware_smoothness: mask shape differs");

  Image1 gx_d, gy_d, gx_i, gy_i;
  sobel_gradients_5x5(depth, gx_d, gy_d);
  sobel_gradients_5x5(image, gx_i, gy_i);

  const double inv_n = 1.0 / static_cast<double>(depth.size());
  const Image1 wx = mask.weights * (-beta * gx_i.abs()).exp();
  const Image1 wy = mask.weights * (-beta * gy_i.abs()).exp();

  SmoothnessResult out;
  out.loss = inv_n * (wx * gx_d.abs() + wy * gy_d.abs()).sum();
  out.d_depth = sobel_adjoint_5x5(inv_n * wx * gx_d.sign(), /*horizontal=*/true) +
                sobel_adjoint_5x5(inv_n * wy * gy_d.sign(), /*horizontal=*/false);
  return out;
}

}  // namespace tsplat
