#include "tsplat/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tsplat/threading.hpp"

namespace tsplat {

namespace {

// Radius of the screen-space region where f2d * opacity can exceed the
// compositing cutoff. Binning with this radius makes tile culling lossless,
// so the tiled compositor matches a cutoff-only brute-force pass exactly.
double support_radius(const Mat2& cov2d, double opacity) {
  if (!(opacity * 255.0 > 1.0)) return 0.0;
  const double a = cov2d(0, 0), b = cov2d(0, 1), c = cov2d(1, 1);
  const double half_trace = 0.5 * (a + c);
  const double disc = std::sqrt(std::max(0.0, half_trace * half_trace - (a * c - b * b)));
  const double lam_max = half_trace + disc;
  return std::sqrt(2.0 * std::log(255.0 * opacity)) * std::sqrt(std::max(0.0, lam_max));
}

ProjectionCache project_all(const GaussianSet& g, const Camera& cam, int sh_degree) {
  const Eigen::Index n = g.size();
  ProjectionCache c;
  c.valid.assign(static_cast<std::size_t>(n), 0);
  c.means_cam = Mat3X::Zero(3, n);
  c.means2d = Eigen::Matrix2Xd::Zero(2, n);
  c.cov2d.assign(static_cast<std::size_t>(n), Mat2::Zero());
  c.cov2d_inv.assign(static_cast<std::size_t>(n), Mat2::Zero());
  c.depths = VecX::Zero(n);
  c.opacities = VecX::Zero(n);
  c.colors = Mat3X::Zero(3, n);
  c.color_clamped.assign(static_cast<std::size_t>(n), {0, 0, 0});
  c.radius = VecX::Zero(n);

  const Vec3 cam_center = cam.center();
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t begin, std::size_t end) {
    double basis[kShBasisSize];
    for (std::size_t i = begin; i < end; ++i) {
      const Eigen::Index gi = static_cast<Eigen::Index>(i);
      const Mat3 sigma = g.covariance(gi);
      const auto proj = project_gaussian(g.means.col(gi), sigma, cam);
      if (!proj) continue;
      c.valid[i] = 1;
      c.means_cam.col(gi) = proj->mean_cam;
      c.means2d.col(gi) = proj->mean2d;
      c.cov2d[i] = proj->cov2d;
      c.cov2d_inv[i] = proj->cov2d.inverse();
      c.depths[gi] = proj->depth;
      const double opacity = sigmoid(g.opacity_logits[gi]);
      c.opacities[gi] = opacity;
      c.radius[gi] = support_radius(proj->cov2d, opacity);

      const Vec3 dir = (g.means.col(gi) - cam_center).normalized();
      sh_basis(dir, sh_degree, basis);
      const int nb = sh_basis_size(sh_degree);
      for (int ch = 0; ch < 3; ++ch) {
        double v = 0.5;
        for (int k = 0; k < nb; ++k) v += g.sh_coeffs(ch * kShBasisSize + k, gi) * basis[k];
        c.color_clamped[i][static_cast<std::size_t>(ch)] = v < 0.0 ? 1 : 0;
        c.colors(ch, gi) = std::max(0.0, v);
      }
    }
  });
  return c;
}

// Indices of renderable Gaussians sorted by (depth, index).
std::vector<std::int32_t> depth_order(const ProjectionCache& c) {
  std::vector<std::int32_t> order;
  order.reserve(c.valid.size());
  for (std::size_t i = 0; i < c.valid.size(); ++i)
    if (c.valid[i] && c.radius[static_cast<Eigen::Index>(i)] > 0.0)
      order.push_back(static_cast<std::int32_t>(i));
  std::sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
    const double da = c.depths[a], db = c.depths[b];
    return da < db || (da == db && a < b);
  });
  return order;
}

struct TileGrid {
  int width = 0, height = 0, tile_size = 16, tiles_x = 0, tiles_y = 0;

  TileGrid(int w, int h, int ts)
      : width(w), height(h), tile_size(ts), tiles_x((w + ts - 1) / ts), tiles_y((h + ts - 1) / ts) {}

  int count() const { return tiles_x * tiles_y; }
  int x0(int t) const { return (t % tiles_x) * tile_size; }
  int y0(int t) const { return (t / tiles_x) * tile_size; }
  int x1(int t) const { return std::min(width, x0(t) + tile_size); }
  int y1(int t) const { return std::min(height, y0(t) + tile_size); }
};

std::vector<std::vector<std::int32_t>> bin_to_tiles(const ProjectionCache& c,
                                                    const std::vector<std::int32_t>& order,
                                                    const TileGrid& grid,
                                                    std::vector<char>& binned) {
  std::vector<std::vector<std::int32_t>> lists(static_cast<std::size_t>(grid.count()));
  binned.assign(c.valid.size(), 0);
  for (const std::int32_t idx : order) {
    const double r = c.radius[idx];
    const double mx = c.means2d(0, idx), my = c.means2d(1, idx);
    if (mx + r < 0 || my + r < 0 || mx - r > grid.width - 1 || my - r > grid.height - 1) continue;
    const int tx0 = std::max(0, static_cast<int>(std::floor((mx - r) / grid.tile_size)));
    const int ty0 = std::max(0, static_cast<int>(std::floor((my - r) / grid.tile_size)));
    const int tx1 = std::min(grid.tiles_x - 1, static_cast<int>(std::floor((mx + r) / grid.tile_size)));
    const int ty1 = std::min(grid.tiles_y - 1, static_cast<int>(std::floor((my + r) / grid.tile_size)));
    if (tx0 > tx1 || ty0 > ty1) continue;
    binned[static_cast<std::size_t>(idx)] = 1;
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx)
        lists[static_cast<std::size_t>(ty * grid.tiles_x + tx)].push_back(idx);
  }
  return lists;
}

struct TileForward {
  std::vector<Contribution> entries;
  std::vector<std::uint32_t> pixel_counts;  // tile-local, row-major within tile
};

enum class Pass { kFull, kDepthOnly };

template <Pass pass>
void composite_tile(const ProjectionCache& cache, const std::vector<std::int32_t>& list,
                    const TileGrid& grid, int tile, const RasterizeOptions& opt,
                    Image3* color, Image1& depth, Image1& acc_alpha,
                    std::array<MaskImage, 3>* clamp_mask, TileForward* record) {
  const int px0 = grid.x0(tile), px1 = grid.x1(tile);
  const int py0 = grid.y0(tile), py1 = grid.y1(tile);
  if (record) record->pixel_counts.assign(static_cast<std::size_t>((px1 - px0) * (py1 - py0)), 0);

  std::size_t local_pixel = 0;
  for (int y = py0; y < py1; ++y) {
    for (int x = px0; x < px1; ++x, ++local_pixel) {
      double transmittance = 1.0;
      Vec3 color_sum = Vec3::Zero();
      double depth_sum = 0.0;
      std::uint32_t count = 0;
      for (const std::int32_t idx : list) {
        const double dx = x - cache.means2d(0, idx);
        const double dy = y - cache.means2d(1, idx);
        const double r = cache.radius[idx];
        if (std::abs(dx) > r || std::abs(dy) > r) continue;
        const Mat2& ic = cache.cov2d_inv[static_cast<std::size_t>(idx)];
        const double q = ic(0, 0) * dx * dx + 2.0 * ic(0, 1) * dx * dy + ic(1, 1) * dy * dy;
        const double f2d = std::exp(-0.5 * q);
        const double alpha_raw = f2d * cache.opacities[idx];
        if (!(alpha_raw > kAlphaCutoff)) continue;
        const double a = std::min(alpha_raw, kAlphaClamp);
        const double next_t = transmittance * (1.0 - a);
        if (next_t < kEarlyStopTransmittance) break;
        const double w = a * transmittance;
        if constexpr (pass == Pass::kFull) color_sum += w * cache.colors.col(idx);
        depth_sum += w * cache.depths[idx];
        transmittance = next_t;
        if (record) {
          record->entries.push_back({idx, f2d, a});
          ++count;
        }
      }
      depth(y, x) = depth_sum;
      acc_alpha(y, x) = 1.0 - transmittance;
      if constexpr (pass == Pass::kFull) {
        color_sum += transmittance * opt.background;
        for (int ch = 0; ch < 3; ++ch) {
          const bool over = color_sum[ch] > 1.0;
          (*clamp_mask)[static_cast<std::size_t>(ch)](y, x) = over;
          color->ch[static_cast<std::size_t>(ch)](y, x) = over ? 1.0 : color_sum[ch];
        }
      }
      if (record) record->pixel_counts[local_pixel] = count;
    }
  }
}

}  // namespace

RenderOutput rasterize(const GaussianSet& gaussians, const Camera& camera,
                       const RasterizeOptions& options) {
  camera.validate();
  const int w = camera.width, h = camera.height;
  RenderOutput out;
  out.options = options;
  out.color = Image3(h, w);
  out.depth = Image1::Zero(h, w);
  out.acc_alpha = Image1::Zero(h, w);
  for (auto& m : out.color_clamped) m = MaskImage::Constant(h, w, false);

  out.cache = project_all(gaussians, camera, options.sh_degree);
  const auto order = depth_order(out.cache);
  const TileGrid grid(w, h, options.tile_size);
  out.tiles_x = grid.tiles_x;
  out.tiles_y = grid.tiles_y;
  out.tile_lists = bin_to_tiles(out.cache, order, grid, out.cache.binned);

  std::vector<TileForward> per_tile(static_cast<std::size_t>(grid.count()));
  parallel_for(static_cast<std::size_t>(grid.count()), [&](std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t)
      composite_tile<Pass::kFull>(out.cache, out.tile_lists[t], grid, static_cast<int>(t),
                                  options, &out.color, out.depth, out.acc_alpha,
                                  &out.color_clamped, &per_tile[t]);
  });

  // Flatten tile-local contribution records into global per-pixel lists.
  out.offsets.assign(static_cast<std::size_t>(w) * h + 1, 0);
  for (int t = 0; t < grid.count(); ++t) {
    std::size_t local = 0;
    for (int y = grid.y0(t); y < grid.y1(t); ++y)
      for (int x = grid.x0(t); x < grid.x1(t); ++x, ++local)
        out.offsets[static_cast<std::size_t>(y) * w + x + 1] =
            per_tile[static_cast<std::size_t>(t)].pixel_counts[local];
  }
  std::partial_sum(out.offsets.begin(), out.offsets.end(), out.offsets.begin());
  out.contribs.resize(out.offsets.back());
  for (int t = 0; t < grid.count(); ++t) {
    const TileForward& tf = per_tile[static_cast<std::size_t>(t)];
    std::size_t cursor = 0, local = 0;
    for (int y = grid.y0(t); y < grid.y1(t); ++y)
      for (int x = grid.x0(t); x < grid.x1(t); ++x, ++local) {
        const std::uint32_t cnt = tf.pixel_counts[local];
        std::copy_n(tf.entries.begin() + static_cast<std::ptrdiff_t>(cursor), cnt,
                    out.contribs.begin() + out.offsets[static_cast<std::size_t>(y) * w + x]);
        cursor += cnt;
      }
  }
  return out;
}

DepthRender render_depth_only(const GaussianSet& gaussians, const Camera& camera,
                              const RasterizeOptions& options) {
  camera.validate();
  const int w = camera.width, h = camera.height;
  DepthRender out;
  out.depth = Image1::Zero(h, w);
  out.acc_alpha = Image1::Zero(h, w);

  ProjectionCache cache = project_all(gaussians, camera, 0);
  const auto order = depth_order(cache);
  const TileGrid grid(w, h, options.tile_size);
  const auto lists = bin_to_tiles(cache, order, grid, cache.binned);
  parallel_for(static_cast<std::size_t>(grid.count()), [&](std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t)
      composite_tile<Pass::kDepthOnly>(cache, lists[t], grid, static_cast<int>(t), options,
                                       nullptr, out.depth, out.acc_alpha, nullptr, nullptr);
  });
  return out;
}

namespace {

struct ScreenAccum {
  Vec2 dmu2d = Vec2::Zero();
  Mat2 dcov2d = Mat2::Zero();
  double dopacity = 0;  // w.r.t. sigmoid(opacity_logit)
  Vec3 dcolor = Vec3::Zero();
  double ddepth = 0;

  void operator+=(const ScreenAccum& o) {
    dmu2d += o.dmu2d;
    dcov2d += o.dcov2d;
    dopacity += o.dopacity;
    dcolor += o.dcolor;
    ddepth += o.ddepth;
  }
};

}  // namespace

BackwardResult rasterize_backward(const GaussianSet& gaussians, const Camera& camera,
                                  const RenderOutput& render, const Image3& dL_dcolor,
                                  const Image1& dL_ddepth) {
  const int w = camera.width, h = camera.height;
  if (dL_dcolor.height() != h || dL_dcolor.width() != w || dL_ddepth.rows() != h ||
      dL_ddepth.cols() != w)
    throw ShapeMismatchError("rasterize_backward: cotangent shape mismatch");

  const Eigen::Index n = gaussians.size();
  const ProjectionCache& cache = render.cache;
  const RasterizeOptions& opt = render.options;
  const TileGrid grid(w, h, opt.tile_size);

  // Phase 1: per-tile accumulation in screen space. Tiles are processed in
  // parallel into private buffers and merged in fixed tile order below, so
  // the result is independent of the thread count.
  std::vector<std::vector<ScreenAccum>> tile_accums(render.tile_lists.size());
  parallel_for(render.tile_lists.size(), [&](std::size_t begin, std::size_t end) {
    std::vector<std::int32_t> slot_of(static_cast<std::size_t>(n), -1);
    for (std::size_t t = begin; t < end; ++t) {
      const auto& list = render.tile_lists[t];
      if (list.empty()) continue;
      auto& slots = tile_accums[t];
      slots.assign(list.size(), ScreenAccum{});
      for (std::size_t s = 0; s < list.size(); ++s)
        slot_of[static_cast<std::size_t>(list[s])] = static_cast<std::int32_t>(s);

      const int tile = static_cast<int>(t);
      for (int y = grid.y0(tile); y < grid.y1(tile); ++y) {
        for (int x = grid.x0(tile); x < grid.x1(tile); ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * w + x;
          const std::uint32_t beg = render.offsets[p], fin = render.offsets[p + 1];
          if (beg == fin) continue;
          Vec3 wc;
          for (int ch = 0; ch < 3; ++ch)
            wc[ch] = render.color_clamped[static_cast<std::size_t>(ch)](y, x)
                         ? 0.0
                         : dL_dcolor.ch[static_cast<std::size_t>(ch)](y, x);
          const double wd = dL_ddepth(y, x);
          if (wc.isZero(0.0) && wd == 0.0) continue;

          double t_run = 1.0 - render.acc_alpha(y, x);
          Vec3 suffix_c = t_run * opt.background;
          double suffix_d = 0.0;
          for (std::uint32_t k = fin; k-- > beg;) {
            const Contribution& cb = render.contribs[k];
            const std::int32_t idx = cb.index;
            const double a = cb.alpha;
            const double one_minus = 1.0 - a;
            const double t_before = t_run / one_minus;
            ScreenAccum& acc = slots[static_cast<std::size_t>(slot_of[static_cast<std::size_t>(idx)])];

            const double weight = a * t_before;
            acc.dcolor += weight * wc;
            acc.ddepth += weight * wd;

            const Vec3 color = cache.colors.col(idx);
            const double dL_da = wc.dot(t_before * color - suffix_c / one_minus) +
                                 wd * (t_before * cache.depths[idx] - suffix_d / one_minus);
            suffix_c += weight * color;
            suffix_d += weight * cache.depths[idx];
            t_run = t_before;

            const bool clamped = cb.f2d * cache.opacities[idx] > kAlphaClamp;
            if (!clamped) {
              const double dL_df2d = dL_da * cache.opacities[idx];
              acc.dopacity += dL_da * cb.f2d;
              const Vec2 delta(x - cache.means2d(0, idx), y - cache.means2d(1, idx));
              const Vec2 u = cache.cov2d_inv[static_cast<std::size_t>(idx)] * delta;
              const double g = dL_df2d * cb.f2d;
              acc.dmu2d += g * u;
              acc.dcov2d += (0.5 * g) * (u * u.transpose());
            }
          }
        }
      }
      for (const std::int32_t idx : list) slot_of[static_cast<std::size_t>(idx)] = -1;
    }
  });

  std::vector<ScreenAccum> screen(static_cast<std::size_t>(n));
  for (std::size_t t = 0; t < render.tile_lists.size(); ++t) {
    const auto& list = render.tile_lists[t];
    for (std::size_t s = 0; s < list.size(); ++s)
      screen[static_cast<std::size_t>(list[s])] += tile_accums[t][s];
  }

  // Phase 2: chain screen-space gradients to the Gaussian parameters.
  BackwardResult result;
  result.grads = GradientSet::zeros(n);
  result.mean2d_grad_norm = VecX::Zero(n);
  result.visible.assign(static_cast<std::size_t>(n), 0);
  const Vec3 cam_center = camera.center();
  const Mat3 rot = camera.rotation();
  const int nb = sh_basis_size(opt.sh_degree);

  parallel_for(static_cast<std::size_t>(n), [&](std::size_t begin, std::size_t end) {
    double basis[kShBasisSize];
    Vec3 basis_grad[kShBasisSize];
    for (std::size_t i = begin; i < end; ++i) {
      const Eigen::Index gi = static_cast<Eigen::Index>(i);
      if (!cache.valid[i] || !cache.binned[i]) continue;
      result.visible[i] = 1;
      const ScreenAccum& acc = screen[i];

      const double opacity = cache.opacities[gi];
      result.grads.opacity_logits[gi] = acc.dopacity * opacity * (1.0 - opacity);

      // Color: SH coefficients plus the view-direction path into the mean.
      const Vec3 v = gaussians.means.col(gi) - cam_center;
      const double vlen = v.norm();
      const Vec3 dir = v / vlen;
      sh_basis(dir, opt.sh_degree, basis);
      sh_basis_grad(dir, opt.sh_degree, basis_grad);
      Vec3 ddir = Vec3::Zero();
      for (int ch = 0; ch < 3; ++ch) {
        if (cache.color_clamped[i][static_cast<std::size_t>(ch)]) continue;
        const double dc = acc.dcolor[ch];
        if (dc == 0.0) continue;
        for (int k = 0; k < nb; ++k) {
          result.grads.sh_coeffs(ch * kShBasisSize + k, gi) = dc * basis[k];
          ddir += dc * gaussians.sh_coeffs(ch * kShBasisSize + k, gi) * basis_grad[k];
        }
      }
      const Vec3 dmean_color = (ddir - dir * dir.dot(ddir)) / vlen;

      // Geometry: mean2d, depth, and the Jacobian's dependence on the
      // camera-space mean.
      const Vec3 t = cache.means_cam.col(gi);
      const Eigen::Matrix<double, 2, 3> jac = projection_jacobian(camera, t);
      Vec3 dt = jac.transpose() * acc.dmu2d;
      dt.z() += acc.ddepth;

      const Mat3 sigma = gaussians.covariance(gi);
      const Mat3 v_cam = rot * sigma * rot.transpose();
      const double iz = 1.0 / t.z(), iz2 = iz * iz, iz3 = iz2 * iz;
      Eigen::Matrix<double, 2, 3> dj[3];
      dj[0].setZero();
      dj[0](0, 2) = -camera.fx * iz2;
      dj[1].setZero();
      dj[1](1, 2) = -camera.fy * iz2;
      dj[2].setZero();
      dj[2](0, 0) = -camera.fx * iz2;
      dj[2](1, 1) = -camera.fy * iz2;
      dj[2](0, 2) = 2.0 * camera.fx * t.x() * iz3;
      dj[2](1, 2) = 2.0 * camera.fy * t.y() * iz3;
      for (int k = 0; k < 3; ++k) {
        const Mat2 ds = dj[k] * v_cam * jac.transpose() + jac * v_cam * dj[k].transpose();
        dt[k] += (acc.dcov2d.array() * ds.array()).sum();
      }
      result.grads.means.col(gi) = rot.transpose() * dt + dmean_color;

      const Eigen::Matrix<double, 2, 3> m = jac * rot;
      const Mat3 d_sigma = m.transpose() * acc.dcov2d * m;
      Vec4 dq;
      Vec3 dls;
      covariance_backward<double>(d_sigma, gaussians.rotations.col(gi), gaussians.log_scales.col(gi),
                                  dq, dls);
      result.grads.rotations.col(gi) = dq;
      result.grads.log_scales.col(gi) = dls;

      result.mean2d_grad_norm[gi] =
          Vec2(acc.dmu2d.x() * 0.5 * w, acc.dmu2d.y() * 0.5 * h).norm();
    }
  });
  return result;
}

}  // namespace tsplat
