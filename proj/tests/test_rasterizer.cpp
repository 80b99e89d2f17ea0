#include <doctest.h>

#include <random>

#include "support/oracles.hpp"
#include "support/test_util.hpp"
#include "tsplat/rasterizer.hpp"

using namespace tsplat;

namespace {

GaussianSet single_gaussian(const Vec3& mean, double opacity_logit, const Vec3& dc_color,
                            double log_scale = std::log(0.05)) {
  GaussianSet g;
  g.resize(1);
  g.means.col(0) = mean;
  g.rotations.col(0) = Vec4(1, 0, 0, 0);
  g.log_scales.col(0).setConstant(log_scale);
  g.opacity_logits[0] = opacity_logit;
  g.sh_coeffs.col(0).setZero();
  for (int c = 0; c < 3; ++c) g.sh_coeffs(c * 16, 0) = (dc_color[c] - 0.5) / kSh0;
  return g;
}

}  // namespace

TEST_CASE("single opaque gaussian composites with the 0.99 clamp") {
  Camera cam;
  cam.width = cam.height = 21;
  cam.fx = cam.fy = 30;
  cam.cx = cam.cy = 10;
  cam.world_to_camera = Mat4::Identity();

  // Center pixel (10,10); logit 40 -> sigmoid == 1 numerically; a tight but
  // non-degenerate footprint keeps f2d at the center exactly 1.
  const Vec3 color(0.8, 0.4, 0.6);
  GaussianSet g = single_gaussian(Vec3(0, 0, 2), 40.0, color, std::log(0.02));
  RasterizeOptions opt;
  opt.background = Vec3(0.1, 0.2, 0.3);
  const RenderOutput out = rasterize(g, cam, opt);

  for (int c = 0; c < 3; ++c)
    CHECK(out.color.ch[c](10, 10) ==
          doctest::Approx(0.99 * color[c] + 0.01 * opt.background[c]).epsilon(1e-9));
  CHECK(out.depth(10, 10) == doctest::Approx(0.99 * 2.0).epsilon(1e-9));
  CHECK(out.acc_alpha(10, 10) == doctest::Approx(0.99).epsilon(1e-9));
  CHECK(out.contrib_count(10 * 21 + 10) == 1);
}

TEST_CASE("two coincident gaussians composite front to back") {
  Camera cam;
  cam.width = cam.height = 11;
  cam.fx = cam.fy = 20;
  cam.cx = cam.cy = 5;
  cam.world_to_camera = Mat4::Identity();

  GaussianSet g;
  g.resize(2);
  for (int i = 0; i < 2; ++i) {
    g.means.col(i) = Vec3(0, 0, 2 + i * 0.5);
    g.rotations.col(i) = Vec4(1, 0, 0, 0);
    g.log_scales.col(i).setConstant(std::log(0.02));
    g.opacity_logits[i] = 0.0;  // sigmoid = 0.5
    g.sh_coeffs.col(i).setZero();
  }
  const Vec3 c1(0.9, 0.1, 0.1), c2(0.1, 0.9, 0.2);
  for (int c = 0; c < 3; ++c) {
    g.sh_coeffs(c * 16, 0) = (c1[c] - 0.5) / kSh0;
    g.sh_coeffs(c * 16, 1) = (c2[c] - 0.5) / kSh0;
  }
  RasterizeOptions opt;
  opt.background = Vec3(1, 1, 1);
  const RenderOutput out = rasterize(g, cam, opt);

  // f2d = 1 at the shared center: I = 0.5 c1 + 0.25 c2 + 0.25 bg.
  for (int c = 0; c < 3; ++c)
    CHECK(out.color.ch[c](5, 5) ==
          doctest::Approx(0.5 * c1[c] + 0.25 * c2[c] + 0.25).epsilon(1e-9));
  CHECK(out.acc_alpha(5, 5) == doctest::Approx(0.75).epsilon(1e-9));
  // Contribution list sorted by ascending depth.
  REQUIRE(out.contrib_count(5 * 11 + 5) == 2);
  CHECK(out.contribs[out.offsets[5 * 11 + 5]].index == 0);
}

TEST_CASE("tiled rasterizer matches the brute-force compositor") {
  for (unsigned seed = 0; seed < 8; ++seed) {
    const GaussianSet g = testutil::random_scene(20 + static_cast<int>(seed) * 10, 100 + seed);
    const Camera cam = testutil::test_camera(32, 32);
    RasterizeOptions opt;
    opt.background = Vec3(0.2, 0.1, 0.4);
    const RenderOutput ours = rasterize(g, cam, opt);
    const auto ref = oracle::brute_force_render(g, cam, opt.background);
    for (int c = 0; c < 3; ++c)
      CHECK((ours.color.ch[c] - ref.color.ch[c]).abs().maxCoeff() <= 1e-6);
    CHECK((ours.depth - ref.depth).abs().maxCoeff() <= 1e-6);
    CHECK((ours.acc_alpha - ref.acc_alpha).abs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("storage order permutation leaves the render unchanged") {
  const GaussianSet g = testutil::random_scene(40, 77);
  const Camera cam = testutil::test_camera(32, 32);
  const RenderOutput a = rasterize(g, cam);

  std::vector<Eigen::Index> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937 rng(5);
  std::shuffle(perm.begin(), perm.end(), rng);
  const GaussianSet shuffled = g.subset(perm);
  const RenderOutput b = rasterize(shuffled, cam);

  for (int c = 0; c < 3; ++c)
    CHECK((a.color.ch[c] - b.color.ch[c]).abs().maxCoeff() <= 1e-12);
  CHECK((a.depth - b.depth).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("render_depth_only equals the depth channel of rasterize") {
  const GaussianSet g = testutil::random_scene(60, 31);
  const Camera cam = testutil::test_camera(40, 40);
  const RenderOutput full = rasterize(g, cam);
  const DepthRender depth = render_depth_only(g, cam);
  CHECK((full.depth - depth.depth).abs().maxCoeff() == 0.0);
  CHECK((full.acc_alpha - depth.acc_alpha).abs().maxCoeff() == 0.0);
}

TEST_CASE("empty foreground yields zero depth and acc_alpha") {
  GaussianSet g = single_gaussian(Vec3(0, 0, -5), 0.0, Vec3(1, 0, 0));  // behind camera
  const Camera cam = testutil::test_camera(16, 16);
  const DepthRender depth = render_depth_only(g, cam);
  CHECK(depth.depth.abs().maxCoeff() == 0.0);
  CHECK(depth.acc_alpha.abs().maxCoeff() == 0.0);
}

TEST_CASE("opaque wall depth approximates acc_alpha-weighted plane depth") {
  // A dense sheet of Gaussians at z = 2 in camera space.
  GaussianSet g;
  const int grid = 15;
  g.resize(grid * grid);
  int idx = 0;
  for (int i = 0; i < grid; ++i)
    for (int j = 0; j < grid; ++j, ++idx) {
      g.means.col(idx) = Vec3(-0.7 + 0.1 * i, -0.7 + 0.1 * j, 2.0);
      g.rotations.col(idx) = Vec4(1, 0, 0, 0);
      g.log_scales.col(idx).setConstant(std::log(0.06));
      g.opacity_logits[idx] = 6.0;
      g.sh_coeffs.col(idx).setZero();
    }
  Camera cam;
  cam.width = cam.height = 33;
  cam.fx = cam.fy = 40;
  cam.cx = cam.cy = 16;
  cam.world_to_camera = Mat4::Identity();
  const RenderOutput out = rasterize(g, cam);
  const double center_depth = out.depth(16, 16);
  const double acc = out.acc_alpha(16, 16);
  CHECK(center_depth == doctest::Approx(2.0 * acc).epsilon(0.01));
}

TEST_CASE("zero cotangents give exactly zero gradients") {
  const GaussianSet g = testutil::random_scene(15, 3);
  const Camera cam = testutil::test_camera(24, 24);
  const RenderOutput out = rasterize(g, cam);
  const Image3 zero_c(24, 24, 0.0);
  const Image1 zero_d = Image1::Zero(24, 24);
  const BackwardResult back = rasterize_backward(g, cam, out, zero_c, zero_d);
  CHECK(back.grads.means.cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.grads.rotations.cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.grads.log_scales.cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.grads.opacity_logits.cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.grads.sh_coeffs.cwiseAbs().maxCoeff() == 0.0);
}

namespace {

// Weighted-projection loss of the render; cotangents fixed per seed.
struct RenderLoss {
  Camera cam;
  Image3 wc;
  Image1 wd;
  RasterizeOptions opt;

  RenderLoss(const Camera& camera, unsigned seed) : cam(camera) {
    std::mt19937 rng(seed);
    wc = Image3(cam.height, cam.width);
    wd = Image1(cam.height, cam.width);
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x) {
        for (int c = 0; c < 3; ++c) wc.ch[c](y, x) = testutil::uniform(rng, -1, 1);
        wd(y, x) = testutil::uniform(rng, -0.5, 0.5);
      }
    opt.background = Vec3(0.3, 0.3, 0.3);
  }

  double operator()(const GaussianSet& g) const {
    const RenderOutput out = rasterize(g, cam, opt);
    double loss = 0;
    for (int c = 0; c < 3; ++c) loss += (out.color.ch[c] * wc.ch[c]).sum();
    loss += (out.depth * wd).sum();
    return loss;
  }

  std::size_t signature(const GaussianSet& g) const {
    return testutil::render_signature(rasterize(g, cam, opt));
  }
};

}  // namespace

TEST_CASE("analytic gradients match central finite differences") {
  testutil::GradCheckStats stats;
  for (unsigned seed = 0; seed < 3; ++seed) {
    const GaussianSet scene = testutil::random_scene(8, 40 + seed);
    const Camera cam = testutil::test_camera(24, 24);
    const RenderLoss loss(cam, 900 + seed);

    const RenderOutput out = rasterize(scene, cam, loss.opt);
    Image3 wc = loss.wc;
    const BackwardResult back = rasterize_backward(scene, cam, out, wc, loss.wd);

    for (const auto& p : testutil::all_params(scene)) {
      const auto fd = testutil::central_difference(
          scene, p, [&](const GaussianSet& s) { return loss(s); },
          [&](const GaussianSet& s) { return loss.signature(s); });
      if (!fd.usable) {
        ++stats.skipped;
        continue;
      }
      ++stats.checked;
      const double analytic = testutil::analytic_entry(back.grads, p);
      if (!testutil::grad_matches(analytic, fd.value)) {
        ++stats.failed;
        CAPTURE(static_cast<int>(p.kind));
        CAPTURE(p.gaussian);
        CAPTURE(p.component);
        CHECK(analytic == doctest::Approx(fd.value).epsilon(1e-4));
      }
    }
  }
  CHECK(stats.failed == 0);
  CHECK(stats.checked > 500);  // the skip guard must not eat the test
}

TEST_CASE("mean depth loss gradients match finite differences") {
  const GaussianSet scene = testutil::random_scene(10, 55);
  const Camera cam = testutil::test_camera(20, 20);
  RasterizeOptions opt;

  const auto mean_depth = [&](const GaussianSet& s) {
    return rasterize(s, cam, opt).depth.mean();
  };
  const RenderOutput out = rasterize(scene, cam, opt);
  const Image3 wc(20, 20, 0.0);
  Image1 wd = Image1::Constant(20, 20, 1.0 / (20.0 * 20.0));
  const BackwardResult back = rasterize_backward(scene, cam, out, wc, wd);

  int checked = 0;
  for (const auto& p : testutil::all_params(scene, 0)) {
    const auto fd = testutil::central_difference(
        scene, p, mean_depth,
        [&](const GaussianSet& s) { return testutil::render_signature(rasterize(s, cam, opt)); });
    if (!fd.usable) continue;
    ++checked;
    const double analytic = testutil::analytic_entry(back.grads, p);
    CHECK(std::abs(analytic - fd.value) <=
          1e-6 + 1e-3 * std::max(std::abs(analytic), std::abs(fd.value)));
  }
  CHECK(checked > 80);
}

TEST_CASE("acc_alpha is monotone in any opacity") {
  GaussianSet scene = testutil::random_scene(12, 9);
  const Camera cam = testutil::test_camera(16, 16);
  const double before = rasterize(scene, cam).acc_alpha.sum();
  for (int i = 0; i < 12; ++i) {
    GaussianSet probe = scene;
    probe.opacity_logits[i] += 0.3;
    CHECK(rasterize(probe, cam).acc_alpha.sum() >= before - 1e-12);
  }
}
