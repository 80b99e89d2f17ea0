#pragma once

#include <array>
#include <cmath>
#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "tsplat/camera.hpp"
#include "tsplat/types.hpp"

namespace tsplat {

inline constexpr double kNearPlane = 0.01;
inline constexpr double kCovInfluenceEps = 1e-9;   // 3D covariance regularizer
inline constexpr double kScreenCovDilation = 0.3;  // screen-space low-pass

// ---------------------------------------------------------------------------
// Quaternions and covariance
// ---------------------------------------------------------------------------

// Quaternions are stored (w, x, y, z) and renormalized at every use.
template <typename Scalar>
Eigen::Matrix<Scalar, 4, 1> normalized_quat(const Eigen::Matrix<Scalar, 4, 1>& q) {
  const Scalar n = q.norm();
  if (n <= Scalar(0)) return Eigen::Matrix<Scalar, 4, 1>(1, 0, 0, 0);
  return q / n;
}

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> rotation_from_quat(const Eigen::Matrix<Scalar, 4, 1>& q_raw) {
  const Eigen::Matrix<Scalar, 4, 1> q = normalized_quat(q_raw);
  const Scalar w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix<Scalar, 3, 3> r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

// Partials of the rotation matrix with respect to the unit quaternion entries.
template <typename Scalar>
std::array<Eigen::Matrix<Scalar, 3, 3>, 4> rotation_quat_partials(
    const Eigen::Matrix<Scalar, 4, 1>& q_unit) {
  const Scalar w = q_unit[0], x = q_unit[1], y = q_unit[2], z = q_unit[3];
  std::array<Eigen::Matrix<Scalar, 3, 3>, 4> d;
  d[0] << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
  d[1] << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
  d[2] << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
  d[3] << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
  return d;
}

// Sigma = R S S^T R^T with S = diag(exp(log_scale)). Symmetric PSD by
// construction for any inputs.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> covariance_from_params(
    const Eigen::Matrix<Scalar, 4, 1>& rotation,
    const Eigen::Matrix<Scalar, 3, 1>& log_scale) {
  const Eigen::Matrix<Scalar, 3, 3> r = rotation_from_quat(rotation);
  const Eigen::Matrix<Scalar, 3, 1> s = log_scale.array().exp().matrix();
  const Eigen::Matrix<Scalar, 3, 3> a = r * s.asDiagonal();
  return a * a.transpose();
}

// Pulls a gradient with respect to Sigma (full-entry convention, symmetric
// input) back to the raw quaternion and log-scale parameters.
template <typename Scalar>
void covariance_backward(const Eigen::Matrix<Scalar, 3, 3>& d_sigma,
                         const Eigen::Matrix<Scalar, 4, 1>& rotation_raw,
                         const Eigen::Matrix<Scalar, 3, 1>& log_scale,
                         Eigen::Matrix<Scalar, 4, 1>& d_rotation_raw,
                         Eigen::Matrix<Scalar, 3, 1>& d_log_scale) {
  const Scalar norm = std::max(rotation_raw.norm(), Scalar(1e-300));
  const Eigen::Matrix<Scalar, 4, 1> q = normalized_quat(rotation_raw);
  const Eigen::Matrix<Scalar, 3, 3> r = rotation_from_quat(rotation_raw);
  const Eigen::Matrix<Scalar, 3, 1> s = log_scale.array().exp().matrix();

  // Sigma = A A^T, A = R diag(s)
  const Eigen::Matrix<Scalar, 3, 3> a = r * s.asDiagonal();
  const Eigen::Matrix<Scalar, 3, 3> d_a = (d_sigma + d_sigma.transpose()) * a;
  for (int k = 0; k < 3; ++k)
    d_log_scale[k] = s[k] * r.col(k).dot(d_a.col(k));

  const Eigen::Matrix<Scalar, 3, 3> d_r = d_a * s.asDiagonal();
  const auto partials = rotation_quat_partials(q);
  Eigen::Matrix<Scalar, 4, 1> d_q_unit;
  for (int i = 0; i < 4; ++i)
    d_q_unit[i] = (d_r.array() * partials[i].array()).sum();
  d_rotation_raw = (d_q_unit - q * q.dot(d_q_unit)) / norm;
}

// ---------------------------------------------------------------------------
// 3D influence (unnormalized Gaussian falloff)
// ---------------------------------------------------------------------------

template <typename Scalar>
Scalar gaussian_influence_3d(const Eigen::Matrix<Scalar, 3, 1>& x,
                             const Eigen::Matrix<Scalar, 3, 1>& mean,
                             const Eigen::Matrix<Scalar, 3, 3>& sigma) {
  Eigen::Matrix<Scalar, 3, 3> reg = sigma;
  reg.diagonal().array() += Scalar(kCovInfluenceEps);
  const Eigen::Matrix<Scalar, 3, 1> delta = x - mean;
  const Eigen::Matrix<Scalar, 3, 1> u = reg.inverse() * delta;
  return std::exp(Scalar(-0.5) * delta.dot(u));
}

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

struct ProjectedGaussian {
  Vec2 mean2d;
  Mat2 cov2d_raw;  // J W Sigma W^T J^T
  Mat2 cov2d;      // raw + 0.3 I
  double depth = 0;
  Vec3 mean_cam;   // camera-space mean, needed by the backward pass
};

// Perspective-projection Jacobian at camera-space point t.
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam, const Vec3& t) {
  const double iz = 1.0 / t.z();
  const double iz2 = iz * iz;
  Eigen::Matrix<double, 2, 3> j;
  j << cam.fx * iz, 0, -cam.fx * t.x() * iz2, 0, cam.fy * iz, -cam.fy * t.y() * iz2;
  return j;
}

// Returns nullopt when the Gaussian is behind the near plane; the caller
// skips it.
inline std::optional<ProjectedGaussian> project_gaussian(const Vec3& mean, const Mat3& sigma,
                                                         const Camera& cam) {
  const Vec3 t = cam.to_camera(mean);
  if (t.z() <= kNearPlane) return std::nullopt;
  ProjectedGaussian out;
  out.mean_cam = t;
  out.depth = t.z();
  out.mean2d = cam.project(t);
  const Eigen::Matrix<double, 2, 3> m = projection_jacobian(cam, t) * cam.rotation();
  out.cov2d_raw = m * sigma * m.transpose();
  out.cov2d = out.cov2d_raw + kScreenCovDilation * Mat2::Identity();
  return out;
}

// ---------------------------------------------------------------------------
// Real spherical harmonics, degree <= 3 (16 basis functions)
// ---------------------------------------------------------------------------

inline constexpr int kShMaxDegree = 3;
inline constexpr int kShBasisSize = 16;  // (3+1)^2
inline constexpr int kShCoeffsPerGaussian = 3 * kShBasisSize;
inline constexpr double kSh0 = 0.28209479177387814;

inline int sh_basis_size(int degree) { return (degree + 1) * (degree + 1); }

namespace sh_detail {
inline constexpr double kC1 = 0.4886025119029199;
inline constexpr double kC2a = 1.0925484305920792;
inline constexpr double kC2b = 0.31539156525252005;
inline constexpr double kC2c = 0.5462742152960396;
inline constexpr double kC3a = 0.5900435899266435;
inline constexpr double kC3b = 2.890611442640554;
inline constexpr double kC3c = 0.4570457994644658;
inline constexpr double kC3d = 0.3731763325901154;
inline constexpr double kC3e = 1.445305721320277;
}  // namespace sh_detail

// Basis values at unit direction d, indexed k = l^2 + l + m.
inline void sh_basis(const Vec3& d, int degree, double* out) {
  using namespace sh_detail;
  const double x = d.x(), y = d.y(), z = d.z();
  out[0] = kSh0;
  if (degree < 1) return;
  out[1] = kC1 * y;
  out[2] = kC1 * z;
  out[3] = kC1 * x;
  if (degree < 2) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  out[4] = kC2a * x * y;
  out[5] = kC2a * y * z;
  out[6] = kC2b * (2 * zz - xx - yy);
  out[7] = kC2a * x * z;
  out[8] = kC2c * (xx - yy);
  if (degree < 3) return;
  out[9] = kC3a * y * (3 * xx - yy);
  out[10] = kC3b * x * y * z;
  out[11] = kC3c * y * (4 * zz - xx - yy);
  out[12] = kC3d * z * (2 * zz - 3 * xx - 3 * yy);
  out[13] = kC3c * x * (4 * zz - xx - yy);
  out[14] = kC3e * z * (xx - yy);
  out[15] = kC3a * x * (xx - 3 * yy);
}

// Basis gradients with respect to the (free, not yet normalized) direction.
inline void sh_basis_grad(const Vec3& d, int degree, Vec3* out) {
  using namespace sh_detail;
  const double x = d.x(), y = d.y(), z = d.z();
  out[0].setZero();
  if (degree < 1) return;
  out[1] = {0, kC1, 0};
  out[2] = {0, 0, kC1};
  out[3] = {kC1, 0, 0};
  if (degree < 2) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  out[4] = {kC2a * y, kC2a * x, 0};
  out[5] = {0, kC2a * z, kC2a * y};
  out[6] = {-2 * kC2b * x, -2 * kC2b * y, 4 * kC2b * z};
  out[7] = {kC2a * z, 0, kC2a * x};
  out[8] = {2 * kC2c * x, -2 * kC2c * y, 0};
  if (degree < 3) return;
  out[9] = {kC3a * 6 * x * y, kC3a * 3 * (xx - yy), 0};
  out[10] = {kC3b * y * z, kC3b * x * z, kC3b * x * y};
  out[11] = {-2 * kC3c * x * y, kC3c * (4 * zz - xx - 3 * yy), 8 * kC3c * y * z};
  out[12] = {-6 * kC3d * x * z, -6 * kC3d * y * z, kC3d * (6 * zz - 3 * xx - 3 * yy)};
  out[13] = {kC3c * (4 * zz - 3 * xx - yy), -2 * kC3c * x * y, 8 * kC3c * x * z};
  out[14] = {2 * kC3e * x * z, -2 * kC3e * y * z, kC3e * (xx - yy)};
  out[15] = {kC3a * 3 * (xx - yy), -kC3a * 6 * x * y, 0};
}

// coeffs holds kShCoeffsPerGaussian values laid out channel-major:
// coeffs[channel*16 + k]. Color is the SH sum plus a 0.5 offset, clamped to
// be non-negative per channel.
inline Vec3 eval_sh_color(const Eigen::Ref<const VecX>& coeffs, const Vec3& view_direction,
                          int degree) {
  double basis[kShBasisSize];
  sh_basis(view_direction, degree, basis);
  const int n = sh_basis_size(degree);
  Vec3 color;
  for (int c = 0; c < 3; ++c) {
    double v = 0.5;
    for (int k = 0; k < n; ++k) v += coeffs[c * kShBasisSize + k] * basis[k];
    color[c] = std::max(0.0, v);
  }
  return color;
}

}  // namespace tsplat
