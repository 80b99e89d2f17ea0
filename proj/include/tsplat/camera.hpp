#pragma once

#include <cmath>

#include "tsplat/types.hpp"

namespace tsplat {

// Pinhole camera. Camera space is x-right, y-down, z-forward; depth of a
// camera-space point is its z coordinate. Pixel (ix, iy) samples the image
// plane at continuous coordinate (ix, iy), i.e. u = fx*x/z + cx.
struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  Mat4 world_to_camera = Mat4::Identity();
  int width = 0, height = 0;

  Mat3 rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }

  Vec3 to_camera(const Vec3& p_world) const {
    return rotation() * p_world + translation();
  }

  // Camera center in world coordinates.
  Vec3 center() const { return -rotation().transpose() * translation(); }

  Vec2 project(const Vec3& p_cam) const {
    return {fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy};
  }

  // Lift pixel (u, v) at depth z back to camera space.
  Vec3 backproject(double u, double v, double z) const {
    return {(u - cx) / fx * z, (v - cy) / fy * z, z};
  }

  Mat4 camera_to_world() const {
    Mat4 c2w = Mat4::Identity();
    const Mat3 rt = rotation().transpose();
    c2w.topLeftCorner<3, 3>() = rt;
    c2w.topRightCorner<3, 1>() = -rt * translation();
    return c2w;
  }

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0))
      throw ValidationError("camera: fx and fy must be positive");
    if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height))
      throw ValidationError("camera: principal point outside image");
    const Mat3 r = rotation();
    if (((r * r.transpose()) - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
      throw ValidationError("camera: rotation block is not orthonormal");
    const Vec3 bottom = world_to_camera.bottomLeftCorner<1, 3>().transpose();
    if (bottom.norm() > 1e-12 || std::abs(world_to_camera(3, 3) - 1.0) > 1e-12)
      throw ValidationError("camera: world_to_camera is not a rigid transform");
  }
};

}  // namespace tsplat
