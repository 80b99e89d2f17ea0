#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tsplat/types.hpp"

namespace tsplat {

struct TriangleMesh {
  Mat3X vertices;              // 3 x V
  Eigen::Matrix3Xi triangles;  // 3 x T

  Eigen::Index vertex_count() const { return vertices.cols(); }
  Eigen::Index triangle_count() const { return triangles.cols(); }

  Vec3 vertex(int tri, int corner) const { return vertices.col(triangles(corner, tri)); }

  // Geometric (unnormalized-winding) unit normal of a triangle.
  Vec3 triangle_normal(int tri) const {
    const Vec3 a = vertex(tri, 0);
    return ((vertex(tri, 1) - a).cross(vertex(tri, 2) - a)).normalized();
  }

  double triangle_area(int tri) const {
    const Vec3 a = vertex(tri, 0);
    return 0.5 * (vertex(tri, 1) - a).cross(vertex(tri, 2) - a).norm();
  }

  Vec3 bbox_min() const { return vertices.rowwise().minCoeff(); }
  Vec3 bbox_max() const { return vertices.rowwise().maxCoeff(); }
  double bbox_diagonal() const { return (bbox_max() - bbox_min()).norm(); }

  // Drops zero-area triangles; returns the number removed.
  int remove_degenerate_triangles(double area_eps = 1e-14);
};

struct RayHit {
  double t;
  int triangle;
  Vec3 point;
};

// Static median-split BVH with a watertight ray-triangle test. Equal-t hits
// resolve to the lowest triangle id, matching an exhaustive scan exactly.
class Bvh {
 public:
  explicit Bvh(const TriangleMesh& mesh);

  std::optional<RayHit> intersect(const Vec3& origin, const Vec3& direction,
                                  double t_min = 1e-9) const;

 private:
  struct Node {
    Vec3 lower, upper;
    std::int32_t left = -1;    // internal: child index; leaf: first triangle
    std::int32_t count = 0;    // leaf triangle count, 0 for internal nodes
    std::int32_t right = -1;
  };

  const TriangleMesh& mesh_;
  std::vector<Node> nodes_;
  std::vector<std::int32_t> order_;  // triangle ids, leaf-contiguous

  std::int32_t build(std::vector<std::int32_t>& ids, std::int32_t begin, std::int32_t end,
                     const std::vector<Vec3>& centroids);
};

// Watertight single-triangle test (shear + signed edge functions); exposed
// so the brute-force oracle can share the exact same primitive.
std::optional<double> ray_triangle_intersect(const Vec3& origin, const Vec3& direction,
                                             const Vec3& a, const Vec3& b, const Vec3& c,
                                             double t_min = 1e-9);

// Cumulative-area sampler for uniform surface sampling.
class SurfaceSampler {
 public:
  explicit SurfaceSampler(const TriangleMesh& mesh);

  // u1,u2,u3 in [0,1): picks a triangle by area and a uniform point on it.
  struct Sample {
    Vec3 point;
    int triangle;
  };
  Sample sample(double u1, double u2, double u3) const;

  double total_area() const { return total_area_; }

 private:
  const TriangleMesh& mesh_;
  std::vector<double> cumulative_;
  double total_area_ = 0;
};

TriangleMesh load_obj(const std::string& path);
void save_obj(const TriangleMesh& mesh, const std::string& path);

TriangleMesh make_box(const Vec3& center, const Vec3& half_extents);
TriangleMesh make_icosphere(const Vec3& center, double radius, int subdivisions);
// Surface of revolution around +z from an (r, z) profile; r must be 0 at the
// first and last entries (the poles).
TriangleMesh make_lathe(const std::vector<Vec2>& profile, int segments);

}  // namespace tsplat
