#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace tsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Quat = Eigen::Quaterniond;

// Column-per-item storage for point/parameter sets.
using Mat3X = Eigen::Matrix3Xd;
using Mat4X = Eigen::Matrix4Xd;
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

enum class SetTag : std::uint8_t { kVision = 0, kTouch = 1 };

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingFileError : Error {
  using Error::Error;
};
struct MalformedManifestError : Error {
  using Error::Error;
};
struct MalformedPlyError : Error {
  using Error::Error;
};
struct MalformedJsonError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct ShapeMismatchError : Error {
  using Error::Error;
};
struct ImageTooSmallError : Error {
  using Error::Error;
};
struct EmptySceneError : Error {
  using Error::Error;
};
struct EmptyTouchSetError : Error {
  using Error::Error;
};
struct EmptyCloudError : Error {
  using Error::Error;
};
struct MeshEmptyError : Error {
  using Error::Error;
};
struct NoContactError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double inverse_sigmoid(double y) { return std::log(y / (1.0 - y)); }

}  // namespace tsplat
