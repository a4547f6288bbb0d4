#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace tacserv {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using VecX = Eigen::VectorXd;
using Mat3 = Eigen::Matrix3d;
using MatX = Eigen::MatrixXd;

using Rng = std::mt19937_64;

/// 6-vector end-effector twist: linear velocity (m/s) then angular (rad/s).
struct ActionTwist {
  Vec6 v = Vec6::Zero();

  Vec3 linear() const { return v.head<3>(); }
  Vec3 angular() const { return v.tail<3>(); }

  static ActionTwist zero() { return ActionTwist{}; }
};

inline Mat3 skew(const Vec3& w) {
  Mat3 s;
  s << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return s;
}

/// Rotation-matrix exponential of an axis-angle vector (Rodrigues).
inline Mat3 so3_exp(const Vec3& w) {
  const double th = w.norm();
  if (th < 1e-12) {
    const Mat3 s = skew(w);
    return Mat3::Identity() + s + 0.5 * s * s;
  }
  const Mat3 s = skew(w / th);
  return Mat3::Identity() + std::sin(th) * s + (1.0 - std::cos(th)) * s * s;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng, double mean = 0.0, double std = 1.0) {
  return std::normal_distribution<double>(mean, std)(rng);
}

class TacservError : public std::runtime_error {
 public:
  explicit TacservError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown when a training loop produces a non-finite loss.
class DivergenceError : public TacservError {
 public:
  explicit DivergenceError(const std::string& msg) : TacservError(msg) {}
};

}  // namespace tacserv
