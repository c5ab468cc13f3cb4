#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>

namespace ralc {

/// Wraps an angle into (-pi, pi].
template <typename Scalar>
Scalar normalize_angle(Scalar a) {
  constexpr Scalar kPi = std::numbers::pi_v<Scalar>;
  constexpr Scalar kTwoPi = 2 * kPi;
  if (a > -kPi && a <= kPi) return a;
  a = std::fmod(a + kPi, kTwoPi);
  if (a <= 0) a += kTwoPi;
  return a - kPi;
}

/// Planar rigid-body pose. Theta is kept in (-pi, pi] by every operation.
template <typename Scalar>
struct Pose2T {
  using Vector2 = Eigen::Matrix<Scalar, 2, 1>;
  using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
  using Matrix2 = Eigen::Matrix<Scalar, 2, 2>;
  using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;

  Scalar x{0};
  Scalar y{0};
  Scalar theta{0};

  Pose2T() = default;
  Pose2T(Scalar x_, Scalar y_, Scalar theta_) : x(x_), y(y_), theta(normalize_angle(theta_)) {}

  static Pose2T identity() { return {}; }
  static Pose2T from_vector(const Vector3& v) { return {v.x(), v.y(), v.z()}; }

  Vector2 translation() const { return {x, y}; }
  Vector3 vector() const { return {x, y, theta}; }

  Matrix2 rotation() const {
    const Scalar c = std::cos(theta), s = std::sin(theta);
    Matrix2 r;
    r << c, -s, s, c;
    return r;
  }

  /// 3x3 homogeneous matrix.
  Matrix3 matrix() const {
    Matrix3 m = Matrix3::Identity();
    m.template topLeftCorner<2, 2>() = rotation();
    m.template topRightCorner<2, 1>() = translation();
    return m;
  }

  Vector2 transform(const Vector2& p) const { return rotation() * p + translation(); }

  bool operator==(const Pose2T&) const = default;
};

using Pose2 = Pose2T<double>;
using InfoMatrix3 = Eigen::Matrix3d;

template <typename Scalar>
Pose2T<Scalar> compose(const Pose2T<Scalar>& a, const Pose2T<Scalar>& b) {
  const Scalar c = std::cos(a.theta), s = std::sin(a.theta);
  return {a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta};
}

template <typename Scalar>
Pose2T<Scalar> inverse(const Pose2T<Scalar>& p) {
  const Scalar c = std::cos(p.theta), s = std::sin(p.theta);
  return {-c * p.x - s * p.y, s * p.x - c * p.y, -p.theta};
}

/// a^-1 * b, expressed in the frame of a.
template <typename Scalar>
Pose2T<Scalar> between(const Pose2T<Scalar>& a, const Pose2T<Scalar>& b) {
  const Scalar c = std::cos(a.theta), s = std::sin(a.theta);
  const Scalar dx = b.x - a.x, dy = b.y - a.y;
  return {c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta};
}

template <typename Scalar>
Pose2T<Scalar> operator*(const Pose2T<Scalar>& a, const Pose2T<Scalar>& b) {
  return compose(a, b);
}

/// Right-perturbation retraction: p ⊕ delta.
template <typename Scalar>
Pose2T<Scalar> retract(const Pose2T<Scalar>& p, const Eigen::Matrix<Scalar, 3, 1>& delta) {
  return compose(p, Pose2T<Scalar>::from_vector(delta));
}

/// Relative-pose error and its Jacobians with respect to right perturbations of a and b.
template <typename Scalar>
struct ErrorJacobians {
  Eigen::Matrix<Scalar, 3, 1> residual;
  Eigen::Matrix<Scalar, 3, 3> ja;
  Eigen::Matrix<Scalar, 3, 3> jb;
};

/// residual = vec(measurement^-1 * between(a, b)).
template <typename Scalar>
ErrorJacobians<Scalar> error_jacobians(const Pose2T<Scalar>& measurement, const Pose2T<Scalar>& a,
                                       const Pose2T<Scalar>& b) {
  using Matrix2 = Eigen::Matrix<Scalar, 2, 2>;
  const Pose2T<Scalar> ab = between(a, b);
  const Pose2T<Scalar> err = between(measurement, ab);
  const Matrix2 rz_t = measurement.rotation().transpose();

  ErrorJacobians<Scalar> out;
  out.residual = err.vector();

  out.ja.setZero();
  out.ja.template topLeftCorner<2, 2>() = -rz_t;
  out.ja.template topRightCorner<2, 1>() = rz_t * Eigen::Matrix<Scalar, 2, 1>(ab.y, -ab.x);
  out.ja(2, 2) = -1;

  out.jb.setZero();
  out.jb.template topLeftCorner<2, 2>() = rz_t * ab.rotation();
  out.jb(2, 2) = 1;
  return out;
}

/// Adjoint of the inverse pose; maps a left (world-frame) twist to a right perturbation.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> inverse_adjoint(const Pose2T<Scalar>& p) {
  Eigen::Matrix<Scalar, 3, 3> m = Eigen::Matrix<Scalar, 3, 3>::Zero();
  const Eigen::Matrix<Scalar, 2, 2> rt = p.rotation().transpose();
  m.template topLeftCorner<2, 2>() = rt;
  m.template topRightCorner<2, 1>() = rt * Eigen::Matrix<Scalar, 2, 1>(-p.y, p.x);
  m(2, 2) = 1;
  return m;
}

/// Symmetric with all eigenvalues strictly positive.
template <typename Derived>
bool is_spd(const Eigen::MatrixBase<Derived>& m, double sym_tol = 1e-9) {
  if (m.rows() != m.cols()) return false;
  if (!m.allFinite()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > sym_tol * scale) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.template cast<double>());
  return es.eigenvalues().minCoeff() > 0;
}

}  // namespace ralc
