/**
 * @file continuum.hpp
 * @brief Finite-strain kinematics, invariants, stress measures, the compressible
 *        neo-Hookean reference model and the pulled-back pseudo stiffness.
 *
 * Units are mm-N-MPa throughout.
 *
 * Storage conventions
 * -------------------
 * Symmetric second-order tensors are stored as 6-vectors in Voigt order
 * [11, 22, 33, 23, 13, 12]. Off-diagonal slots hold the tensor component itself
 * (factor one, no engineering doubling). Fourth-order tensors with major and
 * minor symmetry are stored as 6x6 matrices with A(I, J) = A_ijkl where I <-> ij
 * and J <-> kl use the same pairing.
 *
 * Double contractions therefore need the metric m = [1, 1, 1, 2, 2, 2]:
 *   (A : X)_I = sum_J A(I, J) m_J X_J,      X : Y = sum_I m_I X_I Y_I.
 * The Mandel helpers below rescale shear slots by sqrt(2) so that contractions
 * become plain matrix products; the data-driven solver works in that form.
 */
#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hyperfit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Raised when an argument leaves the admissible set (det F <= 0, non-SPD C, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace voigt {
inline constexpr std::array<std::array<int, 2>, 6> pairs{{{0, 0}, {1, 1}, {2, 2}, {1, 2}, {0, 2}, {0, 1}}};
inline constexpr std::array<double, 6> metric{1.0, 1.0, 1.0, 2.0, 2.0, 2.0};

constexpr int index(int i, int j) {
  if (i == j) return i;
  const int s = i + j;  // (1,2)->3, (0,2)->2, (0,1)->1
  return s == 3 ? 3 : (s == 2 ? 4 : 5);
}
}  // namespace voigt

/// Symmetric second-order tensor in Voigt order with factor-one off-diagonals.
struct SymTensor2 {
  Vec6 v = Vec6::Zero();

  SymTensor2() = default;
  explicit SymTensor2(const Vec6& components) : v(components) {}

  static SymTensor2 identity() {
    Vec6 c;
    c << 1, 1, 1, 0, 0, 0;
    return SymTensor2(c);
  }

  /// Takes the symmetric part of @p m.
  static SymTensor2 from_matrix(const Mat3& m) {
    Vec6 c;
    for (int I = 0; I < 6; ++I) {
      const auto [i, j] = voigt::pairs[I];
      c[I] = 0.5 * (m(i, j) + m(j, i));
    }
    return SymTensor2(c);
  }

  Mat3 matrix() const {
    Mat3 m;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m(i, j) = v[voigt::index(i, j)];
    return m;
  }

  double operator()(int i, int j) const { return v[voigt::index(i, j)]; }
  double& operator()(int i, int j) { return v[voigt::index(i, j)]; }

  double trace() const { return v[0] + v[1] + v[2]; }

  /// X : Y with the full tensor contraction (shear slots counted twice).
  double contract(const SymTensor2& other) const {
    double s = 0.0;
    for (int I = 0; I < 6; ++I) s += voigt::metric[I] * v[I] * other.v[I];
    return s;
  }

  /// Mandel vector (shear slots scaled by sqrt 2).
  Vec6 mandel() const {
    Vec6 m = v;
    m.tail<3>() *= std::sqrt(2.0);
    return m;
  }
  static SymTensor2 from_mandel(const Vec6& m) {
    Vec6 c = m;
    c.tail<3>() /= std::sqrt(2.0);
    return SymTensor2(c);
  }

  SymTensor2 operator+(const SymTensor2& o) const { return SymTensor2(v + o.v); }
  SymTensor2 operator-(const SymTensor2& o) const { return SymTensor2(v - o.v); }
  SymTensor2 operator*(double s) const { return SymTensor2(v * s); }
};

/// Fourth-order tensor with major and minor symmetry, A(I,J) = A_ijkl.
struct Tensor4 {
  Mat6 a = Mat6::Zero();

  double operator()(int i, int j, int k, int l) const { return a(voigt::index(i, j), voigt::index(k, l)); }

  /// A : X
  SymTensor2 contract(const SymTensor2& x) const {
    Vec6 m;
    for (int J = 0; J < 6; ++J) m[J] = voigt::metric[J] * x.v[J];
    return SymTensor2(a * m);
  }

  /// Matrix acting on Mandel vectors: (A : X)_mandel = mandel() * X_mandel.
  Mat6 mandel() const {
    Mat6 m = a;
    for (int I = 0; I < 6; ++I)
      for (int J = 0; J < 6; ++J) m(I, J) *= std::sqrt(voigt::metric[I] * voigt::metric[J]);
    return m;
  }

  static Tensor4 from_mandel(const Mat6& m) {
    Tensor4 t;
    for (int I = 0; I < 6; ++I)
      for (int J = 0; J < 6; ++J) t.a(I, J) = m(I, J) / std::sqrt(voigt::metric[I] * voigt::metric[J]);
    return t;
  }
};

/// Cholesky-style positive definiteness test; pivots must exceed @p tol.
template <typename Derived>
bool is_positive_definite(const Eigen::MatrixBase<Derived>& m, double tol = 1e-12) {
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;
  Matrix a = 0.5 * (m + m.transpose());
  const Eigen::Index n = a.rows();
  for (Eigen::Index k = 0; k < n; ++k) {
    double pivot = a(k, k);
    for (Eigen::Index p = 0; p < k; ++p) pivot -= a(k, p) * a(k, p);
    if (!(pivot > tol)) return false;
    const double d = std::sqrt(pivot);
    a(k, k) = d;
    for (Eigen::Index i = k + 1; i < n; ++i) {
      double s = a(i, k);
      for (Eigen::Index p = 0; p < k; ++p) s -= a(i, p) * a(k, p);
      a(i, k) = s / d;
    }
  }
  return true;
}

inline bool is_positive_definite(const SymTensor2& t, double tol = 1e-12) { return is_positive_definite(t.matrix(), tol); }

/// Deformation gradient with det F > 0 enforced at construction.
class DefGrad {
 public:
  DefGrad() : f_(Mat3::Identity()) {}
  explicit DefGrad(const Mat3& f) : f_(f) {
    const double j = f.determinant();
    if (!(j > 0.0) || !std::isfinite(j)) throw DomainError("deformation gradient must have det F > 0, got " + std::to_string(j));
  }

  /// Plane-stress form [[F11 F12 0] [F21 F22 0] [0 0 lambda3]].
  static DefGrad plane(const Mat2& f2, double lambda3) {
    Mat3 f = Mat3::Zero();
    f.topLeftCorner<2, 2>() = f2;
    f(2, 2) = lambda3;
    return DefGrad(f);
  }

  const Mat3& matrix() const { return f_; }
  double J() const { return f_.determinant(); }
  Mat3 inverse() const { return f_.inverse(); }

 private:
  Mat3 f_;
};

struct Kinematics {
  SymTensor2 C, b, E, e;
  double J = 1.0;
};

/// C = F^T F, b = F F^T, E = (C - 1)/2, e = (1 - b^-1)/2.
inline Kinematics kinematics(const DefGrad& F) {
  const Mat3& f = F.matrix();
  Kinematics k;
  const Mat3 c = f.transpose() * f;
  const Mat3 b = f * f.transpose();
  k.C = SymTensor2::from_matrix(c);
  k.b = SymTensor2::from_matrix(b);
  k.E = SymTensor2::from_matrix(0.5 * (c - Mat3::Identity()));
  k.e = SymTensor2::from_matrix(0.5 * (Mat3::Identity() - b.inverse()));
  k.J = F.J();
  return k;
}

struct InvariantSet {
  double I1 = 3.0, I2 = 3.0, I3 = 1.0, I1star = -2.0;
};

/// Isotropic invariants of an SPD tensor (C or b) plus I1* = -2 sqrt(I3).
inline InvariantSet invariants(const SymTensor2& c) {
  if (!is_positive_definite(c)) throw DomainError("invariants: tensor is not positive definite");
  const Mat3 m = c.matrix();
  InvariantSet inv;
  inv.I1 = m.trace();
  // tr Cof C as the sum of principal 2x2 minors
  inv.I2 = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0) + m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1) + m(0, 0) * m(2, 2) -
           m(0, 2) * m(2, 0);
  inv.I3 = m.determinant();
  inv.I1star = -2.0 * std::sqrt(inv.I3);
  return inv;
}

struct StressMeasures {
  SymTensor2 tau;  ///< Kirchhoff
  Mat3 P;          ///< first Piola-Kirchhoff (not symmetric)
  SymTensor2 T;    ///< second Piola-Kirchhoff
};

/// Pull-backs of the Cauchy stress: tau = J sigma, P = J sigma F^-T, T = J F^-1 sigma F^-T.
inline StressMeasures stress_transform(const SymTensor2& sigma, const DefGrad& F) {
  const double J = F.J();
  const Mat3 finv = F.inverse();
  const Mat3 s = sigma.matrix();
  StressMeasures out;
  out.tau = sigma * J;
  out.P = J * s * finv.transpose();
  out.T = SymTensor2::from_matrix(J * finv * s * finv.transpose());
  return out;
}

/// sigma = J^-1 F T F^T
inline SymTensor2 push_forward(const SymTensor2& T, const DefGrad& F) {
  const Mat3& f = F.matrix();
  return SymTensor2::from_matrix(f * T.matrix() * f.transpose() / F.J());
}

/// Cauchy stress from the first Piola-Kirchhoff stress, sigma = J^-1 P F^T.
inline SymTensor2 cauchy_from_piola(const Mat3& P, const DefGrad& F) {
  return SymTensor2::from_matrix(P * F.matrix().transpose() / F.J());
}

struct NeoHookeParams {
  double E = 1.0;   ///< initial Young's modulus, MPa
  double nu = 0.3;  ///< Poisson's ratio

  NeoHookeParams() = default;
  NeoHookeParams(double young, double poisson) : E(young), nu(poisson) { validate(); }

  void validate() const {
    if (!(E > 0.0)) throw DomainError("neo-Hooke: E must be positive");
    if (!(nu > -1.0 && nu < 0.5)) throw DomainError("neo-Hooke: nu must lie in (-1, 0.5)");
  }
  double mu() const { return E / (2.0 * (1.0 + nu)); }
  double lambda() const { return E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)); }
};

struct NeoHookeResponse {
  double psi = 0.0;  ///< MPa (energy per reference volume)
  SymTensor2 T;
  SymTensor2 sigma;
  Mat3 P = Mat3::Zero();
};

/// psi = 1/2 (mu (I1 - ln I3 - 3) + lambda/2 (I3 - ln I3 - 1)),
/// T = mu 1 + (lambda/2 - (2 mu + lambda) / (2 I3)) Cof C.
inline NeoHookeResponse neo_hooke(const DefGrad& F, const NeoHookeParams& p) {
  const double mu = p.mu(), lam = p.lambda();
  const Mat3& f = F.matrix();
  const Mat3 c = f.transpose() * f;
  const double I1 = c.trace();
  const double J = F.J();
  const double I3 = J * J;
  const double lnI3 = 2.0 * std::log(J);
  NeoHookeResponse r;
  r.psi = 0.5 * (mu * (I1 - lnI3 - 3.0) + 0.5 * lam * (I3 - lnI3 - 1.0));
  const Mat3 cof_c = I3 * c.inverse();
  const Mat3 t = mu * Mat3::Identity() + (0.5 * lam - (2.0 * mu + lam) / (2.0 * I3)) * cof_c;
  r.T = SymTensor2::from_matrix(t);
  r.P = f * t;
  r.sigma = push_forward(r.T, F);
  return r;
}

/// Cauchy stress of the neo-Hookean model written in terms of b:
/// sigma = mu/J b + (lambda J/2 - (2 mu + lambda)/(2 J)) 1.
inline SymTensor2 neo_hooke_cauchy_from_b(const SymTensor2& b, const NeoHookeParams& p) {
  const double J = std::sqrt(b.matrix().determinant());
  const double mu = p.mu(), lam = p.lambda();
  return b * (mu / J) + SymTensor2::identity() * (0.5 * lam * J - (2.0 * mu + lam) / (2.0 * J));
}

/// Second Piola-Kirchhoff stress of the neo-Hookean model in terms of C.
inline SymTensor2 neo_hooke_pk2_from_C(const SymTensor2& C, const NeoHookeParams& p) {
  const Mat3 c = C.matrix();
  const double I3 = c.determinant();
  const double mu = p.mu(), lam = p.lambda();
  const Mat3 cof_c = I3 * c.inverse();
  return SymTensor2::from_matrix(mu * Mat3::Identity() + (0.5 * lam - (2.0 * mu + lam) / (2.0 * I3)) * cof_c);
}

/// Material tangent dP_iJ/dF_kL of the neo-Hookean model, indexed [i][J][k][L].
using Tangent3 = std::array<std::array<std::array<std::array<double, 3>, 3>, 3>, 3>;

inline Tangent3 neo_hooke_tangent(const DefGrad& F, const NeoHookeParams& p) {
  // P = mu (F - F^-T) + lambda/2 (J^2 - 1) F^-T
  const double mu = p.mu(), lam = p.lambda();
  const double J = F.J();
  const Mat3 fi = F.inverse();
  const double a = mu - 0.5 * lam * (J * J - 1.0);
  Tangent3 A{};
  for (int i = 0; i < 3; ++i)
    for (int J_ = 0; J_ < 3; ++J_)
      for (int k = 0; k < 3; ++k)
        for (int L = 0; L < 3; ++L)
          A[i][J_][k][L] = (i == k && J_ == L ? mu : 0.0) + a * fi(L, i) * fi(J_, k) + lam * J * J * fi(J_, i) * fi(L, k);
  return A;
}

/// Symmetric fourth-order identity scaled by @p scale.
inline Tensor4 isotropic_pseudo_stiffness(double scale) {
  if (!(scale > 0.0)) throw DomainError("pseudo stiffness scale must be positive");
  Tensor4 t;
  t.a.diagonal() << scale, scale, scale, 0.5 * scale, 0.5 * scale, 0.5 * scale;
  return t;
}

/// Pull-back of C_scale * (symmetric identity) through F:
/// C_KLMN = C J / 2 (Cinv_KM Cinv_LN + Cinv_KN Cinv_LM).
inline Tensor4 pullback_pseudo_stiffness(double scale, const DefGrad& F) {
  if (!(scale > 0.0)) throw DomainError("pseudo stiffness scale must be positive");
  const Mat3& f = F.matrix();
  const Mat3 ci = (f.transpose() * f).inverse();
  const double J = F.J();
  Tensor4 t;
  for (int I = 0; I < 6; ++I) {
    const auto [k, l] = voigt::pairs[I];
    for (int Jx = 0; Jx < 6; ++Jx) {
      const auto [m, n] = voigt::pairs[Jx];
      t.a(I, Jx) = 0.5 * scale * J * (ci(k, m) * ci(l, n) + ci(k, n) * ci(l, m));
    }
  }
  return t;
}

}  // namespace hyperfit
