/**
 * @file linalg.hpp
 * @brief Preconditioned MINRES for symmetric (indefinite) operators.
 */
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>

namespace hyperfit {

using Operator = std::function<void(const Eigen::VectorXd& in, Eigen::VectorXd& out)>;

struct MinresResult {
  int iterations = 0;
  double residual_estimate = 0.0;  ///< preconditioned residual norm relative to that of b
  bool converged = false;
};

/**
 * Solves A x = b for symmetric A with a symmetric positive definite
 * preconditioner applied as @p Minv (out = M^-1 in). @p x holds the initial
 * guess on entry. Iterates until the preconditioned residual norm drops below
 * @p tol times its initial value for x = 0.
 */
inline MinresResult minres(const Operator& A, const Operator& Minv, const Eigen::VectorXd& b, Eigen::VectorXd& x,
                           double tol, int max_iterations) {
  const Eigen::Index n = b.size();
  MinresResult res;
  Eigen::VectorXd r1(n), y(n), tmp(n);
  // scale of the problem for the stopping test: preconditioned norm of b
  Minv(b, y);
  const double bnorm = std::sqrt(std::max(0.0, b.dot(y)));
  if (bnorm == 0.0) {
    x.setZero();
    res.converged = true;
    return res;
  }
  A(x, tmp);
  r1 = b - tmp;
  Minv(r1, y);
  double beta1 = std::sqrt(std::max(0.0, r1.dot(y)));
  if (beta1 <= tol * bnorm) {
    res.converged = true;
    res.residual_estimate = beta1 / bnorm;
    return res;
  }
  Eigen::VectorXd r2 = r1, v(n), w = Eigen::VectorXd::Zero(n), w1(n), w2 = Eigen::VectorXd::Zero(n);
  double oldb = 0.0, beta = beta1, dbar = 0.0, epsln = 0.0, phibar = beta1;
  double cs = -1.0, sn = 0.0;
  const double eps = std::numeric_limits<double>::epsilon();
  for (int itn = 1; itn <= max_iterations; ++itn) {
    const double s = 1.0 / beta;
    v = s * y;
    A(v, y);
    if (itn >= 2) y -= (beta / oldb) * r1;
    const double alfa = v.dot(y);
    y -= (alfa / beta) * r2;
    r1.swap(r2);
    r2 = y;
    Minv(r2, y);
    oldb = beta;
    beta = std::sqrt(std::max(0.0, r2.dot(y)));
    const double oldeps = epsln;
    const double delta = cs * dbar + sn * alfa;
    const double gbar = sn * dbar - cs * alfa;
    epsln = sn * beta;
    dbar = -cs * beta;
    double gamma = std::hypot(gbar, beta);
    gamma = std::max(gamma, eps);
    cs = gbar / gamma;
    sn = beta / gamma;
    const double phi = cs * phibar;
    phibar = sn * phibar;
    w1.swap(w2);
    w2.swap(w);
    w = (v - oldeps * w1 - delta * w2) / gamma;
    x += phi * w;
    res.iterations = itn;
    res.residual_estimate = phibar / bnorm;
    if (res.residual_estimate <= tol) {
      res.converged = true;
      break;
    }
    if (beta <= eps * bnorm) {  // exact invariant subspace reached
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace hyperfit
