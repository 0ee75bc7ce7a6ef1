/**
 * @file pann.hpp
 * @brief Polyconvex physics-augmented neural network potential for isotropic
 *        hyperelasticity and its calibration on stress data.
 *
 * psi = psi_NN(I1, I2, I3, I1*) + psi_en + lambda_gr (J + 1/J - 2)^2 - n (J - 1)
 * with I1* = -2J and a single softplus hidden layer
 * psi_NN = sum_a W_a SP(w_a1 I1 + w_a2 I2 + w_a3 I3 + w*_a I1* + b_a),  W, w >= 0.
 */
#pragma once

#include "hyperfit/continuum.hpp"
#include "hyperfit/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hyperfit {

using Vec4 = Eigen::Vector4d;

/// Numerically stable softplus log(1 + exp(z)).
inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
/// Logistic sigmoid, the derivative of softplus.
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Invariant input vector (I1, I2, I3, I1*) with I1* = -2 sqrt(I3).
inline Vec4 pann_inputs(const InvariantSet& I) { return {I.I1, I.I2, I.I3, I.I1star}; }
/// Inputs at the undeformed state.
inline Vec4 pann_reference_inputs() { return {3.0, 3.0, 1.0, -2.0}; }

/// Direction of the stress-normalization derivative: d/dI1 + 2 d/dI2 + d/dI3 + dI1*/dI3 d/dI1* at F = 1.
inline Vec4 pann_normalization_direction() { return {1.0, 2.0, 1.0, -1.0}; }

struct PannParams {
  int width = 0;
  Eigen::VectorXd W;        ///< output weights, >= 0
  Eigen::MatrixXd w;        ///< width x 3 input weights on (I1, I2, I3), >= 0
  Eigen::VectorXd wstar;    ///< input weights on I1*
  Eigen::VectorXd b;        ///< biases
  double lambda_gr = 1e-2;  ///< growth-term scale, MPa
  double psi_en = 0.0;      ///< energy offset, MPa (derived)
  double n = 0.0;           ///< stress normalization constant, MPa (derived)

  static constexpr int kPerNeuron = 6;  ///< W, w1, w2, w3, w*, b

  PannParams() = default;
  explicit PannParams(int width_, double lambda = 1e-2)
      : width(width_),
        W(Eigen::VectorXd::Zero(width_)),
        w(Eigen::MatrixXd::Zero(width_, 3)),
        wstar(Eigen::VectorXd::Zero(width_)),
        b(Eigen::VectorXd::Zero(width_)),
        lambda_gr(lambda) {
    if (width_ < 1) throw std::invalid_argument("pann: width must be >= 1");
    normalize();
  }

  int num_params() const { return kPerNeuron * width; }

  /// Input weight vector (w1, w2, w3, w*) of neuron a.
  Vec4 input_weights(int a) const { return {w(a, 0), w(a, 1), w(a, 2), wstar[a]}; }

  /// Recomputes psi_en and n from the current weights.
  void normalize() {
    const Vec4 x0 = pann_reference_inputs();
    const Vec4 d = pann_normalization_direction();
    double psi0 = 0.0, nn = 0.0;
    for (int a = 0; a < width; ++a) {
      const Vec4 v = input_weights(a);
      const double z = v.dot(x0) + b[a];
      psi0 += W[a] * softplus(z);
      nn += 2.0 * W[a] * sigmoid(z) * v.dot(d);
    }
    psi_en = -psi0;
    n = nn;
  }

  bool admissible() const {
    return width > 0 && W.minCoeff() >= 0.0 && w.minCoeff() >= 0.0 && lambda_gr > 0.0 && W.allFinite() &&
           w.allFinite() && wstar.allFinite() && b.allFinite();
  }

  /// Flat parameter vector, one block [W, w1, w2, w3, w*, b] per neuron.
  Eigen::VectorXd flatten() const {
    Eigen::VectorXd th(num_params());
    for (int a = 0; a < width; ++a) th.segment<kPerNeuron>(kPerNeuron * a) << W[a], w(a, 0), w(a, 1), w(a, 2), wstar[a], b[a];
    return th;
  }
  void unflatten(const Eigen::VectorXd& th) {
    if (th.size() != num_params()) throw std::invalid_argument("pann: parameter vector size mismatch");
    for (int a = 0; a < width; ++a) {
      const auto blk = th.segment<kPerNeuron>(kPerNeuron * a);
      W[a] = blk[0], w(a, 0) = blk[1], w(a, 1) = blk[2], w(a, 2) = blk[3], wstar[a] = blk[4], b[a] = blk[5];
    }
    normalize();
  }
  /// Whether flat index i carries a nonnegativity constraint.
  static bool constrained(int i) { return i % kPerNeuron < 4; }
};

/// psi_NN and its gradient with respect to the inputs.
inline double pann_nn(const PannParams& p, const Vec4& x, Vec4* grad = nullptr) {
  double psi = 0.0;
  if (grad) grad->setZero();
  for (int a = 0; a < p.width; ++a) {
    const Vec4 v = p.input_weights(a);
    const double z = v.dot(x) + p.b[a];
    psi += p.W[a] * softplus(z);
    if (grad) *grad += p.W[a] * sigmoid(z) * v;
  }
  return psi;
}

/// Derivative of the growth and stress-normalization terms with respect to J.
inline double pann_volumetric_derivative(const PannParams& p, double J) {
  const double g = J + 1.0 / J - 2.0;
  return 2.0 * p.lambda_gr * g * (1.0 - 1.0 / (J * J)) - p.n;
}

/// Total potential psi_PANN, MPa.
inline double pann_energy(const InvariantSet& I, const PannParams& p) {
  const double J = std::sqrt(I.I3);
  const double g = J + 1.0 / J - 2.0;
  return pann_nn(p, pann_inputs(I)) + p.psi_en + p.lambda_gr * g * g - p.n * (J - 1.0);
}

inline double pann_energy(const DefGrad& F, const PannParams& p) {
  return pann_energy(invariants(kinematics(F).C), p);
}

/// Stress-generating tensors: stress = sum_k G[k] dpsi_NN/dx_k + G[4] dpsi_vol/dJ.
struct PannBasis {
  std::array<SymTensor2, 5> G;
  double J = 1.0;
};

/// Basis for the second Piola-Kirchhoff stress at right Cauchy-Green tensor @p C.
inline PannBasis pann_basis_pk2(const SymTensor2& C) {
  const InvariantSet I = invariants(C);
  const double J = std::sqrt(I.I3);
  const SymTensor2 Ci = SymTensor2::from_matrix(C.matrix().inverse());
  const SymTensor2 one = SymTensor2::identity();
  PannBasis B;
  B.J = J;
  B.G[0] = one * 2.0;
  B.G[1] = (one * I.I1 - C) * 2.0;
  B.G[2] = Ci * (2.0 * I.I3);
  B.G[3] = Ci * (-2.0 * J);
  B.G[4] = Ci * J;
  return B;
}

/// Basis for the Cauchy stress at left Cauchy-Green tensor @p b.
inline PannBasis pann_basis_cauchy(const SymTensor2& b) {
  const InvariantSet I = invariants(b);
  const double J = std::sqrt(I.I3);
  const Mat3 bm = b.matrix();
  const SymTensor2 b2 = SymTensor2::from_matrix(bm * bm);
  const SymTensor2 one = SymTensor2::identity();
  PannBasis B;
  B.J = J;
  B.G[0] = b * (2.0 / J);
  B.G[1] = (b * I.I1 - b2) * (2.0 / J);
  B.G[2] = one * (2.0 * I.I3 / J);
  B.G[3] = one * -2.0;
  B.G[4] = one;
  return B;
}

inline SymTensor2 pann_apply_basis(const PannBasis& B, const Vec4& dpsi, double dvol) {
  SymTensor2 s = B.G[4] * dvol;
  for (int k = 0; k < 4; ++k) s = s + B.G[k] * dpsi[k];
  return s;
}

/// Second Piola-Kirchhoff stress from the right Cauchy-Green tensor.
inline SymTensor2 pann_pk2(const SymTensor2& C, const PannParams& p) {
  const PannBasis B = pann_basis_pk2(C);
  Vec4 d;
  pann_nn(p, pann_inputs(invariants(C)), &d);
  return pann_apply_basis(B, d, pann_volumetric_derivative(p, B.J));
}

/// Cauchy stress from the left Cauchy-Green tensor.
inline SymTensor2 pann_cauchy(const SymTensor2& b, const PannParams& p) {
  const PannBasis B = pann_basis_cauchy(b);
  Vec4 d;
  pann_nn(p, pann_inputs(invariants(b)), &d);
  return pann_apply_basis(B, d, pann_volumetric_derivative(p, B.J));
}

/// {tau, P, T} and sigma for a deformation gradient.
inline StressMeasures pann_stress(const DefGrad& F, const PannParams& p, SymTensor2* sigma = nullptr) {
  const Kinematics k = kinematics(F);
  const SymTensor2 T = pann_pk2(k.C, p);
  StressMeasures s;
  s.T = T;
  s.P = F.matrix() * T.matrix();
  const SymTensor2 sig = push_forward(T, F);
  s.tau = sig * k.J;
  if (sigma) *sigma = sig;
  return s;
}

// ---------------------------------------------------------------------------
// Calibration data and loss
// ---------------------------------------------------------------------------

enum class StressMetric { UL, TL };

inline StressMetric parse_stress_metric(const std::string& s) {
  if (s == "ul") return StressMetric::UL;
  if (s == "tl") return StressMetric::TL;
  throw std::invalid_argument("unknown stress metric '" + s + "' (expected ul or tl)");
}
inline std::string to_string(StressMetric m) { return m == StressMetric::UL ? "ul" : "tl"; }

/// One calibration entry: b (UL) or C (TL) and the matching stress sigma or T.
struct PannSample {
  SymTensor2 deformation;
  SymTensor2 stress;
  double weight = 1.0;
};

/// Precomputed per-sample quantities for fast loss evaluation.
struct PannPrepared {
  Vec4 x;
  PannBasis basis;
  double growth_derivative_unit = 0.0;  ///< d/dJ (J + 1/J - 2)^2
  SymTensor2 target;
};

inline std::vector<PannPrepared> pann_prepare(const std::vector<PannSample>& samples, StressMetric metric) {
  std::vector<PannPrepared> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    PannPrepared q;
    q.x = pann_inputs(invariants(s.deformation));
    q.basis = metric == StressMetric::UL ? pann_basis_cauchy(s.deformation) : pann_basis_pk2(s.deformation);
    const double J = q.basis.J;
    q.growth_derivative_unit = 2.0 * (J + 1.0 / J - 2.0) * (1.0 - 1.0 / (J * J));
    q.target = s.stress;
    out.push_back(q);
  }
  return out;
}

inline SymTensor2 pann_predict(const PannPrepared& q, const PannParams& p) {
  Vec4 d;
  pann_nn(p, q.x, &d);
  return pann_apply_basis(q.basis, d, p.lambda_gr * q.growth_derivative_unit - p.n);
}

/**
 * Scaled residual vector r (6 entries per sample, Frobenius weights folded in)
 * with mse = r.r, and optionally its Jacobian with respect to the flat parameters.
 */
inline void pann_residuals(const std::vector<PannPrepared>& data, const PannParams& p, Eigen::VectorXd& r,
                           Eigen::MatrixXd* jac = nullptr) {
  if (data.empty()) throw std::invalid_argument("pann: empty dataset");
  const int P = p.num_params();
  const Eigen::Index m = 6 * static_cast<Eigen::Index>(data.size());
  r.resize(m);
  if (jac) jac->setZero(m, P);
  const double scale = 1.0 / std::sqrt(static_cast<double>(data.size()));
  std::array<double, 6> sw;
  for (int i = 0; i < 6; ++i) sw[i] = scale * std::sqrt(voigt::metric[i]);

  // derivative of n with respect to the flat parameters
  Eigen::VectorXd dn;
  if (jac) {
    dn.setZero(P);
    const Vec4 x0 = pann_reference_inputs(), c = pann_normalization_direction();
    for (int a = 0; a < p.width; ++a) {
      const Vec4 v = p.input_weights(a);
      const double z = v.dot(x0) + p.b[a];
      const double s = sigmoid(z), ds = s * (1.0 - s);
      const double vc = v.dot(c);
      const int o = PannParams::kPerNeuron * a;
      dn[o] = 2.0 * s * vc;
      for (int j = 0; j < 4; ++j) dn[o + 1 + j] = 2.0 * p.W[a] * (ds * x0[j] * vc + s * c[j]);
      dn[o + 5] = 2.0 * p.W[a] * ds * vc;
    }
  }

  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& q = data[i];
    const SymTensor2 pred = pann_predict(q, p);
    for (int c = 0; c < 6; ++c) r[6 * i + c] = sw[c] * (pred.v[c] - q.target.v[c]);
    if (!jac) continue;
    // d pred / d theta = sum_k G_k d g_k / d theta - G_4 dn / d theta
    for (int a = 0; a < p.width; ++a) {
      const Vec4 v = p.input_weights(a);
      const double z = v.dot(q.x) + p.b[a];
      const double s = sigmoid(z), ds = s * (1.0 - s);
      const int o = PannParams::kPerNeuron * a;
      Vec6 gW = Vec6::Zero(), gb = Vec6::Zero();
      std::array<Vec6, 4> gv;
      for (auto& g : gv) g.setZero();
      for (int k = 0; k < 4; ++k) {
        const Vec6& Gk = q.basis.G[k].v;
        gW += s * v[k] * Gk;
        gb += p.W[a] * ds * v[k] * Gk;
        for (int j = 0; j < 4; ++j) gv[j] += p.W[a] * (ds * q.x[j] * v[k] + (j == k ? s : 0.0)) * Gk;
      }
      const Vec6& G4 = q.basis.G[4].v;
      gW -= dn[o] * G4;
      for (int j = 0; j < 4; ++j) gv[j] -= dn[o + 1 + j] * G4;
      gb -= dn[o + 5] * G4;
      for (int c = 0; c < 6; ++c) {
        const Eigen::Index row = 6 * static_cast<Eigen::Index>(i) + c;
        (*jac)(row, o) = sw[c] * gW[c];
        for (int j = 0; j < 4; ++j) (*jac)(row, o + 1 + j) = sw[c] * gv[j][c];
        (*jac)(row, o + 5) = sw[c] * gb[c];
      }
    }
  }
}

struct PannLoss {
  double mse = 0.0;
  Eigen::VectorXd gradient;
};

/// Mean squared Frobenius stress error and its gradient with respect to the flat parameters.
inline PannLoss pann_loss_and_grad(const std::vector<PannPrepared>& data, const PannParams& p) {
  Eigen::VectorXd r;
  Eigen::MatrixXd jac;
  pann_residuals(data, p, r, &jac);
  return {r.squaredNorm(), 2.0 * jac.transpose() * r};
}

inline double pann_mse(const std::vector<PannPrepared>& data, const PannParams& p) {
  Eigen::VectorXd r;
  pann_residuals(data, p, r);
  return r.squaredNorm();
}

/// Coefficient of determination pooled over the in-plane stress components 11, 22, 12.
inline double pann_r2_inplane(const std::vector<PannPrepared>& data, const PannParams& p) {
  const int comps[3] = {0, 1, 5};
  std::vector<double> pred, ref;
  for (const auto& q : data) {
    const SymTensor2 s = pann_predict(q, p);
    for (int c : comps) pred.push_back(s.v[c]), ref.push_back(q.target.v[c]);
  }
  double mean = 0.0;
  for (double v : ref) mean += v;
  mean /= static_cast<double>(ref.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    ss_res += (pred[i] - ref[i]) * (pred[i] - ref[i]);
    ss_tot += (ref[i] - mean) * (ref[i] - mean);
  }
  if (!(ss_tot > 0.0)) throw std::domain_error("r2: constant reference");
  return 1.0 - ss_res / ss_tot;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct PannTrainConfig {
  int width = 8;
  double lambda_gr = 1e-2;      ///< MPa
  int restarts = 5;
  int max_iterations = 2000;    ///< per restart
  double tolerance = 1e-12;     ///< relative loss decrease that counts as stagnation
  double test_fraction = 0.3;
  std::uint64_t seed = 0;

  void validate() const {
    if (width < 1) throw std::invalid_argument("pann: width must be >= 1");
    if (!(lambda_gr > 0.0)) throw std::invalid_argument("pann: lambda_gr must be positive");
    if (restarts < 1) throw std::invalid_argument("pann: restarts must be >= 1");
    if (max_iterations < 1) throw std::invalid_argument("pann: max_iterations must be >= 1");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw std::invalid_argument("pann: test fraction must lie in [0, 1)");
  }
};

struct PannTrainReport {
  PannParams params;
  double mse_calibration = 0.0, mse_test = 0.0;
  double r2_calibration = 0.0, r2_test = 0.0;
  int n_calibration = 0, n_test = 0;
  int best_restart = -1;
  std::vector<double> restart_losses;  ///< final calibration mse per restart (NaN if diverged)
  std::vector<int> restart_iterations;
};

/// Uniform [0, 1/sqrt(N)] for constrained weights, uniform [-1/sqrt(N), 1/sqrt(N)] otherwise.
inline PannParams pann_random_params(int width, double lambda_gr, Rng& rng) {
  PannParams p(width, lambda_gr);
  const double s = 1.0 / std::sqrt(static_cast<double>(width));
  Eigen::VectorXd th(p.num_params());
  for (int i = 0; i < th.size(); ++i)
    th[i] = PannParams::constrained(i) ? s * uniform01(rng) : s * (2.0 * uniform01(rng) - 1.0);
  p.unflatten(th);
  return p;
}

/// Deterministic permutation split: the first round((1 - test_fraction) n) shuffled indices calibrate.
inline void pann_split(std::size_t n, double test_fraction, Rng& rng, std::vector<std::size_t>& cal,
                       std::vector<std::size_t>& test) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(idx[i - 1], idx[std::min(j, i - 1)]);
  }
  std::size_t nc = static_cast<std::size_t>(std::lround((1.0 - test_fraction) * static_cast<double>(n)));
  nc = std::clamp<std::size_t>(nc, 1, n);
  cal.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nc));
  test.assign(idx.begin() + static_cast<std::ptrdiff_t>(nc), idx.end());
  std::sort(cal.begin(), cal.end());
  std::sort(test.begin(), test.end());
}

/**
 * Projected Levenberg-Marquardt on the calibration residuals. Parameters sitting
 * on their zero bound with a gradient pointing outward are frozen for the step;
 * trial points are projected back onto the feasible box.
 * Returns the final calibration mse and sets @p iterations.
 */
inline double pann_minimize(const std::vector<PannPrepared>& data, PannParams& p, int max_iterations, double tol,
                            int* iterations = nullptr) {
  Eigen::VectorXd th = p.flatten(), r, r_trial;
  Eigen::MatrixXd jac;
  const int P = p.num_params();
  pann_residuals(data, p, r, &jac);
  double loss = r.squaredNorm();
  double mu = 1e-3;
  int stagnant = 0, it = 0;
  PannParams trial = p;
  for (; it < max_iterations; ++it) {
    const Eigen::VectorXd g = jac.transpose() * r;
    const Eigen::MatrixXd H = jac.transpose() * jac;
    std::vector<int> free;
    for (int i = 0; i < P; ++i)
      if (!(PannParams::constrained(i) && th[i] <= 0.0 && g[i] > 0.0)) free.push_back(i);
    if (free.empty()) break;
    const int nf = static_cast<int>(free.size());
    Eigen::MatrixXd Hf(nf, nf);
    Eigen::VectorXd gf(nf);
    for (int a = 0; a < nf; ++a) {
      gf[a] = g[free[a]];
      for (int c = 0; c < nf; ++c) Hf(a, c) = H(free[a], free[c]);
    }
    const double hscale = std::max(Hf.diagonal().maxCoeff(), 1e-300);
    bool accepted = false;
    for (int tries = 0; tries < 30; ++tries) {
      Eigen::MatrixXd A = Hf;
      for (int a = 0; a < nf; ++a) A(a, a) += mu * (Hf(a, a) + 1e-12 * hscale);
      const Eigen::VectorXd step = A.ldlt().solve(-gf);
      Eigen::VectorXd th_new = th;
      for (int a = 0; a < nf; ++a) th_new[free[a]] += step[a];
      for (int i = 0; i < P; ++i)
        if (PannParams::constrained(i)) th_new[i] = std::max(th_new[i], 0.0);
      trial.unflatten(th_new);
      pann_residuals(data, trial, r_trial);
      const double l_new = r_trial.squaredNorm();
      if (std::isfinite(l_new) && l_new < loss) {
        const double rel = (loss - l_new) / std::max(loss, 1e-300);
        stagnant = rel < tol ? stagnant + 1 : 0;
        th = th_new;
        loss = l_new;
        mu = std::max(mu / 3.0, 1e-12);
        accepted = true;
        break;
      }
      mu *= 4.0;
      if (mu > 1e16) break;
    }
    if (!accepted || stagnant >= 5) break;
    p.unflatten(th);
    pann_residuals(data, p, r, &jac);
  }
  p.unflatten(th);
  if (iterations) *iterations = it;
  return loss;
}

/// Multi-start calibration; returns the restart with the lowest calibration loss.
inline PannTrainReport pann_train(const std::vector<PannSample>& samples, StressMetric metric,
                                  const PannTrainConfig& cfg) {
  cfg.validate();
  if (samples.size() < 2) throw std::invalid_argument("pann: need at least two samples");
  Rng rng = make_rng(cfg.seed, "pann-init");
  std::vector<std::size_t> cal_idx, test_idx;
  pann_split(samples.size(), cfg.test_fraction, rng, cal_idx, test_idx);
  std::vector<PannSample> cal, test;
  for (auto i : cal_idx) cal.push_back(samples[i]);
  for (auto i : test_idx) test.push_back(samples[i]);
  const auto dcal = pann_prepare(cal, metric);
  const auto dtest = pann_prepare(test, metric);

  PannTrainReport rep;
  rep.n_calibration = static_cast<int>(cal.size());
  rep.n_test = static_cast<int>(test.size());
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < cfg.restarts; ++k) {
    PannParams p = pann_random_params(cfg.width, cfg.lambda_gr, rng);
    int its = 0;
    double loss = std::numeric_limits<double>::quiet_NaN();
    try {
      loss = pann_minimize(dcal, p, cfg.max_iterations, cfg.tolerance, &its);
    } catch (const std::exception&) {
      loss = std::numeric_limits<double>::quiet_NaN();
    }
    rep.restart_losses.push_back(loss);
    rep.restart_iterations.push_back(its);
    if (std::isfinite(loss) && p.admissible() && loss < best) {
      best = loss;
      rep.params = p;
      rep.best_restart = k;
    }
  }
  if (rep.best_restart < 0) {
    std::ostringstream os;
    os << "pann: all " << cfg.restarts << " restarts diverged (losses:";
    for (double l : rep.restart_losses) os << ' ' << l;
    os << ")";
    throw std::runtime_error(os.str());
  }
  rep.mse_calibration = best;
  rep.r2_calibration = pann_r2_inplane(dcal, rep.params);
  if (!dtest.empty()) {
    rep.mse_test = pann_mse(dtest, rep.params);
    rep.r2_test = dtest.size() >= 2 ? pann_r2_inplane(dtest, rep.params) : std::numeric_limits<double>::quiet_NaN();
  } else {
    rep.mse_test = rep.r2_test = std::numeric_limits<double>::quiet_NaN();
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

/// Text key-value model file, format `pann-v1`.
inline void write_pann(std::ostream& os, const PannParams& p, const std::string& metric = "") {
  os << std::setprecision(17);
  os << "format pann-v1\n";
  os << "units MPa\n";
  if (!metric.empty()) os << "metric " << metric << '\n';
  os << "width " << p.width << '\n';
  os << "lambda_gr " << p.lambda_gr << '\n';
  os << "W";
  for (int a = 0; a < p.width; ++a) os << ' ' << p.W[a];
  os << "\nw";
  for (int a = 0; a < p.width; ++a) os << ' ' << p.w(a, 0) << ' ' << p.w(a, 1) << ' ' << p.w(a, 2);
  os << "\nwstar";
  for (int a = 0; a < p.width; ++a) os << ' ' << p.wstar[a];
  os << "\nb";
  for (int a = 0; a < p.width; ++a) os << ' ' << p.b[a];
  os << '\n';
}

inline PannParams read_pann(std::istream& is, std::string* metric = nullptr) {
  std::string line, key;
  PannParams p;
  bool have_format = false, have_width = false;
  std::vector<std::pair<std::string, std::vector<double>>> arrays;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ls >> key;
    if (key == "format") {
      std::string f;
      ls >> f;
      if (f != "pann-v1") throw std::runtime_error("pann: unsupported model format '" + f + "'");
      have_format = true;
    } else if (key == "units") {
      std::string u;
      ls >> u;
      if (u != "MPa") throw std::runtime_error("pann: unsupported units '" + u + "'");
    } else if (key == "metric") {
      std::string m;
      ls >> m;
      if (metric) *metric = m;
    } else if (key == "width") {
      ls >> p.width;
      have_width = true;
    } else if (key == "lambda_gr") {
      ls >> p.lambda_gr;
    } else if (key == "W" || key == "w" || key == "wstar" || key == "b") {
      std::vector<double> v;
      double x;
      while (ls >> x) v.push_back(x);
      arrays.emplace_back(key, std::move(v));
    } else {
      throw std::runtime_error("pann: unknown key '" + key + "'");
    }
  }
  if (!have_format || !have_width || p.width < 1) throw std::runtime_error("pann: missing format or width");
  PannParams out(p.width, p.lambda_gr);
  for (const auto& [k, v] : arrays) {
    const std::size_t expect = static_cast<std::size_t>(k == "w" ? 3 * p.width : p.width);
    if (v.size() != expect) throw std::runtime_error("pann: wrong number of values for '" + k + "'");
    for (int a = 0; a < p.width; ++a) {
      if (k == "W") out.W[a] = v[a];
      if (k == "wstar") out.wstar[a] = v[a];
      if (k == "b") out.b[a] = v[a];
      if (k == "w")
        for (int j = 0; j < 3; ++j) out.w(a, j) = v[3 * a + j];
    }
  }
  out.normalize();
  if (!out.admissible()) throw std::runtime_error("pann: model violates the weight constraints");
  return out;
}

inline void save_pann(const std::string& path, const PannParams& p, const std::string& metric = "") {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_pann(os, p, metric);
}

inline PannParams load_pann(const std::string& path, std::string* metric = nullptr) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  return read_pann(is, metric);
}

}  // namespace hyperfit
