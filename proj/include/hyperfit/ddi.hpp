/**
 * @file ddi.hpp
 * @brief Data-driven identification of plane-stress stress-strain databases from
 *        displacement and force snapshots.
 *
 * Three formulations are provided:
 *  - UL          Euler-Almansi strain e and Cauchy stress sigma on the deformed domain,
 *  - TL          Green-Lagrange strain E and second Piola-Kirchhoff stress T on the reference domain,
 *  - TL-adapted  TL with the pseudo stiffness pulled back through the measured F at every point.
 *
 * Internally strains are Mandel 4-vectors [x11, x22, x33, sqrt2 x12] and stresses
 * Mandel 3-vectors [s11, s22, sqrt2 s12]; the pseudo stiffness C * (symmetric
 * identity) is then C times the identity matrix. Points are indexed
 * p = tau * n_quad + g.
 */
#pragma once

#include "hyperfit/continuum.hpp"
#include "hyperfit/dataset.hpp"
#include "hyperfit/kmeans.hpp"
#include "hyperfit/linalg.hpp"
#include "hyperfit/mesh.hpp"
#include "hyperfit/rng.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hyperfit {

enum class Formulation { UL, TL, TLAdapted };

inline std::string to_string(Formulation f) {
  switch (f) {
    case Formulation::UL: return "ul";
    case Formulation::TL: return "tl";
    case Formulation::TLAdapted: return "tl-adapted";
  }
  return "?";
}

inline Formulation parse_formulation(const std::string& s) {
  if (s == "ul") return Formulation::UL;
  if (s == "tl") return Formulation::TL;
  if (s == "tl-adapted") return Formulation::TLAdapted;
  throw std::invalid_argument("unknown formulation '" + s + "' (expected ul, tl or tl-adapted)");
}

using Strain4 = Eigen::Vector4d;
using Stress3 = Eigen::Vector3d;
using Mat4 = Eigen::Matrix4d;
using StrainOp = Eigen::Matrix<double, 3, 6>;

inline const double kSqrt2 = std::sqrt(2.0);

/// Mandel strain vector of a symmetric tensor with zero out-of-plane shear.
inline Strain4 strain4(const SymTensor2& x) { return {x(0, 0), x(1, 1), x(2, 2), kSqrt2 * x(0, 1)}; }
inline SymTensor2 from_strain4(const Strain4& v) {
  SymTensor2 t;
  t(0, 0) = v[0], t(1, 1) = v[1], t(2, 2) = v[2], t(0, 1) = v[3] / kSqrt2;
  return t;
}
inline Stress3 stress3(const SymTensor2& s) { return {s(0, 0), s(1, 1), kSqrt2 * s(0, 1)}; }
inline SymTensor2 from_stress3(const Stress3& v) {
  SymTensor2 t;
  t(0, 0) = v[0], t(1, 1) = v[1], t(0, 1) = v[2] / kSqrt2;
  return t;
}

struct DdiConfig {
  Formulation formulation = Formulation::UL;
  double nstar_ratio = 0.01;       ///< N* / (N_quad N_snap), used when nstar == 0
  int nstar = 0;                   ///< explicit number of material states
  double C = 1.0;                  ///< pseudo stiffness scale, MPa
  int max_iterations = 100;
  double linear_tol = 1e-10;
  int max_linear_iterations = 20000;
  bool reinit = true;              ///< one-time stress-based remapping after the first iteration
  bool accelerated_search = true;  ///< projection-pruned nearest-state search (constant metric only)
  int kmeans_iterations = 100;
  std::uint64_t seed = 0;
  std::vector<int> pinned_nodes;   ///< nodes whose forces are treated as unknown in addition to the zeta set

  void validate() const {
    if (!(C > 0.0)) throw std::invalid_argument("ddi: pseudo stiffness must be positive");
    if (nstar < 0) throw std::invalid_argument("ddi: nstar must be >= 0");
    if (nstar == 0 && !(nstar_ratio > 0.0 && nstar_ratio <= 1.0))
      throw std::invalid_argument("ddi: nstar ratio must lie in (0, 1]");
    if (max_iterations < 1) throw std::invalid_argument("ddi: max_iterations must be >= 1");
    if (!(linear_tol > 0.0)) throw std::invalid_argument("ddi: linear tolerance must be positive");
  }
  int resolve_nstar(std::size_t n_points) const {
    const int n = nstar > 0 ? nstar : static_cast<int>(std::ceil(nstar_ratio * static_cast<double>(n_points) - 1e-9));
    return std::clamp(n, 1, static_cast<int>(n_points));
  }
};

// ---------------------------------------------------------------------------
// Inputs
// ---------------------------------------------------------------------------

/// Measured data on full node arrays.
struct DdiInput {
  TriMesh mesh;
  std::vector<std::vector<Vec2>> u;       ///< [tau][node] displacements
  std::vector<std::vector<double>> h;     ///< [tau][element] thickness at quadrature points
  std::vector<std::vector<Vec2>> f;       ///< [tau][node] external force (zero where unknown)
  std::vector<std::vector<char>> known;   ///< [tau][node] force prescribed
  std::size_t n_snap() const { return u.size(); }
};

/**
 * Converts a raw dataset into DDI inputs. Nodal thickness is averaged onto the
 * quadrature points. Realistic datasets carry only the global force, which is
 * turned into a homogeneous traction F / A0 on the force boundary; every other
 * node outside the unknown-force set is force free.
 */
inline DdiInput prepare_ddi_input(const RawDataset& ds) {
  DdiInput in;
  in.mesh = ds.mesh;
  const std::size_t nn = ds.mesh.num_nodes();
  std::vector<char> zeta(nn, 0);
  for (int k : ds.mesh.boundary(ds.zeta_set)) zeta[k] = 1;
  for (const auto& s : ds.snapshots) {
    in.u.push_back(s.displacements);
    if (!s.thickness_quad.empty())
      in.h.push_back(s.thickness_quad);
    else if (!s.thickness_nodes.empty())
      in.h.push_back(project_thickness_to_quadpoints(ds.mesh, s.thickness_nodes));
    else
      throw std::invalid_argument("ddi input: snapshot without thickness");
    for (double v : in.h.back())
      if (!(v > 0.0)) throw std::invalid_argument("ddi input: non-positive thickness");
    std::vector<Vec2> f(nn, Vec2::Zero());
    std::vector<char> known(nn, 0);
    if (ds.mode == "realistic") {
      if (!(ds.A0 > 0.0)) throw std::invalid_argument("ddi input: realistic dataset needs A0");
      f = traction_to_nodal_forces(ds.mesh, ds.mesh.boundary(ds.force_set), Vec2(0.0, -s.global_force / ds.A0),
                                   ds.mesh.h0);
      for (std::size_t k = 0; k < nn; ++k) known[k] = !zeta[k];
      for (std::size_t k = 0; k < nn; ++k)
        if (zeta[k]) f[k].setZero();
    } else {
      for (std::size_t i = 0; i < s.known_nodes.size(); ++i) {
        f[s.known_nodes[i]] = s.known_forces[i];
        known[s.known_nodes[i]] = 1;
      }
    }
    in.f.push_back(std::move(f));
    in.known.push_back(std::move(known));
  }
  return in;
}

// ---------------------------------------------------------------------------
// Discrete problem
// ---------------------------------------------------------------------------

struct DdiProblem {
  Formulation formulation = Formulation::UL;
  double C = 1.0;
  int n_snap = 0, n_quad = 0, n_nodes = 0;
  std::vector<Element> elements;
  std::vector<char> pi;                ///< per node: force prescribed in all snapshots
  std::vector<int> dof;                ///< per node: first unknown index of eta, or -1
  int M = 0;                           ///< eta unknowns per snapshot
  std::vector<StrainOp> B;             ///< per point
  std::vector<double> omega;           ///< per point: w J h
  std::vector<Strain4> strain;         ///< per point, measured
  std::vector<Eigen::Matrix3d> D;      ///< per point in-plane stiffness (adapted only)
  std::vector<double> D33;             ///< per point out-of-plane strain metric (adapted only)
  std::vector<Eigen::VectorXd> f;      ///< per snapshot, length M

  std::size_t n_points() const { return static_cast<std::size_t>(n_snap) * n_quad; }
  bool constant_metric() const { return formulation != Formulation::TLAdapted; }

  Eigen::Matrix3d stiffness(std::size_t p) const {
    return constant_metric() ? Eigen::Matrix3d(C * Eigen::Matrix3d::Identity()) : D[p];
  }
  Mat4 strain_metric(std::size_t p) const {
    if (constant_metric()) return C * Mat4::Identity();
    Mat4 q = Mat4::Zero();
    const int idx[3] = {0, 1, 3};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) q(idx[i], idx[j]) = D[p](i, j);
    q(2, 2) = D33[p];
    return q;
  }
  Eigen::Matrix3d stress_metric(std::size_t p) const {
    return constant_metric() ? Eigen::Matrix3d(Eigen::Matrix3d::Identity() / C) : Eigen::Matrix3d(D[p].inverse());
  }
};

/// Strains, operators, weights and adapted stiffnesses of every (g, tau).
inline DdiProblem build_ddi_problem(const DdiInput& in, const DdiConfig& cfg) {
  cfg.validate();
  in.mesh.validate();
  if (in.u.empty()) throw std::invalid_argument("ddi: no snapshots");
  DdiProblem pb;
  pb.formulation = cfg.formulation;
  pb.C = cfg.C;
  pb.n_snap = static_cast<int>(in.n_snap());
  pb.n_quad = static_cast<int>(in.mesh.num_elements());
  pb.n_nodes = static_cast<int>(in.mesh.num_nodes());
  pb.elements = in.mesh.elements;

  pb.pi.assign(pb.n_nodes, 1);
  for (const auto& k : in.known)
    for (int a = 0; a < pb.n_nodes; ++a)
      if (!k[a]) pb.pi[a] = 0;
  for (int a : cfg.pinned_nodes) {
    if (a < 0 || a >= pb.n_nodes) throw std::invalid_argument("ddi: pinned node out of range");
    pb.pi[a] = 0;
  }
  pb.dof.assign(pb.n_nodes, -1);
  for (int a = 0; a < pb.n_nodes; ++a)
    if (pb.pi[a]) pb.dof[a] = pb.M, pb.M += 2;
  const int n_unknown_force = pb.n_nodes - pb.M / 2;
  if (n_unknown_force < 2)
    throw std::invalid_argument(
        "ddi: forces are prescribed at (almost) every node, leaving rigid-body modes free; "
        "declare an unknown-force boundary or pin at least two nodes");

  const Connectivity ref = build_connectivity(in.mesh);
  const std::size_t np = pb.n_points();
  pb.B.resize(np);
  pb.omega.resize(np);
  pb.strain.resize(np);
  if (!pb.constant_metric()) pb.D.resize(np), pb.D33.resize(np);
  for (int t = 0; t < pb.n_snap; ++t) {
    if (in.u[t].size() != static_cast<std::size_t>(pb.n_nodes) || in.h[t].size() != static_cast<std::size_t>(pb.n_quad))
      throw std::invalid_argument("ddi: snapshot size mismatch");
    Connectivity cur;
    if (cfg.formulation == Formulation::UL) cur = build_connectivity(in.mesh, &in.u[t]);
    for (int g = 0; g < pb.n_quad; ++g) {
      const std::size_t p = static_cast<std::size_t>(t) * pb.n_quad + g;
      const Mat2 f2 = deformation_gradient(ref, g, in.u[t]);
      const double l3 = in.h[t][g] / in.mesh.h0;
      const DefGrad F = DefGrad::plane(f2, l3);
      const Kinematics kin = kinematics(F);
      if (cfg.formulation == Formulation::UL) {
        pb.B[p] = strain_operator(cur.grad[g]);
        pb.omega[p] = cur.area(g) * in.h[t][g];
        pb.strain[p] = strain4(kin.e);
      } else {
        pb.B[p] = strain_operator(ref.grad[g], f2);
        pb.omega[p] = ref.area(g) * in.mesh.h0;
        pb.strain[p] = strain4(kin.E);
        if (cfg.formulation == Formulation::TLAdapted) {
          const Mat6 m = pullback_pseudo_stiffness(cfg.C, F).mandel();
          const int idx[3] = {0, 1, 5};
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) pb.D[p](i, j) = m(idx[i], idx[j]);
          pb.D33[p] = m(2, 2);
        }
      }
    }
    Eigen::VectorXd ft = Eigen::VectorXd::Zero(pb.M);
    for (int a = 0; a < pb.n_nodes; ++a)
      if (pb.dof[a] >= 0) ft.segment<2>(pb.dof[a]) = in.f[t][a];
    pb.f.push_back(std::move(ft));
  }
  return pb;
}

// ---------------------------------------------------------------------------
// Saddle-point system
// ---------------------------------------------------------------------------

struct SaddleSolveInfo {
  int iterations = 0;
  double residual = 0.0;  ///< ||b - A x|| / ||b||
  int active_states = 0;
  bool converged = false;
};

/**
 * Block system [K S; S^T 0] [eta; sigma*] = [f; 0] with block-diagonal K over
 * snapshots. Only states with assigned points enter the unknown vector.
 */
class SaddleSystem {
 public:
  using SpMat = Eigen::SparseMatrix<double>;

  explicit SaddleSystem(const DdiProblem& pb) : pb_(pb) {
    K_.resize(pb.n_snap);
    for (int t = 0; t < pb.n_snap; ++t) {
      std::vector<Eigen::Triplet<double>> trip;
      for (int g = 0; g < pb.n_quad; ++g) {
        const std::size_t p = point(t, g);
        const Eigen::Matrix<double, 6, 6> ke = pb.omega[p] * pb.B[p].transpose() * pb.stiffness(p) * pb.B[p];
        for (int i = 0; i < 6; ++i) {
          const int ri = row(g, i);
          if (ri < 0) continue;
          for (int j = 0; j < 6; ++j) {
            const int cj = row(g, j);
            if (cj >= 0) trip.emplace_back(ri, cj, ke(i, j));
          }
        }
      }
      K_[t].resize(pb.M, pb.M);
      K_[t].setFromTriplets(trip.begin(), trip.end());
      chol_.push_back(std::make_unique<Eigen::SimplicialLLT<SpMat>>(K_[t]));
      if (chol_[t]->info() != Eigen::Success)
        throw std::runtime_error("ddi: snapshot stiffness block is singular; rigid-body modes must be pinned");
    }
  }

  const DdiProblem& problem() const { return pb_; }
  int n_eta() const { return pb_.n_snap * pb_.M; }
  int n_unknowns() const { return n_eta() + 3 * static_cast<int>(active_.size()); }
  const std::vector<int>& active_states() const { return active_; }

  /// Rebuilds the coupling blocks for @p mapping over @p nstar states.
  void set_mapping(const std::vector<int>& mapping, int nstar) {
    std::vector<char> used(nstar, 0);
    for (int z : mapping) used[z] = 1;
    active_.clear();
    slot_.assign(nstar, -1);
    for (int z = 0; z < nstar; ++z)
      if (used[z]) slot_[z] = static_cast<int>(active_.size()), active_.push_back(z);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(pb_.n_points() * 18);
    for (int t = 0; t < pb_.n_snap; ++t)
      for (int g = 0; g < pb_.n_quad; ++g) {
        const std::size_t p = point(t, g);
        const int col = 3 * slot_[mapping[p]];
        for (int i = 0; i < 6; ++i) {
          const int r = row(g, i);
          if (r < 0) continue;
          for (int c = 0; c < 3; ++c) trip.emplace_back(t * pb_.M + r, col + c, pb_.omega[p] * pb_.B[p](c, i));
        }
      }
    S_.resize(n_eta(), 3 * static_cast<int>(active_.size()));
    S_.setFromTriplets(trip.begin(), trip.end());
    St_ = S_.transpose();

    // Schur preconditioner S^T diag(K)^-1 S
    Eigen::VectorXd dinv(n_eta());
    for (int t = 0; t < pb_.n_snap; ++t) dinv.segment(t * pb_.M, pb_.M) = K_[t].diagonal().cwiseInverse();
    SpMat schur = St_ * (dinv.asDiagonal() * S_);
    double tr = 0.0;
    for (int i = 0; i < schur.rows(); ++i) tr += schur.coeff(i, i);
    const double reg = 1e-12 * tr / std::max<Eigen::Index>(1, schur.rows());
    SpMat eye(schur.rows(), schur.cols());
    eye.setIdentity();
    schur += reg * eye;
    schur_.compute(schur);
    if (schur_.info() != Eigen::Success) throw std::runtime_error("ddi: Schur preconditioner factorization failed");
  }

  void apply(const Eigen::VectorXd& x, Eigen::VectorXd& y) const {
    const int ne = n_eta();
    y.resize(x.size());
    for (int t = 0; t < pb_.n_snap; ++t) y.segment(t * pb_.M, pb_.M) = K_[t] * x.segment(t * pb_.M, pb_.M);
    y.head(ne) += S_ * x.tail(x.size() - ne);
    y.tail(x.size() - ne) = St_ * x.head(ne);
  }

  void precondition(const Eigen::VectorXd& x, Eigen::VectorXd& y) const {
    const int ne = n_eta();
    y.resize(x.size());
    for (int t = 0; t < pb_.n_snap; ++t) y.segment(t * pb_.M, pb_.M) = chol_[t]->solve(x.segment(t * pb_.M, pb_.M));
    y.tail(x.size() - ne) = schur_.solve(x.tail(x.size() - ne));
  }

  Eigen::VectorXd rhs() const {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n_unknowns());
    for (int t = 0; t < pb_.n_snap; ++t) b.segment(t * pb_.M, pb_.M) = pb_.f[t];
    return b;
  }

  /// Dense copy of the system matrix (small problems only).
  Eigen::MatrixXd dense() const {
    const int n = n_unknowns();
    Eigen::MatrixXd A(n, n);
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n), col;
    for (int j = 0; j < n; ++j) {
      e[j] = 1.0;
      apply(e, col);
      A.col(j) = col;
      e[j] = 0.0;
    }
    return A;
  }

  /// MINRES with restarts until the true relative residual meets @p tol. @p x is the warm start.
  SaddleSolveInfo solve(Eigen::VectorXd& x, double tol, int max_iterations) const {
    SaddleSolveInfo info;
    info.active_states = static_cast<int>(active_.size());
    const Eigen::VectorXd b = rhs();
    if (x.size() != b.size()) x = Eigen::VectorXd::Zero(b.size());
    const double bnorm = b.norm();
    if (bnorm == 0.0) {
      x.setZero();
      info.converged = true;
      return info;
    }
    const Operator A = [this](const Eigen::VectorXd& in, Eigen::VectorXd& out) { apply(in, out); };
    const Operator M = [this](const Eigen::VectorXd& in, Eigen::VectorXd& out) { precondition(in, out); };
    Eigen::VectorXd ax;
    double inner_tol = tol;
    for (int restart = 0; restart < 8; ++restart) {
      const auto r = minres(A, M, b, x, inner_tol, max_iterations - info.iterations);
      info.iterations += r.iterations;
      apply(x, ax);
      info.residual = (b - ax).norm() / bnorm;
      if (info.residual <= tol) {
        info.converged = true;
        break;
      }
      if (info.iterations >= max_iterations) break;
      inner_tol *= 0.1;
    }
    return info;
  }

  /// Splits a solution vector into per-snapshot multipliers and per-state stresses.
  void unpack(const Eigen::VectorXd& x, std::vector<Eigen::VectorXd>& eta, std::vector<Stress3>& sigma_star) const {
    eta.resize(pb_.n_snap);
    for (int t = 0; t < pb_.n_snap; ++t) eta[t] = x.segment(t * pb_.M, pb_.M);
    for (std::size_t a = 0; a < active_.size(); ++a) sigma_star[active_[a]] = x.segment<3>(n_eta() + 3 * a);
  }

  Eigen::VectorXd pack(const std::vector<Eigen::VectorXd>& eta, const std::vector<Stress3>& sigma_star) const {
    Eigen::VectorXd x(n_unknowns());
    for (int t = 0; t < pb_.n_snap; ++t) x.segment(t * pb_.M, pb_.M) = eta[t];
    for (std::size_t a = 0; a < active_.size(); ++a) x.segment<3>(n_eta() + 3 * a) = sigma_star[active_[a]];
    return x;
  }

 private:
  std::size_t point(int t, int g) const { return static_cast<std::size_t>(t) * pb_.n_quad + g; }
  /// Unknown index of local column i (node i/2, component i%2) of element g, or -1.
  int row(int g, int i) const {
    const int d = pb_.dof[pb_.elements[g][i / 2]];
    return d < 0 ? -1 : d + i % 2;
  }

  const DdiProblem& pb_;
  std::vector<SpMat> K_;
  std::vector<std::unique_ptr<Eigen::SimplicialLLT<SpMat>>> chol_;
  SpMat S_, St_;
  Eigen::SimplicialLDLT<SpMat> schur_;
  std::vector<int> active_, slot_;
};

// ---------------------------------------------------------------------------
// Update steps
// ---------------------------------------------------------------------------

/// sigma_p = sigma*_{s(p)} + D_p B_p eta (multipliers of unknown-force nodes are zero).
inline std::vector<Stress3> update_mechanical_stress(const DdiProblem& pb, const std::vector<int>& mapping,
                                                     const std::vector<Eigen::VectorXd>& eta,
                                                     const std::vector<Stress3>& sigma_star) {
  std::vector<Stress3> out(pb.n_points());
  for (int t = 0; t < pb.n_snap; ++t)
    for (int g = 0; g < pb.n_quad; ++g) {
      const std::size_t p = static_cast<std::size_t>(t) * pb.n_quad + g;
      Eigen::Matrix<double, 6, 1> ue = Eigen::Matrix<double, 6, 1>::Zero();
      for (int k = 0; k < 3; ++k) {
        const int d = pb.dof[pb.elements[g][k]];
        if (d >= 0) ue.segment<2>(2 * k) = eta[t].segment<2>(d);
      }
      out[p] = sigma_star[mapping[p]] + pb.stiffness(p) * (pb.B[p] * ue);
    }
  return out;
}

/**
 * Material strains of the states with assigned points: weighted mean (UL, TL) or
 * stiffness-weighted mean (adapted). States without points keep @p previous.
 * Returns the number of states whose system was singular and fell back to the plain mean.
 */
inline int update_material_strain(const DdiProblem& pb, const std::vector<int>& mapping,
                                  const std::vector<Strain4>& strains, std::vector<Strain4>& mat_strain) {
  const std::size_t nz = mat_strain.size();
  std::vector<double> wsum(nz, 0.0);
  std::vector<Strain4> num(nz, Strain4::Zero()), plain(nz, Strain4::Zero());
  std::vector<Mat4> qsum(nz, Mat4::Zero());
  for (std::size_t p = 0; p < pb.n_points(); ++p) {
    const int z = mapping[p];
    wsum[z] += pb.omega[p];
    plain[z] += pb.omega[p] * strains[p];
    if (!pb.constant_metric()) {
      const Mat4 q = pb.omega[p] * pb.strain_metric(p);
      qsum[z] += q;
      num[z] += q * strains[p];
    }
  }
  int fallbacks = 0;
  for (std::size_t z = 0; z < nz; ++z) {
    if (!(wsum[z] > 0.0)) continue;
    if (pb.constant_metric()) {
      mat_strain[z] = plain[z] / wsum[z];
      continue;
    }
    Eigen::LLT<Mat4> llt(qsum[z]);
    if (llt.info() == Eigen::Success) {
      mat_strain[z] = llt.solve(num[z]);
    } else {
      mat_strain[z] = plain[z] / wsum[z];
      ++fallbacks;
    }
  }
  return fallbacks;
}

/// Pointwise distance of mechanical state p to material state (e*, s*), without the factor 1/2.
inline double state_distance(const DdiProblem& pb, std::size_t p, const Strain4& e, const Stress3& s,
                             const Strain4& e_star, const Stress3& s_star) {
  const Strain4 de = e - e_star;
  const Stress3 ds = s - s_star;
  if (pb.constant_metric()) return pb.C * de.squaredNorm() + ds.squaredNorm() / pb.C;
  return de.dot(pb.strain_metric(p) * de) + ds.dot(pb.stress_metric(p) * ds);
}

/// Exhaustive nearest-state search with lowest-index tie-break.
inline std::vector<int> reassign_exhaustive(const DdiProblem& pb, const std::vector<Strain4>& e,
                                            const std::vector<Stress3>& s, const std::vector<Strain4>& e_star,
                                            const std::vector<Stress3>& s_star) {
  const std::size_t nz = e_star.size();
  std::vector<int> out(pb.n_points());
  for (std::size_t p = 0; p < pb.n_points(); ++p) {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    if (pb.constant_metric()) {
      for (std::size_t z = 0; z < nz; ++z) {
        const double d = pb.C * (e[p] - e_star[z]).squaredNorm() + (s[p] - s_star[z]).squaredNorm() / pb.C;
        if (d < bd) bd = d, best = static_cast<int>(z);
      }
    } else {
      const Mat4 qe = pb.strain_metric(p);
      const Eigen::Matrix3d qs = pb.stress_metric(p);
      for (std::size_t z = 0; z < nz; ++z) {
        const Strain4 de = e[p] - e_star[z];
        const Stress3 ds = s[p] - s_star[z];
        const double d = de.dot(qe * de) + ds.dot(qs * ds);
        if (d < bd) bd = d, best = static_cast<int>(z);
      }
    }
    out[p] = best;
  }
  return out;
}

/**
 * Nearest-state search for a constant metric. States are sorted along the scaled
 * coordinate of largest spread; candidates are scanned outward from the query's
 * position and the scan stops once the coordinate gap alone exceeds the best
 * distance. Returns the same mapping as the exhaustive scan.
 */
inline std::vector<int> reassign_accelerated(const DdiProblem& pb, const std::vector<Strain4>& e,
                                             const std::vector<Stress3>& s, const std::vector<Strain4>& e_star,
                                             const std::vector<Stress3>& s_star) {
  if (!pb.constant_metric()) return reassign_exhaustive(pb, e, s, e_star, s_star);
  using Vec7 = Eigen::Matrix<double, 7, 1>;
  const double a = std::sqrt(pb.C), ia = 1.0 / a;
  auto embed = [&](const Strain4& x, const Stress3& y) {
    Vec7 v;
    v << a * x, ia * y;
    return v;
  };
  const std::size_t nz = e_star.size();
  std::vector<Vec7> ys(nz);
  for (std::size_t z = 0; z < nz; ++z) ys[z] = embed(e_star[z], s_star[z]);
  int axis = 0;
  double spread = -1.0;
  for (int k = 0; k < 7; ++k) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& y : ys) lo = std::min(lo, y[k]), hi = std::max(hi, y[k]);
    if (hi - lo > spread) spread = hi - lo, axis = k;
  }
  std::vector<int> order(nz);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return ys[i][axis] < ys[j][axis]; });
  std::vector<double> key(nz);
  for (std::size_t r = 0; r < nz; ++r) key[r] = ys[order[r]][axis];

  std::vector<int> out(pb.n_points());
  for (std::size_t p = 0; p < pb.n_points(); ++p) {
    const Vec7 q = embed(e[p], s[p]);
    const auto start = std::lower_bound(key.begin(), key.end(), q[axis]) - key.begin();
    int best = -1;
    double bd = std::numeric_limits<double>::infinity();
    auto visit = [&](std::ptrdiff_t r) {
      const int z = order[r];
      const double d = (q - ys[z]).squaredNorm();
      if (d < bd || (d == bd && z < best)) bd = d, best = z;
    };
    std::ptrdiff_t lo = start - 1, hi = start;
    const auto n = static_cast<std::ptrdiff_t>(nz);
    while (lo >= 0 || hi < n) {
      const double glo = lo >= 0 ? q[axis] - key[lo] : std::numeric_limits<double>::infinity();
      const double ghi = hi < n ? key[hi] - q[axis] : std::numeric_limits<double>::infinity();
      if (std::min(glo, ghi) * std::min(glo, ghi) > bd) break;
      if (glo <= ghi)
        visit(lo--);
      else
        visit(hi++);
    }
    out[p] = best;
  }
  return out;
}

/// Loss without constraint terms: 1/2 sum_p omega_p (de Q_e de + ds Q_s ds).
inline double ddi_loss(const DdiProblem& pb, const std::vector<Strain4>& e, const std::vector<Stress3>& s,
                       const std::vector<Strain4>& e_star, const std::vector<Stress3>& s_star,
                       const std::vector<int>& mapping) {
  double loss = 0.0;
  for (std::size_t p = 0; p < pb.n_points(); ++p)
    loss += 0.5 * pb.omega[p] * state_distance(pb, p, e[p], s[p], e_star[mapping[p]], s_star[mapping[p]]);
  return loss;
}

/// Nodal force vectors sum_g omega B^T sigma for all nodes of snapshot @p t.
inline std::vector<Vec2> nodal_forces(const DdiProblem& pb, int t, const std::vector<Stress3>& sigma) {
  std::vector<Vec2> f(pb.n_nodes, Vec2::Zero());
  for (int g = 0; g < pb.n_quad; ++g) {
    const std::size_t p = static_cast<std::size_t>(t) * pb.n_quad + g;
    const Eigen::Matrix<double, 6, 1> fe = pb.omega[p] * pb.B[p].transpose() * sigma[p];
    for (int k = 0; k < 3; ++k) f[pb.elements[g][k]] += fe.segment<2>(2 * k);
  }
  return f;
}

/// Max over snapshots of ||f - sum omega B^T sigma|| / ||f|| on nodes with prescribed forces.
inline double equilibrium_residual(const DdiProblem& pb, const std::vector<Stress3>& sigma) {
  double worst = 0.0;
  for (int t = 0; t < pb.n_snap; ++t) {
    const auto fi = nodal_forces(pb, t, sigma);
    double r2 = 0.0;
    for (int a = 0; a < pb.n_nodes; ++a)
      if (pb.dof[a] >= 0) r2 += (pb.f[t].segment<2>(pb.dof[a]) - fi[a]).squaredNorm();
    const double fn = pb.f[t].norm();
    worst = std::max(worst, fn > 0.0 ? std::sqrt(r2) / fn : std::sqrt(r2));
  }
  return worst;
}

/// Initial mapping by k-means on the plain strain components [x11, x22, x33, x12].
inline KmeansResult init_mapping_kmeans_strain(const std::vector<Strain4>& strains, int nstar, Rng& rng,
                                               int max_iterations = 100) {
  Eigen::MatrixXd pts(4, static_cast<Eigen::Index>(strains.size()));
  for (std::size_t p = 0; p < strains.size(); ++p) {
    pts.col(p) = strains[p];
    pts(3, p) /= kSqrt2;
  }
  return kmeans(pts, nstar, rng, max_iterations);
}

/// Mapping by k-means on the plain stress components, seeded with the material stresses.
inline KmeansResult init_mapping_kmeans_stress(const std::vector<Stress3>& stresses,
                                               const std::vector<Stress3>& seeds, int max_iterations = 100) {
  Eigen::MatrixXd pts(3, static_cast<Eigen::Index>(stresses.size()));
  for (std::size_t p = 0; p < stresses.size(); ++p) {
    pts.col(p) = stresses[p];
    pts(2, p) /= kSqrt2;
  }
  Eigen::MatrixXd cent(3, static_cast<Eigen::Index>(seeds.size()));
  for (std::size_t z = 0; z < seeds.size(); ++z) {
    cent.col(z) = seeds[z];
    cent(2, z) /= kSqrt2;
  }
  return lloyd(pts, std::move(cent), max_iterations);
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

struct DdiIteration {
  double loss = 0.0;
  int changed = 0;             ///< mapping entries changed by this iteration's reassignment
  int linear_iterations = 0;
  double linear_residual = 0.0;
  int empty_states = 0;        ///< states eliminated from the saddle solve
  double equilibrium = 0.0;    ///< relative equilibrium residual after the stress update
  bool reinitialized = false;
};

struct DdiResult {
  Formulation formulation = Formulation::UL;
  int n_snap = 0, n_quad = 0, nstar = 0;
  std::vector<Strain4> mat_strain;
  std::vector<Stress3> mat_stress;
  std::vector<double> mat_weight;        ///< sum of point weights assigned to each state
  std::vector<Strain4> mech_strain;
  std::vector<Stress3> mech_stress;
  std::vector<int> mapping;
  std::vector<int> zeta_nodes;
  std::vector<std::vector<Vec2>> zeta;   ///< [tau][k] recovered force at zeta_nodes[k]
  bool converged = false;
  int iterations = 0;
  double final_loss = 0.0;
  double final_equilibrium = 0.0;
  int strain_fallbacks = 0;
  std::vector<DdiIteration> history;
};

inline DdiResult run_ddi(const DdiInput& in, const DdiConfig& cfg) {
  const DdiProblem pb = build_ddi_problem(in, cfg);
  SaddleSystem sys(pb);
  const int nstar = cfg.resolve_nstar(pb.n_points());

  DdiResult res;
  res.formulation = cfg.formulation;
  res.n_snap = pb.n_snap;
  res.n_quad = pb.n_quad;
  res.nstar = nstar;
  res.mech_strain = pb.strain;

  Rng rng = make_rng(cfg.seed, "kmeans");
  const auto km = init_mapping_kmeans_strain(pb.strain, nstar, rng, cfg.kmeans_iterations);
  std::vector<int> mapping = km.labels;
  std::vector<Strain4> e_star(nstar);
  for (int z = 0; z < nstar; ++z) {
    e_star[z] = km.centroids.col(z);
    e_star[z][3] *= kSqrt2;
  }
  std::vector<Stress3> s_star(nstar, Stress3::Zero());
  std::vector<Stress3> sigma(pb.n_points(), Stress3::Zero());
  std::vector<Eigen::VectorXd> eta(pb.n_snap, Eigen::VectorXd::Zero(pb.M));

  for (int it = 0; it < cfg.max_iterations; ++it) {
    DdiIteration rec;
    sys.set_mapping(mapping, nstar);
    rec.empty_states = nstar - static_cast<int>(sys.active_states().size());
    Eigen::VectorXd x = sys.pack(eta, s_star);
    const auto info = sys.solve(x, cfg.linear_tol, cfg.max_linear_iterations);
    rec.linear_iterations = info.iterations;
    rec.linear_residual = info.residual;
    sys.unpack(x, eta, s_star);
    sigma = update_mechanical_stress(pb, mapping, eta, s_star);
    res.strain_fallbacks += update_material_strain(pb, mapping, pb.strain, e_star);
    rec.equilibrium = equilibrium_residual(pb, sigma);
    rec.loss = ddi_loss(pb, pb.strain, sigma, e_star, s_star, mapping);
    res.iterations = it + 1;

    std::vector<int> next;
    if (it == 0 && cfg.reinit && nstar > 1) {
      next = init_mapping_kmeans_stress(sigma, s_star, cfg.kmeans_iterations).labels;
      rec.reinitialized = true;
    } else {
      next = cfg.accelerated_search ? reassign_accelerated(pb, pb.strain, sigma, e_star, s_star)
                                    : reassign_exhaustive(pb, pb.strain, sigma, e_star, s_star);
    }
    for (std::size_t p = 0; p < next.size(); ++p) rec.changed += next[p] != mapping[p];
    res.history.push_back(rec);
    if (rec.changed == 0 && !rec.reinitialized) {
      res.converged = true;
      break;
    }
    mapping = std::move(next);
  }

  res.mapping = mapping;
  res.mech_stress = sigma;
  res.mat_strain = e_star;
  res.mat_stress = s_star;
  res.mat_weight.assign(nstar, 0.0);
  for (std::size_t p = 0; p < pb.n_points(); ++p) res.mat_weight[mapping[p]] += pb.omega[p];
  res.final_loss = res.history.back().loss;
  res.final_equilibrium = res.history.back().equilibrium;
  for (int a = 0; a < pb.n_nodes; ++a)
    if (!pb.pi[a]) res.zeta_nodes.push_back(a);
  for (int t = 0; t < pb.n_snap; ++t) {
    const auto fi = nodal_forces(pb, t, sigma);
    std::vector<Vec2> z;
    for (int a : res.zeta_nodes) z.push_back(fi[a]);
    res.zeta.push_back(std::move(z));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Database files
// ---------------------------------------------------------------------------

/// One identified state in plain components.
struct DatabaseEntry {
  int z = 0;
  Strain4 strain = Strain4::Zero();  ///< Mandel
  Stress3 stress = Stress3::Zero();  ///< Mandel
  double weight = 0.0;
};

/// CSV `z,x11,x22,x33,x12,s11,s22,s12,weight` with plain tensor components.
inline void write_database(const std::string& path, const DdiResult& r) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "z,x11,x22,x33,x12,s11,s22,s12,weight\n";
  for (int z = 0; z < r.nstar; ++z) {
    const auto& e = r.mat_strain[z];
    const auto& s = r.mat_stress[z];
    os << z << ',' << detail::fmt17(e[0]) << ',' << detail::fmt17(e[1]) << ',' << detail::fmt17(e[2]) << ','
       << detail::fmt17(e[3] / kSqrt2) << ',' << detail::fmt17(s[0]) << ',' << detail::fmt17(s[1]) << ','
       << detail::fmt17(s[2] / kSqrt2) << ',' << detail::fmt17(r.mat_weight[z]) << '\n';
  }
}

inline std::vector<DatabaseEntry> read_database(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::getline(is, line);
  if (line.rfind("z,", 0) != 0) throw std::runtime_error(path + ": missing database header");
  std::vector<DatabaseEntry> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    DatabaseEntry d;
    double x12 = 0.0, s12 = 0.0;
    if (!(ls >> d.z >> d.strain[0] >> d.strain[1] >> d.strain[2] >> x12 >> d.stress[0] >> d.stress[1] >> s12 >> d.weight))
      throw std::runtime_error(path + ": malformed row");
    d.strain[3] = kSqrt2 * x12;
    d.stress[2] = kSqrt2 * s12;
    out.push_back(d);
  }
  return out;
}

/// CSV `tau,g,x11,x22,x33,x12,s11,s22,s12,z` of all mechanical states.
inline void write_mechanical_states(const std::string& path, const DdiResult& r) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "tau,g,x11,x22,x33,x12,s11,s22,s12,z\n";
  for (int t = 0; t < r.n_snap; ++t)
    for (int g = 0; g < r.n_quad; ++g) {
      const std::size_t p = static_cast<std::size_t>(t) * r.n_quad + g;
      const auto& e = r.mech_strain[p];
      const auto& s = r.mech_stress[p];
      os << t << ',' << g << ',' << detail::fmt17(e[0]) << ',' << detail::fmt17(e[1]) << ',' << detail::fmt17(e[2])
         << ',' << detail::fmt17(e[3] / kSqrt2) << ',' << detail::fmt17(s[0]) << ',' << detail::fmt17(s[1]) << ','
         << detail::fmt17(s[2] / kSqrt2) << ',' << r.mapping[p] << '\n';
    }
}

}  // namespace hyperfit
