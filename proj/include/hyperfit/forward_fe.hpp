/**
 * @file forward_fe.hpp
 * @brief Total-Lagrangian plane-stress finite elements for the neo-Hookean model,
 *        used to generate virtual experiments, and export to raw datasets.
 */
#pragma once

#include "hyperfit/continuum.hpp"
#include "hyperfit/dataset.hpp"
#include "hyperfit/mesh.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace hyperfit {

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Point-level plane-stress response
// ---------------------------------------------------------------------------

/// Out-of-plane stretch making P33 vanish for in-plane deformation @p f2.
inline double plane_stress_lambda3(const Mat2& f2, const NeoHookeParams& p) {
  const double j2 = f2.determinant();
  if (!(j2 > 0.0)) throw DomainError("plane stress: in-plane determinant must be positive");
  const double mu = p.mu(), lam = p.lambda();
  // multiplying P33 = 0 by lambda3 gives a closed form that seeds the Newton iteration
  double l3 = std::sqrt((mu + 0.5 * lam) / (mu + 0.5 * lam * j2 * j2));
  const double scale = std::max(mu, 1e-300);
  for (int it = 0; it < 50; ++it) {
    const double r = mu * (l3 - 1.0 / l3) + 0.5 * lam * (l3 * l3 * j2 * j2 - 1.0) / l3;
    if (std::abs(r) <= 1e-14 * scale) return l3;
    const double dr = mu * (1.0 + 1.0 / (l3 * l3)) + 0.5 * lam * (j2 * j2 + 1.0 / (l3 * l3));
    l3 = std::max(0.5 * l3, l3 - r / dr);
  }
  const double r = mu * (l3 - 1.0 / l3) + 0.5 * lam * (l3 * l3 * j2 * j2 - 1.0) / l3;
  if (std::abs(r) <= 1e-10) return l3;
  throw ConvergenceError("plane stress: lambda3 Newton iteration did not converge");
}

struct PlaneStressResponse {
  double lambda3 = 1.0;
  double psi = 0.0;                            ///< MPa
  Mat2 P = Mat2::Zero();                       ///< in-plane first Piola-Kirchhoff stress
  Eigen::Matrix4d A = Eigen::Matrix4d::Zero(); ///< condensed dP_aB/dF_cD, index 2a+B by 2c+D
};

inline PlaneStressResponse plane_stress_response(const Mat2& f2, const NeoHookeParams& p, bool with_tangent = true) {
  PlaneStressResponse out;
  out.lambda3 = plane_stress_lambda3(f2, p);
  const DefGrad F = DefGrad::plane(f2, out.lambda3);
  const auto nh = neo_hooke(F, p);
  out.psi = nh.psi;
  out.P = nh.P.topLeftCorner<2, 2>();
  if (with_tangent) {
    const auto A = neo_hooke_tangent(F, p);
    const double a3333 = A[2][2][2][2];
    for (int a = 0; a < 2; ++a)
      for (int B = 0; B < 2; ++B)
        for (int c = 0; c < 2; ++c)
          for (int D = 0; D < 2; ++D)
            out.A(2 * a + B, 2 * c + D) = A[a][B][c][D] - A[a][B][2][2] * A[2][2][c][D] / a3333;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Load programs and solver
// ---------------------------------------------------------------------------

struct DirichletBC {
  std::string set;
  int component = 0;   ///< 0 = x, 1 = y
  double value = 0.0;  ///< prescribed displacement at full load, mm
};

struct TractionBC {
  std::string set;
  Vec2 traction = Vec2::Zero();  ///< dead reference traction at full load, MPa
};

struct LoadProgram {
  int n_snap = 10;
  std::vector<DirichletBC> dirichlet;
  std::vector<TractionBC> tractions;
  std::string force_sensor;  ///< node set whose internal y-forces form the global force
  void validate(const TriMesh& mesh) const {
    if (n_snap < 1) throw std::invalid_argument("load program: n_snap must be >= 1");
    for (const auto& d : dirichlet) {
      mesh.boundary(d.set);
      if (d.component < 0 || d.component > 1) throw std::invalid_argument("load program: component must be 0 or 1");
    }
    for (const auto& t : tractions) mesh.boundary(t.set);
    if (!force_sensor.empty()) mesh.boundary(force_sensor);
  }
};

struct SolverOptions {
  double rel_tol = 1e-9;
  double abs_tol = 1e-12;
  int max_iterations = 25;
  int max_bisections = 10;
};

struct FeState {
  double load_factor = 0.0;
  std::vector<Vec2> u;               ///< nodal displacements
  std::vector<double> lambda3;       ///< per element
  std::vector<Vec2> f_int;           ///< internal nodal forces
  double global_force = 0.0;         ///< testing force, minus the sum of y internal forces at the sensor set (tension positive for a lower clamp)
  double residual_norm = 0.0;        ///< free-dof residual at convergence
  double reference_norm = 0.0;       ///< norm used for the relative criterion
};

/// Element internal forces, energy and (optionally) stiffness.
struct ElementResult {
  Eigen::Matrix<double, 6, 1> f;
  Eigen::Matrix<double, 6, 6> K;
  double energy = 0.0;
  double lambda3 = 1.0;
};

inline ElementResult element_response(const Connectivity& ref, std::size_t e, const std::vector<Vec2>& u, double h0,
                                      const NeoHookeParams& p, bool with_tangent) {
  const Mat2 f2 = deformation_gradient(ref, e, u);
  if (!(f2.determinant() > 0.0)) throw InvertedElementError(e, f2.determinant());
  const auto r = plane_stress_response(f2, p, with_tangent);
  const double vol = ref.area(e) * h0;
  const ShapeGrad& dn = ref.grad[e];
  ElementResult out;
  out.lambda3 = r.lambda3;
  out.energy = vol * r.psi;
  for (int k = 0; k < 3; ++k)
    for (int a = 0; a < 2; ++a) out.f(2 * k + a) = vol * (r.P(a, 0) * dn(k, 0) + r.P(a, 1) * dn(k, 1));
  if (with_tangent) {
    for (int k = 0; k < 3; ++k)
      for (int a = 0; a < 2; ++a)
        for (int l = 0; l < 3; ++l)
          for (int c = 0; c < 2; ++c) {
            double s = 0.0;
            for (int B = 0; B < 2; ++B)
              for (int D = 0; D < 2; ++D) s += r.A(2 * a + B, 2 * c + D) * dn(k, B) * dn(l, D);
            out.K(2 * k + a, 2 * l + c) = vol * s;
          }
  }
  return out;
}

/// Total potential energy of the internal forces, sum_e w J0 h0 psi.
inline double internal_energy(const TriMesh& mesh, const Connectivity& ref, const std::vector<Vec2>& u,
                              const NeoHookeParams& p) {
  double w = 0.0;
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) w += element_response(ref, e, u, mesh.h0, p, false).energy;
  return w;
}

inline std::vector<Vec2> internal_forces(const TriMesh& mesh, const Connectivity& ref, const std::vector<Vec2>& u,
                                         const NeoHookeParams& p, std::vector<double>* lambda3 = nullptr) {
  std::vector<Vec2> f(mesh.num_nodes(), Vec2::Zero());
  if (lambda3) lambda3->assign(mesh.num_elements(), 1.0);
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    const auto r = element_response(ref, e, u, mesh.h0, p, false);
    for (int k = 0; k < 3; ++k) f[mesh.elements[e][k]] += r.f.segment<2>(2 * k);
    if (lambda3) (*lambda3)[e] = r.lambda3;
  }
  return f;
}

/// Newton solver for quasi-static plane-stress loading in equal increments.
class PlaneStressSolver {
 public:
  PlaneStressSolver(TriMesh mesh, LoadProgram loads, NeoHookeParams params, SolverOptions opts = {})
      : mesh_(std::move(mesh)), loads_(std::move(loads)), params_(params), opts_(opts) {
    mesh_.validate();
    params_.validate();
    loads_.validate(mesh_);
    ref_ = build_connectivity(mesh_);
    const std::size_t ndof = 2 * mesh_.num_nodes();
    fixed_.assign(ndof, 0);
    full_value_.assign(ndof, 0.0);
    for (const auto& d : loads_.dirichlet)
      for (int k : mesh_.boundary(d.set)) {
        fixed_[2 * k + d.component] = 1;
        full_value_[2 * k + d.component] = d.value;
      }
    free_index_.assign(ndof, -1);
    for (std::size_t i = 0; i < ndof; ++i)
      if (!fixed_[i]) free_index_[i] = static_cast<int>(n_free_++);
    if (n_free_ == ndof) throw std::invalid_argument("load program leaves rigid-body motions unconstrained");
    f_ext_full_.assign(mesh_.num_nodes(), Vec2::Zero());
    for (const auto& t : loads_.tractions) {
      const auto f = traction_to_nodal_forces(mesh_, mesh_.boundary(t.set), t.traction, mesh_.h0);
      for (std::size_t k = 0; k < f.size(); ++k) f_ext_full_[k] += f[k];
    }
  }

  const TriMesh& mesh() const { return mesh_; }
  const Connectivity& reference() const { return ref_; }

  /// Solves all snapshots; element k of the result belongs to load factor (k+1)/n_snap.
  std::vector<FeState> solve() {
    std::vector<FeState> out;
    std::vector<Vec2> u(mesh_.num_nodes(), Vec2::Zero());
    double t = 0.0;
    for (int s = 1; s <= loads_.n_snap; ++s) {
      const double target = static_cast<double>(s) / loads_.n_snap;
      double dt = target - t;
      int bisections = 0;
      while (t < target) {
        const double t_next = std::min(target, t + dt);
        std::vector<Vec2> trial = u;
        if (advance(trial, t_next)) {
          u = std::move(trial);
          t = t_next;
          if (t_next == target) break;
        } else {
          if (++bisections > opts_.max_bisections)
            throw ConvergenceError("forward FE: Newton failed at load factor " + std::to_string(t_next) +
                                   " after exhausting load substepping");
          dt *= 0.5;
        }
      }
      t = target;
      out.push_back(make_state(u, target));
    }
    return out;
  }

 private:
  using SpMat = Eigen::SparseMatrix<double>;

  FeState make_state(const std::vector<Vec2>& u, double t) const {
    FeState st;
    st.load_factor = t;
    st.u = u;
    st.f_int = internal_forces(mesh_, ref_, u, params_, &st.lambda3);
    if (!loads_.force_sensor.empty())
      for (int k : mesh_.boundary(loads_.force_sensor)) st.global_force -= st.f_int[k].y();
    st.residual_norm = last_residual_;
    st.reference_norm = last_reference_;
    return st;
  }

  /// Residual r = f_int - t f_ext (all dofs) and optionally the full stiffness.
  void assemble(const std::vector<Vec2>& u, double t, Eigen::VectorXd& r, SpMat* K) const {
    const std::size_t ndof = 2 * mesh_.num_nodes();
    r.setZero(static_cast<Eigen::Index>(ndof));
    std::vector<Eigen::Triplet<double>> trip;
    if (K) trip.reserve(36 * mesh_.num_elements());
    for (std::size_t e = 0; e < mesh_.num_elements(); ++e) {
      const auto er = element_response(ref_, e, u, mesh_.h0, params_, K != nullptr);
      const auto& el = mesh_.elements[e];
      for (int k = 0; k < 3; ++k)
        for (int a = 0; a < 2; ++a) {
          const int I = 2 * el[k] + a;
          r[I] += er.f(2 * k + a);
          if (K)
            for (int l = 0; l < 3; ++l)
              for (int c = 0; c < 2; ++c) trip.emplace_back(I, 2 * el[l] + c, er.K(2 * k + a, 2 * l + c));
        }
    }
    for (std::size_t k = 0; k < mesh_.num_nodes(); ++k) r.segment<2>(2 * k) -= t * f_ext_full_[k];
    if (K) {
      K->resize(ndof, ndof);
      K->setFromTriplets(trip.begin(), trip.end());
    }
  }

  void split(const SpMat& K, SpMat& Kff, SpMat& Kfp) const {
    std::vector<Eigen::Triplet<double>> tff, tfp;
    for (int c = 0; c < K.outerSize(); ++c)
      for (SpMat::InnerIterator it(K, c); it; ++it) {
        const int fi = free_index_[it.row()];
        if (fi < 0) continue;
        if (fixed_[it.col()])
          tfp.emplace_back(fi, it.col(), it.value());
        else
          tff.emplace_back(fi, free_index_[it.col()], it.value());
      }
    Kff.resize(n_free_, n_free_);
    Kff.setFromTriplets(tff.begin(), tff.end());
    Kfp.resize(n_free_, K.cols());
    Kfp.setFromTriplets(tfp.begin(), tfp.end());
  }

  Eigen::VectorXd free_part(const Eigen::VectorXd& r) const {
    Eigen::VectorXd rf(n_free_);
    for (std::size_t i = 0; i < fixed_.size(); ++i)
      if (!fixed_[i]) rf[free_index_[i]] = r[i];
    return rf;
  }

  double reference_norm(const Eigen::VectorXd& r, double t) const {
    double s = 0.0;
    for (std::size_t i = 0; i < fixed_.size(); ++i)
      if (fixed_[i]) s += r[i] * r[i];
    for (const auto& f : f_ext_full_) s += t * t * f.squaredNorm();
    return std::sqrt(s);
  }

  static void add(std::vector<Vec2>& u, const Eigen::VectorXd& du_full, double alpha) {
    for (std::size_t k = 0; k < u.size(); ++k) u[k] += alpha * du_full.segment<2>(2 * k);
  }

  /// Moves @p u from its converged state to load factor @p t; returns false on failure.
  bool advance(std::vector<Vec2>& u, double t) {
    const std::size_t ndof = 2 * mesh_.num_nodes();
    Eigen::VectorXd r;
    SpMat K, Kff, Kfp;
    Eigen::SimplicialLDLT<SpMat> solver;
    try {
      // linearized predictor carrying the Dirichlet increment
      assemble(u, t, r, &K);
      split(K, Kff, Kfp);
      Eigen::VectorXd dup = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ndof));
      for (std::size_t i = 0; i < ndof; ++i)
        if (fixed_[i]) dup[i] = t * full_value_[i] - u[i / 2][i % 2];
      solver.compute(Kff);
      if (solver.info() != Eigen::Success) return false;
      const Eigen::VectorXd duf = solver.solve(-(free_part(r) + Kfp * dup));
      Eigen::VectorXd du = dup;
      for (std::size_t i = 0; i < ndof; ++i)
        if (!fixed_[i]) du[i] = duf[free_index_[i]];
      add(u, du, 1.0);

      for (int it = 0; it <= opts_.max_iterations; ++it) {
        assemble(u, t, r, &K);
        const Eigen::VectorXd rf = free_part(r);
        const double rnorm = rf.norm();
        const double ref = reference_norm(r, t);
        if (rnorm <= opts_.rel_tol * ref || rnorm <= opts_.abs_tol) {
          last_residual_ = rnorm;
          last_reference_ = ref;
          return true;
        }
        if (it == opts_.max_iterations) return false;
        split(K, Kff, Kfp);
        solver.compute(Kff);
        if (solver.info() != Eigen::Success) return false;
        const Eigen::VectorXd dxf = solver.solve(-rf);
        Eigen::VectorXd dx = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ndof));
        for (std::size_t i = 0; i < ndof; ++i)
          if (!fixed_[i]) dx[i] = dxf[free_index_[i]];
        // backtracking on the residual norm
        double alpha = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 12 && !accepted; ++ls, alpha *= 0.5) {
          std::vector<Vec2> trial = u;
          add(trial, dx, alpha);
          Eigen::VectorXd rt;
          try {
            assemble(trial, t, rt, nullptr);
          } catch (const InvertedElementError&) {
            continue;
          } catch (const DomainError&) {
            continue;
          }
          if (free_part(rt).norm() < rnorm || ls == 11) {
            u = std::move(trial);
            accepted = true;
          }
        }
        if (!accepted) return false;
      }
    } catch (const InvertedElementError&) {
      return false;
    } catch (const DomainError&) {
      return false;
    } catch (const ConvergenceError&) {
      return false;
    }
    return false;
  }

  TriMesh mesh_;
  LoadProgram loads_;
  NeoHookeParams params_;
  SolverOptions opts_;
  Connectivity ref_;
  std::vector<char> fixed_;
  std::vector<double> full_value_;
  std::vector<int> free_index_;
  std::size_t n_free_ = 0;
  std::vector<Vec2> f_ext_full_;
  double last_residual_ = 0.0, last_reference_ = 0.0;
};

inline std::vector<FeState> solve_forward(const TriMesh& mesh, const LoadProgram& loads, const NeoHookeParams& p,
                                          const SolverOptions& opts = {}) {
  return PlaneStressSolver(mesh, loads, p, opts).solve();
}

// ---------------------------------------------------------------------------
// Export of virtual-experiment data
// ---------------------------------------------------------------------------

struct ExportOptions {
  std::string mode = "ideal";                ///< "ideal" or "realistic"
  std::string thickness_weighting = "deformed";  ///< realistic mode: "deformed" or "reference" areas
};

/**
 * Converts solved states on @p parent into a raw dataset on the window @p win.
 * The window's bottom edge becomes the force boundary and its top edge the
 * boundary with unknown forces.
 *
 * Ideal mode writes the nodal forces exerted on the window (internal forces of
 * the window elements at force-boundary nodes, zero at all other nodes outside
 * the unknown-force set) and the exact thickness at quadrature points.
 * Realistic mode writes only displacements, the global force and nodal
 * thickness obtained by area-weighted projection from the quadrature points.
 */
inline RawDataset export_raw_data(const std::vector<FeState>& states, const TriMesh& parent, const MeshWindow& win,
                                  const NeoHookeParams& p, const ExportOptions& opt = {}) {
  if (opt.mode != "ideal" && opt.mode != "realistic") throw std::invalid_argument("export: unknown mode " + opt.mode);
  if (opt.thickness_weighting != "deformed" && opt.thickness_weighting != "reference")
    throw std::invalid_argument("export: unknown thickness weighting " + opt.thickness_weighting);
  RawDataset ds;
  ds.mode = opt.mode;
  ds.thickness_weighting = opt.thickness_weighting;
  ds.mesh = win.mesh;
  ds.mesh.boundary_sets["force_boundary"] = win.mesh.boundary("bottom");
  ds.mesh.boundary_sets["zeta_boundary"] = win.mesh.boundary("top");
  const auto& fb = ds.mesh.boundary("force_boundary");
  const auto& zb = ds.mesh.boundary("zeta_boundary");
  {
    double xmin = 1e300, xmax = -1e300;
    for (int k : fb) xmin = std::min(xmin, ds.mesh.nodes[k].x()), xmax = std::max(xmax, ds.mesh.nodes[k].x());
    ds.A0 = (xmax - xmin) * ds.mesh.h0;
  }
  const Connectivity wref = build_connectivity(ds.mesh);
  std::vector<char> is_zeta(ds.mesh.num_nodes(), 0), is_force(ds.mesh.num_nodes(), 0);
  for (int k : zb) is_zeta[k] = 1;
  for (int k : fb) is_force[k] = 1;

  for (const auto& st : states) {
    RawSnapshot s;
    s.global_force = st.global_force;
    s.displacements.resize(ds.mesh.num_nodes());
    for (std::size_t k = 0; k < ds.mesh.num_nodes(); ++k) s.displacements[k] = st.u[win.parent_node[k]];
    std::vector<double> h(ds.mesh.num_elements());
    for (std::size_t e = 0; e < h.size(); ++e) h[e] = st.lambda3[win.parent_element[e]] * parent.h0;
    if (opt.mode == "ideal") {
      std::vector<Vec2> fwin(ds.mesh.num_nodes(), Vec2::Zero());
      for (std::size_t e = 0; e < ds.mesh.num_elements(); ++e) {
        const auto r = element_response(wref, e, s.displacements, ds.mesh.h0, p, false);
        for (int k = 0; k < 3; ++k) fwin[ds.mesh.elements[e][k]] += r.f.segment<2>(2 * k);
      }
      for (std::size_t k = 0; k < ds.mesh.num_nodes(); ++k) {
        if (is_zeta[k]) continue;
        s.known_nodes.push_back(static_cast<int>(k));
        s.known_forces.push_back(is_force[k] ? fwin[k] : Vec2::Zero());
      }
      s.thickness_quad = std::move(h);
    } else {
      std::vector<double> w(ds.mesh.num_elements());
      if (opt.thickness_weighting == "deformed") {
        const Connectivity cur = build_connectivity(ds.mesh, &s.displacements);
        w = cur.detJ;
      } else {
        w = wref.detJ;
      }
      s.thickness_nodes = project_thickness_to_nodes(ds.mesh, h, w);
    }
    ds.snapshots.push_back(std::move(s));
  }
  return ds;
}

}  // namespace hyperfit
