/**
 * @file evaluate.hpp
 * @brief Accuracy metrics: neo-Hooke reference stresses, coefficients of
 *        determination, stiffness estimates and 3D stress-path comparisons.
 */
#pragma once

#include "hyperfit/continuum.hpp"
#include "hyperfit/dataset.hpp"
#include "hyperfit/ddi.hpp"
#include "hyperfit/pann.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace hyperfit {

/// Maximum fraction of entries that may be excluded for non-SPD reconstructions.
inline constexpr double kMaxExcludedFraction = 1e-3;

/// Deformation tensor recovered from a DDI strain: b = (1 - 2e)^-1 (UL) or C = 2E + 1 (TL).
inline SymTensor2 deformation_from_strain(const Strain4& x, Formulation f) {
  const Mat3 m = from_strain4(x).matrix();
  if (f == Formulation::UL) {
    const Mat3 a = Mat3::Identity() - 2.0 * m;
    if (!is_positive_definite(a)) throw DomainError("reference: 1 - 2e is not positive definite");
    return SymTensor2::from_matrix(a.inverse());
  }
  return SymTensor2::from_matrix(Mat3::Identity() + 2.0 * m);
}

/// Strain of a deformation tensor, inverse of deformation_from_strain.
inline Strain4 strain_from_deformation(const SymTensor2& d, Formulation f) {
  const Mat3 m = d.matrix();
  const Mat3 x = f == Formulation::UL ? Mat3(0.5 * (Mat3::Identity() - m.inverse())) : Mat3(0.5 * (m - Mat3::Identity()));
  return strain4(SymTensor2::from_matrix(x));
}

struct ReferenceStresses {
  std::vector<Stress3> stress;  ///< Mandel in-plane stress; zero where invalid
  std::vector<char> valid;
  int excluded = 0;
};

/// Neo-Hooke Cauchy (UL) or second Piola-Kirchhoff (TL) stresses at the given strains.
inline ReferenceStresses reference_stress(const std::vector<Strain4>& strains, const NeoHookeParams& p, Formulation f) {
  ReferenceStresses out;
  out.stress.assign(strains.size(), Stress3::Zero());
  out.valid.assign(strains.size(), 0);
  for (std::size_t i = 0; i < strains.size(); ++i) {
    try {
      const SymTensor2 d = deformation_from_strain(strains[i], f);
      if (!is_positive_definite(d)) throw DomainError("not SPD");
      const SymTensor2 s = f == Formulation::UL ? neo_hooke_cauchy_from_b(d, p) : neo_hooke_pk2_from_C(d, p);
      out.stress[i] = stress3(s);
      out.valid[i] = 1;
    } catch (const std::domain_error&) {
      ++out.excluded;
    }
  }
  return out;
}

struct R2Report {
  double pooled = std::numeric_limits<double>::quiet_NaN();
  std::array<double, 3> component{};  ///< 11, 22, 12
  int count = 0;
  int excluded = 0;
  std::string formulation;
};

/// 1 - SS_res / SS_tot.
inline double r2(const std::vector<double>& pred, const std::vector<double>& ref) {
  if (pred.size() != ref.size()) throw std::invalid_argument("r2: length mismatch");
  if (ref.size() < 2) throw std::invalid_argument("r2: need at least two values");
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

/// Pooled and per-component R2 on plain in-plane components of the entries with mask set.
inline R2Report r2_stress(const std::vector<Stress3>& pred, const std::vector<Stress3>& ref,
                          const std::vector<char>& mask) {
  R2Report rep;
  std::array<std::vector<double>, 3> p, r;
  std::vector<double> pp, rr;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    ++rep.count;
    for (int c = 0; c < 3; ++c) {
      const double s = c == 2 ? 1.0 / kSqrt2 : 1.0;
      p[c].push_back(s * pred[i][c]);
      r[c].push_back(s * ref[i][c]);
      pp.push_back(p[c].back());
      rr.push_back(r[c].back());
    }
  }
  rep.pooled = r2(pp, rr);
  for (int c = 0; c < 3; ++c) {
    try {
      rep.component[c] = r2(p[c], r[c]);
    } catch (const std::domain_error&) {
      rep.component[c] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return rep;
}

struct DdiScores {
  R2Report mech;  ///< mechanical stresses vs reference at measured strains
  R2Report mat;   ///< material stresses vs reference at material strains (states with assigned points)
};

/**
 * R2 of mechanical and material states of a DDI result against the neo-Hooke
 * oracle. Throws when more than 0.1% of either set has non-SPD reconstructions.
 */
inline DdiScores score_ddi(const DdiResult& r, const NeoHookeParams& p) {
  DdiScores out;
  const Formulation f = r.formulation;
  auto score = [&](const std::vector<Strain4>& e, const std::vector<Stress3>& s, std::vector<char> mask) {
    const auto ref = reference_stress(e, p, f);
    int considered = 0, excluded = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      ++considered;
      if (!ref.valid[i]) ++excluded, mask[i] = 0;
    }
    if (excluded > kMaxExcludedFraction * considered)
      throw std::runtime_error("evaluation: too many non-SPD strain states (" + std::to_string(excluded) + ")");
    R2Report rep = r2_stress(s, ref.stress, mask);
    rep.excluded = excluded;
    rep.formulation = to_string(f);
    return rep;
  };
  out.mech = score(r.mech_strain, r.mech_stress, std::vector<char>(r.mech_strain.size(), 1));
  std::vector<char> used(r.mat_strain.size(), 0);
  for (std::size_t z = 0; z < used.size(); ++z) used[z] = r.mat_weight[z] > 0.0;
  out.mat = score(r.mat_strain, r.mat_stress, used);
  return out;
}

/// Same as score_ddi for material states read back from a database file.
inline R2Report score_database(const std::vector<DatabaseEntry>& db, const NeoHookeParams& p, Formulation f) {
  std::vector<Strain4> e;
  std::vector<Stress3> s;
  std::vector<char> mask;
  for (const auto& d : db) e.push_back(d.strain), s.push_back(d.stress), mask.push_back(d.weight > 0.0);
  const auto ref = reference_stress(e, p, f);
  int considered = 0, excluded = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    ++considered;
    if (!ref.valid[i]) ++excluded, mask[i] = 0;
  }
  if (excluded > kMaxExcludedFraction * considered)
    throw std::runtime_error("evaluation: too many non-SPD strain states (" + std::to_string(excluded) + ")");
  R2Report rep = r2_stress(s, ref.stress, mask);
  rep.excluded = excluded;
  rep.formulation = to_string(f);
  return rep;
}

/// Calibration samples from a database; states without points and non-SPD strains are skipped.
inline std::vector<PannSample> database_to_samples(const std::vector<DatabaseEntry>& db, Formulation f) {
  std::vector<PannSample> out;
  for (const auto& d : db) {
    if (!(d.weight > 0.0)) continue;
    try {
      const SymTensor2 def = deformation_from_strain(d.strain, f);
      if (!is_positive_definite(def)) continue;
      out.push_back({def, from_stress3(d.stress), d.weight});
    } catch (const std::domain_error&) {
    }
  }
  return out;
}

/// One-dimensional linear-elastic stiffness estimate C = (F / A0) (l0 / dl), MPa.
inline double estimate_stiffness(double force, double A0, double l0, double dl) {
  if (!(A0 > 0.0) || !(l0 > 0.0)) throw std::invalid_argument("estimate_stiffness: A0 and l0 must be positive");
  if (dl == 0.0) throw std::domain_error("estimate_stiffness: zero elongation");
  return (force / A0) * (l0 / dl);
}

/**
 * Stiffness estimate from snapshot @p tau of a dataset. The gauge length is the
 * distance between the mean heights of the force and unknown-force boundaries,
 * the elongation the difference of their mean vertical displacements.
 */
inline double estimate_stiffness(const RawDataset& ds, std::size_t tau = 0) {
  if (tau >= ds.snapshots.size()) throw std::invalid_argument("estimate_stiffness: no such snapshot");
  const auto& s = ds.snapshots[tau];
  auto mean = [&](const NodeSet& set, bool disp) {
    double m = 0.0;
    for (int k : set) m += disp ? s.displacements[k].y() : ds.mesh.nodes[k].y();
    return m / static_cast<double>(set.size());
  };
  const auto& fb = ds.mesh.boundary(ds.force_set);
  const auto& zb = ds.mesh.boundary(ds.zeta_set);
  const double l0 = std::abs(mean(zb, false) - mean(fb, false));
  const double dl = std::abs(mean(zb, true) - mean(fb, true));
  double A0 = ds.A0;
  if (!(A0 > 0.0)) throw std::invalid_argument("estimate_stiffness: dataset has no A0");
  return estimate_stiffness(std::abs(s.global_force), A0, l0, dl);
}

// ---------------------------------------------------------------------------
// Stress paths
// ---------------------------------------------------------------------------

enum class StressPath { Uniaxial, Equibiaxial, SimpleShear, Volumetric };

inline const std::array<StressPath, 4>& all_stress_paths() {
  static const std::array<StressPath, 4> p{StressPath::Uniaxial, StressPath::Equibiaxial, StressPath::SimpleShear,
                                           StressPath::Volumetric};
  return p;
}

inline std::string to_string(StressPath p) {
  switch (p) {
    case StressPath::Uniaxial: return "uniaxial";
    case StressPath::Equibiaxial: return "equibiaxial";
    case StressPath::SimpleShear: return "shear";
    case StressPath::Volumetric: return "volumetric";
  }
  return "?";
}

/**
 * Lateral stretch t such that the reference model's Cauchy stress component
 * @p comp vanishes for F = diag(l, t, t) (uniaxial, comp 1) or diag(l, l, t)
 * (equibiaxial, comp 2). Bisection on t in (0, 4].
 */
inline double traction_free_stretch(StressPath p, double l, const NeoHookeParams& ref) {
  auto F_of = [&](double t) {
    Mat3 f = Mat3::Zero();
    f(0, 0) = l;
    f(1, 1) = p == StressPath::Equibiaxial ? l : t;
    f(2, 2) = t;
    return DefGrad(f);
  };
  const int comp = p == StressPath::Equibiaxial ? 2 : 1;
  auto g = [&](double t) { return neo_hooke(F_of(t), ref).sigma(comp, comp); };
  double lo = 1e-3, hi = 4.0;
  if (g(lo) > 0.0 || g(hi) < 0.0) throw std::runtime_error("stress paths: lateral stretch not bracketed");
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) > 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

/**
 * F(lambda) along a path: uniaxial and equibiaxial tension with traction-free
 * lateral faces under the reference model, simple shear 1 + (l - 1) e1 x e2, and
 * pure dilatation l 1.
 */
inline DefGrad path_deformation(StressPath p, double l, const NeoHookeParams& ref) {
  Mat3 f = Mat3::Identity();
  switch (p) {
    case StressPath::Uniaxial: {
      const double t = traction_free_stretch(p, l, ref);
      f(0, 0) = l, f(1, 1) = t, f(2, 2) = t;
      break;
    }
    case StressPath::Equibiaxial: {
      const double t = traction_free_stretch(p, l, ref);
      f(0, 0) = l, f(1, 1) = l, f(2, 2) = t;
      break;
    }
    case StressPath::SimpleShear: f(0, 1) = l - 1.0; break;
    case StressPath::Volumetric: f *= l; break;
  }
  return DefGrad(f);
}

struct PathError {
  StressPath path = StressPath::Uniaxial;
  double max_rel = 0.0;   ///< max_l |P - P_nh| / max_l |P_nh|
  double mean_rel = 0.0;  ///< mean_l |P - P_nh| / max_l |P_nh|
};

struct PathSample {
  StressPath path;
  double lambda;
  Mat3 P_model, P_ref;
};

/// First-Piola error of the model along each path, Frobenius norms, @p steps samples per path.
inline std::vector<PathError> stress_path_compare(const PannParams& model, const NeoHookeParams& ref,
                                                  double lambda_min = 0.8, double lambda_max = 1.4, int steps = 61,
                                                  std::vector<PathSample>* samples = nullptr) {
  if (steps < 2 || !(lambda_max > lambda_min) || !(lambda_min > 0.0))
    throw std::invalid_argument("stress paths: invalid stretch range");
  std::vector<PathError> out;
  for (StressPath path : all_stress_paths()) {
    std::vector<double> diff;
    double pmax = 0.0;
    for (int i = 0; i < steps; ++i) {
      const double l = lambda_min + (lambda_max - lambda_min) * i / (steps - 1);
      const DefGrad F = path_deformation(path, l, ref);
      const Mat3 Pm = pann_stress(F, model).P;
      const Mat3 Pr = neo_hooke(F, ref).P;
      diff.push_back((Pm - Pr).norm());
      pmax = std::max(pmax, Pr.norm());
      if (samples) samples->push_back({path, l, Pm, Pr});
    }
    PathError e;
    e.path = path;
    for (double d : diff) e.max_rel = std::max(e.max_rel, d / pmax), e.mean_rel += d / pmax;
    e.mean_rel /= static_cast<double>(diff.size());
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

/// `set,formulation,count,excluded,r2,r2_11,r2_22,r2_12`
inline void write_r2_csv(const std::string& path, const DdiScores& s) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "set,formulation,count,excluded,r2,r2_11,r2_22,r2_12\n";
  for (const auto& [name, r] : {std::pair<std::string, const R2Report&>{"mech", s.mech}, {"mat", s.mat}}) {
    os << name << ',' << r.formulation << ',' << r.count << ',' << r.excluded << ',' << detail::fmt17(r.pooled);
    for (double c : r.component) os << ',' << detail::fmt17(c);
    os << '\n';
  }
}

/// `path,max_rel_error,mean_rel_error`
inline void write_path_errors_csv(const std::string& path, const std::vector<PathError>& errs) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "path,max_rel_error,mean_rel_error\n";
  for (const auto& e : errs) os << to_string(e.path) << ',' << detail::fmt17(e.max_rel) << ',' << detail::fmt17(e.mean_rel) << '\n';
}

/// `path,lambda,i,j,P_model,P_ref` for plotting stress curves.
inline void write_path_samples_csv(const std::string& path, const std::vector<PathSample>& samples) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "path,lambda,i,j,P_model,P_ref\n";
  for (const auto& s : samples)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        os << to_string(s.path) << ',' << detail::fmt17(s.lambda) << ',' << i + 1 << ',' << j + 1 << ','
           << detail::fmt17(s.P_model(i, j)) << ',' << detail::fmt17(s.P_ref(i, j)) << '\n';
}

}  // namespace hyperfit
