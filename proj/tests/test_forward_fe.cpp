#include <gtest/gtest.h>

#include "hyperfit/dataset.hpp"
#include "hyperfit/ddi.hpp"
#include "hyperfit/forward_fe.hpp"
#include "test_util.hpp"

#include <filesystem>

using namespace hyperfit;

namespace {

/// Lateral-free uniaxial plane stress: returns (axial stretch, lateral stretch) for nominal stress t.
std::pair<double, double> uniaxial_oracle(const NeoHookeParams& p, double t) {
  const double mu = p.mu(), lam = p.lambda();
  auto piola = [&](double fii, double J) { return mu * (fii - 1.0 / fii) + 0.5 * lam * (J * J - 1.0) / fii; };
  auto lateral = [&](double l) {
    double lo = 0.2, hi = 3.0;
    for (int i = 0; i < 200; ++i) {
      const double a = 0.5 * (lo + hi);
      (piola(a, l * a * a) > 0.0 ? hi : lo) = a;
    }
    return 0.5 * (lo + hi);
  };
  double lo = 0.3, hi = 5.0;
  for (int i = 0; i < 200; ++i) {
    const double l = 0.5 * (lo + hi);
    const double a = lateral(l);
    (piola(l, l * a * a) > t ? hi : lo) = l;
  }
  const double l = 0.5 * (lo + hi);
  return {l, lateral(l)};
}

TriMesh rect(double w, double h, double size) {
  PlateSpec ps;
  ps.width = w, ps.height = h, ps.h0 = 2.0, ps.element_size = size;
  return generate_plate_mesh(ps);
}

}  // namespace

TEST(PlaneStressLambda3, IdentityGivesOne) {
  EXPECT_NEAR(plane_stress_lambda3(Mat2::Identity(), NeoHookeParams(1.0, 0.3)), 1.0, 1e-14);
}

TEST(PlaneStressLambda3, EquibiaxialMatchesBisection) {
  const NeoHookeParams p(1.0, 0.3);
  for (double l : {0.8, 0.95, 1.1, 1.3, 1.6}) {
    const double J2 = l * l;
    auto s33 = [&](double l3) { return p.mu() * (l3 - 1.0 / l3) + 0.5 * p.lambda() * (J2 * J2 * l3 * l3 - 1.0) / l3; };
    double lo = 0.1, hi = 3.0;
    for (int i = 0; i < 200; ++i) {
      const double m = 0.5 * (lo + hi);
      (s33(m) > 0.0 ? hi : lo) = m;
    }
    EXPECT_NEAR(plane_stress_lambda3(l * Mat2::Identity(), p), 0.5 * (lo + hi), 1e-12);
  }
}

TEST(PlaneStressLambda3, NoLateralContractionAtZeroPoisson) {
  Mat2 f = Mat2::Identity();
  f(0, 0) = 1.4;
  EXPECT_NEAR(plane_stress_lambda3(f, NeoHookeParams(1.0, 0.0)), 1.0, 1e-13);
}

TEST(PlaneStressResponse, OutOfPlaneStressVanishes) {
  const NeoHookeParams p(1.0, 0.3);
  Mat2 f;
  f << 1.2, 0.1, -0.05, 0.9;
  const auto r = plane_stress_response(f, p);
  const auto nh = neo_hooke(DefGrad::plane(f, r.lambda3), p);
  EXPECT_NEAR(nh.sigma(2, 2), 0.0, 1e-12);
}

TEST(ForwardFe, ZeroLoadGivesZeroState) {
  const TriMesh m = rect(4, 4, 1);
  LoadProgram lp;
  lp.n_snap = 2;
  lp.dirichlet = {{"bottom", 0, 0.0}, {"bottom", 1, 0.0}};
  lp.force_sensor = "bottom";
  const auto st = solve_forward(m, lp, NeoHookeParams(1.0, 0.3));
  ASSERT_EQ(st.size(), 2u);
  for (const auto& s : st) {
    for (const auto& u : s.u) EXPECT_EQ(u.norm(), 0.0);
    for (double l : s.lambda3) EXPECT_NEAR(l, 1.0, 1e-14);
    EXPECT_NEAR(s.global_force, 0.0, 1e-14);
  }
}

TEST(ForwardFe, AffinePatchTestIsExact) {
  TriMesh m = rect(3, 3, 1);
  // perturb interior nodes to get an irregular patch
  Rng rng(41);
  std::vector<char> on_boundary(m.num_nodes(), 0);
  for (const char* s : {"bottom", "top", "left", "right"})
    for (int k : m.boundary(s)) on_boundary[k] = 1;
  for (std::size_t k = 0; k < m.num_nodes(); ++k)
    if (!on_boundary[k]) m.nodes[k] += Vec2(0.2 * (uniform01(rng) - 0.5), 0.2 * (uniform01(rng) - 0.5));
  Mat2 g;
  g << 0.08, 0.03, -0.02, 0.05;
  LoadProgram lp;
  lp.n_snap = 1;
  for (std::size_t k = 0; k < m.num_nodes(); ++k) {
    if (!on_boundary[k]) continue;
    const std::string name = "n" + std::to_string(k);
    m.boundary_sets[name] = {static_cast<int>(k)};
    const Vec2 u = g * m.nodes[k];
    lp.dirichlet.push_back({name, 0, u.x()});
    lp.dirichlet.push_back({name, 1, u.y()});
  }
  const auto st = solve_forward(m, lp, NeoHookeParams(1.0, 0.3));
  for (std::size_t k = 0; k < m.num_nodes(); ++k) EXPECT_LT((st[0].u[k] - g * m.nodes[k]).norm(), 1e-12);
  const double l3 = st[0].lambda3[0];
  for (double l : st[0].lambda3) EXPECT_NEAR(l, l3, 1e-12);
}

TEST(ForwardFe, UniaxialBarMatchesAnalyticSolution) {
  TriMesh m = rect(10, 20, 2);
  m.boundary_sets["origin"] = {0};
  const NeoHookeParams p(1.0, 0.3);
  const double t = 0.25;
  LoadProgram lp;
  lp.n_snap = 4;
  lp.dirichlet = {{"bottom", 1, 0.0}, {"origin", 0, 0.0}};
  lp.tractions = {{"top", Vec2(0.0, t)}};
  lp.force_sensor = "bottom";
  SolverOptions so;
  so.rel_tol = 1e-13;
  const auto st = solve_forward(m, lp, p, so);
  const auto [l, a] = uniaxial_oracle(p, t);
  for (std::size_t k = 0; k < m.num_nodes(); ++k) {
    const Vec2& X = m.nodes[k];
    EXPECT_NEAR(st.back().u[k].y(), (l - 1.0) * X.y(), 1e-8);
    EXPECT_NEAR(st.back().u[k].x(), (a - 1.0) * X.x(), 1e-8);
  }
  for (double l3 : st.back().lambda3) EXPECT_NEAR(l3, a, 1e-8);
  EXPECT_NEAR(st.back().global_force, t * 10 * m.h0, 1e-8);
}

TEST(ForwardFe, DrivenAndFixedForcesBalance) {
  TriMesh m = rect(10, 10, 1);
  LoadProgram lp;
  lp.n_snap = 3;
  lp.dirichlet = {{"bottom", 0, 0.0}, {"bottom", 1, 0.0}, {"top", 0, 0.0}, {"top", 1, 3.0}};
  lp.force_sensor = "bottom";
  const auto st = solve_forward(m, lp, NeoHookeParams(1.0, 0.3));
  for (const auto& s : st) {
    double top = 0.0;
    for (int k : m.boundary("top")) top += s.f_int[k].y();
    EXPECT_NEAR(top, s.global_force, 1e-9 * std::abs(top));
    EXPECT_GT(s.global_force, 0.0);
  }
}

TEST(ForwardFe, InternalForcesAreEnergyGradient) {
  const TriMesh m = rect(3, 3, 1);
  const auto ref = build_connectivity(m);
  const NeoHookeParams p(1.0, 0.3);
  Rng rng(43);
  std::vector<Vec2> u(m.num_nodes());
  for (auto& v : u) v = Vec2(0.1 * (uniform01(rng) - 0.5), 0.1 * (uniform01(rng) - 0.5));
  const auto f = internal_forces(m, ref, u, p);
  const double h = 1e-6;
  double err = 0.0, scale = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k)
    for (int c = 0; c < 2; ++c) {
      auto up = u, um = u;
      up[k][c] += h, um[k][c] -= h;
      const double fd = (internal_energy(m, ref, up, p) - internal_energy(m, ref, um, p)) / (2 * h);
      err = std::max(err, std::abs(fd - f[k][c]));
      scale = std::max(scale, std::abs(f[k][c]));
    }
  EXPECT_LT(err / scale, 1e-6);
}

TEST(ForwardFe, RejectsUnconstrainedProgram) {
  const TriMesh m = rect(2, 2, 1);
  LoadProgram lp;
  lp.tractions = {{"top", Vec2(0.0, 0.1)}};
  EXPECT_THROW(solve_forward(m, lp, NeoHookeParams(1.0, 0.3)), std::invalid_argument);
  lp.dirichlet = {{"nowhere", 0, 0.0}};
  EXPECT_THROW(solve_forward(m, lp, NeoHookeParams(1.0, 0.3)), std::invalid_argument);
}

class ExportTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    PlateSpec ps;
    ps.width = 100, ps.height = 100, ps.h0 = 5, ps.element_size = 5;
    ps.holes = {{35, 60, 12, 8, M_PI / 6}, {65, 40, 12, 8, -M_PI / 6}};
    parent_ = new TriMesh(generate_plate_mesh(ps));
    LoadProgram lp;
    lp.n_snap = 3;
    lp.dirichlet = {{"bottom", 0, 0.0}, {"bottom", 1, 0.0}, {"top", 0, 0.0}, {"top", 1, 30.0}};
    lp.force_sensor = "bottom";
    states_ = new std::vector<FeState>(solve_forward(*parent_, lp, NeoHookeParams(1.0, 0.3)));
  }
  static void TearDownTestSuite() {
    delete parent_;
    delete states_;
  }
  static TriMesh* parent_;
  static std::vector<FeState>* states_;
};
TriMesh* ExportTest::parent_ = nullptr;
std::vector<FeState>* ExportTest::states_ = nullptr;

TEST_F(ExportTest, IdealRoundTripReproducesForcesExactly) {
  const auto win = extract_window(*parent_, 0, 0, 100, 100);
  const RawDataset ds = export_raw_data(*states_, *parent_, win, NeoHookeParams(1.0, 0.3));
  const auto dir = std::filesystem::temp_directory_path() / "hyperfit_export_ideal";
  std::filesystem::remove_all(dir);
  write_raw_dataset(dir.string(), ds);
  const RawDataset rd = read_raw_dataset(dir.string());
  ASSERT_EQ(rd.snapshots.size(), ds.snapshots.size());
  for (std::size_t t = 0; t < ds.snapshots.size(); ++t) {
    EXPECT_EQ(rd.snapshots[t].known_nodes, ds.snapshots[t].known_nodes);
    for (std::size_t i = 0; i < ds.snapshots[t].known_forces.size(); ++i)
      EXPECT_EQ(rd.snapshots[t].known_forces[i], ds.snapshots[t].known_forces[i]);
    for (std::size_t k = 0; k < ds.snapshots[t].displacements.size(); ++k)
      EXPECT_EQ(rd.snapshots[t].displacements[k], ds.snapshots[t].displacements[k]);
    EXPECT_EQ(rd.snapshots[t].thickness_quad, ds.snapshots[t].thickness_quad);
    EXPECT_EQ(rd.snapshots[t].global_force, ds.snapshots[t].global_force);
  }
  const DdiInput in = prepare_ddi_input(rd);
  for (std::size_t t = 0; t < ds.snapshots.size(); ++t) {
    const auto& s = ds.snapshots[t];
    for (std::size_t i = 0; i < s.known_nodes.size(); ++i) EXPECT_EQ(in.f[t][s.known_nodes[i]], s.known_forces[i]);
  }
  std::filesystem::remove_all(dir);
}

TEST_F(ExportTest, IdealForcesBalanceGlobalForce) {
  const auto win = extract_window(*parent_, 0, 0, 100, 100);
  const RawDataset ds = export_raw_data(*states_, *parent_, win, NeoHookeParams(1.0, 0.3));
  for (const auto& s : ds.snapshots) {
    double fy = 0.0;
    for (std::size_t i = 0; i < s.known_nodes.size(); ++i) fy += s.known_forces[i].y();
    EXPECT_NEAR(-fy, s.global_force, 1e-9 * std::abs(s.global_force));
  }
}

TEST_F(ExportTest, RealisticThicknessCloseToIdeal) {
  const auto win = extract_window(*parent_, 0, 0, 100, 100);
  const NeoHookeParams p(1.0, 0.3);
  const RawDataset ideal = export_raw_data(*states_, *parent_, win, p);
  ExportOptions eo;
  eo.mode = "realistic";
  const RawDataset real = export_raw_data(*states_, *parent_, win, p, eo);
  double worst = 0.0, mean = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < real.snapshots.size(); ++t) {
    EXPECT_TRUE(real.snapshots[t].known_forces.empty());
    const auto q = project_thickness_to_quadpoints(real.mesh, real.snapshots[t].thickness_nodes);
    for (std::size_t e = 0; e < q.size(); ++e) {
      const double d = std::abs(q[e] - ideal.snapshots[t].thickness_quad[e]) / ideal.snapshots[t].thickness_quad[e];
      worst = std::max(worst, d), mean += d, ++count;
    }
  }
  mean /= static_cast<double>(count);
  std::printf("thickness smoothing: mean %.4g worst %.4g\n", mean, worst);
  EXPECT_LE(mean, 0.01);
  EXPECT_LE(worst, 0.1);
  EXPECT_GT(worst, 0.0);
}

TEST(Export, UniformThicknessProjectionIsExact) {
  const TriMesh m = rect(10, 10, 2);
  LoadProgram lp;
  lp.n_snap = 1;
  lp.dirichlet = {{"bottom", 0, 0.0}, {"bottom", 1, 0.0}, {"top", 0, 0.0}, {"top", 1, 0.0}};
  lp.force_sensor = "bottom";
  const NeoHookeParams p(1.0, 0.3);
  const auto st = solve_forward(m, lp, p);
  const auto win = extract_window(m, 0, 0, 10, 10);
  ExportOptions eo;
  eo.mode = "realistic";
  const auto ds = export_raw_data(st, m, win, p, eo);
  for (double h : ds.snapshots[0].thickness_nodes) EXPECT_DOUBLE_EQ(h, m.h0);
  for (double h : project_thickness_to_quadpoints(ds.mesh, ds.snapshots[0].thickness_nodes)) EXPECT_DOUBLE_EQ(h, m.h0);
}
