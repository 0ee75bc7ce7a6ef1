#include <gtest/gtest.h>

#include "hyperfit/ddi.hpp"
#include "hyperfit/forward_fe.hpp"
#include "hyperfit/linalg.hpp"
#include "test_util.hpp"

#include <filesystem>

using namespace hyperfit;

namespace {

/// Small two-snapshot tension dataset on a w x h rectangle (ideal mode).
DdiInput small_input(double w = 6, double h = 4, double size = 2, int n_snap = 2, double u_max = 0.4) {
  PlateSpec ps;
  ps.width = w, ps.height = h, ps.h0 = 1, ps.element_size = size;
  const TriMesh m = generate_plate_mesh(ps);
  LoadProgram lp;
  lp.n_snap = n_snap;
  lp.dirichlet = {{"bottom", 0, 0.0}, {"bottom", 1, 0.0}, {"top", 0, 0.0}, {"top", 1, u_max}};
  lp.force_sensor = "bottom";
  const NeoHookeParams p(1.0, 0.3);
  return prepare_ddi_input(export_raw_data(solve_forward(m, lp, p), m, extract_window(m, 0, 0, w, h), p));
}

DdiProblem scalar_problem(double C, double omega) {
  DdiProblem pb;
  pb.C = C;
  pb.n_snap = 1;
  pb.n_quad = 1;
  pb.omega = {omega};
  return pb;
}

std::vector<int> round_robin_mapping(std::size_t n, int nstar) {
  std::vector<int> m(n);
  for (std::size_t p = 0; p < n; ++p) m[p] = static_cast<int>(p % nstar);
  return m;
}

}  // namespace

TEST(DdiConfig, ValidatesAndResolvesStateCount) {
  DdiConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.resolve_nstar(3008 * 10), 301);
  EXPECT_EQ(c.resolve_nstar(50), 1);
  c.nstar = 7;
  EXPECT_EQ(c.resolve_nstar(100), 7);
  c.C = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(parse_formulation("tl-adapted"), Formulation::TLAdapted);
  EXPECT_EQ(to_string(Formulation::UL), "ul");
  EXPECT_THROW(parse_formulation("xl"), std::invalid_argument);
}

TEST(DdiLoss, ZeroWhenStatesCoincide) {
  const DdiProblem pb = scalar_problem(1.0, 1.0);
  const std::vector<Strain4> e{Strain4(0.1, 0.2, -0.1, 0.05)};
  const std::vector<Stress3> s{Stress3(0.3, -0.2, 0.1)};
  EXPECT_EQ(ddi_loss(pb, e, s, e, s, {0}), 0.0);
}

TEST(DdiLoss, HandValueAndQuadraticScaling) {
  const DdiProblem pb = scalar_problem(1.0, 1.0);
  const std::vector<Strain4> e{Strain4(0.1, 0, 0, 0)}, e2{Strain4(0.2, 0, 0, 0)}, zero{Strain4::Zero()};
  const std::vector<Stress3> s{Stress3::Zero()};
  EXPECT_NEAR(ddi_loss(pb, e, s, zero, s, {0}), 5e-3, 1e-17);
  EXPECT_NEAR(ddi_loss(pb, e2, s, zero, s, {0}), 4 * 5e-3, 1e-16);
  const DdiProblem pc = scalar_problem(4.0, 1.0);
  const std::vector<Stress3> ds{Stress3(2, 0, 0)};
  EXPECT_NEAR(ddi_loss(pc, zero, ds, zero, s, {0}), 0.5 * 4.0 / 4.0, 1e-15);
}

TEST(InitMapping, SingleStateTakesEverything) {
  Rng rng(1);
  std::vector<Strain4> pts(50);
  for (auto& p : pts) p = Strain4::Random();
  const auto km = init_mapping_kmeans_strain(pts, 1, rng);
  for (int l : km.labels) EXPECT_EQ(l, 0);
}

TEST(InitMapping, SeparatesTwoBlobs) {
  Rng rng(2);
  std::vector<Strain4> pts;
  std::vector<int> truth;
  for (int i = 0; i < 200; ++i) {
    const int c = i % 2;
    Strain4 p = Strain4::Constant(c ? 1.0 : -1.0);
    for (int k = 0; k < 4; ++k) p[k] += 0.05 * standard_normal(rng);
    pts.push_back(p);
    truth.push_back(c);
  }
  Rng krng(3);
  const auto km = init_mapping_kmeans_strain(pts, 2, krng);
  const int flip = km.labels[0] != truth[0];
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(km.labels[i], truth[i] ^ flip);
}

TEST(InitMapping, FixedSeedIsDeterministic) {
  Rng rng(4);
  std::vector<Strain4> pts(300);
  for (auto& p : pts) p = Strain4(uniform01(rng), uniform01(rng), uniform01(rng), uniform01(rng));
  Rng a(9), b(9);
  EXPECT_EQ(init_mapping_kmeans_strain(pts, 10, a).labels, init_mapping_kmeans_strain(pts, 10, b).labels);
}

TEST(InitMapping, StressReinitKeepsSeedsWhenAlreadyClustered) {
  const std::vector<Stress3> seeds{Stress3(0, 0, 0), Stress3(1, 1, 0)};
  const std::vector<Stress3> pts{Stress3(0.1, 0, 0), Stress3(0.9, 1, 0), Stress3(-0.1, 0, 0), Stress3(1.1, 1, 0)};
  EXPECT_EQ(init_mapping_kmeans_stress(pts, seeds).labels, (std::vector<int>{0, 1, 0, 1}));
}

TEST(Minres, SolvesSymmetricIndefiniteSystem) {
  const int n = 30;
  const Eigen::MatrixXd R = Eigen::MatrixXd::Random(n, n);
  Eigen::MatrixXd A = 0.5 * (R + R.transpose());
  A.diagonal().array() += 0.3;
  const Eigen::VectorXd b = Eigen::VectorXd::Random(n);
  const Operator op = [&](const Eigen::VectorXd& in, Eigen::VectorXd& out) { out = A * in; };
  const Operator id = [](const Eigen::VectorXd& in, Eigen::VectorXd& out) { out = in; };
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  minres(op, id, b, x, 1e-12, 10 * n);
  EXPECT_LT((A * x - b).norm() / b.norm(), 1e-9);
}

class SaddleTest : public ::testing::TestWithParam<Formulation> {};

TEST_P(SaddleTest, IterativeMatchesDenseDirectSolve) {
  const DdiInput in = small_input();
  DdiConfig cfg;
  cfg.formulation = GetParam();
  cfg.C = 2.0;
  const DdiProblem pb = build_ddi_problem(in, cfg);
  ASSERT_LE(pb.n_quad, 20);
  SaddleSystem sys(pb);
  sys.set_mapping(round_robin_mapping(pb.n_points(), 3), 3);
  Eigen::VectorXd x;
  const auto info = sys.solve(x, 1e-13, 5000);
  EXPECT_TRUE(info.converged);
  const Eigen::MatrixXd A = sys.dense();
  EXPECT_LT((A - A.transpose()).norm(), 1e-12 * A.norm());
  const Eigen::VectorXd xd = A.fullPivLu().solve(sys.rhs());
  EXPECT_LT((x - xd).norm() / xd.norm(), 1e-8);
}

INSTANTIATE_TEST_SUITE_P(AllFormulations, SaddleTest,
                         ::testing::Values(Formulation::UL, Formulation::TL, Formulation::TLAdapted),
                         [](const auto& info) {
                           std::string s = to_string(info.param);
                           std::replace(s.begin(), s.end(), '-', '_');
                           return s;
                         });

TEST(Saddle, EquilibratedDatabaseNeedsNoMultipliers) {
  const DdiInput base = small_input();
  DdiConfig cfg;
  DdiProblem pb = build_ddi_problem(base, cfg);
  const Stress3 s0(0.2, 0.5, 0.1);
  const std::vector<Stress3> sig(pb.n_points(), s0);
  for (int t = 0; t < pb.n_snap; ++t) {
    const auto fi = nodal_forces(pb, t, sig);
    for (int a = 0; a < pb.n_nodes; ++a)
      if (pb.dof[a] >= 0) pb.f[t].segment<2>(pb.dof[a]) = fi[a];
  }
  SaddleSystem sys(pb);
  const std::vector<int> mapping(pb.n_points(), 0);
  sys.set_mapping(mapping, 1);
  Eigen::VectorXd x;
  ASSERT_TRUE(sys.solve(x, 1e-13, 5000).converged);
  std::vector<Eigen::VectorXd> eta;
  std::vector<Stress3> star(1);
  sys.unpack(x, eta, star);
  for (const auto& e : eta) EXPECT_LT(e.norm(), 1e-9);
  EXPECT_LT((star[0] - s0).norm(), 1e-10);
  const auto sigma = update_mechanical_stress(pb, mapping, eta, star);
  for (const auto& s : sigma) EXPECT_LT((s - s0).norm(), 1e-9);
}

TEST(Saddle, MultipliersAreOrthogonalToEveryState) {
  const DdiInput in = small_input();
  DdiConfig cfg;
  const DdiProblem pb = build_ddi_problem(in, cfg);
  SaddleSystem sys(pb);
  const int nstar = 4;
  const auto mapping = round_robin_mapping(pb.n_points(), nstar);
  sys.set_mapping(mapping, nstar);
  Eigen::VectorXd x;
  ASSERT_TRUE(sys.solve(x, 1e-12, 5000).converged);
  std::vector<Eigen::VectorXd> eta;
  std::vector<Stress3> star(nstar);
  sys.unpack(x, eta, star);
  std::vector<Eigen::Vector3d> sum(nstar, Eigen::Vector3d::Zero());
  double scale = 0.0;
  for (int t = 0; t < pb.n_snap; ++t)
    for (int g = 0; g < pb.n_quad; ++g) {
      const std::size_t p = static_cast<std::size_t>(t) * pb.n_quad + g;
      Eigen::Matrix<double, 6, 1> ue = Eigen::Matrix<double, 6, 1>::Zero();
      for (int k = 0; k < 3; ++k)
        if (pb.dof[pb.elements[g][k]] >= 0) ue.segment<2>(2 * k) = eta[t].segment<2>(pb.dof[pb.elements[g][k]]);
      const Eigen::Vector3d c = pb.omega[p] * pb.B[p] * ue;
      sum[mapping[p]] += c;
      scale = std::max(scale, c.norm());
    }
  for (const auto& s : sum) EXPECT_LT(s.norm(), 1e-8 * std::max(scale, 1e-300));

  const auto sigma = update_mechanical_stress(pb, mapping, eta, star);
  EXPECT_LE(equilibrium_residual(pb, sigma), 10 * 1e-12);
}

TEST(Saddle, ZeroMultipliersReturnAssignedStress) {
  const DdiInput in = small_input();
  const DdiProblem pb = build_ddi_problem(in, DdiConfig{});
  const auto mapping = round_robin_mapping(pb.n_points(), 2);
  const std::vector<Stress3> star{Stress3(1, 2, 3), Stress3(-1, 0, 0.5)};
  const std::vector<Eigen::VectorXd> eta(pb.n_snap, Eigen::VectorXd::Zero(pb.M));
  const auto sigma = update_mechanical_stress(pb, mapping, eta, star);
  for (std::size_t p = 0; p < sigma.size(); ++p) EXPECT_EQ(sigma[p], star[mapping[p]]);
}

TEST(Saddle, SingleElementMultiplierMatchesHandFormula) {
  // one triangle, node 0 with prescribed force, nodes 1 and 2 unknown
  DdiInput in;
  in.mesh.nodes = {{0, 0}, {1, 0}, {0, 1}};
  in.mesh.elements = {{0, 1, 2}};
  in.u = {std::vector<Vec2>(3, Vec2::Zero())};
  in.h = {{1.0}};
  in.f = {{Vec2(0.3, -0.2), Vec2::Zero(), Vec2::Zero()}};
  in.known = {{1, 0, 0}};
  DdiConfig cfg;
  cfg.C = 2.0;
  const DdiProblem pb = build_ddi_problem(in, cfg);
  ASSERT_EQ(pb.M, 2);
  SaddleSystem sys(pb);
  sys.set_mapping({0}, 1);
  Eigen::VectorXd x;
  ASSERT_TRUE(sys.solve(x, 1e-14, 100).converged);
  std::vector<Eigen::VectorXd> eta;
  std::vector<Stress3> star(1);
  sys.unpack(x, eta, star);
  // the node-0 block of B has full column rank, so S^T eta = 0 forces eta = 0
  const Eigen::Matrix<double, 3, 2> b0 = pb.B[0].leftCols<2>();
  EXPECT_LT(eta[0].norm(), 1e-12);
  EXPECT_LT((pb.omega[0] * b0.transpose() * star[0] - Eigen::Vector2d(0.3, -0.2)).norm(), 1e-12);
}

TEST(MaterialStrain, WeightedMeans) {
  DdiProblem pb = scalar_problem(1.0, 1.0);
  std::vector<Strain4> mat(1, Strain4::Zero());
  update_material_strain(pb, {0}, {Strain4(0.1, 0.2, 0.3, 0.4)}, mat);
  EXPECT_EQ(mat[0], Strain4(0.1, 0.2, 0.3, 0.4));
  pb.n_quad = 2;
  pb.omega = {1.0, 1.0};
  update_material_strain(pb, {0, 0}, {Strain4(0.1, 0, 0, 0), Strain4(0.3, 0, 0, 0)}, mat);
  EXPECT_NEAR(mat[0][0], 0.2, 1e-15);
  pb.omega = {1.0, 3.0};
  update_material_strain(pb, {0, 0}, {Strain4(0.1, 0, 0, 0), Strain4(0.3, 0, 0, 0)}, mat);
  EXPECT_NEAR(mat[0][0], 0.25, 1e-15);
}

TEST(MaterialStrain, AdaptedAtIdentityIsPlainMean) {
  DdiInput in = small_input(6, 4, 2, 1, 0.0);
  DdiConfig plain_cfg, adapted_cfg;
  plain_cfg.formulation = Formulation::TL;
  adapted_cfg.formulation = Formulation::TLAdapted;
  const DdiProblem plain = build_ddi_problem(in, plain_cfg);
  const DdiProblem adapted = build_ddi_problem(in, adapted_cfg);
  Rng rng(6);
  std::vector<Strain4> strains(plain.n_points());
  for (auto& s : strains) s = Strain4(uniform01(rng), uniform01(rng), uniform01(rng), uniform01(rng));
  const auto mapping = round_robin_mapping(plain.n_points(), 3);
  std::vector<Strain4> a(3, Strain4::Zero()), b(3, Strain4::Zero());
  update_material_strain(plain, mapping, strains, a);
  EXPECT_EQ(update_material_strain(adapted, mapping, strains, b), 0);
  for (int z = 0; z < 3; ++z) EXPECT_LT((a[z] - b[z]).norm(), 1e-14);
}

TEST(Reassign, ExactStateAndScalarToy) {
  DdiProblem pb = scalar_problem(1.0, 1.0);
  const std::vector<Strain4> db_e{Strain4::Zero(), Strain4(1, 0, 0, 0)};
  const std::vector<Stress3> db_s{Stress3::Zero(), Stress3::Zero()};
  EXPECT_EQ(reassign_exhaustive(pb, {Strain4(0.4, 0, 0, 0)}, {Stress3::Zero()}, db_e, db_s)[0], 0);
  EXPECT_EQ(reassign_accelerated(pb, {Strain4(0.4, 0, 0, 0)}, {Stress3::Zero()}, db_e, db_s)[0], 0);
  EXPECT_EQ(reassign_exhaustive(pb, {db_e[1]}, {db_s[1]}, db_e, db_s)[0], 1);
  EXPECT_EQ(reassign_accelerated(pb, {db_e[1]}, {db_s[1]}, db_e, db_s)[0], 1);
}

TEST(Reassign, AcceleratedAgreesWithExhaustive) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    DdiProblem pb = scalar_problem(0.1 + 10 * uniform01(rng), 1.0);
    pb.n_quad = 200;
    pb.omega.assign(200, 1.0);
    const int nz = 1 + static_cast<int>(50 * uniform01(rng));
    std::vector<Strain4> e(200), es(nz);
    std::vector<Stress3> s(200), ss(nz);
    auto rs = [&] { return standard_normal(rng); };
    for (auto& v : e) v = Strain4(rs(), rs(), rs(), rs());
    for (auto& v : s) v = Stress3(rs(), rs(), rs());
    for (auto& v : es) v = Strain4(rs(), rs(), rs(), rs());
    for (auto& v : ss) v = Stress3(rs(), rs(), rs());
    if (trial % 4 == 0) es[nz / 2] = es[0], ss[nz / 2] = ss[0];  // exact ties
    EXPECT_EQ(reassign_accelerated(pb, e, s, es, ss), reassign_exhaustive(pb, e, s, es, ss));
  }
}

TEST(RunDdi, SingleStateIsWeightedMean) {
  const DdiInput in = small_input(6, 4, 2, 2, 0.01);
  DdiConfig cfg;
  cfg.nstar = 1;
  const DdiResult r = run_ddi(in, cfg);
  EXPECT_TRUE(r.converged);
  for (int z : r.mapping) EXPECT_EQ(z, 0);
  const DdiProblem pb = build_ddi_problem(in, cfg);
  Strain4 mean = Strain4::Zero();
  double w = 0.0;
  for (std::size_t p = 0; p < pb.n_points(); ++p) mean += pb.omega[p] * pb.strain[p], w += pb.omega[p];
  EXPECT_LT((r.mat_strain[0] - mean / w).norm(), 1e-14);
  EXPECT_NEAR(r.mat_weight[0], w, 1e-12 * w);
}

TEST(RunDdi, ConvergedStateIsConsistent) {
  const DdiInput in = small_input(10, 10, 1, 3, 1.0);
  for (Formulation f : {Formulation::UL, Formulation::TL, Formulation::TLAdapted}) {
    DdiConfig cfg;
    cfg.formulation = f;
    cfg.nstar = 20;
    const DdiResult r = run_ddi(in, cfg);
    ASSERT_TRUE(r.converged) << to_string(f);
    EXPECT_LE(r.final_equilibrium, 10 * cfg.linear_tol) << to_string(f);
    const DdiProblem pb = build_ddi_problem(in, cfg);
    EXPECT_EQ(reassign_exhaustive(pb, r.mech_strain, r.mech_stress, r.mat_strain, r.mat_stress), r.mapping);
    // recovered forces at the unknown-force boundary balance the prescribed ones
    for (int t = 0; t < r.n_snap; ++t) {
      Vec2 zeta = Vec2::Zero(), known = Vec2::Zero();
      for (const auto& v : r.zeta[t]) zeta += v;
      for (int a = 0; a < pb.n_nodes; ++a) known += in.f[t][a];
      EXPECT_LT((zeta + known).norm(), 1e-8 * known.norm()) << to_string(f);
    }
  }
}

TEST(RunDdi, RejectsFullyPrescribedForces) {
  DdiInput in = small_input();
  for (auto& k : in.known) std::fill(k.begin(), k.end(), 1);
  EXPECT_THROW(run_ddi(in, DdiConfig{}), std::invalid_argument);
}

TEST(DatabaseIo, RoundTripIsExact) {
  const DdiInput in = small_input(10, 10, 2, 2, 1.0);
  DdiConfig cfg;
  cfg.nstar = 5;
  const DdiResult r = run_ddi(in, cfg);
  const auto path = (std::filesystem::temp_directory_path() / "hyperfit_db_test.csv").string();
  write_database(path, r);
  const auto db = read_database(path);
  ASSERT_EQ(db.size(), 5u);
  for (int z = 0; z < 5; ++z) {
    EXPECT_LT((db[z].strain - r.mat_strain[z]).norm(), 1e-15 * (1 + r.mat_strain[z].norm()));
    EXPECT_LT((db[z].stress - r.mat_stress[z]).norm(), 1e-15 * (1 + r.mat_stress[z].norm()));
    EXPECT_EQ(db[z].weight, r.mat_weight[z]);
  }
  std::filesystem::remove(path);
}
