#include <gtest/gtest.h>

#include "hyperfit/mesh.hpp"
#include "test_util.hpp"

#include <sstream>

using namespace hyperfit;

namespace {

TriMesh unit_triangle() {
  TriMesh m;
  m.nodes = {{0, 0}, {1, 0}, {0, 1}};
  m.elements = {{0, 1, 2}};
  return m;
}

TriMesh unit_square(double size = 0.5) {
  PlateSpec ps;
  ps.width = ps.height = 1.0;
  ps.element_size = size;
  return generate_plate_mesh(ps);
}

PlateSpec two_hole_plate() {
  PlateSpec ps;
  ps.width = 100, ps.height = 100, ps.h0 = 5, ps.element_size = 2.5;
  ps.holes = {{35, 60, 12, 8, M_PI / 6}, {65, 40, 12, 8, -M_PI / 6}};
  return ps;
}

}  // namespace

TEST(Connectivity, ZeroDisplacementGivesIdentity) {
  const TriMesh m = unit_triangle();
  const auto c = build_connectivity(m);
  const std::vector<Vec2> u(3, Vec2::Zero());
  EXPECT_LT((deformation_gradient(c, 0, u) - Mat2::Identity()).norm(), 1e-15);
  EXPECT_DOUBLE_EQ(c.area(0), 0.5);
}

TEST(Connectivity, AffineFieldIsReproducedEverywhere) {
  const TriMesh m = generate_plate_mesh(two_hole_plate());
  const auto c = build_connectivity(m);
  std::vector<Vec2> u(m.num_nodes());
  for (std::size_t k = 0; k < u.size(); ++k) u[k] = {0.1 * m.nodes[k].x(), 0.0};
  for (std::size_t g = 0; g < c.size(); ++g) {
    const Mat2 f = deformation_gradient(c, g, u);
    EXPECT_NEAR(f(0, 0), 1.1, 1e-12);
    EXPECT_NEAR(f(1, 1), 1.0, 1e-12);
    EXPECT_NEAR(f(0, 1), 0.0, 1e-12);
    EXPECT_NEAR(f(1, 0), 0.0, 1e-12);
  }
}

TEST(Connectivity, StrainOperatorGivesSymmetricGradient) {
  const TriMesh m = unit_square(0.25);
  const auto c = build_connectivity(m);
  Rng rng(5);
  const Mat2 grad = Mat2::Random();
  std::vector<Vec2> u(m.num_nodes());
  for (std::size_t k = 0; k < u.size(); ++k) u[k] = grad * m.nodes[k];
  const Mat2 sym = 0.5 * (grad + grad.transpose());
  for (std::size_t g = 0; g < c.size(); ++g) {
    Eigen::Matrix<double, 6, 1> ue;
    for (int k = 0; k < 3; ++k) ue.segment<2>(2 * k) = u[c.elements[g][k]];
    const Eigen::Vector3d e = strain_operator(c.grad[g]) * ue;
    EXPECT_NEAR(e[0], sym(0, 0), 1e-12);
    EXPECT_NEAR(e[1], sym(1, 1), 1e-12);
    EXPECT_NEAR(e[2], std::sqrt(2.0) * sym(0, 1), 1e-12);
  }
}

TEST(Connectivity, MaterialStrainOperatorIsGreenLagrangeVariation) {
  const TriMesh m = unit_triangle();
  const auto c = build_connectivity(m);
  Rng rng(9);
  std::vector<Vec2> u(3), du(3);
  for (int k = 0; k < 3; ++k) {
    u[k] = {0.2 * (uniform01(rng) - 0.5), 0.2 * (uniform01(rng) - 0.5)};
    du[k] = {uniform01(rng) - 0.5, uniform01(rng) - 0.5};
  }
  auto green = [&](double s) {
    std::vector<Vec2> w(3);
    for (int k = 0; k < 3; ++k) w[k] = u[k] + s * du[k];
    const Mat2 f = deformation_gradient(c, 0, w);
    const Mat2 e = 0.5 * (f.transpose() * f - Mat2::Identity());
    return Eigen::Vector3d(e(0, 0), e(1, 1), std::sqrt(2.0) * e(0, 1));
  };
  const double h = 1e-6;
  const Eigen::Vector3d fd = (green(h) - green(-h)) / (2 * h);
  Eigen::Matrix<double, 6, 1> due;
  for (int k = 0; k < 3; ++k) due.segment<2>(2 * k) = du[k];
  const Eigen::Vector3d an = strain_operator(c.grad[0], deformation_gradient(c, 0, u)) * due;
  EXPECT_LT((an - fd).norm(), 1e-8);
}

TEST(Connectivity, InvertedElementIsReported) {
  const TriMesh m = unit_triangle();
  const std::vector<Vec2> u{{0, 0}, {-2, 0}, {0, 0}};
  EXPECT_THROW(build_connectivity(m, &u), InvertedElementError);
}

TEST(ThicknessProjection, UniformFieldIsPreserved) {
  const TriMesh m = unit_square(0.25);
  const std::vector<double> h(m.num_elements(), 4.2), w(m.num_elements(), 1.0);
  for (double v : project_thickness_to_nodes(m, h, w)) EXPECT_DOUBLE_EQ(v, 4.2);
  const auto q = project_thickness_to_quadpoints(m, project_thickness_to_nodes(m, h, w));
  for (double v : q) EXPECT_DOUBLE_EQ(v, 4.2);
}

TEST(ThicknessProjection, WeightedMeanHandValues) {
  TriMesh m;
  m.nodes = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  m.elements = {{0, 1, 2}, {1, 3, 2}};
  auto h = project_thickness_to_nodes(m, {4.0, 6.0}, {1.0, 1.0});
  EXPECT_DOUBLE_EQ(h[1], 5.0);
  EXPECT_DOUBLE_EQ(h[2], 5.0);
  EXPECT_DOUBLE_EQ(h[0], 4.0);
  h = project_thickness_to_nodes(m, {4.0, 8.0}, {1.0, 3.0});
  EXPECT_DOUBLE_EQ(h[1], 7.0);
}

TEST(ThicknessProjection, NodeToQuadIsArithmeticMean) {
  const TriMesh m = unit_triangle();
  EXPECT_DOUBLE_EQ(project_thickness_to_quadpoints(m, {3, 3, 3})[0], 3.0);
  EXPECT_DOUBLE_EQ(project_thickness_to_quadpoints(m, {1, 2, 3})[0], 2.0);
  EXPECT_THROW(project_thickness_to_quadpoints(m, {1, 2}), std::invalid_argument);
}

TEST(Traction, SingleEdgeSplitsEvenly) {
  TriMesh m = unit_triangle();
  const auto f = traction_to_nodal_forces(m, {0, 1}, Vec2(0.0, 2.0), 3.0);
  EXPECT_NEAR(f[0].y(), 2.0 * 3.0 * 1.0 / 2, 1e-15);
  EXPECT_NEAR(f[1].y(), 2.0 * 3.0 * 1.0 / 2, 1e-15);
  EXPECT_NEAR(f[2].norm(), 0.0, 1e-15);
  for (const auto& v : traction_to_nodal_forces(m, {0, 1}, Vec2::Zero(), 3.0)) EXPECT_EQ(v.norm(), 0.0);
}

TEST(Traction, CollinearEdgesHaveLumpedMiddle) {
  TriMesh m;
  m.nodes = {{0, 0}, {0.5, 0}, {1, 0}, {0, 1}, {1, 1}};
  m.elements = {{0, 1, 3}, {1, 4, 3}, {1, 2, 4}};
  const double p = 1.5, h0 = 2.0, L = 1.0;
  const auto f = traction_to_nodal_forces(m, {0, 1, 2}, Vec2(p, 0.0), h0);
  EXPECT_NEAR(f[0].x(), p * h0 * L / 4, 1e-15);
  EXPECT_NEAR(f[1].x(), p * h0 * L / 2, 1e-15);
  EXPECT_NEAR(f[2].x(), p * h0 * L / 4, 1e-15);
}

TEST(PlateMesh, StructuredUnitSquare) {
  const TriMesh m = unit_square(0.5);
  EXPECT_EQ(m.num_elements(), 8u);
  EXPECT_EQ(m.num_nodes(), 9u);
  EXPECT_EQ(m.boundary("bottom").size(), 3u);
  EXPECT_EQ(m.boundary("top").size(), 3u);
}

TEST(PlateMesh, HolesAreEmptyAndElementsPositive) {
  const PlateSpec ps = two_hole_plate();
  const TriMesh m = generate_plate_mesh(ps);
  EXPECT_NO_THROW(m.validate());
  double area = 0.0;
  for (std::size_t e = 0; e < m.num_elements(); ++e) {
    EXPECT_GT(m.signed_area(e), 0.0);
    area += m.signed_area(e);
    const auto& el = m.elements[e];
    const Vec2 c = (m.nodes[el[0]] + m.nodes[el[1]] + m.nodes[el[2]]) / 3.0;
    for (const auto& h : ps.holes) EXPECT_FALSE(h.contains(c));
  }
  const double hole_area = 2 * M_PI * 12 * 8;
  EXPECT_NEAR(area, 100 * 100 - hole_area, 0.02 * hole_area);
  EXPECT_FALSE(m.boundary("holes").empty());
}

TEST(PlateMesh, RejectsBadSpec) {
  PlateSpec ps;
  ps.element_size = -1.0;
  EXPECT_THROW(generate_plate_mesh(ps), std::invalid_argument);
}

TEST(MeshIo, RoundTripIsExact) {
  const TriMesh m = generate_plate_mesh(two_hole_plate());
  std::stringstream ss;
  write_mesh(ss, m);
  const TriMesh r = read_mesh(ss);
  ASSERT_EQ(r.num_nodes(), m.num_nodes());
  ASSERT_EQ(r.num_elements(), m.num_elements());
  for (std::size_t k = 0; k < m.num_nodes(); ++k) EXPECT_EQ(r.nodes[k], m.nodes[k]);
  EXPECT_EQ(r.elements, m.elements);
  EXPECT_EQ(r.boundary_sets, m.boundary_sets);
  EXPECT_EQ(r.h0, m.h0);
}

TEST(Window, KeepsElementsInsideAndTagsSides) {
  const TriMesh m = generate_plate_mesh(two_hole_plate());
  const MeshWindow w = extract_window(m, 0, 20, 100, 80);
  EXPECT_LT(w.mesh.num_elements(), m.num_elements());
  for (std::size_t k = 0; k < w.mesh.num_nodes(); ++k) EXPECT_EQ(w.mesh.nodes[k], m.nodes[w.parent_node[k]]);
  for (int k : w.mesh.boundary("bottom")) EXPECT_NEAR(w.mesh.nodes[k].y(), 20.0, 1e-9);
  for (int k : w.mesh.boundary("top")) EXPECT_NEAR(w.mesh.nodes[k].y(), 80.0, 1e-9);
  EXPECT_THROW(extract_window(m, 200, 200, 300, 300), std::invalid_argument);
}
