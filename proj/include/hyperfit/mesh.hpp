/**
 * @file mesh.hpp
 * @brief Linear-triangle plane meshes with single-point quadrature.
 *
 * Quadrature point g coincides with element e. The quadrature weight is 1/2 in
 * natural coordinates, so w * detJ equals the element area.
 */
#pragma once

#include "hyperfit/continuum.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hyperfit {

using Element = std::array<int, 3>;
using NodeSet = std::vector<int>;

struct TriMesh {
  std::vector<Vec2> nodes;                       ///< reference coordinates, mm
  std::vector<Element> elements;                 ///< counter-clockwise node triples
  std::map<std::string, NodeSet> boundary_sets;  ///< named node sets
  double h0 = 1.0;                               ///< reference thickness, mm

  std::size_t num_nodes() const { return nodes.size(); }
  std::size_t num_elements() const { return elements.size(); }

  double signed_area(std::size_t e, const std::vector<Vec2>* disp = nullptr) const {
    const auto& el = elements[e];
    Vec2 p[3];
    for (int k = 0; k < 3; ++k) p[k] = nodes[el[k]] + (disp ? (*disp)[el[k]] : Vec2::Zero());
    return 0.5 * ((p[1] - p[0]).x() * (p[2] - p[0]).y() - (p[1] - p[0]).y() * (p[2] - p[0]).x());
  }

  const NodeSet& boundary(const std::string& name) const {
    auto it = boundary_sets.find(name);
    if (it == boundary_sets.end()) throw std::invalid_argument("mesh has no boundary set '" + name + "'");
    return it->second;
  }

  void validate() const {
    if (!(h0 > 0.0)) throw std::invalid_argument("mesh thickness h0 must be positive");
    const int n = static_cast<int>(nodes.size());
    for (std::size_t e = 0; e < elements.size(); ++e) {
      for (int k : elements[e])
        if (k < 0 || k >= n) throw std::invalid_argument("element " + std::to_string(e) + " references invalid node");
      if (!(signed_area(e) > 0.0))
        throw std::invalid_argument("element " + std::to_string(e) + " has non-positive reference area");
    }
    for (const auto& [name, set] : boundary_sets)
      for (int k : set)
        if (k < 0 || k >= n) throw std::invalid_argument("boundary set '" + name + "' references invalid node");
  }
};

/// Element whose Jacobian is non-positive in the requested configuration.
class InvertedElementError : public std::runtime_error {
 public:
  InvertedElementError(std::size_t element, double det)
      : std::runtime_error("element " + std::to_string(element) + " inverted (detJ = " + std::to_string(det) + ")"),
        element_(element) {}
  std::size_t element() const { return element_; }

 private:
  std::size_t element_;
};

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

inline void write_mesh(std::ostream& os, const TriMesh& m) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "nodes %zu elements %zu thickness %.17g\n", m.nodes.size(), m.elements.size(), m.h0);
  os << buf;
  for (const auto& p : m.nodes) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", p.x(), p.y());
    os << buf;
  }
  for (const auto& e : m.elements) os << e[0] << ' ' << e[1] << ' ' << e[2] << '\n';
  for (const auto& [name, set] : m.boundary_sets) {
    os << "boundary " << name << ':';
    for (int k : set) os << ' ' << k;
    os << '\n';
  }
}

inline TriMesh read_mesh(std::istream& is) {
  TriMesh m;
  std::string tag_nodes, tag_elems, tag_thick;
  std::size_t n = 0, ne = 0;
  if (!(is >> tag_nodes >> n >> tag_elems >> ne >> tag_thick >> m.h0) || tag_nodes != "nodes" || tag_elems != "elements" ||
      tag_thick != "thickness")
    throw std::runtime_error("mesh: malformed header");
  m.nodes.resize(n);
  for (auto& p : m.nodes)
    if (!(is >> p.x() >> p.y())) throw std::runtime_error("mesh: truncated node list");
  m.elements.resize(ne);
  for (auto& e : m.elements)
    if (!(is >> e[0] >> e[1] >> e[2])) throw std::runtime_error("mesh: truncated element list");
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string kw, name;
    ls >> kw >> name;
    if (kw != "boundary" || name.empty() || name.back() != ':') throw std::runtime_error("mesh: bad line '" + line + "'");
    name.pop_back();
    NodeSet set;
    for (int k; ls >> k;) set.push_back(k);
    m.boundary_sets[name] = std::move(set);
  }
  m.validate();
  return m;
}

inline void save_mesh(const std::string& path, const TriMesh& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_mesh(os, m);
}

inline TriMesh load_mesh(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  return read_mesh(is);
}

// ---------------------------------------------------------------------------
// Shape-function gradients and strain operators
// ---------------------------------------------------------------------------

using ShapeGrad = Eigen::Matrix<double, 3, 2>;  ///< row alpha: dN_alpha/dx_b

/// Shape-function gradients and Jacobians of every element in one configuration.
struct Connectivity {
  static constexpr double weight = 0.5;
  std::vector<Element> elements;
  std::vector<ShapeGrad> grad;
  std::vector<double> detJ;  ///< 2 * element area in this configuration

  std::size_t size() const { return elements.size(); }
  double area(std::size_t g) const { return weight * detJ[g]; }
};

/// Gradients in the reference configuration, or in the deformed one when @p disp is given.
inline Connectivity build_connectivity(const TriMesh& mesh, const std::vector<Vec2>* disp = nullptr) {
  if (disp && disp->size() != mesh.num_nodes()) throw std::invalid_argument("displacement size does not match mesh");
  Connectivity c;
  c.elements = mesh.elements;
  c.grad.resize(mesh.num_elements());
  c.detJ.resize(mesh.num_elements());
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    const auto& el = mesh.elements[e];
    Vec2 x[3];
    for (int k = 0; k < 3; ++k) x[k] = mesh.nodes[el[k]] + (disp ? (*disp)[el[k]] : Vec2::Zero());
    Mat2 jac;
    jac.col(0) = x[1] - x[0];
    jac.col(1) = x[2] - x[0];
    const double det = jac.determinant();
    if (!(det > 0.0)) throw InvertedElementError(e, det);
    // natural gradients of N = (1 - xi - eta, xi, eta)
    Eigen::Matrix<double, 3, 2> dn_nat;
    dn_nat << -1, -1, 1, 0, 0, 1;
    c.grad[e] = dn_nat * jac.inverse();
    c.detJ[e] = det;
  }
  return c;
}

/// F_ab = delta_ab + sum_alpha u^alpha_a dN^alpha/dX_b, using reference gradients.
inline Mat2 deformation_gradient(const Connectivity& ref, std::size_t g, const std::vector<Vec2>& u) {
  Mat2 f = Mat2::Identity();
  for (int k = 0; k < 3; ++k) f += u[ref.elements[g][k]] * ref.grad[g].row(k);
  return f;
}

/// Spatial strain operator b in Mandel form: rows [11, 22, sqrt2*12], columns (node k, component c).
/// Applied to nodal vectors it yields sym(grad w); its transpose maps stresses to nodal forces.
inline Eigen::Matrix<double, 3, 6> strain_operator(const ShapeGrad& dn) {
  const double r = 1.0 / std::sqrt(2.0);
  Eigen::Matrix<double, 3, 6> b = Eigen::Matrix<double, 3, 6>::Zero();
  for (int k = 0; k < 3; ++k) {
    b(0, 2 * k) = dn(k, 0);
    b(1, 2 * k + 1) = dn(k, 1);
    b(2, 2 * k) = r * dn(k, 1);
    b(2, 2 * k + 1) = r * dn(k, 0);
  }
  return b;
}

/// Material strain operator B(F) in Mandel form: dE_AB = sym(F^T grad_0 du)_AB.
inline Eigen::Matrix<double, 3, 6> strain_operator(const ShapeGrad& dn0, const Mat2& f) {
  const double r = 1.0 / std::sqrt(2.0);
  Eigen::Matrix<double, 3, 6> b = Eigen::Matrix<double, 3, 6>::Zero();
  for (int k = 0; k < 3; ++k)
    for (int c = 0; c < 2; ++c) {
      b(0, 2 * k + c) = f(c, 0) * dn0(k, 0);
      b(1, 2 * k + c) = f(c, 1) * dn0(k, 1);
      b(2, 2 * k + c) = r * (f(c, 0) * dn0(k, 1) + f(c, 1) * dn0(k, 0));
    }
  return b;
}

// ---------------------------------------------------------------------------
// Node <-> quadrature-point projections
// ---------------------------------------------------------------------------

/// Weighted average of element values over the elements attached to each node.
inline std::vector<double> project_thickness_to_nodes(const TriMesh& mesh, const std::vector<double>& h_elem,
                                                      const std::vector<double>& weights) {
  if (h_elem.size() != mesh.num_elements() || weights.size() != mesh.num_elements())
    throw std::invalid_argument("thickness projection: size mismatch");
  std::vector<double> num(mesh.num_nodes(), 0.0), den(mesh.num_nodes(), 0.0);
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    if (!(h_elem[e] > 0.0)) throw std::invalid_argument("thickness projection: non-positive thickness");
    for (int k : mesh.elements[e]) {
      num[k] += weights[e] * h_elem[e];
      den[k] += weights[e];
    }
  }
  for (std::size_t a = 0; a < num.size(); ++a) {
    if (!(den[a] > 0.0)) throw std::invalid_argument("thickness projection: node " + std::to_string(a) + " has no element");
    num[a] /= den[a];
  }
  return num;
}

/// Arithmetic mean of the three nodal values of every element.
inline std::vector<double> project_thickness_to_quadpoints(const TriMesh& mesh, const std::vector<double>& h_nodes) {
  if (h_nodes.size() != mesh.num_nodes()) throw std::invalid_argument("thickness projection: size mismatch");
  std::vector<double> out(mesh.num_elements());
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    const auto& el = mesh.elements[e];
    out[e] = (h_nodes[el[0]] + h_nodes[el[1]] + h_nodes[el[2]]) / 3.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Boundary edges and consistent tractions
// ---------------------------------------------------------------------------

using Edge = std::array<int, 2>;

/// Edges that belong to exactly one element, oriented as in that element.
inline std::vector<Edge> boundary_edges(const TriMesh& mesh) {
  std::map<std::pair<int, int>, std::pair<int, Edge>> count;
  for (const auto& el : mesh.elements)
    for (int k = 0; k < 3; ++k) {
      const int a = el[k], b = el[(k + 1) % 3];
      auto& entry = count[{std::min(a, b), std::max(a, b)}];
      entry.first += 1;
      entry.second = {a, b};
    }
  std::vector<Edge> out;
  for (const auto& [key, val] : count)
    if (val.first == 1) out.push_back(val.second);
  return out;
}

/// Boundary edges with both end nodes in @p set; throws unless they form one connected polyline.
inline std::vector<Edge> edge_polyline(const TriMesh& mesh, const NodeSet& set) {
  const std::set<int> in(set.begin(), set.end());
  std::vector<Edge> edges;
  for (const auto& e : boundary_edges(mesh))
    if (in.count(e[0]) && in.count(e[1])) edges.push_back(e);
  if (edges.empty()) throw std::invalid_argument("edge set is empty");
  std::map<int, std::vector<int>> adj;
  for (const auto& e : edges) {
    adj[e[0]].push_back(e[1]);
    adj[e[1]].push_back(e[0]);
  }
  for (const auto& [node, nb] : adj)
    if (nb.size() > 2) throw std::invalid_argument("edge set branches at node " + std::to_string(node));
  std::set<int> seen;
  std::vector<int> stack{adj.begin()->first};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    if (!seen.insert(v).second) continue;
    for (int w : adj[v]) stack.push_back(w);
  }
  if (seen.size() != adj.size()) throw std::invalid_argument("edge set is disconnected");
  return edges;
}

/// Consistent nodal loads of a uniform traction (MPa) on a reference edge polyline of thickness h0.
inline std::vector<Vec2> traction_to_nodal_forces(const TriMesh& mesh, const NodeSet& edge_nodes, const Vec2& traction,
                                                  double h0) {
  std::vector<Vec2> f(mesh.num_nodes(), Vec2::Zero());
  for (const auto& e : edge_polyline(mesh, edge_nodes)) {
    const double len = (mesh.nodes[e[1]] - mesh.nodes[e[0]]).norm();
    const Vec2 half = 0.5 * traction * h0 * len;
    f[e[0]] += half;
    f[e[1]] += half;
  }
  return f;
}

// ---------------------------------------------------------------------------
// Built-in geometries
// ---------------------------------------------------------------------------

struct EllipseHole {
  double cx = 0.0, cy = 0.0;  ///< centre, mm
  double a = 1.0, b = 1.0;    ///< semi-axes along the rotated local x and y, mm
  double angle = 0.0;         ///< rotation, rad

  Vec2 local(const Vec2& p) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const Vec2 d = p - Vec2(cx, cy);
    return {c * d.x() + s * d.y(), -s * d.x() + c * d.y()};
  }
  double level(const Vec2& p) const {
    const Vec2 q = local(p);
    return (q.x() / a) * (q.x() / a) + (q.y() / b) * (q.y() / b);
  }
  bool contains(const Vec2& p) const { return level(p) < 1.0; }
  /// Radial projection onto the ellipse outline.
  Vec2 project(const Vec2& p) const {
    const double s = std::sqrt(level(p));
    if (s == 0.0) return p;
    const Vec2 q = local(p) / s;
    const double c = std::cos(angle), sn = std::sin(angle);
    return {cx + c * q.x() - sn * q.y(), cy + sn * q.x() + c * q.y()};
  }
  Vec2 point(double t) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double x = a * std::cos(t), y = b * std::sin(t);
    return {cx + c * x - s * y, cy + s * x + c * y};
  }
};

struct PlateSpec {
  double x0 = 0.0, y0 = 0.0;
  double width = 1.0, height = 1.0;
  double h0 = 1.0;
  double element_size = 0.5;
  std::vector<EllipseHole> holes;
};

namespace detail {

inline std::vector<Element> drop_unattached(std::vector<Element> elems, std::size_t num_nodes) {
  // Removes triangles without an edge neighbour and splits bow-tie nodes by keeping the largest fan.
  for (bool changed = true; changed;) {
    changed = false;
    std::map<std::pair<int, int>, std::vector<int>> edge_elems;
    for (std::size_t e = 0; e < elems.size(); ++e)
      for (int k = 0; k < 3; ++k) {
        const int a = elems[e][k], b = elems[e][(k + 1) % 3];
        edge_elems[{std::min(a, b), std::max(a, b)}].push_back(static_cast<int>(e));
      }
    std::vector<char> keep(elems.size(), 1);
    std::vector<std::vector<int>> node_elems(num_nodes);
    for (std::size_t e = 0; e < elems.size(); ++e)
      for (int k : elems[e]) node_elems[k].push_back(static_cast<int>(e));
    for (std::size_t e = 0; e < elems.size(); ++e) {
      int neighbours = 0;
      for (int k = 0; k < 3; ++k) {
        const int a = elems[e][k], b = elems[e][(k + 1) % 3];
        neighbours += static_cast<int>(edge_elems[{std::min(a, b), std::max(a, b)}].size()) - 1;
      }
      if (neighbours == 0 && elems.size() > 1) keep[e] = 0;
    }
    for (std::size_t v = 0; v < num_nodes; ++v) {
      const auto& fan = node_elems[v];
      if (fan.size() < 2) continue;
      // union elements around v that share an edge through v
      std::map<int, int> parent;
      for (int e : fan) parent[e] = e;
      auto find = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
      };
      for (int e : fan)
        for (int k = 0; k < 3; ++k) {
          const int a = elems[e][k], b = elems[e][(k + 1) % 3];
          if (a != static_cast<int>(v) && b != static_cast<int>(v)) continue;
          for (int o : edge_elems[{std::min(a, b), std::max(a, b)}]) parent[find(o)] = find(e);
        }
      std::map<int, std::vector<int>> groups;
      for (int e : fan) groups[find(e)].push_back(e);
      if (groups.size() < 2) continue;
      std::size_t best = 0;
      int best_root = -1;
      for (const auto& [root, members] : groups)
        if (members.size() > best) best = members.size(), best_root = root;
      for (const auto& [root, members] : groups)
        if (root != best_root)
          for (int e : members) keep[e] = 0;
    }
    std::vector<Element> next;
    for (std::size_t e = 0; e < elems.size(); ++e)
      if (keep[e]) next.push_back(elems[e]);
    changed = next.size() != elems.size();
    elems = std::move(next);
  }
  return elems;
}

inline void tag_rectangle_sides(TriMesh& m, double x0, double y0, double x1, double y1, double tol) {
  NodeSet bottom, top, left, right;
  for (std::size_t k = 0; k < m.nodes.size(); ++k) {
    const Vec2& p = m.nodes[k];
    const int i = static_cast<int>(k);
    if (std::abs(p.y() - y0) <= tol) bottom.push_back(i);
    if (std::abs(p.y() - y1) <= tol) top.push_back(i);
    if (std::abs(p.x() - x0) <= tol) left.push_back(i);
    if (std::abs(p.x() - x1) <= tol) right.push_back(i);
  }
  m.boundary_sets["bottom"] = bottom;
  m.boundary_sets["top"] = top;
  m.boundary_sets["left"] = left;
  m.boundary_sets["right"] = right;
}

}  // namespace detail

/// Structured triangulation of a rectangle with elliptical holes carved out and the
/// carved boundary nodes snapped onto the hole outlines.
inline TriMesh generate_plate_mesh(const PlateSpec& spec) {
  if (!(spec.width > 0.0 && spec.height > 0.0 && spec.element_size > 0.0))
    throw std::invalid_argument("plate mesh: dimensions and element size must be positive");
  const int nx = std::max(1, static_cast<int>(std::lround(spec.width / spec.element_size)));
  const int ny = std::max(1, static_cast<int>(std::lround(spec.height / spec.element_size)));
  const double dx = spec.width / nx, dy = spec.height / ny;
  const double x1 = spec.x0 + spec.width, y1 = spec.y0 + spec.height;

  for (std::size_t i = 0; i < spec.holes.size(); ++i) {
    const auto& h = spec.holes[i];
    if (!(h.a > 0.0 && h.b > 0.0)) throw std::invalid_argument("plate mesh: hole semi-axes must be positive");
    for (int s = 0; s < 256; ++s) {
      const Vec2 p = h.point(2.0 * M_PI * s / 256.0);
      if (p.x() <= spec.x0 + dx || p.x() >= x1 - dx || p.y() <= spec.y0 + dy || p.y() >= y1 - dy)
        throw std::invalid_argument("plate mesh: hole " + std::to_string(i) + " is not strictly inside the plate");
      for (std::size_t j = 0; j < spec.holes.size(); ++j)
        if (j != i && spec.holes[j].level(p) <= 1.0)
          throw std::invalid_argument("plate mesh: holes " + std::to_string(i) + " and " + std::to_string(j) + " overlap");
    }
  }

  std::vector<Vec2> nodes;
  nodes.reserve(static_cast<std::size_t>((nx + 1) * (ny + 1)));
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) nodes.emplace_back(spec.x0 + i * dx, spec.y0 + j * dy);
  auto id = [nx](int i, int j) { return j * (nx + 1) + i; };

  std::vector<Element> elems;
  std::vector<char> carved_node(nodes.size(), 0);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int n00 = id(i, j), n10 = id(i + 1, j), n01 = id(i, j + 1), n11 = id(i + 1, j + 1);
      Element t[2];
      if ((i + j) % 2 == 0) {
        t[0] = {n00, n10, n11};
        t[1] = {n00, n11, n01};
      } else {
        t[0] = {n00, n10, n01};
        t[1] = {n10, n11, n01};
      }
      for (const auto& el : t) {
        const Vec2 c = (nodes[el[0]] + nodes[el[1]] + nodes[el[2]]) / 3.0;
        bool inside = false;
        for (const auto& h : spec.holes) inside = inside || h.contains(c);
        if (inside) {
          for (int k : el) carved_node[k] = 1;
        } else {
          elems.push_back(el);
        }
      }
    }
  elems = detail::drop_unattached(std::move(elems), nodes.size());

  // snap the carved outline onto the ellipses
  std::vector<std::vector<int>> node_elems(nodes.size());
  for (std::size_t e = 0; e < elems.size(); ++e)
    for (int k : elems[e]) node_elems[k].push_back(static_cast<int>(e));
  const double min_area = 0.25 * 0.5 * dx * dy;
  auto area_of = [&](const Element& el) {
    const Vec2 a = nodes[el[1]] - nodes[el[0]], b = nodes[el[2]] - nodes[el[0]];
    return 0.5 * (a.x() * b.y() - a.y() * b.x());
  };
  for (std::size_t v = 0; v < nodes.size(); ++v) {
    if (!carved_node[v] || node_elems[v].empty()) continue;
    const EllipseHole* nearest = nullptr;
    double best = 1e300;
    for (const auto& h : spec.holes)
      if (const double l = std::abs(std::sqrt(h.level(nodes[v])) - 1.0); l < best) best = l, nearest = &h;
    if (!nearest) continue;
    const Vec2 old = nodes[v];
    nodes[v] = nearest->project(old);
    bool ok = true;
    for (int e : node_elems[v]) {
      const auto& el = elems[e];
      const Vec2 c = (nodes[el[0]] + nodes[el[1]] + nodes[el[2]]) / 3.0;
      ok = ok && area_of(el) > min_area;
      for (const auto& h : spec.holes) ok = ok && !h.contains(c);
    }
    if (!ok) nodes[v] = old;
  }

  // compact node numbering
  std::vector<int> remap(nodes.size(), -1);
  TriMesh m;
  m.h0 = spec.h0;
  for (auto& el : elems)
    for (int& k : el) {
      if (remap[k] < 0) {
        remap[k] = static_cast<int>(m.nodes.size());
        m.nodes.push_back(nodes[k]);
      }
      k = remap[k];
    }
  // renumber in original node order for a stable layout
  std::vector<int> order(m.nodes.size());
  std::vector<int> old_of_new(m.nodes.size());
  for (std::size_t k = 0; k < remap.size(); ++k)
    if (remap[k] >= 0) old_of_new[remap[k]] = static_cast<int>(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return old_of_new[a] < old_of_new[b]; });
  std::vector<int> rank(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = static_cast<int>(r);
  std::vector<Vec2> sorted(m.nodes.size());
  for (std::size_t k = 0; k < m.nodes.size(); ++k) sorted[rank[k]] = m.nodes[k];
  m.nodes = std::move(sorted);
  for (auto& el : elems)
    for (int& k : el) k = rank[k];
  m.elements = std::move(elems);

  const double tol = 1e-9 * std::max(spec.width, spec.height);
  detail::tag_rectangle_sides(m, spec.x0, spec.y0, x1, y1, tol);
  std::set<int> hole_nodes;
  for (const auto& e : boundary_edges(m))
    for (int k : e) {
      const Vec2& p = m.nodes[k];
      const bool outer = std::abs(p.x() - spec.x0) <= tol || std::abs(p.x() - x1) <= tol ||
                         std::abs(p.y() - spec.y0) <= tol || std::abs(p.y() - y1) <= tol;
      if (!outer) hole_nodes.insert(k);
    }
  m.boundary_sets["holes"] = NodeSet(hole_nodes.begin(), hole_nodes.end());
  m.validate();
  return m;
}

/// Sub-mesh of the elements whose centroid lies in an axis-aligned window.
struct MeshWindow {
  TriMesh mesh;
  std::vector<int> parent_node;     ///< window node -> parent node
  std::vector<int> parent_element;  ///< window element -> parent element
};

inline MeshWindow extract_window(const TriMesh& parent, double x0, double y0, double x1, double y1) {
  MeshWindow w;
  w.mesh.h0 = parent.h0;
  std::vector<int> remap(parent.num_nodes(), -1);
  for (std::size_t e = 0; e < parent.num_elements(); ++e) {
    const auto& el = parent.elements[e];
    const Vec2 c = (parent.nodes[el[0]] + parent.nodes[el[1]] + parent.nodes[el[2]]) / 3.0;
    if (c.x() < x0 || c.x() > x1 || c.y() < y0 || c.y() > y1) continue;
    Element ne;
    for (int k = 0; k < 3; ++k) {
      if (remap[el[k]] < 0) {
        remap[el[k]] = static_cast<int>(w.parent_node.size());
        w.parent_node.push_back(el[k]);
      }
      ne[k] = remap[el[k]];
    }
    w.mesh.elements.push_back(ne);
    w.parent_element.push_back(static_cast<int>(e));
  }
  if (w.mesh.elements.empty()) throw std::invalid_argument("window contains no elements");
  // keep parent node ordering
  std::vector<int> order(w.parent_node.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return w.parent_node[a] < w.parent_node[b]; });
  std::vector<int> rank(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = static_cast<int>(r);
  std::vector<int> sorted_parent(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) sorted_parent[r] = w.parent_node[order[r]];
  w.parent_node = std::move(sorted_parent);
  for (auto& el : w.mesh.elements)
    for (int& k : el) k = rank[k];
  w.mesh.nodes.resize(w.parent_node.size());
  for (std::size_t k = 0; k < w.parent_node.size(); ++k) w.mesh.nodes[k] = parent.nodes[w.parent_node[k]];

  double bx0 = 1e300, by0 = 1e300, bx1 = -1e300, by1 = -1e300;
  for (const auto& p : w.mesh.nodes) {
    bx0 = std::min(bx0, p.x()), by0 = std::min(by0, p.y());
    bx1 = std::max(bx1, p.x()), by1 = std::max(by1, p.y());
  }
  detail::tag_rectangle_sides(w.mesh, bx0, by0, bx1, by1, 1e-9 * std::max(bx1 - bx0, by1 - by0));
  std::vector<int> local(parent.num_nodes(), -1);
  for (std::size_t k = 0; k < w.parent_node.size(); ++k) local[w.parent_node[k]] = static_cast<int>(k);
  if (auto it = parent.boundary_sets.find("holes"); it != parent.boundary_sets.end()) {
    NodeSet holes;
    for (int k : it->second)
      if (local[k] >= 0) holes.push_back(local[k]);
    std::sort(holes.begin(), holes.end());
    w.mesh.boundary_sets["holes"] = holes;
  }
  w.mesh.validate();
  return w;
}

}  // namespace hyperfit
