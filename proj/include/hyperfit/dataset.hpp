/**
 * @file dataset.hpp
 * @brief Raw measurement datasets: window mesh plus per-snapshot displacements,
 *        known nodal forces, thickness and global testing force.
 *
 * On disk a dataset is a directory holding
 *   mesh.txt            window mesh (see mesh.hpp)
 *   snapshot_NNN.txt    one file per snapshot, NNN starting at 001
 *   dataset.json        metadata (mode, node-set names, A0, thickness weighting)
 *
 * Snapshot files contain the sections
 *   displacements          one `ux uy` line per node
 *   forces_known K         K lines `node fx fy`
 *   thickness_quadpoints M or thickness_nodes N
 *   global_force           a single value
 * All reals are written with 17 significant digits so that reading back is exact.
 */
#pragma once

#include "hyperfit/mesh.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace hyperfit {

struct RawSnapshot {
  std::vector<Vec2> displacements;        ///< mm, one per node
  std::vector<int> known_nodes;           ///< nodes with prescribed external force
  std::vector<Vec2> known_forces;         ///< N, aligned with known_nodes
  std::vector<double> thickness_quad;     ///< mm, per element (may be empty)
  std::vector<double> thickness_nodes;    ///< mm, per node (may be empty)
  double global_force = 0.0;              ///< testing force, N, tension positive
};

struct RawDataset {
  std::string mode = "ideal";             ///< "ideal" or "realistic"
  TriMesh mesh;
  std::string force_set = "force_boundary";
  std::string zeta_set = "zeta_boundary";
  double A0 = 0.0;                        ///< reference cross-section at the force boundary, mm^2
  std::string thickness_weighting = "deformed";
  std::vector<RawSnapshot> snapshots;
};

namespace detail {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void expect_tag(std::istream& is, const std::string& tag, const std::string& file) {
  std::string t;
  if (!(is >> t) || t != tag) throw std::runtime_error(file + ": expected section '" + tag + "'");
}

}  // namespace detail

inline void write_snapshot(const std::string& path, const RawSnapshot& s) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "displacements " << s.displacements.size() << '\n';
  for (const auto& u : s.displacements) os << detail::fmt17(u.x()) << ' ' << detail::fmt17(u.y()) << '\n';
  os << "forces_known " << s.known_nodes.size() << '\n';
  for (std::size_t k = 0; k < s.known_nodes.size(); ++k)
    os << s.known_nodes[k] << ' ' << detail::fmt17(s.known_forces[k].x()) << ' ' << detail::fmt17(s.known_forces[k].y())
       << '\n';
  if (!s.thickness_quad.empty()) {
    os << "thickness_quadpoints " << s.thickness_quad.size() << '\n';
    for (double h : s.thickness_quad) os << detail::fmt17(h) << '\n';
  }
  if (!s.thickness_nodes.empty()) {
    os << "thickness_nodes " << s.thickness_nodes.size() << '\n';
    for (double h : s.thickness_nodes) os << detail::fmt17(h) << '\n';
  }
  os << "global_force " << detail::fmt17(s.global_force) << '\n';
}

inline RawSnapshot read_snapshot(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  RawSnapshot s;
  std::size_t n = 0;
  detail::expect_tag(is, "displacements", path);
  is >> n;
  s.displacements.resize(n);
  for (auto& u : s.displacements)
    if (!(is >> u.x() >> u.y())) throw std::runtime_error(path + ": truncated displacements");
  detail::expect_tag(is, "forces_known", path);
  is >> n;
  s.known_nodes.resize(n);
  s.known_forces.resize(n);
  for (std::size_t k = 0; k < n; ++k)
    if (!(is >> s.known_nodes[k] >> s.known_forces[k].x() >> s.known_forces[k].y()))
      throw std::runtime_error(path + ": truncated forces");
  for (std::string tag; is >> tag;) {
    if (tag == "thickness_quadpoints" || tag == "thickness_nodes") {
      auto& h = tag == "thickness_nodes" ? s.thickness_nodes : s.thickness_quad;
      is >> n;
      h.resize(n);
      for (auto& v : h)
        if (!(is >> v)) throw std::runtime_error(path + ": truncated thickness");
    } else if (tag == "global_force") {
      if (!(is >> s.global_force)) throw std::runtime_error(path + ": bad global force");
    } else {
      throw std::runtime_error(path + ": unknown section '" + tag + "'");
    }
  }
  return s;
}

inline std::string snapshot_filename(std::size_t tau) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "snapshot_%03zu.txt", tau + 1);
  return buf;
}

/// Writes the dataset and returns the list of files created (relative names).
inline std::vector<std::string> write_raw_dataset(const std::string& dir, const RawDataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::string> files{"mesh.txt"};
  save_mesh((fs::path(dir) / "mesh.txt").string(), ds.mesh);
  for (std::size_t t = 0; t < ds.snapshots.size(); ++t) {
    files.push_back(snapshot_filename(t));
    write_snapshot((fs::path(dir) / files.back()).string(), ds.snapshots[t]);
  }
  nlohmann::json meta{{"format", "hyperfit-raw-v1"},
                      {"mode", ds.mode},
                      {"snapshots", ds.snapshots.size()},
                      {"force_set", ds.force_set},
                      {"zeta_set", ds.zeta_set},
                      {"A0_mm2", ds.A0},
                      {"thickness_weighting", ds.thickness_weighting}};
  std::ofstream((fs::path(dir) / "dataset.json").string()) << meta.dump(2) << '\n';
  files.push_back("dataset.json");
  return files;
}

inline RawDataset read_raw_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto meta_path = fs::path(dir) / "dataset.json";
  std::ifstream is(meta_path);
  if (!is) throw std::runtime_error("cannot read " + meta_path.string());
  const auto meta = nlohmann::json::parse(is);
  if (meta.value("format", "") != "hyperfit-raw-v1") throw std::runtime_error(meta_path.string() + ": unknown format");
  RawDataset ds;
  ds.mode = meta.at("mode").get<std::string>();
  ds.force_set = meta.value("force_set", ds.force_set);
  ds.zeta_set = meta.value("zeta_set", ds.zeta_set);
  ds.A0 = meta.value("A0_mm2", 0.0);
  ds.thickness_weighting = meta.value("thickness_weighting", ds.thickness_weighting);
  ds.mesh = load_mesh((fs::path(dir) / "mesh.txt").string());
  const std::size_t n = meta.at("snapshots").get<std::size_t>();
  for (std::size_t t = 0; t < n; ++t) {
    ds.snapshots.push_back(read_snapshot((fs::path(dir) / snapshot_filename(t)).string()));
    const auto& s = ds.snapshots.back();
    if (s.displacements.size() != ds.mesh.num_nodes())
      throw std::runtime_error(snapshot_filename(t) + ": displacement count does not match mesh");
  }
  return ds;
}

}  // namespace hyperfit
