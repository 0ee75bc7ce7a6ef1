/**
 * @file pipeline.hpp
 * @brief Configuration, staged execution (generate, noise, ddi, train, eval),
 *        run manifests with checksums, and parameter sweeps.
 *
 * Run directory layout:
 *   raw/                 noise-free virtual experiment (mesh, snapshots, dataset.json)
 *   noisy/               the same dataset after measurement noise
 *   ddi/<formulation>/   database.csv, mechanical.csv, ddi.json
 *   train/               model.pann, train.json
 *   eval/                r2_<formulation>.csv, paths.csv, path_samples.csv, metrics.json
 *   <stage>.stamp.json   completion stamp of each stage
 *   manifest.json
 */
#pragma once

#include "hyperfit/dataset.hpp"
#include "hyperfit/ddi.hpp"
#include "hyperfit/evaluate.hpp"
#include "hyperfit/forward_fe.hpp"
#include "hyperfit/mesh.hpp"
#include "hyperfit/noise.hpp"
#include "hyperfit/pann.hpp"
#include "hyperfit/rng.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hyperfit {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

/// Configuration problems, one message per item.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> items)
      : std::invalid_argument(join(items)), items_(std::move(items)) {}
  const std::vector<std::string>& items() const { return items_; }

 private:
  static std::string join(const std::vector<std::string>& items) {
    std::string s = "invalid configuration:";
    for (const auto& i : items) s += "\n  - " + i;
    return s;
  }
  std::vector<std::string> items_;
};

// ---------------------------------------------------------------------------
// Checksums
// ---------------------------------------------------------------------------

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

inline std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline std::string sha256_file(const fs::path& p) { return sha256_hex(read_file(p)); }

inline void write_json(const fs::path& p, const json& j) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << j.dump(2) << '\n';
}

inline json read_json(const fs::path& p) { return json::parse(read_file(p)); }

// ---------------------------------------------------------------------------
// Units
// ---------------------------------------------------------------------------

/// Stress-like value in MPa from a number (MPa) or a string "<value> <Pa|kPa|MPa|GPa>".
inline double parse_stress_value(const json& v, const std::string& key) {
  if (v.is_number()) return v.get<double>();
  if (!v.is_string()) throw std::invalid_argument(key + ": expected a number or a string with a stress unit");
  static const std::regex re(R"(^\s*([-+0-9.eE]+)\s*(Pa|kPa|MPa|GPa)?\s*$)");
  std::smatch m;
  const std::string s = v.get<std::string>();
  if (!std::regex_match(s, m, re)) throw std::invalid_argument(key + ": cannot parse stress value '" + s + "'");
  double x = 0.0;
  try {
    x = std::stod(m[1].str());
  } catch (const std::exception&) {
    throw std::invalid_argument(key + ": cannot parse stress value '" + s + "'");
  }
  const std::string unit = m[2].matched ? m[2].str() : "MPa";
  if (unit == "Pa") return x * 1e-6;
  if (unit == "kPa") return x * 1e-3;
  if (unit == "GPa") return x * 1e3;
  return x;
}

/// Length value in mm from a number (mm) or a string "<value> <mm|m>".
inline double parse_length_value(const json& v, const std::string& key) {
  if (v.is_number()) return v.get<double>();
  if (!v.is_string()) throw std::invalid_argument(key + ": expected a number or a string with a length unit");
  static const std::regex re(R"(^\s*([-+0-9.eE]+)\s*(mm|cm|m)?\s*$)");
  std::smatch m;
  const std::string s = v.get<std::string>();
  if (!std::regex_match(s, m, re)) throw std::invalid_argument(key + ": cannot parse length '" + s + "'");
  const double x = std::stod(m[1].str());
  const std::string unit = m[2].matched ? m[2].str() : "mm";
  return unit == "m" ? 1e3 * x : unit == "cm" ? 10.0 * x : x;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Pseudo stiffness or growth scale: fixed value, or a factor times the stiffness estimate.
struct ScaledValue {
  std::optional<double> value;  ///< MPa
  double factor = 1.0;
  double resolve(double estimate) const { return value ? *value : factor * estimate; }
  json to_json() const { return value ? json(*value) : json{{"auto", factor}}; }
};

struct HoleConfig {
  double cx = 0.0, cy = 0.0, a = 1.0, b = 1.0, angle_deg = 0.0;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string output = "run";
  int threads = 1;

  // geometry
  std::string mesh_file;            ///< optional parent mesh; overrides the generated plate
  double width = 100.0, height = 100.0, h0 = 5.0, element_size = 2.5;
  std::vector<HoleConfig> holes;
  std::array<double, 4> window{0.0, 0.0, 0.0, 0.0};  ///< x0, y0, x1, y1; zero area means the whole specimen

  // loading: lower edge clamped, upper edge displaced vertically
  int n_snap = 10;
  double u_max = 50.0;

  NeoHookeParams material{1.0, 0.3};
  std::string mode = "ideal";
  std::string thickness_weighting = "deformed";

  NoiseConfig noise;

  std::vector<Formulation> formulations{Formulation::UL, Formulation::TL, Formulation::TLAdapted};
  DdiConfig ddi;
  ScaledValue ddi_C{std::nullopt, 10.0};

  bool pann_enabled = true;
  Formulation pann_formulation = Formulation::UL;
  PannTrainConfig pann;
  ScaledValue pann_lambda_gr{std::nullopt, 1e-2};

  double path_lambda_min = 0.8, path_lambda_max = 1.4;
  int path_steps = 61;

  json to_json() const {
    json j;
    j["seed"] = seed;
    j["output"] = output;
    j["threads"] = threads;
    json g;
    if (!mesh_file.empty()) g["mesh_file"] = mesh_file;
    g["width"] = width, g["height"] = height, g["h0"] = h0, g["element_size"] = element_size;
    g["holes"] = json::array();
    for (const auto& h : holes)
      g["holes"].push_back({{"center", {h.cx, h.cy}}, {"a", h.a}, {"b", h.b}, {"angle_deg", h.angle_deg}});
    g["window"] = window;
    j["geometry"] = g;
    j["loading"] = {{"n_snap", n_snap}, {"u_max", u_max}};
    j["material"] = {{"E", material.E}, {"nu", material.nu}};
    j["data"] = {{"mode", mode}, {"thickness_weighting", thickness_weighting}};
    j["noise"] = {{"omega", noise.omega}, {"eta", noise.eta}, {"dx", noise.dx}, {"grid", noise.grid}, {"ell", noise.ell}};
    json fl = json::array();
    for (auto f : formulations) fl.push_back(to_string(f));
    j["ddi"] = {{"formulations", fl},
                {"nstar_ratio", ddi.nstar_ratio},
                {"nstar", ddi.nstar},
                {"C", ddi_C.to_json()},
                {"max_iterations", ddi.max_iterations},
                {"linear_tol", ddi.linear_tol},
                {"max_linear_iterations", ddi.max_linear_iterations},
                {"reinit", ddi.reinit},
                {"accelerated_search", ddi.accelerated_search},
                {"kmeans_iterations", ddi.kmeans_iterations}};
    j["pann"] = {{"enabled", pann_enabled},
                 {"formulation", to_string(pann_formulation)},
                 {"width", pann.width},
                 {"lambda_gr", pann_lambda_gr.to_json()},
                 {"restarts", pann.restarts},
                 {"max_iterations", pann.max_iterations},
                 {"tolerance", pann.tolerance},
                 {"test_fraction", pann.test_fraction}};
    j["eval"] = {{"lambda_min", path_lambda_min}, {"lambda_max", path_lambda_max}, {"steps", path_steps}};
    return j;
  }

  /// Hash of everything that affects results (output location and thread cap excluded).
  std::string hash() const {
    json j = to_json();
    j.erase("output");
    j.erase("threads");
    return sha256_hex(j.dump());
  }
};

namespace detail {

/// Collects errors while reading a JSON object with a fixed set of keys.
class Reader {
 public:
  Reader(const json& j, std::string path, std::vector<std::string>& errors) : j_(j), path_(std::move(path)), err_(errors) {
    if (!j_.is_object()) {
      err_.push_back(path_ + ": expected an object");
      return;
    }
  }
  void allow(std::initializer_list<const char*> keys) {
    if (!j_.is_object()) return;
    for (const auto& [k, v] : j_.items()) {
      bool ok = false;
      for (const char* a : keys) ok = ok || k == a;
      if (!ok) err_.push_back(name(k) + ": unknown key");
    }
  }
  bool has(const char* k) const { return j_.is_object() && j_.contains(k) && !j_.at(k).is_null(); }
  const json& at(const char* k) const { return j_.at(k); }
  std::string name(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  template <class T>
  void get(const char* k, T& out) {
    if (!has(k)) return;
    try {
      out = j_.at(k).get<T>();
    } catch (const std::exception&) {
      err_.push_back(name(k) + ": wrong type");
    }
  }
  void stress(const char* k, double& out) {
    if (!has(k)) return;
    try {
      out = parse_stress_value(j_.at(k), name(k));
    } catch (const std::exception& e) {
      err_.push_back(e.what());
    }
  }
  void length(const char* k, double& out) {
    if (!has(k)) return;
    try {
      out = parse_length_value(j_.at(k), name(k));
    } catch (const std::exception& e) {
      err_.push_back(e.what());
    }
  }
  /// Either a stress value or {"auto": factor}.
  void scaled(const char* k, ScaledValue& out) {
    if (!has(k)) return;
    const json& v = j_.at(k);
    if (v.is_object()) {
      if (v.size() != 1 || !v.contains("auto") || !v.at("auto").is_number()) {
        err_.push_back(name(k) + ": expected a stress value or {\"auto\": factor}");
        return;
      }
      out.value.reset();
      out.factor = v.at("auto").get<double>();
      if (!(out.factor > 0.0)) err_.push_back(name(k) + ".auto: factor must be positive");
      return;
    }
    double x = 0.0;
    stress(k, x);
    out.value = x;
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string>& err_;
};

}  // namespace detail

/**
 * Parses and validates a configuration object. Missing keys take their
 * defaults; unknown keys, wrong types, bad units and out-of-range values are
 * reported together in one ConfigError. Without @p full_run a missing
 * geometry section and cross-stage inconsistencies are accepted.
 */
inline PipelineConfig parse_config(const json& j, bool full_run = true) {
  PipelineConfig c;
  std::vector<std::string> err;
  detail::Reader top(j, "", err);
  top.allow({"seed", "output", "threads", "geometry", "loading", "material", "data", "noise", "ddi", "pann", "eval"});
  top.get("seed", c.seed);
  top.get("output", c.output);
  top.get("threads", c.threads);

  if (!top.has("geometry")) {
    if (full_run) err.push_back("geometry: missing (give the plate dimensions or a mesh_file)");
  } else {
    detail::Reader g(j.at("geometry"), "geometry", err);
    g.allow({"mesh_file", "width", "height", "h0", "element_size", "holes", "window"});
    g.get("mesh_file", c.mesh_file);
    if (!c.mesh_file.empty() && !fs::exists(c.mesh_file)) err.push_back("geometry.mesh_file: file not found: " + c.mesh_file);
    g.length("width", c.width);
    g.length("height", c.height);
    g.length("h0", c.h0);
    g.length("element_size", c.element_size);
    if (c.mesh_file.empty() && !(g.has("width") && g.has("height")))
      err.push_back("geometry: width and height are required without a mesh_file");
    if (g.has("holes")) {
      const json& hs = g.at("holes");
      if (!hs.is_array()) {
        err.push_back("geometry.holes: expected an array");
      } else {
        for (std::size_t i = 0; i < hs.size(); ++i) {
          detail::Reader h(hs[i], "geometry.holes[" + std::to_string(i) + "]", err);
          h.allow({"center", "a", "b", "angle_deg"});
          HoleConfig hc;
          std::vector<double> ctr;
          h.get("center", ctr);
          if (ctr.size() != 2)
            err.push_back(h.name("center") + ": expected [x, y]");
          else
            hc.cx = ctr[0], hc.cy = ctr[1];
          h.length("a", hc.a);
          h.length("b", hc.b);
          h.get("angle_deg", hc.angle_deg);
          if (!(hc.a > 0.0 && hc.b > 0.0)) err.push_back(h.name("a") + ": semi-axes must be positive");
          c.holes.push_back(hc);
        }
      }
    }
    if (g.has("window")) {
      std::vector<double> w;
      g.get("window", w);
      if (w.size() != 4)
        err.push_back("geometry.window: expected [x0, y0, x1, y1]");
      else
        std::copy(w.begin(), w.end(), c.window.begin());
    }
  }
  if (!(c.width > 0.0 && c.height > 0.0)) err.push_back("geometry: width and height must be positive");
  if (!(c.h0 > 0.0)) err.push_back("geometry.h0: must be positive");
  if (!(c.element_size > 0.0)) err.push_back("geometry.element_size: must be positive");

  if (top.has("loading")) {
    detail::Reader l(j.at("loading"), "loading", err);
    l.allow({"n_snap", "u_max"});
    l.get("n_snap", c.n_snap);
    l.length("u_max", c.u_max);
  }
  if (c.n_snap < 1) err.push_back("loading.n_snap: must be >= 1");
  if (c.u_max == 0.0) err.push_back("loading.u_max: must be nonzero");

  if (top.has("material")) {
    detail::Reader m(j.at("material"), "material", err);
    m.allow({"E", "nu"});
    m.stress("E", c.material.E);
    m.get("nu", c.material.nu);
  }
  if (!(c.material.E > 0.0)) err.push_back("material.E: must be positive");
  if (!(c.material.nu > -1.0 && c.material.nu < 0.5)) err.push_back("material.nu: must lie in (-1, 0.5)");

  if (top.has("data")) {
    detail::Reader d(j.at("data"), "data", err);
    d.allow({"mode", "thickness_weighting"});
    d.get("mode", c.mode);
    d.get("thickness_weighting", c.thickness_weighting);
  }
  if (c.mode != "ideal" && c.mode != "realistic") err.push_back("data.mode: expected ideal or realistic");
  if (c.thickness_weighting != "deformed" && c.thickness_weighting != "reference")
    err.push_back("data.thickness_weighting: expected deformed or reference");

  if (top.has("noise")) {
    detail::Reader n(j.at("noise"), "noise", err);
    n.allow({"omega", "eta", "dx", "grid", "ell"});
    n.get("omega", c.noise.omega);
    n.get("eta", c.noise.eta);
    n.length("dx", c.noise.dx);
    n.get("grid", c.noise.grid);
    n.get("ell", c.noise.ell);
  }
  try {
    c.noise.validate();
  } catch (const std::exception& e) {
    err.push_back(e.what());
  }

  if (top.has("ddi")) {
    detail::Reader d(j.at("ddi"), "ddi", err);
    d.allow({"formulations", "nstar_ratio", "nstar", "C", "max_iterations", "linear_tol", "max_linear_iterations",
             "reinit", "accelerated_search", "kmeans_iterations"});
    if (d.has("formulations")) {
      std::vector<std::string> fl;
      d.get("formulations", fl);
      c.formulations.clear();
      for (const auto& f : fl) {
        try {
          c.formulations.push_back(parse_formulation(f));
        } catch (const std::exception& e) {
          err.push_back(std::string("ddi.formulations: ") + e.what());
        }
      }
      if (c.formulations.empty()) err.push_back("ddi.formulations: must not be empty");
    }
    d.get("nstar_ratio", c.ddi.nstar_ratio);
    d.get("nstar", c.ddi.nstar);
    d.scaled("C", c.ddi_C);
    d.get("max_iterations", c.ddi.max_iterations);
    d.get("linear_tol", c.ddi.linear_tol);
    d.get("max_linear_iterations", c.ddi.max_linear_iterations);
    d.get("reinit", c.ddi.reinit);
    d.get("accelerated_search", c.ddi.accelerated_search);
    d.get("kmeans_iterations", c.ddi.kmeans_iterations);
  }
  if (c.ddi_C.value && !(*c.ddi_C.value > 0.0)) err.push_back("ddi.C: must be positive");
  try {
    DdiConfig probe = c.ddi;
    probe.C = 1.0;
    probe.validate();
  } catch (const std::exception& e) {
    err.push_back(e.what());
  }

  if (top.has("pann")) {
    detail::Reader p(j.at("pann"), "pann", err);
    p.allow({"enabled", "formulation", "width", "lambda_gr", "restarts", "max_iterations", "tolerance", "test_fraction"});
    p.get("enabled", c.pann_enabled);
    if (p.has("formulation")) {
      std::string f;
      p.get("formulation", f);
      try {
        c.pann_formulation = parse_formulation(f);
      } catch (const std::exception& e) {
        err.push_back(std::string("pann.formulation: ") + e.what());
      }
    }
    p.get("width", c.pann.width);
    p.scaled("lambda_gr", c.pann_lambda_gr);
    p.get("restarts", c.pann.restarts);
    p.get("max_iterations", c.pann.max_iterations);
    p.get("tolerance", c.pann.tolerance);
    p.get("test_fraction", c.pann.test_fraction);
  }
  if (c.pann_lambda_gr.value && !(*c.pann_lambda_gr.value > 0.0)) err.push_back("pann.lambda_gr: must be positive");
  try {
    PannTrainConfig probe = c.pann;
    probe.lambda_gr = 1.0;
    probe.validate();
  } catch (const std::exception& e) {
    err.push_back(e.what());
  }
  if (full_run && c.pann_enabled &&
      std::find(c.formulations.begin(), c.formulations.end(), c.pann_formulation) == c.formulations.end())
    err.push_back("pann.formulation: must be one of ddi.formulations");

  if (top.has("eval")) {
    detail::Reader e(j.at("eval"), "eval", err);
    e.allow({"lambda_min", "lambda_max", "steps"});
    e.get("lambda_min", c.path_lambda_min);
    e.get("lambda_max", c.path_lambda_max);
    e.get("steps", c.path_steps);
  }
  if (!(c.path_lambda_min > 0.0 && c.path_lambda_max > c.path_lambda_min) || c.path_steps < 2)
    err.push_back("eval: need 0 < lambda_min < lambda_max and steps >= 2");
  if (c.threads < 1) err.push_back("threads: must be >= 1");

  if (!err.empty()) throw ConfigError(err);
  c.ddi.seed = c.seed;
  c.pann.seed = c.seed;
  c.noise.seed = derive_seed(c.seed, "noise");
  return c;
}

inline PipelineConfig load_config(const fs::path& path) {
  json j;
  try {
    j = read_json(path);
  } catch (const json::exception& e) {
    throw ConfigError({path.string() + ": " + e.what()});
  }
  return parse_config(j);
}

/// Output directory and thread cap after environment overrides.
inline void apply_environment(PipelineConfig& c) {
  if (const char* o = std::getenv("HYPERFIT_OUT"); o && *o) c.output = o;
  if (const char* t = std::getenv("HYPERFIT_THREADS"); t && *t) {
    const int n = std::atoi(t);
    if (n >= 1) c.threads = std::min(c.threads, n);
  }
}

// ---------------------------------------------------------------------------
// Geometry and forward problem
// ---------------------------------------------------------------------------

inline TriMesh build_parent_mesh(const PipelineConfig& c) {
  if (!c.mesh_file.empty()) {
    TriMesh m = load_mesh(c.mesh_file);
    m.boundary("bottom");
    m.boundary("top");
    return m;
  }
  PlateSpec ps;
  ps.width = c.width, ps.height = c.height, ps.h0 = c.h0, ps.element_size = c.element_size;
  for (const auto& h : c.holes) ps.holes.push_back({h.cx, h.cy, h.a, h.b, h.angle_deg * M_PI / 180.0});
  return generate_plate_mesh(ps);
}

inline std::array<double, 4> resolve_window(const PipelineConfig& c, const TriMesh& m) {
  auto w = c.window;
  if (w[2] > w[0] && w[3] > w[1]) return w;
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto& p : m.nodes) x0 = std::min(x0, p.x()), y0 = std::min(y0, p.y()), x1 = std::max(x1, p.x()), y1 = std::max(y1, p.y());
  return {x0, y0, x1, y1};
}

inline LoadProgram build_load_program(const PipelineConfig& c) {
  LoadProgram lp;
  lp.n_snap = c.n_snap;
  lp.dirichlet = {{"bottom", 0, 0.0}, {"bottom", 1, 0.0}, {"top", 0, 0.0}, {"top", 1, c.u_max}};
  lp.force_sensor = "bottom";
  return lp;
}

/// Forward simulation and export of the raw dataset on the window.
inline RawDataset generate_dataset(const PipelineConfig& c) {
  const TriMesh parent = build_parent_mesh(c);
  const auto states = solve_forward(parent, build_load_program(c), c.material);
  const auto w = resolve_window(c, parent);
  const MeshWindow win = extract_window(parent, w[0], w[1], w[2], w[3]);
  return export_raw_data(states, parent, win, c.material, {c.mode, c.thickness_weighting});
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> s{"generate", "noise", "ddi", "train", "eval"};
  return s;
}

struct StageOutput {
  std::vector<fs::path> files;  ///< relative to the run directory
  json metrics = json::object();
};

/// Reads the mechanical states written by write_mechanical_states.
inline void read_mechanical_states(const std::string& path, DdiResult& r) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::getline(is, line);
  r.mech_strain.clear(), r.mech_stress.clear(), r.mapping.clear();
  int max_t = -1, max_g = -1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    int t, g, z;
    Strain4 e;
    Stress3 s;
    if (!(ls >> t >> g >> e[0] >> e[1] >> e[2] >> e[3] >> s[0] >> s[1] >> s[2] >> z))
      throw std::runtime_error(path + ": malformed row");
    e[3] *= kSqrt2;
    s[2] *= kSqrt2;
    r.mech_strain.push_back(e);
    r.mech_stress.push_back(s);
    r.mapping.push_back(z);
    max_t = std::max(max_t, t), max_g = std::max(max_g, g);
  }
  r.n_snap = max_t + 1;
  r.n_quad = max_g + 1;
}

/// Loads a DDI stage output back into a result structure (states, database, formulation).
inline DdiResult load_ddi_output(const fs::path& dir) {
  DdiResult r;
  const json meta = read_json(dir / "ddi.json");
  r.formulation = parse_formulation(meta.at("formulation").get<std::string>());
  const auto db = read_database((dir / "database.csv").string());
  r.nstar = static_cast<int>(db.size());
  for (const auto& d : db) r.mat_strain.push_back(d.strain), r.mat_stress.push_back(d.stress), r.mat_weight.push_back(d.weight);
  read_mechanical_states((dir / "mechanical.csv").string(), r);
  r.converged = meta.at("converged").get<bool>();
  r.iterations = meta.at("iterations").get<int>();
  return r;
}

/// Run summary written next to a material database.
inline json ddi_metadata(const DdiResult& r, const DdiConfig& dc) {
  json hist = json::array();
  for (const auto& h : r.history)
    hist.push_back({{"loss", h.loss},
                    {"changed", h.changed},
                    {"linear_iterations", h.linear_iterations},
                    {"linear_residual", h.linear_residual},
                    {"empty_states", h.empty_states},
                    {"equilibrium", h.equilibrium},
                    {"reinitialized", h.reinitialized}});
  json zeta = json::array();
  for (const auto& snap : r.zeta) {
    Vec2 total = Vec2::Zero();
    for (const auto& f : snap) total += f;
    zeta.push_back({total.x(), total.y()});
  }
  return {{"formulation", to_string(r.formulation)},
          {"C", dc.C},
          {"nstar", r.nstar},
          {"n_quad", r.n_quad},
          {"n_snap", r.n_snap},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"final_loss", r.final_loss},
          {"equilibrium_residual", r.final_equilibrium},
          {"linear_tol", dc.linear_tol},
          {"seed", dc.seed},
          {"zeta_resultants", zeta},
          {"history", hist}};
}

class Pipeline {
 public:
  using Log = std::function<void(const std::string&)>;

  Pipeline(PipelineConfig cfg, fs::path dir, Log log = nullptr)
      : cfg_(std::move(cfg)), dir_(std::move(dir)), log_(std::move(log)) {}

  const PipelineConfig& config() const { return cfg_; }
  const fs::path& directory() const { return dir_; }

  /// Runs the given stages in order (all when empty). Completed stages with a
  /// matching stamp are skipped unless @p force is set. Writes manifest.json.
  json run(std::vector<std::string> stages = {}, bool force = false) {
    if (stages.empty()) stages = stage_names();
    for (const auto& s : stages)
      if (std::find(stage_names().begin(), stage_names().end(), s) == stage_names().end())
        throw std::invalid_argument("unknown stage '" + s + "'");
    fs::create_directories(dir_);
    write_json(dir_ / "config.json", cfg_.to_json());
    bool upstream_ran = false;
    for (const auto& name : stage_names()) {
      if (std::find(stages.begin(), stages.end(), name) == stages.end()) continue;
      if (name == "train" && !cfg_.pann_enabled) continue;
      if (!force && !upstream_ran && stage_complete(name)) {
        say("stage " + name + ": up to date");
        continue;
      }
      say("stage " + name + ": running");
      StageOutput out;
      try {
        out = run_stage(name);
      } catch (const std::exception& e) {
        throw std::runtime_error("stage " + name + " failed: " + e.what());
      }
      write_stamp(name, out);
      upstream_ran = true;
    }
    return write_manifest();
  }

  bool stage_complete(const std::string& name) const {
    const fs::path stamp = dir_ / (name + ".stamp.json");
    if (!fs::exists(stamp)) return false;
    try {
      const json s = read_json(stamp);
      if (s.at("config_hash").get<std::string>() != cfg_.hash()) return false;
      for (const auto& f : s.at("files")) {
        const fs::path p = dir_ / f.at("path").get<std::string>();
        if (!fs::exists(p) || sha256_file(p) != f.at("sha256").get<std::string>()) return false;
      }
      return true;
    } catch (const std::exception&) {
      return false;
    }
  }

  StageOutput run_stage(const std::string& name) {
    if (name == "generate") return stage_generate();
    if (name == "noise") return stage_noise();
    if (name == "ddi") return stage_ddi();
    if (name == "train") return stage_train();
    if (name == "eval") return stage_eval();
    throw std::invalid_argument("unknown stage '" + name + "'");
  }

  /// Stiffness estimate from the first snapshot of the noisy data.
  double stiffness_estimate() const { return estimate_stiffness(read_raw_dataset((dir_ / "noisy").string())); }

 private:
  void say(const std::string& s) const {
    if (log_) log_(s);
  }

  StageOutput stage_generate() {
    const RawDataset ds = generate_dataset(cfg_);
    fs::remove_all(dir_ / "raw");
    StageOutput out;
    for (const auto& f : write_raw_dataset((dir_ / "raw").string(), ds)) out.files.push_back(fs::path("raw") / f);
    out.metrics["elements"] = ds.mesh.num_elements();
    out.metrics["nodes"] = ds.mesh.num_nodes();
    out.metrics["final_force"] = ds.snapshots.back().global_force;
    return out;
  }

  StageOutput stage_noise() {
    RawDataset ds = read_raw_dataset((dir_ / "raw").string());
    apply_noise(ds, cfg_.noise);
    fs::remove_all(dir_ / "noisy");
    StageOutput out;
    for (const auto& f : write_raw_dataset((dir_ / "noisy").string(), ds)) out.files.push_back(fs::path("noisy") / f);
    out.metrics["stiffness_estimate"] = estimate_stiffness(ds);
    return out;
  }

  StageOutput stage_ddi() {
    const RawDataset ds = read_raw_dataset((dir_ / "noisy").string());
    const double est = estimate_stiffness(ds);
    const DdiInput in = prepare_ddi_input(ds);
    StageOutput out;
    out.metrics["stiffness_estimate"] = est;
    for (Formulation f : cfg_.formulations) {
      DdiConfig dc = cfg_.ddi;
      dc.formulation = f;
      dc.C = cfg_.ddi_C.resolve(est);
      const DdiResult r = run_ddi(in, dc);
      const fs::path sub = fs::path("ddi") / to_string(f);
      fs::create_directories(dir_ / sub);
      write_database((dir_ / sub / "database.csv").string(), r);
      write_mechanical_states((dir_ / sub / "mechanical.csv").string(), r);
      json meta = ddi_metadata(r, dc);
      write_json(dir_ / sub / "ddi.json", meta);
      for (const char* n : {"database.csv", "mechanical.csv", "ddi.json"}) out.files.push_back(sub / n);
      out.metrics[to_string(f)] = {{"C", dc.C},
                                   {"nstar", r.nstar},
                                   {"iterations", r.iterations},
                                   {"converged", r.converged},
                                   {"loss", r.final_loss},
                                   {"equilibrium_residual", r.final_equilibrium}};
      say("  " + to_string(f) + ": " + std::to_string(r.iterations) + " iterations, converged " +
          (r.converged ? "yes" : "no"));
    }
    return out;
  }

  StageOutput stage_train() {
    const double est = stiffness_estimate();
    const fs::path ddi_dir = dir_ / "ddi" / to_string(cfg_.pann_formulation);
    const auto db = read_database((ddi_dir / "database.csv").string());
    const auto samples = database_to_samples(db, cfg_.pann_formulation);
    PannTrainConfig tc = cfg_.pann;
    tc.lambda_gr = cfg_.pann_lambda_gr.resolve(est);
    const StressMetric metric = cfg_.pann_formulation == Formulation::UL ? StressMetric::UL : StressMetric::TL;
    const PannTrainReport rep = pann_train(samples, metric, tc);
    fs::create_directories(dir_ / "train");
    save_pann((dir_ / "train" / "model.pann").string(), rep.params, to_string(metric));
    json meta = {{"formulation", to_string(cfg_.pann_formulation)},
                 {"samples", samples.size()},
                 {"n_calibration", rep.n_calibration},
                 {"n_test", rep.n_test},
                 {"lambda_gr", tc.lambda_gr},
                 {"width", tc.width},
                 {"restarts", tc.restarts},
                 {"max_iterations", tc.max_iterations},
                 {"tolerance", tc.tolerance},
                 {"best_restart", rep.best_restart},
                 {"restart_losses", rep.restart_losses},
                 {"restart_iterations", rep.restart_iterations},
                 {"mse_calibration", rep.mse_calibration},
                 {"mse_test", rep.mse_test},
                 {"r2_calibration", rep.r2_calibration},
                 {"r2_test", rep.r2_test}};
    write_json(dir_ / "train" / "train.json", meta);
    StageOutput out;
    out.files = {fs::path("train") / "model.pann", fs::path("train") / "train.json"};
    out.metrics = {{"r2_calibration", rep.r2_calibration}, {"r2_test", rep.r2_test}, {"mse_test", rep.mse_test}};
    return out;
  }

  StageOutput stage_eval() {
    StageOutput out;
    fs::create_directories(dir_ / "eval");
    json metrics;
    metrics["stiffness_estimate"] = stiffness_estimate();
    for (Formulation f : cfg_.formulations) {
      const DdiResult r = load_ddi_output(dir_ / "ddi" / to_string(f));
      const DdiScores s = score_ddi(r, cfg_.material);
      const fs::path csv = fs::path("eval") / ("r2_" + to_string(f) + ".csv");
      write_r2_csv((dir_ / csv).string(), s);
      out.files.push_back(csv);
      metrics["ddi"][to_string(f)] = {{"r2_mech", s.mech.pooled}, {"r2_mat", s.mat.pooled}};
    }
    if (cfg_.pann_enabled && fs::exists(dir_ / "train" / "model.pann")) {
      const PannParams model = load_pann((dir_ / "train" / "model.pann").string());
      std::vector<PathSample> samples;
      const auto errs = stress_path_compare(model, cfg_.material, cfg_.path_lambda_min, cfg_.path_lambda_max,
                                            cfg_.path_steps, &samples);
      write_path_errors_csv((dir_ / "eval" / "paths.csv").string(), errs);
      write_path_samples_csv((dir_ / "eval" / "path_samples.csv").string(), samples);
      out.files.push_back(fs::path("eval") / "paths.csv");
      out.files.push_back(fs::path("eval") / "path_samples.csv");
      double worst = 0.0;
      for (const auto& e : errs) {
        metrics["pann"]["paths"][to_string(e.path)] = {{"max_rel", e.max_rel}, {"mean_rel", e.mean_rel}};
        worst = std::max(worst, e.max_rel);
      }
      metrics["pann"]["max_path_error"] = worst;
    }
    write_json(dir_ / "eval" / "metrics.json", metrics);
    out.files.push_back(fs::path("eval") / "metrics.json");
    out.metrics = metrics;
    return out;
  }

  void write_stamp(const std::string& name, const StageOutput& out) const {
    json files = json::array();
    for (const auto& f : out.files) files.push_back({{"path", f.generic_string()}, {"sha256", sha256_file(dir_ / f)}});
    write_json(dir_ / (name + ".stamp.json"),
               {{"stage", name}, {"config_hash", cfg_.hash()}, {"files", files}, {"metrics", out.metrics}});
  }

  json write_manifest() const {
    json m;
    m["format"] = "hyperfit-manifest-v1";
    m["config_hash"] = cfg_.hash();
    m["config"] = cfg_.to_json();
    m["versions"] = {{"hyperfit", kVersion},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"compiler", __VERSION__}};
    m["seeds"] = {{"global", cfg_.seed},
                  {"noise", derive_seed(cfg_.seed, "noise")},
                  {"kmeans", derive_seed(cfg_.seed, "kmeans")},
                  {"pann-init", derive_seed(cfg_.seed, "pann-init")}};
    m["threads"] = cfg_.threads;
    json files = json::array(), metrics = json::object();
    files.push_back({{"path", "config.json"}, {"sha256", sha256_file(dir_ / "config.json")}, {"stage", "config"}});
    for (const auto& name : stage_names()) {
      const fs::path stamp = dir_ / (name + ".stamp.json");
      if (!fs::exists(stamp)) continue;
      const json s = read_json(stamp);
      metrics[name] = s.at("metrics");
      files.push_back({{"path", stamp.filename().string()}, {"sha256", sha256_file(stamp)}, {"stage", name}});
      for (const auto& f : s.at("files")) files.push_back({{"path", f.at("path")}, {"sha256", f.at("sha256")}, {"stage", name}});
    }
    m["files"] = files;
    m["metrics"] = metrics;
    write_json(dir_ / "manifest.json", m);
    return m;
  }

  PipelineConfig cfg_;
  fs::path dir_;
  Log log_;
};

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

enum class SweepParam { NstarRatio, PseudoStiffness, Eta };

inline SweepParam parse_sweep_param(const std::string& s) {
  if (s == "nstar-ratio") return SweepParam::NstarRatio;
  if (s == "C" || s == "pseudo-stiffness") return SweepParam::PseudoStiffness;
  if (s == "eta") return SweepParam::Eta;
  throw std::invalid_argument("unknown sweep parameter '" + s + "' (expected nstar-ratio, C or eta)");
}

inline std::string to_string(SweepParam p) {
  switch (p) {
    case SweepParam::NstarRatio: return "nstar-ratio";
    case SweepParam::PseudoStiffness: return "C";
    case SweepParam::Eta: return "eta";
  }
  return "?";
}

struct SweepSpec {
  SweepParam param = SweepParam::NstarRatio;
  std::vector<double> values;  ///< C in MPa
  PipelineConfig base;
  void validate() const {
    if (values.empty()) throw std::invalid_argument("sweep: value list is empty");
  }
};

struct SweepRow {
  double value = 0.0;
  Formulation formulation = Formulation::UL;
  double r2_mech = std::numeric_limits<double>::quiet_NaN();
  double r2_mat = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  bool converged = false;
  std::string status = "ok";
};

/// Parses a comma-separated value list; C values accept stress units.
inline std::vector<double> parse_sweep_values(const std::string& list, SweepParam p) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(p == SweepParam::PseudoStiffness ? parse_stress_value(json(item), "values") : std::stod(item));
  }
  if (out.empty()) throw std::invalid_argument("sweep: empty value list");
  return out;
}

/**
 * One DDI run per value and formulation on a shared dataset (regenerated per
 * value only when noise is swept). Failures are recorded and the sweep continues.
 */
inline std::vector<SweepRow> run_sweep(const SweepSpec& spec, const Pipeline::Log& log = nullptr) {
  spec.validate();
  std::vector<SweepRow> rows;
  std::optional<RawDataset> clean;
  for (double v : spec.values) {
    PipelineConfig c = spec.base;
    if (spec.param == SweepParam::NstarRatio) c.ddi.nstar_ratio = v, c.ddi.nstar = 0;
    if (spec.param == SweepParam::PseudoStiffness) c.ddi_C.value = v;
    if (spec.param == SweepParam::Eta) c.noise.eta = v;
    std::optional<DdiInput> in;
    double est = 0.0;
    std::string failure;
    try {
      if (!clean) clean = generate_dataset(c);
      RawDataset ds = *clean;
      apply_noise(ds, c.noise);
      est = estimate_stiffness(ds);
      in = prepare_ddi_input(ds);
    } catch (const std::exception& e) {
      failure = e.what();
    }
    for (Formulation f : c.formulations) {
      SweepRow row;
      row.value = v;
      row.formulation = f;
      if (!in) {
        row.status = "error: " + failure;
        rows.push_back(row);
        continue;
      }
      try {
        DdiConfig dc = c.ddi;
        dc.formulation = f;
        dc.C = c.ddi_C.resolve(est);
        const DdiResult r = run_ddi(*in, dc);
        const DdiScores s = score_ddi(r, c.material);
        row.r2_mech = s.mech.pooled;
        row.r2_mat = s.mat.pooled;
        row.iterations = r.iterations;
        row.converged = r.converged;
      } catch (const std::exception& e) {
        row.status = std::string("error: ") + e.what();
      }
      if (log) {
        std::ostringstream os;
        os << to_string(spec.param) << '=' << v << ' ' << to_string(f) << ": r2_mech " << row.r2_mech << " r2_mat "
           << row.r2_mat << " (" << row.status << ')';
        log(os.str());
      }
      rows.push_back(row);
    }
  }
  return rows;
}

/// `param,value,formulation,r2_mech,r2_mat,iterations,converged,status`
inline void write_sweep_csv(const std::string& path, SweepParam p, const std::vector<SweepRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "param,value,formulation,r2_mech,r2_mat,iterations,converged,status\n";
  for (const auto& r : rows) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    os << to_string(p) << ',' << detail::fmt17(r.value) << ',' << to_string(r.formulation) << ','
       << detail::fmt17(r.r2_mech) << ',' << detail::fmt17(r.r2_mat) << ',' << r.iterations << ','
       << (r.converged ? 1 : 0) << ',' << status << '\n';
  }
}

}  // namespace hyperfit
