#include <gtest/gtest.h>

#include "hyperfit/pipeline.hpp"

using namespace hyperfit;

namespace {

json coarse_config() {
  return json::parse(R"({
    "seed": 3,
    "geometry": {"width": 100, "height": 100, "h0": 5, "element_size": 10,
                 "holes": [{"center": [35, 60], "a": 12, "b": 8, "angle_deg": 30},
                           {"center": [65, 40], "a": 12, "b": 8, "angle_deg": -30}]},
    "loading": {"n_snap": 3, "u_max": 30},
    "material": {"E": "1 MPa", "nu": 0.3},
    "noise": {"omega": 1e-4, "eta": 1e-4, "grid": 64},
    "ddi": {"formulations": ["ul"], "max_iterations": 20},
    "pann": {"width": 2, "restarts": 1, "max_iterations": 50},
    "eval": {"steps": 5}
  })");
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

std::string config_error(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Config, StressUnitsConvertToMegapascal) {
  EXPECT_DOUBLE_EQ(parse_stress_value(json("1000 kPa"), "E"), 1.0);
  EXPECT_DOUBLE_EQ(parse_stress_value(json("2 GPa"), "E"), 2000.0);
  EXPECT_DOUBLE_EQ(parse_stress_value(json("5e5 Pa"), "E"), 0.5);
  EXPECT_DOUBLE_EQ(parse_stress_value(json(3.0), "E"), 3.0);
  EXPECT_THROW(parse_stress_value(json("3 psi"), "E"), std::invalid_argument);
  EXPECT_DOUBLE_EQ(parse_length_value(json("2 cm"), "h0"), 20.0);
  json j = coarse_config();
  j["material"]["E"] = "1000 kPa";
  EXPECT_DOUBLE_EQ(parse_config(j).material.E, 1.0);
}

TEST(Config, ErrorsAreItemized) {
  json j = coarse_config();
  j["noise"]["eta"] = -1e-4;
  j["ddi"]["bogus"] = 1;
  j["material"]["E"] = "1 furlong";
  const std::string msg = config_error(j);
  EXPECT_NE(msg.find("eta"), std::string::npos) << msg;
  EXPECT_NE(msg.find("ddi.bogus"), std::string::npos) << msg;
  EXPECT_NE(msg.find("material.E"), std::string::npos) << msg;
  EXPECT_NE(config_error(json::parse(R"({"seed": 1})")).find("geometry"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"geometry": {"mesh_file": "/nonexistent/mesh.txt"}})")).find("mesh_file"),
            std::string::npos);
}

TEST(Config, MeshFileAloneUsesDefaults) {
  const fs::path dir = fresh_dir("hyperfit_cfg_mesh");
  fs::create_directories(dir);
  PlateSpec ps;
  ps.width = ps.height = 10, ps.element_size = 5;
  save_mesh((dir / "m.txt").string(), generate_plate_mesh(ps));
  json j;
  j["geometry"]["mesh_file"] = (dir / "m.txt").string();
  const PipelineConfig c = parse_config(j);
  const PipelineConfig d;
  EXPECT_EQ(c.n_snap, d.n_snap);
  EXPECT_EQ(c.u_max, d.u_max);
  EXPECT_EQ(c.formulations, d.formulations);
  EXPECT_EQ(c.pann.width, d.pann.width);
  EXPECT_EQ(build_parent_mesh(c).num_nodes(), generate_plate_mesh(ps).num_nodes());
  fs::remove_all(dir);
}

TEST(Config, HashIgnoresOutputLocation) {
  PipelineConfig a = parse_config(coarse_config()), b = a;
  b.output = "elsewhere", b.threads = 4;
  EXPECT_EQ(a.hash(), b.hash());
  b.seed = 4;
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(parse_config(a.to_json()).hash(), a.hash());
}

TEST(Pipeline, ResumeSkipsCompletedStagesAndIsDeterministic) {
  const PipelineConfig cfg = parse_config(coarse_config());
  const fs::path d1 = fresh_dir("hyperfit_pipe_a"), d2 = fresh_dir("hyperfit_pipe_b");
  std::vector<std::string> log;
  Pipeline p1(cfg, d1, [&](const std::string& s) { log.push_back(s); });
  const json m1 = p1.run();
  for (const auto& s : stage_names()) EXPECT_TRUE(fs::exists(d1 / (s + ".stamp.json"))) << s;
  EXPECT_TRUE(fs::exists(d1 / "ddi" / "ul" / "database.csv"));
  EXPECT_TRUE(fs::exists(d1 / "train" / "model.pann"));
  EXPECT_TRUE(fs::exists(d1 / "eval" / "paths.csv"));

  log.clear();
  p1.run();
  for (const auto& s : stage_names()) EXPECT_NE(std::find(log.begin(), log.end(), "stage " + s + ": up to date"), log.end());

  fs::remove_all(d1 / "train");
  log.clear();
  const json m1b = p1.run();
  EXPECT_NE(std::find(log.begin(), log.end(), "stage ddi: up to date"), log.end());
  EXPECT_NE(std::find(log.begin(), log.end(), "stage train: running"), log.end());
  EXPECT_NE(std::find(log.begin(), log.end(), "stage eval: running"), log.end());
  EXPECT_EQ(m1b.at("files"), m1.at("files"));

  const json m2 = Pipeline(cfg, d2).run();
  EXPECT_EQ(m2.at("files"), m1.at("files"));
  EXPECT_EQ(m2.at("config_hash"), m1.at("config_hash"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Pipeline, RejectsUnknownStage) {
  Pipeline p(parse_config(coarse_config()), fresh_dir("hyperfit_pipe_bad"));
  EXPECT_THROW(p.run({"fit"}), std::invalid_argument);
}

TEST(Sweep, FailedValueIsRecordedAndSweepContinues) {
  SweepSpec spec;
  spec.param = SweepParam::PseudoStiffness;
  spec.base = parse_config(coarse_config());
  spec.values = parse_sweep_values("-1 MPa, 1000 kPa", spec.param);
  ASSERT_EQ(spec.values.size(), 2u);
  EXPECT_DOUBLE_EQ(spec.values[1], 1.0);
  const auto rows = run_sweep(spec);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].status.rfind("error", 0), 0u);
  EXPECT_EQ(rows[1].status, "ok");
  EXPECT_GT(rows[1].r2_mat, 0.5);
  const fs::path csv = fs::temp_directory_path() / "hyperfit_sweep.csv";
  write_sweep_csv(csv.string(), spec.param, rows);
  std::ifstream is(csv);
  std::string header, line;
  std::getline(is, header);
  EXPECT_EQ(header, "param,value,formulation,r2_mech,r2_mat,iterations,converged,status");
  int n = 0;
  while (std::getline(is, line)) ++n;
  EXPECT_EQ(n, 2);
  fs::remove(csv);
}

TEST(Sweep, RejectsUnknownParameter) {
  EXPECT_THROW(parse_sweep_param("width"), std::invalid_argument);
  EXPECT_EQ(parse_sweep_param("nstar-ratio"), SweepParam::NstarRatio);
  EXPECT_THROW(parse_sweep_values(" , ", SweepParam::Eta), std::invalid_argument);
}
