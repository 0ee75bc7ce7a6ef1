// Command-line front end: stage subcommands, full pipeline, sweeps and config validation.

#include "hyperfit/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace hyperfit;

namespace {

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out;
};

struct ConfigOptions {
  std::string file;
  std::vector<std::string> sets;
  std::string mesh;
};

/// Flags of the stand-alone stage modes; each one also maps onto a configuration key.
struct StageFlags {
  std::string in, db, formulation, metric, pseudo_stiffness, lambda_gr;
  std::optional<double> eta, omega, nstar_ratio;
  std::optional<int> width;
};

json scalar_or_string(const std::string& raw) {
  try {
    std::size_t used = 0;
    const double v = std::stod(raw, &used);
    if (used == raw.size()) return json(v);
  } catch (const std::exception&) {
  }
  return json(raw);
}

void apply_stage_flags(json& j, const StageFlags& sf) {
  if (sf.eta) j["noise"]["eta"] = *sf.eta;
  if (sf.omega) j["noise"]["omega"] = *sf.omega;
  if (!sf.formulation.empty()) j["ddi"]["formulations"] = json::array({sf.formulation});
  if (sf.nstar_ratio) j["ddi"]["nstar_ratio"] = *sf.nstar_ratio;
  if (!sf.pseudo_stiffness.empty()) j["ddi"]["C"] = scalar_or_string(sf.pseudo_stiffness);
  if (!sf.metric.empty()) j["pann"]["formulation"] = sf.metric;
  if (sf.width) j["pann"]["width"] = *sf.width;
  if (!sf.lambda_gr.empty()) j["pann"]["lambda_gr"] = scalar_or_string(sf.lambda_gr);
}

/// Parses "a.b.c=value"; the value is read as JSON when possible and as a string otherwise.
void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError({"--set " + assignment + ": expected key.path=value"});
  std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  std::replace(key.begin(), key.end(), '.', '/');
  j[json::json_pointer("/" + key)] = value;
}

json load_config_json(const ConfigOptions& co, const GlobalOptions& go, const StageFlags* sf = nullptr) {
  json j = json::object();
  if (!co.file.empty()) {
    try {
      j = read_json(co.file);
    } catch (const json::exception& e) {
      throw ConfigError({co.file + ": " + e.what()});
    }
  }
  if (!co.mesh.empty()) j["geometry"]["mesh_file"] = co.mesh;
  if (sf) apply_stage_flags(j, *sf);
  for (const auto& s : co.sets) apply_override(j, s);
  if (go.seed) j["seed"] = *go.seed;
  if (go.threads) j["threads"] = *go.threads;
  return j;
}

PipelineConfig resolve_config(const ConfigOptions& co, const GlobalOptions& go, const StageFlags* sf = nullptr,
                              bool full_run = true) {
  PipelineConfig c = parse_config(load_config_json(co, go, sf), full_run);
  apply_environment(c);
  if (!go.out.empty()) c.output = go.out;
  return c;
}

void add_config_options(CLI::App* sub, ConfigOptions& co) {
  sub->add_option("-c,--config", co.file, "configuration file (JSON)")->check(CLI::ExistingFile);
  sub->add_option("--set", co.sets, "override a configuration key, e.g. --set noise.eta=1e-4")->take_all();
  sub->add_option("--mesh", co.mesh, "parent mesh file (sets geometry.mesh_file)");
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

fs::path require_out(const GlobalOptions& go) {
  if (go.out.empty()) throw ConfigError({"--out: required together with --in/--db"});
  return go.out;
}

/// `noise --in <dir> --out <dir>`: perturbs a raw dataset directory.
int standalone_noise(const PipelineConfig& c, const StageFlags& sf, const GlobalOptions& go) {
  RawDataset ds = read_raw_dataset(sf.in);
  apply_noise(ds, c.noise);
  const fs::path out = require_out(go);
  fs::remove_all(out);
  write_raw_dataset(out.string(), ds);
  std::cout << json{{"eta", c.noise.eta}, {"omega", c.noise.omega}, {"seed", c.seed},
                    {"stiffness_estimate", estimate_stiffness(ds)}}.dump(2)
            << '\n';
  return 0;
}

/// `ddi --in <dir> --out <dir>`: material database from a raw dataset directory.
int standalone_ddi(const PipelineConfig& c, const StageFlags& sf, const GlobalOptions& go) {
  const RawDataset ds = read_raw_dataset(sf.in);
  const fs::path out = require_out(go);
  DdiConfig dc = c.ddi;
  dc.formulation = c.formulations.front();
  dc.C = c.ddi_C.resolve(estimate_stiffness(ds));
  const DdiResult r = run_ddi(prepare_ddi_input(ds), dc);
  fs::create_directories(out);
  write_database((out / "database.csv").string(), r);
  write_mechanical_states((out / "mechanical.csv").string(), r);
  const json meta = ddi_metadata(r, dc);
  write_json(out / "ddi.json", meta);
  json summary = meta;
  summary.erase("history");
  summary.erase("zeta_resultants");
  std::cout << summary.dump(2) << '\n';
  return r.converged ? 0 : 1;
}

/// `train --db <file> --out model.pann`: calibrates a network on a material database.
int standalone_train(const PipelineConfig& c, const StageFlags& sf, const GlobalOptions& go) {
  PannTrainConfig tc = c.pann;
  if (c.pann_lambda_gr.value) {
    tc.lambda_gr = *c.pann_lambda_gr.value;
  } else if (!sf.in.empty()) {
    tc.lambda_gr = c.pann_lambda_gr.resolve(estimate_stiffness(read_raw_dataset(sf.in)));
  } else {
    throw ConfigError({"pann.lambda_gr: give --lambda-gr <MPa>, or --in <dataset> to derive it from the stiffness estimate"});
  }
  const Formulation f = c.pann_formulation == Formulation::UL ? Formulation::UL : Formulation::TL;
  const StressMetric metric = f == Formulation::UL ? StressMetric::UL : StressMetric::TL;
  const auto samples = database_to_samples(read_database(sf.db), f);
  const PannTrainReport rep = pann_train(samples, metric, tc);
  const fs::path out = require_out(go);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_pann(out.string(), rep.params, to_string(metric));
  std::cout << json{{"samples", samples.size()},
                    {"lambda_gr", tc.lambda_gr},
                    {"width", tc.width},
                    {"best_restart", rep.best_restart},
                    {"mse_calibration", rep.mse_calibration},
                    {"mse_test", rep.mse_test},
                    {"r2_calibration", rep.r2_calibration},
                    {"r2_test", rep.r2_test}}
                   .dump(2)
            << '\n';
  return 0;
}

void print_metrics(const json& manifest) { std::cout << manifest.at("metrics").dump(2) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-driven identification of hyperelastic material behaviour from full-field data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  app.fallthrough();
  GlobalOptions go;
  app.add_option("--seed", go.seed, "global seed")->group("Global");
  app.add_option("--threads", go.threads, "thread-count cap")->check(CLI::PositiveNumber)->group("Global");
  app.add_option("--out", go.out, "run directory (default from config, or HYPERFIT_OUT)")->group("Global");

  ConfigOptions co;
  bool force = false;
  std::map<std::string, CLI::App*> stage_cmds;
  const std::map<std::string, std::string> help{{"generate", "forward simulation and raw data export"},
                                                {"noise", "apply measurement noise to the raw data"},
                                                {"ddi", "data-driven identification of material states"},
                                                {"train", "calibrate the neural network potential"},
                                                {"eval", "R2 scores and stress-path comparison"}};
  for (const auto& name : stage_names()) {
    auto* sub = app.add_subcommand(name, help.at(name));
    add_config_options(sub, co);
    sub->add_flag("--force", force, "rerun even if the stage is up to date");
    stage_cmds[name] = sub;
  }
  StageFlags sf;
  auto* noise = stage_cmds.at("noise");
  noise->add_option("--in", sf.in, "raw dataset directory (stand-alone mode; output goes to --out)");
  noise->add_option("--eta", sf.eta, "displacement noise factor (noise.eta)");
  noise->add_option("--omega", sf.omega, "force noise half-width (noise.omega)");
  auto* ddi = stage_cmds.at("ddi");
  ddi->add_option("--in", sf.in, "raw dataset directory (stand-alone mode; output goes to --out)");
  ddi->add_option("--formulation", sf.formulation, "ul, tl or tl-adapted (ddi.formulations)")
      ->check(CLI::IsMember({"ul", "tl", "tl-adapted"}));
  ddi->add_option("--nstar-ratio", sf.nstar_ratio, "N* / (N_quad N_snap) (ddi.nstar_ratio)");
  ddi->add_option("--pseudo-stiffness", sf.pseudo_stiffness, "pseudo stiffness, MPa or with unit (ddi.C)");
  auto* train = stage_cmds.at("train");
  train->add_option("--db", sf.db, "material database (stand-alone mode; model goes to --out)")->check(CLI::ExistingFile);
  train->add_option("--in", sf.in, "raw dataset used for the stiffness estimate in stand-alone mode");
  train->add_option("--metric", sf.metric, "ul or tl (pann.formulation)")->check(CLI::IsMember({"ul", "tl"}));
  train->add_option("--width", sf.width, "hidden-layer width (pann.width)")->check(CLI::PositiveNumber);
  train->add_option("--lambda-gr", sf.lambda_gr, "growth-term weight, MPa or with unit (pann.lambda_gr)");
  auto* pipe = app.add_subcommand("pipeline", "run all stages, resuming from completed ones");
  add_config_options(pipe, co);
  pipe->add_flag("--force", force, "rerun all stages");

  auto* sweep = app.add_subcommand("sweep", "DDI parameter sweep");
  add_config_options(sweep, co);
  std::string sweep_param, sweep_values, sweep_csv;
  sweep->add_option("--param", sweep_param, "nstar-ratio, C or eta")->required();
  sweep->add_option("--values", sweep_values, "comma-separated values (C accepts units, e.g. 10kPa)")->required();
  sweep->add_option("--csv", sweep_csv, "output table (default <out>/sweep_<param>.csv)");

  auto* validate = app.add_subcommand("validate", "check a configuration and print it with defaults filled");
  add_config_options(validate, co);

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate->parsed()) {
      const PipelineConfig c = resolve_config(co, go);
      std::cout << c.to_json().dump(2) << '\n';
      return 0;
    }
    const bool standalone = (noise->parsed() || ddi->parsed()) ? !sf.in.empty() : train->parsed() && !sf.db.empty();
    if (standalone) {
      const PipelineConfig c = resolve_config(co, go, &sf, false);
      if (noise->parsed()) return standalone_noise(c, sf, go);
      if (ddi->parsed()) return standalone_ddi(c, sf, go);
      return standalone_train(c, sf, go);
    }
    const PipelineConfig c = resolve_config(co, go, &sf);
    if (sweep->parsed()) {
      SweepSpec spec;
      spec.param = parse_sweep_param(sweep_param);
      spec.values = parse_sweep_values(sweep_values, spec.param);
      spec.base = c;
      const auto rows = run_sweep(spec, log_line);
      fs::create_directories(c.output);
      const std::string csv =
          sweep_csv.empty() ? (fs::path(c.output) / ("sweep_" + to_string(spec.param) + ".csv")).string() : sweep_csv;
      write_sweep_csv(csv, spec.param, rows);
      std::cout << csv << '\n';
      int failed = 0;
      for (const auto& r : rows) failed += r.status != "ok";
      if (failed) std::cerr << failed << " sweep point(s) failed; see " << csv << '\n';
      return 0;
    }
    Pipeline p(c, c.output, log_line);
    if (pipe->parsed()) {
      print_metrics(p.run({}, force));
      return 0;
    }
    for (const auto& [name, sub] : stage_cmds) {
      if (!sub->parsed()) continue;
      print_metrics(p.run({name}, force));
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
