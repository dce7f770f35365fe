#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "eem/experiment.hpp"

namespace fs = std::filesystem;
using namespace eem;

namespace {

struct RunFlags {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "experiment JSON file");
  cmd->add_option("--preset", f.preset, "bundled preset (fig2, fig3, fig4-6-synthetic)");
  cmd->add_option("--seed", f.seed, "base seed");
  cmd->add_option("--out", f.out, "output directory");
}

ExperimentConfig resolve(const RunFlags& f) {
  if (f.config.empty() && f.preset.empty()) throw ConfigError("one of --config or --preset is required");
  if (!f.config.empty() && !f.preset.empty())
    throw ConfigError("--config and --preset are mutually exclusive");
  auto cfg = f.config.empty() ? preset(f.preset) : load_experiment(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.output_dir = f.out;
  return cfg;
}

int validate_feeder(const std::string& path, bool overrides) {
  const FeederLoadOptions opt{.apply_overrides = overrides};
  const auto tree = path.empty() || path == "sce56" ? builtin_sce56(opt) : load_feeder(path, opt);
  double rmin = 1e300, rmax = 0.0, xmin = 1e300, xmax = 0.0, load = 0.0, pv = 0.0;
  for (std::size_t n = 1; n < tree.num_buses(); ++n) {
    rmin = std::min(rmin, tree.r(n)), rmax = std::max(rmax, tree.r(n));
    xmin = std::min(xmin, tree.x(n)), xmax = std::max(xmax, tree.x(n));
    load += tree.peak_p_pu(n);
    pv += tree.pv_pu(n);
  }
  std::printf("valid feeder\n");
  std::printf("  buses %zu, lines %zu\n", tree.num_buses(), tree.num_lines());
  std::printf("  PV buses %zu, capacitor buses %zu, load buses %zu\n", tree.inverter_buses().size(),
              tree.capacitor_buses().size(), tree.load_buses().size());
  std::printf("  base %.4g kV, %.4g MVA, Z_base %.4g ohm\n", tree.v_base_kv(), tree.s_base_mva(),
              tree.z_base_ohm());
  std::printf("  r %.4g..%.4g p.u., x %.4g..%.4g p.u.\n", rmin, rmax, xmin, xmax);
  std::printf("  peak active load %.4f p.u., PV capacity %.4f p.u.\n", load, pv);
  for (std::size_t n = 0; n < tree.num_buses(); ++n) {
    const auto& b = tree.bus(n);
    if (b.suspect)
      std::printf("  suspect bus %d%s: %s\n", b.id, b.overridden ? " (overridden)" : "",
                  b.note.c_str());
  }
  return 0;
}

int gen_scenario(const ExperimentConfig& cfg, std::size_t replica) {
  cfg.validate();
  const auto tree = load_experiment_feeder(cfg);
  std::vector<SlotData> slots;
  try {
    slots = experiment_slots(tree, cfg, replica);
  } catch (const ScenarioError& e) {
    throw ConfigError(e.what());
  }
  fs::create_directories(cfg.output_dir);
  const auto path = cfg.output_dir / "scenario.csv";
  std::ofstream out(path);
  if (!out) throw RunError("cannot write " + path.string());
  write_scenario_csv(out, tree, slots);
  std::printf("wrote %zu slots x %zu buses to %s\n", slots.size(), tree.num_lines(),
              path.string().c_str());
  return 0;
}

int run(const ExperimentConfig& cfg, bool compare) {
  if (compare && cfg.controllers.size() < 2)
    throw ConfigError("compare needs at least two controllers");
  cfg.validate();
  std::printf("%s: %zu controller(s), %zu replica(s), output in %s\n", cfg.name.c_str(),
              cfg.controllers.size(), cfg.replicas, cfg.output_dir.string().c_str());
  const auto result = run_experiment(cfg, cfg.output_dir);
  print_table(std::cout, result.stats);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ergodic energy management simulator for radial distribution feeders"};
  app.require_subcommand(1);

  RunFlags run_flags, cmp_flags, gen_flags;
  auto* run_cmd = app.add_subcommand("run", "run the configured controllers");
  add_run_flags(run_cmd, run_flags);
  auto* cmp_cmd = app.add_subcommand("compare", "run two or more controllers on common scenarios");
  add_run_flags(cmp_cmd, cmp_flags);

  std::string feeder_path;
  bool no_overrides = false;
  auto* val_cmd = app.add_subcommand("validate-feeder", "check a feeder file and print statistics");
  val_cmd->add_option("path", feeder_path, "feeder JSON (default: bundled SCE-56)");
  val_cmd->add_flag("--no-overrides", no_overrides, "keep printed values of suspect rows");

  std::size_t replica = 0;
  auto* gen_cmd = app.add_subcommand("gen-scenario", "write the slot data of a configuration");
  add_run_flags(gen_cmd, gen_flags);
  gen_cmd->add_option("--replica", replica, "replica index (seed offset)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*val_cmd) return validate_feeder(feeder_path, !no_overrides);
    if (*gen_cmd) return gen_scenario(resolve(gen_flags), replica);
    if (*run_cmd) return run(resolve(run_flags), false);
    if (*cmp_cmd) return run(resolve(cmp_flags), true);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const FeederError& e) {
    std::fprintf(stderr, "invalid feeder: %s\n", e.what());
    return 1;
  } catch (const ScenarioError& e) {
    std::fprintf(stderr, "invalid scenario: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "run failed: %s\n", e.what());
    return 2;
  }
  return 1;
}
