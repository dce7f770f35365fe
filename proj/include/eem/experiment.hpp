#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "eem/controller.hpp"
#include "eem/metrics.hpp"

namespace eem {

/// Invalid experiment configuration (maps to exit status 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A run that failed after validation (maps to exit status 2).
class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedController {
  std::string label;
  ControllerConfig config;
};

struct ExperimentConfig {
  std::string name = "custom";
  /// "sce56" for the bundled feeder, otherwise a feeder JSON path.
  std::string feeder = "sce56";
  bool apply_overrides = true;
  /// Exactly one of the two is used.
  std::optional<SyntheticConfig> synthetic = SyntheticConfig{};
  std::optional<TraceConfig> trace;
  std::vector<NamedController> controllers;
  std::size_t replicas = 1;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";
  MetricsOptions metrics;
  /// Concurrent replicas; 0 uses the hardware concurrency.
  std::size_t threads = 0;

  void validate() const;
};

std::vector<std::string> preset_names();
/// Throws ConfigError for an unknown name.
ExperimentConfig preset(std::string_view name);

/// Reads a config document. A "preset" key selects the base that the
/// remaining keys override.
ExperimentConfig parse_experiment(const nlohmann::json& doc);
ExperimentConfig load_experiment(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

FeederTree load_experiment_feeder(const ExperimentConfig& cfg);
/// Slot sequence of one replica; synthetic replicas use seed + replica.
std::vector<SlotData> experiment_slots(const FeederTree& tree, const ExperimentConfig& cfg,
                                       std::size_t replica);

/// Long-format scenario table: t,bus_id,p_c,q_c,pg_max,price_main,price_fit.
void write_scenario_csv(std::ostream& out, const FeederTree& tree,
                        const std::vector<SlotData>& slots);

struct ReplicaResult {
  std::string label;
  std::size_t replica = 0;
  RunSummary summary;
};

struct ControllerStats {
  std::string label;
  std::size_t replicas = 0;
  /// Final time-average cost in $/h, over replicas.
  double mean_avg_cost = 0.0;
  double se_avg_cost = 0.0;
  double mean_total_cost = 0.0;
  double mean_curtailment_kwh = 0.0;
  double mean_violation_fraction = 0.0;
  double max_feasibility_residual = 0.0;
  double max_exactness_gap = 0.0;
};

struct ExperimentResult {
  std::vector<ReplicaResult> runs;
  std::vector<ControllerStats> stats;
};

/// Runs every controller on every replica; all controllers of a replica
/// see the same slot sequence. Replicas run concurrently. With an output
/// directory, per-run CSV and JSON files, a config echo and a merged
/// summary are written there. Throws RunError if any run fails, after the
/// remaining runs have finished.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::optional<std::filesystem::path>& out_dir = {});

std::vector<ControllerStats> aggregate(const std::vector<NamedController>& controllers,
                                       const std::vector<ReplicaResult>& runs);

/// Fixed-width comparison table; rows after the first carry the cost
/// difference to the first controller.
void print_table(std::ostream& out, const std::vector<ControllerStats>& stats);

}  // namespace eem
