#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eem/controller.hpp"

namespace eem {

inline constexpr double kSlotSeconds = 30.0;

struct MetricsOptions {
  double dt_s = kSlotSeconds;
  /// Retail price in cents/kWh for the customer and utility costs.
  double price_retail = 30.0;
  /// Rolling window for regulation compliance, in slots (10 minutes).
  std::size_t window = 20;
  /// Slack on [v_l, v_u] before a voltage counts as a violation.
  double violation_tol = 1e-6;
};

/// Realized slot cost in dollars.
double slot_cost(const SlotRecord& rec, double s_base_mva, double dt_s = kSlotSeconds);

std::vector<double> prefix_mean(std::span<const double> x);

/// Running mean of the slot costs as a $/h rate.
std::vector<double> time_avg_cost(const Trajectory& traj, double s_base_mva,
                                  double dt_s = kSlotSeconds);

/// Running-average constraint slack per prefix and bus (p.u.^2). Entry
/// [k][n] uses slots 0..k. Voltages are the model voltages.
struct FeasibilityResiduals {
  std::vector<std::vector<double>> apparent;
  std::vector<std::vector<double>> voltage;

  /// Largest entry of the final prefix over both families.
  double final_max() const;
};

FeasibilityResiduals ergodic_feasibility(const Trajectory& traj, const FeederTree& tree,
                                         const LimitsProfile& limits);

/// Per-bus customer energy cost in dollars: retail price on the deficit,
/// minus the feed-in tariff on the surplus.
std::vector<double> customer_cost(const SlotData& slot, const Setpoints& sp, double s_base_mva,
                                  double dt_s = kSlotSeconds, double price_retail = 30.0);

/// Utility-side cost in dollars: main price on p0 plus the tariff on the
/// surplus, less retail revenue on the deficit.
double utility_cost(const SlotData& slot, const SlotRecord& rec, double s_base_mva,
                    double dt_s = kSlotSeconds, double price_retail = 30.0);

struct ViolationStats {
  /// Share of slots with any AC voltage outside [v_l, v_u].
  double fraction = 0.0;
  /// Lowest share of compliant slots over any rolling window.
  double worst_window_compliance = 1.0;
  std::size_t violating_slots = 0;
};

ViolationStats violation_stats(const Trajectory& traj, const LimitsProfile& limits,
                               std::size_t window = 20, double tol = 1e-6);

struct RunSummary {
  std::string mode;
  std::string model;
  std::size_t slots = 0;
  std::vector<double> time_avg_cost_series;
  double total_cost = 0.0;
  std::vector<double> apparent_residuals;
  std::vector<double> voltage_residuals;
  double max_feasibility_residual = 0.0;
  double violation_fraction = 0.0;
  double worst_window_compliance = 1.0;
  double total_curtailment_kwh = 0.0;
  std::vector<double> grid_avg_voltage_series;
  double max_exactness_gap = 0.0;
};

RunSummary summarize(const Trajectory& traj, const FeederTree& tree,
                     const MetricsOptions& options = {});

nlohmann::json to_json(const RunSummary& s);

/// Per-slot CSV writer. Rows are written and flushed as records arrive.
class CsvWriter {
 public:
  CsvWriter(std::ostream& out, const ControllerConfig& cfg, double s_base_mva,
            double dt_s = kSlotSeconds);

  static const std::vector<std::string>& columns();

  void row(const SlotRecord& rec);
  /// Marks the file as incomplete.
  void truncate(const std::string& reason);

 private:
  std::ostream& out_;
  std::string mode_;
  std::string model_;
  double s_base_;
  double dt_s_;
  double sum_ = 0.0;
  std::size_t count_ = 0;
};

}  // namespace eem
