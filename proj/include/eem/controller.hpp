#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "eem/feeder.hpp"
#include "eem/scenario.hpp"
#include "eem/subproblem.hpp"

namespace eem {

class ControllerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { eem, dem, no_control };

const char* to_string(Mode mode);

struct ControllerConfig {
  Mode mode = Mode::eem;
  GridModel model = GridModel::bfm;
  double step_size = 0.1;
  LimitsProfile limits;
  /// Number of slots to run; 0 runs the whole scenario.
  std::size_t horizon = 0;
  double v0 = 1.0;
  double price_scale = kDefaultPriceScale;

  void validate() const;
};

struct SlotRecord {
  std::size_t t = 0;
  Setpoints setpoints;
  std::vector<double> v_model;
  std::vector<double> v_ac;
  /// Substation injection from the power flow on the applied setpoints.
  double p0_ac = 0.0;
  double p0_model = 0.0;
  /// Realized sum of [p_g - p_c]_+ over buses, p.u.
  double surplus = 0.0;
  double price_main = 0.0;
  double price_fit = 0.0;
  /// pi_0 p0_ac + pi_f surplus, cents/kWh x p.u.
  double cost = 0.0;
  /// Multipliers after this slot's update (empty outside EEM).
  DualState dual;
  /// p_g_max - p_g per bus.
  std::vector<double> curtailment;
  double exactness_gap = 0.0;
  int solver_iters = 0;
};

struct Trajectory {
  ControllerConfig config;
  std::vector<SlotRecord> records;
  DualState terminal_dual;
};

/// Subgradient of the dual function at the subproblem minimizer, using the
/// model voltages: (p^2 + q^2 - s^2, v_l - v, v - v_u) per bus.
DualState subgradient(const FeederTree& tree, const SubproblemSolution& sol,
                      const LimitsProfile& limits);

/// Projected step [dual + mu * grad]_+ applied entrywise.
DualState dual_step(const DualState& dual, const DualState& grad, double mu);

DualState dual_update(const FeederTree& tree, const DualState& dual, const SubproblemSolution& sol,
                      const LimitsProfile& limits, double mu);

/// One EEM slot: solve at the incoming multipliers, then update them.
SlotRecord eem_step(const FeederTree& tree, const SlotData& slot, const DualState& dual,
                    const ControllerConfig& cfg);
/// Per-slot optimum with zero multipliers and tight limits.
SlotRecord dem_step(const FeederTree& tree, const SlotData& slot, const ControllerConfig& cfg);
/// Full available generation at unity power factor.
SlotRecord no_control_step(const FeederTree& tree, const SlotData& slot,
                           const ControllerConfig& cfg);

using RecordSink = std::function<void(const SlotRecord&)>;

/// Runs the configured mode over the slots in order. Each record is passed
/// to `sink` as soon as it is produced. Errors carry the slot index.
Trajectory run_horizon(const FeederTree& tree, std::span<const SlotData> slots,
                       const ControllerConfig& cfg, const RecordSink& sink = {});

/// sum over non-root buses of s_bar^2 + 2 (v_u_wide - v_l_wide)^2.
double compute_H(const FeederTree& tree, const LimitsProfile& limits);

}  // namespace eem
