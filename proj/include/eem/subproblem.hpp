#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "eem/conic.hpp"
#include "eem/feeder.hpp"
#include "eem/scenario.hpp"

namespace eem {

class SubproblemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class GridModel { bfm, ldf };

const char* to_string(GridModel model);

/// Squared-voltage limits (p.u.^2) and inverter overload ratings.
struct LimitsProfile {
  double v_l = 0.9604;
  double v_u = 1.0404;
  double v_l_wide = 0.9409;
  double v_u_wide = 1.0609;
  /// Overload rating as a multiple of the inverter nameplate; 0 keeps the
  /// per-bus s_bar of the feeder file.
  double overload_factor = 0.0;

  void validate() const;
  double s_bar(const FeederTree& tree, std::size_t n) const;
};

/// Which of the two limit sets bounds the instantaneous subproblem.
enum class Enforce { tight, wide };

struct DualState {
  std::vector<double> nu;
  std::vector<double> xi_lower;
  std::vector<double> xi_upper;

  static DualState zeros(std::size_t num_buses);
  double norm() const;
};

struct Setpoints {
  std::vector<double> p_g;
  std::vector<double> q_g;
};

/// Conversion from (cents/kWh) x (p.u. power) to subproblem objective
/// units. The default expresses cost in dollars per 30-second slot and per
/// kVA of base power, which keeps the multipliers of the voltage and
/// inverter constraints at the scale of their p.u. constraint residuals.
inline constexpr double kDefaultPriceScale = 1.0 / 12000.0;

struct SubproblemOptions {
  GridModel model = GridModel::bfm;
  Enforce enforce = Enforce::wide;
  double v0 = 1.0;
  double price_scale = kDefaultPriceScale;
  SolverOptions solver{.tol = 1e-10, .max_iter = 200};
  /// A solve that stalls short of solver.tol is still used when its best
  /// iterate meets this tolerance.
  double acceptable_tol = 1e-8;
};

struct SubproblemSolution {
  Setpoints setpoints;
  std::vector<double> P;
  std::vector<double> Q;
  std::vector<double> v_model;
  std::vector<double> ell;  // BFM only; zero for LDF
  /// Surplus epigraph values, indexed by bus (zero off the surplus set).
  std::vector<double> surplus;
  double p0_model = 0.0;
  /// pi_0 p_0 + pi_f sum(surplus) in cents/kWh x p.u.
  double cost_model = 0.0;
  /// Lagrangian value of the slot in objective units.
  double dual_objective = 0.0;
  double exactness_gap = 0.0;
  int iterations = 0;
};

/// Canonical indices n >= 1 with pg_max[n] >= p_c[n].
std::vector<std::size_t> surplus_partition(const SlotData& slot);

/// Variable layout shared by both builders.
struct SubproblemLayout {
  std::size_t lines = 0;
  bool has_ell = false;
  std::vector<std::size_t> surplus;

  std::size_t pg(std::size_t n) const { return n - 1; }
  std::size_t qg(std::size_t n) const { return lines + n - 1; }
  std::size_t P(std::size_t n) const { return 2 * lines + n - 1; }
  std::size_t Q(std::size_t n) const { return 3 * lines + n - 1; }
  std::size_t v(std::size_t n) const { return 4 * lines + n - 1; }
  std::size_t ell(std::size_t n) const { return 5 * lines + n - 1; }
  std::size_t t(std::size_t j) const { return (has_ell ? 6 : 5) * lines + j; }
  std::size_t size() const { return t(surplus.size()); }
};

ConicProblem build_bfm(const FeederTree& tree, const SlotData& slot, const DualState& dual,
                       const LimitsProfile& limits, const SubproblemOptions& options);
ConicProblem build_ldf(const FeederTree& tree, const SlotData& slot, const DualState& dual,
                       const LimitsProfile& limits, const SubproblemOptions& options);

SubproblemSolution solve_slot(const FeederTree& tree, const SlotData& slot, const DualState& dual,
                              const LimitsProfile& limits, const SubproblemOptions& options);

/// Largest 1 - (P^2 + Q^2) / (v_parent * ell) over lines with ell >= floor.
double exactness_gap(const FeederTree& tree, const std::vector<double>& P,
                     const std::vector<double>& Q, const std::vector<double>& v,
                     const std::vector<double>& ell, double v0, double floor = 1e-8);

/// Net bus injections for the power flow: p = p_g - p_c and
/// q = q_g + shunt - q_c.
void net_injections(const FeederTree& tree, const SlotData& slot, const Setpoints& sp,
                    std::vector<double>& p, std::vector<double>& q);

}  // namespace eem
