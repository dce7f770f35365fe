#include "eem/controller.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "eem/acpf.hpp"

namespace eem {

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::eem: return "EEM";
    case Mode::dem: return "DEM";
    case Mode::no_control: return "NoControl";
  }
  return "unknown";
}

void ControllerConfig::validate() const {
  if (mode == Mode::eem && !(step_size > 0.0))
    throw ControllerError("step size must be positive");
  if (!(v0 > 0.0)) throw ControllerError("v0 must be positive");
  if (!(price_scale > 0.0)) throw ControllerError("price scale must be positive");
  try {
    limits.validate();
  } catch (const SubproblemError& e) {
    throw ControllerError(e.what());
  }
}

DualState subgradient(const FeederTree& tree, const SubproblemSolution& sol,
                      const LimitsProfile& limits) {
  const std::size_t nb = tree.num_buses();
  auto g = DualState::zeros(nb);
  const auto& sp = sol.setpoints;
  for (std::size_t n = 1; n < nb; ++n) {
    if (tree.has_inverter(n))
      g.nu[n] = sp.p_g[n] * sp.p_g[n] + sp.q_g[n] * sp.q_g[n] - tree.s_pu(n) * tree.s_pu(n);
    g.xi_lower[n] = limits.v_l - sol.v_model[n];
    g.xi_upper[n] = sol.v_model[n] - limits.v_u;
  }
  return g;
}

DualState dual_step(const DualState& dual, const DualState& grad, double mu) {
  DualState out = dual;
  const auto step = [mu](std::vector<double>& x, const std::vector<double>& g) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::max(0.0, x[i] + mu * g[i]);
  };
  step(out.nu, grad.nu);
  step(out.xi_lower, grad.xi_lower);
  step(out.xi_upper, grad.xi_upper);
  return out;
}

DualState dual_update(const FeederTree& tree, const DualState& dual, const SubproblemSolution& sol,
                      const LimitsProfile& limits, double mu) {
  return dual_step(dual, subgradient(tree, sol, limits), mu);
}

namespace {

// Applies the setpoints to the power flow and fills the realized quantities.
SlotRecord realize(const FeederTree& tree, const SlotData& slot, Setpoints sp, double v0) {
  SlotRecord rec;
  rec.t = slot.t;
  std::vector<double> p, q;
  net_injections(tree, slot, sp, p, q);
  const auto pf = solve_radial_acpf(tree, p, q, v0);
  rec.v_ac = pf.v;
  rec.p0_ac = pf.p0;
  rec.curtailment.assign(tree.num_buses(), 0.0);
  for (std::size_t n = 1; n < tree.num_buses(); ++n) {
    rec.surplus += std::max(0.0, sp.p_g[n] - slot.p_c[n]);
    rec.curtailment[n] = std::max(0.0, slot.pg_max[n] - sp.p_g[n]);
  }
  rec.price_main = slot.price_main;
  rec.price_fit = slot.price_fit;
  rec.cost = slot.price_main * rec.p0_ac + slot.price_fit * rec.surplus;
  rec.setpoints = std::move(sp);
  return rec;
}

SubproblemOptions subproblem_options(const ControllerConfig& cfg, Enforce enforce) {
  SubproblemOptions o;
  o.model = cfg.model;
  o.enforce = enforce;
  o.v0 = cfg.v0;
  o.price_scale = cfg.price_scale;
  return o;
}

SlotRecord from_solution(const FeederTree& tree, const SlotData& slot, const SubproblemSolution& sol,
                         double v0) {
  auto rec = realize(tree, slot, sol.setpoints, v0);
  rec.v_model = sol.v_model;
  rec.p0_model = sol.p0_model;
  rec.exactness_gap = sol.exactness_gap;
  rec.solver_iters = sol.iterations;
  return rec;
}

}  // namespace

SlotRecord eem_step(const FeederTree& tree, const SlotData& slot, const DualState& dual,
                    const ControllerConfig& cfg) {
  const auto sol =
      solve_slot(tree, slot, dual, cfg.limits, subproblem_options(cfg, Enforce::wide));
  auto rec = from_solution(tree, slot, sol, cfg.v0);
  rec.dual = dual_update(tree, dual, sol, cfg.limits, cfg.step_size);
  return rec;
}

SlotRecord dem_step(const FeederTree& tree, const SlotData& slot, const ControllerConfig& cfg) {
  const auto sol = solve_slot(tree, slot, DualState::zeros(tree.num_buses()), cfg.limits,
                              subproblem_options(cfg, Enforce::tight));
  return from_solution(tree, slot, sol, cfg.v0);
}

SlotRecord no_control_step(const FeederTree& tree, const SlotData& slot,
                           const ControllerConfig& cfg) {
  Setpoints sp{slot.pg_max, std::vector<double>(tree.num_buses(), 0.0)};
  auto rec = realize(tree, slot, std::move(sp), cfg.v0);
  rec.v_model = rec.v_ac;
  rec.p0_model = rec.p0_ac;
  return rec;
}

Trajectory run_horizon(const FeederTree& tree, std::span<const SlotData> slots,
                       const ControllerConfig& cfg, const RecordSink& sink) {
  cfg.validate();
  const std::size_t horizon = cfg.horizon ? cfg.horizon : slots.size();
  if (horizon == 0) throw ControllerError("empty scenario");
  if (slots.size() < horizon)
    throw ControllerError("scenario has " + std::to_string(slots.size()) +
                          " slots, horizon needs " + std::to_string(horizon));

  Trajectory traj;
  traj.config = cfg;
  traj.records.reserve(horizon);
  DualState dual = DualState::zeros(tree.num_buses());
  for (std::size_t k = 0; k < horizon; ++k) {
    const auto& slot = slots[k];
    SlotRecord rec;
    try {
      switch (cfg.mode) {
        case Mode::eem:
          rec = eem_step(tree, slot, dual, cfg);
          dual = rec.dual;
          break;
        case Mode::dem: rec = dem_step(tree, slot, cfg); break;
        case Mode::no_control: rec = no_control_step(tree, slot, cfg); break;
      }
    } catch (const ControllerError&) {
      throw;
    } catch (const std::exception& e) {
      throw ControllerError(std::string(to_string(cfg.mode)) + " failed at slot " +
                            std::to_string(slot.t) + ": " + e.what());
    }
    if (sink) sink(rec);
    traj.records.push_back(std::move(rec));
  }
  if (cfg.mode == Mode::eem) traj.terminal_dual = dual;
  return traj;
}

double compute_H(const FeederTree& tree, const LimitsProfile& limits) {
  const double dv = limits.v_u_wide - limits.v_l_wide;
  double h = 0.0;
  for (std::size_t n = 1; n < tree.num_buses(); ++n) {
    const double sb = limits.s_bar(tree, n);
    h += sb * sb + 2.0 * dv * dv;
  }
  return h;
}

}  // namespace eem
