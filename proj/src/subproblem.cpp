#include "eem/subproblem.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace eem {

const char* to_string(GridModel model) { return model == GridModel::bfm ? "BFM" : "LDF"; }

void LimitsProfile::validate() const {
  if (!(v_l_wide <= v_l && v_l < v_u && v_u <= v_u_wide && v_l_wide > 0.0))
    throw SubproblemError("voltage limits must satisfy 0 < v_l_wide <= v_l < v_u <= v_u_wide");
  if (overload_factor != 0.0 && !(overload_factor >= 1.0))
    throw SubproblemError("overload factor must be at least 1");
}

double LimitsProfile::s_bar(const FeederTree& tree, std::size_t n) const {
  return overload_factor > 0.0 ? overload_factor * tree.s_pu(n) : tree.s_bar_pu(n);
}

DualState DualState::zeros(std::size_t num_buses) {
  return {std::vector<double>(num_buses, 0.0), std::vector<double>(num_buses, 0.0),
          std::vector<double>(num_buses, 0.0)};
}

double DualState::norm() const {
  double s = 0.0;
  for (const auto* v : {&nu, &xi_lower, &xi_upper})
    for (const double x : *v) s += x * x;
  return std::sqrt(s);
}

std::vector<std::size_t> surplus_partition(const SlotData& slot) {
  std::vector<std::size_t> out;
  for (std::size_t n = 1; n < slot.p_c.size(); ++n)
    if (slot.pg_max[n] >= slot.p_c[n]) out.push_back(n);
  return out;
}

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

void check_inputs(const FeederTree& tree, const SlotData& slot, const DualState& dual,
                  const LimitsProfile& limits) {
  const auto n = tree.num_buses();
  if (slot.p_c.size() != n || slot.q_c.size() != n || slot.pg_max.size() != n)
    throw SubproblemError("slot vectors do not match the feeder size");
  if (dual.nu.size() != n || dual.xi_lower.size() != n || dual.xi_upper.size() != n)
    throw SubproblemError("dual state does not match the feeder size");
  for (std::size_t b = 0; b < n; ++b)
    if (dual.nu[b] < 0.0 || dual.xi_lower[b] < 0.0 || dual.xi_upper[b] < 0.0)
      throw SubproblemError("dual state must be nonnegative");
  limits.validate();
}

// Lines whose downstream subtree has no load, generation or shunt in this
// slot carry no current.
std::vector<bool> dead_lines(const FeederTree& tree, const SlotData& slot) {
  std::vector<bool> dead(tree.num_buses(), true);
  dead[0] = false;
  for (std::size_t n = tree.num_buses(); n-- > 1;) {
    if (slot.p_c[n] != 0.0 || slot.q_c[n] != 0.0 || slot.pg_max[n] != 0.0 ||
        tree.has_inverter(n) || tree.shunt_pu(n) != 0.0)
      dead[n] = false;
    if (!dead[n]) dead[tree.parent(n)] = false;
  }
  return dead;
}

// Rough squared current per line from the subtree totals. Only used to
// balance the two halves of the rotated cone.
std::vector<double> current_scale(const FeederTree& tree, const SlotData& slot) {
  const std::size_t nb = tree.num_buses();
  std::vector<double> p(slot.p_c), g(slot.pg_max), q(nb), out(nb, 1.0);
  for (std::size_t n = 0; n < nb; ++n) q[n] = slot.q_c[n] - tree.shunt_pu(n);
  for (std::size_t n = nb; n-- > 1;) {
    out[n] = std::max(1e-6, std::pow(std::max(p[n], g[n]), 2) + q[n] * q[n]);
    p[tree.parent(n)] += p[n];
    g[tree.parent(n)] += g[n];
    q[tree.parent(n)] += q[n];
  }
  return out;
}

ConicProblem build(const FeederTree& tree, const SlotData& slot, const DualState& dual,
                   const LimitsProfile& limits, const SubproblemOptions& opt, bool bfm) {
  check_inputs(tree, slot, dual, limits);
  SubproblemLayout lay{tree.num_lines(), bfm, surplus_partition(slot)};
  const std::size_t N = lay.lines;
  ConicProblem prob(lay.size());
  const double a0 = opt.price_scale * slot.price_main;
  const double af = opt.price_scale * slot.price_fit;
  const bool tight = opt.enforce == Enforce::tight;
  const double v_min = tight ? limits.v_l : limits.v_l_wide;
  const double v_max = tight ? limits.v_u : limits.v_u_wide;

  std::vector<long> surplus_slot(N + 1, -1);
  for (std::size_t j = 0; j < lay.surplus.size(); ++j)
    surplus_slot[lay.surplus[j]] = static_cast<long>(j);

  const auto dead = dead_lines(tree, slot);
  const auto ell_scale = current_scale(tree, slot);
  double offset = 0.0;
  for (std::size_t n = 1; n <= N; ++n) {
    const double r = tree.r(n), x = tree.x(n);
    const std::size_t par = tree.parent(n);
    offset += a0 * slot.p_c[n];

    // Generation.
    prob.c[lay.pg(n)] = -a0;
    if (surplus_slot[n] >= 0) {
      prob.lb[lay.pg(n)] = 0.0;
      prob.ub[lay.pg(n)] = slot.pg_max[n];
      const auto t = lay.t(static_cast<std::size_t>(surplus_slot[n]));
      prob.c[t] = af;
      prob.lb[t] = 0.0;
      prob.nonneg.push_back({{{t, 1.0}, {lay.pg(n), -1.0}}, slot.p_c[n]});
    } else {
      prob.lb[lay.pg(n)] = prob.ub[lay.pg(n)] = slot.pg_max[n];
    }
    if (tree.has_inverter(n)) {
      prob.h_diag[lay.pg(n)] = dual.nu[n];
      prob.h_diag[lay.qg(n)] = dual.nu[n];
      prob.cones.push_back({{{}, tight ? tree.s_pu(n) : limits.s_bar(tree, n)},
                            {{{{lay.pg(n), 1.0}}, 0.0}, {{{lay.qg(n), 1.0}}, 0.0}}});
      offset -= dual.nu[n] * tree.s_pu(n) * tree.s_pu(n);
    } else {
      prob.lb[lay.qg(n)] = prob.ub[lay.qg(n)] = 0.0;
    }

    // Voltage.
    prob.lb[lay.v(n)] = v_min;
    prob.ub[lay.v(n)] = v_max;
    prob.c[lay.v(n)] = dual.xi_upper[n] - dual.xi_lower[n];
    offset += dual.xi_lower[n] * limits.v_l - dual.xi_upper[n] * limits.v_u;

    // Nodal balance.
    LinearRow rp{{{lay.P(n), 1.0}, {lay.pg(n), 1.0}}, slot.p_c[n]};
    LinearRow rq{{{lay.Q(n), 1.0}, {lay.qg(n), 1.0}}, slot.q_c[n] - tree.shunt_pu(n)};
    for (const auto k : tree.children(n)) {
      rp.terms.emplace_back(lay.P(k), -1.0);
      rq.terms.emplace_back(lay.Q(k), -1.0);
    }
    LinearRow rv{{{lay.v(n), 1.0}, {lay.P(n), 2.0 * r}, {lay.Q(n), 2.0 * x}}, 0.0};
    if (par == 0) rv.rhs = opt.v0;
    else rv.terms.emplace_back(lay.v(par), -1.0);

    if (dead[n]) {
      for (const auto i : {lay.P(n), lay.Q(n)}) prob.lb[i] = prob.ub[i] = 0.0;
      if (bfm) prob.lb[lay.ell(n)] = prob.ub[lay.ell(n)] = 0.0;
    } else if (bfm) {
      const auto l = lay.ell(n);
      rp.terms.emplace_back(l, -r);
      rq.terms.emplace_back(l, -x);
      rv.terms.emplace_back(l, -(r * r + x * x));
      prob.c[l] = a0 * r;
      // ||(2P, 2Q, k v_parent - ell / k)|| <= k v_parent + ell / k, which is
      // P^2 + Q^2 <= v_parent ell for any k > 0.
      const double k = std::sqrt(ell_scale[n]);
      AffineExpr head{{{l, 1.0 / k}}, 0.0};
      AffineExpr diff{{{l, -1.0 / k}}, 0.0};
      if (par == 0) {
        head.constant = k * opt.v0;
        diff.constant = k * opt.v0;
      } else {
        head.terms.emplace_back(lay.v(par), k);
        diff.terms.emplace_back(lay.v(par), k);
      }
      prob.cones.push_back(
          {head, {{{{lay.P(n), 2.0}}, 0.0}, {{{lay.Q(n), 2.0}}, 0.0}, diff}});
    } else {
      prob.h_diag[lay.P(n)] = a0 * r / opt.v0;
      prob.h_diag[lay.Q(n)] = a0 * r / opt.v0;
    }
    prob.equalities.push_back(std::move(rp));
    prob.equalities.push_back(std::move(rq));
    prob.equalities.push_back(std::move(rv));
  }
  prob.offset = offset;
  return prob;
}

}  // namespace

ConicProblem build_bfm(const FeederTree& tree, const SlotData& slot, const DualState& dual,
                       const LimitsProfile& limits, const SubproblemOptions& options) {
  return build(tree, slot, dual, limits, options, true);
}

ConicProblem build_ldf(const FeederTree& tree, const SlotData& slot, const DualState& dual,
                       const LimitsProfile& limits, const SubproblemOptions& options) {
  return build(tree, slot, dual, limits, options, false);
}

double exactness_gap(const FeederTree& tree, const std::vector<double>& P,
                     const std::vector<double>& Q, const std::vector<double>& v,
                     const std::vector<double>& ell, double v0, double floor) {
  double gap = 0.0;
  for (std::size_t n = 1; n < tree.num_buses(); ++n) {
    if (ell[n] < floor) continue;
    const double va = tree.parent(n) == 0 ? v0 : v[tree.parent(n)];
    gap = std::max(gap, 1.0 - (P[n] * P[n] + Q[n] * Q[n]) / (va * ell[n]));
  }
  return gap;
}

SubproblemSolution solve_slot(const FeederTree& tree, const SlotData& slot, const DualState& dual,
                              const LimitsProfile& limits, const SubproblemOptions& options) {
  const bool bfm = options.model == GridModel::bfm;
  const auto prob = bfm ? build_bfm(tree, slot, dual, limits, options)
                        : build_ldf(tree, slot, dual, limits, options);
  const auto res = solve(prob, options.solver);
  const auto where = " at slot " + std::to_string(slot.t) + " (" + to_string(options.model) + ")";
  if (res.status == SolveStatus::infeasible)
    throw SubproblemError("subproblem infeasible" + where);
  const bool acceptable = res.status == SolveStatus::max_iter &&
                          std::max({res.primal_residual, res.dual_residual, res.gap}) <=
                              options.acceptable_tol;
  if (res.status != SolveStatus::optimal && !acceptable)
    throw SubproblemError(std::string("subproblem not solved: ") + to_string(res.status) + where +
                          ", residuals " + sci(res.primal_residual) + " / " +
                          sci(res.dual_residual) + ", gap " + sci(res.gap));

  const std::size_t nb = tree.num_buses();
  SubproblemLayout lay{tree.num_lines(), bfm, surplus_partition(slot)};
  SubproblemSolution out;
  out.setpoints.p_g.assign(nb, 0.0);
  out.setpoints.q_g.assign(nb, 0.0);
  out.P.assign(nb, 0.0);
  out.Q.assign(nb, 0.0);
  out.v_model.assign(nb, options.v0);
  out.ell.assign(nb, 0.0);
  out.surplus.assign(nb, 0.0);
  for (std::size_t n = 1; n < nb; ++n) {
    out.setpoints.p_g[n] = res.z[lay.pg(n)];
    out.setpoints.q_g[n] = res.z[lay.qg(n)];
    out.P[n] = res.z[lay.P(n)];
    out.Q[n] = res.z[lay.Q(n)];
    out.v_model[n] = res.z[lay.v(n)];
    if (bfm) out.ell[n] = res.z[lay.ell(n)];
  }
  for (std::size_t j = 0; j < lay.surplus.size(); ++j)
    out.surplus[lay.surplus[j]] = res.z[lay.t(j)];
  for (const auto k : tree.children(0)) out.p0_model += out.P[k];
  double fit = 0.0;
  for (const double t : out.surplus) fit += t;
  out.cost_model = slot.price_main * out.p0_model + slot.price_fit * fit;
  out.dual_objective = res.objective;
  out.exactness_gap = bfm ? exactness_gap(tree, out.P, out.Q, out.v_model, out.ell, options.v0)
                          : 0.0;
  out.iterations = res.iterations;
  return out;
}

void net_injections(const FeederTree& tree, const SlotData& slot, const Setpoints& sp,
                    std::vector<double>& p, std::vector<double>& q) {
  const std::size_t nb = tree.num_buses();
  p.assign(nb, 0.0);
  q.assign(nb, 0.0);
  for (std::size_t n = 1; n < nb; ++n) {
    p[n] = sp.p_g[n] - slot.p_c[n];
    q[n] = sp.q_g[n] + tree.shunt_pu(n) - slot.q_c[n];
  }
}

}  // namespace eem
