#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "eem/acpf.hpp"
#include "eem/subproblem.hpp"

using namespace eem;

namespace {

// Two buses on a 1 kV / 1 MVA base so ohms equal per-unit values.
FeederTree two_bus(double r, double x, double pv_mw = 0.0) {
  return FeederTree::build(1.0, 1.0,
                           {{.id = 0, .root = true},
                            {.id = 1, .pv_mw = pv_mw, .s_mva = pv_mw, .s_bar_mva = 1.3 * pv_mw}},
                           {{0, 1, r, x}});
}

SlotData one_load(double pc, double qc, double pg = 0.0) {
  return {.t = 0, .p_c = {0.0, pc}, .q_c = {0.0, qc}, .pg_max = {0.0, pg}};
}

SubproblemOptions opts(GridModel model, Enforce enforce) {
  SubproblemOptions o;
  o.model = model;
  o.enforce = enforce;
  return o;
}

std::size_t dead_count(const FeederTree& tree, const SlotData& slot) {
  std::vector<bool> live(tree.num_buses(), false);
  for (std::size_t n = tree.num_buses(); n-- > 1;) {
    if (slot.p_c[n] != 0.0 || slot.q_c[n] != 0.0 || slot.pg_max[n] != 0.0 ||
        tree.has_inverter(n) || tree.shunt_pu(n) != 0.0)
      live[n] = true;
    if (live[n]) live[tree.parent(n)] = true;
  }
  return static_cast<std::size_t>(std::count(live.begin() + 1, live.end(), false));
}

}  // namespace

TEST_CASE("surplus partition") {
  SlotData s{.p_c = {0.0, 0.3, 0.4}, .q_c = {0.0, 0.0, 0.0}, .pg_max = {0.0, 0.5, 0.2}};
  CHECK(surplus_partition(s) == std::vector<std::size_t>{1});
  s.pg_max[2] = 0.4;
  CHECK(surplus_partition(s) == std::vector<std::size_t>{1, 2});
  SlotData zero{.p_c = {0.0, 0.0, 0.0}, .q_c = {0.0, 0.0, 0.0}, .pg_max = {0.0, 0.0, 0.0}};
  CHECK(surplus_partition(zero) == std::vector<std::size_t>{1, 2});
}

TEST_CASE("problem sizes on SCE-56") {
  const auto tree = builtin_sce56();
  const auto slot = gen_synthetic(tree, {.n_slots = 1})[0];
  const auto dual = DualState::zeros(tree.num_buses());
  const LimitsProfile lim;
  const std::size_t nt = surplus_partition(slot).size();
  const std::size_t dg = tree.inverter_buses().size();
  const std::size_t dead = dead_count(tree, slot);
  CHECK(dead > 0);

  const auto bfm = build_bfm(tree, slot, dual, lim, {});
  CHECK(bfm.n_vars == 6 * 55 + nt);
  CHECK(bfm.equalities.size() == 3 * 55);
  CHECK(bfm.cones.size() == 55 - dead + dg);
  CHECK(bfm.nonneg.size() == nt);

  const auto ldf = build_ldf(tree, slot, dual, lim, opts(GridModel::ldf, Enforce::wide));
  CHECK(ldf.n_vars == 5 * 55 + nt);
  CHECK(ldf.equalities.size() == 3 * 55);
  CHECK(ldf.cones.size() == dg);
}

TEST_CASE("two-bus linearized voltage") {
  const auto tree = two_bus(0.01, 0.01);
  const auto sol = solve_slot(tree, one_load(0.1, 0.05), DualState::zeros(2), {},
                              opts(GridModel::ldf, Enforce::wide));
  CHECK(std::abs(sol.v_model[1] - 0.997) <= 1e-8);
  CHECK(sol.setpoints.p_g[1] == 0.0);
  CHECK(std::abs(sol.P[1] - 0.1) <= 1e-8);
}

TEST_CASE("two-bus branch flow matches the scalar equations") {
  const double r = 0.01, x = 0.02, pc = 0.3, qc = 0.1;
  const auto tree = two_bus(r, x);
  const auto sol = solve_slot(tree, one_load(pc, qc), DualState::zeros(2), {},
                              opts(GridModel::bfm, Enforce::wide));
  double P = pc, Q = qc, ell = 0.0, v = 1.0;
  for (int k = 0; k < 200; ++k) {
    ell = P * P + Q * Q;
    P = pc + r * ell;
    Q = qc + x * ell;
    v = 1.0 - 2.0 * (r * P + x * Q) + (r * r + x * x) * ell;
  }
  CHECK(std::abs(sol.P[1] - P) <= 1e-7);
  CHECK(std::abs(sol.Q[1] - Q) <= 1e-7);
  CHECK(std::abs(sol.ell[1] - ell) <= 1e-7);
  CHECK(std::abs(sol.v_model[1] - v) <= 1e-7);
  CHECK(sol.exactness_gap <= 1e-5);
  // p0 = load + loss; no generation means cost is pi_0 p0.
  CHECK(sol.cost_model == doctest::Approx(30.0 * P).epsilon(1e-7));
}

TEST_CASE("lossless limit") {
  const auto tree = two_bus(0.0, 0.0);
  for (const auto model : {GridModel::bfm, GridModel::ldf}) {
    const auto sol = solve_slot(tree, one_load(0.2, 0.1), DualState::zeros(2), {},
                                opts(model, Enforce::wide));
    CHECK(std::abs(sol.v_model[1] - 1.0) <= 1e-7);
    CHECK(std::abs(sol.p0_model - 0.2) <= 1e-7);
  }
}

TEST_CASE("surplus is exported, not curtailed, at zero duals") {
  // Each exported unit saves pi_0 and costs pi_f < pi_0.
  const auto tree = two_bus(0.01, 0.01, 0.5);
  const auto sol = solve_slot(tree, one_load(0.1, 0.0, 0.4), DualState::zeros(2), {},
                              opts(GridModel::bfm, Enforce::wide));
  CHECK(sol.setpoints.p_g[1] == doctest::Approx(0.4).epsilon(1e-6));
  CHECK(sol.surplus[1] == doctest::Approx(0.3).epsilon(1e-6));
}

TEST_CASE("SCE-56 slots: constraints, ordering and exactness") {
  const auto tree = builtin_sce56();
  const auto slots = gen_synthetic(tree, {.seed = 7, .n_slots = 6});
  const LimitsProfile lim;
  const auto dual = DualState::zeros(tree.num_buses());
  for (const auto& slot : slots) {
    const auto wide = solve_slot(tree, slot, dual, lim, opts(GridModel::bfm, Enforce::wide));
    const auto tight = solve_slot(tree, slot, dual, lim, opts(GridModel::bfm, Enforce::tight));
    CHECK(wide.dual_objective <= tight.dual_objective + 1e-9);
    CHECK(wide.exactness_gap <= 1e-5);
    CHECK(tight.exactness_gap <= 1e-5);
    CHECK(wide.exactness_gap >= 0.0);

    // Zero duals: the objective is the slot cost in objective units.
    CHECK(tight.dual_objective ==
          doctest::Approx(kDefaultPriceScale * tight.cost_model).epsilon(1e-7));

    const auto surplus = surplus_partition(slot);
    for (std::size_t n = 1; n < tree.num_buses(); ++n) {
      const double pg = tight.setpoints.p_g[n], qg = tight.setpoints.q_g[n];
      if (std::find(surplus.begin(), surplus.end(), n) != surplus.end()) {
        CHECK(pg >= -1e-9);
        CHECK(pg <= slot.pg_max[n] + 1e-9);
      } else {
        CHECK(pg == slot.pg_max[n]);
      }
      if (!tree.has_inverter(n)) CHECK(qg == 0.0);
      CHECK(std::hypot(pg, qg) <= tree.s_pu(n) + 1e-9);
      CHECK(std::hypot(wide.setpoints.p_g[n], wide.setpoints.q_g[n]) <=
            lim.s_bar(tree, n) + 1e-9);
      CHECK(tight.v_model[n] >= lim.v_l - 1e-9);
      CHECK(tight.v_model[n] <= lim.v_u + 1e-9);
      CHECK(wide.v_model[n] >= lim.v_l_wide - 1e-9);
      CHECK(wide.v_model[n] <= lim.v_u_wide + 1e-9);
    }
  }
}

TEST_CASE("exact branch-flow solution reproduced by the sweep") {
  const auto tree = builtin_sce56();
  const auto slots = gen_synthetic(tree, {.seed = 3, .n_slots = 3});
  for (const auto& slot : slots) {
    const auto sol = solve_slot(tree, slot, DualState::zeros(tree.num_buses()), {},
                                opts(GridModel::bfm, Enforce::wide));
    std::vector<double> p, q;
    net_injections(tree, slot, sol.setpoints, p, q);
    const auto pf = solve_radial_acpf(tree, p, q, 1.0);
    double worst = 0.0;
    for (std::size_t n = 1; n < tree.num_buses(); ++n)
      worst = std::max({worst, std::abs(pf.v[n] - sol.v_model[n]), std::abs(pf.P[n] - sol.P[n]),
                        std::abs(pf.Q[n] - sol.Q[n]), std::abs(pf.ell[n] - sol.ell[n])});
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("duals shift the optimum") {
  const auto tree = builtin_sce56();
  const auto slot = gen_synthetic(tree, {.n_slots = 1})[0];
  auto dual = DualState::zeros(tree.num_buses());
  const auto base = solve_slot(tree, slot, dual, {}, opts(GridModel::bfm, Enforce::wide));
  // A large upper-voltage price pulls the highest voltage down.
  std::fill(dual.xi_upper.begin(), dual.xi_upper.end(), 1e-2);
  const auto pushed = solve_slot(tree, slot, dual, {}, opts(GridModel::bfm, Enforce::wide));
  CHECK(*std::max_element(pushed.v_model.begin() + 1, pushed.v_model.end()) <
        *std::max_element(base.v_model.begin() + 1, base.v_model.end()));
}

TEST_CASE("exactness gap measure") {
  const auto tree = two_bus(0.01, 0.01);
  CHECK(exactness_gap(tree, {0, 0.3}, {0, 0.4}, {1, 1}, {0, 0.25}, 1.0) ==
        doctest::Approx(0.0));
  CHECK(exactness_gap(tree, {0, 0.3}, {0, 0.4}, {1, 1}, {0, 0.5}, 1.0) ==
        doctest::Approx(0.5));
  // Below the current floor the line is skipped.
  CHECK(exactness_gap(tree, {0, 0.0}, {0, 0.0}, {1, 1}, {0, 1e-9}, 1.0) == 0.0);
}

TEST_CASE("input checks") {
  const auto tree = two_bus(0.01, 0.01);
  auto dual = DualState::zeros(2);
  CHECK_THROWS_AS(solve_slot(tree, one_load(0.1, 0.0), DualState::zeros(3), {}, {}),
                  SubproblemError);
  dual.nu[1] = -1.0;
  CHECK_THROWS_AS(solve_slot(tree, one_load(0.1, 0.0), dual, {}, {}), SubproblemError);
  LimitsProfile bad;
  bad.v_l_wide = 0.97;
  CHECK_THROWS_AS(solve_slot(tree, one_load(0.1, 0.0), DualState::zeros(2), bad, {}),
                  SubproblemError);
  // A load the line cannot carry above the voltage floor.
  CHECK_THROWS_WITH_AS(solve_slot(tree, one_load(5.0, 5.0), DualState::zeros(2), {},
                                  opts(GridModel::bfm, Enforce::tight)),
                       doctest::Contains("infeasible at slot 0"), SubproblemError);
}
