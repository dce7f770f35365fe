#include <doctest.h>

#include <cmath>
#include <sstream>
#include <string>

#include "eem/metrics.hpp"

using namespace eem;

namespace {

FeederTree two_bus(double pv_mw = 1.0) {
  return FeederTree::build(1.0, 1.0,
                           {{.id = 0, .root = true},
                            {.id = 1, .pv_mw = pv_mw, .s_mva = pv_mw, .s_bar_mva = 1.3 * pv_mw}},
                           {{0, 1, 0.01, 0.01}});
}

SlotRecord record(double p0, double surplus, double v, double pg = 0.0, double qg = 0.0) {
  SlotRecord r;
  r.p0_ac = p0;
  r.surplus = surplus;
  r.price_main = 30.0;
  r.price_fit = 15.0;
  r.cost = r.price_main * p0 + r.price_fit * surplus;
  r.v_ac = r.v_model = {1.0, v};
  r.setpoints = {{0.0, pg}, {0.0, qg}};
  r.curtailment = {0.0, 0.0};
  return r;
}

Trajectory trajectory(std::vector<SlotRecord> recs) {
  Trajectory t;
  t.records = std::move(recs);
  return t;
}

}  // namespace

TEST_CASE("slot cost conversion") {
  CHECK(slot_cost(record(1.0, 0.0, 1.0), 1.0) == doctest::Approx(2.5));
  CHECK(slot_cost(record(0.0, 0.0, 1.0), 1.0) == 0.0);
  auto rev = record(-0.4, 0.0, 1.0);
  rev.price_fit = 0.0;
  CHECK(slot_cost(rev, 1.0) < 0.0);
  // Scales with base power and slot length.
  CHECK(slot_cost(record(1.0, 0.0, 1.0), 2.0, 60.0) == doctest::Approx(10.0));
}

TEST_CASE("running means") {
  const std::vector<double> x{2.0, 4.0};
  CHECK(prefix_mean(x) == std::vector<double>{2.0, 3.0});
  const std::vector<double> c(5, 1.5);
  for (double m : prefix_mean(c)) CHECK(m == 1.5);

  // 2.50 per 30 s slot is 300 $/h.
  const auto traj = trajectory({record(1.0, 0.0, 1.0), record(0.0, 0.0, 1.0)});
  const auto series = time_avg_cost(traj, 1.0);
  CHECK(series[0] == doctest::Approx(300.0));
  CHECK(series[1] == doctest::Approx(150.0));
}

TEST_CASE("ergodic feasibility residuals") {
  const auto tree = two_bus();
  const LimitsProfile lim;
  std::vector<SlotRecord> recs;
  for (int k = 0; k < 4; ++k) recs.push_back(record(0.0, 0.0, lim.v_u + 0.01));
  const auto f = ergodic_feasibility(trajectory(recs), tree, lim);
  REQUIRE(f.voltage.size() == 4);
  for (const auto& row : f.voltage) CHECK(row[1] == doctest::Approx(0.01));

  // Alternating over- and under-rating averages to compliance.
  recs = {record(0.0, 0.0, 1.0, 1.2, 0.0), record(0.0, 0.0, 1.0, 0.0, 0.0)};
  const auto g = ergodic_feasibility(trajectory(recs), tree, lim);
  CHECK(g.apparent[0][1] == doctest::Approx(0.44));
  CHECK(g.apparent[1][1] == 0.0);
  CHECK(g.final_max() == 0.0);
}

TEST_CASE("customer and utility costs") {
  const auto tree = two_bus();
  SlotData slot{.p_c = {0.0, 0.2}, .q_c = {0.0, 0.0}, .pg_max = {0.0, 0.5}};
  CHECK(customer_cost(slot, {{0.0, 0.2}, {0.0, 0.0}}, 1.0)[1] == 0.0);
  CHECK(customer_cost(slot, {{0.0, 0.3}, {0.0, 0.0}}, 1.0)[1] == doctest::Approx(-0.125));
  CHECK(customer_cost(slot, {{0.0, 0.1}, {0.0, 0.0}}, 1.0)[1] == doctest::Approx(0.25));

  // No surplus, no deficit, no import.
  auto rec = record(0.0, 0.0, 1.0, 0.2);
  CHECK(utility_cost(slot, rec, 1.0) == doctest::Approx(0.0));
  // Pure load: main price on the import less retail revenue on the load.
  rec = record(0.2, 0.0, 1.0, 0.0);
  CHECK(utility_cost(slot, rec, 1.0) ==
        doctest::Approx((30.0 * 0.2 - 30.0 * 0.2) / 100.0 * 1000.0 / 120.0));
  rec = record(0.25, 0.0, 1.0, 0.0);
  CHECK(utility_cost(slot, rec, 1.0) == doctest::Approx(slot_cost(rec, 1.0) - 0.5));
}

TEST_CASE("violation statistics") {
  const LimitsProfile lim;
  std::vector<SlotRecord> recs(40, record(0.0, 0.0, 1.0));
  CHECK(violation_stats(trajectory(recs), lim).fraction == 0.0);
  CHECK(violation_stats(trajectory(recs), lim).worst_window_compliance == 1.0);
  // Solver-level overshoot is not a violation.
  recs[3].v_ac[1] = lim.v_u + 1e-9;
  CHECK(violation_stats(trajectory(recs), lim).fraction == 0.0);
  for (int k = 10; k < 15; ++k) recs[k].v_ac[1] = lim.v_u + 0.001;
  const auto v = violation_stats(trajectory(recs), lim);
  CHECK(v.fraction == doctest::Approx(5.0 / 40.0));
  CHECK(v.worst_window_compliance == doctest::Approx(0.75));
  std::vector<SlotRecord> all(3, record(0.0, 0.0, 0.9));
  CHECK(violation_stats(trajectory(all), lim).fraction == 1.0);
  CHECK(violation_stats(trajectory(all), lim).worst_window_compliance == 0.0);
}

TEST_CASE("summary and CSV on a DEM run") {
  const auto tree = builtin_sce56();
  const auto slots = gen_synthetic(tree, {.seed = 11, .n_slots = 8});
  ControllerConfig cfg;
  cfg.mode = Mode::dem;
  std::ostringstream csv;
  CsvWriter writer(csv, cfg, tree.s_base_mva());
  const auto traj = run_horizon(tree, slots, cfg, [&](const SlotRecord& r) { writer.row(r); });
  const auto s = summarize(traj, tree);

  double total = 0.0;
  for (const auto& rec : traj.records) total += slot_cost(rec, 1.0);
  CHECK(s.total_cost == doctest::Approx(total).epsilon(1e-9));
  CHECK(s.max_feasibility_residual <= 1e-9);
  CHECK(s.violation_fraction >= 0.0);
  CHECK(s.violation_fraction <= 1.0);
  CHECK(s.total_curtailment_kwh >= 0.0);
  CHECK(s.time_avg_cost_series.size() == 8);

  const auto j = to_json(s);
  CHECK(j.at("mode") == "DEM");
  CHECK(j.at("time_avg_cost_series").size() == 8);

  // Recompute the running mean from the emitted rows.
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  CHECK(line ==
        "t,mode,model,cost_usd,time_avg_cost_usd_per_h,p0_pu,curtailment_pu_total,v_min_ac,"
        "v_max_ac,v_min_model,v_max_model,dual_norm,exactness_gap,solver_iters");
  double sum = 0.0;
  int k = 0;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string t, mode, model, cost, avg;
    std::getline(row, t, ',');
    std::getline(row, mode, ',');
    std::getline(row, model, ',');
    std::getline(row, cost, ',');
    std::getline(row, avg, ',');
    CHECK(mode == "DEM");
    CHECK(model == "BFM");
    sum += std::stod(cost);
    ++k;
    CHECK(std::stod(avg) == doctest::Approx(sum / k * 120.0).epsilon(1e-8));
    CHECK(std::stod(avg) == doctest::Approx(s.time_avg_cost_series[k - 1]).epsilon(1e-8));
  }
  CHECK(k == 8);

  writer.truncate("stopped");
  CHECK(csv.str().find("# truncated after 8 rows: stopped") != std::string::npos);
}
