#include "eem/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace eem {

namespace {

// cents/kWh x p.u. -> dollars over dt.
double to_dollars(double cents_pu, double s_base_mva, double dt_s) {
  return cents_pu / 100.0 * s_base_mva * 1000.0 * dt_s / 3600.0;
}

std::pair<double, double> range(const std::vector<double>& v) {
  if (v.size() < 2) return {0.0, 0.0};
  const auto [lo, hi] = std::minmax_element(v.begin() + 1, v.end());
  return {*lo, *hi};
}

}  // namespace

double slot_cost(const SlotRecord& rec, double s_base_mva, double dt_s) {
  return to_dollars(rec.price_main * rec.p0_ac + rec.price_fit * rec.surplus, s_base_mva, dt_s);
}

std::vector<double> prefix_mean(std::span<const double> x) {
  std::vector<double> out(x.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sum += x[k];
    out[k] = sum / static_cast<double>(k + 1);
  }
  return out;
}

std::vector<double> time_avg_cost(const Trajectory& traj, double s_base_mva, double dt_s) {
  std::vector<double> c;
  c.reserve(traj.records.size());
  for (const auto& rec : traj.records) c.push_back(slot_cost(rec, s_base_mva, dt_s) * 3600.0 / dt_s);
  return prefix_mean(c);
}

double FeasibilityResiduals::final_max() const {
  double m = 0.0;
  if (!apparent.empty()) m = std::max(m, *std::max_element(apparent.back().begin(), apparent.back().end()));
  if (!voltage.empty()) m = std::max(m, *std::max_element(voltage.back().begin(), voltage.back().end()));
  return m;
}

FeasibilityResiduals ergodic_feasibility(const Trajectory& traj, const FeederTree& tree,
                                         const LimitsProfile& limits) {
  const std::size_t nb = tree.num_buses();
  FeasibilityResiduals out;
  std::vector<double> s2(nb, 0.0), v(nb, 0.0);
  for (std::size_t k = 0; k < traj.records.size(); ++k) {
    const auto& rec = traj.records[k];
    const double t = static_cast<double>(k + 1);
    std::vector<double> a(nb, 0.0), vr(nb, 0.0);
    for (std::size_t n = 1; n < nb; ++n) {
      const double pg = rec.setpoints.p_g[n], qg = rec.setpoints.q_g[n];
      s2[n] += pg * pg + qg * qg;
      v[n] += rec.v_model[n];
      if (tree.has_inverter(n)) a[n] = std::max(0.0, s2[n] / t - tree.s_pu(n) * tree.s_pu(n));
      const double mean = v[n] / t;
      vr[n] = std::max({0.0, limits.v_l - mean, mean - limits.v_u});
    }
    out.apparent.push_back(std::move(a));
    out.voltage.push_back(std::move(vr));
  }
  return out;
}

std::vector<double> customer_cost(const SlotData& slot, const Setpoints& sp, double s_base_mva,
                                  double dt_s, double price_retail) {
  std::vector<double> out(slot.p_c.size(), 0.0);
  for (std::size_t n = 1; n < out.size(); ++n) {
    const double net = sp.p_g[n] - slot.p_c[n];
    const double cents = net < 0.0 ? price_retail * -net : -slot.price_fit * net;
    out[n] = to_dollars(cents, s_base_mva, dt_s);
  }
  return out;
}

double utility_cost(const SlotData& slot, const SlotRecord& rec, double s_base_mva, double dt_s,
                    double price_retail) {
  double deficit = 0.0;
  for (std::size_t n = 1; n < slot.p_c.size(); ++n)
    deficit += std::max(0.0, slot.p_c[n] - rec.setpoints.p_g[n]);
  return slot_cost(rec, s_base_mva, dt_s) - to_dollars(price_retail * deficit, s_base_mva, dt_s);
}

ViolationStats violation_stats(const Trajectory& traj, const LimitsProfile& limits,
                               std::size_t window, double tol) {
  ViolationStats out;
  const std::size_t T = traj.records.size();
  if (T == 0) return out;
  std::vector<int> bad(T, 0);
  for (std::size_t k = 0; k < T; ++k) {
    const auto [lo, hi] = range(traj.records[k].v_ac);
    bad[k] = lo < limits.v_l - tol || hi > limits.v_u + tol;
    out.violating_slots += static_cast<std::size_t>(bad[k]);
  }
  out.fraction = static_cast<double>(out.violating_slots) / static_cast<double>(T);
  const std::size_t w = std::clamp<std::size_t>(window, 1, T);
  int in_window = 0;
  for (std::size_t k = 0; k < T; ++k) {
    in_window += bad[k];
    if (k >= w) in_window -= bad[k - w];
    if (k + 1 >= w)
      out.worst_window_compliance = std::min(
          out.worst_window_compliance, 1.0 - static_cast<double>(in_window) / static_cast<double>(w));
  }
  return out;
}

RunSummary summarize(const Trajectory& traj, const FeederTree& tree, const MetricsOptions& options) {
  const double sb = tree.s_base_mva();
  RunSummary s;
  s.mode = to_string(traj.config.mode);
  s.model = to_string(traj.config.model);
  s.slots = traj.records.size();
  s.time_avg_cost_series = time_avg_cost(traj, sb, options.dt_s);
  for (const auto& rec : traj.records) {
    s.total_cost += slot_cost(rec, sb, options.dt_s);
    double curt = 0.0, vsum = 0.0;
    for (std::size_t n = 1; n < rec.curtailment.size(); ++n) curt += rec.curtailment[n];
    s.total_curtailment_kwh += curt * sb * 1000.0 * options.dt_s / 3600.0;
    for (std::size_t n = 1; n < rec.v_ac.size(); ++n) vsum += std::sqrt(rec.v_ac[n]);
    s.grid_avg_voltage_series.push_back(vsum / static_cast<double>(tree.num_lines()));
    s.max_exactness_gap = std::max(s.max_exactness_gap, rec.exactness_gap);
  }
  const auto feas = ergodic_feasibility(traj, tree, traj.config.limits);
  if (!feas.apparent.empty()) {
    s.apparent_residuals = feas.apparent.back();
    s.voltage_residuals = feas.voltage.back();
  }
  s.max_feasibility_residual = feas.final_max();
  const auto viol = violation_stats(traj, traj.config.limits, options.window, options.violation_tol);
  s.violation_fraction = viol.fraction;
  s.worst_window_compliance = viol.worst_window_compliance;
  return s;
}

nlohmann::json to_json(const RunSummary& s) {
  return {{"mode", s.mode},
          {"model", s.model},
          {"slots", s.slots},
          {"time_avg_cost_series", s.time_avg_cost_series},
          {"total_cost", s.total_cost},
          {"feasibility_residuals",
           {{"apparent", s.apparent_residuals},
            {"voltage", s.voltage_residuals},
            {"max", s.max_feasibility_residual}}},
          {"violation_fraction", s.violation_fraction},
          {"worst_window_compliance", s.worst_window_compliance},
          {"total_curtailment", s.total_curtailment_kwh},
          {"grid_avg_voltage_series", s.grid_avg_voltage_series},
          {"max_exactness_gap", s.max_exactness_gap}};
}

CsvWriter::CsvWriter(std::ostream& out, const ControllerConfig& cfg, double s_base_mva,
                     double dt_s)
    : out_(out), mode_(to_string(cfg.mode)), model_(to_string(cfg.model)), s_base_(s_base_mva),
      dt_s_(dt_s) {
  const auto& cols = columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out_ << (i ? "," : "") << cols[i];
  out_ << '\n';
  out_.flush();
}

const std::vector<std::string>& CsvWriter::columns() {
  static const std::vector<std::string> cols{
      "t",         "mode",      "model",       "cost_usd",    "time_avg_cost_usd_per_h",
      "p0_pu",     "curtailment_pu_total",     "v_min_ac",    "v_max_ac",
      "v_min_model", "v_max_model", "dual_norm", "exactness_gap", "solver_iters"};
  return cols;
}

void CsvWriter::row(const SlotRecord& rec) {
  const double cost = slot_cost(rec, s_base_, dt_s_);
  sum_ += cost;
  ++count_;
  double curt = 0.0;
  for (std::size_t n = 1; n < rec.curtailment.size(); ++n) curt += rec.curtailment[n];
  const auto [ac_lo, ac_hi] = range(rec.v_ac);
  const auto [m_lo, m_hi] = range(rec.v_model);
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%s,%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.6g,%.3e,%d\n",
                rec.t, mode_.c_str(), model_.c_str(), cost,
                sum_ / static_cast<double>(count_) * 3600.0 / dt_s_, rec.p0_ac, curt, ac_lo, ac_hi,
                m_lo, m_hi, rec.dual.norm(), rec.exactness_gap, rec.solver_iters);
  out_ << buf;
  out_.flush();
}

void CsvWriter::truncate(const std::string& reason) {
  out_ << "# truncated after " << count_ << " rows: " << reason << '\n';
  out_.flush();
}

}  // namespace eem
