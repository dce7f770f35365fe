#include "eem/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <set>
#include <thread>

namespace eem {

using nlohmann::json;

namespace {

void check_keys(const json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [key, _] : obj.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("unknown key '" + key + "' in " + std::string(where));
}

template <class T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

std::string default_label(const ControllerConfig& c) {
  std::string s = std::string(to_string(c.mode));
  if (c.mode == Mode::no_control) return s;
  s += std::string("-") + to_string(c.model);
  if (c.mode == Mode::eem) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "-mu%g", c.step_size);
    s += buf;
  }
  return s;
}

Mode parse_mode(const std::string& s) {
  if (s == "EEM" || s == "eem") return Mode::eem;
  if (s == "DEM" || s == "dem") return Mode::dem;
  if (s == "NoControl" || s == "no_control" || s == "nocontrol") return Mode::no_control;
  throw ConfigError("unknown mode '" + s + "'");
}

GridModel parse_model(const std::string& s) {
  if (s == "BFM" || s == "bfm") return GridModel::bfm;
  if (s == "LDF" || s == "ldf") return GridModel::ldf;
  throw ConfigError("unknown model '" + s + "'");
}

void parse_prices(const json& j, PriceSpec& p) {
  check_keys(j, "prices", {"main", "fit", "main_series", "block_slots", "zero_fit"});
  read(j, "main", p.main);
  read(j, "fit", p.fit);
  read(j, "main_series", p.main_series);
  read(j, "block_slots", p.block_slots);
  read(j, "zero_fit", p.zero_fit);
}

json prices_json(const PriceSpec& p) {
  return {{"main", p.main}, {"fit", p.fit}, {"main_series", p.main_series},
          {"block_slots", p.block_slots}, {"zero_fit", p.zero_fit}};
}

void parse_limits(const json& j, LimitsProfile& l) {
  check_keys(j, "limits", {"v_l", "v_u", "v_l_wide", "v_u_wide", "overload_factor"});
  read(j, "v_l", l.v_l);
  read(j, "v_u", l.v_u);
  read(j, "v_l_wide", l.v_l_wide);
  read(j, "v_u_wide", l.v_u_wide);
  read(j, "overload_factor", l.overload_factor);
}

NamedController parse_controller(const json& j) {
  check_keys(j, "controller",
             {"label", "mode", "model", "step_size", "horizon", "v0", "price_scale", "limits"});
  NamedController nc;
  auto& c = nc.config;
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  if (j.contains("model")) c.model = parse_model(j.at("model").get<std::string>());
  read(j, "step_size", c.step_size);
  read(j, "horizon", c.horizon);
  read(j, "v0", c.v0);
  read(j, "price_scale", c.price_scale);
  if (j.contains("limits")) parse_limits(j.at("limits"), c.limits);
  nc.label = j.value("label", default_label(c));
  return nc;
}

json controller_json(const NamedController& nc) {
  const auto& c = nc.config;
  return {{"label", nc.label},
          {"mode", to_string(c.mode)},
          {"model", to_string(c.model)},
          {"step_size", c.step_size},
          {"horizon", c.horizon},
          {"v0", c.v0},
          {"price_scale", c.price_scale},
          {"limits",
           {{"v_l", c.limits.v_l},
            {"v_u", c.limits.v_u},
            {"v_l_wide", c.limits.v_l_wide},
            {"v_u_wide", c.limits.v_u_wide},
            {"overload_factor", c.limits.overload_factor}}}};
}

NamedController make(Mode mode, GridModel model, double mu, std::size_t horizon) {
  NamedController nc;
  nc.config.mode = mode;
  nc.config.model = model;
  nc.config.step_size = mu;
  nc.config.horizon = horizon;
  nc.label = default_label(nc.config);
  return nc;
}

std::string run_stem(const std::string& label, std::size_t replica, std::size_t replicas) {
  return replicas == 1 ? label : label + "_r" + std::to_string(replica);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (controllers.empty()) throw ConfigError("no controllers configured");
  if (replicas < 1) throw ConfigError("replicas must be at least 1");
  if (synthetic.has_value() == trace.has_value())
    throw ConfigError("exactly one of a synthetic or a trace scenario is required");
  if (trace && replicas > 1) throw ConfigError("replicas > 1 needs a synthetic scenario");
  if (trace) {
    if (!std::filesystem::exists(trace->load_csv))
      throw ConfigError("load trace not found: " + trace->load_csv.string());
    for (const auto& p : {trace->solar_csv, trace->bus_mapping})
      if (!p.empty() && !std::filesystem::exists(p)) throw ConfigError("file not found: " + p.string());
  }
  if (feeder != "sce56" && !std::filesystem::exists(feeder))
    throw ConfigError("feeder file not found: " + feeder);
  if (!(metrics.dt_s > 0.0)) throw ConfigError("dt_s must be positive");
  std::set<std::string> labels;
  for (const auto& c : controllers) {
    if (!labels.insert(c.label).second) throw ConfigError("duplicate controller label " + c.label);
    try {
      c.config.validate();
    } catch (const ControllerError& e) {
      throw ConfigError(c.label + ": " + e.what());
    }
  }
}

std::vector<std::string> preset_names() { return {"fig2", "fig3", "fig4-6-synthetic"}; }

ExperimentConfig preset(std::string_view name) {
  ExperimentConfig cfg;
  cfg.name = std::string(name);
  SyntheticConfig syn;
  syn.load_fraction = 0.4;
  syn.gen_fraction = 0.8;
  syn.noise_std_fraction = 0.05;
  if (name == "fig2") {
    syn.n_slots = 120;
    cfg.controllers = {make(Mode::eem, GridModel::bfm, 0.1, 0), make(Mode::dem, GridModel::bfm, 0.1, 0)};
  } else if (name == "fig3") {
    syn.n_slots = 60;
    cfg.replicas = 20;
    for (const double mu : {0.1, 0.2, 0.3})
      cfg.controllers.push_back(make(Mode::eem, GridModel::bfm, mu, 0));
  } else if (name == "fig4-6-synthetic") {
    syn.n_slots = 240;
    cfg.controllers = {make(Mode::eem, GridModel::bfm, 0.1, 0), make(Mode::eem, GridModel::ldf, 0.1, 0),
                       make(Mode::dem, GridModel::bfm, 0.1, 0),
                       make(Mode::no_control, GridModel::bfm, 0.1, 0)};
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "'");
  }
  cfg.synthetic = syn;
  return cfg;
}

ExperimentConfig parse_experiment(const json& doc) {
  try {
    check_keys(doc, "config",
               {"preset", "name", "feeder", "apply_overrides", "scenario", "controllers", "replicas",
                "seed", "output_dir", "dt_s", "price_retail", "window", "threads"});
    ExperimentConfig cfg = doc.contains("preset") ? preset(doc.at("preset").get<std::string>())
                                                  : ExperimentConfig{};
    read(doc, "name", cfg.name);
    read(doc, "feeder", cfg.feeder);
    read(doc, "apply_overrides", cfg.apply_overrides);
    read(doc, "replicas", cfg.replicas);
    read(doc, "seed", cfg.seed);
    if (doc.contains("output_dir")) cfg.output_dir = doc.at("output_dir").get<std::string>();
    read(doc, "dt_s", cfg.metrics.dt_s);
    read(doc, "price_retail", cfg.metrics.price_retail);
    read(doc, "window", cfg.metrics.window);
    read(doc, "threads", cfg.threads);

    if (doc.contains("scenario")) {
      const auto& s = doc.at("scenario");
      const std::string kind = s.value("kind", "synthetic");
      if (kind == "synthetic") {
        check_keys(s, "scenario", {"kind", "load_fraction", "gen_fraction", "noise_std_fraction",
                                   "n_slots", "prices"});
        SyntheticConfig syn = cfg.synthetic.value_or(SyntheticConfig{});
        read(s, "load_fraction", syn.load_fraction);
        read(s, "gen_fraction", syn.gen_fraction);
        read(s, "noise_std_fraction", syn.noise_std_fraction);
        read(s, "n_slots", syn.n_slots);
        if (s.contains("prices")) parse_prices(s.at("prices"), syn.prices);
        cfg.synthetic = syn;
        cfg.trace.reset();
      } else if (kind == "trace") {
        check_keys(s, "scenario",
                   {"kind", "load_csv", "solar_csv", "bus_mapping", "source_resolution",
                    "target_resolution", "aggregation_group", "load_fraction", "gen_fraction",
                    "n_slots", "prices"});
        TraceConfig tr;
        tr.load_csv = s.at("load_csv").get<std::string>();
        if (s.contains("solar_csv")) tr.solar_csv = s.at("solar_csv").get<std::string>();
        if (s.contains("bus_mapping")) tr.bus_mapping = s.at("bus_mapping").get<std::string>();
        read(s, "source_resolution", tr.source_resolution);
        read(s, "target_resolution", tr.target_resolution);
        read(s, "aggregation_group", tr.aggregation_group);
        read(s, "load_fraction", tr.load_fraction);
        read(s, "gen_fraction", tr.gen_fraction);
        read(s, "n_slots", tr.n_slots);
        if (s.contains("prices")) parse_prices(s.at("prices"), tr.prices);
        cfg.trace = tr;
        cfg.synthetic.reset();
      } else {
        throw ConfigError("unknown scenario kind '" + kind + "'");
      }
    }
    if (doc.contains("controllers")) {
      cfg.controllers.clear();
      for (const auto& c : doc.at("controllers")) cfg.controllers.push_back(parse_controller(c));
    }
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return parse_experiment(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
}

json to_json(const ExperimentConfig& cfg) {
  json j{{"name", cfg.name},
         {"feeder", cfg.feeder},
         {"apply_overrides", cfg.apply_overrides},
         {"replicas", cfg.replicas},
         {"seed", cfg.seed},
         {"output_dir", cfg.output_dir.string()},
         {"dt_s", cfg.metrics.dt_s},
         {"price_retail", cfg.metrics.price_retail},
         {"window", cfg.metrics.window},
         {"threads", cfg.threads}};
  if (cfg.synthetic) {
    const auto& s = *cfg.synthetic;
    j["scenario"] = {{"kind", "synthetic"},
                     {"load_fraction", s.load_fraction},
                     {"gen_fraction", s.gen_fraction},
                     {"noise_std_fraction", s.noise_std_fraction},
                     {"n_slots", s.n_slots},
                     {"prices", prices_json(s.prices)}};
  } else if (cfg.trace) {
    const auto& t = *cfg.trace;
    j["scenario"] = {{"kind", "trace"},
                     {"load_csv", t.load_csv.string()},
                     {"solar_csv", t.solar_csv.string()},
                     {"bus_mapping", t.bus_mapping.string()},
                     {"source_resolution", t.source_resolution},
                     {"target_resolution", t.target_resolution},
                     {"aggregation_group", t.aggregation_group},
                     {"load_fraction", t.load_fraction},
                     {"gen_fraction", t.gen_fraction},
                     {"n_slots", t.n_slots},
                     {"prices", prices_json(t.prices)}};
  }
  j["controllers"] = json::array();
  for (const auto& c : cfg.controllers) j["controllers"].push_back(controller_json(c));
  return j;
}

FeederTree load_experiment_feeder(const ExperimentConfig& cfg) {
  const FeederLoadOptions opt{.apply_overrides = cfg.apply_overrides};
  return cfg.feeder == "sce56" ? builtin_sce56(opt) : load_feeder(cfg.feeder, opt);
}

std::vector<SlotData> experiment_slots(const FeederTree& tree, const ExperimentConfig& cfg,
                                       std::size_t replica) {
  if (cfg.trace) return load_trace(tree, *cfg.trace);
  auto syn = cfg.synthetic.value_or(SyntheticConfig{});
  syn.seed = cfg.seed + replica;
  return gen_synthetic(tree, syn);
}

void write_scenario_csv(std::ostream& out, const FeederTree& tree,
                        const std::vector<SlotData>& slots) {
  out << "t,bus_id,p_c,q_c,pg_max,price_main,price_fit\n";
  char buf[256];
  for (const auto& s : slots)
    for (std::size_t n = 1; n < tree.num_buses(); ++n) {
      std::snprintf(buf, sizeof buf, "%zu,%d,%.12g,%.12g,%.12g,%.12g,%.12g\n", s.t, tree.label(n),
                    s.p_c[n], s.q_c[n], s.pg_max[n], s.price_main, s.price_fit);
      out << buf;
    }
}

std::vector<ControllerStats> aggregate(const std::vector<NamedController>& controllers,
                                       const std::vector<ReplicaResult>& runs) {
  std::vector<ControllerStats> out;
  for (const auto& c : controllers) {
    ControllerStats st;
    st.label = c.label;
    std::vector<double> finals;
    for (const auto& r : runs) {
      if (r.label != c.label) continue;
      const auto& s = r.summary;
      finals.push_back(s.time_avg_cost_series.empty() ? 0.0 : s.time_avg_cost_series.back());
      st.mean_total_cost += s.total_cost;
      st.mean_curtailment_kwh += s.total_curtailment_kwh;
      st.mean_violation_fraction += s.violation_fraction;
      st.max_feasibility_residual = std::max(st.max_feasibility_residual, s.max_feasibility_residual);
      st.max_exactness_gap = std::max(st.max_exactness_gap, s.max_exactness_gap);
    }
    st.replicas = finals.size();
    if (!finals.empty()) {
      const double k = static_cast<double>(finals.size());
      for (const double f : finals) st.mean_avg_cost += f / k;
      st.mean_total_cost /= k;
      st.mean_curtailment_kwh /= k;
      st.mean_violation_fraction /= k;
      if (finals.size() > 1) {
        double ss = 0.0;
        for (const double f : finals) ss += (f - st.mean_avg_cost) * (f - st.mean_avg_cost);
        st.se_avg_cost = std::sqrt(ss / (k - 1.0) / k);
      }
    }
    out.push_back(st);
  }
  return out;
}

void print_table(std::ostream& out, const std::vector<ControllerStats>& stats) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-20s %4s %14s %10s %12s %12s %9s %10s %10s\n", "controller", "n",
                "avg_cost_$/h", "se", "total_$", "curtail_kWh", "viol", "feas_res", "delta_$/h");
  out << buf;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const auto& s = stats[i];
    const double delta = s.mean_avg_cost - stats.front().mean_avg_cost;
    std::snprintf(buf, sizeof buf, "%-20s %4zu %14.3f %10.3f %12.3f %12.3f %9.4f %10.2e %10.3f\n",
                  s.label.c_str(), s.replicas, s.mean_avg_cost, s.se_avg_cost, s.mean_total_cost,
                  s.mean_curtailment_kwh, s.mean_violation_fraction, s.max_feasibility_residual,
                  i ? delta : 0.0);
    out << buf;
  }
}

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  const FeederTree tree = load_experiment_feeder(cfg);
  try {
    (void)experiment_slots(tree, cfg, 0);
  } catch (const ScenarioError& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    std::ofstream(*out_dir / "config.json") << to_json(cfg).dump(2) << '\n';
  }

  struct Outcome {
    std::vector<ReplicaResult> runs;
    std::string error;
  };
  const auto replica_job = [&](std::size_t r) {
    Outcome o;
    std::vector<SlotData> slots;
    try {
      slots = experiment_slots(tree, cfg, r);
    } catch (const std::exception& e) {
      o.error = "replica " + std::to_string(r) + ": " + e.what();
      return o;
    }
    for (const auto& c : cfg.controllers) {
      const std::string stem = run_stem(c.label, r, cfg.replicas);
      std::ofstream csv;
      std::optional<CsvWriter> writer;
      if (out_dir) {
        csv.open(*out_dir / (stem + ".csv"));
        writer.emplace(csv, c.config, tree.s_base_mva(), cfg.metrics.dt_s);
      }
      try {
        const auto traj = run_horizon(tree, slots, c.config, [&](const SlotRecord& rec) {
          if (writer) writer->row(rec);
        });
        auto summary = summarize(traj, tree, cfg.metrics);
        if (out_dir) std::ofstream(*out_dir / (stem + ".json")) << to_json(summary).dump(2) << '\n';
        o.runs.push_back({c.label, r, std::move(summary)});
      } catch (const std::exception& e) {
        if (writer) writer->truncate(e.what());
        if (o.error.empty()) o.error = stem + ": " + e.what();
      }
    }
    return o;
  };

  const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  const std::size_t width = std::min(cfg.replicas, cfg.threads ? cfg.threads : hw);
  std::vector<Outcome> outcomes(cfg.replicas);
  for (std::size_t start = 0; start < cfg.replicas; start += width) {
    std::vector<std::future<Outcome>> batch;
    for (std::size_t r = start; r < std::min(cfg.replicas, start + width); ++r)
      batch.push_back(std::async(std::launch::async, replica_job, r));
    for (std::size_t k = 0; k < batch.size(); ++k) outcomes[start + k] = batch[k].get();
  }

  ExperimentResult result;
  std::string first_error;
  for (auto& o : outcomes) {
    for (auto& r : o.runs) result.runs.push_back(std::move(r));
    if (first_error.empty()) first_error = o.error;
  }
  result.stats = aggregate(cfg.controllers, result.runs);

  if (out_dir) {
    std::ofstream table(*out_dir / "summary.csv");
    table << "label,replica,final_avg_cost_usd_per_h,total_cost_usd,total_curtailment_kwh,"
             "violation_fraction,max_feasibility_residual,max_exactness_gap\n";
    for (const auto& r : result.runs) {
      const auto& s = r.summary;
      table << r.label << ',' << r.replica << ','
            << (s.time_avg_cost_series.empty() ? 0.0 : s.time_avg_cost_series.back()) << ','
            << s.total_cost << ',' << s.total_curtailment_kwh << ',' << s.violation_fraction << ','
            << s.max_feasibility_residual << ',' << s.max_exactness_gap << '\n';
    }
    json stats = json::array();
    for (const auto& s : result.stats)
      stats.push_back({{"label", s.label},
                       {"replicas", s.replicas},
                       {"mean_final_avg_cost_usd_per_h", s.mean_avg_cost},
                       {"se_final_avg_cost_usd_per_h", s.se_avg_cost},
                       {"mean_total_cost_usd", s.mean_total_cost},
                       {"mean_total_curtailment_kwh", s.mean_curtailment_kwh},
                       {"mean_violation_fraction", s.mean_violation_fraction},
                       {"max_feasibility_residual", s.max_feasibility_residual},
                       {"max_exactness_gap", s.max_exactness_gap}});
    std::ofstream(*out_dir / "summary.json")
        << json{{"experiment", cfg.name}, {"complete", first_error.empty()}, {"controllers", stats}}
               .dump(2)
        << '\n';
  }
  if (!first_error.empty()) throw RunError(first_error);
  return result;
}

}  // namespace eem
