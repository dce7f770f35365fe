#include "eem/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>

namespace eem {

namespace {

constexpr double kSecondsPerDay = 86400.0;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_number(std::string_view field, const std::string& where) {
  if (field.empty()) return std::numeric_limits<double>::quiet_NaN();
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size())
    throw ScenarioError("malformed number '" + std::string(field) + "' in " + where);
  return value;
}

double infer_resolution(const std::vector<double>& time_s) {
  if (time_s.size() < 2) return 0.0;
  std::vector<double> diffs;
  for (std::size_t i = 1; i < time_s.size(); ++i) diffs.push_back(time_s[i] - time_s[i - 1]);
  std::nth_element(diffs.begin(), diffs.begin() + diffs.size() / 2, diffs.end());
  return diffs[diffs.size() / 2];
}

std::map<std::string, int> read_mapping(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open bus mapping " + path.string());
  std::map<std::string, int> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split(line);
    if (fields.size() != 2)
      throw ScenarioError("malformed CSV: " + path.string() + " row " + std::to_string(row));
    int bus = 0;
    const auto [ptr, ec] =
        std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), bus);
    if (ec != std::errc{} || ptr != fields[1].data() + fields[1].size()) {
      if (row == 1) continue;  // header
      throw ScenarioError("malformed bus id in " + path.string() + " row " + std::to_string(row));
    }
    out[std::string(fields[0])] = bus;
  }
  return out;
}

/// Resampled, group-averaged, normalized curve for each bus that received
/// at least one column. Keys are canonical bus indices.
std::map<std::size_t, std::vector<double>> bus_curves(
    const FeederTree& tree, const TraceTable& table, const TraceConfig& cfg,
    const std::map<std::string, int>* mapping, const std::vector<std::size_t>& targets,
    std::size_t group, bool daily) {
  const double src = cfg.source_resolution > 0.0 ? cfg.source_resolution
                                                 : infer_resolution(table.time_s);
  std::map<std::size_t, std::vector<std::vector<double>>> grouped;
  for (std::size_t c = 0; c < table.sources.size(); ++c) {
    std::size_t bus = 0;
    if (mapping) {
      const auto it = mapping->find(table.sources[c]);
      if (it == mapping->end())
        throw ScenarioError("trace column '" + table.sources[c] + "' has no bus mapping");
      const auto idx = tree.index_of(it->second);
      if (!idx) throw ScenarioError("mapping names unknown bus " + std::to_string(it->second));
      bus = *idx;
    } else {
      if (targets.empty()) throw ScenarioError("no buses to map trace columns onto");
      bus = targets[(c / group) % targets.size()];
    }
    grouped[bus].push_back(resample(table.time_s, table.columns[c], src, cfg.target_resolution));
  }

  std::map<std::size_t, std::vector<double>> out;
  for (auto& [bus, cols] : grouped) {
    std::size_t len = cols.front().size();
    for (const auto& col : cols) len = std::min(len, col.size());
    std::vector<double> avg(len, 0.0);
    for (const auto& col : cols)
      for (std::size_t k = 0; k < len; ++k) avg[k] += col[k] / static_cast<double>(cols.size());
    for (std::size_t k = 0; k < len; ++k) {
      if (std::isnan(avg[k]))
        throw ScenarioError("NaN after interpolation at bus " + std::to_string(tree.label(bus)) +
                            ", sample " + std::to_string(k));
    }
    if (daily) {
      normalize_daily(avg, cfg.target_resolution);
    } else {
      const double peak = *std::max_element(avg.begin(), avg.end());
      if (peak > 0.0)
        for (auto& v : avg) v /= peak;
    }
    out[bus] = std::move(avg);
  }
  for (const auto bus : targets) {
    if (!out.contains(bus)) throw ScenarioError("unmapped bus " + std::to_string(tree.label(bus)));
  }
  return out;
}

}  // namespace

std::vector<std::pair<double, double>> price_schedule(const PriceSpec& spec, std::size_t n_slots) {
  if (spec.block_slots == 0) throw ScenarioError("price block length must be positive");
  if (!(spec.fit > 0.0) && !(spec.zero_fit && spec.fit == 0.0))
    throw ScenarioError("feed-in tariff must be positive unless zero_fit is set");
  const auto check_main = [](double p) {
    if (!(p > 0.0) || !std::isfinite(p)) throw ScenarioError("main price must be positive");
    return p;
  };
  std::vector<std::pair<double, double>> out;
  out.reserve(n_slots);
  for (std::size_t t = 0; t < n_slots; ++t) {
    double main = spec.main;
    if (!spec.main_series.empty())
      main = spec.main_series[(t / spec.block_slots) % spec.main_series.size()];
    out.emplace_back(check_main(main), spec.fit);
  }
  return out;
}

std::vector<SlotData> gen_synthetic(const FeederTree& tree, const SyntheticConfig& cfg) {
  if (cfg.load_fraction < 0.0 || cfg.load_fraction > 1.0 || cfg.gen_fraction < 0.0 ||
      cfg.gen_fraction > 1.0)
    throw ScenarioError("load and generation fractions must lie in [0, 1]");
  if (cfg.noise_std_fraction < 0.0) throw ScenarioError("noise fraction must be nonnegative");
  if (cfg.n_slots == 0) throw ScenarioError("scenario needs at least one slot");

  const auto prices = price_schedule(cfg.prices, cfg.n_slots);
  const std::size_t n = tree.num_buses();
  std::vector<double> p_nom(n, 0.0), g_nom(n, 0.0), tan_phi(n, 0.0);
  for (std::size_t b = 1; b < n; ++b) {
    p_nom[b] = cfg.load_fraction * tree.peak_p_pu(b);
    g_nom[b] = cfg.gen_fraction * tree.pv_pu(b);
    tan_phi[b] = std::tan(std::acos(tree.bus(b).power_factor));
  }

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<SlotData> out(cfg.n_slots);
  for (std::size_t t = 0; t < cfg.n_slots; ++t) {
    auto& s = out[t];
    s.t = t;
    s.p_c.assign(n, 0.0);
    s.q_c.assign(n, 0.0);
    s.pg_max.assign(n, 0.0);
    s.price_main = prices[t].first;
    s.price_fit = prices[t].second;
    for (std::size_t b = 1; b < n; ++b) {
      // Draw for every bus so the stream does not depend on which buses are loaded.
      const double el = gauss(rng);
      const double eg = gauss(rng);
      s.p_c[b] = std::max(0.0, p_nom[b] * (1.0 + cfg.noise_std_fraction * el));
      s.pg_max[b] = std::max(0.0, g_nom[b] * (1.0 + cfg.noise_std_fraction * eg));
      s.q_c[b] = s.p_c[b] * tan_phi[b];
    }
  }
  return out;
}

TraceTable read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open trace " + path.string());
  TraceTable table;
  std::string line;
  if (!std::getline(in, line)) throw ScenarioError("malformed CSV: " + path.string() + " is empty");
  const auto header = split(line);
  if (header.size() < 2 || header[0] != "timestamp_s")
    throw ScenarioError("malformed CSV: " + path.string() +
                        " must start with timestamp_s and at least one source column");
  for (std::size_t c = 1; c < header.size(); ++c) table.sources.emplace_back(header[c]);
  table.columns.resize(table.sources.size());

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split(line);
    const auto where = path.string() + " row " + std::to_string(row);
    if (fields.size() != header.size())
      throw ScenarioError("malformed CSV: " + where + " has " + std::to_string(fields.size()) +
                          " fields, expected " + std::to_string(header.size()));
    const double ts = parse_number(fields[0], where);
    if (!std::isfinite(ts)) throw ScenarioError("malformed CSV: missing timestamp in " + where);
    if (!table.time_s.empty() && ts <= table.time_s.back())
      throw ScenarioError("non-monotone timestamps at " + where);
    table.time_s.push_back(ts);
    for (std::size_t c = 1; c < fields.size(); ++c)
      table.columns[c - 1].push_back(parse_number(fields[c], where));
  }
  if (table.time_s.empty()) throw ScenarioError("malformed CSV: " + path.string() + " has no rows");
  return table;
}

std::vector<double> resample(std::span<const double> time_s, std::span<const double> values,
                             double source_resolution, double step) {
  if (!(step > 0.0)) throw ScenarioError("target resolution must be positive");
  if (time_s.size() != values.size()) throw ScenarioError("timestamp and value lengths differ");
  if (time_s.empty()) return {};
  const double t0 = time_s.front();
  const double span = time_s.back() - t0;
  std::vector<double> out;

  if (source_resolution > step || time_s.size() == 1) {
    const auto count = static_cast<std::size_t>(std::floor(span / step + 1e-9)) + 1;
    out.reserve(count);
    std::size_t j = 0;
    for (std::size_t k = 0; k < count; ++k) {
      const double t = t0 + static_cast<double>(k) * step;
      while (j + 1 < time_s.size() && time_s[j + 1] <= t) ++j;
      if (j + 1 >= time_s.size()) {
        out.push_back(values[j]);
        continue;
      }
      const double w = (t - time_s[j]) / (time_s[j + 1] - time_s[j]);
      out.push_back(values[j] + w * (values[j + 1] - values[j]));
    }
    return out;
  }

  const auto count =
      static_cast<std::size_t>(std::floor((span + source_resolution) / step + 1e-9));
  out.assign(count, 0.0);
  std::vector<std::size_t> hits(count, 0);
  for (std::size_t i = 0; i < time_s.size(); ++i) {
    const auto k = static_cast<std::size_t>(std::floor((time_s[i] - t0) / step + 1e-9));
    if (k >= count) continue;
    out[k] += values[i];
    ++hits[k];
  }
  for (std::size_t k = 0; k < count; ++k)
    out[k] = hits[k] ? out[k] / static_cast<double>(hits[k])
                     : std::numeric_limits<double>::quiet_NaN();
  return out;
}

void normalize_daily(std::vector<double>& values, double step) {
  const auto per_day = std::max<std::size_t>(1, static_cast<std::size_t>(kSecondsPerDay / step));
  for (std::size_t start = 0; start < values.size(); start += per_day) {
    const auto end = std::min(values.size(), start + per_day);
    const double peak = *std::max_element(values.begin() + start, values.begin() + end);
    if (peak <= 0.0) continue;
    for (auto k = start; k < end; ++k) values[k] /= peak;
  }
}

std::vector<SlotData> load_trace(const FeederTree& tree, const TraceConfig& cfg) {
  if (cfg.aggregation_group == 0) throw ScenarioError("aggregation group must be positive");
  std::map<std::string, int> mapping;
  const bool mapped = !cfg.bus_mapping.empty();
  if (mapped) mapping = read_mapping(cfg.bus_mapping);

  const auto loads = read_trace_csv(cfg.load_csv);
  const auto load_curves = bus_curves(tree, loads, cfg, mapped ? &mapping : nullptr,
                                      tree.load_buses(), cfg.aggregation_group, true);
  std::map<std::size_t, std::vector<double>> solar_curves;
  if (!cfg.solar_csv.empty()) {
    const auto solar = read_trace_csv(cfg.solar_csv);
    solar_curves = bus_curves(tree, solar, cfg, mapped ? &mapping : nullptr,
                              tree.inverter_buses(), 1, false);
  }

  std::size_t len = std::numeric_limits<std::size_t>::max();
  for (const auto& [bus, c] : load_curves) len = std::min(len, c.size());
  for (const auto& [bus, c] : solar_curves) len = std::min(len, c.size());
  if (len == std::numeric_limits<std::size_t>::max() || len == 0)
    throw ScenarioError("trace yields no slots");
  if (cfg.n_slots > 0) {
    if (cfg.n_slots > len)
      throw ScenarioError("trace covers " + std::to_string(len) + " slots, " +
                          std::to_string(cfg.n_slots) + " requested");
    len = cfg.n_slots;
  }

  const auto prices = price_schedule(cfg.prices, len);
  const std::size_t n = tree.num_buses();
  std::vector<SlotData> out(len);
  for (std::size_t t = 0; t < len; ++t) {
    auto& s = out[t];
    s.t = t;
    s.p_c.assign(n, 0.0);
    s.q_c.assign(n, 0.0);
    s.pg_max.assign(n, 0.0);
    s.price_main = prices[t].first;
    s.price_fit = prices[t].second;
    for (const auto& [bus, c] : load_curves) {
      s.p_c[bus] = std::max(0.0, c[t]) * cfg.load_fraction * tree.peak_p_pu(bus);
      s.q_c[bus] = std::max(0.0, c[t]) * cfg.load_fraction * tree.peak_q_pu(bus);
    }
    for (const auto& [bus, c] : solar_curves)
      s.pg_max[bus] = std::max(0.0, c[t]) * cfg.gen_fraction * tree.pv_pu(bus);
  }
  return out;
}

}  // namespace eem
