#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "eem/feeder.hpp"

namespace eem {

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exogenous data of one control period. Vectors are indexed by canonical
/// bus and sized num_buses(); the substation entry is always zero.
struct SlotData {
  std::size_t t = 0;
  std::vector<double> p_c;
  std::vector<double> q_c;
  std::vector<double> pg_max;
  /// Prices in cents per kWh.
  double price_main = 30.0;
  double price_fit = 15.0;
};

struct PriceSpec {
  double main = 30.0;
  double fit = 15.0;
  /// Optional market series for the main price; each entry is held for
  /// block_slots consecutive slots and the series repeats if too short.
  std::vector<double> main_series;
  std::size_t block_slots = 1;
  /// Permits fit == 0 (feed-in tariff switched off).
  bool zero_fit = false;
};

/// Per-slot (main, fit) prices. Throws ScenarioError on non-positive prices.
std::vector<std::pair<double, double>> price_schedule(const PriceSpec& spec,
                                                      std::size_t n_slots);

struct SyntheticConfig {
  double load_fraction = 0.4;
  double gen_fraction = 0.8;
  double noise_std_fraction = 0.05;
  std::uint64_t seed = 1;
  std::size_t n_slots = 120;
  PriceSpec prices;
};

/// Nominal loads and solar scaled from the feeder ratings plus independent
/// Gaussian perturbations, clamped at zero.
std::vector<SlotData> gen_synthetic(const FeederTree& tree, const SyntheticConfig& cfg);

struct TraceConfig {
  std::filesystem::path load_csv;
  /// Optional; without it solar is zero everywhere.
  std::filesystem::path solar_csv;
  /// Optional `source_id,bus_id` file. Unmapped load columns are assigned
  /// in groups of aggregation_group, cycling over the load buses; solar
  /// columns cycle over the inverter buses.
  std::filesystem::path bus_mapping;
  /// Sample spacing of the input in seconds; 0 infers it from the file.
  double source_resolution = 0.0;
  double target_resolution = 30.0;
  std::size_t aggregation_group = 10;
  double load_fraction = 1.0;
  double gen_fraction = 1.0;
  /// Truncate to this many slots; 0 keeps everything.
  std::size_t n_slots = 0;
  PriceSpec prices;
};

std::vector<SlotData> load_trace(const FeederTree& tree, const TraceConfig& cfg);

/// One parsed trace file: timestamps in seconds and one column per source.
struct TraceTable {
  std::vector<std::string> sources;
  std::vector<double> time_s;
  std::vector<std::vector<double>> columns;
};

TraceTable read_trace_csv(const std::filesystem::path& path);

/// Resample one column onto t0, t0 + step, ... Coarser input is linearly
/// interpolated, finer input is averaged over [t, t + step).
std::vector<double> resample(std::span<const double> time_s, std::span<const double> values,
                             double source_resolution, double step);

/// Divide each day-long block of `step`-spaced samples by its maximum.
void normalize_daily(std::vector<double>& values, double step);

}  // namespace eem
