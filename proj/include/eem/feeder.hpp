#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace eem {

/// Raised when a feeder description fails validation.
class FeederError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Device ratings attached to one bus, in the units of the feeder file.
struct BusSpec {
  int id = 0;
  double peak_load_mva = 0.0;
  double power_factor = 1.0;
  double shunt_mvar = 0.0;
  double pv_mw = 0.0;
  /// Inverter nameplate apparent power.
  double s_mva = 0.0;
  /// Inverter overload (hard) limit.
  double s_bar_mva = 0.0;
  bool root = false;
  /// Published value of doubtful provenance; see `note`.
  bool suspect = false;
  std::string note;
  /// Set when a documented override replaced a printed value.
  bool overridden = false;
};

struct LineSpec {
  int from = 0;
  int to = 0;
  double r_ohm = 0.0;
  double x_ohm = 0.0;
};

/// Radial single-phase feeder in canonical order.
///
/// Buses are renumbered breadth-first from the substation so that every
/// line n connects parent(n) < n to bus n. Line n is identified with its
/// receiving bus; index 0 is the substation and owns no line. Line
/// parameters are stored per unit on Z_base = v_base^2 / s_base.
class FeederTree {
 public:
  /// Validates the raw description and builds the canonical tree.
  static FeederTree build(double v_base_kv, double s_base_mva,
                          std::vector<BusSpec> buses,
                          const std::vector<LineSpec>& lines);

  std::size_t num_buses() const { return parent_.size(); }
  /// Number of lines, equal to num_buses() - 1.
  std::size_t num_lines() const { return parent_.size() - 1; }

  std::size_t parent(std::size_t n) const { return parent_.at(n); }
  std::span<const std::size_t> children(std::size_t n) const {
    return children_.at(n);
  }
  double r(std::size_t n) const { return r_pu_.at(n); }
  double x(std::size_t n) const { return x_pu_.at(n); }
  std::span<const double> r_pu() const { return r_pu_; }
  std::span<const double> x_pu() const { return x_pu_; }

  const BusSpec& bus(std::size_t n) const { return buses_.at(n); }
  /// External (file) id of canonical bus n.
  int label(std::size_t n) const { return buses_.at(n).id; }
  std::optional<std::size_t> index_of(int label) const;

  double v_base_kv() const { return v_base_kv_; }
  double s_base_mva() const { return s_base_mva_; }
  double z_base_ohm() const { return v_base_kv_ * v_base_kv_ / s_base_mva_; }

  /// Peak active / reactive demand in p.u. (constant power factor).
  double peak_p_pu(std::size_t n) const;
  double peak_q_pu(std::size_t n) const;
  double shunt_pu(std::size_t n) const;
  double pv_pu(std::size_t n) const;
  double s_pu(std::size_t n) const;
  double s_bar_pu(std::size_t n) const;
  bool has_inverter(std::size_t n) const { return buses_.at(n).s_mva > 0.0; }

  std::vector<std::size_t> inverter_buses() const;
  std::vector<std::size_t> capacitor_buses() const;
  std::vector<std::size_t> load_buses() const;

 private:
  FeederTree() = default;

  double v_base_kv_ = 0.0;
  double s_base_mva_ = 0.0;
  std::vector<std::size_t> parent_;
  std::vector<std::vector<std::size_t>> children_;
  std::vector<double> r_pu_;
  std::vector<double> x_pu_;
  std::vector<BusSpec> buses_;
};

struct FeederLoadOptions {
  /// Replace printed values by the `override` objects carried in the file.
  bool apply_overrides = true;
};

FeederTree parse_feeder(std::string_view json_text,
                        const FeederLoadOptions& options = {});
FeederTree load_feeder(const std::filesystem::path& path,
                       const FeederLoadOptions& options = {});

/// The bundled SCE 56-bus feeder. The bus data are stored as published;
/// the suspect rows are resolved by the overrides in the data file unless
/// `options.apply_overrides` is false.
FeederTree builtin_sce56(const FeederLoadOptions& options = {});
std::string_view builtin_sce56_json();

/// Breadth-first order from the root, ties at equal depth broken by
/// ascending external id. Returns external ids.
std::vector<int> topological_order(const FeederTree& tree);

/// Same ordering computed on a raw edge list; throws FeederError if the
/// edges do not form a tree rooted at `root`.
std::vector<int> topological_order(std::span<const int> bus_ids,
                                   std::span<const LineSpec> lines, int root);

}  // namespace eem
