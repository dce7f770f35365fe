#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "eem/feeder.hpp"

namespace eem {

class PowerFlowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Branch-flow state of a radial feeder. Per-line quantities are indexed by
/// the receiving bus; entry 0 is unused and zero.
struct PFSolution {
  std::vector<double> v;    // squared voltage magnitudes
  std::vector<double> ell;  // squared current magnitudes
  std::vector<double> P;    // sending-end active flow
  std::vector<double> Q;    // sending-end reactive flow
  double p0 = 0.0;
  double q0 = 0.0;
  double residual = 0.0;
  int iterations = 0;
};

struct AcpfOptions {
  double tol = 1e-10;
  int max_iter = 100;
};

/// Backward/forward sweep from a flat start. `p` and `q` are net bus
/// injections (generation minus load, capacitors included), per unit.
/// Throws PowerFlowError on voltage collapse or non-convergence.
PFSolution solve_radial_acpf(const FeederTree& tree, std::span<const double> p,
                             std::span<const double> q, double v0, const AcpfOptions& options = {});

/// Largest violation of the four branch-flow equation families.
double branch_flow_residual(const FeederTree& tree, const PFSolution& sol,
                            std::span<const double> p, std::span<const double> q, double v0);

/// |p0 - (-sum(p) + sum(r * ell))|.
double substation_energy_identity(const FeederTree& tree, const PFSolution& sol,
                                  std::span<const double> p);

}  // namespace eem
