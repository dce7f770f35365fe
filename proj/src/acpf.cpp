#include "eem/acpf.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace eem {

namespace {

void backward(const FeederTree& tree, std::span<const double> p, std::span<const double> q,
              PFSolution& s) {
  for (std::size_t n = tree.num_buses(); n-- > 1;) {
    double P = -p[n] + tree.r(n) * s.ell[n];
    double Q = -q[n] + tree.x(n) * s.ell[n];
    for (const auto k : tree.children(n)) {
      P += s.P[k];
      Q += s.Q[k];
    }
    s.P[n] = P;
    s.Q[n] = Q;
  }
  s.p0 = 0.0;
  s.q0 = 0.0;
  for (const auto k : tree.children(0)) {
    s.p0 += s.P[k];
    s.q0 += s.Q[k];
  }
}

}  // namespace

PFSolution solve_radial_acpf(const FeederTree& tree, std::span<const double> p,
                             std::span<const double> q, double v0, const AcpfOptions& options) {
  const std::size_t n = tree.num_buses();
  if (p.size() != n || q.size() != n)
    throw PowerFlowError("injection vectors must have one entry per bus");
  if (!(v0 > 0.0)) throw PowerFlowError("substation voltage must be positive");

  PFSolution s;
  s.v.assign(n, v0);
  s.ell.assign(n, 0.0);
  s.P.assign(n, 0.0);
  s.Q.assign(n, 0.0);

  for (int it = 1; it <= options.max_iter; ++it) {
    backward(tree, p, q, s);
    double dv = 0.0;
    for (std::size_t k = 1; k < n; ++k) {
      const double r = tree.r(k), x = tree.x(k);
      const double va = s.v[tree.parent(k)];
      const double v = va - 2.0 * (r * s.P[k] + x * s.Q[k]) + (r * r + x * x) * s.ell[k];
      if (!(v > 0.0))
        throw PowerFlowError("voltage collapse at bus " + std::to_string(tree.label(k)) +
                             " in sweep " + std::to_string(it));
      dv = std::max(dv, std::abs(v - s.v[k]));
      s.v[k] = v;
    }
    for (std::size_t k = 1; k < n; ++k)
      s.ell[k] = (s.P[k] * s.P[k] + s.Q[k] * s.Q[k]) / s.v[tree.parent(k)];
    s.iterations = it;
    if (dv < options.tol) {
      backward(tree, p, q, s);
      s.residual = branch_flow_residual(tree, s, p, q, v0);
      if (s.residual <= options.tol) return s;
    }
  }
  throw PowerFlowError("power flow did not converge in " + std::to_string(options.max_iter) +
                       " sweeps");
}

double branch_flow_residual(const FeederTree& tree, const PFSolution& s,
                            std::span<const double> p, std::span<const double> q, double v0) {
  double res = std::abs(s.v[0] - v0);
  for (std::size_t n = 1; n < tree.num_buses(); ++n) {
    const double r = tree.r(n), x = tree.x(n);
    double sum_p = 0.0, sum_q = 0.0;
    for (const auto k : tree.children(n)) {
      sum_p += s.P[k];
      sum_q += s.Q[k];
    }
    const double va = s.v[tree.parent(n)];
    res = std::max(res, std::abs(s.P[n] - r * s.ell[n] - sum_p + p[n]));
    res = std::max(res, std::abs(s.Q[n] - x * s.ell[n] - sum_q + q[n]));
    res = std::max(res, std::abs(s.v[n] - va + 2.0 * (r * s.P[n] + x * s.Q[n]) -
                                 (r * r + x * x) * s.ell[n]));
    res = std::max(res, std::abs(s.ell[n] * va - s.P[n] * s.P[n] - s.Q[n] * s.Q[n]));
  }
  return res;
}

double substation_energy_identity(const FeederTree& tree, const PFSolution& sol,
                                  std::span<const double> p) {
  double balance = 0.0;
  for (std::size_t n = 1; n < tree.num_buses(); ++n) balance += -p[n] + tree.r(n) * sol.ell[n];
  return std::abs(sol.p0 - balance);
}

}  // namespace eem
