#pragma once

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace eem {

class ConicError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Terms = std::vector<std::pair<std::size_t, double>>;

/// sum(coef * z[var]) + constant
struct AffineExpr {
  Terms terms;
  double constant = 0.0;
};

/// sum(coef * z[var]) == rhs
struct LinearRow {
  Terms terms;
  double rhs = 0.0;
};

/// ||body|| <= head
struct SocBlock {
  AffineExpr head;
  std::vector<AffineExpr> body;
};

/// minimize   c'z + sum_i h_diag[i] * z[i]^2 + offset
/// subject to equalities, lb <= z <= ub, nonneg exprs >= 0, cones.
struct ConicProblem {
  ConicProblem() = default;
  explicit ConicProblem(std::size_t n);

  std::size_t n_vars = 0;
  std::vector<double> c;
  std::vector<double> h_diag;
  double offset = 0.0;
  std::vector<LinearRow> equalities;
  std::vector<double> lb;
  std::vector<double> ub;
  std::vector<AffineExpr> nonneg;
  std::vector<SocBlock> cones;
};

enum class SolveStatus { optimal, infeasible, unbounded, max_iter };

const char* to_string(SolveStatus status);

struct ConicSolution {
  std::vector<double> z;
  double objective = std::numeric_limits<double>::quiet_NaN();
  SolveStatus status = SolveStatus::max_iter;
  /// Convergence measures on the cost-normalized problem. `gap` is the
  /// smaller of the absolute and relative duality gap.
  double primal_residual = std::numeric_limits<double>::infinity();
  double dual_residual = std::numeric_limits<double>::infinity();
  double gap = std::numeric_limits<double>::infinity();
  int iterations = 0;
};

struct SolverOptions {
  double tol = 1e-8;
  int max_iter = 200;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Throws ConicError if the problem is malformed.
void validate(const ConicProblem& prob);

/// Primal-dual interior point method on the homogeneous self-dual embedding.
ConicSolution solve(const ConicProblem& prob, const SolverOptions& options = {});

double objective_value(const ConicProblem& prob, const std::vector<double>& z);

/// Largest violation of any constraint at z, measured in the problem's own
/// units (no scaling).
double max_violation(const ConicProblem& prob, const std::vector<double>& z);

/// Text serialization, one item per line:
///   vars <n>
///   obj <i> <c_i> <h_i>          (nonzero entries only)
///   offset <value>
///   bound <i> <lb> <ub>           (finite or non-default bounds only)
///   eq <rhs> : <i>:<coef> ...
///   ge <constant> : <i>:<coef> ...        (expr >= 0)
///   soc <dim> head <constant> : <i>:<coef> ... | body <constant> : ... | ...
std::string dump(const ConicProblem& prob);

}  // namespace eem
