#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "eem/conic.hpp"

using namespace eem;

namespace {

struct RandomLp {
  ConicProblem prob;
  Eigen::MatrixXd A;
  Eigen::VectorXd b, c;
};

// min c'z s.t. A z = b, z >= 0 with a sum row so the feasible set is bounded.
RandomLp random_lp(std::mt19937_64& rng, int n, int m) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.0, 1.0);
  RandomLp lp;
  lp.A.resize(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) lp.A(i, j) = i == 0 ? 1.0 : u(rng);
  Eigen::VectorXd z0(n);
  for (int j = 0; j < n; ++j) z0[j] = pos(rng);
  lp.b = lp.A * z0;
  lp.c.resize(n);
  for (int j = 0; j < n; ++j) lp.c[j] = u(rng);

  lp.prob = ConicProblem(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    lp.prob.c[j] = lp.c[j];
    lp.prob.lb[j] = 0.0;
  }
  for (int i = 0; i < m; ++i) {
    LinearRow row{.rhs = lp.b[i]};
    for (int j = 0; j < n; ++j) row.terms.emplace_back(j, lp.A(i, j));
    lp.prob.equalities.push_back(row);
  }
  return lp;
}

// Best objective over all basic feasible solutions.
double vertex_enumeration(const RandomLp& lp) {
  const int n = static_cast<int>(lp.A.cols()), m = static_cast<int>(lp.A.rows());
  double best = INFINITY;
  std::vector<bool> pick(n, false);
  std::fill(pick.end() - m, pick.end(), true);
  do {
    std::vector<int> basis;
    for (int j = 0; j < n; ++j)
      if (pick[j]) basis.push_back(j);
    Eigen::MatrixXd B(m, m);
    for (int k = 0; k < m; ++k) B.col(k) = lp.A.col(basis[k]);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(B);
    if (lu.rank() < m) continue;
    const Eigen::VectorXd zb = lu.solve(lp.b);
    if (zb.minCoeff() < -1e-12) continue;
    double obj = 0.0;
    for (int k = 0; k < m; ++k) obj += lp.c[basis[k]] * zb[k];
    best = std::min(best, obj);
  } while (std::next_permutation(pick.begin(), pick.end()));
  return best;
}

}  // namespace

TEST_CASE("norm lower bound") {
  ConicProblem p(1);
  p.c[0] = 1.0;
  p.cones.push_back({{{{0, 1.0}}, 0.0}, {{{}, 0.3}, {{}, 0.4}}});
  const auto s = solve(p);
  REQUIRE(s.status == SolveStatus::optimal);
  CHECK(s.z[0] == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(s.objective == doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("clipped quadratic") {
  // (z - 1)^2 = z^2 - 2z + 1
  ConicProblem p(1);
  p.c[0] = -2.0;
  p.h_diag[0] = 1.0;
  p.offset = 1.0;
  p.lb[0] = 0.0;
  p.ub[0] = 0.5;
  const auto s = solve(p);
  REQUIRE(s.status == SolveStatus::optimal);
  CHECK(std::abs(s.z[0] - 0.5) <= 1e-6);
  CHECK(std::abs(s.objective - 0.25) <= 1e-6);
}

TEST_CASE("random LPs against vertex enumeration") {
  std::mt19937_64 rng(2024);
  for (int k = 0; k < 25; ++k) {
    const auto lp = random_lp(rng, 10, 4);
    const auto s = solve(lp.prob);
    REQUIRE(s.status == SolveStatus::optimal);
    CHECK(std::abs(s.objective - vertex_enumeration(lp)) <= 1e-6);
    CHECK(max_violation(lp.prob, s.z) <= 1e-7);
  }
}

TEST_CASE("fixed variables are substituted") {
  ConicProblem p(3);
  p.c = {1.0, 1.0, 0.0};
  p.lb = {0.0, 2.0, -kInf};
  p.ub = {kInf, 2.0, kInf};
  p.equalities.push_back({{{0, 1.0}, {1, 1.0}, {2, 1.0}}, 5.0});
  p.cones.push_back({{{}, 4.0}, {{{{2, 1.0}}, 0.0}}});
  const auto s = solve(p);
  REQUIRE(s.status == SolveStatus::optimal);
  CHECK(s.z[1] == 2.0);
  CHECK(s.z[0] == doctest::Approx(0.0).epsilon(1e-7));
  CHECK(s.z[2] == doctest::Approx(3.0).epsilon(1e-7));
}

TEST_CASE("certificates") {
  SUBCASE("infeasible") {
    ConicProblem p(2);
    p.lb = {0.0, 0.0};
    p.equalities.push_back({{{0, 1.0}, {1, 1.0}}, -1.0});
    CHECK(solve(p).status == SolveStatus::infeasible);
  }
  SUBCASE("infeasible cone") {
    ConicProblem p(1);
    p.ub[0] = 0.1;
    p.cones.push_back({{{{0, 1.0}}, 0.0}, {{{}, 0.3}}});
    CHECK(solve(p).status == SolveStatus::infeasible);
  }
  SUBCASE("unbounded") {
    ConicProblem p(2);
    p.c = {-1.0, 0.0};
    p.lb = {0.0, 0.0};
    p.equalities.push_back({{{0, 1.0}, {1, -1.0}}, 1.0});
    CHECK(solve(p).status == SolveStatus::unbounded);
  }
  SUBCASE("inconsistent constant row") {
    ConicProblem p(1);
    p.lb[0] = p.ub[0] = 1.0;
    p.equalities.push_back({{{0, 1.0}}, 2.0});
    CHECK(solve(p).status == SolveStatus::infeasible);
  }
}

TEST_CASE("malformed problems are rejected") {
  ConicProblem p(2);
  p.h_diag[1] = -1.0;
  CHECK_THROWS_AS(solve(p), ConicError);
  ConicProblem q(2);
  q.lb[0] = 1.0;
  q.ub[0] = 0.0;
  CHECK_THROWS_AS(solve(q), ConicError);
  ConicProblem r(2);
  r.equalities.push_back({{{5, 1.0}}, 0.0});
  CHECK_THROWS_AS(solve(r), ConicError);
}

TEST_CASE("random SOCPs: feasibility, objective consistency, scaling invariance") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 8;
    ConicProblem p(n);
    for (std::size_t i = 0; i < n; ++i) {
      p.c[i] = u(rng);
      p.h_diag[i] = trial % 2 ? 0.5 * (u(rng) + 1.0) : 0.0;
      p.lb[i] = -2.0;
      p.ub[i] = 2.0;
    }
    for (int e = 0; e < 2; ++e) {
      LinearRow row;
      for (std::size_t i = 0; i < n; ++i) row.terms.emplace_back(i, u(rng));
      row.rhs = 0.1 * u(rng);
      p.equalities.push_back(row);
    }
    for (int k = 0; k < 3; ++k) {
      SocBlock cone{{{}, 1.5}, {}};
      for (int r = 0; r < 3; ++r) {
        AffineExpr e{{}, 0.1 * u(rng)};
        for (std::size_t i = 0; i < n; ++i)
          if (rng() % 2) e.terms.emplace_back(i, u(rng));
        cone.body.push_back(e);
      }
      p.cones.push_back(cone);
    }
    p.nonneg.push_back({{{0, 1.0}, {1, 1.0}}, 1.0});

    const auto s = solve(p);
    REQUIRE(s.status == SolveStatus::optimal);
    CHECK(s.primal_residual <= 1e-8);
    CHECK(s.dual_residual <= 1e-8);
    CHECK(s.gap <= 1e-8);
    CHECK(max_violation(p, s.z) <= 1e-7);
    CHECK(std::abs(objective_value(p, s.z) - s.objective) <= 1e-9 * (1.0 + std::abs(s.objective)));

    auto scaled = p;
    for (std::size_t i = 0; i < n; ++i) {
      scaled.c[i] *= 37.0;
      scaled.h_diag[i] *= 37.0;
    }
    const auto t = solve(scaled);
    REQUIRE(t.status == SolveStatus::optimal);
    double dz = 0.0;
    for (std::size_t i = 0; i < n; ++i) dz = std::max(dz, std::abs(s.z[i] - t.z[i]));
    CHECK(dz <= 1e-6);
    CHECK(t.objective == doctest::Approx(37.0 * s.objective).epsilon(1e-7));
  }
}

TEST_CASE("problem dump") {
  ConicProblem p(2);
  p.c[0] = 1.0;
  p.lb[1] = 0.0;
  p.equalities.push_back({{{0, 1.0}, {1, 2.0}}, 3.0});
  p.cones.push_back({{{{0, 1.0}}, 0.0}, {{{{1, 1.0}}, 0.5}}});
  const auto text = dump(p);
  CHECK(text.find("vars 2\n") == 0);
  CHECK(text.find("obj 0 1 0\n") != std::string::npos);
  CHECK(text.find("bound 1 0 inf\n") != std::string::npos);
  CHECK(text.find("eq 3 : 0:1 1:2\n") != std::string::npos);
  CHECK(text.find("soc 2 head 0 : 0:1 | body 0.5 : 1:1\n") != std::string::npos);
}
