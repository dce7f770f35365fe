#include "eem/conic.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/OrderingMethods>

namespace eem {

ConicProblem::ConicProblem(std::size_t n)
    : n_vars(n), c(n, 0.0), h_diag(n, 0.0), lb(n, -kInf), ub(n, kInf) {}

const char* to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::unbounded: return "unbounded";
    case SolveStatus::max_iter: return "max_iter";
  }
  return "unknown";
}

namespace {

using Vec = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

constexpr double kReg = 1e-8;
constexpr int kMaxStall = 5;
constexpr double kStep = 0.99;

double eval(const AffineExpr& e, const std::vector<double>& z) {
  double v = e.constant;
  for (const auto& [i, a] : e.terms) v += a * z[i];
  return v;
}

void check_terms(const Terms& terms, std::size_t n, const char* what) {
  for (const auto& [i, a] : terms) {
    if (i >= n) throw ConicError(std::string(what) + " references variable " + std::to_string(i));
    if (!std::isfinite(a)) throw ConicError(std::string(what) + " has a non-finite coefficient");
  }
}

/// Orthant rows first, then second-order cones stored contiguously.
struct ConeLayout {
  std::size_t n_orth = 0;
  std::vector<std::size_t> soc_start;
  std::vector<std::size_t> soc_dim;
  std::size_t rows = 0;
  double degree() const { return static_cast<double>(n_orth + soc_dim.size()); }
};

double soc_det(const double* u, std::size_t d) {
  double r = u[0] * u[0];
  for (std::size_t k = 1; k < d; ++k) r -= u[k] * u[k];
  return r;
}

void add_identity(const ConeLayout& L, Vec& v, double a) {
  for (std::size_t i = 0; i < L.n_orth; ++i) v[i] += a;
  for (const auto st : L.soc_start) v[st] += a;
}

/// Shift r into the interior of the cone: r + (1 + max(-0.99, -min eig)) e.
void bring_to_cone(const ConeLayout& L, Vec& r) {
  double alpha = -kStep;
  for (std::size_t i = 0; i < L.n_orth; ++i) alpha = std::max(alpha, -r[i]);
  for (std::size_t k = 0; k < L.soc_dim.size(); ++k) {
    const double* u = r.data() + L.soc_start[k];
    double nrm = 0.0;
    for (std::size_t j = 1; j < L.soc_dim[k]; ++j) nrm += u[j] * u[j];
    alpha = std::max(alpha, -(u[0] - std::sqrt(nrm)));
  }
  add_identity(L, r, 1.0 + alpha);
}

/// u o v (Jordan product).
Vec cone_product(const ConeLayout& L, const Vec& u, const Vec& v) {
  Vec w(u.size());
  for (std::size_t i = 0; i < L.n_orth; ++i) w[i] = u[i] * v[i];
  for (std::size_t k = 0; k < L.soc_dim.size(); ++k) {
    const auto st = L.soc_start[k], d = L.soc_dim[k];
    w[st] = u.segment(st, d).dot(v.segment(st, d));
    for (std::size_t j = 1; j < d; ++j) w[st + j] = u[st] * v[st + j] + v[st] * u[st + j];
  }
  return w;
}

/// Solves lambda o w = v.
Vec cone_divide(const ConeLayout& L, const Vec& lambda, const Vec& v) {
  Vec w(v.size());
  for (std::size_t i = 0; i < L.n_orth; ++i) w[i] = v[i] / lambda[i];
  for (std::size_t k = 0; k < L.soc_dim.size(); ++k) {
    const auto st = L.soc_start[k], d = L.soc_dim[k];
    const double l0 = lambda[st];
    double l1v1 = 0.0;
    for (std::size_t j = 1; j < d; ++j) l1v1 += lambda[st + j] * v[st + j];
    const double w0 = (l0 * v[st] - l1v1) / soc_det(lambda.data() + st, d);
    w[st] = w0;
    for (std::size_t j = 1; j < d; ++j) w[st + j] = (v[st + j] - w0 * lambda[st + j]) / l0;
  }
  return w;
}

/// Largest alpha >= 0 keeping u + alpha du in the cone (may be infinite).
double max_step(const ConeLayout& L, const Vec& u, const Vec& du) {
  double amax = kInf;
  for (std::size_t i = 0; i < L.n_orth; ++i)
    if (du[i] < 0.0) amax = std::min(amax, -u[i] / du[i]);
  for (std::size_t k = 0; k < L.soc_dim.size(); ++k) {
    const auto st = L.soc_start[k], d = L.soc_dim[k];
    const double* x = u.data() + st;
    const double* dx = du.data() + st;
    if (dx[0] < 0.0) amax = std::min(amax, -x[0] / dx[0]);
    const double a = soc_det(dx, d);
    double b = x[0] * dx[0];
    for (std::size_t j = 1; j < d; ++j) b -= x[j] * dx[j];
    const double c = std::max(soc_det(x, d), 0.0);
    // det(u + alpha du) = a alpha^2 + 2 b alpha + c
    double root = kInf;
    const double disc = b * b - a * c;
    if (a == 0.0) {
      if (b < 0.0) root = -c / (2.0 * b);
    } else if (disc >= 0.0) {
      const double q = -(b + std::copysign(std::sqrt(disc), b));
      for (const double r : {q / a, q != 0.0 ? c / q : kInf})
        if (r >= 0.0) root = std::min(root, r);
    }
    amax = std::min(amax, root);
  }
  return amax;
}

/// Nesterov-Todd scaling W with W z = W^-1 s = lambda.
struct NTScaling {
  Vec orth;  // sqrt(s / z)
  std::vector<double> eta;
  std::vector<Vec> wbar;
  Vec lambda;

  void identity(const ConeLayout& L) {
    orth = Vec::Ones(static_cast<Eigen::Index>(L.n_orth));
    eta.assign(L.soc_dim.size(), 1.0);
    wbar.clear();
    for (const auto d : L.soc_dim) {
      Vec w = Vec::Zero(static_cast<Eigen::Index>(d));
      w[0] = 1.0;
      wbar.push_back(w);
    }
  }

  bool update(const ConeLayout& L, const Vec& s, const Vec& z) {
    orth.resize(static_cast<Eigen::Index>(L.n_orth));
    lambda.resize(s.size());
    for (std::size_t i = 0; i < L.n_orth; ++i) {
      if (!(s[i] > 0.0 && z[i] > 0.0)) return false;
      orth[i] = std::sqrt(s[i] / z[i]);
      lambda[i] = std::sqrt(s[i] * z[i]);
    }
    eta.resize(L.soc_dim.size());
    wbar.resize(L.soc_dim.size());
    for (std::size_t k = 0; k < L.soc_dim.size(); ++k) {
      const auto st = L.soc_start[k], d = L.soc_dim[k];
      const auto n = static_cast<Eigen::Index>(d);
      const double sres = soc_det(s.data() + st, d);
      const double zres = soc_det(z.data() + st, d);
      if (!(sres > 0.0 && zres > 0.0 && s[st] > 0.0 && z[st] > 0.0)) return false;
      const Vec sb = s.segment(st, n) / std::sqrt(sres);
      const Vec zb = z.segment(st, n) / std::sqrt(zres);
      const double gamma = std::sqrt((1.0 + sb.dot(zb)) / 2.0);
      Vec w(n);
      w[0] = (sb[0] + zb[0]) / (2.0 * gamma);
      for (Eigen::Index j = 1; j < n; ++j) w[j] = (sb[j] - zb[j]) / (2.0 * gamma);
      eta[k] = std::pow(sres / zres, 0.25);
      wbar[k] = w;
    }
    Vec wz = apply(L, z, false);
    lambda.tail(lambda.size() - static_cast<Eigen::Index>(L.n_orth)) =
        wz.tail(wz.size() - static_cast<Eigen::Index>(L.n_orth));
    return true;
  }

  Vec apply(const ConeLayout& L, const Vec& v, bool inverse) const {
    Vec out(v.size());
    for (std::size_t i = 0; i < L.n_orth; ++i) out[i] = inverse ? v[i] / orth[i] : v[i] * orth[i];
    for (std::size_t k = 0; k < L.soc_dim.size(); ++k) {
      const auto st = static_cast<Eigen::Index>(L.soc_start[k]);
      const auto n = static_cast<Eigen::Index>(L.soc_dim[k]);
      const Vec& w = wbar[k];
      const auto v1 = v.segment(st + 1, n - 1);
      const auto w1 = w.tail(n - 1);
      const double sgn = inverse ? -1.0 : 1.0;
      const double w1v1 = w1.dot(v1);
      const double scale = inverse ? 1.0 / eta[k] : eta[k];
      out[st] = scale * (w[0] * v[st] + sgn * w1v1);
      out.segment(st + 1, n - 1) =
          scale * (sgn * v[st] * w1 + v1 + (w1v1 / (1.0 + w[0])) * w1);
    }
    return out;
  }

  /// Entry (a, b) of W^2 for SOC k: eta^2 (2 wbar wbar' - J).
  double soc_w2(std::size_t k, std::size_t a, std::size_t b) const {
    const Vec& w = wbar[k];
    double v = 2.0 * w[static_cast<Eigen::Index>(a)] * w[static_cast<Eigen::Index>(b)];
    if (a == b) v += a == 0 ? -1.0 : 1.0;
    return eta[k] * eta[k] * v;
  }
};

/// Sparse LDL' of a quasi-definite matrix with AMD ordering. Pivots whose
/// sign disagrees with the expected inertia are replaced by +-kDynReg, so a
/// nearly singular scaling block cannot break the factorization. Factors are
/// kept in long double.
class QuasiDefiniteLdl {
 public:
  void analyze(const SpMat& lower, std::vector<int> sign) {
    n_ = static_cast<int>(lower.rows());
    const SpMat full = lower.selfadjointView<Eigen::Lower>();
    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> pinv;
    Eigen::AMDOrdering<int>()(full, pinv);
    perm_ = pinv.inverse();
    permute(lower);
    sign_.assign(static_cast<std::size_t>(n_), 0);
    for (int i = 0; i < n_; ++i) sign_[static_cast<std::size_t>(perm_.indices()[i])] = sign[i];

    parent_.assign(n_, -1);
    std::vector<int> flag(n_), lnz(n_, 0);
    for (int k = 0; k < n_; ++k) {
      flag[k] = k;
      for (SpMat::InnerIterator it(upper_, k); it; ++it) {
        int i = static_cast<int>(it.row());
        if (i >= k) continue;
        for (; flag[i] != k; i = parent_[i]) {
          if (parent_[i] == -1) parent_[i] = k;
          ++lnz[i];
          flag[i] = k;
        }
      }
    }
    lp_.assign(n_ + 1, 0);
    for (int k = 0; k < n_; ++k) lp_[k + 1] = lp_[k] + lnz[k];
    li_.assign(lp_[n_], 0);
    lx_.assign(lp_[n_], 0.0L);
    d_.assign(n_, 0.0L);
  }

  bool factor(const SpMat& lower) {
    permute(lower);
    std::vector<int> flag(n_), lnz(n_, 0), pattern(n_);
    std::vector<long double> y(n_, 0.0L);
    for (int k = 0; k < n_; ++k) {
      int top = n_;
      flag[k] = k;
      for (SpMat::InnerIterator it(upper_, k); it; ++it) {
        int i = static_cast<int>(it.row());
        if (i > k) continue;
        y[i] += it.value();
        int len = 0;
        for (; flag[i] != k; i = parent_[i]) {
          pattern[len++] = i;
          flag[i] = k;
        }
        while (len > 0) pattern[--top] = pattern[--len];
      }
      long double dk = y[k];
      y[k] = 0.0L;
      for (; top < n_; ++top) {
        const int i = pattern[top];
        const long double yi = y[i];
        y[i] = 0.0L;
        const int p2 = lp_[i] + lnz[i];
        for (int p = lp_[i]; p < p2; ++p) y[li_[p]] -= lx_[p] * yi;
        const long double lki = yi / d_[i];
        dk -= lki * yi;
        li_[p2] = k;
        lx_[p2] = lki;
        ++lnz[i];
      }
      const long double sg = sign_[static_cast<std::size_t>(k)];
      if (!(dk * sg > kPivotEps)) dk = sg * kDynReg;
      d_[k] = dk;
    }
    return std::all_of(d_.begin(), d_.end(), [](long double v) { return std::isfinite(v); }) &&
           std::all_of(lx_.begin(), lx_.end(), [](long double v) { return std::isfinite(v); });
  }

  Vec solve(const Vec& b) const {
    const Vec pb = perm_ * b;
    std::vector<long double> x(pb.data(), pb.data() + n_);
    for (int j = 0; j < n_; ++j)
      for (int p = lp_[j]; p < lp_[j + 1]; ++p) x[li_[p]] -= lx_[p] * x[j];
    for (int j = 0; j < n_; ++j) x[j] /= d_[j];
    for (int j = n_ - 1; j >= 0; --j)
      for (int p = lp_[j]; p < lp_[j + 1]; ++p) x[j] -= lx_[p] * x[li_[p]];
    Vec out(n_);
    for (int j = 0; j < n_; ++j) out[j] = static_cast<double>(x[j]);
    return perm_.inverse() * out;
  }

 private:
  static constexpr double kPivotEps = 1e-13;
  static constexpr double kDynReg = 1e-7;

  void permute(const SpMat& lower) {
    upper_.resize(n_, n_);
    upper_.selfadjointView<Eigen::Upper>() = lower.selfadjointView<Eigen::Lower>().twistedBy(perm_);
  }

  int n_ = 0;
  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> perm_;
  SpMat upper_;
  std::vector<int> sign_, parent_, lp_, li_;
  std::vector<long double> lx_, d_;
};

struct Residuals {
  double pres = kInf;
  double dres = kInf;
  double gap = kInf;
  double relgap = kInf;
  double pcost = 0.0;
  double merit() const { return std::max({pres, dres, std::min(gap, relgap)}); }
};

class Ipm {
 public:
  Ipm(SpMat A, Vec b, SpMat G, Vec h, Vec c, Vec pdiag, ConeLayout layout)
      : A0_(std::move(A)), G0_(std::move(G)), b0_(std::move(b)), h0_(std::move(h)),
        c0_(std::move(c)), p0_(std::move(pdiag)), L_(std::move(layout)) {
    m_ = c0_.size();
    p_ = b0_.size();
    q_ = h0_.size();
    equilibrate();
    build_kkt();
  }

  struct Result {
    Vec x;
    SolveStatus status = SolveStatus::max_iter;
    Residuals res;
    int iterations = 0;
  };

  Result run(const SolverOptions& opt);

 private:
  void equilibrate();
  void build_kkt();
  void set_scaling(const NTScaling& w);
  bool factor();
  Vec kkt_solve(const Vec& rhs);
  Vec kkt_residual(const Vec& rhs, const Vec& x) const;
  Residuals measure(const Vec& x, const Vec& y, const Vec& z, const Vec& s, double tau) const;

  SpMat A0_, G0_;
  Vec b0_, h0_, c0_, p0_;
  ConeLayout L_;
  Eigen::Index m_ = 0, p_ = 0, q_ = 0;

  // Equilibrated data.
  SpMat A_, G_;
  Vec b_, h_, c_, pd_;
  Vec D_, EA_, EG_;

  SpMat K_;
  std::vector<double*> w2_slots_;
  QuasiDefiniteLdl ldl_;
};

void Ipm::equilibrate() {
  D_ = Vec::Ones(m_);
  EA_ = Vec::Ones(p_);
  EG_ = Vec::Ones(q_);
  // Map G rows to scaling groups so each cone is scaled uniformly.
  std::vector<Eigen::Index> group(static_cast<std::size_t>(q_));
  for (std::size_t i = 0; i < L_.n_orth; ++i) group[i] = static_cast<Eigen::Index>(i);
  for (std::size_t k = 0; k < L_.soc_dim.size(); ++k)
    for (std::size_t j = 0; j < L_.soc_dim[k]; ++j)
      group[L_.soc_start[k] + j] = static_cast<Eigen::Index>(L_.soc_start[k]);

  for (int pass = 0; pass < 12; ++pass) {
    Vec col = Vec::Zero(m_), ra = Vec::Zero(p_), rg = Vec::Zero(q_);
    for (int j = 0; j < A0_.outerSize(); ++j)
      for (SpMat::InnerIterator it(A0_, j); it; ++it) {
        const double v = std::abs(it.value() * EA_[it.row()] * D_[j]);
        col[j] = std::max(col[j], v);
        ra[it.row()] = std::max(ra[it.row()], v);
      }
    for (int j = 0; j < G0_.outerSize(); ++j)
      for (SpMat::InnerIterator it(G0_, j); it; ++it) {
        const double v = std::abs(it.value() * EG_[it.row()] * D_[j]);
        col[j] = std::max(col[j], v);
        const auto g = group[static_cast<std::size_t>(it.row())];
        rg[g] = std::max(rg[g], v);
      }
    for (Eigen::Index j = 0; j < m_; ++j)
      if (col[j] > 0.0) D_[j] = std::clamp(D_[j] / std::sqrt(col[j]), 1e-4, 1e4);
    for (Eigen::Index i = 0; i < p_; ++i)
      if (ra[i] > 0.0) EA_[i] = std::clamp(EA_[i] / std::sqrt(ra[i]), 1e-4, 1e4);
    for (Eigen::Index i = 0; i < q_; ++i) {
      const auto g = group[static_cast<std::size_t>(i)];
      if (rg[g] > 0.0 && g == i) EG_[i] = std::clamp(EG_[i] / std::sqrt(rg[g]), 1e-4, 1e4);
    }
    for (Eigen::Index i = 0; i < q_; ++i) EG_[i] = EG_[group[static_cast<std::size_t>(i)]];
  }
  A_ = EA_.asDiagonal() * A0_ * D_.asDiagonal();
  G_ = EG_.asDiagonal() * G0_ * D_.asDiagonal();
  b_ = EA_.cwiseProduct(b0_);
  h_ = EG_.cwiseProduct(h0_);
  c_ = D_.cwiseProduct(c0_);
  pd_ = D_.cwiseProduct(D_).cwiseProduct(p0_);
}

void Ipm::build_kkt() {
  const Eigen::Index n = m_ + p_ + q_;
  std::vector<Triplet> trips;
  for (Eigen::Index j = 0; j < m_; ++j) trips.emplace_back(j, j, pd_[j] + kReg);
  for (int j = 0; j < A_.outerSize(); ++j)
    for (SpMat::InnerIterator it(A_, j); it; ++it) trips.emplace_back(m_ + it.row(), j, it.value());
  for (Eigen::Index i = 0; i < p_; ++i) trips.emplace_back(m_ + i, m_ + i, -kReg);
  for (int j = 0; j < G_.outerSize(); ++j)
    for (SpMat::InnerIterator it(G_, j); it; ++it)
      trips.emplace_back(m_ + p_ + it.row(), j, it.value());
  const Eigen::Index off = m_ + p_;
  for (std::size_t i = 0; i < L_.n_orth; ++i) {
    const auto r = off + static_cast<Eigen::Index>(i);
    trips.emplace_back(r, r, -1.0);
  }
  for (std::size_t k = 0; k < L_.soc_dim.size(); ++k)
    for (std::size_t a = 0; a < L_.soc_dim[k]; ++a)
      for (std::size_t b = 0; b <= a; ++b)
        trips.emplace_back(off + static_cast<Eigen::Index>(L_.soc_start[k] + a),
                           off + static_cast<Eigen::Index>(L_.soc_start[k] + b), -1.0);
  K_.resize(n, n);
  K_.setFromTriplets(trips.begin(), trips.end());
  K_.makeCompressed();

  w2_slots_.clear();
  for (std::size_t i = 0; i < L_.n_orth; ++i) {
    const auto r = off + static_cast<Eigen::Index>(i);
    w2_slots_.push_back(&K_.coeffRef(r, r));
  }
  for (std::size_t k = 0; k < L_.soc_dim.size(); ++k)
    for (std::size_t a = 0; a < L_.soc_dim[k]; ++a)
      for (std::size_t b = 0; b <= a; ++b)
        w2_slots_.push_back(&K_.coeffRef(off + static_cast<Eigen::Index>(L_.soc_start[k] + a),
                                         off + static_cast<Eigen::Index>(L_.soc_start[k] + b)));
  std::vector<int> sign(static_cast<std::size_t>(n), -1);
  std::fill(sign.begin(), sign.begin() + m_, 1);
  ldl_.analyze(K_, std::move(sign));
}

void Ipm::set_scaling(const NTScaling& w) {
  std::size_t slot = 0;
  for (std::size_t i = 0; i < L_.n_orth; ++i)
    *w2_slots_[slot++] = -(w.orth[static_cast<Eigen::Index>(i)] *
                               w.orth[static_cast<Eigen::Index>(i)] +
                           kReg);
  for (std::size_t k = 0; k < L_.soc_dim.size(); ++k)
    for (std::size_t a = 0; a < L_.soc_dim[k]; ++a)
      for (std::size_t b = 0; b <= a; ++b)
        *w2_slots_[slot++] = -w.soc_w2(k, a, b) - (a == b ? kReg : 0.0);
}

bool Ipm::factor() { return ldl_.factor(K_); }

Vec Ipm::kkt_residual(const Vec& rhs, const Vec& x) const {
  // Against the unregularized matrix, accumulated in long double since K
  // spans many decades.
  const Eigen::Index n = rhs.size();
  std::vector<long double> acc(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double reg = i < m_ ? kReg : -kReg;
    acc[i] = static_cast<long double>(rhs[i]) + static_cast<long double>(reg) * x[i];
  }
  for (int j = 0; j < K_.outerSize(); ++j)
    for (SpMat::InnerIterator it(K_, j); it; ++it) {
      const long double v = it.value();
      acc[it.row()] -= v * x[j];
      if (it.row() != j) acc[j] -= v * x[it.row()];
    }
  Vec r(n);
  for (Eigen::Index i = 0; i < n; ++i) r[i] = static_cast<double>(acc[i]);
  return r;
}

Vec Ipm::kkt_solve(const Vec& rhs) {
  const double target = 1e-14 * (1.0 + rhs.lpNorm<Eigen::Infinity>());
  Vec x = ldl_.solve(rhs);
  Vec r = kkt_residual(rhs, x);
  for (int k = 0; k < 3 && r.lpNorm<Eigen::Infinity>() > target; ++k) {
    const Vec x1 = x + ldl_.solve(r);
    const Vec r1 = kkt_residual(rhs, x1);
    if (!(r1.lpNorm<Eigen::Infinity>() < r.lpNorm<Eigen::Infinity>())) break;
    x = x1;
    r = r1;
  }
  if (r.lpNorm<Eigen::Infinity>() <= target) return x;

  // Refinement stalls when pivots were perturbed; GMRES preconditioned by
  // the same factorization recovers the lost directions.
  constexpr int kRestart = 30;
  for (int cycle = 0; cycle < 2; ++cycle) {
    const double beta = r.norm();
    if (!(beta > 0.0)) break;
    std::vector<Vec> V{r / beta}, Z;
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(kRestart + 1, kRestart);
    Vec g = Vec::Zero(kRestart + 1), cs = Vec::Zero(kRestart), sn = Vec::Zero(kRestart);
    g[0] = beta;
    int j = 0;
    for (; j < kRestart; ++j) {
      Z.push_back(ldl_.solve(V[j]));
      Vec w = -kkt_residual(Vec::Zero(rhs.size()), Z[j]);
      for (int i = 0; i <= j; ++i) {
        H(i, j) = w.dot(V[i]);
        w -= H(i, j) * V[i];
      }
      H(j + 1, j) = w.norm();
      for (int i = 0; i < j; ++i) {
        const double t = cs[i] * H(i, j) + sn[i] * H(i + 1, j);
        H(i + 1, j) = -sn[i] * H(i, j) + cs[i] * H(i + 1, j);
        H(i, j) = t;
      }
      const double den = std::hypot(H(j, j), H(j + 1, j));
      if (den == 0.0) break;
      cs[j] = H(j, j) / den;
      sn[j] = H(j + 1, j) / den;
      H(j, j) = den;
      H(j + 1, j) = 0.0;
      g[j + 1] = -sn[j] * g[j];
      g[j] *= cs[j];
      if (std::abs(g[j + 1]) <= 1e-3 * target || H(j + 1, j) == 0.0) {
        ++j;
        break;
      }
      V.push_back(w / (w.norm() > 0.0 ? w.norm() : 1.0));
      if (j + 1 == kRestart) {
        ++j;
        break;
      }
    }
    const Vec y = H.topLeftCorner(j, j).triangularView<Eigen::Upper>().solve(g.head(j));
    Vec x1 = x;
    for (int i = 0; i < j; ++i) x1 += y[i] * Z[i];
    const Vec r1 = kkt_residual(rhs, x1);
    if (!(r1.lpNorm<Eigen::Infinity>() < r.lpNorm<Eigen::Infinity>())) break;
    x = x1;
    r = r1;
    if (r.lpNorm<Eigen::Infinity>() <= target) break;
  }
  return x;
}

Residuals Ipm::measure(const Vec& xs, const Vec& ys, const Vec& zs, const Vec& ss,
                       double tau) const {
  const Vec x = D_.cwiseProduct(xs) / tau;
  const Vec y = EA_.cwiseProduct(ys) / tau;
  const Vec z = EG_.cwiseProduct(zs) / tau;
  const Vec s = ss.cwiseQuotient(EG_) / tau;
  Residuals r;
  const double pe = p_ ? (A0_ * x - b0_).lpNorm<Eigen::Infinity>() /
                             (1.0 + b0_.lpNorm<Eigen::Infinity>())
                       : 0.0;
  const double pi = q_ ? (G0_ * x + s - h0_).lpNorm<Eigen::Infinity>() /
                             (1.0 + h0_.lpNorm<Eigen::Infinity>())
                       : 0.0;
  r.pres = std::max(pe, pi);
  Vec dr = p0_.cwiseProduct(x) + c0_;
  if (p_) dr += A0_.transpose() * y;
  if (q_) dr += G0_.transpose() * z;
  r.dres = dr.lpNorm<Eigen::Infinity>() / (1.0 + c0_.lpNorm<Eigen::Infinity>());
  const double quad = 0.5 * x.dot(p0_.cwiseProduct(x));
  r.pcost = c0_.dot(x) + quad;
  const double dcost = -b0_.dot(y) - h0_.dot(z) - quad;
  r.gap = std::max(0.0, s.dot(z));
  if (r.pcost < 0.0) r.relgap = r.gap / -r.pcost;
  else if (dcost > 0.0) r.relgap = r.gap / dcost;
  return r;
}

Ipm::Result Ipm::run(const SolverOptions& opt) {
  Result best;
  best.x = Vec::Zero(m_);
  const Eigen::Index n = m_ + p_ + q_;

  // Initial point from two regularized least-squares systems.
  NTScaling w;
  w.identity(L_);
  set_scaling(w);
  if (!factor()) return best;
  Vec rhs = Vec::Zero(n);
  rhs.segment(m_, p_) = b_;
  rhs.tail(q_) = h_;
  Vec sol = kkt_solve(rhs);
  Vec x = sol.head(m_);
  Vec s = -sol.tail(q_);
  bring_to_cone(L_, s);
  rhs.setZero();
  rhs.head(m_) = -c_;
  sol = kkt_solve(rhs);
  Vec y = sol.segment(m_, p_);
  Vec z = sol.tail(q_);
  bring_to_cone(L_, z);
  double tau = 1.0, kappa = 1.0;

  const double deg = L_.degree();
  int stalled = 0;
  Vec sol1(n);
  for (int it = 0;; ++it) {
    // HSDE residuals.
    const Vec px = pd_.cwiseProduct(x);
    Vec rx = px + c_ * tau;
    if (p_) rx += A_.transpose() * y;
    if (q_) rx += G_.transpose() * z;
    const Vec ry = A_ * x - b_ * tau;
    const Vec rz = G_ * x + s - h_ * tau;
    const double rt = kappa + c_.dot(x) + b_.dot(y) + h_.dot(z) + x.dot(px) / tau;

    const Residuals res = measure(x, y, z, s, tau);
    if (it == 0 || res.merit() < best.res.merit()) {
      best.x = D_.cwiseProduct(x) / tau;
      best.res = res;
      stalled = 0;
    } else if (best.res.merit() <= 1e-6 && ++stalled >= kMaxStall) {
      return best;
    }
    best.iterations = it;
    if (res.pres <= opt.tol && res.dres <= opt.tol && std::min(res.gap, res.relgap) <= opt.tol) {
      best.x = D_.cwiseProduct(x) / tau;
      best.res = res;
      best.status = SolveStatus::optimal;
      return best;
    }
    if (kappa > tau) {
      const Vec yc = EA_.cwiseProduct(y), zc = EG_.cwiseProduct(z);
      const double bz = b0_.dot(yc) + h0_.dot(zc);
      if (bz < 0.0) {
        Vec ar = Vec::Zero(m_);
        if (p_) ar += A0_.transpose() * yc;
        if (q_) ar += G0_.transpose() * zc;
        if (ar.lpNorm<Eigen::Infinity>() <= opt.tol * -bz) {
          best.status = SolveStatus::infeasible;
          return best;
        }
      }
      const Vec xc = D_.cwiseProduct(x);
      const double cx = c0_.dot(xc);
      if (cx < 0.0) {
        double r = p0_.cwiseProduct(xc).lpNorm<Eigen::Infinity>();
        if (p_) r = std::max(r, (A0_ * xc).lpNorm<Eigen::Infinity>());
        if (q_) r = std::max(r, (G0_ * xc + s.cwiseQuotient(EG_)).lpNorm<Eigen::Infinity>());
        if (r <= opt.tol * -cx) {
          best.status = SolveStatus::unbounded;
          return best;
        }
      }
    }
    if (it >= opt.max_iter) return best;

    if (!w.update(L_, s, z)) return best;
    set_scaling(w);
    if (!factor()) return best;
    rhs.head(m_) = -c_;
    rhs.segment(m_, p_) = b_;
    rhs.tail(q_) = h_;
    sol1 = kkt_solve(rhs);
    const Vec xi = x / tau;
    const Vec cq = c_ + 2.0 * pd_.cwiseProduct(xi);
    const double xpx = xi.dot(pd_.cwiseProduct(xi));
    const double den1 = -kappa / tau + cq.dot(sol1.head(m_)) + b_.dot(sol1.segment(m_, p_)) +
                        h_.dot(sol1.tail(q_)) - xpx;

    const Vec& lam = w.lambda;
    const double mu = (s.dot(z) + tau * kappa) / (deg + 1.0);

    struct Dir {
      Vec dx, dy, dz, ds;
      double dtau, dkappa;
    };
    const auto direction = [&](double sigma, const Vec& dsv, double dk) {
      const Vec wv = w.apply(L_, cone_divide(L_, lam, dsv), false);
      Vec r0(n);
      r0.head(m_) = -(1.0 - sigma) * rx;
      r0.segment(m_, p_) = -(1.0 - sigma) * ry;
      r0.tail(q_) = -(1.0 - sigma) * rz - wv;
      const Vec sol0 = kkt_solve(r0);
      Dir d;
      d.dtau = (-(1.0 - sigma) * rt - dk / tau - cq.dot(sol0.head(m_)) -
                b_.dot(sol0.segment(m_, p_)) - h_.dot(sol0.tail(q_))) /
               den1;
      const Vec dsol = sol0 + d.dtau * sol1;
      d.dx = dsol.head(m_);
      d.dy = dsol.segment(m_, p_);
      d.dz = dsol.tail(q_);
      // ds = W (lambda \ d_s) - W^2 dz
      d.ds = wv - w.apply(L_, w.apply(L_, d.dz, false), false);
      d.dkappa = (dk - kappa * d.dtau) / tau;
      return d;
    };
    const auto step_length = [&](const Dir& d) {
      double a = std::min(max_step(L_, s, d.ds), max_step(L_, z, d.dz));
      if (d.dtau < 0.0) a = std::min(a, -tau / d.dtau);
      if (d.dkappa < 0.0) a = std::min(a, -kappa / d.dkappa);
      return a;
    };

    // Predictor.
    const Vec lam2 = cone_product(L_, lam, lam);
    const Dir aff = direction(0.0, -lam2, -kappa * tau);
    const double alpha_aff = std::min(1.0, step_length(aff));
    const double sigma = std::clamp(std::pow(1.0 - alpha_aff, 3), 1e-4, 1.0);

    // Corrector.
    Vec dsv = -lam2 - cone_product(L_, w.apply(L_, aff.ds, true), w.apply(L_, aff.dz, false));
    add_identity(L_, dsv, sigma * mu);
    const double dk = -kappa * tau - aff.dkappa * aff.dtau + sigma * mu;
    const Dir d = direction(sigma, dsv, dk);
    const double alpha = std::min(1.0, kStep * step_length(d));
    if (!(alpha > 1e-12) || !d.dx.allFinite()) return best;

    x += alpha * d.dx;
    y += alpha * d.dy;
    z += alpha * d.dz;
    s += alpha * d.ds;
    tau += alpha * d.dtau;
    kappa += alpha * d.dkappa;
  }
}

}  // namespace

void validate(const ConicProblem& prob) {
  const auto n = prob.n_vars;
  if (prob.c.size() != n || prob.h_diag.size() != n || prob.lb.size() != n || prob.ub.size() != n)
    throw ConicError("problem vectors must have n_vars entries");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(prob.c[i]) || !std::isfinite(prob.h_diag[i]))
      throw ConicError("non-finite objective coefficient for variable " + std::to_string(i));
    if (prob.h_diag[i] < 0.0)
      throw ConicError("negative quadratic weight on variable " + std::to_string(i));
    if (prob.lb[i] > prob.ub[i] || std::isnan(prob.lb[i]) || std::isnan(prob.ub[i]))
      throw ConicError("invalid bounds on variable " + std::to_string(i));
  }
  for (const auto& row : prob.equalities) check_terms(row.terms, n, "equality");
  for (const auto& e : prob.nonneg) check_terms(e.terms, n, "inequality");
  for (const auto& cone : prob.cones) {
    check_terms(cone.head.terms, n, "cone head");
    for (const auto& e : cone.body) check_terms(e.terms, n, "cone body");
  }
}

double objective_value(const ConicProblem& prob, const std::vector<double>& z) {
  double v = prob.offset;
  for (std::size_t i = 0; i < prob.n_vars; ++i) v += prob.c[i] * z[i] + prob.h_diag[i] * z[i] * z[i];
  return v;
}

double max_violation(const ConicProblem& prob, const std::vector<double>& z) {
  double worst = 0.0;
  for (std::size_t i = 0; i < prob.n_vars; ++i) {
    worst = std::max({worst, prob.lb[i] - z[i], z[i] - prob.ub[i]});
  }
  for (const auto& row : prob.equalities) {
    double v = -row.rhs;
    for (const auto& [i, a] : row.terms) v += a * z[i];
    worst = std::max(worst, std::abs(v));
  }
  for (const auto& e : prob.nonneg) worst = std::max(worst, -eval(e, z));
  for (const auto& cone : prob.cones) {
    double nrm = 0.0;
    for (const auto& e : cone.body) nrm += eval(e, z) * eval(e, z);
    worst = std::max(worst, std::sqrt(nrm) - eval(cone.head, z));
  }
  return worst;
}

ConicSolution solve(const ConicProblem& prob, const SolverOptions& options) {
  validate(prob);
  const std::size_t n = prob.n_vars;

  // Substitute fixed variables.
  std::vector<long> col(n, -1);
  std::size_t m = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (prob.lb[i] != prob.ub[i]) col[i] = static_cast<long>(m++);
  std::vector<double> fixed(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (col[i] < 0) fixed[i] = prob.lb[i];

  // Returned point and objective always come from the original problem.
  ConicSolution out;
  const auto finish = [&](const Vec& x) {
    out.z = fixed;
    for (std::size_t i = 0; i < n; ++i)
      if (col[i] >= 0) out.z[i] = x[col[i]];
    out.objective = objective_value(prob, out.z);
    return out;
  };

  double kappa_c = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (col[i] >= 0) kappa_c = std::max({kappa_c, std::abs(prob.c[i]), 2.0 * prob.h_diag[i]});
  if (kappa_c == 0.0) kappa_c = 1.0;

  Vec c = Vec::Zero(static_cast<Eigen::Index>(m)), pd = c;
  for (std::size_t i = 0; i < n; ++i) {
    if (col[i] < 0) continue;
    c[col[i]] = prob.c[i] / kappa_c;
    pd[col[i]] = 2.0 * prob.h_diag[i] / kappa_c;
  }

  // Equalities.
  std::vector<Triplet> at;
  std::vector<double> b;
  for (const auto& row : prob.equalities) {
    double rhs = row.rhs;
    std::vector<Triplet> entries;
    for (const auto& [i, a] : row.terms) {
      if (col[i] < 0) rhs -= a * fixed[i];
      else if (a != 0.0) entries.emplace_back(static_cast<int>(b.size()), col[i], a);
    }
    if (entries.empty()) {
      if (std::abs(rhs) > 1e-12 * (1.0 + std::abs(row.rhs))) {
        out.status = SolveStatus::infeasible;
        return finish(Vec::Zero(static_cast<Eigen::Index>(m)));
      }
      continue;
    }
    at.insert(at.end(), entries.begin(), entries.end());
    b.push_back(rhs);
  }

  // Cone rows: s = h - G x, orthant rows first.
  ConeLayout layout;
  std::vector<Triplet> gt;
  std::vector<double> h;
  const auto add_row = [&](const AffineExpr& e, double sign) {
    // s = sign * (e(z))
    double cst = sign * e.constant;
    const int r = static_cast<int>(h.size());
    for (const auto& [i, a] : e.terms) {
      if (col[i] < 0) cst += sign * a * fixed[i];
      else if (a != 0.0) gt.emplace_back(r, col[i], -sign * a);
    }
    h.push_back(cst);
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (col[i] < 0) continue;
    if (std::isfinite(prob.lb[i])) add_row({{{i, 1.0}}, -prob.lb[i]}, 1.0);
    if (std::isfinite(prob.ub[i])) add_row({{{i, 1.0}}, -prob.ub[i]}, -1.0);
  }
  for (const auto& e : prob.nonneg) add_row(e, 1.0);
  for (const auto& cone : prob.cones)
    if (cone.body.empty()) add_row(cone.head, 1.0);
  layout.n_orth = h.size();
  for (const auto& cone : prob.cones) {
    if (cone.body.empty()) continue;
    layout.soc_start.push_back(h.size());
    layout.soc_dim.push_back(cone.body.size() + 1);
    add_row(cone.head, 1.0);
    for (const auto& e : cone.body) add_row(e, 1.0);
  }
  layout.rows = h.size();

  if (m == 0) {
    const Vec none;
    finish(none);
    const double viol = max_violation(prob, out.z);
    out.status = viol <= options.tol ? SolveStatus::optimal : SolveStatus::infeasible;
    out.primal_residual = viol;
    out.dual_residual = 0.0;
    out.gap = 0.0;
    return out;
  }

  const auto mi = static_cast<Eigen::Index>(m);
  SpMat A(static_cast<Eigen::Index>(b.size()), mi), G(static_cast<Eigen::Index>(h.size()), mi);
  A.setFromTriplets(at.begin(), at.end());
  G.setFromTriplets(gt.begin(), gt.end());
  Ipm ipm(std::move(A), Eigen::Map<Vec>(b.data(), static_cast<Eigen::Index>(b.size())),
          std::move(G), Eigen::Map<Vec>(h.data(), static_cast<Eigen::Index>(h.size())), c, pd,
          layout);
  const auto res = ipm.run(options);
  out.status = res.status;
  out.iterations = res.iterations;
  out.primal_residual = res.res.pres;
  out.dual_residual = res.res.dres;
  out.gap = std::min(res.res.gap, res.res.relgap);
  return finish(res.x);
}

std::string dump(const ConicProblem& prob) {
  std::ostringstream os;
  os << std::setprecision(17);
  const auto terms = [&](const Terms& t) {
    for (const auto& [i, a] : t) os << ' ' << i << ':' << a;
  };
  os << "vars " << prob.n_vars << '\n';
  for (std::size_t i = 0; i < prob.n_vars; ++i)
    if (prob.c[i] != 0.0 || prob.h_diag[i] != 0.0)
      os << "obj " << i << ' ' << prob.c[i] << ' ' << prob.h_diag[i] << '\n';
  os << "offset " << prob.offset << '\n';
  for (std::size_t i = 0; i < prob.n_vars; ++i)
    if (std::isfinite(prob.lb[i]) || std::isfinite(prob.ub[i]))
      os << "bound " << i << ' ' << prob.lb[i] << ' ' << prob.ub[i] << '\n';
  for (const auto& row : prob.equalities) {
    os << "eq " << row.rhs << " :";
    terms(row.terms);
    os << '\n';
  }
  for (const auto& e : prob.nonneg) {
    os << "ge " << e.constant << " :";
    terms(e.terms);
    os << '\n';
  }
  for (const auto& cone : prob.cones) {
    os << "soc " << cone.body.size() + 1 << " head " << cone.head.constant << " :";
    terms(cone.head.terms);
    for (const auto& e : cone.body) {
      os << " | body " << e.constant << " :";
      terms(e.terms);
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace eem
