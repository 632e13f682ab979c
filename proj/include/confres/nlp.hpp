#pragma once

// Smooth nonlinear programming: problem representation with sparse
// derivatives, a primal-dual interior-point solver with slack variables and
// warm starts, KKT residual reporting, and a block-structured builder that
// assembles exact Lagrangian Hessians from small dense terms.
//
// Problem form:
//   min f(x)  s.t.  c_E(x) = 0,  g(x) >= 0,  lower <= x <= upper.
// Lagrangian convention: L = sigma*f - y_E' c_E - y_I' g - z_L'(x-l) - z_U'(u-x),
// so optimal y_I, z_L, z_U are all nonnegative.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace confres {

using VecX = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;

class CallbackFailure : public std::runtime_error {
 public:
  CallbackFailure(const std::string& what, int index)
      : std::runtime_error(what + " (index " + std::to_string(index) + ")"),
        index_(index) {}
  int index() const { return index_; }

 private:
  int index_ = -1;
};

struct NlpProblem {
  int n = 0;
  int m_e = 0;
  int m_i = 0;
  VecX lower;  // size n; -inf allowed
  VecX upper;  // size n; +inf allowed

  std::function<double(const VecX&)> objective;
  std::function<VecX(const VecX&)> gradient;
  std::function<VecX(const VecX&)> eq_value;        // size m_e
  std::function<SpMat(const VecX&)> eq_jacobian;    // m_e x n
  std::function<VecX(const VecX&)> ineq_value;      // size m_i, g(x) >= 0
  std::function<SpMat(const VecX&)> ineq_jacobian;  // m_i x n
  /// sigma*H_f - sum_j y_e(j) H_{c_j} - sum_j y_i(j) H_{g_j}; n x n symmetric
  /// (both triangles). Optional: when absent the solver falls back to a
  /// damped quasi-Newton approximation.
  std::function<SpMat(const VecX&, double sigma, const VecX& y_e,
                      const VecX& y_i)>
      lag_hessian;

  void validate() const {
    if (n <= 0) throw std::invalid_argument("nlp: empty problem");
    if (lower.size() != n || upper.size() != n)
      throw std::invalid_argument("nlp: bound vectors must have size n");
    for (int i = 0; i < n; ++i)
      if (lower(i) > upper(i))
        throw std::invalid_argument("nlp: contradictory bounds lower > upper");
    if (!objective || !gradient)
      throw std::invalid_argument("nlp: objective callbacks required");
    if (m_e > 0 && (!eq_value || !eq_jacobian))
      throw std::invalid_argument("nlp: equality callbacks required");
    if (m_i > 0 && (!ineq_value || !ineq_jacobian))
      throw std::invalid_argument("nlp: inequality callbacks required");
  }
};

enum class SolveStatus { Optimal, Acceptable, MaxIter, Infeasible, Diverged };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::Acceptable: return "Acceptable";
    case SolveStatus::MaxIter: return "MaxIter";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::Diverged: return "Diverged";
  }
  return "?";
}

struct KktResiduals {
  double stationarity = 0.0;      // dual residual, inf-norm
  double eq_violation = 0.0;      // ||c_E||_inf
  double ineq_violation = 0.0;    // ||min(g, 0)||_inf and bound violation
  double complementarity = 0.0;   // max |y_i g_i|, |z (x-bound)|
  double dual_feasibility = 0.0;  // max(0, -min multiplier)

  double max() const {
    return std::max({stationarity, eq_violation, ineq_violation,
                     complementarity, dual_feasibility});
  }
};

struct KktReport {
  KktResiduals residuals;
  double tol = 0.0;
  bool stationarity_ok = false;
  bool primal_feasible = false;
  bool dual_feasible = false;
  bool complementary = false;
  bool all_ok = false;
};

struct NlpSolution {
  VecX x;
  VecX y_eq;     // equality multipliers
  VecX y_ineq;   // inequality multipliers, >= 0 at optimality
  VecX z_lower;  // bound multipliers, >= 0
  VecX z_upper;
  SolveStatus status = SolveStatus::Diverged;
  int iterations = 0;
  KktResiduals kkt;
  double objective = 0.0;
};

struct SolverConfig {
  double tol = 1e-6;
  int max_iter = 200;
  // Acceptable-level termination: stop with status Acceptable after the
  // scaled KKT error has stayed below tol_acceptable for acceptable_iter
  // consecutive iterations, or salvage the final iterate at max_iter if it
  // meets this level. 0 disables it. Intended for receding-horizon use where
  // degenerate contact-active sets stall superlinear convergence.
  double tol_acceptable = 0.0;
  int acceptable_iter = 10;
  double mu_init = 1e-1;       // initial barrier parameter
  double mu_shrink = 0.2;      // linear barrier reduction factor
  double mu_power = 1.5;       // superlinear barrier reduction exponent
  double tau_min = 0.995;      // fraction-to-boundary floor
  double armijo_c = 1e-4;      // sufficient-decrease coefficient
  double backtrack = 0.5;      // line-search step shrink
  double bound_push = 1e-2;    // relative interior push for x0
  int max_restarts = 3;        // re-centering retries after a stalled search
  std::ostream* log = nullptr;  // optional CSV iteration log
};

/// Optional warm start: any empty vector is treated as absent.
struct WarmStart {
  VecX y_eq;
  VecX y_ineq;
  VecX z_lower;
  VecX z_upper;

  static WarmStart from(const NlpSolution& s) {
    return {s.y_eq, s.y_ineq, s.z_lower, s.z_upper};
  }
};

namespace detail {

inline void require_finite(const VecX& v, const char* what) {
  for (int i = 0; i < v.size(); ++i)
    if (!std::isfinite(v(i))) throw CallbackFailure(what, i);
}

inline void require_finite(const SpMat& m, const char* what) {
  for (int k = 0; k < m.outerSize(); ++k)
    for (SpMat::InnerIterator it(m, k); it; ++it)
      if (!std::isfinite(it.value()))
        throw CallbackFailure(what, static_cast<int>(it.row()));
}

/// Test-support finite differences (central, h = 1e-6).
inline VecX fd_gradient(const std::function<double(const VecX&)>& f,
                        const VecX& x, double h = 1e-6) {
  VecX g(x.size());
  VecX p = x;
  for (int i = 0; i < x.size(); ++i) {
    p(i) = x(i) + h;
    const double fp = f(p);
    p(i) = x(i) - h;
    const double fm = f(p);
    p(i) = x(i);
    g(i) = (fp - fm) / (2 * h);
  }
  return g;
}

inline Eigen::MatrixXd fd_jacobian(
    const std::function<VecX(const VecX&)>& f, const VecX& x,
    double h = 1e-6) {
  const VecX f0 = f(x);
  Eigen::MatrixXd j(f0.size(), x.size());
  VecX p = x;
  for (int i = 0; i < x.size(); ++i) {
    p(i) = x(i) + h;
    const VecX fp = f(p);
    p(i) = x(i) - h;
    const VecX fm = f(p);
    p(i) = x(i);
    j.col(i) = (fp - fm) / (2 * h);
  }
  return j;
}

}  // namespace detail

/// KKT residuals of an arbitrary primal-dual point for the original problem.
inline KktReport check_kkt(const NlpProblem& p, const NlpSolution& s,
                           double tol) {
  const double inf = std::numeric_limits<double>::infinity();
  KktResiduals r;

  VecX grad = p.gradient(s.x);
  VecX stat = grad;
  if (p.m_e > 0) stat -= p.eq_jacobian(s.x).transpose() * s.y_eq;
  VecX g;
  if (p.m_i > 0) {
    g = p.ineq_value(s.x);
    stat -= p.ineq_jacobian(s.x).transpose() * s.y_ineq;
  }
  if (s.z_lower.size() == p.n) stat -= s.z_lower;
  if (s.z_upper.size() == p.n) stat += s.z_upper;
  r.stationarity = stat.size() ? stat.cwiseAbs().maxCoeff() : 0.0;

  if (p.m_e > 0) r.eq_violation = p.eq_value(s.x).cwiseAbs().maxCoeff();
  double pviol = 0.0;
  for (int i = 0; i < p.m_i; ++i) pviol = std::max(pviol, -g(i));
  for (int i = 0; i < p.n; ++i) {
    if (p.lower(i) > -inf) pviol = std::max(pviol, p.lower(i) - s.x(i));
    if (p.upper(i) < inf) pviol = std::max(pviol, s.x(i) - p.upper(i));
  }
  r.ineq_violation = pviol;

  double comp = 0.0, dual = 0.0;
  for (int i = 0; i < p.m_i; ++i) {
    comp = std::max(comp, std::abs(s.y_ineq(i) * g(i)));
    dual = std::max(dual, -s.y_ineq(i));
  }
  for (int i = 0; i < p.n; ++i) {
    if (s.z_lower.size() == p.n && p.lower(i) > -inf) {
      comp = std::max(comp, std::abs(s.z_lower(i) * (s.x(i) - p.lower(i))));
      dual = std::max(dual, -s.z_lower(i));
    }
    if (s.z_upper.size() == p.n && p.upper(i) < inf) {
      comp = std::max(comp, std::abs(s.z_upper(i) * (p.upper(i) - s.x(i))));
      dual = std::max(dual, -s.z_upper(i));
    }
  }
  r.complementarity = comp;
  r.dual_feasibility = std::max(0.0, dual);

  KktReport rep;
  rep.residuals = r;
  rep.tol = tol;
  rep.stationarity_ok = r.stationarity <= tol;
  rep.primal_feasible = std::max(r.eq_violation, r.ineq_violation) <= tol;
  rep.dual_feasible = r.dual_feasibility <= tol;
  rep.complementary = r.complementarity <= tol;
  rep.all_ok = rep.stationarity_ok && rep.primal_feasible &&
               rep.dual_feasible && rep.complementary;
  return rep;
}

namespace detail {

/// Damped BFGS approximation of the Lagrangian Hessian; used when the problem
/// does not supply exact second derivatives.
class BfgsHessian {
 public:
  explicit BfgsHessian(int n) : b_(Eigen::MatrixXd::Identity(n, n)) {}

  void update(const VecX& step, const VecX& grad_diff) {
    const double sy = step.dot(grad_diff);
    const VecX bs = b_ * step;
    const double sbs = step.dot(bs);
    if (sbs <= 1e-16 || step.norm() < 1e-14) return;
    // Powell damping keeps the update positive definite.
    VecX r = grad_diff;
    if (sy < 0.2 * sbs) {
      const double theta = 0.8 * sbs / (sbs - sy);
      r = theta * grad_diff + (1.0 - theta) * bs;
    }
    const double sr = step.dot(r);
    if (sr <= 1e-16) return;
    b_ += r * r.transpose() / sr - bs * bs.transpose() / sbs;
  }

  const Eigen::MatrixXd& matrix() const { return b_; }

 private:
  Eigen::MatrixXd b_;
};

struct IpState {
  VecX x, s;            // primal and inequality slacks (g(x) - s = 0, s > 0)
  VecX y_e, w;          // equality and slack-constraint multipliers
  VecX z_l, z_u;        // bound multipliers
};

}  // namespace detail

/// Primal-dual interior-point solve. Inequalities get slacks; finite variable
/// bounds are handled by a log barrier with primal-dual bound multipliers.
/// Newton steps on the perturbed KKT system use a sparse symmetric-indefinite
/// factorization with inertia correction, a fraction-to-boundary rule, and an
/// Armijo search on a barrier + l1-penalty merit function. The barrier
/// parameter decreases monotonically.
inline NlpSolution solve(const NlpProblem& p, VecX x0,
                         const std::optional<WarmStart>& warm = std::nullopt,
                         const SolverConfig& cfg = SolverConfig{}) {
  p.validate();
  const double inf = std::numeric_limits<double>::infinity();
  const int n = p.n, me = p.m_e, mi = p.m_i;

  const auto eval_f = [&](const VecX& x) {
    const double v = p.objective(x);
    if (!std::isfinite(v)) throw CallbackFailure("objective not finite", -1);
    return v;
  };
  const auto eval_grad = [&](const VecX& x) {
    VecX g = p.gradient(x);
    detail::require_finite(g, "gradient not finite");
    return g;
  };
  const auto eval_ce = [&](const VecX& x) {
    VecX c = me > 0 ? p.eq_value(x) : VecX(0);
    detail::require_finite(c, "equality constraint not finite");
    return c;
  };
  const auto eval_gi = [&](const VecX& x) {
    VecX g = mi > 0 ? p.ineq_value(x) : VecX(0);
    detail::require_finite(g, "inequality constraint not finite");
    return g;
  };

  // Push the initial point into the strict interior of the bounds.
  detail::IpState st;
  st.x = x0;
  for (int i = 0; i < n; ++i) {
    const double lo = p.lower(i), hi = p.upper(i);
    if (lo > -inf && hi < inf) {
      const double pad = std::min(cfg.bound_push * std::max(1.0, hi - lo),
                                  0.5 * (hi - lo));
      st.x(i) = std::clamp(st.x(i), lo + pad, hi - pad);
    } else if (lo > -inf) {
      st.x(i) = std::max(st.x(i), lo + cfg.bound_push * std::max(1.0, std::abs(lo)));
    } else if (hi < inf) {
      st.x(i) = std::min(st.x(i), hi - cfg.bound_push * std::max(1.0, std::abs(hi)));
    }
  }

  VecX g = eval_gi(st.x);
  st.s = VecX(mi);
  // Floor keeps the initial barrier term and the w = mu/s multipliers sane
  // when the guess starts on (or beyond) a constraint boundary, e.g. plans
  // that begin in sustained contact at exactly the clearance distance.
  for (int i = 0; i < mi; ++i) st.s(i) = std::max(g(i), 1e-2);

  const bool warm_started =
      warm.has_value() &&
      (warm->y_eq.size() == me || me == 0) &&
      (warm->y_ineq.size() == mi || mi == 0);
  st.y_e = (warm_started && warm->y_eq.size() == me) ? warm->y_eq
                                                     : VecX::Zero(me);
  double mu = cfg.mu_init;
  st.w = VecX(mi);
  if (warm_started && warm->y_ineq.size() == mi)
    for (int i = 0; i < mi; ++i) st.w(i) = std::max(warm->y_ineq(i), 1e-8);
  else
    for (int i = 0; i < mi; ++i) st.w(i) = mu / st.s(i);

  st.z_l = VecX::Zero(n);
  st.z_u = VecX::Zero(n);
  for (int i = 0; i < n; ++i) {
    if (p.lower(i) > -inf)
      st.z_l(i) = (warm && warm->z_lower.size() == n)
                      ? std::max(warm->z_lower(i), 1e-8)
                      : mu / (st.x(i) - p.lower(i));
    if (p.upper(i) < inf)
      st.z_u(i) = (warm && warm->z_upper.size() == n)
                      ? std::max(warm->z_upper(i), 1e-8)
                      : mu / (p.upper(i) - st.x(i));
  }
  if (warm_started && mi > 0)
    mu = std::clamp(st.s.dot(st.w) / mi, cfg.tol / 10, cfg.mu_init);
  else if (warm_started)
    mu = std::max(cfg.tol / 10, cfg.mu_init * cfg.mu_shrink);

  std::unique_ptr<detail::BfgsHessian> bfgs;
  if (!p.lag_hessian) bfgs = std::make_unique<detail::BfgsHessian>(n);

  const auto make_solution = [&](SolveStatus status, int iters) {
    NlpSolution sol;
    sol.x = st.x;
    sol.y_eq = st.y_e;
    sol.y_ineq = st.w;
    sol.z_lower = st.z_l;
    sol.z_upper = st.z_u;
    sol.status = status;
    sol.iterations = iters;
    sol.objective = eval_f(st.x);
    sol.kkt = check_kkt(p, sol, cfg.tol).residuals;
    return sol;
  };

  // Barrier value of a primal trial point (infinite outside the interior).
  const auto barrier_value = [&](const VecX& x, const VecX& s, double mu_) {
    double v = eval_f(x);
    for (int i = 0; i < mi; ++i) {
      if (s(i) <= 0) return inf;
      v -= mu_ * std::log(s(i));
    }
    for (int i = 0; i < n; ++i) {
      if (p.lower(i) > -inf) {
        const double d = x(i) - p.lower(i);
        if (d <= 0) return inf;
        v -= mu_ * std::log(d);
      }
      if (p.upper(i) < inf) {
        const double d = p.upper(i) - x(i);
        if (d <= 0) return inf;
        v -= mu_ * std::log(d);
      }
    }
    return v;
  };

  // Filter line search state: pairs of (constraint violation, barrier value)
  // that future iterates must not be dominated by. Reset when mu changes.
  std::vector<std::pair<double, double>> filter;
  double theta_max = -1.0;   // set from the initial violation
  double delta_last = 0.0;   // last successful inertia-correction shift
  int restarts = 0;          // soft re-centerings taken so far
  VecX grad = eval_grad(st.x);
  VecX ce = eval_ce(st.x);
  SpMat je = me > 0 ? p.eq_jacobian(st.x) : SpMat(0, n);
  SpMat ji = mi > 0 ? p.ineq_jacobian(st.x) : SpMat(0, n);
  detail::require_finite(je, "equality jacobian not finite");
  detail::require_finite(ji, "inequality jacobian not finite");

  if (cfg.log)
    *cfg.log << "iteration,mu,merit,stationarity,eq_violation,"
                "ineq_violation,complementarity\n";

  int iter = 0;
  int acceptable_streak = 0;
  bool last_acceptable = false;
  for (; iter < cfg.max_iter; ++iter) {
    // Convergence of the original problem.
    {
      NlpSolution probe;
      probe.x = st.x;
      probe.y_eq = st.y_e;
      probe.y_ineq = st.w;
      probe.z_lower = st.z_l;
      probe.z_upper = st.z_u;
      const KktResiduals r = check_kkt(p, probe, cfg.tol).residuals;
      // Degenerate active sets can force multipliers many orders of magnitude
      // above the problem data, putting an absolute stationarity tolerance
      // below attainable floating-point accuracy. Scale the dual residuals by
      // the average multiplier magnitude when it is large.
      const double s_max = 100.0;
      const double dual_mass = st.y_e.lpNorm<1>() + st.w.lpNorm<1>() +
                               st.z_l.lpNorm<1>() + st.z_u.lpNorm<1>();
      const double dual_count =
          static_cast<double>(std::max(1, me + mi + 2 * n));
      const double s_d = std::max(s_max, dual_mass / dual_count) / s_max;
      const double stat_scaled = r.stationarity / s_d;
      const double comp_scaled = r.complementarity / s_d;
      if (cfg.log)
        *cfg.log << iter << ',' << mu << ',' << barrier_value(st.x, st.s, mu)
                 << ',' << r.stationarity << ',' << r.eq_violation << ','
                 << r.ineq_violation << ',' << r.complementarity << '\n';
      const double kkt_scaled =
          std::max({stat_scaled, r.eq_violation, r.ineq_violation,
                    comp_scaled, r.dual_feasibility});
      if (kkt_scaled <= cfg.tol)
        return make_solution(SolveStatus::Optimal, iter);
      if (cfg.tol_acceptable > 0.0) {
        last_acceptable = kkt_scaled <= cfg.tol_acceptable;
        acceptable_streak = last_acceptable ? acceptable_streak + 1 : 0;
        if (acceptable_streak >= cfg.acceptable_iter)
          return make_solution(SolveStatus::Acceptable, iter);
      }

      // Barrier subproblem convergence: shrink mu.
      double emu = std::max(stat_scaled, r.eq_violation);
      for (int i = 0; i < mi; ++i) {
        emu = std::max(emu, std::abs(g(i) - st.s(i)));
        emu = std::max(emu, std::abs(st.s(i) * st.w(i) - mu));
      }
      for (int i = 0; i < n; ++i) {
        if (p.lower(i) > -inf)
          emu = std::max(emu, std::abs((st.x(i) - p.lower(i)) * st.z_l(i) - mu));
        if (p.upper(i) < inf)
          emu = std::max(emu, std::abs((p.upper(i) - st.x(i)) * st.z_u(i) - mu));
      }
      if (emu <= 10.0 * mu) {
        const double mu_new = std::max(
            cfg.tol / 10,
            std::min(cfg.mu_shrink * mu, std::pow(mu, cfg.mu_power)));
        if (mu_new != mu) filter.clear();
        mu = mu_new;
      }
    }

    // Lagrangian Hessian (exact or quasi-Newton).
    SpMat h(n, n);
    if (p.lag_hessian) {
      h = p.lag_hessian(st.x, 1.0, st.y_e, st.w);
      detail::require_finite(h, "lagrangian hessian not finite");
    } else {
      h = bfgs->matrix().sparseView(1.0, 1e-300);
    }

    // Condensed primal system: eliminate slacks, slack duals, and bound
    // duals. K = H + Sigma_bounds + Ji' (W/S) Ji.
    VecX sigma_b = VecX::Zero(n);
    for (int i = 0; i < n; ++i) {
      if (p.lower(i) > -inf) sigma_b(i) += st.z_l(i) / (st.x(i) - p.lower(i));
      if (p.upper(i) < inf) sigma_b(i) += st.z_u(i) / (p.upper(i) - st.x(i));
    }
    VecX ws = VecX(mi);
    for (int i = 0; i < mi; ++i) ws(i) = st.w(i) / st.s(i);

    SpMat k = h;
    if (mi > 0) {
      SpMat jiw = ji;
      for (int c = 0; c < jiw.outerSize(); ++c)
        for (SpMat::InnerIterator it(jiw, c); it; ++it)
          it.valueRef() *= ws(it.row());
      k += SpMat(ji.transpose()) * jiw;
    }

    // Right-hand side of the condensed x-block (constant dual terms folded
    // in; see the elimination identities in the slack/bound rows).
    VecX r_i = g - st.s;
    VecX rhs1 = -grad;
    if (me > 0) rhs1 += je.transpose() * st.y_e;
    if (mi > 0) {
      VecX t(mi);
      for (int i = 0; i < mi; ++i) t(i) = mu / st.s(i) - ws(i) * r_i(i);
      rhs1 += ji.transpose() * t;
    }
    for (int i = 0; i < n; ++i) {
      if (p.lower(i) > -inf) rhs1(i) += mu / (st.x(i) - p.lower(i));
      if (p.upper(i) < inf) rhs1(i) -= mu / (p.upper(i) - st.x(i));
    }

    // Assemble and factor the symmetric augmented system
    //   [K + dw*I   Je'] [dx]   [rhs1 ]
    //   [Je        -dc ] [nu] = [-c_E ],   dy = -nu,
    // retrying with a larger primal shift until the inertia is (n, me).
    const double delta_c = me > 0 ? 1e-8 : 0.0;
    VecX dx(n), dy(me);
    bool factored = false;
    double delta_w = 0.0;
    for (int attempt = 0; attempt < 30 && !factored; ++attempt) {
      std::vector<Eigen::Triplet<double>> trips;
      trips.reserve(k.nonZeros() + je.nonZeros() + n + me);
      for (int c = 0; c < k.outerSize(); ++c)
        for (SpMat::InnerIterator it(k, c); it; ++it)
          if (it.row() >= it.col())
            trips.emplace_back(it.row(), it.col(), it.value());
      for (int i = 0; i < n; ++i)
        trips.emplace_back(i, i, sigma_b(i) + delta_w);
      for (int c = 0; c < je.outerSize(); ++c)
        for (SpMat::InnerIterator it(je, c); it; ++it)
          trips.emplace_back(n + it.row(), it.col(), it.value());
      for (int i = 0; i < me; ++i)
        trips.emplace_back(n + i, n + i, -delta_c);
      SpMat aug(n + me, n + me);
      aug.setFromTriplets(trips.begin(), trips.end());

      Eigen::SimplicialLDLT<SpMat, Eigen::Lower> ldlt(aug);
      bool ok = ldlt.info() == Eigen::Success;
      if (ok) {
        int negatives = 0;
        const auto d = ldlt.vectorD();
        for (int i = 0; i < d.size(); ++i) {
          if (d(i) < 0) ++negatives;
          if (d(i) == 0 || !std::isfinite(d(i))) ok = false;
        }
        if (negatives != me) ok = false;
        if (ok) {
          VecX rhs(n + me);
          rhs.head(n) = rhs1;
          rhs.tail(me) = -ce;
          const VecX sol = ldlt.solve(rhs);
          if (sol.allFinite()) {
            dx = sol.head(n);
            dy = -sol.tail(me);
            factored = true;
            delta_last = delta_w;
          } else {
            ok = false;
          }
        }
      }
      if (!ok)
        delta_w = delta_w == 0.0
                      ? (delta_last > 0.0 ? std::max(1e-20, delta_last / 3)
                                          : 1e-4)
                      : delta_w * 10.0;
      if (delta_w > 1e14) break;
    }
    if (!factored) return make_solution(SolveStatus::Diverged, iter);

    // Recover eliminated directions.
    VecX ds(mi), dw(mi), dzl = VecX::Zero(n), dzu = VecX::Zero(n);
    if (mi > 0) {
      ds = ji * dx + r_i;
      for (int i = 0; i < mi; ++i)
        dw(i) = mu / st.s(i) - st.w(i) - ws(i) * ds(i);
    }
    for (int i = 0; i < n; ++i) {
      if (p.lower(i) > -inf)
        dzl(i) = mu / (st.x(i) - p.lower(i)) - st.z_l(i) -
                 st.z_l(i) / (st.x(i) - p.lower(i)) * dx(i);
      if (p.upper(i) < inf)
        dzu(i) = mu / (p.upper(i) - st.x(i)) - st.z_u(i) +
                 st.z_u(i) / (p.upper(i) - st.x(i)) * dx(i);
    }

    // Fraction-to-boundary step limits.
    const double tau = std::max(cfg.tau_min, 1.0 - mu);
    double a_primal = 1.0, a_dual = 1.0;
    for (int i = 0; i < mi; ++i) {
      if (ds(i) < 0) a_primal = std::min(a_primal, -tau * st.s(i) / ds(i));
      if (dw(i) < 0) a_dual = std::min(a_dual, -tau * st.w(i) / dw(i));
    }
    for (int i = 0; i < n; ++i) {
      if (p.lower(i) > -inf) {
        const double d = st.x(i) - p.lower(i);
        if (dx(i) < 0) a_primal = std::min(a_primal, -tau * d / dx(i));
        if (dzl(i) < 0) a_dual = std::min(a_dual, -tau * st.z_l(i) / dzl(i));
      }
      if (p.upper(i) < inf) {
        const double d = p.upper(i) - st.x(i);
        if (dx(i) > 0) a_primal = std::min(a_primal, tau * d / dx(i));
        if (dzu(i) < 0) a_dual = std::min(a_dual, -tau * st.z_u(i) / dzu(i));
      }
    }

    // Filter line search on (constraint violation theta, barrier value phi):
    // descent steps must satisfy Armijo on the barrier function; otherwise a
    // trial must improve violation or barrier versus the current pair and
    // must not be dominated by a filter entry.
    const double theta0 = ce.lpNorm<1>() + r_i.lpNorm<1>();
    const double phi0 = barrier_value(st.x, st.s, mu);
    if (theta_max < 0.0) theta_max = 1e4 * std::max(1.0, theta0);
    // Barrier directional derivative along (dx, ds).
    double dderiv = grad.dot(dx);
    for (int i = 0; i < mi; ++i) dderiv -= mu / st.s(i) * ds(i);
    for (int i = 0; i < n; ++i) {
      if (p.lower(i) > -inf) dderiv -= mu / (st.x(i) - p.lower(i)) * dx(i);
      if (p.upper(i) < inf) dderiv += mu / (p.upper(i) - st.x(i)) * dx(i);
    }

    constexpr double gamma_theta = 1e-5, gamma_phi = 1e-5;
    constexpr double s_theta = 1.1, s_phi = 2.3, delta_sw = 1.0;
    double alpha = a_primal;
    bool accepted = false, f_type_step = false;
    VecX x_new, s_new;
    while (alpha > 1e-12) {
      x_new = st.x + alpha * dx;
      s_new = st.s + alpha * ds;
      const double theta =
          eval_ce(x_new).lpNorm<1>() + (eval_gi(x_new) - s_new).lpNorm<1>();
      const double phi = barrier_value(x_new, s_new, mu);
      bool ok = std::isfinite(phi) && theta <= theta_max;
      for (const auto& [tj, pj] : filter)
        if (theta >= tj && phi >= pj) ok = false;
      if (ok) {
        f_type_step =
            dderiv < 0.0 && alpha * std::pow(-dderiv, s_phi) >
                                delta_sw * std::pow(theta0, s_theta);
        if (f_type_step)
          ok = phi <= phi0 + cfg.armijo_c * alpha * dderiv;
        else
          ok = theta <= (1.0 - gamma_theta) * theta0 ||
               phi <= phi0 - gamma_phi * theta0;
      }
      if (ok) {
        accepted = true;
        break;
      }
      alpha *= cfg.backtrack;
    }
    if (accepted && !f_type_step)
      filter.emplace_back((1.0 - gamma_theta) * theta0,
                          phi0 - gamma_phi * theta0);
    if (!accepted) {
      // A wedged search usually means bounded variables are pinned against
      // the barrier at a degenerate corner (tiny multipliers with a huge
      // Sigma). Re-center instead of giving up: push the primal back into
      // the interior, reset slacks and duals to barrier-consistent values,
      // and restart the filter at a fresh mu.
      if (restarts < cfg.max_restarts) {
        ++restarts;
        mu = cfg.mu_init;
        for (int i = 0; i < n; ++i) {
          const double lo = p.lower(i), hi = p.upper(i);
          if (lo > -inf && hi < inf) {
            const double pad =
                std::min(cfg.bound_push * std::max(1.0, hi - lo),
                         0.5 * (hi - lo));
            st.x(i) = std::clamp(st.x(i), lo + pad, hi - pad);
          } else if (lo > -inf) {
            st.x(i) = std::max(
                st.x(i), lo + cfg.bound_push * std::max(1.0, std::abs(lo)));
          } else if (hi < inf) {
            st.x(i) = std::min(
                st.x(i), hi - cfg.bound_push * std::max(1.0, std::abs(hi)));
          }
        }
        g = eval_gi(st.x);
        for (int i = 0; i < mi; ++i) {
          st.s(i) = std::max(g(i), 1e-4);
          st.w(i) = mu / st.s(i);
        }
        st.y_e.setZero();
        for (int i = 0; i < n; ++i) {
          if (p.lower(i) > -inf) st.z_l(i) = mu / (st.x(i) - p.lower(i));
          if (p.upper(i) < inf) st.z_u(i) = mu / (p.upper(i) - st.x(i));
        }
        grad = eval_grad(st.x);
        ce = eval_ce(st.x);
        je = me > 0 ? p.eq_jacobian(st.x) : SpMat(0, n);
        ji = mi > 0 ? p.ineq_jacobian(st.x) : SpMat(0, n);
        filter.clear();
        theta_max = -1.0;
        delta_last = 0.0;
        if (bfgs) bfgs = std::make_unique<detail::BfgsHessian>(n);
        continue;
      }
      const double feas = std::max(ce.size() ? ce.cwiseAbs().maxCoeff() : 0.0,
                                   r_i.size() ? r_i.cwiseAbs().maxCoeff() : 0.0);
      return make_solution(
          feas > std::sqrt(cfg.tol) ? SolveStatus::Infeasible
                                    : SolveStatus::Diverged,
          iter);
    }

    VecX grad_old = grad, x_old = st.x;
    st.x = x_new;
    if (mi > 0) st.s = s_new;
    st.y_e += alpha * dy;
    for (int i = 0; i < mi; ++i)
      st.w(i) = std::max(st.w(i) + a_dual * dw(i), 1e-12);
    for (int i = 0; i < n; ++i) {
      if (p.lower(i) > -inf)
        st.z_l(i) = std::max(st.z_l(i) + a_dual * dzl(i), 1e-12);
      if (p.upper(i) < inf)
        st.z_u(i) = std::max(st.z_u(i) + a_dual * dzu(i), 1e-12);
    }

    grad = eval_grad(st.x);
    ce = eval_ce(st.x);
    g = eval_gi(st.x);
    SpMat je_new = me > 0 ? p.eq_jacobian(st.x) : SpMat(0, n);
    SpMat ji_new = mi > 0 ? p.ineq_jacobian(st.x) : SpMat(0, n);
    detail::require_finite(je_new, "equality jacobian not finite");
    detail::require_finite(ji_new, "inequality jacobian not finite");

    if (bfgs) {
      // Quasi-Newton update on the Lagrangian gradient difference at fixed
      // new multipliers.
      VecX gl_new = grad, gl_old = grad_old;
      if (me > 0) {
        gl_new -= je_new.transpose() * st.y_e;
        gl_old -= je.transpose() * st.y_e;
      }
      if (mi > 0) {
        gl_new -= ji_new.transpose() * st.w;
        gl_old -= ji.transpose() * st.w;
      }
      bfgs->update(st.x - x_old, gl_new - gl_old);
    }
    je = std::move(je_new);
    ji = std::move(ji_new);
  }
  return make_solution(
      last_acceptable ? SolveStatus::Acceptable : SolveStatus::MaxIter, iter);
}

// ---------------------------------------------------------------------------
// Block-structured problem assembly.

/// Collects small dense cost and constraint terms over index subsets of the
/// decision vector and emits an NlpProblem with sparse derivatives and an
/// exact Lagrangian Hessian. A null Hessian callback on a term means the term
/// is at most linear (zero second derivative).
class NlpBuilder {
 public:
  using DenseVec = Eigen::VectorXd;
  using DenseMat = Eigen::MatrixXd;

  explicit NlpBuilder(int n)
      : n_(n),
        lower_(VecX::Constant(n, -std::numeric_limits<double>::infinity())),
        upper_(VecX::Constant(n, std::numeric_limits<double>::infinity())) {}

  int num_variables() const { return n_; }
  int num_equalities() const { return m_e_; }
  int num_inequalities() const { return m_i_; }

  void set_bounds(int idx, double lo, double hi) {
    lower_(idx) = lo;
    upper_(idx) = hi;
  }

  /// Scalar cost term over variables x[idx].
  void add_cost(std::vector<int> idx,
                std::function<double(const DenseVec&)> value,
                std::function<DenseVec(const DenseVec&)> grad,
                std::function<DenseMat(const DenseVec&)> hess) {
    costs_.push_back({std::move(idx), std::move(value), std::move(grad),
                      std::move(hess)});
  }

  /// Block of `dim` equality constraints c(x[idx]) = 0. `whess(sub, y)`
  /// returns sum_j y(j) * Hessian(c_j), or null when all c_j are affine.
  void add_equality(
      std::vector<int> idx, int dim,
      std::function<DenseVec(const DenseVec&)> value,
      std::function<DenseMat(const DenseVec&)> jac,
      std::function<DenseMat(const DenseVec&, const DenseVec&)> whess =
          nullptr) {
    eqs_.push_back({std::move(idx), dim, m_e_, std::move(value),
                    std::move(jac), std::move(whess)});
    m_e_ += dim;
  }

  /// Block of `dim` inequality constraints g(x[idx]) >= 0.
  void add_inequality(
      std::vector<int> idx, int dim,
      std::function<DenseVec(const DenseVec&)> value,
      std::function<DenseMat(const DenseVec&)> jac,
      std::function<DenseMat(const DenseVec&, const DenseVec&)> whess =
          nullptr) {
    ineqs_.push_back({std::move(idx), dim, m_i_, std::move(value),
                      std::move(jac), std::move(whess)});
    m_i_ += dim;
  }

  NlpProblem build() const {
    auto data = std::make_shared<const Data>(
        Data{n_, m_e_, m_i_, costs_, eqs_, ineqs_});
    NlpProblem p;
    p.n = n_;
    p.m_e = m_e_;
    p.m_i = m_i_;
    p.lower = lower_;
    p.upper = upper_;
    p.objective = [data](const VecX& x) {
      double v = 0.0;
      for (const auto& t : data->costs) v += t.value(gather(x, t.idx));
      return v;
    };
    p.gradient = [data](const VecX& x) {
      VecX g = VecX::Zero(data->n);
      for (const auto& t : data->costs) {
        const DenseVec gs = t.grad(gather(x, t.idx));
        for (size_t k = 0; k < t.idx.size(); ++k) g(t.idx[k]) += gs(k);
      }
      return g;
    };
    p.eq_value = [data](const VecX& x) {
      return block_values(data->eqs, data->m_e, x);
    };
    p.eq_jacobian = [data](const VecX& x) {
      return block_jacobian(data->eqs, data->m_e, data->n, x);
    };
    p.ineq_value = [data](const VecX& x) {
      return block_values(data->ineqs, data->m_i, x);
    };
    p.ineq_jacobian = [data](const VecX& x) {
      return block_jacobian(data->ineqs, data->m_i, data->n, x);
    };
    p.lag_hessian = [data](const VecX& x, double sigma, const VecX& y_e,
                           const VecX& y_i) {
      std::vector<Eigen::Triplet<double>> trips;
      const auto scatter = [&](const DenseMat& h,
                               const std::vector<int>& idx, double scale) {
        for (size_t r = 0; r < idx.size(); ++r)
          for (size_t c = 0; c < idx.size(); ++c)
            if (h(r, c) != 0.0)
              trips.emplace_back(idx[r], idx[c], scale * h(r, c));
      };
      for (const auto& t : data->costs)
        if (t.hess) scatter(t.hess(gather(x, t.idx)), t.idx, sigma);
      for (const auto& b : data->eqs)
        if (b.whess)
          scatter(b.whess(gather(x, b.idx), y_e.segment(b.offset, b.dim)),
                  b.idx, -1.0);
      for (const auto& b : data->ineqs)
        if (b.whess)
          scatter(b.whess(gather(x, b.idx), y_i.segment(b.offset, b.dim)),
                  b.idx, -1.0);
      SpMat h(data->n, data->n);
      h.setFromTriplets(trips.begin(), trips.end());
      return h;
    };
    return p;
  }

 private:
  struct CostTerm {
    std::vector<int> idx;
    std::function<double(const DenseVec&)> value;
    std::function<DenseVec(const DenseVec&)> grad;
    std::function<DenseMat(const DenseVec&)> hess;
  };
  struct ConstraintBlock {
    std::vector<int> idx;
    int dim = 0;
    int offset = 0;
    std::function<DenseVec(const DenseVec&)> value;
    std::function<DenseMat(const DenseVec&)> jac;
    std::function<DenseMat(const DenseVec&, const DenseVec&)> whess;
  };
  struct Data {
    int n, m_e, m_i;
    std::vector<CostTerm> costs;
    std::vector<ConstraintBlock> eqs;
    std::vector<ConstraintBlock> ineqs;
  };

  static DenseVec gather(const VecX& x, const std::vector<int>& idx) {
    DenseVec out(idx.size());
    for (size_t k = 0; k < idx.size(); ++k) out(k) = x(idx[k]);
    return out;
  }
  static VecX block_values(const std::vector<ConstraintBlock>& blocks, int m,
                           const VecX& x) {
    VecX out(m);
    for (const auto& b : blocks)
      out.segment(b.offset, b.dim) = b.value(gather(x, b.idx));
    return out;
  }
  static SpMat block_jacobian(const std::vector<ConstraintBlock>& blocks,
                              int m, int n, const VecX& x) {
    std::vector<Eigen::Triplet<double>> trips;
    for (const auto& b : blocks) {
      const DenseMat j = b.jac(gather(x, b.idx));
      for (int r = 0; r < b.dim; ++r)
        for (size_t c = 0; c < b.idx.size(); ++c)
          if (j(r, c) != 0.0)
            trips.emplace_back(b.offset + r, b.idx[c], j(r, c));
    }
    SpMat out(m, n);
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
  }

  int n_ = 0;
  int m_e_ = 0;
  int m_i_ = 0;
  VecX lower_, upper_;
  std::vector<CostTerm> costs_;
  std::vector<ConstraintBlock> eqs_;
  std::vector<ConstraintBlock> ineqs_;
};

}  // namespace confres
