#pragma once

#include "precomp/core.hpp"
#include "precomp/io.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <deque>
#include <functional>
#include <sstream>
#include <vector>

namespace precomp {

/// Smooth constrained program
///   min f(x)  s.t.  c_eq(x) = 0,  c_in(x) <= 0,  lo <= x <= hi.
/// Constraint Jacobians are consumed only through vector-Jacobian products
/// (w -> J^T w), so callers can back large structured Jacobians by
/// reverse-mode sweeps without forming them.
struct NlpProblem {
  using Vec = Eigen::VectorXd;

  int n = 0;
  std::function<double(const Vec& x, Vec* grad)> objective;  // grad may be null

  int m_eq = 0;
  std::function<Vec(const Vec& x)> eval_eq;
  std::function<Vec(const Vec& x, const Vec& w)> vjp_eq;  // J_eq(x)^T w

  int m_in = 0;
  std::function<Vec(const Vec& x)> eval_in;
  std::function<Vec(const Vec& x, const Vec& w)> vjp_in;  // J_in(x)^T w

  Vec lo, hi;  // defaulted to +-inf when empty

  Vec lower() const {
    return lo.size() ? lo : Vec::Constant(n, -std::numeric_limits<double>::infinity());
  }
  Vec upper() const {
    return hi.size() ? hi : Vec::Constant(n, std::numeric_limits<double>::infinity());
  }
};

struct SolverConfig {
  double tol_stat = 1e-6;
  double tol_feas = 1e-6;
  double tol_comp = 1e-6;
  int max_outer = 50;
  int max_inner = 500;
  double rho0 = 10.0;
  double rho_growth = 10.0;        // multiply when feasibility stalls
  double feas_improvement = 4.0;   // required improvement factor between outers
  double rho_max = 1e9;
  int lbfgs_memory = 10;
  std::string log_csv_path;        // optional iteration log
};

enum class SolveStatus { Converged, IterLimit, Infeasible };

struct KktResiduals {
  double stationarity = 0.0;    // inf-norm of the projected Lagrangian gradient
  double feasibility = 0.0;     // inf-norm of c_eq and positive part of c_in
  double complementarity = 0.0; // inf-norm of mu_i * c_in_i
};

struct SolverResult {
  Eigen::VectorXd x;
  Eigen::VectorXd lambda_eq;
  Eigen::VectorXd mu_in;
  SolveStatus status = SolveStatus::IterLimit;
  KktResiduals kkt;
  int iterations = 0;           // total inner iterations
  double objective_value = 0.0;
  double wall_time_s = 0.0;     // never serialized into artifacts
  long gradient_evals = 0;      // deterministic work counter
  std::vector<double> outer_feasibility;  // max violation after each outer iteration
};

/// Recomputes the KKT residuals from scratch; kept separate from the solver
/// so reported values can be cross-checked.
inline KktResiduals check_kkt(const NlpProblem& p, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& lambda, const Eigen::VectorXd& mu) {
  using Vec = Eigen::VectorXd;
  Vec grad(p.n);
  p.objective(x, &grad);
  if (p.m_eq > 0) grad += p.vjp_eq(x, lambda);
  if (p.m_in > 0) grad += p.vjp_in(x, mu);
  const Vec lo = p.lower(), hi = p.upper();
  KktResiduals k;
  for (int i = 0; i < p.n; ++i) {
    const double step = x[i] - std::clamp(x[i] - grad[i], lo[i], hi[i]);
    k.stationarity = std::max(k.stationarity, std::abs(step));
  }
  if (p.m_eq > 0) {
    const Vec c = p.eval_eq(x);
    k.feasibility = c.size() ? c.cwiseAbs().maxCoeff() : 0.0;
  }
  if (p.m_in > 0) {
    const Vec g = p.eval_in(x);
    for (int i = 0; i < g.size(); ++i) {
      k.feasibility = std::max(k.feasibility, g[i]);
      k.complementarity = std::max(k.complementarity, std::abs(mu[i] * g[i]));
    }
  }
  return k;
}

/// Least-squares multiplier polish at a fixed point: minimizes the norm of
/// the Lagrangian gradient over (lambda, mu >= 0) with projected
/// Barzilai-Borwein steps. Jacobian-vector products come from central
/// differences of the constraint callbacks, so only the standard problem
/// interface is needed. Clearly inactive inequality multipliers are zeroed
/// first (complementarity).
inline void refine_multipliers(const NlpProblem& p, const Eigen::VectorXd& x,
                               Eigen::VectorXd& lambda, Eigen::VectorXd& mu,
                               int iterations = 150) {
  using Vec = Eigen::VectorXd;
  if (p.m_eq == 0 && p.m_in == 0) return;
  Vec gf(p.n);
  p.objective(x, &gf);
  const Vec lo = p.lower(), hi = p.upper();

  Vec g_in;
  if (p.m_in > 0) {
    g_in = p.eval_in(x);
    for (int i = 0; i < p.m_in; ++i)
      if (g_in[i] < -1e2 * p.n * 1e-9 - 1e-5) mu[i] = 0.0;  // clearly inactive
  }

  // Residual of stationarity, restricted to free coordinates (bounds active
  // at x carry their own multipliers).
  auto residual = [&](const Vec& l, const Vec& m) {
    Vec r = gf;
    if (p.m_eq > 0) r += p.vjp_eq(x, l);
    if (p.m_in > 0) r += p.vjp_in(x, m);
    for (int i = 0; i < p.n; ++i) {
      const bool at_lo = x[i] <= lo[i] + 1e-12, at_hi = x[i] >= hi[i] - 1e-12;
      if ((at_lo && r[i] > 0) || (at_hi && r[i] < 0)) r[i] = 0.0;
    }
    return r;
  };
  auto jvp = [&](auto&& eval, const Vec& v, int m_rows) {
    const double eps = 1e-7 * std::max(1.0, x.norm()) / std::max(1.0, v.norm());
    return Vec((eval(x + eps * v) - eval(x - eps * v)) / (2.0 * eps));
  };

  Vec r = residual(lambda, mu);
  double step = 1.0;
  Vec prev_gl, prev_gm, prev_l = lambda, prev_m = mu;
  for (int it = 0; it < iterations; ++it) {
    // Gradient of 0.5||r||^2 w.r.t. multipliers is J r.
    // Small Tikhonov term keeps near-parallel active rows from trading
    // huge cancelling multipliers.
    const double reg = 1e-8;
    Vec gl, gm;
    if (p.m_eq > 0) gl = jvp(p.eval_eq, r, p.m_eq) + reg * lambda;
    if (p.m_in > 0) gm = jvp(p.eval_in, r, p.m_in) + reg * mu;
    if (it > 0) {
      double sy = 0.0, ss = 0.0;
      if (p.m_eq > 0) {
        sy += (lambda - prev_l).dot(gl - prev_gl);
        ss += (lambda - prev_l).squaredNorm();
      }
      if (p.m_in > 0) {
        sy += (mu - prev_m).dot(gm - prev_gm);
        ss += (mu - prev_m).squaredNorm();
      }
      step = (sy > 1e-300) ? ss / sy : step * 0.5;
    }
    prev_l = lambda;
    prev_m = mu;
    prev_gl = gl;
    prev_gm = gm;
    Vec l_new = lambda, m_new = mu;
    if (p.m_eq > 0) l_new -= step * gl;
    if (p.m_in > 0) m_new = (mu - step * gm).cwiseMax(0.0);
    const Vec r_new = residual(l_new, m_new);
    const double reg2 = 1e-8;
    const double merit_new = r_new.squaredNorm() + reg2 * (l_new.squaredNorm() + m_new.squaredNorm());
    const double merit_old = r.squaredNorm() + reg2 * (lambda.squaredNorm() + mu.squaredNorm());
    if (merit_new <= merit_old) {
      lambda = l_new;
      mu = m_new;
      r = r_new;
    } else {
      step *= 0.5;
      if (step < 1e-12) break;
    }
  }
}

namespace detail {

struct LbfgsMemory {
  std::deque<Eigen::VectorXd> s, y;
  std::deque<double> rho;
  int capacity = 10;

  void clear() {
    s.clear();
    y.clear();
    rho.clear();
  }
  void push(const Eigen::VectorXd& si, const Eigen::VectorXd& yi) {
    const double sy = si.dot(yi);
    if (sy <= 1e-12 * si.norm() * yi.norm()) return;  // keep curvature positive
    s.push_back(si);
    y.push_back(yi);
    rho.push_back(1.0 / sy);
    if (static_cast<int>(s.size()) > capacity) {
      s.pop_front();
      y.pop_front();
      rho.pop_front();
    }
  }
  Eigen::VectorXd direction(const Eigen::VectorXd& grad) const {
    Eigen::VectorXd q = -grad;
    if (s.empty()) return q;
    const int k = static_cast<int>(s.size());
    std::vector<double> alpha(static_cast<std::size_t>(k));
    for (int i = k - 1; i >= 0; --i) {
      alpha[static_cast<std::size_t>(i)] = rho[static_cast<std::size_t>(i)] * s[static_cast<std::size_t>(i)].dot(q);
      q -= alpha[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
    }
    const double gamma = s.back().dot(y.back()) / y.back().squaredNorm();
    q *= gamma;
    for (int i = 0; i < k; ++i) {
      const double beta = rho[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)].dot(q);
      q += (alpha[static_cast<std::size_t>(i)] - beta) * s[static_cast<std::size_t>(i)];
    }
    return q;
  }
};

}  // namespace detail

/// Augmented Lagrangian with a box-projected L-BFGS inner solver and Armijo
/// backtracking. Deterministic: same problem, start and config give a
/// bit-identical result.
inline SolverResult solve(const NlpProblem& p, Eigen::VectorXd x0, const SolverConfig& cfg = {}) {
  using Vec = Eigen::VectorXd;
  const auto t_start = std::chrono::steady_clock::now();
  const Vec lo = p.lower(), hi = p.upper();
  if (x0.size() != p.n) throw Error("solve: x0 dimension mismatch");
  if (!x0.allFinite()) throw Error("solve: x0 not finite");
  Vec x = x0.cwiseMax(lo).cwiseMin(hi);

  Vec lambda = Vec::Zero(p.m_eq);
  Vec mu = Vec::Zero(p.m_in);
  double rho = cfg.rho0;

  SolverResult res;
  std::ostringstream log;
  const bool logging = !cfg.log_csv_path.empty();
  if (logging) log << "outer,inner,obj,feas_inf,stat_inf,rho\n";

  auto check_finite = [&](double v, const Vec& at) {
    if (!std::isfinite(v)) {
      std::ostringstream ss;
      ss << "solve: callback returned non-finite value at |x|=" << at.norm()
         << " x0=" << (at.size() ? at[0] : 0.0);
      throw NumericalError(ss.str());
    }
  };

  // Augmented Lagrangian value and gradient at x for current (lambda, mu, rho).
  auto eval_al = [&](const Vec& xx, Vec* grad) {
    Vec gobj(p.n);  // callbacks may write elementwise into a sized buffer
    double val = p.objective(xx, grad ? &gobj : nullptr);
    check_finite(val, xx);
    if (grad) *grad = gobj;
    if (p.m_eq > 0) {
      const Vec c = p.eval_eq(xx);
      check_finite(c.cwiseAbs().sum(), xx);
      val += lambda.dot(c) + 0.5 * rho * c.squaredNorm();
      if (grad) *grad += p.vjp_eq(xx, lambda + rho * c);
    }
    if (p.m_in > 0) {
      const Vec g = p.eval_in(xx);
      check_finite(g.cwiseAbs().sum(), xx);
      Vec t = (mu + rho * g).cwiseMax(0.0);
      val += (t.squaredNorm() - mu.squaredNorm()) / (2.0 * rho);
      if (grad) *grad += p.vjp_in(xx, t);
    }
    if (grad) ++res.gradient_evals;
    return val;
  };

  auto feas_of = [&](const Vec& xx) {
    double f = 0.0;
    if (p.m_eq > 0) {
      const Vec c = p.eval_eq(xx);
      if (c.size()) f = c.cwiseAbs().maxCoeff();
    }
    if (p.m_in > 0) {
      const Vec g = p.eval_in(xx);
      if (g.size()) f = std::max(f, g.maxCoeff());
    }
    return std::max(f, 0.0);
  };

  double feas_prev = std::numeric_limits<double>::infinity();
  double best_feas = std::numeric_limits<double>::infinity();
  double best_obj = std::numeric_limits<double>::infinity();
  Vec best_x = x;
  double omega = 1e-2;  // inner stationarity target, tightened per outer iter
  double eta = 1e-1;    // feasibility gate for multiplier updates

  for (int outer = 0; outer < cfg.max_outer; ++outer) {
    detail::LbfgsMemory mem;
    mem.capacity = cfg.lbfgs_memory;
    Vec grad(p.n);
    double val = eval_al(x, &grad);
    const double inner_tol = std::max(cfg.tol_stat, omega);

    for (int inner = 0; inner < cfg.max_inner; ++inner) {
      // Projected gradient stationarity for the AL subproblem.
      double pg_inf = 0.0;
      for (int i = 0; i < p.n; ++i)
        pg_inf = std::max(pg_inf, std::abs(x[i] - std::clamp(x[i] - grad[i], lo[i], hi[i])));
      if (logging && inner % 16 == 0)
        log << outer << ',' << inner << ',' << io::format_double(val) << ','
            << io::format_double(feas_of(x)) << ',' << io::format_double(pg_inf) << ','
            << io::format_double(rho) << '\n';
      if (pg_inf <= inner_tol) break;

      Vec d = mem.direction(grad);
      bool is_gradient_step = mem.s.empty();
      if (d.dot(grad) >= -1e-14 * d.norm() * grad.norm()) {
        mem.clear();
        d = -grad;
        is_gradient_step = true;
      }
      const double c1 = 1e-4;
      Vec x_new, g_new;
      double val_new = val;
      bool accepted = false;
      auto line_search = [&](const Vec& dir, double alpha0) {
        double alpha = alpha0;
        for (int ls = 0; ls < 60; ++ls) {
          x_new = (x + alpha * dir).cwiseMax(lo).cwiseMin(hi);
          const Vec step = x_new - x;
          if (step.cwiseAbs().maxCoeff() < 1e-18) return false;
          val_new = eval_al(x_new, nullptr);
          if (val_new <= val + c1 * grad.dot(step)) return true;
          alpha *= 0.5;
        }
        return false;
      };
      // Fresh memory gives a raw gradient direction whose magnitude can be
      // enormous under large penalties; start those steps at unit length.
      const double alpha0 =
          is_gradient_step ? std::min(1.0, 1.0 / std::max(1.0, d.norm())) : 1.0;
      accepted = line_search(d, alpha0);
      if (!accepted && !is_gradient_step) {
        mem.clear();
        d = -grad;
        accepted = line_search(d, std::min(1.0, 1.0 / std::max(1.0, d.norm())));
      }
      if (!accepted) break;  // line search exhausted: subproblem is as solved as it gets
      g_new.resize(p.n);
      const double val_check = eval_al(x_new, &g_new);
      (void)val_check;
      mem.push(x_new - x, g_new - grad);
      x = std::move(x_new);
      grad = std::move(g_new);
      val = val_new;
      ++res.iterations;
    }

    // Multiplier update, gated on sufficient feasibility so that inexact
    // inner solves at large penalties cannot inject noise into the
    // estimates; otherwise only the penalty grows.
    Vec c_now, g_now;
    double feas = 0.0;
    if (p.m_eq > 0) {
      c_now = p.eval_eq(x);
      if (c_now.size()) feas = c_now.cwiseAbs().maxCoeff();
    }
    if (p.m_in > 0) {
      g_now = p.eval_in(x);
      if (g_now.size()) feas = std::max(feas, std::max(g_now.maxCoeff(), 0.0));
    }
    const double obj_now = p.objective(x, nullptr);
    if (feas < best_feas || (feas <= std::max(cfg.tol_feas, 1.5 * best_feas) && obj_now < best_obj)) {
      best_feas = std::min(best_feas, feas);
      best_obj = obj_now;
      best_x = x;
    }
    if (feas <= eta) {
      if (p.m_eq > 0) lambda += rho * c_now;
      if (p.m_in > 0) mu = (mu + rho * g_now).cwiseMax(0.0);
      eta = std::max(cfg.tol_feas, eta / std::pow(rho, 0.9));
    }
    res.outer_feasibility.push_back(feas);

    const KktResiduals kkt = check_kkt(p, x, lambda, mu);
    if (logging)
      log << outer << ",-1," << io::format_double(p.objective(x, nullptr)) << ','
          << io::format_double(kkt.feasibility) << ',' << io::format_double(kkt.stationarity)
          << ',' << io::format_double(rho) << '\n';
    if (kkt.stationarity <= cfg.tol_stat && kkt.feasibility <= cfg.tol_feas &&
        kkt.complementarity <= cfg.tol_comp) {
      res.status = SolveStatus::Converged;
      res.kkt = kkt;
      break;
    }
    res.kkt = kkt;

    if (feas > feas_prev / cfg.feas_improvement) {
      rho = std::min(rho * cfg.rho_growth, cfg.rho_max);
      eta = std::max(eta, 10.0 * cfg.tol_feas);
    }
    omega = std::max(cfg.tol_stat, omega * 0.3);
    feas_prev = std::max(feas, 1e-300);

    // Declare infeasibility only at full penalty with a clearly stagnant,
    // clearly nonzero violation.
    if (rho >= cfg.rho_max && feas > 1e3 * cfg.tol_feas && res.outer_feasibility.size() >= 5) {
      const auto& hist = res.outer_feasibility;
      const double old = hist[hist.size() - 5];
      if (feas > 0.98 * old) {
        res.status = SolveStatus::Infeasible;
        break;
      }
    }
  }

  // Endgame polish from the most feasible iterate seen: least-squares
  // multipliers (the penalty-path estimates are noisy at large rho), then a
  // short inner solve at moderate penalty with those multipliers, repeated a
  // few times. With good multiplier estimates the augmented Lagrangian is
  // exact at moderate rho and the subproblem is well conditioned.
  if (res.status != SolveStatus::Converged && res.status != SolveStatus::Infeasible) {
    if (best_x.size() == x.size() && best_feas < std::numeric_limits<double>::infinity())
      x = best_x;
    rho = std::min(rho, 1e5);
    auto kkt_score = [&](const KktResiduals& k) {
      // Feasibility dominates; optimality ratios break ties below tolerance.
      return 1e8 * std::max(0.0, k.feasibility / cfg.tol_feas - 1.0) +
             std::max(k.stationarity / cfg.tol_stat, k.complementarity / cfg.tol_comp);
    };
    Vec score_x = x, score_l = lambda, score_m = mu;
    double best_score = std::numeric_limits<double>::infinity();
    KktResiduals best_kkt;
    for (int round = 0; round < 4; ++round) {
      refine_multipliers(p, x, lambda, mu);
      const KktResiduals kkt = check_kkt(p, x, lambda, mu);
      if (kkt_score(kkt) < best_score) {
        best_score = kkt_score(kkt);
        best_kkt = kkt;
        score_x = x;
        score_l = lambda;
        score_m = mu;
      }
      if (kkt.stationarity <= cfg.tol_stat && kkt.feasibility <= cfg.tol_feas &&
          kkt.complementarity <= cfg.tol_comp)
        break;
      if (round == 3) break;
      detail::LbfgsMemory mem;
      mem.capacity = cfg.lbfgs_memory;
      Vec grad(p.n);
      double val = eval_al(x, &grad);
      for (int inner = 0; inner < cfg.max_inner / 2; ++inner) {
        double pg_inf = 0.0;
        for (int i = 0; i < p.n; ++i)
          pg_inf = std::max(pg_inf, std::abs(x[i] - std::clamp(x[i] - grad[i], lo[i], hi[i])));
        if (pg_inf <= cfg.tol_stat) break;
        Vec d = mem.direction(grad);
        bool is_gradient_step = mem.s.empty();
        if (d.dot(grad) >= -1e-14 * d.norm() * grad.norm()) {
          mem.clear();
          d = -grad;
          is_gradient_step = true;
        }
        double alpha = is_gradient_step ? std::min(1.0, 1.0 / std::max(1.0, d.norm())) : 1.0;
        Vec x_new;
        double val_new = val;
        bool ok = false;
        for (int ls = 0; ls < 60; ++ls) {
          x_new = (x + alpha * d).cwiseMax(lo).cwiseMin(hi);
          const Vec step = x_new - x;
          if (step.cwiseAbs().maxCoeff() < 1e-18) break;
          val_new = eval_al(x_new, nullptr);
          if (val_new <= val + 1e-4 * grad.dot(step)) {
            ok = true;
            break;
          }
          alpha *= 0.5;
        }
        if (!ok) break;
        Vec g_new(p.n);
        eval_al(x_new, &g_new);
        mem.push(x_new - x, g_new - grad);
        x = std::move(x_new);
        grad = std::move(g_new);
        val = val_new;
        ++res.iterations;
      }
      if (p.m_eq > 0) lambda += rho * p.eval_eq(x);
      if (p.m_in > 0) mu = (mu + rho * p.eval_in(x)).cwiseMax(0.0);
    }
    x = score_x;
    lambda = score_l;
    mu = score_m;
    res.kkt = best_kkt;
    if (best_kkt.stationarity <= cfg.tol_stat && best_kkt.feasibility <= cfg.tol_feas &&
        best_kkt.complementarity <= cfg.tol_comp)
      res.status = SolveStatus::Converged;
  }

  res.x = x;
  res.lambda_eq = lambda;
  res.mu_in = mu;
  res.objective_value = p.objective(x, nullptr);
  if (res.status != SolveStatus::Converged && res.status != SolveStatus::Infeasible)
    res.status = SolveStatus::IterLimit;
  res.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  if (logging) io::atomic_write(cfg.log_csv_path, log.str());
  return res;
}

}  // namespace precomp
