#pragma once

#include "precomp/core.hpp"
#include "precomp/geometry.hpp"
#include "precomp/nlpsolver.hpp"
#include "precomp/nnmodel.hpp"
#include "precomp/plant.hpp"
#include "precomp/stage1.hpp"
#include "precomp/trajectory.hpp"

#include <memory>
#include <utility>
#include <vector>

namespace precomp {

struct Stage2Config {
  ToleranceProfile mu;        // empty -> constant 20 um over the schedule
  double v_max = kMachineVmax;  // on the predicted output
  double a_max = 1.0;           // on the predicted output
  double rho_slack = 1e3;       // exact-L1 penalty weight, per meter
  int horizon2 = 11;            // receding-horizon window, steps
  enum class Mode { OneShot, Receding } mode = Mode::OneShot;
  SolverConfig solver{.tol_stat = 1e-7, .tol_feas = 1e-7, .tol_comp = 1e-6,
                      .max_outer = 30, .max_inner = 400};

  void validate() const {
    if (!(rho_slack > 0.0)) throw Error("stage2: rho_slack must be positive");
    if (mode == Mode::Receding && horizon2 < 3) throw Error("stage2: horizon2 < 3");
  }
};

struct Stage2Solution {
  Trajectory input;        // deliverable r at 400 Hz (M samples)
  Trajectory predicted;    // model-predicted output
  Eigen::VectorXd slack;   // per-axis tolerance slack, layout [x(M), y(M)]
  double objective = 0.0;  // sum ||gamma-xi||^2 + rho_slack * sum slack
  double deviation_sq = 0.0;  // sum ||gamma-xi||^2 alone
  double max_slack = 0.0;
  KktResiduals kkt;
  SolveStatus status = SolveStatus::IterLimit;
  long work = 0;
  std::vector<std::size_t> flagged_windows;  // receding mode: non-converged commits
};

namespace stage2_detail {

// Machine-side margins; see check_limits tolerance discussion in stage1.
inline constexpr double kRVelMargin = 0.999;
inline constexpr double kRAccMargin = 0.99;

/// One-shot transcription. Decision x = [r_x(M), r_y(M), s_x(M), s_y(M)];
/// the predicted output is eliminated through the network, gradients flow
/// through batched reverse-mode sweeps. The h-sample warm-up pad before t=0
/// holds r_0 (the pad is part of the window of early predictions).
struct Transcription {
  const AxisPair* pair = nullptr;
  std::vector<Vec2> xi;      // M targets
  std::vector<double> mu;    // M tolerances
  double dt = kSampleDt;
  double v_max = 0, a_max = 0, rho_slack = 0;
  int h = kWindow;

  int M() const { return static_cast<int>(xi.size()); }
  int dim() const { return 4 * M(); }
  int off_r(int axis) const { return axis * M(); }
  int off_s(int axis) const { return 2 * M() + axis * M(); }

  // Cached batched forward pass, keyed on the r block of x.
  mutable Eigen::VectorXd cache_key;
  mutable BatchTape tape[2];
  mutable Eigen::MatrixXd gamma;  // 2 x M, meters

  void ensure_forward(const Eigen::VectorXd& x) const {
    if (cache_key.size() == 2 * M() &&
        std::memcmp(cache_key.data(), x.data(), sizeof(double) * 2 * static_cast<std::size_t>(M())) == 0)
      return;
    cache_key = x.head(2 * M());
    gamma.resize(2, M());
    Eigen::MatrixXd windows(h, M());
    for (int axis = 0; axis < 2; ++axis) {
      const MlpModel& m = axis == 0 ? pair->x : pair->y;
      const double* r = x.data() + off_r(axis);
      for (int i = 0; i < M(); ++i)
        for (int k = 0; k < h; ++k) {
          const int j = i - h + k;  // prediction i sees inputs up to i-1
          windows(k, i) = r[std::max(j, 0)] / m.scale;
        }
      forward_batch(m, windows, tape[axis]);
      gamma.row(axis) = tape[axis].out * m.scale;
    }
  }

  // Seeds d(loss)/d(gamma) through the network and overlap-adds into dr.
  void pullback(const Eigen::VectorXd& x, const Eigen::MatrixXd& dgamma,
                Eigen::VectorXd& grad) const {
    ensure_forward(x);
    for (int axis = 0; axis < 2; ++axis) {
      const MlpModel& m = axis == 0 ? pair->x : pair->y;
      // d(out)/d(window) * scale (out->meters) * 1/scale (meters->window) = 1.
      const Eigen::MatrixXd dwin =
          backward_batch(m, tape[axis], dgamma.row(axis));
      double* gr = grad.data() + off_r(axis);
      for (int i = 0; i < M(); ++i)
        for (int k = 0; k < h; ++k) {
          const int j = i - h + k;
          gr[std::max(j, 0)] += dwin(k, i);
        }
    }
  }

  double objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
    ensure_forward(x);
    double f = 0.0;
    Eigen::MatrixXd dgamma = Eigen::MatrixXd::Zero(2, M());
    for (int axis = 0; axis < 2; ++axis)
      for (int i = 0; i < M(); ++i) {
        const double e = gamma(axis, i) - xi[static_cast<std::size_t>(i)][axis];
        f += e * e;
        if (grad) dgamma(axis, i) = 2.0 * e;
        f += rho_slack * x[off_s(axis) + i];
      }
    if (grad) {
      grad->setZero(dim());
      pullback(x, dgamma, *grad);
      for (int axis = 0; axis < 2; ++axis)
        for (int i = 0; i < M(); ++i) (*grad)[off_s(axis) + i] = rho_slack;
    }
    return f;
  }

  // Rows: tol+- per axis (4M), gamma workspace (4M), gamma velocity
  // (4(M-1)), gamma acceleration (4(M-2)), r velocity (4(M-1)),
  // r acceleration (4(M-1), the first row measures the start from rest).
  int m_in() const { return 4 * M() + 4 * M() + 4 * (M() - 1) + 4 * (M() - 2) + 4 * (M() - 1) + 4 * (M() - 1); }

  Eigen::VectorXd eval_in(const Eigen::VectorXd& x) const {
    ensure_forward(x);
    Eigen::VectorXd c(m_in());
    int at = 0;
    for (int axis = 0; axis < 2; ++axis)
      for (int i = 0; i < M(); ++i) {
        const double dev = gamma(axis, i) - xi[static_cast<std::size_t>(i)][axis];
        const double s = x[off_s(axis) + i];
        c[at++] = dev - mu[static_cast<std::size_t>(i)] - s;
        c[at++] = -dev - mu[static_cast<std::size_t>(i)] - s;
      }
    for (int axis = 0; axis < 2; ++axis)
      for (int i = 0; i < M(); ++i) {
        c[at++] = gamma(axis, i) - kWorkspaceHalf;
        c[at++] = -gamma(axis, i) - kWorkspaceHalf;
      }
    const double vlim = v_max * dt;
    for (int axis = 0; axis < 2; ++axis)
      for (int i = 0; i + 1 < M(); ++i) {
        const double d = gamma(axis, i + 1) - gamma(axis, i);
        c[at++] = d - vlim;
        c[at++] = -d - vlim;
      }
    const double alim = a_max * dt * dt;
    for (int axis = 0; axis < 2; ++axis)
      for (int i = 1; i + 1 < M(); ++i) {
        const double d = gamma(axis, i + 1) - 2.0 * gamma(axis, i) + gamma(axis, i - 1);
        c[at++] = d - alim;
        c[at++] = -d - alim;
      }
    const double rvlim = kRVelMargin * kMachineVmax * dt;
    for (int axis = 0; axis < 2; ++axis) {
      const double* r = x.data() + off_r(axis);
      for (int i = 0; i + 1 < M(); ++i) {
        const double d = r[i + 1] - r[i];
        c[at++] = d - rvlim;
        c[at++] = -d - rvlim;
      }
    }
    const double ralim = kRAccMargin * kMachineAmax * dt * dt;
    for (int axis = 0; axis < 2; ++axis) {
      const double* r = x.data() + off_r(axis);
      // i = 0 with the pad held at r_0: second difference collapses to r_1 - r_0.
      {
        const double d = r[1] - r[0];
        c[at++] = d - ralim;
        c[at++] = -d - ralim;
      }
      for (int i = 1; i + 1 < M(); ++i) {
        const double d = r[i + 1] - 2.0 * r[i] + r[i - 1];
        c[at++] = d - ralim;
        c[at++] = -d - ralim;
      }
    }
    return c;
  }

  Eigen::VectorXd vjp_in(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const {
    ensure_forward(x);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim());
    Eigen::MatrixXd dgamma = Eigen::MatrixXd::Zero(2, M());
    int at = 0;
    for (int axis = 0; axis < 2; ++axis)
      for (int i = 0; i < M(); ++i) {
        const double wp = w[at], wm = w[at + 1];
        at += 2;
        dgamma(axis, i) += wp - wm;
        g[off_s(axis) + i] -= wp + wm;
      }
    for (int axis = 0; axis < 2; ++axis)
      for (int i = 0; i < M(); ++i) {
        const double wp = w[at], wm = w[at + 1];
        at += 2;
        dgamma(axis, i) += wp - wm;
      }
    for (int axis = 0; axis < 2; ++axis)
      for (int i = 0; i + 1 < M(); ++i) {
        const double wp = w[at], wm = w[at + 1];
        at += 2;
        dgamma(axis, i + 1) += wp - wm;
        dgamma(axis, i) -= wp - wm;
      }
    for (int axis = 0; axis < 2; ++axis)
      for (int i = 1; i + 1 < M(); ++i) {
        const double wp = w[at], wm = w[at + 1];
        at += 2;
        dgamma(axis, i + 1) += wp - wm;
        dgamma(axis, i) -= 2.0 * (wp - wm);
        dgamma(axis, i - 1) += wp - wm;
      }
    for (int axis = 0; axis < 2; ++axis)
      for (int i = 0; i + 1 < M(); ++i) {
        const double wp = w[at], wm = w[at + 1];
        at += 2;
        g[off_r(axis) + i + 1] += wp - wm;
        g[off_r(axis) + i] -= wp - wm;
      }
    for (int axis = 0; axis < 2; ++axis) {
      {
        const double wp = w[at], wm = w[at + 1];
        at += 2;
        g[off_r(axis) + 1] += wp - wm;
        g[off_r(axis) + 0] -= wp - wm;
      }
      for (int i = 1; i + 1 < M(); ++i) {
        const double wp = w[at], wm = w[at + 1];
        at += 2;
        g[off_r(axis) + i + 1] += wp - wm;
        g[off_r(axis) + i] -= 2.0 * (wp - wm);
        g[off_r(axis) + i - 1] += wp - wm;
      }
    }
    pullback(x, dgamma, g);
    return g;
  }

  NlpProblem problem(std::shared_ptr<Transcription> self) const {
    NlpProblem p;
    p.n = dim();
    p.m_eq = 0;
    p.m_in = m_in();
    p.objective = [self](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
      return self->objective(x, grad);
    };
    p.eval_in = [self](const Eigen::VectorXd& x) { return self->eval_in(x); };
    p.vjp_in = [self](const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
      return self->vjp_in(x, w);
    };
    p.lo = Eigen::VectorXd::Zero(p.n);
    p.hi = Eigen::VectorXd::Constant(p.n, std::numeric_limits<double>::infinity());
    p.lo.head(2 * M()).setConstant(-kWorkspaceHalf);
    p.hi.head(2 * M()).setConstant(kWorkspaceHalf);
    return p;
  }
};

inline std::shared_ptr<Transcription> make_transcription(const AxisPair& pair,
                                                         const ReferencePlan& plan,
                                                         const Stage2Config& cfg) {
  auto tr = std::make_shared<Transcription>();
  tr->pair = &pair;
  tr->xi = plan.xi_bar;
  tr->mu.resize(plan.xi_bar.size(), kDefaultTolerance);
  if (!cfg.mu.pieces.empty())
    for (std::size_t i = 0; i < plan.s_at_t.size(); ++i) tr->mu[i] = cfg.mu.at(plan.s_at_t[i]);
  tr->v_max = cfg.v_max;
  tr->a_max = cfg.a_max;
  tr->rho_slack = cfg.rho_slack;
  tr->h = pair.x.input_size();
  return tr;
}

}  // namespace stage2_detail

/// Builds the one-shot second-stage NLP around a warm start of length M.
inline NlpProblem build_stage2(const AxisPair& pair, const ReferencePlan& plan,
                               const Stage2Config& cfg) {
  cfg.validate();
  if (plan.warm_start.size() != plan.xi_bar.size())
    throw Error("stage2: warm start / target length mismatch");
  auto tr = stage2_detail::make_transcription(pair, plan, cfg);
  return tr->problem(tr);
}

inline Eigen::VectorXd stage2_initial_point(const ReferencePlan& plan) {
  const int m = static_cast<int>(plan.xi_bar.size());
  Eigen::VectorXd x = Eigen::VectorXd::Zero(4 * m);
  for (int i = 0; i < m; ++i) {
    x[i] = plan.warm_start.points[static_cast<std::size_t>(i)].x();
    x[m + i] = plan.warm_start.points[static_cast<std::size_t>(i)].y();
  }
  return x;
}

namespace stage2_detail {

inline Stage2Solution finalize(const AxisPair& pair, const ReferencePlan& plan,
                               const Stage2Config& cfg, std::vector<Vec2> r_points) {
  Stage2Solution sol;
  sol.input = Trajectory::uniform(kSampleDt, std::move(r_points));
  sol.predicted = predict_trajectory(pair, sol.input);
  const int m = static_cast<int>(plan.xi_bar.size());
  sol.slack.setZero(2 * m);
  auto tr = make_transcription(pair, plan, cfg);
  for (int i = 0; i < m; ++i) {
    const Vec2 dev = sol.predicted.points[static_cast<std::size_t>(i)] - plan.xi_bar[static_cast<std::size_t>(i)];
    sol.deviation_sq += dev.squaredNorm();
    for (int axis = 0; axis < 2; ++axis) {
      const double s = std::max(0.0, std::abs(dev[axis]) - tr->mu[static_cast<std::size_t>(i)]);
      sol.slack[axis * m + i] = s;
      sol.max_slack = std::max(sol.max_slack, s);
    }
  }
  sol.objective = sol.deviation_sq + cfg.rho_slack * sol.slack.sum();
  return sol;
}

}  // namespace stage2_detail

/// One-shot refinement: optimizes the full input trajectory against the
/// neural model, warm-started from the stage-1 plan.
inline Stage2Solution solve_stage2(const AxisPair& pair, const ReferencePlan& plan,
                                   const Stage2Config& cfg) {
  cfg.validate();
  if (plan.xi_bar.size() < 4) throw Error("stage2: trajectory too short");
  auto tr = stage2_detail::make_transcription(pair, plan, cfg);
  const NlpProblem p = tr->problem(tr);
  const SolverResult res = solve(p, stage2_initial_point(plan), cfg.solver);

  const int m = static_cast<int>(plan.xi_bar.size());
  std::vector<Vec2> r(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) r[static_cast<std::size_t>(i)] = Vec2(res.x[i], res.x[m + i]);
  Stage2Solution sol = stage2_detail::finalize(pair, plan, cfg, std::move(r));
  sol.kkt = res.kkt;
  sol.status = res.status;
  sol.work = res.gradient_evals * static_cast<long>(p.n);
  return sol;
}

namespace stage2_detail {

/// Window subproblem for the receding mode: decision variables are the next
/// `w` inputs per axis (dimension 2w, slacks eliminated via the exact
/// penalty); committed inputs enter as fixed history.
struct RhWindow {
  const AxisPair* pair = nullptr;
  const std::vector<Vec2>* xi = nullptr;
  const std::vector<double>* mu = nullptr;
  const std::vector<Vec2>* committed = nullptr;  // inputs r_0..r_{t-1}
  std::vector<Vec2> committed_gamma;             // predictions for j <= t
  int t = 0;  // first undecided input index
  int w = 0;  // window length
  int h = kWindow;
  double dt = kSampleDt;
  double v_max = 0, a_max = 0, rho_slack = 0;

  int dim() const { return 2 * w; }

  double r_value(const Eigen::VectorXd& x, int j, int axis) const {
    if (j < 0) return r_value(x, 0, axis);
    if (j < t) return (*committed)[static_cast<std::size_t>(j)][axis];
    return x[axis * w + (j - t)];
  }

  mutable Eigen::VectorXd cache_key;
  mutable BatchTape tape[2];
  mutable Eigen::MatrixXd gamma;  // 2 x w, outputs j = t+1 .. t+w

  void ensure_forward(const Eigen::VectorXd& x) const {
    if (cache_key.size() == x.size() &&
        std::memcmp(cache_key.data(), x.data(), sizeof(double) * static_cast<std::size_t>(x.size())) == 0)
      return;
    cache_key = x;
    gamma.resize(2, w);
    Eigen::MatrixXd windows(h, w);
    for (int axis = 0; axis < 2; ++axis) {
      const MlpModel& m = axis == 0 ? pair->x : pair->y;
      for (int c = 0; c < w; ++c) {
        const int j = t + 1 + c;  // output index
        for (int k = 0; k < h; ++k) windows(k, c) = r_value(x, j - h + k, axis) / m.scale;
      }
      forward_batch(m, windows, tape[axis]);
      gamma.row(axis) = tape[axis].out * m.scale;
    }
  }

  void pullback(const Eigen::VectorXd& x, const Eigen::MatrixXd& dgamma,
                Eigen::VectorXd& grad) const {
    ensure_forward(x);
    for (int axis = 0; axis < 2; ++axis) {
      const MlpModel& m = axis == 0 ? pair->x : pair->y;
      const Eigen::MatrixXd dwin = backward_batch(m, tape[axis], dgamma.row(axis));
      for (int c = 0; c < w; ++c) {
        const int j = t + 1 + c;
        for (int k = 0; k < h; ++k) {
          const int idx = j - h + k;
          if (idx >= t && idx < t + w) grad[axis * w + (idx - t)] += dwin(k, c);
          // pad entries (idx < 0) resolve to r_0 which is committed for t > 0;
          // for t == 0 they resolve to the first decision variable:
          else if (idx < 0 && t == 0)
            grad[axis * w + 0] += dwin(k, c);
        }
      }
    }
  }

  double gamma_at(const Eigen::VectorXd& x, int j, int axis) const {
    if (j <= t) return committed_gamma[static_cast<std::size_t>(j)][axis];
    return gamma(axis, j - t - 1);
  }

  double objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
    ensure_forward(x);
    if (grad) grad->setZero(dim());
    Eigen::MatrixXd dgamma = Eigen::MatrixXd::Zero(2, w);
    double f = 0.0;
    for (int c = 0; c < w; ++c) {
      const int j = t + 1 + c;
      for (int axis = 0; axis < 2; ++axis) {
        const double dev = gamma(axis, c) - (*xi)[static_cast<std::size_t>(j)][axis];
        f += dev * dev;
        const double excess = std::abs(dev) - (*mu)[static_cast<std::size_t>(j)];
        double dd = 2.0 * dev;
        if (excess > 0.0) {
          f += rho_slack * excess;
          dd += rho_slack * (dev > 0.0 ? 1.0 : -1.0);
        }
        if (grad) dgamma(axis, c) = dd;
      }
    }
    if (grad) pullback(x, dgamma, *grad);
    return f;
  }

  // gamma workspace/velocity/acceleration rows over the window outputs, and
  // machine-side velocity/acceleration rows on the decided inputs. At t=0
  // gamma_0 is not yet committed, so rows touching it are dropped.
  int vel_lo() const { return t == 0 ? t + 2 : t + 1; }
  int acc_lo() const { return t == 0 ? t + 2 : t + 1; }
  int n_vel() const { return std::max(0, (t + w) - vel_lo() + 1); }
  int n_acc() const { return std::max(0, (t + w - 1) - acc_lo() + 1); }
  int m_in() const { return 4 * w + 4 * n_vel() + 4 * n_acc() + 4 * w + 4 * w; }

  Eigen::VectorXd eval_in(const Eigen::VectorXd& x) const {
    ensure_forward(x);
    Eigen::VectorXd c(m_in());
    int at = 0;
    for (int axis = 0; axis < 2; ++axis)
      for (int cidx = 0; cidx < w; ++cidx) {
        const double gv = gamma(axis, cidx);
        c[at++] = gv - kWorkspaceHalf;
        c[at++] = -gv - kWorkspaceHalf;
      }
    const double vlim = v_max * dt;
    for (int axis = 0; axis < 2; ++axis)
      for (int j = vel_lo(); j <= t + w; ++j) {
        const double d = gamma_at(x, j, axis) - gamma_at(x, j - 1, axis);
        c[at++] = d - vlim;
        c[at++] = -d - vlim;
      }
    const double alim = a_max * dt * dt;
    for (int axis = 0; axis < 2; ++axis)
      for (int j = acc_lo(); j <= t + w - 1; ++j) {
        const double d =
            gamma_at(x, j + 1, axis) - 2.0 * gamma_at(x, j, axis) + gamma_at(x, j - 1, axis);
        c[at++] = d - alim;
        c[at++] = -d - alim;
      }
    const double rvlim = kRVelMargin * kMachineVmax * dt;
    for (int axis = 0; axis < 2; ++axis)
      for (int j = t; j < t + w; ++j) {
        const double d = r_value(x, j, axis) - r_value(x, j - 1, axis);
        c[at++] = d - rvlim;
        c[at++] = -d - rvlim;
      }
    const double ralim = kRAccMargin * kMachineAmax * dt * dt;
    for (int axis = 0; axis < 2; ++axis)
      for (int j = t; j < t + w; ++j) {
        const double d = r_value(x, j, axis) - 2.0 * r_value(x, j - 1, axis) +
                         r_value(x, j - 2, axis);
        c[at++] = d - ralim;
        c[at++] = -d - ralim;
      }
    return c;
  }

  Eigen::VectorXd vjp_in(const Eigen::VectorXd& x, const Eigen::VectorXd& wvec) const {
    ensure_forward(x);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim());
    Eigen::MatrixXd dgamma = Eigen::MatrixXd::Zero(2, w);
    auto add_gamma = [&](int j, int axis, double coeff) {
      if (j > t) dgamma(axis, j - t - 1) += coeff;
    };
    auto add_r = [&](int j, int axis, double coeff) {
      if (j < 0) j = 0;
      if (j >= t && j < t + w) g[axis * w + (j - t)] += coeff;
      else if (j < t) return;  // committed
    };
    int at = 0;
    for (int axis = 0; axis < 2; ++axis)
      for (int cidx = 0; cidx < w; ++cidx) {
        const double wp = wvec[at], wm = wvec[at + 1];
        at += 2;
        dgamma(axis, cidx) += wp - wm;
      }
    for (int axis = 0; axis < 2; ++axis)
      for (int j = vel_lo(); j <= t + w; ++j) {
        const double wp = wvec[at], wm = wvec[at + 1];
        at += 2;
        add_gamma(j, axis, wp - wm);
        add_gamma(j - 1, axis, -(wp - wm));
      }
    for (int axis = 0; axis < 2; ++axis)
      for (int j = acc_lo(); j <= t + w - 1; ++j) {
        const double wp = wvec[at], wm = wvec[at + 1];
        at += 2;
        add_gamma(j + 1, axis, wp - wm);
        add_gamma(j, axis, -2.0 * (wp - wm));
        add_gamma(j - 1, axis, wp - wm);
      }
    for (int axis = 0; axis < 2; ++axis)
      for (int j = t; j < t + w; ++j) {
        const double wp = wvec[at], wm = wvec[at + 1];
        at += 2;
        add_r(j, axis, wp - wm);
        if (j - 1 >= t || (j - 1 < 0 && t == 0)) add_r(j - 1, axis, -(wp - wm));
      }
    for (int axis = 0; axis < 2; ++axis)
      for (int j = t; j < t + w; ++j) {
        const double wp = wvec[at], wm = wvec[at + 1];
        at += 2;
        add_r(j, axis, wp - wm);
        const int j1 = std::max(j - 1, 0), j2 = std::max(j - 2, 0);
        if (j1 >= t || t == 0) add_r(j1, axis, -2.0 * (wp - wm));
        if (j2 >= t || t == 0) add_r(j2, axis, wp - wm);
      }
    pullback(x, dgamma, g);
    return g;
  }
};

}  // namespace stage2_detail

/// Receding-horizon refinement: a sliding window of horizon2 future outputs,
/// committing only the first input of each window; committed inputs never
/// change afterwards.
inline Stage2Solution solve_stage2_rh(const AxisPair& pair, const ReferencePlan& plan,
                                      const Stage2Config& cfg) {
  cfg.validate();
  const int m = static_cast<int>(plan.xi_bar.size());
  if (m < 4) throw Error("stage2: trajectory too short");
  auto base = stage2_detail::make_transcription(pair, plan, cfg);

  std::vector<Vec2> committed;
  committed.reserve(static_cast<std::size_t>(m));
  std::vector<Vec2> committed_gamma;  // predictions j = 0..t
  Stage2Solution agg;
  agg.status = SolveStatus::Converged;
  long work = 0;

  // Prediction for j=0 depends only on the pad (= r_0); compute lazily after
  // the first commit inside the loop below.
  for (int t = 0; t < m; ++t) {
    const int w = std::min(cfg.horizon2, m - t);
    if (w < 1) break;
    auto win = std::make_shared<stage2_detail::RhWindow>();
    win->pair = &pair;
    win->xi = &base->xi;
    win->mu = &base->mu;
    win->committed = &committed;
    win->committed_gamma = committed_gamma;
    win->t = t;
    win->w = w;
    win->h = base->h;
    win->v_max = cfg.v_max;
    win->a_max = cfg.a_max;
    win->rho_slack = cfg.rho_slack;

    NlpProblem p;
    p.n = win->dim();
    p.m_eq = 0;
    p.m_in = win->m_in();
    p.objective = [win](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
      return win->objective(x, grad);
    };
    p.eval_in = [win](const Eigen::VectorXd& x) { return win->eval_in(x); };
    p.vjp_in = [win](const Eigen::VectorXd& x, const Eigen::VectorXd& wv) {
      return win->vjp_in(x, wv);
    };
    p.lo = Eigen::VectorXd::Constant(p.n, -kWorkspaceHalf);
    p.hi = Eigen::VectorXd::Constant(p.n, kWorkspaceHalf);

    Eigen::VectorXd x0(p.n);
    for (int axis = 0; axis < 2; ++axis)
      for (int c = 0; c < w; ++c)
        x0[axis * w + c] = plan.warm_start.points[static_cast<std::size_t>(t + c)][axis];

    SolverConfig scfg = cfg.solver;
    scfg.max_outer = std::min(scfg.max_outer, 15);
    const SolverResult res = solve(p, x0, scfg);
    work += res.gradient_evals * static_cast<long>(p.n);
    if (res.status != SolveStatus::Converged) {
      agg.flagged_windows.push_back(static_cast<std::size_t>(t));
      if (agg.status == SolveStatus::Converged) agg.status = res.status;
    }
    agg.kkt.stationarity = std::max(agg.kkt.stationarity, res.kkt.stationarity);
    agg.kkt.feasibility = std::max(agg.kkt.feasibility, res.kkt.feasibility);
    agg.kkt.complementarity = std::max(agg.kkt.complementarity, res.kkt.complementarity);

    committed.emplace_back(res.x[0], res.x[w]);
    // Record the now-fixed predictions gamma_0 (pad only, first commit) and
    // gamma_{t+1}.
    if (t == 0) {
      Eigen::MatrixXd window0(base->h, 1);
      Vec2 g0;
      for (int axis = 0; axis < 2; ++axis) {
        const MlpModel& mm = axis == 0 ? pair.x : pair.y;
        window0.setConstant(committed[0][axis] / mm.scale);
        g0[axis] = forward_batch(mm, window0)(0) * mm.scale;
      }
      committed_gamma.push_back(g0);
    }
    {
      Eigen::MatrixXd window1(base->h, 1);
      Vec2 g1;
      for (int axis = 0; axis < 2; ++axis) {
        const MlpModel& mm = axis == 0 ? pair.x : pair.y;
        for (int k = 0; k < base->h; ++k) {
          const int j = t + 1 - base->h + k;
          const double rv = j < 0 ? committed[0][axis]
                                  : (j < static_cast<int>(committed.size())
                                         ? committed[static_cast<std::size_t>(j)][axis]
                                         : res.x[axis * w + (j - t)]);
          window1(k, 0) = rv / mm.scale;
        }
        g1[axis] = forward_batch(mm, window1)(0) * mm.scale;
      }
      committed_gamma.push_back(g1);
    }
  }

  Stage2Solution sol = stage2_detail::finalize(pair, plan, cfg, std::move(committed));
  sol.kkt = agg.kkt;
  sol.status = agg.status;
  sol.work = work;
  sol.flagged_windows = std::move(agg.flagged_windows);
  return sol;
}

}  // namespace precomp
