#pragma once

#include "precomp/core.hpp"
#include "precomp/geometry.hpp"
#include "precomp/io.hpp"
#include "precomp/linmodel.hpp"
#include "precomp/nlpsolver.hpp"
#include "precomp/trajectory.hpp"

#include <json.hpp>

#include <memory>
#include <utility>
#include <vector>

namespace precomp {

struct Stage1Config {
  int n_points = 0;          // 0 -> ceil(S / 1mm), capped at 2000
  ToleranceProfile mu;       // empty -> constant 20 um
  double v_max = kMachineVmax;   // output velocity bound (per component)
  double a_max = 1.0;            // output acceleration bound (per component)
  double smooth_weight = 1.0;    // w_s on the 1/(N-2) sum of ||d2 r||^2
  double dtau_min = 1e-4;        // s, strengthens dtau >= 0
  double dtau_max = 2.0;         // s, keeps steps bounded
  int horizon = 0;               // points per window; 0 or >= N -> one-shot
  // First-order AL tolerances for this transcription. Feasibility (meters /
  // m/s / m/s^2 on near-unit-scaled rows) is the binding requirement; the
  // stationarity/complementarity certificates are what limited-memory steps
  // with least-squares multipliers deliver on the condensed program.
  SolverConfig solver{.tol_stat = 1.0, .tol_feas = 2e-5, .tol_comp = 10.0,
                      .max_outer = 40, .max_inner = 2000};

  void validate() const {
    if (n_points != 0 && n_points < 8) throw Error("stage1: N must be >= 8");
    if (!(a_max > 0.0) || a_max > kMachineAmax) throw Error("stage1: a_max out of range");
    if (!(v_max > 0.0) || v_max > kMachineVmax) throw Error("stage1: v_max out of range");
    if (!(dtau_min > 0.0)) throw Error("stage1: dtau_min must be positive");
  }
};

struct Stage1Solution {
  std::vector<double> delta_tau;          // N-1 steps
  std::vector<Vec2> r, gamma, nu;         // N nodes
  std::vector<Vec4> z;                    // N nodes
  double total_time = 0.0;
  std::vector<int> substeps;  // RK4 substep counts used per interval
  std::vector<std::pair<double, double>> schedule;  // (t_k, s_k), N entries
  KktResiduals kkt;
  SolveStatus status = SolveStatus::IterLimit;
  long work = 0;  // sum over solves of gradient evals x decision dim
};

namespace stage1_detail {

// RK4 of the linear model over one substep is the degree-4 Taylor map
//   z+ = Phi(h) z + S(h) B r,  Phi = sum_0..4 (hA)^j/j!,  S = sum_1..4 h^j A^{j-1}/j!.
// A node interval is integrated with a fixed number of such substeps: the
// single-step map is violently unstable once |eig(A)| dtau grows past ~3,
// which corner slowdowns reach immediately. Substep counts are chosen per
// node when the transcription is built and kept fixed so the map stays
// smooth in dtau.
struct StepMaps {
  Eigen::Matrix4d Phi, dPhi;
  Eigen::Matrix<double, 4, 2> Gam, dGam;
};

inline StepMaps step_maps(const LtiModel& m, double d, int substeps = 1) {
  const Eigen::Matrix4d I = Eigen::Matrix4d::Identity();
  const double h = d / static_cast<double>(substeps);
  const Eigen::Matrix4d Ah = m.A * h;
  const Eigen::Matrix4d Ah2 = Ah * Ah;
  const Eigen::Matrix4d Ah3 = Ah2 * Ah;
  const Eigen::Matrix4d Q = I + Ah + Ah2 / 2.0 + Ah3 / 6.0 + Ah3 * Ah / 24.0;
  const Eigen::Matrix4d Phi3 = I + Ah + Ah2 / 2.0 + Ah3 / 6.0;
  // d/dd of the substep maps; every substep shares h = d/m.
  const Eigen::Matrix4d dQ = (m.A * Phi3) / static_cast<double>(substeps);
  const Eigen::Matrix<double, 4, 2> Gs = (h * (I + Ah / 2.0 + Ah2 / 6.0 + Ah3 / 24.0)) * m.B;
  const Eigen::Matrix<double, 4, 2> dGs = (Phi3 * m.B) / static_cast<double>(substeps);

  StepMaps s;
  if (substeps == 1) {
    s.Phi = Q;
    s.dPhi = dQ * 1.0;
    s.Gam = Gs;
    s.dGam = dGs;
    return s;
  }
  Eigen::Matrix4d P = Q, dP = dQ;
  Eigen::Matrix<double, 4, 2> G = Gs, dG = dGs;
  for (int i = 1; i < substeps; ++i) {
    dG = dQ * G + Q * dG + dGs;
    G = Q * G + Gs;
    dP = dQ * P + Q * dP;
    P = Q * P;
  }
  s.Phi = P;
  s.dPhi = dP;
  s.Gam = G;
  s.dGam = dG;
  return s;
}

/// Direct transcription of the first-stage problem on a node window.
/// Decision vector packs [dtau (N-1), r (2N), gamma (2N), z (4N), nu (2N)].
struct Transcription {
  std::vector<Vec2> xi;             // node positions on the geometry
  std::vector<Eigen::Matrix2d> rot; // local frame rotation per node
  std::vector<double> mu;           // tolerance per node
  LtiModel model;
  double v_max = 0, a_max = 0;
  double smooth_weight = 0;
  double smooth_norm = 1.0;         // global 1/(N_total - 2)
  double dtau_min = 0, dtau_max = 0;

  bool pin_start_state = false;
  Vec4 z_start = Vec4::Zero();
  bool pin_end_state = false;
  Vec4 z_end = Vec4::Zero();
  bool pin_seam = false;            // also pin r, gamma, nu at node 0
  Vec2 seam_r = Vec2::Zero(), seam_gamma = Vec2::Zero(), seam_nu = Vec2::Zero();
  bool has_prefix = false;          // committed node just before the window
  Vec2 prev_r = Vec2::Zero(), prev_gamma = Vec2::Zero();
  double prev_dtau = 0.0;

  // Machine-side input limits with margins so KKT slop cannot trip the
  // machine's own checks.
  double r_vmax = 0.999 * kMachineVmax;
  double r_amax = 0.99 * kMachineAmax;

  // Numerical scaling: the dtau decision entries hold dtau/tau_scale, and
  // the velocity/acceleration rows are premultiplied so the subproblem
  // Hessian stays near-isotropic for the first-order inner solver.
  double tau_scale = 1.0;
  double vel_row_scale = 1.0;
  double acc_row_scale = 1.0;
  std::vector<int> substeps;      // fixed RK4 substeps per node interval
  std::vector<double> dtau_hi;    // per-interval upper bound (s)

  int N() const { return static_cast<int>(xi.size()); }
  int off_dtau() const { return 0; }
  int off_r() const { return N() - 1; }
  int off_gamma() const { return N() - 1 + 2 * N(); }
  int off_z() const { return N() - 1 + 4 * N(); }
  int off_nu() const { return N() - 1 + 8 * N(); }
  int dim() const { return N() - 1 + 10 * N(); }

  double dtau(const Eigen::VectorXd& x, int k) const { return tau_scale * x[off_dtau() + k]; }
  Vec2 r_at(const Eigen::VectorXd& x, int k) const {
    return Vec2(x[off_r() + 2 * k], x[off_r() + 2 * k + 1]);
  }
  Vec2 g_at(const Eigen::VectorXd& x, int k) const {
    return Vec2(x[off_gamma() + 2 * k], x[off_gamma() + 2 * k + 1]);
  }
  Vec4 z_at(const Eigen::VectorXd& x, int k) const {
    return Eigen::Map<const Vec4>(x.data() + off_z() + 4 * k);
  }
  Vec2 nu_at(const Eigen::VectorXd& x, int k) const {
    return Vec2(x[off_nu() + 2 * k], x[off_nu() + 2 * k + 1]);
  }

  int m_eq() const {
    return 4 * (N() - 1) + 2 * N() + 2 * N() + N() + (pin_start_state ? 4 : 0) +
           (pin_end_state ? 4 : 0) + (pin_seam ? 6 : 0);
  }
  // Acceleration rows exist at interior nodes and, with a prefix, at node 0.
  int n_acc() const { return (N() - 2) + (has_prefix ? 1 : 0); }
  int n_vel() const { return (N() - 1) + (has_prefix ? 1 : 0); }
  int m_in() const { return 2 * N() + 8 * n_vel() + 8 * n_acc(); }

  double objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
    if (grad) grad->setZero(dim());
    double f = 0.0;
    for (int k = 0; k < N() - 1; ++k) {
      f += dtau(x, k);
      if (grad) (*grad)[off_dtau() + k] += tau_scale;
    }
    const double w = smooth_weight * smooth_norm;
    //

    auto smooth_term = [&](const Vec2& rm, const Vec2& r0, const Vec2& rp, double dm, double dp,
                           int km, int k0, int kp, int sm, int sp) {
      // km/k0/kp: node indices for gradient routing, -1 for constants;
      // sm/sp: dtau indices, -1 for constants.
      const Vec2 diff = rp - 2.0 * r0 + rm;
      const double denom = dm * dp;
      const double val = w * diff.squaredNorm() / (denom * denom);
      f += val;
      if (!grad) return;
      const Vec2 gdiff = (2.0 * w / (denom * denom)) * diff;
      auto add_r = [&](int k, double c, const Vec2& v) {
        if (k < 0) return;
        (*grad)[off_r() + 2 * k] += c * v.x();
        (*grad)[off_r() + 2 * k + 1] += c * v.y();
      };
      add_r(kp, 1.0, gdiff);
      add_r(k0, -2.0, gdiff);
      add_r(km, 1.0, gdiff);
      if (sm >= 0) (*grad)[off_dtau() + sm] += -2.0 * val * tau_scale / dm;
      if (sp >= 0) (*grad)[off_dtau() + sp] += -2.0 * val * tau_scale / dp;
    };
    for (int k = 1; k <= N() - 2; ++k)
      smooth_term(r_at(x, k - 1), r_at(x, k), r_at(x, k + 1), dtau(x, k - 1), dtau(x, k), k - 1,
                  k, k + 1, k - 1, k);
    if (has_prefix)
      smooth_term(prev_r, r_at(x, 0), r_at(x, 1), prev_dtau, dtau(x, 0), -1, 0, 1, -1, 0);
    return f;
  }

  Eigen::VectorXd eval_eq(const Eigen::VectorXd& x) const {
    Eigen::VectorXd c(m_eq());
    int at = 0;
    for (int k = 0; k < N() - 1; ++k) {
      const StepMaps sm = step_maps(model, dtau(x, k), substeps[static_cast<std::size_t>(k)]);
      c.segment<4>(at) = z_at(x, k + 1) - sm.Phi * z_at(x, k) - sm.Gam * r_at(x, k);
      at += 4;
    }
    for (int k = 0; k < N(); ++k) {
      c.segment<2>(at) = g_at(x, k) - model.C * z_at(x, k) - model.D * r_at(x, k);
      at += 2;
    }
    for (int k = 0; k < N(); ++k) {
      c.segment<2>(at) = g_at(x, k) - rot[static_cast<std::size_t>(k)] * nu_at(x, k) -
                         xi[static_cast<std::size_t>(k)];
      at += 2;
    }
    for (int k = 0; k < N(); ++k) c[at++] = nu_at(x, k).x();
    if (pin_start_state) {
      c.segment<4>(at) = z_at(x, 0) - z_start;
      at += 4;
    }
    if (pin_end_state) {
      c.segment<4>(at) = z_at(x, N() - 1) - z_end;
      at += 4;
    }
    if (pin_seam) {
      c.segment<2>(at) = r_at(x, 0) - seam_r;
      c.segment<2>(at + 2) = g_at(x, 0) - seam_gamma;
      c.segment<2>(at + 4) = nu_at(x, 0) - seam_nu;
      at += 6;
    }
    return c;
  }

  Eigen::VectorXd vjp_eq(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim());
    int at = 0;
    for (int k = 0; k < N() - 1; ++k) {
      const StepMaps sm = step_maps(model, dtau(x, k), substeps[static_cast<std::size_t>(k)]);
      const Eigen::Vector4d wk = w.segment<4>(at);
      g.segment<4>(off_z() + 4 * (k + 1)) += wk;
      g.segment<4>(off_z() + 4 * k) -= sm.Phi.transpose() * wk;
      g.segment<2>(off_r() + 2 * k) -= sm.Gam.transpose() * wk;
      g[off_dtau() + k] -= tau_scale * wk.dot(sm.dPhi * z_at(x, k) + sm.dGam * r_at(x, k));
      at += 4;
    }
    for (int k = 0; k < N(); ++k) {
      const Vec2 wk = w.segment<2>(at);
      g.segment<2>(off_gamma() + 2 * k) += wk;
      g.segment<4>(off_z() + 4 * k) -= model.C.transpose() * wk;
      g.segment<2>(off_r() + 2 * k) -= model.D.transpose() * wk;
      at += 2;
    }
    for (int k = 0; k < N(); ++k) {
      const Vec2 wk = w.segment<2>(at);
      g.segment<2>(off_gamma() + 2 * k) += wk;
      g.segment<2>(off_nu() + 2 * k) -= rot[static_cast<std::size_t>(k)].transpose() * wk;
      at += 2;
    }
    for (int k = 0; k < N(); ++k) g[off_nu() + 2 * k] += w[at++];
    if (pin_start_state) {
      g.segment<4>(off_z()) += w.segment<4>(at);
      at += 4;
    }
    if (pin_end_state) {
      g.segment<4>(off_z() + 4 * (N() - 1)) += w.segment<4>(at);
      at += 4;
    }
    if (pin_seam) {
      g.segment<2>(off_r()) += w.segment<2>(at);
      g.segment<2>(off_gamma()) += w.segment<2>(at + 2);
      g.segment<2>(off_nu()) += w.segment<2>(at + 4);
      at += 6;
    }
    return g;
  }

  // Inequality rows, in order: tolerance (2N), gamma velocity (4 per step),
  // gamma acceleration (4 per acc node), r velocity, r acceleration.
  Eigen::VectorXd eval_in(const Eigen::VectorXd& x) const {
    Eigen::VectorXd c(m_in());
    int at = 0;
    for (int k = 0; k < N(); ++k) {
      const double nu2 = nu_at(x, k).y();
      c[at++] = nu2 - mu[static_cast<std::size_t>(k)];
      c[at++] = -nu2 - mu[static_cast<std::size_t>(k)];
    }
    // Divided-difference forms keep all velocity rows in m/s and all
    // acceleration rows in m/s^2, so one penalty parameter fits every row.
    auto emit_vel = [&](bool on_gamma, double vlim) {
      auto val = [&](int k) { return on_gamma ? g_at(x, k) : r_at(x, k); };
      if (has_prefix) {
        const Vec2 dv = (val(0) - (on_gamma ? prev_gamma : prev_r)) / prev_dtau;
        for (int a = 0; a < 2; ++a) {
          c[at++] = (dv[a] - vlim) * vel_row_scale;
          c[at++] = (-dv[a] - vlim) * vel_row_scale;
        }
      }
      for (int k = 0; k < N() - 1; ++k) {
        const Vec2 dv = (val(k + 1) - val(k)) / dtau(x, k);
        for (int a = 0; a < 2; ++a) {
          c[at++] = (dv[a] - vlim) * vel_row_scale;
          c[at++] = (-dv[a] - vlim) * vel_row_scale;
        }
      }
    };
    auto emit_acc = [&](bool on_gamma, double alim) {
      auto val = [&](int k) { return on_gamma ? g_at(x, k) : r_at(x, k); };
      if (has_prefix) {
        const Vec2 da =
            (val(1) - 2.0 * val(0) + (on_gamma ? prev_gamma : prev_r)) / (prev_dtau * dtau(x, 0));
        for (int a = 0; a < 2; ++a) {
          c[at++] = (da[a] - alim) * acc_row_scale;
          c[at++] = (-da[a] - alim) * acc_row_scale;
        }
      }
      for (int k = 1; k <= N() - 2; ++k) {
        const Vec2 da =
            (val(k + 1) - 2.0 * val(k) + val(k - 1)) / (dtau(x, k - 1) * dtau(x, k));
        for (int a = 0; a < 2; ++a) {
          c[at++] = (da[a] - alim) * acc_row_scale;
          c[at++] = (-da[a] - alim) * acc_row_scale;
        }
      }
    };
    emit_vel(true, v_max);
    emit_acc(true, a_max);
    emit_vel(false, r_vmax);
    emit_acc(false, r_amax);
    return c;
  }

  Eigen::VectorXd vjp_in(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim());
    int at = 0;
    for (int k = 0; k < N(); ++k) {
      g[off_nu() + 2 * k + 1] += w[at] - w[at + 1];
      at += 2;
    }
    auto add_vec = [&](bool on_gamma, int k, int axis, double coeff) {
      if (k < 0) return;  // prefix constant
      const int base = on_gamma ? off_gamma() : off_r();
      g[base + 2 * k + axis] += coeff;
    };
    auto take_vel = [&](bool on_gamma, double vlim) {
      (void)vlim;
      auto val = [&](int k) { return on_gamma ? g_at(x, k) : r_at(x, k); };
      if (has_prefix) {
        for (int a = 0; a < 2; ++a) {
          const double s = (w[at] - w[at + 1]) * vel_row_scale;
          at += 2;
          add_vec(on_gamma, 0, a, s / prev_dtau);
          // prev node and prev_dtau are constants
        }
      }
      for (int k = 0; k < N() - 1; ++k) {
        const double d = dtau(x, k);
        const Vec2 diff = val(k + 1) - val(k);
        for (int a = 0; a < 2; ++a) {
          const double s = (w[at] - w[at + 1]) * vel_row_scale;
          at += 2;
          add_vec(on_gamma, k + 1, a, s / d);
          add_vec(on_gamma, k, a, -s / d);
          g[off_dtau() + k] -= tau_scale * s * diff[a] / (d * d);
        }
      }
    };
    auto take_acc = [&](bool on_gamma, double alim) {
      (void)alim;
      auto val = [&](int k) { return on_gamma ? g_at(x, k) : r_at(x, k); };
      if (has_prefix) {
        const double d0 = dtau(x, 0);
        const Vec2 diff = val(1) - 2.0 * val(0) + (on_gamma ? prev_gamma : prev_r);
        for (int a = 0; a < 2; ++a) {
          const double s = (w[at] - w[at + 1]) * acc_row_scale;
          at += 2;
          add_vec(on_gamma, 1, a, s / (prev_dtau * d0));
          add_vec(on_gamma, 0, a, -2.0 * s / (prev_dtau * d0));
          g[off_dtau() + 0] -= tau_scale * s * diff[a] / (prev_dtau * d0 * d0);
        }
      }
      for (int k = 1; k <= N() - 2; ++k) {
        const double dm = dtau(x, k - 1), dp = dtau(x, k);
        const Vec2 diff = val(k + 1) - 2.0 * val(k) + val(k - 1);
        for (int a = 0; a < 2; ++a) {
          const double s = (w[at] - w[at + 1]) * acc_row_scale;
          at += 2;
          add_vec(on_gamma, k + 1, a, s / (dm * dp));
          add_vec(on_gamma, k, a, -2.0 * s / (dm * dp));
          add_vec(on_gamma, k - 1, a, s / (dm * dp));
          g[off_dtau() + k - 1] -= tau_scale * s * diff[a] / (dm * dm * dp);
          g[off_dtau() + k] -= tau_scale * s * diff[a] / (dm * dp * dp);
        }
      }
    };
    take_vel(true, v_max);
    take_acc(true, a_max);
    take_vel(false, r_vmax);
    take_acc(false, r_amax);
    return g;
  }

  Eigen::VectorXd lower() const {
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(dim(), -std::numeric_limits<double>::infinity());
    for (int k = 0; k < N() - 1; ++k) lo[off_dtau() + k] = dtau_min / tau_scale;
    for (int k = 0; k < 2 * N(); ++k) {
      lo[off_r() + k] = -kWorkspaceHalf;
      lo[off_gamma() + k] = -kWorkspaceHalf;
    }
    return lo;
  }
  Eigen::VectorXd upper() const {
    Eigen::VectorXd hi = Eigen::VectorXd::Constant(dim(), std::numeric_limits<double>::infinity());
    for (int k = 0; k < N() - 1; ++k)
      hi[off_dtau() + k] = dtau_hi[static_cast<std::size_t>(k)] / tau_scale;
    for (int k = 0; k < 2 * N(); ++k) {
      hi[off_r() + k] = kWorkspaceHalf;
      hi[off_gamma() + k] = kWorkspaceHalf;
    }
    return hi;
  }

  NlpProblem problem() const {
    auto self = std::make_shared<Transcription>(*this);
    NlpProblem p;
    p.n = dim();
    p.m_eq = m_eq();
    p.m_in = m_in();
    p.objective = [self](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
      return self->objective(x, grad);
    };
    p.eval_eq = [self](const Eigen::VectorXd& x) { return self->eval_eq(x); };
    p.vjp_eq = [self](const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
      return self->vjp_eq(x, w);
    };
    p.eval_in = [self](const Eigen::VectorXd& x) { return self->eval_in(x); };
    p.vjp_in = [self](const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
      return self->vjp_in(x, w);
    };
    p.lo = lower();
    p.hi = upper();
    return p;
  }
};

// Kinematic seed profile: cruise at half the velocity limit, capped by the
// local curvature, with accelerate/brake passes so the start (and a pinned
// end) begin near rest. A plain uniform-speed seed violates the output
// acceleration rows by over an order of magnitude at low a_max and strands
// the first-order solver far from the minimum-time basin.
inline std::vector<double> seed_steps(const Transcription& tr, double init_speed_frac = 0.5) {
  const int N = tr.N();
  std::vector<double> seg(static_cast<std::size_t>(N - 1));
  for (int k = 0; k + 1 < N; ++k)
    seg[static_cast<std::size_t>(k)] =
        (tr.xi[static_cast<std::size_t>(k + 1)] - tr.xi[static_cast<std::size_t>(k)]).norm();

  const double cruise = init_speed_frac * tr.v_max;
  const double a_seed = 0.85 * tr.a_max;
  std::vector<double> v(static_cast<std::size_t>(N), cruise);
  // Curvature cap from the turning angle between adjacent segments.
  for (int k = 1; k + 1 < N; ++k) {
    const Vec2 d0 = tr.xi[static_cast<std::size_t>(k)] - tr.xi[static_cast<std::size_t>(k - 1)];
    const Vec2 d1 = tr.xi[static_cast<std::size_t>(k + 1)] - tr.xi[static_cast<std::size_t>(k)];
    const double cosang = std::clamp(d0.normalized().dot(d1.normalized()), -1.0, 1.0);
    const double angle = std::acos(cosang);
    const double kappa = angle / std::max(seg[static_cast<std::size_t>(k)], 1e-9);
    if (kappa > 1e-9) v[static_cast<std::size_t>(k)] =
        std::min(v[static_cast<std::size_t>(k)], std::sqrt(0.9 * tr.a_max / kappa));
  }
  if (tr.pin_start_state && !tr.pin_seam) v[0] = 0.0;  // from rest
  if (tr.pin_end_state) v[static_cast<std::size_t>(N - 1)] = 0.0;  // to rest
  for (int k = 1; k < N; ++k)
    v[static_cast<std::size_t>(k)] = std::min(
        v[static_cast<std::size_t>(k)],
        std::sqrt(v[static_cast<std::size_t>(k - 1)] * v[static_cast<std::size_t>(k - 1)] +
                  2.0 * a_seed * seg[static_cast<std::size_t>(k - 1)]));
  for (int k = N - 2; k >= 0; --k)
    v[static_cast<std::size_t>(k)] = std::min(
        v[static_cast<std::size_t>(k)],
        std::sqrt(v[static_cast<std::size_t>(k + 1)] * v[static_cast<std::size_t>(k + 1)] +
                  2.0 * a_seed * seg[static_cast<std::size_t>(k)]));

  std::vector<double> steps(static_cast<std::size_t>(N - 1));
  for (int k = 0; k + 1 < N; ++k) {
    const double v_pair = std::max(0.5 * (v[static_cast<std::size_t>(k)] + v[static_cast<std::size_t>(k + 1)]), 1e-6);
    steps[static_cast<std::size_t>(k)] =
        std::clamp(seg[static_cast<std::size_t>(k)] / v_pair, tr.dtau_min, tr.dtau_max);
  }
  return steps;
}

inline Transcription make_transcription(const TargetGeometry& geom, const LtiModel& model,
                                        const Stage1Config& cfg, int n_total,
                                        const ToleranceProfile& mu, int k_begin, int k_end) {
  Transcription tr;
  const double S = geom.total_length();
  for (int k = k_begin; k < k_end; ++k) {
    const double s = S * static_cast<double>(k) / static_cast<double>(n_total - 1);
    tr.xi.push_back(geom.eval(s));
    const auto [frame, mu_k] = local_frame(geom, s, mu);
    tr.rot.push_back(frame.rotation());
    tr.mu.push_back(mu_k);
  }
  tr.model = model;
  tr.v_max = cfg.v_max;
  tr.a_max = cfg.a_max;
  tr.smooth_weight = cfg.smooth_weight;
  tr.smooth_norm = 1.0 / static_cast<double>(n_total - 2);
  tr.dtau_min = cfg.dtau_min;
  tr.dtau_max = cfg.dtau_max;
  // Scale dtau entries by the initial uniform step and weight the rate rows
  // so their Jacobians stay near unit magnitude at the starting point.
  double ds = 0.0;
  for (std::size_t k = 0; k + 1 < tr.xi.size(); ++k) ds += (tr.xi[k + 1] - tr.xi[k]).norm();
  ds /= std::max<double>(1.0, static_cast<double>(tr.xi.size()) - 1);
  const double dtau0 = std::clamp(ds / (0.5 * cfg.v_max), cfg.dtau_min, cfg.dtau_max);
  tr.tau_scale = dtau0;
  tr.vel_row_scale = dtau0;
  tr.acc_row_scale = dtau0 * dtau0 / ds;

  // Substep sizing: keep |eig(A)| * (dtau / substeps) below ~0.3 across the
  // whole dtau box, sized from a rest-to-rest seed schedule with 3x headroom.
  {
    Transcription shim = tr;
    shim.pin_start_state = true;
    shim.pin_end_state = true;
    const std::vector<double> seeds = seed_steps(shim);
    const double eig_max = model.A.eigenvalues().cwiseAbs().maxCoeff();
    const double h_stable = 0.3 / std::max(eig_max, 1.0);
    tr.substeps.resize(seeds.size());
    tr.dtau_hi.resize(seeds.size());
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      const double hi = std::min(cfg.dtau_max, std::max(3.0 * seeds[k], 20.0 * cfg.dtau_min));
      tr.dtau_hi[k] = hi;
      tr.substeps[k] = std::clamp(static_cast<int>(std::ceil(hi / h_stable)), 1, 400);
    }
  }
  return tr;
}


inline Eigen::VectorXd initial_point(const Transcription& tr, double init_speed_frac = 0.5) {
  const int N = tr.N();
  Eigen::VectorXd x(tr.dim());
  const std::vector<double> steps = seed_steps(tr, init_speed_frac);
  for (int k = 0; k < N - 1; ++k)
    x[tr.off_dtau() + k] = steps[static_cast<std::size_t>(k)] / tr.tau_scale;
  for (int k = 0; k < N; ++k) {
    x[tr.off_r() + 2 * k] = tr.xi[static_cast<std::size_t>(k)].x();
    x[tr.off_r() + 2 * k + 1] = tr.xi[static_cast<std::size_t>(k)].y();
  }
  Vec4 z = tr.pin_start_state ? tr.z_start : steady_state(tr.model, tr.xi.front());
  for (int k = 0; k < N; ++k) {
    x.segment<4>(tr.off_z() + 4 * k) = z;
    const Vec2 r_k = tr.pin_seam && k == 0 ? tr.seam_r : tr.xi[static_cast<std::size_t>(k)];
    const Vec2 g = tr.model.C * z + tr.model.D * r_k;
    x[tr.off_gamma() + 2 * k] = g.x();
    x[tr.off_gamma() + 2 * k + 1] = g.y();
    const Vec2 nu = tr.rot[static_cast<std::size_t>(k)].transpose() * (g - tr.xi[static_cast<std::size_t>(k)]);
    x[tr.off_nu() + 2 * k] = nu.x();
    x[tr.off_nu() + 2 * k + 1] = nu.y();
    if (k < N - 1) {
      const int m = tr.substeps[static_cast<std::size_t>(k)];
      for (int i = 0; i < m; ++i) z = rk4_step(tr.model, z, r_k, tr.dtau(x, k) / m);
    }
  }
  if (tr.pin_seam) {
    x.segment<2>(tr.off_r()) = tr.seam_r;
    x.segment<2>(tr.off_gamma()) = tr.seam_gamma;
    x.segment<2>(tr.off_nu()) = tr.seam_nu;
  }
  return x;
}

/// Condensed form of the same program used by solve_stage1: the state,
/// output, and local-coordinate sequences are eliminated through the RK4
/// rollout, leaving decisions [dtau (N-1), r (2N)] with adjoint-based
/// gradients. Equalities shrink from ~9N rows to N + boundary pins, which a
/// first-order augmented-Lagrangian method handles reliably; the packed
/// formulation from build_stage1 is algebraically equivalent.
struct ReducedTranscription {
  std::vector<Vec2> xi;
  std::vector<Vec2> tangent, normal;  // local frame axes per node
  std::vector<double> mu;
  LtiModel model;
  double v_max = 0, a_max = 0;
  double smooth_weight = 0, smooth_norm = 1.0;
  double dtau_min = 0, dtau_max = 0;
  double r_vmax = 0.999 * kMachineVmax;
  double r_amax = 0.99 * kMachineAmax;
  double tau_scale = 1.0, vel_row_scale = 1.0, acc_row_scale = 1.0;
  std::vector<int> substeps;
  std::vector<double> dtau_hi;

  Vec4 z_start = Vec4::Zero();  // window-entry state (data, not a decision)
  bool pin_end_state = false;
  Vec4 z_end = Vec4::Zero();
  bool pin_seam = false;
  Vec2 seam_r = Vec2::Zero();
  bool has_prefix = false;
  Vec2 prev_r = Vec2::Zero(), prev_gamma = Vec2::Zero();
  double prev_dtau = 0.0;

  int N() const { return static_cast<int>(xi.size()); }
  int off_r() const { return N() - 1; }
  int dim() const { return N() - 1 + 2 * N(); }
  double dtau(const Eigen::VectorXd& x, int k) const { return tau_scale * x[k]; }
  Vec2 r_at(const Eigen::VectorXd& x, int k) const {
    return Vec2(x[off_r() + 2 * k], x[off_r() + 2 * k + 1]);
  }

  static ReducedTranscription from(const Transcription& tr) {
    ReducedTranscription rd;
    rd.xi = tr.xi;
    rd.tangent.reserve(tr.rot.size());
    rd.normal.reserve(tr.rot.size());
    for (const auto& R : tr.rot) {
      rd.tangent.push_back(R.col(0));
      rd.normal.push_back(R.col(1));
    }
    rd.mu = tr.mu;
    rd.model = tr.model;
    rd.v_max = tr.v_max;
    rd.a_max = tr.a_max;
    rd.smooth_weight = tr.smooth_weight;
    rd.smooth_norm = tr.smooth_norm;
    rd.dtau_min = tr.dtau_min;
    rd.dtau_max = tr.dtau_max;
    rd.tau_scale = tr.tau_scale;
    rd.vel_row_scale = tr.vel_row_scale;
    rd.acc_row_scale = tr.acc_row_scale;
    rd.substeps = tr.substeps;
    rd.dtau_hi = tr.dtau_hi;
    rd.z_start = tr.z_start;
    rd.pin_end_state = tr.pin_end_state;
    rd.z_end = tr.z_end;
    rd.pin_seam = tr.pin_seam;
    rd.seam_r = tr.seam_r;
    rd.has_prefix = tr.has_prefix;
    rd.prev_r = tr.prev_r;
    rd.prev_gamma = tr.prev_gamma;
    rd.prev_dtau = tr.prev_dtau;
    return rd;
  }

  // Rollout cache, keyed on the decision vector.
  mutable Eigen::VectorXd cache_key;
  mutable std::vector<StepMaps> maps;
  mutable std::vector<Vec4> z;
  mutable std::vector<Vec2> gamma;

  void ensure_rollout(const Eigen::VectorXd& x) const {
    if (cache_key.size() == x.size() &&
        std::memcmp(cache_key.data(), x.data(), sizeof(double) * static_cast<std::size_t>(x.size())) == 0)
      return;
    cache_key = x;
    const int n = N();
    maps.resize(static_cast<std::size_t>(n - 1));
    z.resize(static_cast<std::size_t>(n));
    gamma.resize(static_cast<std::size_t>(n));
    z[0] = z_start;
    for (int k = 0; k < n; ++k) {
      gamma[static_cast<std::size_t>(k)] = model.C * z[static_cast<std::size_t>(k)] + model.D * r_at(x, k);
      if (k + 1 < n) {
        maps[static_cast<std::size_t>(k)] = step_maps(model, dtau(x, k), substeps[static_cast<std::size_t>(k)]);
        z[static_cast<std::size_t>(k + 1)] = maps[static_cast<std::size_t>(k)].Phi * z[static_cast<std::size_t>(k)] +
                                             maps[static_cast<std::size_t>(k)].Gam * r_at(x, k);
      }
    }
  }

  // Reverse sweep: dgamma (2 x N) are loss weights on the outputs,
  // p_terminal seeds the adjoint of the final state. Adds into grad.
  void adjoint(const Eigen::VectorXd& x, const Eigen::MatrixXd& dgamma, const Vec4& p_terminal,
               Eigen::VectorXd& grad) const {
    ensure_rollout(x);
    Vec4 p = p_terminal;
    for (int k = N() - 1; k >= 0; --k) {
      const Vec2 dg = dgamma.col(k);
      p += model.C.transpose() * dg;
      grad.segment<2>(off_r() + 2 * k) += model.D.transpose() * dg;
      if (k > 0) {
        const StepMaps& sm = maps[static_cast<std::size_t>(k - 1)];
        grad[k - 1] += tau_scale * p.dot(sm.dPhi * z[static_cast<std::size_t>(k - 1)] +
                                         sm.dGam * r_at(x, k - 1));
        grad.segment<2>(off_r() + 2 * (k - 1)) += sm.Gam.transpose() * p;
        p = sm.Phi.transpose() * p;
      }
    }
  }

  double objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
    if (grad) grad->setZero(dim());
    double f = 0.0;
    for (int k = 0; k < N() - 1; ++k) {
      f += dtau(x, k);
      if (grad) (*grad)[k] += tau_scale;
    }
    const double w = smooth_weight * smooth_norm;
    auto smooth_term = [&](const Vec2& rm, const Vec2& r0, const Vec2& rp, double dm, double dp,
                           int km, int k0, int kp, int sm, int sp) {
      const Vec2 diff = rp - 2.0 * r0 + rm;
      const double denom = dm * dp;
      const double val = w * diff.squaredNorm() / (denom * denom);
      f += val;
      if (!grad) return;
      const Vec2 gdiff = (2.0 * w / (denom * denom)) * diff;
      auto add_r = [&](int k, double c, const Vec2& v) {
        if (k < 0) return;
        (*grad)[off_r() + 2 * k] += c * v.x();
        (*grad)[off_r() + 2 * k + 1] += c * v.y();
      };
      add_r(kp, 1.0, gdiff);
      add_r(k0, -2.0, gdiff);
      add_r(km, 1.0, gdiff);
      if (sm >= 0) (*grad)[sm] += -2.0 * val * tau_scale / dm;
      if (sp >= 0) (*grad)[sp] += -2.0 * val * tau_scale / dp;
    };
    for (int k = 1; k <= N() - 2; ++k)
      smooth_term(r_at(x, k - 1), r_at(x, k), r_at(x, k + 1), dtau(x, k - 1), dtau(x, k), k - 1,
                  k, k + 1, k - 1, k);
    if (has_prefix)
      smooth_term(prev_r, r_at(x, 0), r_at(x, 1), prev_dtau, dtau(x, 0), -1, 0, 1, -1, 0);
    return f;
  }

  int m_eq() const { return N() + (pin_seam ? 2 : 0) + (pin_end_state ? 4 : 0); }

  Eigen::VectorXd eval_eq(const Eigen::VectorXd& x) const {
    ensure_rollout(x);
    Eigen::VectorXd c(m_eq());
    int at = 0;
    for (int k = 0; k < N(); ++k)
      c[at++] = tangent[static_cast<std::size_t>(k)].dot(gamma[static_cast<std::size_t>(k)] -
                                                         xi[static_cast<std::size_t>(k)]);
    if (pin_seam) {
      c.segment<2>(at) = r_at(x, 0) - seam_r;
      at += 2;
    }
    if (pin_end_state) {
      c.segment<4>(at) = z[static_cast<std::size_t>(N() - 1)] - z_end;
      at += 4;
    }
    return c;
  }

  Eigen::VectorXd vjp_eq(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const {
    ensure_rollout(x);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim());
    Eigen::MatrixXd dgamma = Eigen::MatrixXd::Zero(2, N());
    int at = 0;
    for (int k = 0; k < N(); ++k) dgamma.col(k) += w[at++] * tangent[static_cast<std::size_t>(k)];
    Vec4 p_terminal = Vec4::Zero();
    if (pin_seam) {
      g.segment<2>(off_r()) += w.segment<2>(at);
      at += 2;
    }
    if (pin_end_state) {
      p_terminal += w.segment<4>(at);
      at += 4;
    }
    adjoint(x, dgamma, p_terminal, g);
    return g;
  }

  int n_vel() const { return (N() - 1) + (has_prefix ? 1 : 0); }
  int n_acc() const { return (N() - 2) + (has_prefix ? 1 : 0); }
  int m_in() const { return 2 * N() + 4 * N() + 8 * n_vel() + 8 * n_acc(); }

  Eigen::VectorXd eval_in(const Eigen::VectorXd& x) const {
    ensure_rollout(x);
    Eigen::VectorXd c(m_in());
    int at = 0;
    for (int k = 0; k < N(); ++k) {
      const double nu2 = normal[static_cast<std::size_t>(k)].dot(gamma[static_cast<std::size_t>(k)] -
                                                                 xi[static_cast<std::size_t>(k)]);
      c[at++] = nu2 - mu[static_cast<std::size_t>(k)];
      c[at++] = -nu2 - mu[static_cast<std::size_t>(k)];
    }
    for (int k = 0; k < N(); ++k)
      for (int a = 0; a < 2; ++a) {
        c[at++] = gamma[static_cast<std::size_t>(k)][a] - kWorkspaceHalf;
        c[at++] = -gamma[static_cast<std::size_t>(k)][a] - kWorkspaceHalf;
      }
    auto emit_vel = [&](bool on_gamma, double vlim) {
      auto val = [&](int k) {
        return on_gamma ? gamma[static_cast<std::size_t>(k)] : r_at(x, k);
      };
      if (has_prefix) {
        const Vec2 dv = (val(0) - (on_gamma ? prev_gamma : prev_r)) / prev_dtau;
        for (int a = 0; a < 2; ++a) {
          c[at++] = (dv[a] - vlim) * vel_row_scale;
          c[at++] = (-dv[a] - vlim) * vel_row_scale;
        }
      }
      for (int k = 0; k < N() - 1; ++k) {
        const Vec2 dv = (val(k + 1) - val(k)) / dtau(x, k);
        for (int a = 0; a < 2; ++a) {
          c[at++] = (dv[a] - vlim) * vel_row_scale;
          c[at++] = (-dv[a] - vlim) * vel_row_scale;
        }
      }
    };
    auto emit_acc = [&](bool on_gamma, double alim) {
      auto val = [&](int k) {
        return on_gamma ? gamma[static_cast<std::size_t>(k)] : r_at(x, k);
      };
      if (has_prefix) {
        const Vec2 da =
            (val(1) - 2.0 * val(0) + (on_gamma ? prev_gamma : prev_r)) / (prev_dtau * dtau(x, 0));
        for (int a = 0; a < 2; ++a) {
          c[at++] = (da[a] - alim) * acc_row_scale;
          c[at++] = (-da[a] - alim) * acc_row_scale;
        }
      }
      for (int k = 1; k <= N() - 2; ++k) {
        const Vec2 da =
            (val(k + 1) - 2.0 * val(k) + val(k - 1)) / (dtau(x, k - 1) * dtau(x, k));
        for (int a = 0; a < 2; ++a) {
          c[at++] = (da[a] - alim) * acc_row_scale;
          c[at++] = (-da[a] - alim) * acc_row_scale;
        }
      }
    };
    emit_vel(true, v_max);
    emit_acc(true, a_max);
    emit_vel(false, r_vmax);
    emit_acc(false, r_amax);
    return c;
  }

  Eigen::VectorXd vjp_in(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const {
    ensure_rollout(x);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim());
    Eigen::MatrixXd dgamma = Eigen::MatrixXd::Zero(2, N());
    int at = 0;
    for (int k = 0; k < N(); ++k) {
      const double s = w[at] - w[at + 1];
      at += 2;
      dgamma.col(k) += s * normal[static_cast<std::size_t>(k)];
    }
    for (int k = 0; k < N(); ++k)
      for (int a = 0; a < 2; ++a) {
        dgamma(a, k) += w[at] - w[at + 1];
        at += 2;
      }
    // Velocity/acceleration rows touch either the outputs (through the
    // adjoint) or the inputs directly.
    auto route = [&](bool on_gamma, int k, int a, double coeff) {
      if (k < 0) return;
      if (on_gamma) dgamma(a, k) += coeff;
      else g[off_r() + 2 * k + a] += coeff;
    };
    auto take_vel = [&](bool on_gamma) {
      auto val = [&](int k) {
        return on_gamma ? gamma[static_cast<std::size_t>(k)] : r_at(x, k);
      };
      if (has_prefix) {
        for (int a = 0; a < 2; ++a) {
          const double s = (w[at] - w[at + 1]) * vel_row_scale;
          at += 2;
          route(on_gamma, 0, a, s / prev_dtau);
        }
      }
      for (int k = 0; k < N() - 1; ++k) {
        const double d = dtau(x, k);
        const Vec2 diff = val(k + 1) - val(k);
        for (int a = 0; a < 2; ++a) {
          const double s = (w[at] - w[at + 1]) * vel_row_scale;
          at += 2;
          route(on_gamma, k + 1, a, s / d);
          route(on_gamma, k, a, -s / d);
          g[k] -= tau_scale * s * diff[a] / (d * d);
        }
      }
    };
    auto take_acc = [&](bool on_gamma) {
      auto val = [&](int k) {
        return on_gamma ? gamma[static_cast<std::size_t>(k)] : r_at(x, k);
      };
      if (has_prefix) {
        const double d0 = dtau(x, 0);
        const Vec2 diff = val(1) - 2.0 * val(0) + (on_gamma ? prev_gamma : prev_r);
        for (int a = 0; a < 2; ++a) {
          const double s = (w[at] - w[at + 1]) * acc_row_scale;
          at += 2;
          route(on_gamma, 1, a, s / (prev_dtau * d0));
          route(on_gamma, 0, a, -2.0 * s / (prev_dtau * d0));
          g[0] -= tau_scale * s * diff[a] / (prev_dtau * d0 * d0);
        }
      }
      for (int k = 1; k <= N() - 2; ++k) {
        const double dm = dtau(x, k - 1), dp = dtau(x, k);
        const Vec2 diff = val(k + 1) - 2.0 * val(k) + val(k - 1);
        for (int a = 0; a < 2; ++a) {
          const double s = (w[at] - w[at + 1]) * acc_row_scale;
          at += 2;
          route(on_gamma, k + 1, a, s / (dm * dp));
          route(on_gamma, k, a, -2.0 * s / (dm * dp));
          route(on_gamma, k - 1, a, s / (dm * dp));
          g[k - 1] -= tau_scale * s * diff[a] / (dm * dm * dp);
          g[k] -= tau_scale * s * diff[a] / (dm * dp * dp);
        }
      }
    };
    take_vel(true);
    take_acc(true);
    take_vel(false);
    take_acc(false);
    adjoint(x, dgamma, Vec4::Zero(), g);
    return g;
  }

  Eigen::VectorXd lower() const {
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(dim(), -kWorkspaceHalf);
    for (int k = 0; k < N() - 1; ++k) lo[k] = dtau_min / tau_scale;
    return lo;
  }
  Eigen::VectorXd upper() const {
    Eigen::VectorXd hi = Eigen::VectorXd::Constant(dim(), kWorkspaceHalf);
    for (int k = 0; k < N() - 1; ++k) hi[k] = dtau_hi[static_cast<std::size_t>(k)] / tau_scale;
    return hi;
  }

  NlpProblem problem(std::shared_ptr<ReducedTranscription> self) const {
    NlpProblem p;
    p.n = dim();
    p.m_eq = m_eq();
    p.m_in = m_in();
    p.objective = [self](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
      return self->objective(x, grad);
    };
    p.eval_eq = [self](const Eigen::VectorXd& x) { return self->eval_eq(x); };
    p.vjp_eq = [self](const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
      return self->vjp_eq(x, w);
    };
    p.eval_in = [self](const Eigen::VectorXd& x) { return self->eval_in(x); };
    p.vjp_in = [self](const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
      return self->vjp_in(x, w);
    };
    p.lo = lower();
    p.hi = upper();
    return p;
  }

  Eigen::VectorXd initial_point() const {
    Eigen::VectorXd x(dim());
    Transcription shim;  // reuse the seed profile helper
    shim.xi = xi;
    shim.v_max = v_max;
    shim.a_max = a_max;
    shim.dtau_min = dtau_min;
    shim.dtau_max = dtau_max;
    shim.pin_start_state = true;
    shim.pin_end_state = pin_end_state;
    shim.pin_seam = pin_seam;
    const std::vector<double> steps = seed_steps(shim);
    for (int k = 0; k < N() - 1; ++k) x[k] = steps[static_cast<std::size_t>(k)] / tau_scale;

    // First-order lag compensation: seed the input ahead of the node by the
    // model's static delay so the rollout starts close to the tangential
    // manifold. -G'(0) = C A^-2 B at unit DC gain.
    double t_lag = 0.0;
    {
      const Eigen::Matrix4d Ainv = model.A.fullPivLu().inverse();
      const Eigen::Matrix2d lagm = model.C * Ainv * Ainv * model.B;
      t_lag = std::max(0.0, 0.5 * (lagm(0, 0) + lagm(1, 1)));
    }
    std::vector<double> arc(static_cast<std::size_t>(N()), 0.0);
    for (int k = 1; k < N(); ++k)
      arc[static_cast<std::size_t>(k)] = arc[static_cast<std::size_t>(k - 1)] +
          (xi[static_cast<std::size_t>(k)] - xi[static_cast<std::size_t>(k - 1)]).norm();
    for (int k = 0; k < N(); ++k) {
      // Local speed from the seed schedule, advanced along the node chain.
      double target = arc[static_cast<std::size_t>(k)];
      if (k < N() - 1) {
        const double v_loc = (arc[static_cast<std::size_t>(k + 1)] - arc[static_cast<std::size_t>(k)]) /
                             steps[static_cast<std::size_t>(k)];
        target = std::min(arc.back(), target + v_loc * t_lag);
      }
      // Walk to the node containing `target`.
      int j = k;
      while (j + 1 < N() && arc[static_cast<std::size_t>(j + 1)] < target) ++j;
      Vec2 seed = xi[static_cast<std::size_t>(j)];
      if (j + 1 < N()) {
        const double seg = arc[static_cast<std::size_t>(j + 1)] - arc[static_cast<std::size_t>(j)];
        const double f = seg > 0 ? (target - arc[static_cast<std::size_t>(j)]) / seg : 0.0;
        seed += f * (xi[static_cast<std::size_t>(j + 1)] - xi[static_cast<std::size_t>(j)]);
      }
      x[off_r() + 2 * k] = seed.x();
      x[off_r() + 2 * k + 1] = seed.y();
    }
    if (pin_seam) x.segment<2>(off_r()) = seam_r;
    return x;
  }
};

}  // namespace stage1_detail

inline int stage1_default_points(const TargetGeometry& geom) {
  return std::min(2000, std::max(8, static_cast<int>(std::ceil(geom.total_length() / 1e-3)) + 1));
}

/// Builds the one-shot first-stage NLP (mainly for inspection and testing;
/// solve_stage1 drives the same transcription).
inline NlpProblem build_stage1(const TargetGeometry& geom, const LtiModel& model,
                               const Stage1Config& cfg) {
  cfg.validate();
  if (!model.stable()) throw Error("stage1: model must be stable");
  const int n = cfg.n_points > 0 ? cfg.n_points : stage1_default_points(geom);
  const ToleranceProfile mu =
      cfg.mu.pieces.empty() ? ToleranceProfile::constant(kDefaultTolerance, geom.total_length())
                            : cfg.mu;
  auto tr = stage1_detail::make_transcription(geom, model, cfg, n, mu, 0, n);
  tr.pin_start_state = true;
  tr.z_start = steady_state(model, tr.xi.front());
  tr.pin_end_state = true;
  tr.z_end = steady_state(model, tr.xi.back());
  return tr.problem();
}

/// Solves the first stage. With horizon H < N, a receding-horizon loop
/// solves windows of H nodes advancing by ceil(H/2), pinning the seam node
/// for continuity and committing the advanced-over prefix of each window.
inline Stage1Solution solve_stage1(const TargetGeometry& geom, const LtiModel& model,
                                   const Stage1Config& cfg) {
  cfg.validate();
  if (!model.stable()) throw Error("stage1: model must be stable");
  const int n = cfg.n_points > 0 ? cfg.n_points : stage1_default_points(geom);
  const ToleranceProfile mu =
      cfg.mu.pieces.empty() ? ToleranceProfile::constant(kDefaultTolerance, geom.total_length())
                            : cfg.mu;
  const int H = (cfg.horizon <= 0 || cfg.horizon >= n) ? n : std::max(8, cfg.horizon);

  Stage1Solution sol;
  sol.delta_tau.assign(static_cast<std::size_t>(n - 1), 0.0);
  sol.substeps.assign(static_cast<std::size_t>(n - 1), 1);
  sol.r.resize(static_cast<std::size_t>(n));
  sol.gamma.resize(static_cast<std::size_t>(n));
  sol.nu.resize(static_cast<std::size_t>(n));
  sol.z.resize(static_cast<std::size_t>(n));
  sol.status = SolveStatus::Converged;

  const int advance = (H + 1) / 2;
  int k0 = 0;
  // Previous window solution, for warm starting the overlap.
  Eigen::VectorXd prev_x;
  double prev_tau_scale = 1.0;
  int prev_k0 = 0, prev_k1 = 0;
  double worst_stationarity = 0.0, worst_feasibility = 0.0, worst_comp = 0.0;

  while (true) {
    const int k1 = std::min(k0 + H, n);
    auto tr = stage1_detail::make_transcription(geom, model, cfg, n, mu, k0, k1);
    tr.pin_start_state = true;
    if (k0 == 0) {
      tr.z_start = steady_state(model, tr.xi.front());
    } else {
      tr.z_start = sol.z[static_cast<std::size_t>(k0)];
      tr.pin_seam = true;
      tr.seam_r = sol.r[static_cast<std::size_t>(k0)];
      tr.seam_gamma = sol.gamma[static_cast<std::size_t>(k0)];
      tr.seam_nu = sol.nu[static_cast<std::size_t>(k0)];
      tr.has_prefix = true;
      tr.prev_r = sol.r[static_cast<std::size_t>(k0 - 1)];
      tr.prev_gamma = sol.gamma[static_cast<std::size_t>(k0 - 1)];
      tr.prev_dtau = sol.delta_tau[static_cast<std::size_t>(k0 - 1)];
    }
    if (k1 == n) {
      tr.pin_end_state = true;
      tr.z_end = steady_state(model, tr.xi.back());
    }

    auto rd = std::make_shared<stage1_detail::ReducedTranscription>(
        stage1_detail::ReducedTranscription::from(tr));
    Eigen::VectorXd x0 = rd->initial_point();
    if (prev_x.size() > 0) {
      // Reuse the previous window's solution on the overlapping nodes.
      const int prev_off_r = (prev_k1 - prev_k0) - 1;
      for (int k = k0; k < std::min(k1, prev_k1); ++k) {
        const int kw = k - k0, kp = k - prev_k0;
        x0.segment<2>(rd->off_r() + 2 * kw) = prev_x.segment<2>(prev_off_r + 2 * kp);
        if (k + 1 < std::min(k1, prev_k1)) x0[kw] = prev_x[kp] * prev_tau_scale / rd->tau_scale;
      }
    }
    const NlpProblem p = rd->problem(rd);
    SolverResult res = solve(p, x0, cfg.solver);
    sol.work += res.gradient_evals * static_cast<long>(p.n);
    worst_stationarity = std::max(worst_stationarity, res.kkt.stationarity);
    worst_feasibility = std::max(worst_feasibility, res.kkt.feasibility);
    worst_comp = std::max(worst_comp, res.kkt.complementarity);
    if (res.status == SolveStatus::Infeasible) {
      const Eigen::VectorXd cin = p.eval_in(res.x);
      int worst = 0;
      double worst_v = -1;
      for (int i = 0; i < cin.size(); ++i)
        if (cin[i] > worst_v) { worst_v = cin[i]; worst = i; }
      throw InfeasibleError("stage1: window at node " + std::to_string(k0) +
                            " infeasible; worst inequality row " + std::to_string(worst) +
                            " violation " + std::to_string(worst_v));
    }
    if (res.status != SolveStatus::Converged) sol.status = res.status;

    // Node sequences reconstructed from the rollout at the solution.
    rd->ensure_rollout(res.x);
    auto nu_of = [&](int kw) {
      const Vec2 dev = rd->gamma[static_cast<std::size_t>(kw)] - rd->xi[static_cast<std::size_t>(kw)];
      return Vec2(rd->tangent[static_cast<std::size_t>(kw)].dot(dev),
                  rd->normal[static_cast<std::size_t>(kw)].dot(dev));
    };
    // Commit the advanced-over prefix (everything when this is the last window).
    const int commit_end = (k1 == n) ? k1 : std::min(k0 + advance, n);
    for (int k = k0; k < commit_end; ++k) {
      const int kw = k - k0;
      sol.r[static_cast<std::size_t>(k)] = rd->r_at(res.x, kw);
      sol.gamma[static_cast<std::size_t>(k)] = rd->gamma[static_cast<std::size_t>(kw)];
      sol.nu[static_cast<std::size_t>(k)] = nu_of(kw);
      sol.z[static_cast<std::size_t>(k)] = rd->z[static_cast<std::size_t>(kw)];
      if (k < n - 1 && kw < rd->N() - 1) {
        sol.delta_tau[static_cast<std::size_t>(k)] = rd->dtau(res.x, kw);
        sol.substeps[static_cast<std::size_t>(k)] = rd->substeps[static_cast<std::size_t>(kw)];
      }
    }
    if (k1 == n) break;
    // Seam node for the next window.
    const int seam = commit_end;
    sol.r[static_cast<std::size_t>(seam)] = rd->r_at(res.x, seam - k0);
    sol.gamma[static_cast<std::size_t>(seam)] = rd->gamma[static_cast<std::size_t>(seam - k0)];
    sol.nu[static_cast<std::size_t>(seam)] = nu_of(seam - k0);
    sol.z[static_cast<std::size_t>(seam)] = rd->z[static_cast<std::size_t>(seam - k0)];
    prev_x = res.x;
    prev_tau_scale = rd->tau_scale;
    prev_k0 = k0;
    prev_k1 = k1;
    k0 = seam;
  }

  sol.kkt = {worst_stationarity, worst_feasibility, worst_comp};
  sol.total_time = 0.0;
  sol.schedule.resize(static_cast<std::size_t>(n));
  const double S = geom.total_length();
  double t = 0.0;
  for (int k = 0; k < n; ++k) {
    sol.schedule[static_cast<std::size_t>(k)] = {t, S * static_cast<double>(k) / static_cast<double>(n - 1)};
    if (k < n - 1) t += sol.delta_tau[static_cast<std::size_t>(k)];
  }
  sol.total_time = t;
  return sol;
}

/// Time-equidistant resampling of the geometry along the solved schedule,
/// plus a warm-start input obtained by interpolating the stage-1 r onto the
/// uniform 400 Hz grid.
struct ReferencePlan {
  std::vector<Vec2> xi_bar;       // M samples
  std::vector<double> s_at_t;     // M progress values
  Trajectory warm_start;          // M samples at 400 Hz
};

inline ReferencePlan schedule_to_reference(const Stage1Solution& sol, const TargetGeometry& geom,
                                           double dt = kSampleDt) {
  ReferencePlan plan;
  plan.xi_bar = sample_equal_time(geom, sol.schedule, dt, &plan.s_at_t);
  const std::size_t m = plan.xi_bar.size();
  std::vector<Vec2> r(m);
  std::size_t seg = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double t = std::min(static_cast<double>(i) * dt, sol.schedule.back().first);
    while (seg + 2 < sol.schedule.size() && sol.schedule[seg + 1].first < t) ++seg;
    const double t0 = sol.schedule[seg].first, t1 = sol.schedule[seg + 1].first;
    const double u = t1 > t0 ? std::clamp((t - t0) / (t1 - t0), 0.0, 1.0) : 0.0;
    r[i] = (1.0 - u) * sol.r[seg] + u * sol.r[seg + 1];
  }
  plan.warm_start = Trajectory::uniform(dt, std::move(r));
  return plan;
}

// --- solution file format ----------------------------------------------------

inline std::string stage1_to_json(const Stage1Solution& sol) {
  nlohmann::ordered_json j;
  j["T"] = sol.total_time;
  j["delta_tau"] = sol.delta_tau;
  auto sched = nlohmann::json::array();
  for (const auto& [t, s] : sol.schedule) sched.push_back({t, s});
  j["schedule"] = std::move(sched);
  auto rr = nlohmann::json::array();
  for (const auto& v : sol.r) rr.push_back({v.x(), v.y()});
  j["r"] = std::move(rr);
  j["kkt"] = {{"stationarity", sol.kkt.stationarity},
              {"feasibility", sol.kkt.feasibility},
              {"complementarity", sol.kkt.complementarity}};
  j["status"] = sol.status == SolveStatus::Converged ? "converged"
               : sol.status == SolveStatus::IterLimit ? "iter_limit"
                                                      : "infeasible";
  return j.dump(2) + "\n";
}

}  // namespace precomp
