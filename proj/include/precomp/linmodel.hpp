#pragma once

#include "precomp/core.hpp"
#include "precomp/io.hpp"
#include "precomp/trajectory.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <json.hpp>

#include <algorithm>
#include <array>
#include <utility>
#include <vector>

namespace precomp {

/// Continuous-time 4-state LTI model of the closed loop,
/// z' = A z + B r, gamma = C z + D r.
struct LtiModel {
  Eigen::Matrix4d A;
  Eigen::Matrix<double, 4, 2> B;
  Eigen::Matrix<double, 2, 4> C;
  Eigen::Matrix2d D;

  bool stable() const {
    return A.eigenvalues().real().maxCoeff() < 0.0;
  }
};

/// Classical RK4 step of z' = A z + B r with r held constant. For a linear
/// system this is the degree-4 Taylor map z+ = Phi(dt) z + Gamma(dt) B r.
inline Vec4 rk4_step(const LtiModel& m, const Vec4& z, const Vec2& r, double dtau) {
  if (!(dtau > 0.0)) throw Error("rk4_step: dtau <= 0");
  const Vec2& u = r;
  const Vec4 k1 = m.A * z + m.B * u;
  const Vec4 k2 = m.A * (z + 0.5 * dtau * k1) + m.B * u;
  const Vec4 k3 = m.A * (z + 0.5 * dtau * k2) + m.B * u;
  const Vec4 k4 = m.A * (z + dtau * k3) + m.B * u;
  return z + (dtau / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline Vec2 output(const LtiModel& m, const Vec4& z, const Vec2& r) {
  return m.C * z + m.D * r;
}

/// Repeated rk4_step + output over a uniformly sampled input.
inline Trajectory simulate(const LtiModel& m, const Trajectory& r, const Vec4& z0) {
  if (!r.uniform_dt) throw Error("simulate: input must be uniformly sampled");
  const double dt = *r.uniform_dt;
  Vec4 z = z0;
  std::vector<Vec2> out(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    out[i] = output(m, z, r.points[i]);
    if (i + 1 < r.size()) z = rk4_step(m, z, r.points[i], dt);
  }
  return Trajectory::uniform(dt, std::move(out));
}

/// Steady state (z, implied) holding the output at p with a constant input:
/// solves [A B; C D] [z; r] = [0; p]. Returns z.
inline Vec4 steady_state(const LtiModel& m, const Vec2& p) {
  Eigen::Matrix<double, 6, 6> K;
  K.topLeftCorner<4, 4>() = m.A;
  K.topRightCorner<4, 2>() = m.B;
  K.bottomLeftCorner<2, 4>() = m.C;
  K.bottomRightCorner<2, 2>() = m.D;
  Eigen::Matrix<double, 6, 1> rhs;
  rhs << 0, 0, 0, 0, p.x(), p.y();
  const Eigen::Matrix<double, 6, 1> sol = K.fullPivLu().solve(rhs);
  return sol.head<4>();
}

namespace detail {

struct DiscreteRealization {
  Eigen::Matrix4d Ad;
  Eigen::Matrix<double, 4, 2> Bd;
  Eigen::Matrix<double, 2, 4> C;
  Eigen::Matrix2d D;
};

// Accumulated normal equations of the FIR regression gamma_i ~ sum_k G_k
// r_{i-k} (joint MIMO). Built once per tap count, solved per regularizer.
struct FirNormalEq {
  Eigen::MatrixXd gram;
  Eigen::MatrixXd rhs;
  int taps = 0;
};

inline FirNormalEq fir_normal_eq(const std::vector<std::pair<Trajectory, Trajectory>>& pairs,
                                 int taps, double fit_fraction) {
  const int dim = 2 * taps;
  FirNormalEq eq;
  eq.taps = taps;
  eq.gram = Eigen::MatrixXd::Zero(dim, dim);
  eq.rhs = Eigen::MatrixXd::Zero(dim, 2);
  Eigen::VectorXd phi(dim);
  for (const auto& [r, g] : pairs) {
    const std::size_t fit_end = static_cast<std::size_t>(fit_fraction * static_cast<double>(r.size()));
    for (std::size_t i = static_cast<std::size_t>(taps) - 1; i < fit_end; ++i) {
      for (int k = 0; k < taps; ++k) {
        phi[2 * k] = r.points[i - static_cast<std::size_t>(k)].x();
        phi[2 * k + 1] = r.points[i - static_cast<std::size_t>(k)].y();
      }
      eq.gram.selfadjointView<Eigen::Lower>().rankUpdate(phi);
      eq.rhs += phi * g.points[i].transpose();
    }
  }
  eq.gram = Eigen::MatrixXd(eq.gram.selfadjointView<Eigen::Lower>());
  return eq;
}

// Least-squares FIR solve with a first-difference smoothness prior across
// lags. Unmodeled (nonlinear) plant behavior otherwise scatters into the
// individual Markov coefficients and wrecks the Hankel realization even when
// the raw FIR predicts well.
inline std::vector<Eigen::Matrix2d> solve_markov(const FirNormalEq& eq, double smooth_rel,
                                                 double ridge_rel = 1e-9) {
  const int taps = eq.taps;
  const int dim = 2 * taps;
  Eigen::MatrixXd full = eq.gram;
  const double scale = full.trace() / dim;
  for (int k = 0; k + 1 < taps; ++k)
    for (int ch = 0; ch < 2; ++ch) {
      const int a = 2 * k + ch, b = 2 * (k + 1) + ch;
      full(a, a) += smooth_rel * scale;
      full(b, b) += smooth_rel * scale;
      full(a, b) -= smooth_rel * scale;
      full(b, a) -= smooth_rel * scale;
    }
  full.diagonal().array() += ridge_rel * scale;
  const Eigen::MatrixXd theta = full.ldlt().solve(eq.rhs);
  std::vector<Eigen::Matrix2d> markov(static_cast<std::size_t>(taps));
  for (int k = 0; k < taps; ++k) {
    // G_k(out, in) with theta rows ordered [r_{i-k}.x, r_{i-k}.y].
    markov[static_cast<std::size_t>(k)] << theta(2 * k, 0), theta(2 * k + 1, 0),
        theta(2 * k, 1), theta(2 * k + 1, 1);
  }
  return markov;
}

// Ho-Kalman realization of order 4 from Markov parameters.
inline DiscreteRealization realize(const std::vector<Eigen::Matrix2d>& markov) {
  const int taps = static_cast<int>(markov.size());
  const int nblk = (taps - 2) / 2;  // H uses G_1..G_{2nblk-1}, shifted up to G_{2nblk}
  if (nblk < 4) throw NumericalError("identify: too few Markov parameters");
  Eigen::MatrixXd H(2 * nblk, 2 * nblk), Hs(2 * nblk, 2 * nblk);
  for (int i = 0; i < nblk; ++i)
    for (int j = 0; j < nblk; ++j) {
      H.block<2, 2>(2 * i, 2 * j) = markov[static_cast<std::size_t>(i + j + 1)];
      Hs.block<2, 2>(2 * i, 2 * j) = markov[static_cast<std::size_t>(i + j + 2)];
    }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(H, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv(3) < 1e-10 * sv(0))
    throw NumericalError("identify: Hankel rank < 4, insufficient excitation");
  const Eigen::Matrix<double, Eigen::Dynamic, 4> U4 = svd.matrixU().leftCols<4>();
  const Eigen::Matrix<double, Eigen::Dynamic, 4> V4 = svd.matrixV().leftCols<4>();
  const Eigen::Vector4d s4 = sv.head<4>();
  const Eigen::Vector4d si = s4.cwiseSqrt().cwiseInverse();

  DiscreteRealization d;
  d.Ad = si.asDiagonal() * (U4.transpose() * Hs * V4) * si.asDiagonal();
  d.Bd = (s4.cwiseSqrt().asDiagonal() * V4.transpose()).leftCols<2>();
  d.C = (U4 * s4.cwiseSqrt().asDiagonal()).topRows<2>();
  d.D = markov[0];

  // Pin the realized static gain to the FIR's own static map: the truncation
  // extrapolates the impulse-response tail and otherwise drifts at DC.
  Eigen::Matrix2d dc_fir = Eigen::Matrix2d::Zero();
  for (const auto& G : markov) dc_fir += G;
  const Eigen::Matrix4d IA = Eigen::Matrix4d::Identity() - d.Ad;
  if (std::abs(IA.determinant()) > 1e-12) {
    const Eigen::Matrix2d M = d.C * IA.inverse() * d.Bd;
    if (std::abs(M.determinant()) > 1e-12 * M.norm() * M.norm())
      d.Bd = d.Bd * (M.inverse() * (dc_fir - d.D));
  }
  return d;
}

inline LtiModel to_continuous(const DiscreteRealization& d, double dt) {
  const Eigen::Vector4cd eig = d.Ad.eigenvalues();
  for (int i = 0; i < 4; ++i) {
    if (std::abs(eig(i)) >= 1.0)
      throw NumericalError("identify: unstable discrete realization");
    if (eig(i).real() <= 0.0 && std::abs(eig(i).imag()) < 1e-14)
      throw NumericalError("identify: matrix log undefined (negative real eigenvalue)");
  }
  LtiModel m;
  m.A = d.Ad.log() / dt;
  // Zero-order-hold relation: Bd = (int_0^dt exp(A tau) dtau) B.
  Eigen::Matrix<double, 8, 8> aug = Eigen::Matrix<double, 8, 8>::Zero();
  aug.topLeftCorner<4, 4>() = m.A * dt;
  aug.topRightCorner<4, 4>() = Eigen::Matrix4d::Identity() * dt;
  const Eigen::Matrix<double, 8, 8> e = aug.exp();
  const Eigen::Matrix4d integral = e.topRightCorner<4, 4>();
  m.B = integral.fullPivLu().solve(d.Bd);
  m.C = d.C;
  m.D = d.D;
  return m;
}

// RMSE of the discrete realization simulated over the held-out tail.
inline double heldout_rmse(const DiscreteRealization& d,
                           const std::vector<std::pair<Trajectory, Trajectory>>& pairs,
                           double fit_fraction) {
  double se = 0.0;
  std::size_t n = 0;
  for (const auto& [r, g] : pairs) {
    Vec4 z = Vec4::Zero();
    const std::size_t eval_start = static_cast<std::size_t>(fit_fraction * static_cast<double>(r.size()));
    for (std::size_t i = 0; i < r.size(); ++i) {
      const Vec2 pred = d.C * z + d.D * r.points[i];
      if (i >= eval_start) {
        se += (pred - g.points[i]).squaredNorm();
        n += 2;
      }
      z = d.Ad * z + d.Bd * r.points[i];
    }
  }
  return std::sqrt(se / static_cast<double>(std::max<std::size_t>(n, 1)));
}

}  // namespace detail

/// Identifies the continuous-time model from 400 Hz input/output pairs:
/// FIR Markov-parameter fit, block-Hankel SVD realization (order 4), then
/// principal matrix log + ZOH relation. Candidates over FIR lengths
/// {40, 80, 160} (and a small grid of smoothness priors) are ranked by the
/// held-out prediction RMSE of the realized model.
inline LtiModel identify(const std::vector<std::pair<Trajectory, Trajectory>>& pairs) {
  std::size_t total = 0;
  for (const auto& [r, g] : pairs) {
    if (r.size() != g.size()) throw Error("identify: pair length mismatch");
    if (!r.uniform_dt || std::abs(*r.uniform_dt - kSampleDt) > 1e-12)
      throw Error("identify: pairs must be sampled at 400 Hz");
    total += r.size();
  }
  if (total < 10000) throw Error("identify: need at least 1e4 samples");

  const double fit_fraction = 0.9;  // last 10% held out for candidate selection
  struct Candidate {
    double rmse;
    detail::DiscreteRealization disc;
  };
  std::vector<Candidate> candidates;
  std::string first_failure;
  for (int taps : {40, 80, 160}) {
    const detail::FirNormalEq eq = detail::fir_normal_eq(pairs, taps, fit_fraction);
    for (double smooth : {0.0, 1e-7, 1e-6, 1e-5}) {
      try {
        const auto markov = detail::solve_markov(eq, smooth);
        const auto disc = detail::realize(markov);
        candidates.push_back({detail::heldout_rmse(disc, pairs, fit_fraction), disc});
      } catch (const NumericalError& e) {
        if (first_failure.empty()) first_failure = e.what();
      }
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) { return a.rmse < b.rmse; });
  for (const auto& cand : candidates) {
    try {
      return detail::to_continuous(cand.disc, kSampleDt);
    } catch (const NumericalError& e) {
      if (first_failure.empty()) first_failure = e.what();
    }
  }
  throw NumericalError("identify: all candidates failed: " + first_failure);
}

// --- model file format ------------------------------------------------------

inline std::string lti_to_json(const LtiModel& m) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["dt_id"] = kSampleDt;
  auto mat = [](const auto& M) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
      auto row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  j["A"] = mat(m.A);
  j["B"] = mat(m.B);
  j["C"] = mat(m.C);
  j["D"] = mat(m.D);
  return j.dump(2) + "\n";
}

inline LtiModel lti_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.at("version").get<int>() != 1) throw IoError("lti json: unsupported version");
  LtiModel m;
  auto mat = [&](const char* key, auto& M) {
    const auto& rows = j.at(key);
    for (Eigen::Index r = 0; r < M.rows(); ++r)
      for (Eigen::Index c = 0; c < M.cols(); ++c)
        M(r, c) = rows.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
  };
  mat("A", m.A);
  mat("B", m.B);
  mat("C", m.C);
  mat("D", m.D);
  return m;
}

inline void save_lti_json(const std::filesystem::path& path, const LtiModel& m) {
  io::atomic_write(path, lti_to_json(m));
}

inline LtiModel load_lti_json(const std::filesystem::path& path) {
  return lti_from_json(io::read_file(path));
}

}  // namespace precomp
