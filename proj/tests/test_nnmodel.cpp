#include "precomp/nnmodel.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace precomp;

namespace {

std::vector<double> random_window(std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> w(kWindow);
  for (auto& v : w) v = g(rng);
  return w;
}

// Straight-loop reimplementation of the forward pass, no Eigen products.
double forward_oracle(const MlpModel& m, const std::vector<double>& window) {
  std::vector<double> a = window;
  for (int l = 0; l < m.layers(); ++l) {
    const auto& W = m.W[static_cast<std::size_t>(l)];
    const auto& b = m.b[static_cast<std::size_t>(l)];
    std::vector<double> next(static_cast<std::size_t>(W.rows()));
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      double acc = b(r);
      for (Eigen::Index c = 0; c < W.cols(); ++c) acc += W(r, c) * a[static_cast<std::size_t>(c)];
      next[static_cast<std::size_t>(r)] =
          (l + 1 < m.layers()) ? (acc > 0 ? acc : m.leaky_slope * acc) : acc;
    }
    a = std::move(next);
  }
  return a[0];
}

// True when no pre-activation sits within eps of a LeakyReLU kink.
bool away_from_kinks(const MlpModel& m, const std::vector<double>& window, double eps) {
  Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(window.data(), kWindow);
  for (int l = 0; l + 1 < m.layers(); ++l) {
    const Eigen::VectorXd pre = m.W[static_cast<std::size_t>(l)] * a + m.b[static_cast<std::size_t>(l)];
    if (pre.cwiseAbs().minCoeff() < eps) return false;
    a = pre.unaryExpr([&](double v) { return v > 0 ? v : m.leaky_slope * v; });
  }
  return true;
}

WindowDataset linear_target_dataset(std::size_t count, std::uint64_t seed) {
  WindowDataset ds;
  ds.h = kWindow;
  ds.scale = kWorkspaceHalf;
  ds.inputs.resize(kWindow, static_cast<Eigen::Index>(count));
  ds.targets.resize(static_cast<Eigen::Index>(count));
  ds.is_train.resize(count);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> start(0.0, 0.3);
  std::normal_distribution<double> step(0.0, 0.01);
  for (std::size_t i = 0; i < count; ++i) {
    // Trajectory-like windows: smooth random walks, as produced by the
    // corpus generator, rather than isotropic 200-d noise.
    double v = start(rng);
    for (int k = 0; k < kWindow; ++k) {
      v += step(rng);
      ds.inputs(k, static_cast<Eigen::Index>(i)) = v;
    }
    ds.targets(static_cast<Eigen::Index>(i)) = 0.5 * ds.inputs(kWindow - 1, static_cast<Eigen::Index>(i));
    ds.is_train[i] = i < (count * 4) / 5 ? 1 : 0;
  }
  return ds;
}

}  // namespace

TEST_CASE("parameter count matches the architecture") {
  const MlpModel m = MlpModel::zeros();
  CHECK(m.parameter_count() == 117322);
  // Layer-by-layer identity: sum over dims of n_l*n_{l+1} + n_{l+1}.
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < kMlpDims.size(); ++l)
    total += static_cast<std::size_t>(kMlpDims[l]) * static_cast<std::size_t>(kMlpDims[l + 1]) +
             static_cast<std::size_t>(kMlpDims[l + 1]);
  CHECK(total == 117322);
}

TEST_CASE("forward pass basics") {
  const MlpModel zero = MlpModel::zeros();
  CHECK(forward(zero, random_window(1)) == 0.0);

  const MlpModel ident = MlpModel::identity_stub();
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto w = random_window(s);
    CHECK(forward(ident, w) == doctest::Approx(w.back()).epsilon(1e-14));
  }

  std::vector<double> short_window(10, 0.0);
  CHECK_THROWS_AS(forward(zero, short_window), Error);
}

TEST_CASE("forward matches an independently coded oracle") {
  const MlpModel m = MlpModel::random_init(3);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto w = random_window(100 + s);
    const double a = forward(m, w);
    const double b = forward_oracle(m, w);
    CHECK(std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)));
  }
}

TEST_CASE("parameter gradient: zero at zero error, analytic on a tiny net") {
  MlpModel m = MlpModel::random_init(7);
  const auto w = random_window(9);
  const double pred = forward(m, w);
  const Eigen::VectorXd g = grad_params(m, w, pred);
  CHECK(g.cwiseAbs().maxCoeff() == 0.0);

  // Degenerate single-active-path analytic check: output layer weight w_out
  // sees d(loss)/dw = (pred - target) * activation.
  const double target = pred - 0.01;
  const Eigen::VectorXd g2 = grad_params(m, w, target);
  // Last bias gradient equals the error itself.
  CHECK(g2(g2.size() - 1) == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("parameter gradient agrees with central differences") {
  MlpModel m = MlpModel::random_init(11);
  const auto w = random_window(13);
  REQUIRE(away_from_kinks(m, w, 1e-4));
  const double target = 0.2;
  const Eigen::VectorXd g = grad_params(m, w, target);

  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> pick(0, m.parameter_count() - 1);
  auto loss_at = [&](const MlpModel& model) {
    const double e = forward(model, w) - target;
    return 0.5 * e * e;
  };
  int checked = 0;
  while (checked < 60) {
    const std::size_t idx = pick(rng);
    // Locate the parameter inside the layer structure.
    std::size_t off = idx;
    MlpModel probe = m;
    double* slot = nullptr;
    for (int l = 0; l < probe.layers(); ++l) {
      auto& W = probe.W[static_cast<std::size_t>(l)];
      auto& b = probe.b[static_cast<std::size_t>(l)];
      if (off < static_cast<std::size_t>(W.size())) {
        const Eigen::Index r = static_cast<Eigen::Index>(off) / W.cols();
        const Eigen::Index c = static_cast<Eigen::Index>(off) % W.cols();
        slot = &W(r, c);
        break;
      }
      off -= static_cast<std::size_t>(W.size());
      if (off < static_cast<std::size_t>(b.size())) {
        slot = &b(static_cast<Eigen::Index>(off));
        break;
      }
      off -= static_cast<std::size_t>(b.size());
    }
    REQUIRE(slot != nullptr);
    const double h = 1e-6;
    const double keep = *slot;
    *slot = keep + h;
    const double fp = loss_at(probe);
    *slot = keep - h;
    const double fm = loss_at(probe);
    *slot = keep;
    const double fd = (fp - fm) / (2.0 * h);
    const double an = g(static_cast<Eigen::Index>(idx));
    // Coordinates whose derivative is below the finite-difference noise
    // floor agree absolutely, not relatively.
    if (std::abs(an - fd) < 1e-10) {
      ++checked;
      continue;
    }
    CHECK(std::abs(an - fd) / std::max(1e-8, std::abs(fd)) < 1e-5);
    ++checked;
  }
}

TEST_CASE("input gradient: zero net, linear regime, finite differences") {
  const MlpModel zero = MlpModel::zeros();
  CHECK(grad_input(zero, random_window(1)).cwiseAbs().maxCoeff() == 0.0);

  // Identity stub is linear: the gradient is the same for any window.
  const MlpModel ident = MlpModel::identity_stub();
  const Eigen::VectorXd ga = grad_input(ident, random_window(2));
  const Eigen::VectorXd gb = grad_input(ident, random_window(3));
  CHECK((ga - gb).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(ga(kWindow - 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ga.head(kWindow - 1).cwiseAbs().maxCoeff() < 1e-14);

  MlpModel m = MlpModel::random_init(23);
  auto w = random_window(29);
  REQUIRE(away_from_kinks(m, w, 1e-4));
  const Eigen::VectorXd g = grad_input(m, w);
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> pick(0, kWindow - 1);
  for (int trial = 0; trial < 60; ++trial) {
    const int idx = pick(rng);
    const double h = 1e-6;
    auto wp = w, wm = w;
    wp[static_cast<std::size_t>(idx)] += h;
    wm[static_cast<std::size_t>(idx)] -= h;
    const double fd = (forward(m, wp) - forward(m, wm)) / (2.0 * h);
    if (std::abs(g(idx) - fd) < 1e-10) continue;
    CHECK(std::abs(g(idx) - fd) / std::max(1e-8, std::abs(fd)) < 1e-5);
  }
}

TEST_CASE("batched passes agree with single-window calls") {
  const MlpModel m = MlpModel::random_init(37);
  Eigen::MatrixXd windows(kWindow, 7);
  for (int c = 0; c < 7; ++c) {
    const auto w = random_window(static_cast<std::uint64_t>(300 + c));
    windows.col(c) = Eigen::Map<const Eigen::VectorXd>(w.data(), kWindow);
  }
  BatchTape tape;
  forward_batch(m, windows, tape);
  for (int c = 0; c < 7; ++c) {
    std::vector<double> w(windows.col(c).data(), windows.col(c).data() + kWindow);
    CHECK(tape.out(c) == doctest::Approx(forward(m, w)).epsilon(1e-14));
  }
  // Input gradients per column match grad_input.
  Eigen::RowVectorXd seed = Eigen::RowVectorXd::Ones(7);
  const Eigen::MatrixXd dwin = backward_batch(m, tape, seed);
  for (int c = 0; c < 7; ++c) {
    std::vector<double> w(windows.col(c).data(), windows.col(c).data() + kWindow);
    const Eigen::VectorXd g = grad_input(m, w);
    CHECK((dwin.col(c) - g).cwiseAbs().maxCoeff() < 1e-12);
  }
  // Parameter gradients: batch of one equals grad_params.
  const double target = 0.1;
  BatchTape tape1;
  forward_batch(m, windows.col(0), tape1);
  Eigen::VectorXd pg(static_cast<Eigen::Index>(m.parameter_count()));
  Eigen::RowVectorXd dpred(1);
  dpred(0) = tape1.out(0) - target;
  backward_batch(m, tape1, dpred, &pg);
  std::vector<double> w0(windows.col(0).data(), windows.col(0).data() + kWindow);
  CHECK((pg - grad_params(m, w0, target)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("training learns a linear target and is deterministic") {
  const WindowDataset ds = linear_target_dataset(16000, 5);
  TrainConfig cfg;
  cfg.batch_size = 1024;
  cfg.epochs = 12;
  cfg.seed = 9;
  TrainReport report;
  const MlpModel m = train(ds, cfg, &report);

  // Held-out RMSE (scaled units).
  double best = *std::min_element(report.heldout_mse.begin(), report.heldout_mse.end());
  CHECK(std::sqrt(best) < 1e-4);
  CHECK(report.best_epoch >= 0);

  // Epoch-averaged train loss is non-increasing up to 10% violations.
  int violations = 0;
  for (std::size_t e = 1; e < report.train_mse.size(); ++e)
    if (report.train_mse[e] > report.train_mse[e - 1]) ++violations;
  CHECK(violations <= static_cast<int>(report.train_mse.size()) / 10);

  // Determinism: same seed, same weights, bit for bit.
  TrainConfig cfg2 = cfg;
  cfg2.epochs = 3;
  const MlpModel a = train(ds, cfg2);
  const MlpModel b = train(ds, cfg2);
  for (int l = 0; l < a.layers(); ++l) {
    CHECK((a.W[static_cast<std::size_t>(l)] - b.W[static_cast<std::size_t>(l)]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.b[static_cast<std::size_t>(l)] - b.b[static_cast<std::size_t>(l)]).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("predict_trajectory pads, stays causal, and composes forward calls") {
  AxisPair pair{MlpModel::random_init(41), MlpModel::random_init(43)};
  const std::size_t n = 500;
  std::mt19937_64 rng(47);
  std::normal_distribution<double> g(0.0, 0.03);
  std::vector<Vec2> pts(n);
  pts[0] = Vec2(0.01, -0.02);
  for (std::size_t i = 1; i < n; ++i)
    pts[i] = pts[i - 1] + Vec2(g(rng), g(rng)) * kSampleDt;
  const Trajectory r = Trajectory::uniform(kSampleDt, pts);
  const Trajectory pred = predict_trajectory(pair, r);
  CHECK(pred.size() == r.size());

  // Compositional check against manual window construction.
  for (std::size_t i : {std::size_t{0}, std::size_t{5}, std::size_t{250}, n - 1}) {
    std::vector<double> w(kWindow);
    for (int k = 0; k < kWindow; ++k) {
      const long j = static_cast<long>(i) - kWindow + k;
      w[static_cast<std::size_t>(k)] =
          r.points[static_cast<std::size_t>(std::max(0l, j))].x() / pair.x.scale;
    }
    CHECK(pred.points[i].x() ==
          doctest::Approx(forward(pair.x, w) * pair.x.scale).epsilon(1e-12));
  }

  // Causality: changing the tail never changes earlier predictions.
  Trajectory r2 = r;
  for (std::size_t i = 400; i < n; ++i) r2.points[i] += Vec2(0.01, 0.01);
  const Trajectory pred2 = predict_trajectory(pair, r2);
  for (std::size_t i = 0; i < 400; ++i) {
    CHECK(pred.points[i].x() == pred2.points[i].x());
    CHECK(pred.points[i].y() == pred2.points[i].y());
  }

  // Constant input with the identity stub predicts the constant.
  AxisPair ident{MlpModel::identity_stub(), MlpModel::identity_stub()};
  std::vector<Vec2> held(300, Vec2(0.03, 0.04));
  const Trajectory hp = predict_trajectory(ident, Trajectory::uniform(kSampleDt, held));
  for (const auto& p : hp.points) CHECK((p - Vec2(0.03, 0.04)).norm() < 1e-12);
}

TEST_CASE("validate reports exact statistics") {
  AxisPair ident{MlpModel::identity_stub(), MlpModel::identity_stub()};
  const Trajectory r = random_trajectory(LimitSet::machine(), 2.0, 3);
  const Trajectory pred = predict_trajectory(ident, r);

  // Perfect predictor: output equals the prediction.
  EvalPair perfect{r, pred, 1.0};
  const ValidationStats st0 = validate(ident, {perfect});
  CHECK(std::abs(st0.mean_x) < 1e-15);
  CHECK(st0.std_x < 1e-15);

  // Constant 5 um offset: mean 5 um, std 0.
  Trajectory shifted = pred;
  for (auto& p : shifted.points) p -= Vec2(5e-6, 5e-6);
  const ValidationStats st = validate(ident, {{r, shifted, 1.0}});
  CHECK(st.mean_x == doctest::Approx(5e-6).epsilon(1e-9));
  CHECK(st.std_x < 1e-12);
  CHECK(st.mean_y == doctest::Approx(5e-6).epsilon(1e-9));

  // Against the two-pass oracle.
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(1e-5, 3e-6);
  Trajectory noisy = pred;
  std::vector<double> ex;
  for (auto& p : noisy.points) {
    const double e = g(rng);
    p.x() -= e;
    ex.push_back(e);
    p.y() -= 2e-6;
  }
  const ValidationStats st2 = validate(ident, {{r, noisy, 2.0}});
  const auto [om, os] = oracles::two_pass_mean_std(ex);
  CHECK(st2.mean_x == doctest::Approx(om).epsilon(1e-12));
  CHECK(st2.std_x == doctest::Approx(os).epsilon(1e-12));
  CHECK(st2.curve.size() == 1);
}

TEST_CASE("axis pair file round trip is bit exact") {
  AxisPair pair{MlpModel::random_init(51), MlpModel::random_init(53)};
  pair.y.scale = 0.123;
  const auto path = std::filesystem::temp_directory_path() / "precomp_test_nn.bin";
  save_axis_pair(path, pair);
  const AxisPair back = load_axis_pair(path);
  CHECK(back.x.parameter_count() == 117322);
  CHECK(back.y.scale == 0.123);
  for (int l = 0; l < pair.x.layers(); ++l) {
    CHECK((back.x.W[static_cast<std::size_t>(l)] - pair.x.W[static_cast<std::size_t>(l)]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.y.W[static_cast<std::size_t>(l)] - pair.y.W[static_cast<std::size_t>(l)]).cwiseAbs().maxCoeff() == 0.0);
  }
}
