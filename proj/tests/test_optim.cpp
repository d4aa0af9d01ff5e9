#include <catch2/catch_amalgamated.hpp>

#include "boxreg/io.hpp"
#include "boxreg/optim.hpp"

using namespace boxreg;

namespace {

BoxState make_box(double x, double y, double z, double l, double w, double h,
                  double roll = 0, double pitch = 0, double yaw = 0) {
  BoxState b;
  b.x = x;
  b.y = y;
  b.z = z;
  b.l = l;
  b.w = w;
  b.h = h;
  b.roll = roll;
  b.pitch = pitch;
  b.yaw = yaw;
  return b;
}

bool non_increasing(const std::vector<double>& curve) {
  for (std::size_t i = 1; i < curve.size(); ++i) {
    if (curve[i] > curve[i - 1]) return false;
  }
  return true;
}

// Points on the three +axis faces of a box, in world coordinates.
PointFrame faces_scan(const BoxState& b, int per_face, std::uint64_t seed) {
  Rng rng(seed);
  PointFrame f;
  const Vec3 half = 0.5 * b.size();
  for (int axis = 0; axis < 3; ++axis) {
    for (int i = 0; i < per_face; ++i) {
      Vec3 local;
      local[axis] = half[axis];
      local[(axis + 1) % 3] = rng.uniform(-0.8, 0.8) * half[(axis + 1) % 3];
      local[(axis + 2) % 3] = rng.uniform(-0.8, 0.8) * half[(axis + 2) % 3];
      f.points.push_back(box_to_world(local, b));
    }
  }
  return f;
}

AppConfig small_config(SimMode mode, std::uint64_t seed, int steps) {
  AppConfig cfg;
  cfg.mode = mode;
  cfg.seed = seed;
  cfg.loss.bev_mode = mode == SimMode::bev2d;
  cfg.traj.bev_mode = cfg.loss.bev_mode;
  cfg.traj.steps = steps;
  cfg.sensor.spacing = 0.25;
  cfg.fps_points = 128;
  cfg.occlusion_fraction = 0.2;
  if (mode == SimMode::bev2d) {
    cfg.noise.z = cfg.noise.roll = cfg.noise.pitch = 0.0;
  }
  return cfg;
}

}  // namespace

TEST_CASE("lbfgs solves a shifted quadratic bowl") {
  const Eigen::VectorXd a = (Eigen::VectorXd(3) << 1.5, -2.0, 0.75).finished();
  const Objective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) *g = 2.0 * (x - a);
    return (x - a).squaredNorm();
  };
  OptimizerSettings s;
  s.gradient_tolerance = 1e-10;
  const MinimizeResult res = lbfgs_minimize(f, Eigen::VectorXd::Zero(3), s);
  CHECK((res.x - a).lpNorm<Eigen::Infinity>() < 1e-8);
  CHECK(res.iterations <= 10);
  CHECK(non_increasing(res.loss_curve));
}

TEST_CASE("lbfgs solves Rosenbrock from the classic start") {
  const Objective f = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    const double a = 1.0 - x[0];
    const double b = x[1] - x[0] * x[0];
    if (g) {
      (*g)[0] = -2.0 * a - 400.0 * x[0] * b;
      (*g)[1] = 200.0 * b;
    }
    return a * a + 100.0 * b * b;
  };
  OptimizerSettings s;
  s.gradient_tolerance = 1e-10;
  s.loss_change_tolerance = 1e-16;
  const MinimizeResult res =
      lbfgs_minimize(f, (Eigen::VectorXd(2) << -1.2, 1.0).finished(), s);
  CHECK(std::abs(res.x[0] - 1.0) < 1e-5);
  CHECK(std::abs(res.x[1] - 1.0) < 1e-5);
  CHECK(non_increasing(res.loss_curve));
}

TEST_CASE("lbfgs returns immediately at a stationary start") {
  const Objective f = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) g->setZero(x.size());
    return 4.2;
  };
  const MinimizeResult res =
      lbfgs_minimize(f, Eigen::VectorXd::Ones(5), OptimizerSettings{});
  CHECK(res.iterations == 0);
  CHECK(res.reason == StopReason::gradient);
  CHECK((res.x - Eigen::VectorXd::Ones(5)).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("lbfgs reaches tight gradients on a PD quadratic within 2d iterations") {
  const int d = 20;
  Eigen::VectorXd diag(d), b(d);
  Rng rng(601);
  for (int i = 0; i < d; ++i) {
    diag[i] = 1.0 + i;  // condition number 20
    b[i] = rng.uniform(-0.2, 0.2);
  }
  const Objective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) *g = diag.asDiagonal() * x - b;
    return 0.5 * x.dot(diag.asDiagonal() * x) - b.dot(x);
  };
  OptimizerSettings s;
  s.gradient_tolerance = 1e-8;
  s.loss_change_tolerance = 1e-300;  // stop on the gradient criterion only
  const MinimizeResult res = lbfgs_minimize(f, Eigen::VectorXd::Zero(d), s);
  CHECK(res.reason == StopReason::gradient);
  CHECK(res.iterations <= 2 * d);
}

TEST_CASE("lbfgs reports non-finite starts and stalled line searches") {
  const Objective bad = [](const Eigen::VectorXd&, Eigen::VectorXd* g) {
    if (g) g->setZero(1);
    return std::numeric_limits<double>::quiet_NaN();
  };
  CHECK_THROWS_AS(lbfgs_minimize(bad, Eigen::VectorXd::Zero(1), OptimizerSettings{}),
                  std::runtime_error);

  // A lying gradient makes every trial step an ascent: the search stalls.
  const Objective lying = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) (*g)[0] = -2.0 * x[0];
    return x[0] * x[0];
  };
  const MinimizeResult res =
      lbfgs_minimize(lying, Eigen::VectorXd::Ones(1), OptimizerSettings{});
  CHECK(res.reason == StopReason::line_search_stall);
  CHECK(res.x[0] == 1.0);
}

TEST_CASE("newton sweep lands on the quadratic minimizer in one step") {
  const BoxState gt = make_box(0, 0, 0, 4, 2, 2);
  Rng rng(602);
  PointFrame f;
  double mean_px = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Vec3 p(2.0, rng.uniform(-0.8, 0.8), rng.uniform(0.1, 0.9));
    f.points.push_back(p);
    mean_px += p.x();
  }
  mean_px /= 20.0;

  Track track = {gt};
  track[0].x = 0.35;
  LossConfig cfg;
  cfg.enclosure_weight = cfg.smoothness_weight = cfg.alignment_weight = 0.0;
  cfg.top_k = 100;  // all points, so the loss is quadratic in x
  const Eigen::VectorXd pose =
      newton_coordinate_step(track, {f}, cfg, OptimizerSettings{});
  CHECK(std::abs(pose[0] - (mean_px - 2.0)) < 1e-8);
}

TEST_CASE("newton sweep leaves flat coordinates alone") {
  const BoxState b = make_box(0.5, -0.25, 0.1, 3, 2, 2, 0.2, 0.1, 0.4);
  PointFrame f;
  Rng rng(603);
  for (int i = 0; i < 15; ++i) {
    f.points.push_back(box_to_world(Vec3(rng.uniform(-1.2, 1.2), rng.uniform(-0.8, 0.8),
                                         rng.uniform(-0.8, 0.8)),
                                    b));
  }
  LossConfig cfg;
  cfg.closeness_weight = cfg.smoothness_weight = cfg.alignment_weight = 0.0;
  cfg.enclosure_weight = 1.0;
  cfg.l1_width = 0.0;  // interior plateau: exactly zero gradient everywhere
  const Track track = {b};
  const Eigen::VectorXd pose = newton_coordinate_step(track, {f}, cfg, OptimizerSettings{});
  CHECK((pose - track_to_pose(track, false)).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("newton sweeps beat tuned plain gradient descent") {
  const AppConfig cfg = small_config(SimMode::full3d, 604, 6);
  const Dataset ds = build_dataset(cfg);

  Track newton_track = ds.initial_track;
  OptimizerSettings ns;
  for (int sweep = 0; sweep < 20; ++sweep) {
    apply_pose(newton_coordinate_step(newton_track, ds.frames, cfg.loss, ns),
               newton_track, cfg.loss.bev_mode);
  }
  const double newton_loss = total_loss_value(newton_track, ds.frames, cfg.loss);

  double best_gd = std::numeric_limits<double>::infinity();
  for (const double step : {0.3, 0.1, 0.03, 0.01, 0.003}) {
    Track t = ds.initial_track;
    for (int it = 0; it < 20; ++it) {
      const TrackTerm term = total_loss(t, ds.frames, cfg.loss);
      Eigen::VectorXd pose = track_to_pose(t, cfg.loss.bev_mode);
      pose -= step * term.grad;
      apply_pose(pose, t, cfg.loss.bev_mode);
    }
    best_gd = std::min(best_gd, total_loss_value(t, ds.frames, cfg.loss));
  }
  CHECK(newton_loss <= best_gd + 1e-12);
}

TEST_CASE("register is a fixed point at a stationary ground truth") {
  Track track;
  std::vector<PointFrame> frames;
  for (int i = 0; i < 3; ++i) {
    track.push_back(make_box(0.5 * i, 0, 0, 4, 2, 1.6));
    frames.push_back(faces_scan(track.back(), 12, 700 + i));
  }
  LossConfig cfg;
  // Exact L1 and exactly 12 points per visible face: each axis's top set is
  // entirely the on-face points, so the loss sits at a stationary point.
  cfg.l1_width = 0.0;
  cfg.top_k = 12;
  const RegistrationResult res = register_track(track, frames, cfg, OptimizerSettings{});
  CHECK(res.iterations == 0);
  CHECK(res.reason == StopReason::gradient);
  for (int i = 0; i < 3; ++i) {
    CHECK(res.refined[i].x == track[i].x);
    CHECK(res.refined[i].yaw == track[i].yaw);
  }
}

TEST_CASE("register recovers a translated single frame") {
  const BoxState gt = make_box(1.0, -2.0, 0.85, 4.7, 1.9, 1.7);
  SensorModel sensor;
  // Sees -x, -y, +z: the scanned tail end sticks out of the shifted box, so
  // the enclosure term pulls the box back over it.
  sensor.position = Vec3(-12, -9, 8);
  sensor.noise_sigma = 0.0;
  sensor.spacing = 0.2;
  const PointFrame frame = gen_vehicle_cloud(gt, sensor, 71);

  Track initial = {gt};
  initial[0].x += 0.5;
  LossConfig cfg;
  const RegistrationResult res =
      register_track(initial, {frame}, cfg, OptimizerSettings{});
  CHECK(std::abs(res.refined[0].x - gt.x) < 0.05);
  CHECK(non_increasing(res.loss_curve));
  CHECK(res.loss_curve.back() <= res.loss_curve.front());
}

TEST_CASE("register output is deterministic and preserves size") {
  const AppConfig cfg = small_config(SimMode::bev2d, 605, 8);
  const Dataset ds = build_dataset(cfg);
  OptimizerSettings s;
  s.max_iterations = 60;
  const RegistrationResult a = register_track(ds.initial_track, ds.frames, cfg.loss, s);
  const RegistrationResult b = register_track(ds.initial_track, ds.frames, cfg.loss, s);

  REQUIRE(a.refined.size() == ds.initial_track.size());
  REQUIRE(a.loss_curve.size() == b.loss_curve.size());
  for (std::size_t i = 0; i < a.loss_curve.size(); ++i) {
    CHECK(a.loss_curve[i] == b.loss_curve[i]);
  }
  for (std::size_t i = 0; i < a.refined.size(); ++i) {
    CHECK(a.refined[i].x == b.refined[i].x);
    CHECK(a.refined[i].yaw == b.refined[i].yaw);
    CHECK(a.refined[i].l == ds.initial_track[i].l);
    CHECK(a.refined[i].w == ds.initial_track[i].w);
    CHECK(a.refined[i].h == ds.initial_track[i].h);
    // BEV mode: fixed parameters are bit-identical to the input.
    CHECK(a.refined[i].z == ds.initial_track[i].z);
    CHECK(a.refined[i].roll == ds.initial_track[i].roll);
    CHECK(a.refined[i].pitch == ds.initial_track[i].pitch);
  }
  CHECK(non_increasing(a.loss_curve));
}

TEST_CASE("newton mode register drives the loss down") {
  const AppConfig cfg = small_config(SimMode::bev2d, 606, 5);
  const Dataset ds = build_dataset(cfg);
  OptimizerSettings s;
  s.method = OptimMethod::newton;
  s.max_iterations = 8;
  const RegistrationResult res = register_track(ds.initial_track, ds.frames, cfg.loss, s);
  CHECK(non_increasing(res.loss_curve));
  CHECK(res.loss_curve.back() < res.loss_curve.front());
}

TEST_CASE("sliding window with N == W matches the full batch exactly") {
  const AppConfig cfg = small_config(SimMode::bev2d, 607, 10);
  const Dataset ds = build_dataset(cfg);
  OptimizerSettings s;
  s.max_iterations = 40;
  OptimizerSettings sw = s;
  sw.method = OptimMethod::window;
  sw.window_size = 10;
  sw.window_stride = 5;

  const RegistrationResult full = register_track(ds.initial_track, ds.frames, cfg.loss, s);
  const RegistrationResult window =
      register_track(ds.initial_track, ds.frames, cfg.loss, sw);
  CHECK_FALSE(window.window_fallback);
  REQUIRE(window.refined.size() == full.refined.size());
  for (std::size_t i = 0; i < full.refined.size(); ++i) {
    CHECK(window.refined[i].x == full.refined[i].x);
    CHECK(window.refined[i].y == full.refined[i].y);
    CHECK(window.refined[i].yaw == full.refined[i].yaw);
  }
}

TEST_CASE("sliding window covers every frame and keeps the curve monotone") {
  const AppConfig cfg = small_config(SimMode::bev2d, 608, 20);
  Dataset ds = build_dataset(cfg);
  OptimizerSettings s;
  s.method = OptimMethod::window;
  s.window_size = 10;
  s.window_stride = 5;
  s.max_iterations = 40;
  const RegistrationResult res = register_track(ds.initial_track, ds.frames, cfg.loss, s);
  REQUIRE(res.refined.size() == 20);
  CHECK(non_increasing(res.loss_curve));
  CHECK(res.loss_curve.back() < res.loss_curve.front());
  // Full-batch final loss for comparison: window stays in the same ballpark.
  OptimizerSettings full;
  full.max_iterations = 200;
  const RegistrationResult batch =
      register_track(ds.initial_track, ds.frames, cfg.loss, full);
  CHECK(total_loss_value(res.refined, ds.frames, cfg.loss) <=
        1.10 * total_loss_value(batch.refined, ds.frames, cfg.loss) + 1e-9);
}

TEST_CASE("sliding window falls back to full batch when N < W") {
  const AppConfig cfg = small_config(SimMode::bev2d, 609, 5);
  const Dataset ds = build_dataset(cfg);
  OptimizerSettings s;
  s.method = OptimMethod::window;
  s.window_size = 10;
  s.window_stride = 5;
  s.max_iterations = 30;
  const RegistrationResult res = register_track(ds.initial_track, ds.frames, cfg.loss, s);
  CHECK(res.window_fallback);
  CHECK(res.refined.size() == 5);
  CHECK(non_increasing(res.loss_curve));
}

TEST_CASE("optimizer settings are validated") {
  OptimizerSettings s;
  s.window_stride = 11;
  CHECK_THROWS_AS(validate_optimizer_settings(s), std::invalid_argument);
  s = OptimizerSettings{};
  s.gradient_tolerance = 0.0;
  CHECK_THROWS_AS(validate_optimizer_settings(s), std::invalid_argument);
  s = OptimizerSettings{};
  s.lbfgs_history = 0;
  CHECK_THROWS_AS(validate_optimizer_settings(s), std::invalid_argument);
}
