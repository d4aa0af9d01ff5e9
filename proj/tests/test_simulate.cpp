#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "boxreg/simulate.hpp"

using namespace boxreg;

namespace {

bool same_points(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

bool subset_of(const std::vector<Vec3>& sub, const std::vector<Vec3>& super) {
  for (const Vec3& p : sub) {
    bool found = false;
    for (const Vec3& q : super) {
      if (p == q) {
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

double face_distance(const Vec3& p, const BoxState& b) {
  const Vec3 q = world_to_box(p, b);
  const Vec3 gap = q.cwiseAbs() - 0.5 * b.size();
  // On the surface: at least one axis at its extent, none beyond.
  double nearest = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) nearest = std::min(nearest, std::abs(gap[k]));
  return std::max(nearest, gap.maxCoeff());
}

}  // namespace

TEST_CASE("straight degenerate trajectory moves along +x") {
  TrajectoryConfig cfg;
  cfg.steps = 10;
  cfg.straight = true;
  const Track t = gen_trajectory(cfg);
  REQUIRE(t.size() == 10);
  const double step = cfg.speed * cfg.time_step;
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(t[i].x == Catch::Approx((i + 1) * step).margin(1e-12));
    CHECK(t[i].y == 0.0);
    CHECK(t[i].roll == 0.0);
    CHECK(t[i].pitch == 0.0);
    CHECK(t[i].yaw == 0.0);
  }
}

TEST_CASE("trajectory angle sequences follow the closed-form accumulation") {
  TrajectoryConfig cfg;
  cfg.steps = 50;
  const Track t = gen_trajectory(cfg);
  double roll = 0, pitch = 0, yaw = 0;
  const auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  for (int i = 0; i < cfg.steps; ++i) {
    const double phase = (i + 1) * 2.0 * M_PI / cfg.steps;
    roll += sgn(std::cos(phase)) * M_PI / (6.0 * cfg.steps);
    pitch += sgn(std::cos(phase)) * M_PI / (3.0 * cfg.steps);
    yaw += sgn(std::sin(phase)) * 2.0 * M_PI / cfg.steps;
    REQUIRE(t[i].roll == roll);
    REQUIRE(t[i].pitch == pitch);
    REQUIRE(t[i].yaw == yaw);
  }
}

TEST_CASE("yaw increments accumulate a full 2*pi of turn over one cycle") {
  TrajectoryConfig cfg;
  cfg.steps = 50;
  cfg.bev_mode = true;
  const Track t = gen_trajectory(cfg);
  double total = std::abs(t[0].yaw);
  double peak = 0.0;
  for (std::size_t i = 1; i < t.size(); ++i) {
    total += std::abs(t[i].yaw - t[i - 1].yaw);
    peak = std::max(peak, std::abs(t[i].yaw));
  }
  CHECK(total == Catch::Approx(2.0 * M_PI).margin(1e-12));
  CHECK(peak == Catch::Approx(M_PI).margin(1e-9));  // half turn, then back
  for (const BoxState& b : t) {
    CHECK(b.roll == 0.0);
    CHECK(b.pitch == 0.0);
  }
}

TEST_CASE("trajectory spacing follows the heading") {
  TrajectoryConfig cfg;
  cfg.steps = 30;
  const Track t = gen_trajectory(cfg);
  for (std::size_t i = 1; i < t.size(); ++i) {
    const Vec3 d = t[i].center() - t[i - 1].center();
    CHECK(d.norm() == Catch::Approx(cfg.speed * cfg.time_step).margin(1e-12));
    // Each step moves along the heading of the frame it leaves.
    CHECK((d / d.norm() - heading_unit(t[i - 1])).lpNorm<Eigen::Infinity>() < 1e-12);
  }
  CHECK_THROWS_AS(gen_trajectory(TrajectoryConfig{.steps = 2}), std::invalid_argument);
}

TEST_CASE("vehicle cloud samples only the faces facing the sensor") {
  BoxState box;
  box.l = 2.0;
  box.w = 1.0;
  box.h = 1.0;
  SensorModel sensor;
  sensor.noise_sigma = 0.0;
  sensor.spacing = 0.25;

  sensor.position = Vec3(10, 0, 0);
  const PointFrame one = gen_vehicle_cloud(box, sensor, 1);
  for (const Vec3& p : one.points) {
    CHECK(world_to_box(p, box).x() == Catch::Approx(1.0).margin(1e-12));
  }

  sensor.position = Vec3(10, 10, 10);
  const PointFrame three = gen_vehicle_cloud(box, sensor, 1);
  // Classify by face-interior incidence: grid edge points lie on two faces,
  // so only strictly interior samples identify the sampled face.
  std::set<int> faces;
  for (const Vec3& p : three.points) {
    const Vec3 q = world_to_box(p, box);
    for (int k = 0; k < 3; ++k) {
      const int u = (k + 1) % 3, v = (k + 2) % 3;
      const bool interior = std::abs(q[u]) < 0.5 * box.size()[u] - 1e-6 &&
                            std::abs(q[v]) < 0.5 * box.size()[v] - 1e-6;
      if (!interior) continue;
      if (std::abs(q[k] - 0.5 * box.size()[k]) < 1e-9) faces.insert(k + 1);
      if (std::abs(q[k] + 0.5 * box.size()[k]) < 1e-9) faces.insert(-(k + 1));
    }
  }
  CHECK(faces == std::set<int>{1, 2, 3});
  // Grid sizes: +x is 5x5, +y is 5x9, +z is 9x5.
  CHECK(three.points.size() == 25 + 45 + 45);
}

TEST_CASE("noiseless cloud points lie on the box surface") {
  BoxState box;
  box.x = 3.0;
  box.y = -2.0;
  box.z = 1.0;
  box.l = 4.7;
  box.w = 1.9;
  box.h = 1.7;
  box.roll = 0.2;
  box.pitch = -0.1;
  box.yaw = 0.8;
  SensorModel sensor;
  sensor.position = Vec3(0, -15, 2);
  sensor.noise_sigma = 0.0;
  const PointFrame f = gen_vehicle_cloud(box, sensor, 7);
  REQUIRE(f.points.size() > 100);
  for (const Vec3& p : f.points) {
    REQUIRE(std::abs(face_distance(p, box)) < 1e-9);
  }

  SensorModel inside = sensor;
  inside.position = box.center();
  CHECK_THROWS_AS(gen_vehicle_cloud(box, inside, 7), std::invalid_argument);
}

TEST_CASE("vehicle cloud is deterministic per seed") {
  BoxState box;
  box.l = 4.0;
  box.w = 2.0;
  box.h = 1.5;
  SensorModel sensor;
  const PointFrame a = gen_vehicle_cloud(box, sensor, 99);
  const PointFrame b = gen_vehicle_cloud(box, sensor, 99);
  const PointFrame c = gen_vehicle_cloud(box, sensor, 100);
  CHECK(same_points(a.points, b.points));
  CHECK_FALSE(same_points(a.points, c.points));
}

TEST_CASE("occlude removes a half-space slab and keeps a floor of points") {
  Rng rng(801);
  PointFrame f;
  for (int i = 0; i < 1000; ++i) {
    f.points.push_back(Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)));
  }

  CHECK(same_points(occlude(f, 0.0, 5).points, f.points));

  const std::uint64_t seed = 5;
  const PointFrame cut = occlude(f, 0.4, seed);
  CHECK(cut.points.size() == 600);
  CHECK(subset_of(cut.points, f.points));

  // Replicate the direction draw and verify the removed points are the far
  // side of the plane.
  Rng dir_rng(seed);
  Vec3 dir(dir_rng.normal(), dir_rng.normal(), dir_rng.normal());
  dir.normalize();
  double kept_max = -std::numeric_limits<double>::infinity();
  for (const Vec3& p : cut.points) kept_max = std::max(kept_max, dir.dot(p));
  int removed = 0;
  for (const Vec3& p : f.points) {
    bool in_kept = false;
    for (const Vec3& q : cut.points) {
      if (p == q) {
        in_kept = true;
        break;
      }
    }
    if (!in_kept) {
      ++removed;
      REQUIRE(dir.dot(p) >= kept_max - 1e-12);
    }
  }
  CHECK(removed == 400);
}

TEST_CASE("occlude never drops below ten points") {
  PointFrame f;
  Rng rng(802);
  for (int i = 0; i < 12; ++i) {
    f.points.push_back(Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)));
  }
  CHECK(occlude(f, 0.5, 3).points.size() == 10);
  CHECK_THROWS_AS(occlude(PointFrame{}, 0.2, 3), std::invalid_argument);
  CHECK_THROWS_AS(occlude(f, 1.0, 3), std::invalid_argument);
}

TEST_CASE("perturb_track statistics and determinism") {
  TrajectoryConfig tc;
  tc.steps = 200;
  const Track gt = gen_trajectory(tc);

  NoiseScales zero{0, 0, 0, 0, 0, 0};
  const Track same = perturb_track(gt, zero, 11);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    CHECK(same[i].x == gt[i].x);
    CHECK(same[i].yaw == gt[i].yaw);
  }

  NoiseScales table;  // defaults
  const Track a = perturb_track(gt, table, 12);
  const Track b = perturb_track(gt, table, 12);
  double mean_dx = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    CHECK(a[i].x == b[i].x);
    CHECK(a[i].l == gt[i].l);
    CHECK(a[i].w == gt[i].w);
    CHECK(a[i].h == gt[i].h);
    mean_dx += std::abs(a[i].x - gt[i].x);
  }
  mean_dx /= gt.size();
  const double half_normal = 0.392 * std::sqrt(2.0 / M_PI);
  CHECK(mean_dx > 0.8 * half_normal);
  CHECK(mean_dx < 1.2 * half_normal);
}

TEST_CASE("fps on collinear points picks the forced greedy sequence") {
  PointFrame f;
  for (int i = 0; i <= 10; ++i) f.points.push_back(Vec3(i, 0, 0));
  const PointFrame out = fps_from(f, 3, 0);
  REQUIRE(out.points.size() == 3);
  CHECK(out.points[0].x() == 0.0);
  CHECK(out.points[1].x() == 10.0);
  CHECK(out.points[2].x() == 5.0);

  CHECK(fps(f, 11, 1).points.size() == 11);   // n >= m: identity
  CHECK(fps(f, 50, 1).points.size() == 11);
  CHECK_THROWS_AS(fps(f, 0, 1), std::invalid_argument);
}

namespace {

// Independent O(n*m*k) greedy reference: recomputes the minimum distance to
// the selected set from scratch at every step.
std::vector<int> fps_reference(const std::vector<Vec3>& pts, int n, int start) {
  std::vector<int> sel = {start};
  while (static_cast<int>(sel.size()) < n) {
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
      if (std::find(sel.begin(), sel.end(), i) != sel.end()) continue;
      double mind = std::numeric_limits<double>::infinity();
      for (int s : sel) mind = std::min(mind, (pts[i] - pts[s]).squaredNorm());
      if (mind > best_d) {
        best_d = mind;
        best = i;
      }
    }
    sel.push_back(best);
  }
  return sel;
}

}  // namespace

TEST_CASE("fps equals the brute-force greedy reference on 100 seeded instances") {
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(900 + trial);
    PointFrame f;
    const int m = 50;
    for (int i = 0; i < m; ++i) {
      f.points.push_back(Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)));
    }
    const int start = static_cast<int>(Rng(1000 + trial).below(m));
    const PointFrame out = fps_from(f, 10, start);
    const std::vector<int> expected = fps_reference(f.points, 10, start);
    REQUIRE(out.points.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      REQUIRE(out.points[i] == f.points[expected[i]]);
    }
  }
}

TEST_CASE("fps spreads points better than random subsets") {
  const auto min_pairwise = [](const std::vector<Vec3>& pts) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pts.size(); ++i) {
      for (std::size_t j = i + 1; j < pts.size(); ++j) {
        best = std::min(best, (pts[i] - pts[j]).norm());
      }
    }
    return best;
  };
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(1100 + trial);
    PointFrame f;
    for (int i = 0; i < 60; ++i) {
      f.points.push_back(Vec3(rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4)));
    }
    const PointFrame picked = fps(f, 12, 1100 + trial);
    CHECK(subset_of(picked.points, f.points));

    std::vector<Vec3> random_subset;
    std::vector<int> idx(f.points.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (int k = 0; k < 12; ++k) {
      const int pick = k + static_cast<int>(rng.below(idx.size() - k));
      std::swap(idx[k], idx[pick]);
      random_subset.push_back(f.points[idx[k]]);
    }
    REQUIRE(min_pairwise(picked.points) >= min_pairwise(random_subset));
  }
}
