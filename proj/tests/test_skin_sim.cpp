#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "tacserv/skin_sim.hpp"

using namespace tacserv;

namespace {

const Vec3 kAnchor(0.05, 0.02, 0.03);

SurfaceParams sphere_params(int nt = 48, int np = 96) {
  SurfaceParams p;
  p.ax = p.ay = p.az = 0.010;
  p.exponent = 2.0;
  p.mesh_nt = nt;
  p.mesh_np = np;
  return p;
}

/// Pose whose anchor sits `depth` below the surface point at (theta, phi).
FingerPose penetrating_pose(const SkinSurface& surf, double theta, double phi,
                            double depth) {
  const Vec3 p = surf.at(theta, phi);
  const Vec3 n = surf.outward_normal(p);
  FingerPose pose;
  pose.t = kAnchor - (p - depth * n);
  return pose;
}

}  // namespace

TEST_CASE("surface chart points satisfy the implicit equation") {
  SkinSurface surf;  // default capped superellipsoid
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double th = uniform(rng, 0.0, surf.params().theta_max);
    const double ph = uniform(rng, -M_PI, M_PI);
    REQUIRE(std::abs(surf.implicit(surf.at(th, ph))) < 1e-12);
  }
}

TEST_CASE("outward normal matches the numeric gradient of the implicit field") {
  SkinSurface surf;
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const double th = uniform(rng, 0.05, surf.params().theta_max);
    const double ph = uniform(rng, -M_PI, M_PI);
    const Vec3 q = surf.at(th, ph);
    const double h = 1e-8;
    Vec3 g;
    for (int k = 0; k < 3; ++k) {
      Vec3 qp = q, qm = q;
      qp(k) += h;
      qm(k) -= h;
      g(k) = (surf.implicit(qp) - surf.implicit(qm)) / (2 * h);
    }
    REQUIRE((surf.outward_normal(q) - g.normalized()).norm() < 1e-5);
  }
}

TEST_CASE("nearest point projects back along the normal") {
  SkinSurface surf;
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const double th = uniform(rng, 0.05, 0.9 * surf.params().theta_max);
    const double ph = uniform(rng, -M_PI, M_PI);
    const Vec3 p = surf.at(th, ph);
    const Vec3 q = p + uniform(rng, -0.002, 0.002) * surf.outward_normal(p);
    REQUIRE((surf.nearest_point(q) - p).norm() < 5e-5);
  }
}

TEST_CASE("sensing without contact gives zero activations and zero pressure") {
  SkinSurface surf;
  FingerPose pose;
  pose.t = kAnchor - Vec3(0, 0, 0.05);  // anchor well above the fingertip
  const TactileSample s = sense(surf, pose, kAnchor);
  REQUIRE_FALSE(s.contact.in_contact);
  REQUIRE(s.pressure == 0.0);
  REQUIRE(s.s.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pressure equals minus the mean activation, exactly") {
  SkinSurface surf;
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const double th = uniform(rng, 0.05, 0.9 * surf.params().theta_max);
    const double ph = uniform(rng, -M_PI, M_PI);
    const double depth = uniform(rng, 0.0003, 0.003);
    const TactileSample s =
        sense(surf, penetrating_pose(surf, th, ph, depth), kAnchor);
    REQUIRE(s.contact.in_contact);
    REQUIRE(std::abs(s.pressure + s.s.mean()) < 1e-12);
    REQUIRE(s.pressure == Catch::Approx(depth).epsilon(0.05));
  }
}

TEST_CASE("the strongest electrode is the one closest to the contact") {
  SkinSurface surf;
  const auto& el = surf.electrode_positions();
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    // Contact directly at a random electrode position.
    const int target = std::uniform_int_distribution<int>(
        0, surf.n_electrodes() - 1)(rng);
    const Vec3 p = el[target];
    const Vec3 n = surf.outward_normal(p);
    FingerPose pose;
    pose.t = kAnchor - (p - 0.0015 * n);
    const TactileSample s = sense(surf, pose, kAnchor);
    REQUIRE(s.contact.in_contact);
    int best = 0;
    s.s.minCoeff(&best);  // activations are negative-going
    REQUIRE(best == target);
  }
}

TEST_CASE("sensing is deterministic") {
  SkinSurface surf;
  const FingerPose pose = penetrating_pose(surf, 0.5, 1.0, 0.0015);
  const TactileSample a = sense(surf, pose, kAnchor);
  const TactileSample b = sense(surf, pose, kAnchor);
  REQUIRE((a.s - b.s).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a.pressure == b.pressure);
}

TEST_CASE("contact point moves continuously with the pose") {
  SkinSurface surf;
  const FingerPose pose = penetrating_pose(surf, 0.5, 1.0, 0.0015);
  FingerPose nudged = pose;
  nudged.t += Vec3(1e-5, -1e-5, 1e-5);
  const TactileSample a = sense(surf, pose, kAnchor);
  const TactileSample b = sense(surf, nudged, kAnchor);
  REQUIRE((a.contact.contact_point - b.contact.contact_point).norm() < 1e-4);
}

TEST_CASE("geodesic oracle distance to itself is zero") {
  SkinSurface surf(sphere_params());
  const Vec3 p = surf.at(0.4, 0.7);
  REQUIRE(surf.geodesic_oracle(p, p) == 0.0);
}

TEST_CASE("geodesic oracle rejects off-surface points") {
  SkinSurface surf(sphere_params());
  const Vec3 on = surf.at(0.4, 0.7);
  REQUIRE_THROWS_AS(surf.geodesic_oracle(Vec3(0.02, 0.02, 0.02), on), TacservError);
}

TEST_CASE("geodesic oracle matches great-circle arcs on a spherical cap") {
  const SurfaceParams sp = sphere_params(64, 128);
  SkinSurface surf(sp);
  const auto& verts = surf.mesh_vertices();
  Rng rng(6);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(verts.size()) - 1);
  int checked = 0;
  while (checked < 30) {
    const Vec3 a = verts[pick(rng)];
    const Vec3 b = verts[pick(rng)];
    const double ang = std::acos(std::clamp(a.dot(b) / (a.norm() * b.norm()), -1.0, 1.0));
    if (ang < 0.8) continue;
    const double arc = sp.ax * ang;
    REQUIRE(surf.geodesic_oracle(a, b) == Catch::Approx(arc).epsilon(0.02));
    ++checked;
  }
}

TEST_CASE("geodesic oracle satisfies the triangle inequality") {
  SkinSurface surf(sphere_params(20, 40));
  const auto& verts = surf.mesh_vertices();
  Rng rng(7);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(verts.size()) - 1);
  for (int t = 0; t < 150; ++t) {
    const Vec3 a = verts[pick(rng)], b = verts[pick(rng)], c = verts[pick(rng)];
    REQUIRE(surf.geodesic_oracle(a, c) <=
            surf.geodesic_oracle(a, b) + surf.geodesic_oracle(b, c) + 1e-12);
  }
}

TEST_CASE("pose stepping: zero twist leaves the pose unchanged") {
  FingerPose pose;
  pose.R = so3_exp(Vec3(0.3, -0.2, 0.5));
  pose.t = Vec3(0.01, 0.02, -0.03);
  const FingerPose next = step_pose(pose, ActionTwist{}, 0.01);
  REQUIRE((next.R - pose.R).norm() == 0.0);
  REQUIRE((next.t - pose.t).norm() == 0.0);
}

TEST_CASE("pose stepping: a full turn returns the original orientation") {
  FingerPose pose;
  ActionTwist a;
  a.v << 0, 0, 0, 0, 0, 2.0 * M_PI;
  const FingerPose next = step_pose(pose, a, 1.0);
  REQUIRE((next.R - Mat3::Identity()).norm() < 1e-12);
  REQUIRE(next.t.norm() == 0.0);
}

TEST_CASE("pose stepping: pure translation moves along the rotated axis") {
  FingerPose pose;
  pose.R = so3_exp(Vec3(0, 0, M_PI / 2.0));
  ActionTwist a;
  a.v << 1.0, 0, 0, 0, 0, 0;
  const FingerPose next = step_pose(pose, a, 0.5);
  REQUIRE((next.t - Vec3(0, 0.5, 0)).norm() < 1e-12);
  REQUIRE((next.R - pose.R).norm() == 0.0);
}

TEST_CASE("pose stepping rejects non-positive dt") {
  REQUIRE_THROWS_AS(step_pose(FingerPose{}, ActionTwist{}, 0.0), TacservError);
  REQUIRE_THROWS_AS(step_pose(FingerPose{}, ActionTwist{}, -0.1), TacservError);
}

TEST_CASE("rotations stay orthonormal over many integration steps") {
  FingerPose pose;
  Rng rng(8);
  for (int i = 0; i < 100000; ++i) {
    ActionTwist a;
    for (int k = 0; k < 6; ++k) a.v(k) = gaussian(rng, 0.0, 0.1);
    pose = step_pose(pose, a, 1.0 / 300.0);
  }
  REQUIRE((pose.R.transpose() * pose.R - Mat3::Identity()).norm() < 1e-9);
}

TEST_CASE("rotational demos make two contact segments") {
  SkinSurface surf;
  DemoParams dp;
  const RawDemo demo = scripted_demo(surf, DemoKind::Rotational, dp, 42);
  int segments = 0;
  bool prev = false;
  for (const auto& s : demo.tactile) {
    if (s.contact.in_contact && !prev) ++segments;
    prev = s.contact.in_contact;
  }
  REQUIRE(segments == 2);
  REQUIRE(demo.twist_base.size() == demo.twist_time.size());
  REQUIRE(demo.twist_base.size() >= 3 * demo.tactile.size() - 3);
}

TEST_CASE("translational demos make four contact segments") {
  SkinSurface surf;
  DemoParams dp;
  dp.region = 1;
  const RawDemo demo = scripted_demo(surf, DemoKind::Translational, dp, 43);
  int segments = 0;
  bool prev = false;
  for (const auto& s : demo.tactile) {
    if (s.contact.in_contact && !prev) ++segments;
    prev = s.contact.in_contact;
  }
  REQUIRE(segments == 4);
}

TEST_CASE("the same seed reproduces a demo bitwise") {
  SkinSurface surf;
  DemoParams dp;
  dp.region = 2;
  const RawDemo a = scripted_demo(surf, DemoKind::Rotational, dp, 7);
  const RawDemo b = scripted_demo(surf, DemoKind::Rotational, dp, 7);
  REQUIRE(a.twist_base.size() == b.twist_base.size());
  for (size_t i = 0; i < a.twist_base.size(); ++i)
    REQUIRE((a.twist_base[i] - b.twist_base[i]).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a.tactile.size() == b.tactile.size());
  for (size_t i = 0; i < a.tactile.size(); ++i)
    REQUIRE((a.tactile[i].s - b.tactile[i].s).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("demos that would leave the cap are rejected") {
  SkinSurface surf;
  DemoParams dp;
  dp.region = 2;        // widest starting polar angle
  dp.rot_angle = 2.0;   // sweep far past the rim
  REQUIRE_THROWS_AS(scripted_demo(surf, DemoKind::Rotational, dp, 1), TacservError);
  DemoParams bad_region;
  bad_region.region = 7;
  REQUIRE_THROWS_AS(scripted_demo(surf, DemoKind::Rotational, bad_region, 1),
                    TacservError);
}

TEST_CASE("demo csv round trips both streams exactly") {
  SkinSurface surf;
  DemoParams dp;
  dp.region = 3;
  const RawDemo demo = scripted_demo(surf, DemoKind::Translational, dp, 11);
  const std::string path = std::filesystem::temp_directory_path() / "tacserv_demo.csv";
  save_demo_csv(demo, path);
  const RawDemo back = load_demo_csv(path);
  REQUIRE(back.kind == demo.kind);
  REQUIRE(back.region == demo.region);
  REQUIRE(back.seed == demo.seed);
  REQUIRE(back.twist_base.size() == demo.twist_base.size());
  for (size_t i = 0; i < demo.twist_base.size(); ++i) {
    REQUIRE(back.twist_time[i] == demo.twist_time[i]);
    REQUIRE((back.twist_base[i] - demo.twist_base[i]).cwiseAbs().maxCoeff() == 0.0);
  }
  REQUIRE(back.tactile.size() == demo.tactile.size());
  for (size_t i = 0; i < demo.tactile.size(); ++i) {
    REQUIRE((back.tactile[i].s - demo.tactile[i].s).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(back.tactile[i].pressure == demo.tactile[i].pressure);
    REQUIRE(back.tactile[i].contact.in_contact == demo.tactile[i].contact.in_contact);
    REQUIRE((back.tactile[i].pose.R - demo.tactile[i].pose.R).norm() == 0.0);
  }
  std::remove(path.c_str());
}

TEST_CASE("surface parameter files round trip") {
  SurfaceParams p;
  p.ax = 0.012;
  p.theta_max = 0.9;
  p.n_electrodes = 7;
  const std::string path = std::filesystem::temp_directory_path() / "tacserv_surf.txt";
  p.save(path);
  const SurfaceParams back = SurfaceParams::load(path);
  REQUIRE(back.ax == p.ax);
  REQUIRE(back.theta_max == p.theta_max);
  REQUIRE(back.n_electrodes == p.n_electrodes);
  std::remove(path.c_str());
}
