#include "bimap/diffeo_iter.hpp"

#include "bimap/errors.hpp"

#include "support.hpp"

#include <doctest.h>

#include <numbers>

using namespace bimap;
using bimap::test::quat_gap;
using bimap::test::Rng;

namespace {

Correspondence two_object_shift() {
  std::vector<ObjectPose> local{{1, {Vec3(0.0, 0.0, 0.0), {}}}, {2, {Vec3(1.0, 0.3, 0.0), {}}}};
  std::vector<ObjectPose> remote = local;
  for (auto& o : remote) o.pose.x += Vec3(0.1, 0.0, 0.0);
  return {local, remote};
}

const DiffeoMap& planar_map() {
  static const DiffeoMap map = DiffeoMap::fit(bimap::test::planar_scenario(), IterHyper{});
  return map;
}

const DiffeoMap& valve_map() {
  static const DiffeoMap map = DiffeoMap::fit(bimap::test::valve_scenario(), IterHyper{});
  return map;
}

// Straight re-evaluation of the translation stack, kept independent of the
// library's layer code.
Vec3 reference_forward(const nlohmann::json& doc, Vec3 x) {
  for (const auto& l : doc["layers"]) {
    const Vec3 c(l["c1"][0].get<double>(), l["c1"][1].get<double>(), l["c1"][2].get<double>());
    const Vec3 v(l["v1"][0].get<double>(), l["v1"][1].get<double>(), l["v1"][2].get<double>());
    const double rho = l["rho1"].get<double>();
    const double d2 = (x - c).squaredNorm();
    x = x + std::exp(-rho * rho * d2) * v;
  }
  return x;
}

Mat3 fd_jacobian(const PoseMapping& map, const Vec3& x, double h = 1e-6) {
  Mat3 jac;
  for (int k = 0; k < 3; ++k) {
    Vec3 e = Vec3::Zero();
    e(k) = h;
    jac.col(k) = (map.forward_pos(x + e) - map.forward_pos(x - e)) / (2 * h);
  }
  return jac;
}

}  // namespace

TEST_CASE("single layer examples") {
  TranslationLayer t;
  t.center = Vec3(0.2, 0.1, 0.0);
  t.direction = Vec3(0.05, -0.02, 0.01);
  t.rho = 0.5 * max_translation_width(t.direction);
  const DiffeoMap map(IterHyper{}, {t}, {RotationLayer(Vec3::Zero(), Quat::identity(), 1.0)});
  CHECK((map.forward_pos(t.center) - (t.center + t.direction)).norm() <= 1e-15);

  const Vec3 far = t.center + Vec3(10.0 / t.rho, 0, 0);
  CHECK((map.forward_pos(far) - far).norm() <= 1e-8 * t.direction.norm());
  CHECK((map.forward_pos(far) - (far + std::exp(-100.0) * t.direction)).norm() <= 1e-15);
}

TEST_CASE("identity map") {
  const DiffeoMap id;
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const Vec3 x = rng.vec();
    const Quat q = rng.quat();
    CHECK(id.forward_pos(x) == x);
    CHECK(id.backward_pos(x) == x);
    CHECK((id.jacobian(x) - Mat3::Identity()).norm() == 0.0);
    CHECK(quat_gap(id.forward_ori(x, q), q) <= 1e-15);
    CHECK(quat_gap(id.backward_ori(x, q), q) <= 1e-15);
    const Twist tw{rng.vec(), rng.vec()};
    const Twist out = id.map_velocity(x, q, tw, Direction::Forward);
    CHECK((out.linear - tw.linear).norm() <= 1e-12);
    CHECK((out.angular - tw.angular).norm() <= 1e-9);
  }
}

TEST_CASE("constructor enforces the width bound and equal layer counts") {
  TranslationLayer t;
  t.direction = Vec3(0.1, 0, 0);
  t.rho = max_translation_width(t.direction);
  CHECK_THROWS_AS(DiffeoMap(IterHyper{}, {t}, {RotationLayer()}), ValidationError);
  t.rho *= 0.99;
  CHECK_NOTHROW(DiffeoMap(IterHyper{}, {t}, {RotationLayer()}));
  CHECK_THROWS_AS(DiffeoMap(IterHyper{}, {t}, {}), ValidationError);
  IterHyper bad;
  bad.mu = 1.0;
  CHECK_THROWS_AS(DiffeoMap::fit(bimap::test::planar_scenario(), bad), ValidationError);
}

TEST_CASE("fit on an already matched correspondence is the identity") {
  const Correspondence src = bimap::test::planar_scenario();
  const Correspondence same(src.local(), src.local());
  const DiffeoMap map = DiffeoMap::fit(same, IterHyper{});
  CHECK(map.report().position_history.front() == 0.0);
  for (const auto& t : map.translations()) CHECK(t.direction.norm() == 0.0);
  Rng rng(2);
  for (int i = 0; i < 10; ++i) {
    const Vec3 x = rng.vec();
    CHECK((map.forward_pos(x) - x).norm() == 0.0);
    CHECK(quat_gap(map.offset(x), Quat::identity()) <= 1e-15);
  }
}

TEST_CASE("two-object translation scenario converges with K = 20") {
  IterHyper hyper;
  hyper.K = 20;
  const Correspondence corr = two_object_shift();
  const DiffeoMap map = DiffeoMap::fit(corr, hyper);
  CHECK(map.layer_count() == 20);
  CHECK(map.report().position_error <= 1e-6);
  // Independent oracle: re-evaluate the stored stack.
  const nlohmann::json doc = map.to_json();
  std::vector<Vec3> mapped;
  for (const auto& o : corr.local()) mapped.push_back(reference_forward(doc, o.pose.x));
  const double fp = position_error(mapped, corr.remote_positions());
  CHECK(fp <= 1e-6);
  CHECK(fp == doctest::Approx(map.report().position_error).epsilon(1e-9));
}

TEST_CASE("fitted layers respect the width bound strictly") {
  for (const DiffeoMap* map : {&planar_map(), &valve_map()}) {
    for (const auto& t : map->translations()) {
      if (t.direction.norm() == 0.0) continue;
      CHECK(t.rho > 0.0);
      CHECK(t.rho <= map->hyper().mu * max_translation_width(t.direction) * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("fitted planar map reproduces its residuals") {
  const Correspondence corr = bimap::test::planar_scenario();
  const DiffeoMap& map = planar_map();
  CHECK(map.layer_count() == 100);
  const nlohmann::json doc = map.to_json();
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const Vec3 x = corr.local()[i].pose.x;
    const Vec3 xp = corr.remote()[i].pose.x;
    CHECK((map.forward_pos(x) - reference_forward(doc, x)).norm() <= 1e-14);
    CHECK((map.forward_pos(x) - xp).norm() <= corr.size() * map.report().position_error);
    // The backward map of x'_i lands within the forward residual magnified by
    // the local inverse Jacobian.
    const double gain = map.jacobian(x).inverse().norm();
    CHECK((map.backward_pos(xp) - x).norm() <= 1.01 * gain * (map.forward_pos(x) - xp).norm() + 1e-12);
    const Quat q = corr.local()[i].pose.q;
    const Quat qp = corr.remote()[i].pose.q;
    CHECK(quat_distance(map.forward_ori(x, q), qp) <= corr.size() * map.report().orientation_error + 1e-7);
    CHECK(quat_distance(map.backward_ori(x, qp), q) <= corr.size() * map.report().orientation_error + 1e-7);
  }
  CHECK(map.report().orientation_error <= 1e-4);
  // Position residual decreases over the iterations.
  const auto& h = map.report().position_history;
  CHECK(h.back() < 1e-3 * h.front());
}

TEST_CASE("invertibility on 1000 samples in the inflated box") {
  for (const DiffeoMap* map : {&planar_map(), &valve_map()}) {
    const Correspondence corr = map == &planar_map() ? bimap::test::planar_scenario() : bimap::test::valve_scenario();
    Bounds box = corr.local_bounds().inflated(3.0);
    // Flat axes get a slab of the mean extent so samples leave the plane.
    const double extent = (box.hi - box.lo).maxCoeff();
    for (int a = 0; a < 3; ++a) {
      if (box.hi(a) - box.lo(a) < 1e-12) {
        box.lo(a) -= 0.5 * extent;
        box.hi(a) += 0.5 * extent;
      }
    }
    Rng rng(3);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const Vec3 x = rng.in_box(box);
      worst = std::max(worst, (map->backward_pos(map->forward_pos(x)) - x).norm());
      const Quat q = rng.quat();
      CHECK(quat_gap(map->backward_ori(x, map->forward_ori(x, q)), q) <= 1e-9);
    }
    CHECK(worst <= 1e-9);
  }
}

TEST_CASE("Jacobian: positive determinant and finite-difference agreement") {
  const Correspondence corr = bimap::test::planar_scenario();
  const Bounds box = corr.local_bounds().inflated(3.0);
  Rng rng(4);
  int non_positive = 0;
  for (int i = 0; i < 10000; ++i) {
    Vec3 x = rng.in_box(box);
    x.z() = rng.uniform(-0.5, 0.5);
    if (!(planar_map().jacobian(x).determinant() > 0.0)) ++non_positive;
  }
  CHECK(non_positive == 0);
  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    const Vec3 x = rng.in_box(box);
    const Mat3 jac = planar_map().jacobian(x);
    worst = std::max(worst, (jac - fd_jacobian(planar_map(), x)).norm() / jac.norm());
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("continuity within the layer-stack Lipschitz bound") {
  const DiffeoMap& map = valve_map();
  const double lip = map.lipschitz_bound();
  CHECK(lip >= 1.0);
  const Bounds box = bimap::test::valve_scenario().local_bounds().inflated(3.0);
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 x = rng.in_box(box);
    const Vec3 d = 1e-5 * rng.vec().normalized();
    CHECK((map.forward_pos(x + d) - map.forward_pos(x)).norm() <= lip * d.norm() * (1.0 + 1e-9));
  }
}

TEST_CASE("orientation offset far from every center is the identity") {
  const DiffeoMap& map = planar_map();
  const Vec3 far(1e3, -1e3, 50.0);
  CHECK(quat_gap(map.offset(far), Quat::identity()) <= 1e-6);
  Rng rng(6);
  for (int i = 0; i < 200; ++i) CHECK(std::abs(map.offset(rng.vec(-2, 2)).norm() - 1.0) <= 1e-9);
}

TEST_CASE("velocity mapping matches trajectory differentiation") {
  const DiffeoMap& map = valve_map();
  auto traj = [](double t) {
    return Pose{Vec3(0.45 + 0.1 * std::sin(t), 0.05 * std::cos(1.3 * t), 0.4 + 0.08 * t),
                quat_exp(Vec3(0.3 * t, -0.2 * std::sin(t), 0.1))};
  };
  const double dt = 1e-4;
  for (double t = 0.1; t < 1.5; t += 0.1) {
    const Pose p = traj(t);
    const Pose pa = traj(t - dt), pb = traj(t + dt);
    Twist tw;
    tw.linear = (pb.x - pa.x) / (2 * dt);
    tw.angular = angular_velocity(p.q, (pb.q.coeffs() - pa.q.coeffs()) / (2 * dt));
    const Twist out = map.map_velocity(p.x, p.q, tw, Direction::Forward);

    const Pose ma = map.forward(pa), mb = map.forward(pb), m = map.forward(p);
    const Vec3 v_num = (mb.x - ma.x) / (2 * dt);
    Vec4 qb = mb.q.coeffs(), qa = ma.q.coeffs();
    if (qb.dot(m.q.coeffs()) < 0) qb = -qb;
    if (qa.dot(m.q.coeffs()) < 0) qa = -qa;
    const Vec3 w_num = angular_velocity(m.q, (qb - qa) / (2 * dt));
    CHECK((out.linear - v_num).norm() <= 1e-3 * v_num.norm());
    CHECK((out.angular - w_num).norm() <= 1e-3 * w_num.norm());

    // Backward direction undoes forward.
    const Twist back = map.map_velocity(p.x, m.q, out, Direction::Backward);
    CHECK((back.linear - tw.linear).norm() <= 1e-9 * (1 + tw.linear.norm()));
    CHECK((back.angular - tw.angular).norm() <= 1e-7 * (1 + tw.angular.norm()));
  }
  const Twist zero = map.map_velocity(Vec3(0.5, 0, 0.4), Quat::identity(), {}, Direction::Forward);
  CHECK(zero.linear.norm() == 0.0);
  CHECK(zero.angular.norm() <= 1e-15);
}

TEST_CASE("JSON round trip is bitwise") {
  const DiffeoMap& map = valve_map();
  const std::string text = map.to_json().dump();
  const auto back = mapping_from_json(nlohmann::json::parse(text));
  CHECK(back->backend() == "iter");
  CHECK(back->to_json().dump() == text);
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    const Vec3 x = rng.vec();
    CHECK(back->forward_pos(x) == map.forward_pos(x));
    CHECK(back->offset(x).coeffs() == map.offset(x).coeffs());
  }
  CHECK_THROWS_AS(mapping_from_json(nlohmann::json{{"backend", "iter"}}), ParseError);
  CHECK_THROWS_AS(mapping_from_json(nlohmann::json{{"backend", "spline"}}), ParseError);
}
