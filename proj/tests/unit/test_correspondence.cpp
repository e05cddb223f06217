#include "bimap/correspondence.hpp"

#include "bimap/errors.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <numbers>
#include <sstream>

using namespace bimap;
using bimap::test::Rng;

namespace {

Correspondence parse(const std::string& text) {
  std::istringstream in(text);
  return load_scenario(in);
}

const char* two_objects = R"({
  "local":  [{"id": 1, "position": [0, 0, 0], "quaternion": [1, 0, 0, 0]},
             {"id": 2, "position": [1, 0, 0], "quaternion": [1, 0, 0, 0]}],
  "remote": [{"id": 1, "position": [0, 1, 0], "quaternion": [1, 0, 0, 0]},
             {"id": 2, "position": [1, 1, 0], "quaternion": [0, 0, 0, 1]}]
})";

}  // namespace

TEST_CASE("position_error examples") {
  const std::vector<Vec3> a{{0, 0, 0}, {1, 2, 3}};
  CHECK(position_error(a, a) == 0.0);
  CHECK(position_error(std::vector<Vec3>{{1, 0, 0}}, std::vector<Vec3>{{0, 0, 0}}) == doctest::Approx(1.0));
  CHECK(position_error(std::vector<Vec3>{{1, 0, 0}, {0, 3, 0}}, std::vector<Vec3>{{0, 0, 0}, {0, 0, 0}}) ==
        doctest::Approx(2.0));
}

TEST_CASE("orientation_error examples") {
  Rng rng(1);
  const std::vector<Quat> a{rng.quat(), rng.quat()};
  CHECK(orientation_error(a, a) <= 1e-7);
  CHECK(orientation_error(std::vector<Quat>{Quat::identity()},
                          std::vector<Quat>{Quat::from_axis_angle(Vec3::UnitZ(), std::numbers::pi / 2)}) ==
        doctest::Approx(std::numbers::pi / 4));
  const std::vector<Quat> flipped{-a[0], -a[1]};
  CHECK(orientation_error(a, flipped) <= 1e-7);
}

TEST_CASE("error functionals reject mismatched lengths") {
  CHECK_THROWS_AS(position_error(std::vector<Vec3>(2), std::vector<Vec3>(3)), ValidationError);
  CHECK_THROWS_AS(orientation_error(std::vector<Quat>(1), std::vector<Quat>(2)), ValidationError);
}

TEST_CASE("error functionals: equivariance, sign invariance, scaling") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 7;
    std::vector<Vec3> a(n), b(n);
    std::vector<Quat> p(n), q(n);
    for (int i = 0; i < n; ++i) {
      a[i] = rng.vec();
      b[i] = rng.vec();
      p[i] = rng.quat();
      q[i] = rng.quat();
    }
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng.gen);
    std::vector<Vec3> ap(n), bp(n);
    std::vector<Quat> pp(n), qp(n), qs(n);
    for (int i = 0; i < n; ++i) {
      ap[i] = a[perm[i]];
      bp[i] = b[perm[i]];
      pp[i] = p[perm[i]];
      qp[i] = q[perm[i]];
      qs[i] = (i % 2) ? -q[i] : q[i];
    }
    CHECK(position_error(ap, bp) == doctest::Approx(position_error(a, b)).epsilon(1e-12));
    CHECK(orientation_error(pp, qp) == doctest::Approx(orientation_error(p, q)).epsilon(1e-12));
    CHECK(orientation_error(p, qs) == doctest::Approx(orientation_error(p, q)).epsilon(1e-12));

    const double s = rng.uniform(0.1, 10.0);
    std::vector<Vec3> as(n);
    for (int i = 0; i < n; ++i) as[i] = b[i] + s * (a[i] - b[i]);
    CHECK(position_error(as, b) == doctest::Approx(s * position_error(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("planar scenario loads with five objects in the z = 0 plane") {
  const Correspondence corr = bimap::test::planar_scenario();
  CHECK(corr.size() == 5);
  for (const auto& o : corr.local()) CHECK(o.pose.x.z() == 0.0);
  for (const auto& o : corr.remote()) {
    CHECK(o.pose.x.z() == 0.0);
    CHECK(o.pose.q.v.head<2>().norm() == 0.0);
  }
  CHECK(corr.local_bounds().lo.z() == 0.0);
  CHECK(corr.local_bounds().hi.z() == 0.0);
}

TEST_CASE("scenario validation") {
  CHECK(parse(two_objects).size() == 2);
  CHECK_THROWS_AS(parse(R"({"local": [{"id": 1, "position": [0,0,0], "quaternion": [1,0,0,0]}],
                            "remote": [{"id": 1, "position": [0,0,0], "quaternion": [1,0,0,0]}]})"),
                  ValidationError);
  CHECK_THROWS_AS(parse(R"({"local": [{"id": 1, "position": [0,0,0], "quaternion": [1,0,0,0]},
                                      {"id": 2, "position": [0,0,0], "quaternion": [1,0,0,0]}],
                            "remote": [{"id": 1, "position": [0,0,0], "quaternion": [1,0,0,0]},
                                       {"id": 2, "position": [1,0,0], "quaternion": [1,0,0,0]}]})"),
                  ValidationError);
  // Unequal list lengths.
  CHECK_THROWS_AS(parse(R"({"local": [{"id": 1, "position": [0,0,0], "quaternion": [1,0,0,0]},
                                      {"id": 2, "position": [1,0,0], "quaternion": [1,0,0,0]}],
                            "remote": [{"id": 1, "position": [0,0,0], "quaternion": [1,0,0,0]}]})"),
                  ValidationError);
  // Quaternion far from unit norm.
  CHECK_THROWS_AS(parse(R"({"local": [{"id": 1, "position": [0,0,0], "quaternion": [2,0,0,0]},
                                      {"id": 2, "position": [1,0,0], "quaternion": [1,0,0,0]}],
                            "remote": [{"id": 1, "position": [0,0,0], "quaternion": [1,0,0,0]},
                                       {"id": 2, "position": [1,0,0], "quaternion": [1,0,0,0]}]})"),
                  ValidationError);
  CHECK_THROWS_AS(parse("{\"local\": 3}"), ParseError);
  CHECK_THROWS_AS(parse("not json"), ParseError);
  CHECK_THROWS_AS(load_scenario_file("/nonexistent/scenario.json"), IoError);
}

TEST_CASE("near-unit quaternions are renormalized on load") {
  const Correspondence corr = parse(R"({
    "local":  [{"id": 1, "position": [0, 0, 0], "quaternion": [1.0000005, 0, 0, 0]},
               {"id": 2, "position": [1, 0, 0], "quaternion": [1, 0, 0, 0]}],
    "remote": [{"id": 1, "position": [0, 0, 0], "quaternion": [1, 0, 0, 0]},
               {"id": 2, "position": [1, 0, 0], "quaternion": [1, 0, 0, 0]}]})");
  CHECK(std::abs(corr.local()[0].pose.q.norm() - 1.0) <= 1e-15);
}

TEST_CASE("orientation offsets and bounds") {
  const Correspondence corr = parse(two_objects);
  const auto offsets = corr.orientation_offsets();
  CHECK(offsets[0].norm() <= 1e-15);
  CHECK((offsets[1] - Vec3(0, 0, std::numbers::pi / 2)).norm() <= 1e-12);
  CHECK((corr.local_bounds().lo - Vec3(0, 0, 0)).norm() == 0.0);
  CHECK((corr.local_bounds().hi - Vec3(1, 0, 0)).norm() == 0.0);
  CHECK((corr.remote_bounds().inflated(3.0).lo - Vec3(-1, 1, 0)).norm() <= 1e-15);
  CHECK(corr.workspace_scale() == doctest::Approx(1.0));
}

TEST_CASE("scenario JSON round trip") {
  const Correspondence corr = bimap::test::valve_scenario();
  std::istringstream in(scenario_to_json(corr).dump());
  const Correspondence back = load_scenario(in);
  REQUIRE(back.size() == corr.size());
  for (std::size_t i = 0; i < corr.size(); ++i) {
    CHECK(back.local()[i].id == corr.local()[i].id);
    CHECK(back.local()[i].pose.x == corr.local()[i].pose.x);
    CHECK(back.remote()[i].pose.q.coeffs() == corr.remote()[i].pose.q.coeffs());
  }
}
