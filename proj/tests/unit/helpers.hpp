#pragma once

#include <doctest.h>

#include <Eigen/Geometry>
#include <functional>
#include <random>

#include "zspose/error.hpp"
#include "zspose/geom.hpp"
#include "zspose/rng.hpp"

namespace zspose::test {

inline Rotation3 random_rotation(Rng& rng) {
  std::normal_distribution<double> nd;
  Eigen::Quaterniond q(nd(rng), nd(rng), nd(rng), nd(rng));
  q.normalize();
  return Rotation3::project(q.toRotationMatrix());
}

inline Vec3 random_vec(Rng& rng, double sigma = 1.0) {
  std::normal_distribution<double> nd(0.0, sigma);
  return {nd(rng), nd(rng), nd(rng)};
}

inline RigidTransformSim3 random_sim3(Rng& rng) {
  std::uniform_real_distribution<double> s(0.3, 3.0);
  return RigidTransformSim3(random_rotation(rng), random_vec(rng, 2.0), s(rng));
}

inline RigidTransformSE3 random_se3(Rng& rng) { return RigidTransformSE3(random_rotation(rng), random_vec(rng, 2.0)); }

inline ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a zspose::Error");
  return ErrorCode::InvalidArgument;
}

}  // namespace zspose::test

#define CHECK_CODE(expr, code) CHECK(::zspose::test::code_of([&] { (void)(expr); }) == (code))
