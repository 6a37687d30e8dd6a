#pragma once

#include "lasr/core.h"

#include <functional>
#include <random>
#include <vector>

namespace lasr::testutil {

// Central finite difference of a scalar function along one coordinate.
inline double central_diff(const std::function<double(double)>& f, double x0,
                           double h = 1e-5) {
  return (f(x0 + h) - f(x0 - h)) / (2.0 * h);
}

// Relative error with an absolute floor so near-zero pairs compare sanely.
inline double rel_err(double got, double want, double floor_ = 1e-7) {
  double denom = std::max({std::abs(got), std::abs(want), floor_});
  return std::abs(got - want) / denom;
}

struct Rng {
  std::mt19937_64 gen;
  explicit Rng(uint64_t seed) : gen(seed) {}
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen);
  }
  double normal(double mean = 0, double stddev = 1) {
    return std::normal_distribution<double>(mean, stddev)(gen);
  }
  Vec3 vec3(double lo, double hi) {
    return Vec3(uniform(lo, hi), uniform(lo, hi), uniform(lo, hi));
  }
  Vec4 unit_quat() {
    Vec4 q(normal(), normal(), normal(), normal());
    return q.normalized();
  }
};

}  // namespace lasr::testutil
