#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lasr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;
using Vec3i = Eigen::Vector3i;

// Error taxonomy. The CLI maps ParameterError/InputError/FormatError to
// exit code 2 and OptimizationError to exit code 3.
struct ParameterError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TopologyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct OptimizationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

// Dense row-major image container. T is double, Vec2, Vec3 or uint8_t.
template <typename T>
struct Image {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(size_t(h) * w, T{}) {}
  Image(int h, int w, T fill) : height(h), width(w), data(size_t(h) * w, fill) {}

  T& at(int y, int x) { return data[size_t(y) * width + x]; }
  const T& at(int y, int x) const { return data[size_t(y) * width + x]; }
  size_t size() const { return data.size(); }
  bool same_shape(int h, int w) const { return height == h && width == w; }
  void fill(const T& v) { std::fill(data.begin(), data.end(), v); }
};

using ImageD = Image<double>;
using ImageV2 = Image<Vec2>;
using ImageV3 = Image<Vec3>;
using ImageU8 = Image<uint8_t>;

// Worker cap shared by all internal parallel loops. Defaults to the
// hardware concurrency, clamped by LASR_THREADS when set.
int thread_count();
void set_thread_count(int n);

// Runs fn(band_index, begin, end) over [0, n) split into n_bands contiguous
// bands. Bands are distributed over threads but band indices are stable, so
// callers that accumulate into per-band buffers and reduce in band order get
// results independent of the thread count.
void parallel_bands(int64_t n, int n_bands,
                    const std::function<void(int, int64_t, int64_t)>& fn);

inline double sigmoid(double x) {
  if (x >= 0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Inverse of softplus, for initializing raw positivity-mapped parameters.
inline double softplus_inverse(double y) {
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

inline double sigmoid_derivative(double x) {
  double s = sigmoid(x);
  return s * (1.0 - s);
}

}  // namespace lasr
