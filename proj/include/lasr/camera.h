#pragma once

#include "lasr/core.h"
#include "lasr/skinning.h"

#include <vector>

namespace lasr {

// Pinhole camera with square pixels and zero skew. The principal point is
// shared across frames; focal length varies per frame.
struct Intrinsics {
  double focal = 1.0;
  Vec2 principal = Vec2::Zero();
};

// Everything time-varying for one frame: camera intrinsics, object root
// transform G_0 and the B bone transforms G_1..G_B.
struct FrameParams {
  Intrinsics intrinsics;
  BonePose root;
  std::vector<BonePose> bones;
};

// Points closer than this are clipped (flagged invisible) instead of
// erroring; early optimization can push vertices behind the camera.
constexpr double kNearPlane = 1e-3;

// Pixels are centered at integer coordinates, x right, y down. Clip space
// maps the image extent [-0.5, W-0.5] x [-0.5, H-0.5] to [-1,1]^2.
inline Vec2 pixel_to_clip(const Vec2& p, int width, int height) {
  return Vec2((2.0 * p.x() + 1.0 - width) / width,
              (2.0 * p.y() + 1.0 - height) / height);
}
inline Vec2 clip_to_pixel(const Vec2& c, int width, int height) {
  return Vec2((c.x() * width - 1.0 + width) / 2.0,
              (c.y() * height - 1.0 + height) / 2.0);
}

struct Projection {
  std::vector<Vec2> pixel;
  std::vector<double> depth;
  std::vector<uint8_t> valid;  // depth > kNearPlane
};

Projection project(const Intrinsics& k, const std::vector<Vec3>& points);

struct ProjectionGrads {
  std::vector<Vec3> points_bar;
  double focal_bar = 0;
  Vec2 principal_bar = Vec2::Zero();
};
// Adjoints of pixels (and optionally depths) back to points and intrinsics.
// Clipped points receive no gradient.
ProjectionGrads project_vjp(const Intrinsics& k,
                            const std::vector<Vec3>& points,
                            const Projection& proj,
                            const std::vector<Vec2>& pixel_bar,
                            const std::vector<double>* depth_bar = nullptr);

// Forward flow for paired surface points: projection at t+1 minus projection
// at t. Samples clipped in either frame are flagged invalid.
struct FlowResult {
  std::vector<Vec2> flow;
  std::vector<uint8_t> valid;
};
FlowResult correspondence_flow(const Intrinsics& k_t, const Intrinsics& k_t1,
                               const std::vector<Vec3>& points_t,
                               const std::vector<Vec3>& points_t1);

struct FlowGrads {
  ProjectionGrads at_t;
  ProjectionGrads at_t1;
};
FlowGrads correspondence_flow_vjp(const Intrinsics& k_t,
                                  const Intrinsics& k_t1,
                                  const std::vector<Vec3>& points_t,
                                  const std::vector<Vec3>& points_t1,
                                  const std::vector<Vec2>& flow_bar);

}  // namespace lasr
