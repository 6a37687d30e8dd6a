#pragma once

#include "lasr/core.h"

#include <array>
#include <limits>
#include <vector>

namespace lasr {

// ---------------------------------------------------------------------------
// Quaternions. Stored (w, x, y, z); rotations always act through the
// normalized quaternion so raw parameter vectors may drift off the unit
// sphere between optimizer renormalizations.
// ---------------------------------------------------------------------------

Vec4 quat_normalize(const Vec4& q);
Mat3 quat_to_rotation(const Vec4& q_unit);
Vec3 quat_rotate(const Vec4& q_unit, const Vec3& p);

// Accumulates adjoints of g = adjoint(R(q_unit) * p) into p_bar and q_unit_bar.
void quat_rotate_vjp(const Vec4& q_unit, const Vec3& p, const Vec3& g,
                     Vec3* p_bar, Vec4* q_unit_bar);

// Adjoint of q_unit = q_raw / |q_raw|.
Vec4 quat_normalize_vjp(const Vec4& q_raw, const Vec4& g_unit);

// ---------------------------------------------------------------------------
// Point/triangle geometry.
// ---------------------------------------------------------------------------

// Closest point on 3D triangle (a,b,c) to p, with barycentric coordinates.
struct ClosestPointResult {
  Vec3 point;
  Vec3 bary;
  double dist_sq = 0;
};
ClosestPointResult closest_point_triangle(const Vec3& p, const Vec3& a,
                                          const Vec3& b, const Vec3& c);

// Signed squared distance of a 2D point to a triangle boundary, positive
// inside. Also reports the boundary-projection data needed for the VJP.
struct SignedDist2D {
  double value = 0;     // sign * d^2
  int edge = 0;         // achieving edge (edge k connects vertex k and k+1)
  double t = 0;         // clamped parameter along that edge
  Vec2 closest;         // closest boundary point
  bool inside = false;
};
SignedDist2D signed_dist_sq_2d(const Vec2& p, const Vec2& a, const Vec2& b,
                               const Vec2& c);

// Adjoint of SignedDist2D.value w.r.t. p and the three vertices.
void signed_dist_sq_2d_vjp(const SignedDist2D& r, const Vec2& p, const Vec2& a,
                           const Vec2& b, const Vec2& c, double g, Vec2* p_bar,
                           Vec2* a_bar, Vec2* b_bar, Vec2* c_bar);

// Barycentric coordinates used for attribute interpolation at a pixel:
// coordinates of p itself when p lies inside (a,b,c), else of the closest
// boundary point. Matches the metric used by signed_dist_sq_2d.
struct Bary2D {
  Vec3 lambda;
  bool inside = false;
  int edge = 0;   // valid when !inside
  double t = 0;   // valid when !inside
};
Bary2D barycentric_2d(const Vec2& p, const Vec2& a, const Vec2& b,
                      const Vec2& c);
void barycentric_2d_vjp(const Bary2D& r, const Vec2& p, const Vec2& a,
                        const Vec2& b, const Vec2& c, const Vec3& g_lambda,
                        Vec2* p_bar, Vec2* a_bar, Vec2* b_bar, Vec2* c_bar);

// Exact triangle-triangle intersection predicate (coplanar cases included).
// Triangles sharing a vertex should be filtered by the caller.
bool triangles_intersect(const Vec3& a0, const Vec3& a1, const Vec3& a2,
                         const Vec3& b0, const Vec3& b1, const Vec3& b2);

// ---------------------------------------------------------------------------
// KD-tree over points, for nearest-neighbor queries.
// ---------------------------------------------------------------------------

class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::vector<Vec3> points);

  // Index of the nearest point and its squared distance.
  int nearest(const Vec3& q, double* dist_sq = nullptr) const;
  const std::vector<Vec3>& points() const { return points_; }
  bool empty() const { return points_.empty(); }

 private:
  struct Node {
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range into order_
    int axis = 0;
    double split = 0;
  };
  void build(int node, int begin, int end, int depth);
  void query(int node, const Vec3& q, int* best, double* best_d2) const;

  std::vector<Vec3> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// BVH over triangles: closest surface point and ray-crossing parity.
// ---------------------------------------------------------------------------

class TriangleBvh {
 public:
  TriangleBvh() = default;
  TriangleBvh(const std::vector<Vec3>& vertices,
              const std::vector<Vec3i>& faces);

  struct SurfacePoint {
    int face = -1;
    Vec3 point;
    Vec3 bary;
    double dist_sq = std::numeric_limits<double>::infinity();
  };
  SurfacePoint closest_point(const Vec3& q) const;

  // Number of ray-triangle crossings for t in (0, inf). Used for parity
  // inside/outside tests; dir should avoid axis alignment with the mesh.
  int count_ray_crossings(const Vec3& origin, const Vec3& dir) const;

  bool empty() const { return faces_.empty(); }

 private:
  struct Node {
    Vec3 lo, hi;
    int left = -1, right = -1;
    int begin = 0, end = 0;
  };
  void build(int node, int begin, int end);

  std::vector<Vec3> vertices_;
  std::vector<Vec3i> faces_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace lasr
