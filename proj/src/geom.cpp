#include "lasr/geom.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lasr {

// ---------------------------------------------------------------------------
// Quaternions
// ---------------------------------------------------------------------------

Vec4 quat_normalize(const Vec4& q) {
  double n = q.norm();
  if (n < 1e-12) throw ParameterError("quaternion norm underflow");
  return q / n;
}

Mat3 quat_to_rotation(const Vec4& q) {
  double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Vec3 quat_rotate(const Vec4& q, const Vec3& p) {
  Vec3 v(q[1], q[2], q[3]);
  Vec3 vxp = v.cross(p);
  return p + 2.0 * q[0] * vxp + 2.0 * v.cross(vxp);
}

void quat_rotate_vjp(const Vec4& q, const Vec3& p, const Vec3& g, Vec3* p_bar,
                     Vec4* q_bar) {
  double w = q[0];
  Vec3 v(q[1], q[2], q[3]);
  if (p_bar) {
    // d(Rp)/dp = R
    *p_bar += quat_to_rotation(q).transpose() * g;
  }
  if (q_bar) {
    (*q_bar)[0] += 2.0 * v.cross(p).dot(g);
    Vec3 v_bar = 2.0 * (p * v.dot(g) - 2.0 * v * p.dot(g) + v.dot(p) * g +
                        w * p.cross(g));
    (*q_bar)[1] += v_bar[0];
    (*q_bar)[2] += v_bar[1];
    (*q_bar)[3] += v_bar[2];
  }
}

Vec4 quat_normalize_vjp(const Vec4& q_raw, const Vec4& g_unit) {
  double n = q_raw.norm();
  Vec4 u = q_raw / n;
  return (g_unit - u * u.dot(g_unit)) / n;
}

// ---------------------------------------------------------------------------
// Closest point on 3D triangle (Ericson, Real-Time Collision Detection 5.1.5)
// ---------------------------------------------------------------------------

ClosestPointResult closest_point_triangle(const Vec3& p, const Vec3& a,
                                          const Vec3& b, const Vec3& c) {
  ClosestPointResult out;
  Vec3 ab = b - a, ac = c - a, ap = p - a;
  double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) {
    out.point = a;
    out.bary = Vec3(1, 0, 0);
  } else {
    Vec3 bp = p - b;
    double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0 && d4 <= d3) {
      out.point = b;
      out.bary = Vec3(0, 1, 0);
    } else {
      double vc = d1 * d4 - d3 * d2;
      if (vc <= 0 && d1 >= 0 && d3 <= 0) {
        double denom = d1 - d3;
        double v = denom != 0 ? d1 / denom : 0.0;
        out.point = a + v * ab;
        out.bary = Vec3(1 - v, v, 0);
      } else {
        Vec3 cp = p - c;
        double d5 = ab.dot(cp), d6 = ac.dot(cp);
        if (d6 >= 0 && d5 <= d6) {
          out.point = c;
          out.bary = Vec3(0, 0, 1);
        } else {
          double vb = d5 * d2 - d1 * d6;
          if (vb <= 0 && d2 >= 0 && d6 <= 0) {
            double denom = d2 - d6;
            double w = denom != 0 ? d2 / denom : 0.0;
            out.point = a + w * ac;
            out.bary = Vec3(1 - w, 0, w);
          } else {
            double va = d3 * d6 - d5 * d4;
            if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
              double denom = (d4 - d3) + (d5 - d6);
              double w = denom != 0 ? (d4 - d3) / denom : 0.0;
              out.point = b + w * (c - b);
              out.bary = Vec3(0, 1 - w, w);
            } else {
              double denom = va + vb + vc;
              double v = vb / denom, w = vc / denom;
              out.point = a + ab * v + ac * w;
              out.bary = Vec3(1 - v - w, v, w);
            }
          }
        }
      }
    }
  }
  out.dist_sq = (p - out.point).squaredNorm();
  return out;
}

// ---------------------------------------------------------------------------
// 2D signed squared distance and barycentrics
// ---------------------------------------------------------------------------

namespace {

inline double cross2(const Vec2& s, const Vec2& t) {
  return s.x() * t.y() - s.y() * t.x();
}
inline Vec2 perp(const Vec2& t) { return Vec2(t.y(), -t.x()); }

struct EdgeProj {
  double t;        // clamped parameter
  bool clamped;
  Vec2 closest;
  double dist_sq;
};

EdgeProj project_to_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  EdgeProj r;
  Vec2 e = b - a;
  double den = e.squaredNorm();
  double t = den > 0 ? (p - a).dot(e) / den : 0.0;
  r.clamped = t <= 0 || t >= 1;
  r.t = std::clamp(t, 0.0, 1.0);
  r.closest = a + r.t * e;
  r.dist_sq = (p - r.closest).squaredNorm();
  return r;
}

bool point_in_triangle_2d(const Vec2& p, const Vec2& a, const Vec2& b,
                          const Vec2& c) {
  double s0 = cross2(b - a, p - a);
  double s1 = cross2(c - b, p - b);
  double s2 = cross2(a - c, p - c);
  bool any_neg = s0 < 0 || s1 < 0 || s2 < 0;
  bool any_pos = s0 > 0 || s1 > 0 || s2 > 0;
  return !(any_neg && any_pos);
}

}  // namespace

SignedDist2D signed_dist_sq_2d(const Vec2& p, const Vec2& a, const Vec2& b,
                               const Vec2& c) {
  const Vec2 verts[3] = {a, b, c};
  SignedDist2D r;
  double best = std::numeric_limits<double>::infinity();
  for (int e = 0; e < 3; ++e) {
    EdgeProj pr = project_to_segment(p, verts[e], verts[(e + 1) % 3]);
    if (pr.dist_sq < best) {
      best = pr.dist_sq;
      r.edge = e;
      r.t = pr.t;
      r.closest = pr.closest;
    }
  }
  r.inside = point_in_triangle_2d(p, a, b, c);
  r.value = (r.inside ? 1.0 : -1.0) * best;
  return r;
}

void signed_dist_sq_2d_vjp(const SignedDist2D& r, const Vec2& p, const Vec2& a,
                           const Vec2& b, const Vec2& c, double g, Vec2* p_bar,
                           Vec2* a_bar, Vec2* b_bar, Vec2* c_bar) {
  // value = sign * |p - (A + t (B - A))|^2 with t the constrained minimizer,
  // so by the envelope theorem derivatives flow only through the endpoints.
  const Vec2 verts[3] = {a, b, c};
  Vec2* bars[3] = {a_bar, b_bar, c_bar};
  double s = r.inside ? 1.0 : -1.0;
  Vec2 diff = p - r.closest;
  Vec2 gp = 2.0 * s * g * diff;
  if (p_bar) *p_bar += gp;
  int i = r.edge, j = (r.edge + 1) % 3;
  (void)verts;
  if (bars[i]) *bars[i] -= (1.0 - r.t) * gp;
  if (bars[j]) *bars[j] -= r.t * gp;
}

Bary2D barycentric_2d(const Vec2& p, const Vec2& a, const Vec2& b,
                      const Vec2& c) {
  Bary2D r;
  r.inside = point_in_triangle_2d(p, a, b, c);
  if (r.inside) {
    Vec2 u = b - a, v = c - a, w = p - a;
    double den = cross2(u, v);
    if (std::abs(den) < 1e-300) {
      r.inside = false;  // degenerate projection, fall through to edges
    } else {
      double l2 = cross2(w, v) / den;
      double l3 = cross2(u, w) / den;
      r.lambda = Vec3(1 - l2 - l3, l2, l3);
      return r;
    }
  }
  const Vec2 verts[3] = {a, b, c};
  double best = std::numeric_limits<double>::infinity();
  for (int e = 0; e < 3; ++e) {
    EdgeProj pr = project_to_segment(p, verts[e], verts[(e + 1) % 3]);
    if (pr.dist_sq < best) {
      best = pr.dist_sq;
      r.edge = e;
      r.t = pr.t;
    }
  }
  r.lambda = Vec3::Zero();
  r.lambda[r.edge] = 1 - r.t;
  r.lambda[(r.edge + 1) % 3] = r.t;
  return r;
}

void barycentric_2d_vjp(const Bary2D& r, const Vec2& p, const Vec2& a,
                        const Vec2& b, const Vec2& c, const Vec3& g,
                        Vec2* p_bar, Vec2* a_bar, Vec2* b_bar, Vec2* c_bar) {
  if (r.inside) {
    Vec2 u = b - a, v = c - a, w = p - a;
    double den = cross2(u, v);
    double l2 = cross2(w, v) / den;
    double l3 = cross2(u, w) / den;
    // lambda1 = 1 - l2 - l3 folds its adjoint into the other two.
    double s2 = g[1] - g[0];
    double s3 = g[2] - g[0];

    // num2 = cross2(w, v), num3 = cross2(u, w), den = cross2(u, v)
    Vec2 dnum2_dp = perp(v);
    Vec2 dnum2_da = -perp(v) + perp(w);
    Vec2 dnum2_dc = -perp(w);
    Vec2 dnum3_dp = -perp(u);
    Vec2 dnum3_da = perp(u) - perp(w);
    Vec2 dnum3_db = perp(w);
    Vec2 dden_da = perp(u) - perp(v);
    Vec2 dden_db = perp(v);
    Vec2 dden_dc = -perp(u);

    auto add = [&](Vec2* bar, const Vec2& dl2, const Vec2& dl3) {
      if (bar) *bar += s2 * dl2 + s3 * dl3;
    };
    add(p_bar, dnum2_dp / den, dnum3_dp / den);
    add(a_bar, (dnum2_da - l2 * dden_da) / den, (dnum3_da - l3 * dden_da) / den);
    add(b_bar, (-l2 * dden_db) / den, (dnum3_db - l3 * dden_db) / den);
    add(c_bar, (dnum2_dc - l2 * dden_dc) / den, (-l3 * dden_dc) / den);
    return;
  }
  // Edge case: lambda = (1-t) on vertex i, t on vertex j.
  const Vec2 verts[3] = {a, b, c};
  Vec2* bars[3] = {p_bar, nullptr, nullptr};
  (void)bars;
  int i = r.edge, j = (r.edge + 1) % 3;
  if (r.t <= 0 || r.t >= 1) return;  // clamped: locally constant
  const Vec2& A = verts[i];
  const Vec2& B = verts[j];
  Vec2 e = B - A, w = p - A;
  double den = e.squaredNorm();
  double s = g[j] - g[i];  // d(loss)/dt
  Vec2 gt_dp = e / den;
  Vec2 gt_dA = (-e - w + 2 * r.t * e) / den;
  Vec2 gt_dB = (w - 2 * r.t * e) / den;
  if (p_bar) *p_bar += s * gt_dp;
  Vec2* vb[3] = {a_bar, b_bar, c_bar};
  if (vb[i]) *vb[i] += s * gt_dA;
  if (vb[j]) *vb[j] += s * gt_dB;
}

// ---------------------------------------------------------------------------
// Triangle-triangle intersection
// ---------------------------------------------------------------------------

namespace {

// Segment-triangle intersection for t in [0,1] (Moller-Trumbore).
bool segment_hits_triangle(const Vec3& p, const Vec3& q, const Vec3& a,
                           const Vec3& b, const Vec3& c) {
  Vec3 dir = q - p;
  Vec3 e1 = b - a, e2 = c - a;
  Vec3 h = dir.cross(e2);
  double det = e1.dot(h);
  if (std::abs(det) < 1e-14) return false;
  double inv = 1.0 / det;
  Vec3 s = p - a;
  double u = s.dot(h) * inv;
  if (u < 0 || u > 1) return false;
  Vec3 qv = s.cross(e1);
  double v = dir.dot(qv) * inv;
  if (v < 0 || u + v > 1) return false;
  double t = e2.dot(qv) * inv;
  return t >= 0 && t <= 1;
}

bool segments_cross_2d(const Vec2& a, const Vec2& b, const Vec2& c,
                       const Vec2& d) {
  double d1 = cross2(d - c, a - c);
  double d2 = cross2(d - c, b - c);
  double d3 = cross2(b - a, c - a);
  double d4 = cross2(b - a, d - a);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
         ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

}  // namespace

bool triangles_intersect(const Vec3& a0, const Vec3& a1, const Vec3& a2,
                         const Vec3& b0, const Vec3& b1, const Vec3& b2) {
  Vec3 na = (a1 - a0).cross(a2 - a0);
  Vec3 nb = (b1 - b0).cross(b2 - b0);
  double scale = std::max(na.norm(), nb.norm());
  double eps = 1e-12 * std::max(scale, 1e-30);

  double db0 = na.dot(b0 - a0), db1 = na.dot(b1 - a0), db2 = na.dot(b2 - a0);
  bool coplanar = std::abs(db0) < eps && std::abs(db1) < eps && std::abs(db2) < eps;
  if (!coplanar) {
    if ((db0 > 0 && db1 > 0 && db2 > 0) || (db0 < 0 && db1 < 0 && db2 < 0))
      return false;
    double da0 = nb.dot(a0 - b0), da1 = nb.dot(a1 - b0), da2 = nb.dot(a2 - b0);
    if ((da0 > 0 && da1 > 0 && da2 > 0) || (da0 < 0 && da1 < 0 && da2 < 0))
      return false;
    const Vec3 A[3] = {a0, a1, a2};
    const Vec3 B[3] = {b0, b1, b2};
    for (int i = 0; i < 3; ++i) {
      if (segment_hits_triangle(A[i], A[(i + 1) % 3], b0, b1, b2)) return true;
      if (segment_hits_triangle(B[i], B[(i + 1) % 3], a0, a1, a2)) return true;
    }
    return false;
  }

  // Coplanar: project onto the dominant axis plane and test in 2D.
  Vec3 n = na.norm() > nb.norm() ? na : nb;
  int drop = 0;
  if (std::abs(n[1]) > std::abs(n[drop])) drop = 1;
  if (std::abs(n[2]) > std::abs(n[drop])) drop = 2;
  int u = (drop + 1) % 3, v = (drop + 2) % 3;
  auto proj = [&](const Vec3& x) { return Vec2(x[u], x[v]); };
  Vec2 A[3] = {proj(a0), proj(a1), proj(a2)};
  Vec2 B[3] = {proj(b0), proj(b1), proj(b2)};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (segments_cross_2d(A[i], A[(i + 1) % 3], B[j], B[(j + 1) % 3]))
        return true;
  for (int i = 0; i < 3; ++i) {
    if (point_in_triangle_2d(A[i], B[0], B[1], B[2])) return true;
    if (point_in_triangle_2d(B[i], A[0], A[1], A[2])) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// KdTree
// ---------------------------------------------------------------------------

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / 4 + 16);
    nodes_.emplace_back();
    build(0, 0, int(points_.size()), 0);
  }
}

void KdTree::build(int node, int begin, int end, int depth) {
  constexpr int kLeafSize = 8;
  Node& nd = nodes_[node];
  nd.begin = begin;
  nd.end = end;
  if (end - begin <= kLeafSize) return;

  Vec3 lo = points_[order_[begin]], hi = lo;
  for (int i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  Vec3 ext = hi - lo;
  int axis = 0;
  if (ext[1] > ext[axis]) axis = 1;
  if (ext[2] > ext[axis]) axis = 2;
  int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid,
                   order_.begin() + end, [&](int a, int b) {
                     return points_[a][axis] < points_[b][axis];
                   });
  nd.axis = axis;
  nd.split = points_[order_[mid]][axis];
  int left = int(nodes_.size());
  nodes_.emplace_back();
  nodes_.emplace_back();
  nodes_[node].left = left;
  nodes_[node].right = left + 1;
  build(left, begin, mid, depth + 1);
  build(left + 1, mid, end, depth + 1);
}

int KdTree::nearest(const Vec3& q, double* dist_sq) const {
  if (points_.empty()) throw ParameterError("nearest on empty point set");
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  query(0, q, &best, &best_d2);
  if (dist_sq) *dist_sq = best_d2;
  return best;
}

void KdTree::query(int node, const Vec3& q, int* best, double* best_d2) const {
  const Node& nd = nodes_[node];
  if (nd.left < 0) {
    for (int i = nd.begin; i < nd.end; ++i) {
      int idx = order_[i];
      double d2 = (points_[idx] - q).squaredNorm();
      if (d2 < *best_d2) {
        *best_d2 = d2;
        *best = idx;
      }
    }
    return;
  }
  double delta = q[nd.axis] - nd.split;
  int first = delta < 0 ? nd.left : nd.right;
  int second = delta < 0 ? nd.right : nd.left;
  query(first, q, best, best_d2);
  if (delta * delta < *best_d2) query(second, q, best, best_d2);
}

// ---------------------------------------------------------------------------
// TriangleBvh
// ---------------------------------------------------------------------------

TriangleBvh::TriangleBvh(const std::vector<Vec3>& vertices,
                         const std::vector<Vec3i>& faces)
    : vertices_(vertices), faces_(faces) {
  order_.resize(faces_.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (!faces_.empty()) {
    nodes_.reserve(2 * faces_.size() / 2 + 16);
    nodes_.emplace_back();
    build(0, 0, int(faces_.size()));
  }
}

void TriangleBvh::build(int node, int begin, int end) {
  constexpr int kLeafSize = 4;
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (int i = begin; i < end; ++i) {
    const Vec3i& f = faces_[order_[i]];
    for (int k = 0; k < 3; ++k) {
      lo = lo.cwiseMin(vertices_[f[k]]);
      hi = hi.cwiseMax(vertices_[f[k]]);
    }
  }
  nodes_[node].lo = lo;
  nodes_[node].hi = hi;
  nodes_[node].begin = begin;
  nodes_[node].end = end;
  if (end - begin <= kLeafSize) return;

  Vec3 ext = hi - lo;
  int axis = 0;
  if (ext[1] > ext[axis]) axis = 1;
  if (ext[2] > ext[axis]) axis = 2;
  int mid = (begin + end) / 2;
  auto centroid = [&](int f) {
    const Vec3i& t = faces_[f];
    return (vertices_[t[0]][axis] + vertices_[t[1]][axis] +
            vertices_[t[2]][axis]) / 3.0;
  };
  std::nth_element(order_.begin() + begin, order_.begin() + mid,
                   order_.begin() + end,
                   [&](int a, int b) { return centroid(a) < centroid(b); });
  int left = int(nodes_.size());
  nodes_.emplace_back();
  nodes_.emplace_back();
  nodes_[node].left = left;
  nodes_[node].right = left + 1;
  build(left, begin, mid);
  build(left + 1, mid, end);
}

namespace {

double box_dist_sq(const Vec3& q, const Vec3& lo, const Vec3& hi) {
  double d2 = 0;
  for (int k = 0; k < 3; ++k) {
    double d = std::max({lo[k] - q[k], 0.0, q[k] - hi[k]});
    d2 += d * d;
  }
  return d2;
}

bool ray_hits_box(const Vec3& o, const Vec3& inv_dir, const Vec3& lo,
                  const Vec3& hi) {
  double tmin = 0, tmax = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    double t0 = (lo[k] - o[k]) * inv_dir[k];
    double t1 = (hi[k] - o[k]) * inv_dir[k];
    if (inv_dir[k] < 0) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return false;
  }
  return true;
}

}  // namespace

TriangleBvh::SurfacePoint TriangleBvh::closest_point(const Vec3& q) const {
  if (faces_.empty()) throw GeometryError("closest_point on empty mesh");
  SurfacePoint best;
  // Iterative best-first descent with an explicit stack.
  std::vector<int> stack = {0};
  while (!stack.empty()) {
    int ni = stack.back();
    stack.pop_back();
    const Node& nd = nodes_[ni];
    if (box_dist_sq(q, nd.lo, nd.hi) >= best.dist_sq) continue;
    if (nd.left < 0) {
      for (int i = nd.begin; i < nd.end; ++i) {
        int f = order_[i];
        const Vec3i& t = faces_[f];
        ClosestPointResult r = closest_point_triangle(
            q, vertices_[t[0]], vertices_[t[1]], vertices_[t[2]]);
        if (r.dist_sq < best.dist_sq) {
          best.dist_sq = r.dist_sq;
          best.face = f;
          best.point = r.point;
          best.bary = r.bary;
        }
      }
      continue;
    }
    double dl = box_dist_sq(q, nodes_[nd.left].lo, nodes_[nd.left].hi);
    double dr = box_dist_sq(q, nodes_[nd.right].lo, nodes_[nd.right].hi);
    // Push the farther child first so the nearer one is explored first.
    if (dl < dr) {
      stack.push_back(nd.right);
      stack.push_back(nd.left);
    } else {
      stack.push_back(nd.left);
      stack.push_back(nd.right);
    }
  }
  return best;
}

int TriangleBvh::count_ray_crossings(const Vec3& origin,
                                     const Vec3& dir) const {
  if (faces_.empty()) return 0;
  Vec3 inv_dir;
  for (int k = 0; k < 3; ++k)
    inv_dir[k] = dir[k] != 0 ? 1.0 / dir[k]
                             : std::numeric_limits<double>::infinity();
  int count = 0;
  std::vector<int> stack = {0};
  while (!stack.empty()) {
    int ni = stack.back();
    stack.pop_back();
    const Node& nd = nodes_[ni];
    if (!ray_hits_box(origin, inv_dir, nd.lo, nd.hi)) continue;
    if (nd.left < 0) {
      for (int i = nd.begin; i < nd.end; ++i) {
        const Vec3i& f = faces_[order_[i]];
        const Vec3& a = vertices_[f[0]];
        const Vec3& b = vertices_[f[1]];
        const Vec3& c = vertices_[f[2]];
        Vec3 e1 = b - a, e2 = c - a;
        Vec3 h = dir.cross(e2);
        double det = e1.dot(h);
        if (std::abs(det) < 1e-14) continue;
        double inv = 1.0 / det;
        Vec3 s = origin - a;
        double u = s.dot(h) * inv;
        if (u < 0 || u > 1) continue;
        Vec3 qv = s.cross(e1);
        double v = dir.dot(qv) * inv;
        if (v < 0 || u + v > 1) continue;
        double t = e2.dot(qv) * inv;
        if (t > 1e-12) ++count;
      }
      continue;
    }
    stack.push_back(nd.left);
    stack.push_back(nd.right);
  }
  return count;
}

}  // namespace lasr
