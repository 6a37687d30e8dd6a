#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lasr/geom.h"
#include "lasr/mesh.h"
#include "test_util.h"

#include <cstdio>
#include <set>

using namespace lasr;
using testutil::Rng;

TEST_CASE("icosphere combinatorics and sphere projection") {
  for (int s = 0; s <= 4; ++s) {
    Mesh m = make_icosphere(s);
    int expected_v = 10 * (1 << (2 * s)) + 2;
    CHECK(m.vertex_count() == expected_v);
    CHECK(m.face_count() == 20 * (1 << (2 * s)));
    for (const Vec3& v : m.vertices)
      CHECK(std::abs(v.norm() - 1.0) < 1e-9);
    CHECK(is_edge_manifold(m.vertex_count(), m.faces));
    CHECK(is_closed(m.vertex_count(), m.faces));
    CHECK(euler_characteristic(m.vertex_count(), m.faces) == 2);
    validate_mesh(m);
  }
  CHECK(make_icosphere(0).vertex_count() == 12);
  CHECK(make_icosphere(2).vertex_count() == 162);
  CHECK(make_icosphere(2).face_count() == 320);
  CHECK_THROWS_AS(make_icosphere(-1), ParameterError);
  CHECK_THROWS_AS(make_icosphere(7), ParameterError);
}

TEST_CASE("icosphere faces are outward oriented") {
  Mesh m = make_icosphere(1);
  double vol6 = 0;
  for (const Vec3i& f : m.faces)
    vol6 += m.vertices[f[0]].dot(m.vertices[f[1]].cross(m.vertices[f[2]]));
  CHECK(vol6 > 0);
}

namespace {

// 5x5 planar grid triangulated with a consistent diagonal.
Mesh make_grid_mesh(int n = 5) {
  Mesh m;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      m.vertices.emplace_back(x, y, 0);
  for (int y = 0; y + 1 < n; ++y) {
    for (int x = 0; x + 1 < n; ++x) {
      int i = y * n + x;
      m.faces.push_back({i, i + 1, i + n});
      m.faces.push_back({i + 1, i + n + 1, i + n});
    }
  }
  m.colors.assign(m.vertices.size(), Vec3(0.5, 0.5, 0.5));
  return m;
}

}  // namespace

TEST_CASE("uniform laplacian centroid, tetrahedron, invariances") {
  Mesh grid = make_grid_mesh();
  MeshTopology topo = build_topology(grid.vertex_count(), grid.faces);
  auto lap = uniform_laplacian(topo, grid.vertices);
  // interior vertex (2,2) sits at the centroid of its 1-ring
  CHECK(lap[2 * 5 + 2].norm() < 1e-12);

  // regular tetrahedron: residual_i = v_i - mean(others) = (4/3) v_i when
  // the vertices sum to zero
  std::vector<Vec3> tet = {Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1),
                           Vec3(-1, -1, 1)};
  std::vector<Vec3i> tf = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
  MeshTopology tt = build_topology(4, tf);
  auto tl = uniform_laplacian(tt, tet);
  for (int i = 0; i < 4; ++i) {
    Vec3 mean = Vec3::Zero();
    for (int j = 0; j < 4; ++j)
      if (j != i) mean += tet[j];
    mean /= 3.0;
    CHECK((tl[i] - (tet[i] - mean)).norm() < 1e-12);
    CHECK((tl[i] - 4.0 / 3.0 * tet[i]).norm() < 1e-12);
  }

  // translation invariance
  Rng rng(7);
  Vec3 t = rng.vec3(-3, 3);
  std::vector<Vec3> shifted = grid.vertices;
  for (Vec3& v : shifted) v += t;
  auto lap2 = uniform_laplacian(topo, shifted);
  for (size_t i = 0; i < lap.size(); ++i)
    CHECK((lap[i] - lap2[i]).norm() < 1e-12);

  // linearity
  std::vector<Vec3> x(grid.vertices.size()), y(grid.vertices.size());
  for (size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.vec3(-1, 1);
    y[i] = rng.vec3(-1, 1);
  }
  double a = 1.7, b = -0.4;
  std::vector<Vec3> combo(x.size());
  for (size_t i = 0; i < x.size(); ++i) combo[i] = a * x[i] + b * y[i];
  auto lx = uniform_laplacian(topo, x);
  auto ly = uniform_laplacian(topo, y);
  auto lc = uniform_laplacian(topo, combo);
  for (size_t i = 0; i < x.size(); ++i)
    CHECK((lc[i] - (a * lx[i] + b * ly[i])).norm() < 1e-9);

  // isolated vertex
  std::vector<Vec3i> one_face = {{0, 1, 2}};
  MeshTopology bad = build_topology(4, one_face);
  std::vector<Vec3> four(4, Vec3::Zero());
  CHECK_THROWS_AS(uniform_laplacian(bad, four), TopologyError);

  // vjp is the transpose: <L x, g> == <x, L^T g>
  std::vector<Vec3> g(x.size());
  for (size_t i = 0; i < g.size(); ++i) g[i] = rng.vec3(-1, 1);
  auto lt_g = uniform_laplacian_vjp(topo, g);
  double lhs = 0, rhs = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    lhs += lx[i].dot(g[i]);
    rhs += x[i].dot(lt_g[i]);
  }
  CHECK(testutil::rel_err(lhs, rhs) < 1e-12);
}

TEST_CASE("householder reflection") {
  SymmetryPlane plane;
  plane.normal = Vec3(1, 0, 0);
  auto r = householder_reflect(plane, {Vec3(2, 3, 4)});
  CHECK((r[0] - Vec3(-2, 3, 4)).norm() < 1e-12);

  Rng rng(11);
  plane.normal = rng.vec3(-1, 1).normalized();
  std::vector<Vec3> pts;
  for (int i = 0; i < 20; ++i) pts.push_back(rng.vec3(-2, 2));
  auto once = householder_reflect(plane, pts);
  auto twice = householder_reflect(plane, once);
  for (size_t i = 0; i < pts.size(); ++i)
    CHECK((twice[i] - pts[i]).norm() < 1e-12);

  // fixed points on the plane
  Vec3 in_plane = plane.normal.cross(Vec3(0.3, -0.9, 0.5)).normalized();
  auto fixed = householder_reflect(plane, {in_plane});
  CHECK((fixed[0] - in_plane).norm() < 1e-12);

  // isometry
  for (size_t i = 0; i < pts.size(); ++i)
    for (size_t j = i + 1; j < pts.size(); ++j)
      CHECK(std::abs((once[i] - once[j]).norm() - (pts[i] - pts[j]).norm()) <
            1e-9);

  plane.normal = Vec3(1, 1, 0);  // not unit
  CHECK_THROWS_AS(householder_reflect(plane, pts), ParameterError);
}

TEST_CASE("chamfer distance matches brute force and is symmetric") {
  CHECK(chamfer_distance({Vec3(0, 0, 0)}, {Vec3(1, 0, 0)}) ==
        doctest::Approx(1.0));
  Rng rng(3);
  std::vector<Vec3> a, b;
  for (int i = 0; i < 50; ++i) a.push_back(rng.vec3(-1, 1));
  for (int i = 0; i < 60; ++i) b.push_back(rng.vec3(-1, 1));
  CHECK(chamfer_distance(a, a) == doctest::Approx(0.0));

  auto brute = [](const std::vector<Vec3>& u, const std::vector<Vec3>& v) {
    double s = 0;
    for (const Vec3& p : u) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& q : v) best = std::min(best, (p - q).norm());
      s += best;
    }
    return s / double(u.size());
  };
  double expect = 0.5 * (brute(a, b) + brute(b, a));
  CHECK(testutil::rel_err(chamfer_distance(a, b), expect) < 1e-12);
  CHECK(chamfer_distance(a, b) == chamfer_distance(b, a));
  CHECK_THROWS_AS(chamfer_distance({}, b), ParameterError);

  // gradient check against finite differences
  std::vector<Vec3> ga, gb;
  chamfer_distance_grad(a, b, &ga, &gb);
  for (int trial = 0; trial < 5; ++trial) {
    int i = int(rng.uniform(0, double(a.size())));
    int k = int(rng.uniform(0, 3));
    auto f = [&](double x) {
      std::vector<Vec3> aa = a;
      aa[i][k] = x;
      return chamfer_distance(aa, b);
    };
    double fd = testutil::central_diff(f, a[i][k], 1e-6);
    CHECK(testutil::rel_err(ga[i][k], fd, 1e-9) < 1e-5);
  }
}

TEST_CASE("surface sampling: membership, area weighting, determinism") {
  Mesh tri;
  tri.vertices = {Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(0, 2, 0)};
  tri.faces = {{0, 1, 2}};
  tri.colors.assign(3, Vec3(0.5, 0.5, 0.5));
  auto pts = sample_surface(tri, 200, 42);
  for (const Vec3& p : pts) {
    CHECK(std::abs(p.z()) < 1e-12);
    CHECK(p.x() >= -1e-12);
    CHECK(p.y() >= -1e-12);
    CHECK(p.x() + p.y() <= 2 + 1e-12);
  }

  // area ratio 3:1
  Mesh two;
  two.vertices = {Vec3(0, 0, 0), Vec3(3, 0, 0), Vec3(0, 2, 0),
                  Vec3(10, 0, 0), Vec3(11, 0, 0), Vec3(10, 2, 0)};
  two.faces = {{0, 1, 2}, {3, 4, 5}};
  two.colors.assign(6, Vec3(0.5, 0.5, 0.5));
  double mean_big = 0;
  int n_seeds = 16;
  for (int seed = 0; seed < n_seeds; ++seed) {
    auto ss = sample_surface_indices(two.vertices, two.faces, 4000, seed);
    int big = 0;
    for (int f : ss.face) big += (f == 0);
    mean_big += big;
  }
  mean_big /= n_seeds;
  CHECK(mean_big > 3000 * 0.95);
  CHECK(mean_big < 3000 * 1.05);

  auto p1 = sample_surface(two, 100, 9);
  auto p2 = sample_surface(two, 100, 9);
  for (size_t i = 0; i < p1.size(); ++i) CHECK((p1[i] - p2[i]).norm() == 0.0);

  Mesh degenerate;
  degenerate.vertices = {Vec3(0, 0, 0), Vec3(0, 0, 0), Vec3(0, 0, 0)};
  degenerate.faces = {{0, 1, 2}};
  degenerate.colors.assign(3, Vec3(0.5, 0.5, 0.5));
  CHECK_THROWS_AS(sample_surface(degenerate, 10, 0), GeometryError);
  CHECK_THROWS_AS(sample_surface(tri, 0, 0), ParameterError);
}

TEST_CASE("point-to-surface chamfer") {
  Mesh ico = make_icosphere(2);
  CHECK(point_to_surface_chamfer(ico, ico, 2000) < 1e-9);

  Mesh scaled = ico;
  for (Vec3& v : scaled.vertices) v *= 1.01;
  double d = point_to_surface_chamfer(ico, scaled, 2000);
  CHECK(d == doctest::Approx(0.01).epsilon(0.10));

  // cross-check against dense point-sampled chamfer
  Mesh other = make_icosphere(2);
  for (Vec3& v : other.vertices) v = v * 1.05 + Vec3(0.02, 0, 0);
  double surf = point_to_surface_chamfer(ico, other, 4000);
  double dense = chamfer_distance(sample_surface(ico, 20000, 1),
                                  sample_surface(other, 20000, 2));
  CHECK(testutil::rel_err(surf, dense) < 0.05);
}

TEST_CASE("obj roundtrip with vertex colors") {
  Mesh m = make_icosphere(1);
  Rng rng(5);
  for (Vec3& c : m.colors) c = Vec3(rng.uniform(0, 1), rng.uniform(0, 1),
                                    rng.uniform(0, 1));
  std::string path = "test_mesh_roundtrip.obj";
  write_obj(path, m);
  Mesh r = read_obj(path);
  REQUIRE(r.vertex_count() == m.vertex_count());
  REQUIRE(r.face_count() == m.face_count());
  for (int i = 0; i < m.vertex_count(); ++i) {
    CHECK((r.vertices[i] - m.vertices[i]).norm() == 0.0);
    CHECK((r.colors[i] - m.colors[i]).norm() == 0.0);
  }
  for (int i = 0; i < m.face_count(); ++i)
    CHECK((r.faces[i] - m.faces[i]).norm() == 0);
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_obj("does_not_exist.obj"), InputError);
}

TEST_CASE("self-intersection detector") {
  Mesh ico = make_icosphere(1);
  CHECK(!has_self_intersections(ico.vertices, ico.faces));

  // two crossing triangles, disjoint vertex sets
  std::vector<Vec3> v = {Vec3(-1, 0, 0), Vec3(1, 0, 0),  Vec3(0, 2, 0),
                         Vec3(0, 1, -1), Vec3(0, 1, 1),  Vec3(0, -1, 0)};
  std::vector<Vec3i> f = {{0, 1, 2}, {3, 4, 5}};
  CHECK(has_self_intersections(v, f));
}

TEST_CASE("geom primitives: quaternions") {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    Vec4 q = rng.unit_quat();
    Vec3 p = rng.vec3(-2, 2);
    Mat3 r = quat_to_rotation(q);
    CHECK((quat_rotate(q, p) - r * p).norm() < 1e-12);
    CHECK(std::abs(r.determinant() - 1.0) < 1e-12);

    // vjp of rotate against finite differences through normalization
    Vec4 q_raw = q * rng.uniform(0.5, 2.0);
    Vec3 g = rng.vec3(-1, 1);
    Vec3 p_bar = Vec3::Zero();
    Vec4 q_unit_bar = Vec4::Zero();
    Vec4 qn = quat_normalize(q_raw);
    quat_rotate_vjp(qn, p, g, &p_bar, &q_unit_bar);
    Vec4 q_raw_bar = quat_normalize_vjp(q_raw, q_unit_bar);
    for (int k = 0; k < 4; ++k) {
      auto fn = [&](double x) {
        Vec4 qq = q_raw;
        qq[k] = x;
        return quat_rotate(quat_normalize(qq), p).dot(g);
      };
      double fd = testutil::central_diff(fn, q_raw[k], 1e-6);
      CHECK(testutil::rel_err(q_raw_bar[k], fd, 1e-8) < 1e-5);
    }
    for (int k = 0; k < 3; ++k) {
      auto fn = [&](double x) {
        Vec3 pp = p;
        pp[k] = x;
        return quat_rotate(qn, pp).dot(g);
      };
      double fd = testutil::central_diff(fn, p[k], 1e-6);
      CHECK(testutil::rel_err(p_bar[k], fd, 1e-8) < 1e-5);
    }
  }
}

TEST_CASE("geom primitives: 2d signed distance and barycentrics vjp") {
  Rng rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    Vec2 a(rng.uniform(-1, 1), rng.uniform(-1, 1));
    Vec2 b(rng.uniform(-1, 1), rng.uniform(-1, 1));
    Vec2 c(rng.uniform(-1, 1), rng.uniform(-1, 1));
    Vec2 p(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
    if (std::abs((b - a).x() * (c - a).y() - (b - a).y() * (c - a).x()) < 0.05)
      continue;  // skip nearly degenerate triangles

    SignedDist2D sd = signed_dist_sq_2d(p, a, b, c);
    Vec2 pb = Vec2::Zero(), ab = Vec2::Zero(), bb = Vec2::Zero(),
         cb = Vec2::Zero();
    signed_dist_sq_2d_vjp(sd, p, a, b, c, 1.0, &pb, &ab, &bb, &cb);
    Vec2* grads[4] = {&pb, &ab, &bb, &cb};
    Vec2 pts[4] = {p, a, b, c};
    for (int which = 0; which < 4; ++which) {
      for (int k = 0; k < 2; ++k) {
        auto fn = [&](double x) {
          Vec2 q[4] = {p, a, b, c};
          q[which][k] = x;
          return signed_dist_sq_2d(q[0], q[1], q[2], q[3]).value;
        };
        double fd = testutil::central_diff(fn, pts[which][k], 1e-7);
        CHECK(testutil::rel_err((*grads[which])[k], fd, 1e-5) < 1e-3);
      }
    }

    Bary2D by = barycentric_2d(p, a, b, c);
    CHECK(std::abs(by.lambda.sum() - 1.0) < 1e-12);
    Vec3 gl(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    Vec2 pb2 = Vec2::Zero(), ab2 = Vec2::Zero(), bb2 = Vec2::Zero(),
         cb2 = Vec2::Zero();
    barycentric_2d_vjp(by, p, a, b, c, gl, &pb2, &ab2, &bb2, &cb2);
    Vec2* grads2[4] = {&pb2, &ab2, &bb2, &cb2};
    for (int which = 0; which < 4; ++which) {
      for (int k = 0; k < 2; ++k) {
        auto fn = [&](double x) {
          Vec2 q[4] = {p, a, b, c};
          q[which][k] = x;
          return barycentric_2d(q[0], q[1], q[2], q[3]).lambda.dot(gl);
        };
        double fd = testutil::central_diff(fn, pts[which][k], 1e-7);
        CHECK(testutil::rel_err((*grads2[which])[k], fd, 1e-5) < 1e-3);
      }
    }
  }
}

TEST_CASE("kdtree and bvh agree with brute force") {
  Rng rng(23);
  std::vector<Vec3> pts;
  for (int i = 0; i < 300; ++i) pts.push_back(rng.vec3(-1, 1));
  KdTree tree(pts);
  for (int trial = 0; trial < 50; ++trial) {
    Vec3 q = rng.vec3(-1.2, 1.2);
    double d2;
    int got = tree.nearest(q, &d2);
    int want = 0;
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < pts.size(); ++i) {
      double d = (pts[i] - q).squaredNorm();
      if (d < best) {
        best = d;
        want = int(i);
      }
    }
    CHECK(got == want);
    CHECK(d2 == doctest::Approx(best));
  }

  Mesh ico = make_icosphere(2);
  TriangleBvh bvh(ico.vertices, ico.faces);
  for (int trial = 0; trial < 50; ++trial) {
    Vec3 q = rng.vec3(-1.5, 1.5);
    auto sp = bvh.closest_point(q);
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3i& f : ico.faces) {
      auto r = closest_point_triangle(q, ico.vertices[f[0]],
                                      ico.vertices[f[1]], ico.vertices[f[2]]);
      best = std::min(best, r.dist_sq);
    }
    CHECK(sp.dist_sq == doctest::Approx(best));

    // parity: inside iff odd crossings (skip the chord band near the surface)
    Vec3 dir = Vec3(0.3123, 0.5521, 0.7719).normalized();
    bool inside = bvh.count_ray_crossings(q, dir) % 2 == 1;
    if (q.norm() < 0.95) CHECK(inside);
    if (q.norm() > 1.01) CHECK(!inside);
  }
}
