#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lasr/camera.h"
#include "test_util.h"

using namespace lasr;
using testutil::Rng;

TEST_CASE("projection formula and clipping") {
  Intrinsics k;
  k.focal = 1;
  k.principal = Vec2(0, 0);
  auto p = project(k, {Vec3(0, 0, 1)});
  CHECK(p.pixel[0].norm() < 1e-15);
  CHECK(p.depth[0] == 1.0);
  CHECK(p.valid[0]);

  k.focal = 2;
  k.principal = Vec2(128, 128);
  auto q = project(k, {Vec3(1, 1, 2)});
  CHECK((q.pixel[0] - Vec2(129, 129)).norm() < 1e-12);

  // joint scaling of (X,Y,Z) leaves the pixel unchanged
  Rng rng(1);
  Vec3 pt = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1, 3));
  auto a = project(k, {pt});
  auto b = project(k, {2.5 * pt});
  CHECK((a.pixel[0] - b.pixel[0]).norm() < 1e-12);

  // behind the near plane: flagged, not thrown
  auto c = project(k, {Vec3(0, 0, -1)});
  CHECK(!c.valid[0]);

  Intrinsics bad;
  bad.focal = -1;
  CHECK_THROWS_AS(project(bad, {pt}), ParameterError);
}

TEST_CASE("clip conventions roundtrip") {
  for (int w : {8, 256}) {
    Vec2 p(3.25, 5.5);
    Vec2 c = pixel_to_clip(p, w, w);
    Vec2 back = clip_to_pixel(c, w, w);
    CHECK((back - p).norm() < 1e-12);
  }
  // image extent maps to [-1, 1]
  CHECK(pixel_to_clip(Vec2(-0.5, -0.5), 64, 64).x() == doctest::Approx(-1.0));
  CHECK(pixel_to_clip(Vec2(63.5, 63.5), 64, 64).y() == doctest::Approx(1.0));
}

TEST_CASE("projection gradients match finite differences") {
  Rng rng(2);
  Intrinsics k;
  k.focal = 300;
  k.principal = Vec2(127.5, 127.5);
  std::vector<Vec3> pts;
  for (int i = 0; i < 5; ++i)
    pts.push_back(Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1),
                       rng.uniform(2, 4)));
  std::vector<Vec2> gpix(5);
  std::vector<double> gdepth(5);
  for (int i = 0; i < 5; ++i) {
    gpix[i] = Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1));
    gdepth[i] = rng.uniform(-1, 1);
  }
  auto loss = [&](const Intrinsics& kk, const std::vector<Vec3>& ps) {
    auto pr = project(kk, ps);
    double s = 0;
    for (int i = 0; i < 5; ++i)
      s += pr.pixel[i].dot(gpix[i]) + pr.depth[i] * gdepth[i];
    return s;
  };
  auto pr = project(k, pts);
  ProjectionGrads g = project_vjp(k, pts, pr, gpix, &gdepth);

  auto fn_f = [&](double x) {
    Intrinsics kk = k;
    kk.focal = x;
    return loss(kk, pts);
  };
  CHECK(testutil::rel_err(g.focal_bar, testutil::central_diff(fn_f, k.focal)) <
        1e-3);
  for (int kk = 0; kk < 2; ++kk) {
    auto fn_p = [&](double x) {
      Intrinsics k2 = k;
      k2.principal[kk] = x;
      return loss(k2, pts);
    };
    CHECK(testutil::rel_err(g.principal_bar[kk],
                            testutil::central_diff(fn_p, k.principal[kk])) <
          1e-3);
  }
  for (int i = 0; i < 5; ++i)
    for (int d = 0; d < 3; ++d) {
      auto fn = [&](double x) {
        auto ps = pts;
        ps[i][d] = x;
        return loss(k, ps);
      };
      CHECK(testutil::rel_err(g.points_bar[i][d],
                              testutil::central_diff(fn, pts[i][d]), 1e-6) <
            1e-3);
    }
}

TEST_CASE("correspondence flow: static, translation, zoom") {
  Intrinsics k;
  k.focal = 100;
  k.principal = Vec2(0, 0);
  Rng rng(3);
  std::vector<Vec3> pts;
  for (int i = 0; i < 6; ++i)
    pts.push_back(Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1),
                       rng.uniform(2, 4)));

  auto zero = correspondence_flow(k, k, pts, pts);
  for (const Vec2& f : zero.flow) CHECK(f.norm() < 1e-12);

  // pure image-plane translation at constant depth
  double depth = 3.0, d = 0.25;
  std::vector<Vec3> at_t, at_t1;
  for (int i = 0; i < 6; ++i) {
    Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), depth);
    at_t.push_back(p);
    at_t1.push_back(p + Vec3(d, 0, 0));
  }
  auto tr = correspondence_flow(k, k, at_t, at_t1);
  for (const Vec2& f : tr.flow)
    CHECK((f - Vec2(k.focal * d / depth, 0)).norm() < 1e-9);

  // doubling the focal length doubles projected positions
  Intrinsics k2 = k;
  k2.focal = 2 * k.focal;
  auto zm = correspondence_flow(k, k2, pts, pts);
  auto pr = project(k, pts);
  for (size_t i = 0; i < pts.size(); ++i)
    CHECK((zm.flow[i] - pr.pixel[i]).norm() < 1e-9);

  // forward/backward consistency on identical surface points
  std::vector<Vec3> moved;
  for (const Vec3& p : pts) moved.push_back(p + Vec3(0.1, -0.2, 0.3));
  auto fwd = correspondence_flow(k, k2, pts, moved);
  auto bwd = correspondence_flow(k2, k, moved, pts);
  for (size_t i = 0; i < pts.size(); ++i)
    CHECK((fwd.flow[i] + bwd.flow[i]).norm() < 1e-9);

  // clipped endpoint invalidates the sample
  std::vector<Vec3> behind = pts;
  behind[2].z() = -1;
  auto cf = correspondence_flow(k, k, pts, behind);
  CHECK(!cf.valid[2]);
  CHECK(cf.valid[0]);
}

TEST_CASE("correspondence flow gradients") {
  Rng rng(4);
  Intrinsics ka, kb;
  ka.focal = 250;
  ka.principal = Vec2(3, -2);
  kb.focal = 300;
  kb.principal = Vec2(-1, 4);
  std::vector<Vec3> pa, pb;
  for (int i = 0; i < 4; ++i) {
    pa.push_back(Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1),
                      rng.uniform(2, 4)));
    pb.push_back(pa.back() + rng.vec3(-0.3, 0.3));
  }
  std::vector<Vec2> gf(4);
  for (auto& v : gf) v = Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1));

  auto loss = [&](const Intrinsics& k1, const Intrinsics& k2,
                  const std::vector<Vec3>& p1, const std::vector<Vec3>& p2) {
    auto fr = correspondence_flow(k1, k2, p1, p2);
    double s = 0;
    for (int i = 0; i < 4; ++i) s += fr.flow[i].dot(gf[i]);
    return s;
  };
  FlowGrads g = correspondence_flow_vjp(ka, kb, pa, pb, gf);

  auto fn_fa = [&](double x) {
    Intrinsics k = ka;
    k.focal = x;
    return loss(k, kb, pa, pb);
  };
  CHECK(testutil::rel_err(g.at_t.focal_bar,
                          testutil::central_diff(fn_fa, ka.focal)) < 1e-3);
  auto fn_fb = [&](double x) {
    Intrinsics k = kb;
    k.focal = x;
    return loss(ka, k, pa, pb);
  };
  CHECK(testutil::rel_err(g.at_t1.focal_bar,
                          testutil::central_diff(fn_fb, kb.focal)) < 1e-3);
  for (int i = 0; i < 4; ++i)
    for (int d = 0; d < 3; ++d) {
      auto fn_a = [&](double x) {
        auto p = pa;
        p[i][d] = x;
        return loss(ka, kb, p, pb);
      };
      CHECK(testutil::rel_err(g.at_t.points_bar[i][d],
                              testutil::central_diff(fn_a, pa[i][d]), 1e-6) <
            1e-3);
      auto fn_b = [&](double x) {
        auto p = pb;
        p[i][d] = x;
        return loss(ka, kb, pa, p);
      };
      CHECK(testutil::rel_err(g.at_t1.points_bar[i][d],
                              testutil::central_diff(fn_b, pb[i][d]), 1e-6) <
            1e-3);
    }
}
