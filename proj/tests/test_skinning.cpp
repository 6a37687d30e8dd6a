#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lasr/skinning.h"
#include "test_util.h"

using namespace lasr;
using testutil::Rng;

namespace {

SkinningModel random_model(int b, Rng& rng) {
  SkinningModel m;
  for (int i = 0; i < b; ++i) {
    m.centers.push_back(rng.vec3(-1, 1));
    Eigen::Matrix<double, 6, 1> raw;
    for (int k = 0; k < 6; ++k) raw[k] = rng.uniform(-0.5, 0.5);
    m.precision_raw.push_back(raw);
  }
  return m;
}

// Direct scalar evaluation of the Gaussian-mixture weights: unnormalized
// densities then per-column normalization, no log-domain tricks.
Eigen::MatrixXd oracle_weights(const SkinningModel& m,
                               const std::vector<Vec3>& verts,
                               double log_shift = 0.0) {
  int b = m.bone_count(), n = int(verts.size());
  Eigen::MatrixXd w(b, n);
  for (int i = 0; i < n; ++i) {
    double denom = 0;
    for (int k = 0; k < b; ++k) {
      Vec3 d = verts[i] - m.centers[k];
      double e = std::exp(-0.5 * d.dot(m.precision(k) * d) + log_shift);
      w(k, i) = e;
      denom += e;
    }
    for (int k = 0; k < b; ++k) w(k, i) /= denom;
  }
  return w;
}

}  // namespace

TEST_CASE("skin weights: single component, symmetry, oracle") {
  Rng rng(1);
  std::vector<Vec3> verts;
  for (int i = 0; i < 10; ++i) verts.push_back(rng.vec3(-1, 1));

  SkinningModel one = random_model(1, rng);
  Eigen::MatrixXd w1 = skin_weights(one, verts);
  for (int i = 0; i < 10; ++i) CHECK(w1(0, i) == doctest::Approx(1.0));

  SkinningModel two;
  two.centers = {Vec3(-1, 0, 0), Vec3(1, 0, 0)};
  double raw_one = softplus_inverse(1.0);
  Eigen::Matrix<double, 6, 1> iso;
  iso << raw_one, raw_one, raw_one, 0, 0, 0;
  two.precision_raw = {iso, iso};
  std::vector<Vec3> mid = {Vec3(0, 0.3, -0.7)};
  Eigen::MatrixXd w2 = skin_weights(two, mid);
  CHECK(w2(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(w2(1, 0) == doctest::Approx(0.5).epsilon(1e-12));

  SkinningModel three = random_model(3, rng);
  Eigen::MatrixXd w3 = skin_weights(three, verts);
  Eigen::MatrixXd w3o = oracle_weights(three, verts);
  // the normalizer absorbs any constant shift of the log densities
  Eigen::MatrixXd w3s = oracle_weights(three, verts, 3.7);
  CHECK((w3 - w3o).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((w3 - w3s).cwiseAbs().maxCoeff() < 1e-12);

  // columns sum to one
  for (int i = 0; i < w3.cols(); ++i)
    CHECK(std::abs(w3.col(i).sum() - 1.0) < 1e-9);

  // distant vertex: log-domain evaluation keeps columns stochastic
  std::vector<Vec3> far = {Vec3(300, -250, 400)};
  Eigen::MatrixXd wf = skin_weights(three, far);
  CHECK(std::abs(wf.col(0).sum() - 1.0) < 1e-9);
  for (int k = 0; k < 3; ++k) CHECK(wf(k, 0) >= 0.0);
}

TEST_CASE("skin weights gradients match finite differences") {
  Rng rng(2);
  std::vector<Vec3> verts;
  for (int i = 0; i < 6; ++i) verts.push_back(rng.vec3(-1, 1));
  SkinningModel model = random_model(3, rng);

  // random linear functional of W as the scalar loss
  Eigen::MatrixXd gw(3, 6);
  for (int i = 0; i < gw.size(); ++i) gw(i) = rng.uniform(-1, 1);
  auto loss = [&](const SkinningModel& m, const std::vector<Vec3>& v) {
    return (skin_weights(m, v).array() * gw.array()).sum();
  };

  Eigen::MatrixXd w = skin_weights(model, verts);
  SkinWeightsGrads g = skin_weights_vjp(model, verts, w, gw);

  for (int b = 0; b < 3; ++b) {
    for (int k = 0; k < 3; ++k) {
      auto fn = [&](double x) {
        SkinningModel m = model;
        m.centers[b][k] = x;
        return loss(m, verts);
      };
      double fd = testutil::central_diff(fn, model.centers[b][k]);
      CHECK(testutil::rel_err(g.centers_bar[b][k], fd, 1e-6) < 1e-3);
    }
    for (int k = 0; k < 6; ++k) {
      auto fn = [&](double x) {
        SkinningModel m = model;
        m.precision_raw[b][k] = x;
        return loss(m, verts);
      };
      double fd = testutil::central_diff(fn, model.precision_raw[b][k]);
      CHECK(testutil::rel_err(g.precision_raw_bar[b][k], fd, 1e-6) < 1e-3);
    }
  }
  for (int i = 0; i < 6; ++i) {
    for (int k = 0; k < 3; ++k) {
      auto fn = [&](double x) {
        std::vector<Vec3> v = verts;
        v[i][k] = x;
        return loss(model, v);
      };
      double fd = testutil::central_diff(fn, verts[i][k]);
      CHECK(testutil::rel_err(g.rest_bar[i][k], fd, 1e-6) < 1e-3);
    }
  }
}

TEST_CASE("lbs: identity, rigid root, one-hot bones") {
  Rng rng(3);
  std::vector<Vec3> rest;
  for (int i = 0; i < 8; ++i) rest.push_back(rng.vec3(-1, 1));

  std::vector<BonePose> bones(2);
  Eigen::MatrixXd w = Eigen::MatrixXd::Constant(2, 8, 0.5);
  BonePose id;
  auto out = lbs_apply(rest, w, bones, id);
  for (int i = 0; i < 8; ++i) CHECK((out[i] - rest[i]).norm() < 1e-12);

  BonePose root;
  root.rotation = rng.unit_quat();
  root.translation = rng.vec3(-2, 2);
  auto out_rigid = lbs_apply(rest, w, bones, root);
  Mat3 r = quat_to_rotation(root.rotation);
  for (int i = 0; i < 8; ++i)
    CHECK((out_rigid[i] - (r * rest[i] + root.translation)).norm() < 1e-12);

  // identical transform on every bone equals one rigid motion
  BonePose g;
  g.rotation = rng.unit_quat();
  g.translation = rng.vec3(-1, 1);
  std::vector<BonePose> same = {g, g};
  Eigen::MatrixXd wr(2, 8);
  for (int i = 0; i < 8; ++i) {
    double a = rng.uniform(0, 1);
    wr(0, i) = a;
    wr(1, i) = 1 - a;
  }
  auto blended = lbs_apply(rest, wr, same, id);
  Mat3 rg = quat_to_rotation(g.rotation);
  for (int i = 0; i < 8; ++i)
    CHECK((blended[i] - (rg * rest[i] + g.translation)).norm() < 1e-12);

  // near-one-hot weights from tight Gaussians: each vertex follows its bone
  SkinningModel tight;
  tight.centers = {Vec3(-1, 0, 0), Vec3(1, 0, 0)};
  double raw = softplus_inverse(30.0);  // stddev 1/30
  Eigen::Matrix<double, 6, 1> t;
  t << raw, raw, raw, 0, 0, 0;
  tight.precision_raw = {t, t};
  std::vector<Vec3> pts = {Vec3(-1, 0.05, 0), Vec3(1, -0.02, 0.03)};
  Eigen::MatrixXd wt = skin_weights(tight, pts);
  std::vector<BonePose> two(2);
  two[0].rotation = rng.unit_quat();
  two[0].translation = Vec3(0, 0, 1);
  two[1].rotation = rng.unit_quat();
  two[1].translation = Vec3(0, 1, 0);
  auto posed = lbs_apply(pts, wt, two, id);
  CHECK((posed[0] - two[0].apply(pts[0])).norm() < 1e-6);
  CHECK((posed[1] - two[1].apply(pts[1])).norm() < 1e-6);
}

TEST_CASE("lbs gradients match finite differences") {
  Rng rng(4);
  int n = 5, b = 2;
  std::vector<Vec3> rest;
  for (int i = 0; i < n; ++i) rest.push_back(rng.vec3(-1, 1));
  std::vector<BonePose> bones(b);
  for (auto& bp : bones) {
    bp.rotation = rng.unit_quat();
    bp.translation = rng.vec3(-1, 1);
  }
  Eigen::MatrixXd w(b, n);
  for (int i = 0; i < n; ++i) {
    double a = rng.uniform(0.1, 0.9);
    w(0, i) = a;
    w(1, i) = 1 - a;
  }
  std::vector<Vec3> g(n);
  for (auto& v : g) v = rng.vec3(-1, 1);

  auto loss = [&](const std::vector<Vec3>& r,
                  const std::vector<BonePose>& bs,
                  const Eigen::MatrixXd& ww) {
    auto out = lbs_object(r, ww, bs);
    double s = 0;
    for (int i = 0; i < n; ++i) s += out[i].dot(g[i]);
    return s;
  };

  LbsObjectGrads lg = lbs_object_vjp(rest, w, bones, g);

  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) {
      auto fn = [&](double x) {
        auto r = rest;
        r[i][k] = x;
        return loss(r, bones, w);
      };
      CHECK(testutil::rel_err(lg.rest_bar[i][k],
                              testutil::central_diff(fn, rest[i][k]),
                              1e-6) < 1e-3);
    }
  for (int bi = 0; bi < b; ++bi) {
    for (int k = 0; k < 3; ++k) {
      auto fn = [&](double x) {
        auto bs = bones;
        bs[bi].translation[k] = x;
        return loss(rest, bs, w);
      };
      CHECK(testutil::rel_err(lg.bone_trans_bar[bi][k],
                              testutil::central_diff(fn, bones[bi].translation[k]),
                              1e-6) < 1e-3);
    }
    // quaternion adjoints are on the unit quaternion; perturb raw + normalize
    Vec4 raw = bones[bi].rotation * 1.3;
    Vec4 raw_bar = quat_normalize_vjp(raw, lg.bone_rot_bar[bi]);
    for (int k = 0; k < 4; ++k) {
      auto fn = [&](double x) {
        auto bs = bones;
        Vec4 q = raw;
        q[k] = x;
        bs[bi].rotation = quat_normalize(q);
        return loss(rest, bs, w);
      };
      CHECK(testutil::rel_err(raw_bar[k],
                              testutil::central_diff(fn, raw[k]), 1e-6) < 1e-3);
    }
  }
  for (int bi = 0; bi < b; ++bi)
    for (int i = 0; i < n; ++i) {
      auto fn = [&](double x) {
        Eigen::MatrixXd ww = w;
        ww(bi, i) = x;
        return loss(rest, bones, ww);
      };
      CHECK(testutil::rel_err(lg.weights_bar(bi, i),
                              testutil::central_diff(fn, w(bi, i)), 1e-6) <
            1e-3);
    }
}

TEST_CASE("parameter count formula") {
  CHECK(parameter_count(162, 8, 15) == 1385);
  CHECK(parameter_count(162, 8, 15) == 486 + 720 + 72 + 90 + 17);
  // rigid reduction: B = 0 leaves 3N + 6T + (T+2)
  CHECK(parameter_count(42, 0, 10) == 3 * 42 + 6 * 10 + 12);
  // doubling T doubles the T-linear portion exactly
  int64_t n = 100, b = 4, t = 12;
  int64_t base = parameter_count(n, b, t) - 3 * n - 9 * b - 2;
  int64_t twice = parameter_count(n, b, 2 * t) - 3 * n - 9 * b - 2;
  CHECK(twice == 2 * base);
  CHECK_THROWS_AS(parameter_count(0, 1, 1), ParameterError);
}
