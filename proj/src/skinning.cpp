#include "lasr/skinning.h"

#include <cmath>

namespace lasr {

Mat3 SkinningModel::precision_factor(int b) const {
  const auto& r = precision_raw[b];
  Mat3 l = Mat3::Zero();
  l(0, 0) = softplus(r[0]);
  l(1, 1) = softplus(r[1]);
  l(2, 2) = softplus(r[2]);
  l(1, 0) = r[3];
  l(2, 0) = r[4];
  l(2, 1) = r[5];
  return l;
}

Mat3 SkinningModel::precision(int b) const {
  Mat3 l = precision_factor(b);
  return l * l.transpose() + kPrecisionJitter * Mat3::Identity();
}

SkinningModel SkinningModel::isotropic(const std::vector<Vec3>& centers,
                                       double radius) {
  if (radius <= 0) throw ParameterError("isotropic radius must be positive");
  SkinningModel m;
  m.centers = centers;
  Eigen::Matrix<double, 6, 1> raw;
  double d = softplus_inverse(1.0 / radius);
  raw << d, d, d, 0, 0, 0;
  m.precision_raw.assign(centers.size(), raw);
  return m;
}

Eigen::MatrixXd skin_weights(const SkinningModel& model,
                             const std::vector<Vec3>& rest_vertices) {
  int b_count = model.bone_count();
  int n = int(rest_vertices.size());
  if (n < 1) throw ParameterError("skin_weights: empty vertex set");
  if (int(model.precision_raw.size()) != b_count)
    throw ParameterError("skin_weights: centers/precisions size mismatch");
  Eigen::MatrixXd w(b_count, n);
  if (b_count == 0) return w;

  std::vector<Mat3> q(b_count);
  for (int b = 0; b < b_count; ++b) q[b] = model.precision(b);

  for (int i = 0; i < n; ++i) {
    double max_logit = -std::numeric_limits<double>::infinity();
    for (int b = 0; b < b_count; ++b) {
      Vec3 d = rest_vertices[i] - model.centers[b];
      double logit = -0.5 * d.dot(q[b] * d);
      w(b, i) = logit;
      max_logit = std::max(max_logit, logit);
    }
    double denom = 0;
    for (int b = 0; b < b_count; ++b) {
      w(b, i) = std::exp(w(b, i) - max_logit);
      denom += w(b, i);
    }
    w.col(i) /= denom;
  }
  return w;
}

SkinWeightsGrads skin_weights_vjp(const SkinningModel& model,
                                  const std::vector<Vec3>& rest_vertices,
                                  const Eigen::MatrixXd& weights,
                                  const Eigen::MatrixXd& weights_bar) {
  int b_count = model.bone_count();
  int n = int(rest_vertices.size());
  SkinWeightsGrads g;
  g.centers_bar.assign(b_count, Vec3::Zero());
  g.precision_raw_bar.assign(b_count, Eigen::Matrix<double, 6, 1>::Zero());
  g.rest_bar.assign(n, Vec3::Zero());
  if (b_count == 0) return g;

  std::vector<Mat3> q(b_count), l(b_count);
  std::vector<Mat3> q_bar(b_count, Mat3::Zero());
  for (int b = 0; b < b_count; ++b) {
    q[b] = model.precision(b);
    l[b] = model.precision_factor(b);
  }

  for (int i = 0; i < n; ++i) {
    // Softmax adjoint: logit_bar = w .* (w_bar - dot(w_bar, w)).
    double inner = weights.col(i).dot(weights_bar.col(i));
    for (int b = 0; b < b_count; ++b) {
      double logit_bar = weights(b, i) * (weights_bar(b, i) - inner);
      if (logit_bar == 0) continue;
      Vec3 d = rest_vertices[i] - model.centers[b];
      Vec3 qd = q[b] * d;
      g.rest_bar[i] += logit_bar * (-qd);
      g.centers_bar[b] += logit_bar * qd;
      q_bar[b] += logit_bar * (-0.5) * (d * d.transpose());
    }
  }

  // Q = L L^T + jitter: L_bar = (Q_bar + Q_bar^T) L, then map the diagonal
  // through the softplus derivative.
  for (int b = 0; b < b_count; ++b) {
    Mat3 l_bar = (q_bar[b] + q_bar[b].transpose()) * l[b];
    const auto& raw = model.precision_raw[b];
    auto& rb = g.precision_raw_bar[b];
    rb[0] += l_bar(0, 0) * sigmoid(raw[0]);
    rb[1] += l_bar(1, 1) * sigmoid(raw[1]);
    rb[2] += l_bar(2, 2) * sigmoid(raw[2]);
    rb[3] += l_bar(1, 0);
    rb[4] += l_bar(2, 0);
    rb[5] += l_bar(2, 1);
  }
  return g;
}

std::vector<Vec3> lbs_object(const std::vector<Vec3>& rest_vertices,
                             const Eigen::MatrixXd& weights,
                             const std::vector<BonePose>& bones) {
  int b_count = int(bones.size());
  int n = int(rest_vertices.size());
  if (b_count == 0) return rest_vertices;
  if (weights.rows() != b_count || weights.cols() != n)
    throw ParameterError("lbs_object: weight matrix shape mismatch");

  std::vector<Mat3> rot(b_count);
  for (int b = 0; b < b_count; ++b) rot[b] = quat_to_rotation(bones[b].rotation);

  std::vector<Vec3> out(n);
  for (int i = 0; i < n; ++i) {
    Mat3 lin = Mat3::Zero();
    Vec3 tr = Vec3::Zero();
    for (int b = 0; b < b_count; ++b) {
      double w = weights(b, i);
      lin += w * rot[b];
      tr += w * bones[b].translation;
    }
    out[i] = lin * rest_vertices[i] + tr;
  }
  return out;
}

LbsObjectGrads lbs_object_vjp(const std::vector<Vec3>& rest_vertices,
                              const Eigen::MatrixXd& weights,
                              const std::vector<BonePose>& bones,
                              const std::vector<Vec3>& posed_bar) {
  int b_count = int(bones.size());
  int n = int(rest_vertices.size());
  LbsObjectGrads g;
  g.rest_bar.assign(n, Vec3::Zero());
  g.weights_bar = Eigen::MatrixXd::Zero(b_count, n);
  g.bone_rot_bar.assign(b_count, Vec4::Zero());
  g.bone_trans_bar.assign(b_count, Vec3::Zero());
  if (b_count == 0) {
    g.rest_bar = posed_bar;
    return g;
  }

  std::vector<Mat3> rot(b_count);
  for (int b = 0; b < b_count; ++b) rot[b] = quat_to_rotation(bones[b].rotation);
  std::vector<Mat3> rot_bar(b_count, Mat3::Zero());

  for (int i = 0; i < n; ++i) {
    const Vec3& pb = posed_bar[i];
    Mat3 lin = Mat3::Zero();
    for (int b = 0; b < b_count; ++b) {
      double w = weights(b, i);
      lin += w * rot[b];
      // weight adjoint: pb . (R_b v + T_b)
      g.weights_bar(b, i) =
          pb.dot(rot[b] * rest_vertices[i] + bones[b].translation);
      rot_bar[b] += w * pb * rest_vertices[i].transpose();
      g.bone_trans_bar[b] += w * pb;
    }
    g.rest_bar[i] += lin.transpose() * pb;
  }

  // Rotation-matrix adjoints -> unit-quaternion adjoints, column by column.
  for (int b = 0; b < b_count; ++b) {
    for (int k = 0; k < 3; ++k) {
      Vec3 ek = Vec3::Zero();
      ek[k] = 1;
      quat_rotate_vjp(bones[b].rotation, ek, rot_bar[b].col(k), nullptr,
                      &g.bone_rot_bar[b]);
    }
  }
  return g;
}

std::vector<Vec3> rigid_apply(const BonePose& pose,
                              const std::vector<Vec3>& points) {
  Mat3 r = quat_to_rotation(pose.rotation);
  std::vector<Vec3> out(points.size());
  for (size_t i = 0; i < points.size(); ++i)
    out[i] = r * points[i] + pose.translation;
  return out;
}

void rigid_apply_vjp(const BonePose& pose, const std::vector<Vec3>& points,
                     const std::vector<Vec3>& out_bar,
                     std::vector<Vec3>* points_bar, Vec4* rot_bar,
                     Vec3* trans_bar) {
  Mat3 r = quat_to_rotation(pose.rotation);
  Mat3 r_bar = Mat3::Zero();
  for (size_t i = 0; i < points.size(); ++i) {
    const Vec3& ob = out_bar[i];
    if (points_bar) (*points_bar)[i] += r.transpose() * ob;
    r_bar += ob * points[i].transpose();
    if (trans_bar) *trans_bar += ob;
  }
  if (rot_bar) {
    for (int k = 0; k < 3; ++k) {
      Vec3 ek = Vec3::Zero();
      ek[k] = 1;
      quat_rotate_vjp(pose.rotation, ek, r_bar.col(k), nullptr, rot_bar);
    }
  }
}

std::vector<Vec3> lbs_apply(const std::vector<Vec3>& rest_vertices,
                            const Eigen::MatrixXd& weights,
                            const std::vector<BonePose>& bones,
                            const BonePose& root) {
  return rigid_apply(root, lbs_object(rest_vertices, weights, bones));
}

int64_t parameter_count(int64_t n, int64_t b, int64_t t) {
  if (n < 1 || t < 1 || b < 0)
    throw ParameterError("parameter_count: need N,T >= 1 and B >= 0");
  return 3 * n + 6 * b * t + 9 * b + 6 * t + (t + 2);
}

}  // namespace lasr
