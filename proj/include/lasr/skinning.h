#pragma once

#include "lasr/core.h"
#include "lasr/geom.h"

#include <Eigen/Dense>

#include <vector>

namespace lasr {

// Rigid transform parameterized by a unit quaternion (w,x,y,z) plus
// translation. Raw optimizer vectors are renormalized onto the unit sphere
// after every step; all math here assumes the quaternion is unit.
struct BonePose {
  Vec4 rotation = Vec4(1, 0, 0, 0);
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const {
    return quat_rotate(rotation, p) + translation;
  }
};

// Gaussian-mixture skinning model. Each bone contributes a center J_b and a
// precision Q_b = L_b L_b^T + 1e-6 I where L_b is lower triangular with
// softplus-mapped diagonal, so Q_b stays SPD under unconstrained steps.
// Raw layout per bone: (d0, d1, d2, o10, o20, o21) with diag = softplus(d).
struct SkinningModel {
  std::vector<Vec3> centers;
  std::vector<Eigen::Matrix<double, 6, 1>> precision_raw;

  int bone_count() const { return int(centers.size()); }
  Mat3 precision_factor(int b) const;  // L_b
  Mat3 precision(int b) const;         // Q_b

  // Isotropic init with standard deviation `radius` (L = I / radius).
  static SkinningModel isotropic(const std::vector<Vec3>& centers,
                                 double radius);
};

constexpr double kPrecisionJitter = 1e-6;

// W is B x N, strictly positive, columns summing to 1 (computed in the log
// domain so distant vertices never underflow to an all-zero column).
Eigen::MatrixXd skin_weights(const SkinningModel& model,
                             const std::vector<Vec3>& rest_vertices);

struct SkinWeightsGrads {
  std::vector<Vec3> centers_bar;
  std::vector<Eigen::Matrix<double, 6, 1>> precision_raw_bar;
  std::vector<Vec3> rest_bar;
};
// Adjoint of skin_weights given d(loss)/dW.
SkinWeightsGrads skin_weights_vjp(const SkinningModel& model,
                                  const std::vector<Vec3>& rest_vertices,
                                  const Eigen::MatrixXd& weights,
                                  const Eigen::MatrixXd& weights_bar);

// Object-frame articulation: v_i = sum_b W_{b,i} (R_b rest_i + T_b).
// B = 0 returns the rest vertices unchanged (rigid object).
std::vector<Vec3> lbs_object(const std::vector<Vec3>& rest_vertices,
                             const Eigen::MatrixXd& weights,
                             const std::vector<BonePose>& bones);

struct LbsObjectGrads {
  std::vector<Vec3> rest_bar;
  Eigen::MatrixXd weights_bar;
  std::vector<Vec4> bone_rot_bar;  // adjoints on the unit quaternions
  std::vector<Vec3> bone_trans_bar;
};
LbsObjectGrads lbs_object_vjp(const std::vector<Vec3>& rest_vertices,
                              const Eigen::MatrixXd& weights,
                              const std::vector<BonePose>& bones,
                              const std::vector<Vec3>& posed_bar);

// Root transform applied to every point.
std::vector<Vec3> rigid_apply(const BonePose& pose,
                              const std::vector<Vec3>& points);
void rigid_apply_vjp(const BonePose& pose, const std::vector<Vec3>& points,
                     const std::vector<Vec3>& out_bar,
                     std::vector<Vec3>* points_bar, Vec4* rot_bar,
                     Vec3* trans_bar);

// Full chain: camera-frame vertices = root applied to lbs_object output.
std::vector<Vec3> lbs_apply(const std::vector<Vec3>& rest_vertices,
                            const Eigen::MatrixXd& weights,
                            const std::vector<BonePose>& bones,
                            const BonePose& root);

// Trainable scalar count of the articulated model per the flat-bone
// parameterization: 3N rest + 6BT bone poses + 9B skinning + 6T root poses
// + (T+2) intrinsics. Rotations count 3 dof each (unit-quaternion storage
// carries one redundant scalar).
int64_t parameter_count(int64_t n_vertices, int64_t n_bones,
                        int64_t n_frames);

}  // namespace lasr
