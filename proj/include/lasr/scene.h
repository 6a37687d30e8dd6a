#pragma once

#include "lasr/camera.h"
#include "lasr/core.h"
#include "lasr/io.h"
#include "lasr/losses.h"
#include "lasr/mesh.h"
#include "lasr/renderer.h"
#include "lasr/skinning.h"

#include <Eigen/Dense>

#include <map>
#include <string>
#include <vector>

namespace lasr {

// Optional low-rank temporal parameterization: the per-frame parameter
// vector is A * phi(t) with phi a fixed sinusoidal feature of the frame
// index and A trainable. Disabled by default; when enabled the explicit
// frame table becomes derived state (rematerialized after every step).
struct TemporalBasis {
  bool enabled = false;
  int rank = 0;                // columns of A == feature count
  Eigen::MatrixXd coeffs;      // D x rank, D = per-frame parameter dim

  // [1, sin(2 pi t/T), cos(2 pi t/T), sin(4 pi t/T), ...], length `rank`.
  Eigen::VectorXd features(int t, int n_frames) const;
};

// All trainable state plus the fixed topology. Raw storage uses
// unconstrained parameterizations: colors through sigmoid, focal through
// exp, precision diagonals through softplus, quaternions normalized at use.
struct SceneParams {
  std::vector<Vec3> rest_vertices;
  std::vector<Vec3> colors_raw;
  std::vector<Vec3i> faces;

  SkinningModel skin;                  // empty => rigid (B = 0)
  bool free_weights = false;           // direct B x N logits instead of GMM
  Eigen::MatrixXd free_weight_logits;

  struct Frame {
    double log_focal = 0;
    Vec4 root_quat_raw = Vec4(1, 0, 0, 0);
    Vec3 root_trans = Vec3(0, 0, 3);
    std::vector<Vec4> bone_quat_raw;
    std::vector<Vec3> bone_trans;
  };
  std::vector<Frame> frames;
  Vec2 principal = Vec2::Zero();
  Vec3 plane_normal_raw = Vec3::UnitX();

  TemporalBasis basis;

  int vertex_count() const { return int(rest_vertices.size()); }
  int bone_count() const {
    return free_weights ? int(free_weight_logits.rows()) : skin.bone_count();
  }
  int frame_count() const { return int(frames.size()); }
};

// Gradient accumulator mirroring SceneParams' trainable storage.
struct SceneGrads {
  std::vector<Vec3> rest_vertices;
  std::vector<Vec3> colors_raw;
  std::vector<Vec3> skin_centers;
  std::vector<Eigen::Matrix<double, 6, 1>> skin_precision;
  Eigen::MatrixXd free_weight_logits;
  struct Frame {
    double log_focal = 0;
    Vec4 root_quat_raw = Vec4::Zero();
    Vec3 root_trans = Vec3::Zero();
    std::vector<Vec4> bone_quat_raw;
    std::vector<Vec3> bone_trans;
  };
  std::vector<Frame> frames;
  Vec2 principal = Vec2::Zero();
  Vec3 plane_normal_raw = Vec3::Zero();

  static SceneGrads zeros_like(const SceneParams& p);
  void add(const SceneGrads& other);
  void scale(double s);
};

// Derived per-frame state with constrained parameterizations applied.
struct DerivedFrame {
  Intrinsics k;
  BonePose root;
  std::vector<BonePose> bones;
};
DerivedFrame derive_frame(const SceneParams& p, int t);
std::vector<Vec3> derived_colors(const SceneParams& p);
// B x N column-stochastic weights (empty matrix when B = 0).
Eigen::MatrixXd derived_weights(const SceneParams& p);

// Regenerates the explicit frame table from the temporal basis (no-op when
// the basis is disabled).
void materialize_frames(SceneParams* p);
// Folds explicit frame-table gradients into basis-coefficient gradients.
Eigen::MatrixXd fold_frame_grads_to_basis(const SceneParams& p,
                                          const SceneGrads& g);
// Installs the current explicit frame table into basis column 0 (constant
// feature) when enabling the basis.
void enable_temporal_basis(SceneParams* p, int rank);

// Which loss families are active in the current stage.
struct LossToggles {
  bool recon = true;
  bool shape = true;
  bool arap = false;
  bool least = false;
  bool symmetry = true;
  bool cano = false;
};

// Frozen flow correspondence of one pair, for finite-difference checks of
// the detached-visibility flow objective.
struct PairCorr {
  CorrespondenceMap fw, bw;
  ImageU8 flow_valid_fw, flow_valid_bw;
};
PairCorr capture_pair_correspondence(const SceneParams& p,
                                     const RasterConfig& cfg, int t);

struct PairEval {
  double total = 0;
  std::map<std::string, double> terms;
  SceneGrads grads;
  bool has_grads = false;
  // Rendered-vs-measured silhouette IoU of the pair's first frame, for
  // progress reporting (threshold 0.5).
  double iou_t = 0;
};

// Loss and gradients of one consecutive frame pair (t, t+1). The symmetry
// sampling seed must be fixed per evaluation so finite differences see a
// deterministic objective. When `frozen` is given the flow targets are
// evaluated through the frozen correspondence (forward only).
PairEval evaluate_pair(const SceneParams& p, const MeshTopology& topo,
                       const MeasurementSet& ms, int t,
                       const RasterConfig& cfg, const LossWeights& w,
                       const LossToggles& toggles, uint64_t seed,
                       bool compute_grads, const PairCorr* frozen = nullptr);

// Icosphere + identity poses + focal heuristic from the first frame's
// silhouette extent (object of unit radius at the given depth).
SceneParams init_scene_params(const MeasurementSet& ms, int subdivisions,
                              double depth = 3.0);

// Installs a skinning model (resets per-frame bone transforms to identity).
void install_bones(SceneParams* p, const SkinningModel& model);

}  // namespace lasr
