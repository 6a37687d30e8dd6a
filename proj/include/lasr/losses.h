#pragma once

#include "lasr/core.h"
#include "lasr/mesh.h"
#include "lasr/renderer.h"

#include <vector>

namespace lasr {

// Weights of the total objective. beta1..beta4 follow the reconstruction
// loss (silhouette, flow, texture, pyramid); the regularizer weights are
// config-exposed with these defaults.
struct LossWeights {
  double beta1 = 0.5;
  double beta2 = 0.5;
  double beta3 = 2.0;
  double beta4 = 5e-3;
  double w_shape = 0.1;
  double w_arap = 1.0;
  double w_least = 0.05;
  double w_symm_shape = 0.1;
  double w_symm_bone = 0.1;
  double w_cano = 0.1;
  bool use_pyramid = true;
  int pyramid_levels = 3;
  int symmetry_samples = 2000;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Reconstruction losses. All reductions are means so weights are
// resolution-independent. Adjoint images are accumulated (+=).
// ---------------------------------------------------------------------------

// weight * mean((rendered - measured)^2) over all pixels.
double silhouette_loss(const ImageD& rendered, const ImageD& measured,
                       double weight, ImageD* rendered_bar);

// weight * sum(mask .* |rendered - measured|_1) / sum(mask).
double texture_l1_loss(const ImageV3& rendered, const ImageV3& measured,
                       const ImageD& mask, double weight,
                       ImageV3* rendered_bar);

// weight * mean over `levels` of box-downsampled masked L1 terms
// (downsample x2 per level). Stands in for the perceptual distance.
double pyramid_l1_loss(const ImageV3& rendered, const ImageV3& measured,
                       const ImageD& mask, int levels, double weight,
                       ImageV3* rendered_bar);

// weight * mean over masked pixels of conf * ||rendered - measured||_2
// (unsquared). Mask = measured silhouette AND rendered coverage AND valid
// flow; conf may be empty (all ones).
double flow_loss(const ImageV2& rendered, const ImageV2& measured,
                 const ImageD& measured_sil, const ImageU8& coverage,
                 const ImageU8& flow_valid, const ImageD* conf, double weight,
                 ImageV2* rendered_bar);

// Measurement views for one consecutive frame pair.
struct PairMeasurements {
  const ImageD* sil_t = nullptr;
  const ImageD* sil_t1 = nullptr;
  const ImageV3* img_t = nullptr;
  const ImageV3* img_t1 = nullptr;
  const ImageV2* flow_fw = nullptr;  // u+_t, measured forward flow
  const ImageV2* flow_bw = nullptr;  // u-_{t+1}, measured backward flow
  const ImageD* conf_t = nullptr;
  const ImageD* conf_t1 = nullptr;
};

struct ReconLossResult {
  double total = 0;
  double sil_term = 0, flow_term = 0, tex_term = 0, pyr_term = 0;
  ImageD sil_bar_t, sil_bar_t1;
  ImageV3 color_bar_t, color_bar_t1;
  ImageV2 flow_bar_fw, flow_bar_bw;
};

// Full reconstruction objective of one frame pair. Silhouette/texture/
// pyramid terms are averaged over the two frames; the flow term over the
// available flow directions (render_t.flow is the forward flow, render_t1's
// the backward one).
ReconLossResult reconstruction_loss(const RenderOutput& render_t,
                                    const RenderOutput& render_t1,
                                    const PairMeasurements& meas,
                                    const LossWeights& w);

// ---------------------------------------------------------------------------
// Shape and motion regularizers.
// ---------------------------------------------------------------------------

// weight * mean over vertices of squared uniform-Laplacian residual norm.
double shape_smoothness(const MeshTopology& topo,
                        const std::vector<Vec3>& rest, double weight,
                        std::vector<Vec3>* rest_bar);

// weight * mean over directed neighbor pairs of | |e_t| - |e_t1| |.
double arap_loss(const std::vector<Vec3>& v_t, const std::vector<Vec3>& v_t1,
                 const MeshTopology& topo, double weight,
                 std::vector<Vec3>* v_t_bar, std::vector<Vec3>* v_t1_bar);

// weight * mean over vertices of ||v_t - rest||_2, evaluated on object-frame
// posed vertices so root motion is not penalized.
double least_motion_loss(const std::vector<Vec3>& v_t,
                         const std::vector<Vec3>& rest, double weight,
                         std::vector<Vec3>* v_t_bar,
                         std::vector<Vec3>* rest_bar);

// Soft-symmetry terms about the plane with unit normal n = raw/|raw|:
// shape term = surface chamfer between the rest mesh and its reflection,
// bone term = point chamfer between centers and reflected centers.
struct SymmetryLossResult {
  double shape_term = 0;  // weighted
  double bone_term = 0;   // weighted
  std::vector<Vec3> rest_bar;
  std::vector<Vec3> centers_bar;
  Vec3 normal_raw_bar = Vec3::Zero();
};
SymmetryLossResult symmetry_losses(const std::vector<Vec3>& rest,
                                   const std::vector<Vec3i>& faces,
                                   const std::vector<Vec3>& centers,
                                   const Vec3& normal_raw, int samples,
                                   uint64_t seed, double w_shape,
                                   double w_bone);

// weight * ||n - n0||^2, tethering the optimized plane normal to its
// initialization axis during the rigid stage.
double canonicalization_loss(const Vec3& normal_raw, const Vec3& n0,
                             double weight, Vec3* normal_raw_bar);

}  // namespace lasr
