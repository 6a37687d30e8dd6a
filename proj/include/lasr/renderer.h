#pragma once

#include "lasr/camera.h"
#include "lasr/core.h"

#include <vector>

namespace lasr {

// Soft-rasterization settings. Distances are measured in clip space (the
// image mapped to [-1,1] per axis); depth-softmax z values are normalized by
// (z_far - z) / (z_far - z_near).
struct RasterConfig {
  int height = 256;
  int width = 256;
  double sigma = 1e-4;   // sharpness of the per-face occupancy sigmoid
  double gamma = 1e-4;   // depth-softmax temperature
  Vec3 background_color = Vec3::Zero();
  double z_near = 0.1;
  double z_far = 20.0;
  // Faces farther than this clip-space distance from a pixel are skipped.
  // 0 disables culling (exact evaluation, required by the oracle tests).
  double cull_margin = 0.0;

  void validate() const;
};

struct RenderOutput {
  ImageD silhouette;       // 1 - prod_j (1 - D_j)
  ImageV3 color;           // depth-softmax blend, background included
  ImageV2 flow;            // pixels; zero where flow_valid is false
  ImageU8 coverage;        // max_j D_j >= 0.5
  ImageU8 flow_valid;      // coverage && advected point projects in front
};

// Forward state retained for the backward pass. Per-pixel aggregates are
// stored; per-face-pixel terms are recomputed during backward.
struct FrameRenderContext {
  RenderOutput out;
  Projection proj;
  std::vector<Vec2> clip;
  std::vector<uint8_t> face_valid;
  ImageD sil_logprod;            // A = sum_j log(1 - D_j)
  ImageD color_m, color_denom;   // online-softmax stats incl. background
  ImageD attr_m, attr_denom;     // stats over faces only
  ImageV3 attr0_out, attr1_out;  // blended attributes (flow surface points)
  ImageD max_delta;
  bool has_color = false;
  bool has_attr = false;
  bool has_attr1 = false;
  bool has_flow = false;
  Intrinsics k_self;
  Intrinsics k_next;
  bool forward_done = false;
};

// Renders silhouette (always), color (when vertex colors given) and blended
// per-vertex attributes (when given; both share the face-only renormalized
// color weights). For optical flow, attr0 is this frame's camera-space
// vertex positions and attr1 the next frame's; finalize_flow then emits
//   flow = project(k_next, blend(attr1)) - project(k, blend(attr0)),
// the projection difference of one soft surface point advected by vertex
// correspondence, which is exactly zero for a static pair.
FrameRenderContext render_frame(const RasterConfig& cfg,
                                const std::vector<Vec3>& cam_verts,
                                const std::vector<Vec3i>& faces,
                                const Intrinsics& k,
                                const std::vector<Vec3>* vertex_colors,
                                const std::vector<Vec3>* attr0,
                                const std::vector<Vec3>* attr1 = nullptr);

void finalize_flow(const RasterConfig& cfg, FrameRenderContext& ctx,
                   const Intrinsics& k_next);

struct FrameRenderGrads {
  std::vector<Vec3> cam_verts_bar;
  std::vector<Vec3> colors_bar;
  std::vector<Vec3> attr0_bar;  // this frame's camera vertices (flow path)
  std::vector<Vec3> attr1_bar;  // next frame's camera vertices (flow path)
  double focal_bar = 0;
  Vec2 principal_bar = Vec2::Zero();
  double focal_next_bar = 0;
  Vec2 principal_next_bar = Vec2::Zero();
};

// Exact adjoints of the soft formulas. Color gradients flow through the
// blend weights; flow gradients flow only through the advected surface
// positions (weights and barycentrics are detached), and nothing flows
// through the hard coverage mask. Throws UsageError if ctx has no forward.
FrameRenderGrads render_backward(const RasterConfig& cfg,
                                 const FrameRenderContext& ctx,
                                 const std::vector<Vec3>& cam_verts,
                                 const std::vector<Vec3i>& faces,
                                 const Intrinsics& k,
                                 const std::vector<Vec3>* vertex_colors,
                                 const std::vector<Vec3>* attr0,
                                 const std::vector<Vec3>* attr1,
                                 const ImageD* sil_bar,
                                 const ImageV3* color_bar,
                                 const ImageV2* flow_bar);

// Convenience wrappers matching the three render operations.
ImageD render_silhouette(const std::vector<Vec3>& cam_verts,
                         const std::vector<Vec3i>& faces, const Intrinsics& k,
                         const RasterConfig& cfg);
ImageV3 render_color(const std::vector<Vec3>& cam_verts,
                     const std::vector<Vec3i>& faces,
                     const std::vector<Vec3>& vertex_colors,
                     const Intrinsics& k, const RasterConfig& cfg);
ImageV2 render_flow(const std::vector<Vec3>& cam_verts_t,
                    const std::vector<Vec3>& cam_verts_t1,
                    const std::vector<Vec3i>& faces, const Intrinsics& k_t,
                    const Intrinsics& k_t1, const RasterConfig& cfg);

// Frozen per-pixel correspondence (faces, detached weights, barycentrics).
// Used by keypoint transfer and by finite-difference checks of the flow
// target, which differentiates exactly this frozen objective.
struct CorrespondenceMap {
  int height = 0, width = 0;
  std::vector<int> offsets;  // CSR, size H*W+1
  std::vector<int> face;
  std::vector<double> weight;
  std::vector<Vec3> bary;
  ImageU8 coverage;
};
CorrespondenceMap extract_correspondence(const RasterConfig& cfg,
                                         const FrameRenderContext& ctx,
                                         const std::vector<Vec3>& cam_verts,
                                         const std::vector<Vec3i>& faces,
                                         const Intrinsics& k);
// Blends a per-vertex attribute through the frozen correspondence.
ImageV3 blend_attribute(const CorrespondenceMap& corr,
                        const std::vector<Vec3>& vertex_attr,
                        const std::vector<Vec3i>& faces);

}  // namespace lasr
