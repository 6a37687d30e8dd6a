#include "lasr/scene.h"

#include <cmath>

namespace lasr {

Eigen::VectorXd TemporalBasis::features(int t, int n_frames) const {
  Eigen::VectorXd phi(rank);
  if (rank > 0) phi[0] = 1.0;
  for (int k = 1; k < rank; ++k) {
    int harmonic = (k + 1) / 2;
    double arg = 2.0 * M_PI * harmonic * t / std::max(1, n_frames);
    phi[k] = (k % 2 == 1) ? std::sin(arg) : std::cos(arg);
  }
  return phi;
}

namespace {

int frame_param_dim(int bones) { return 8 + 7 * bones; }

// Flat layout of one frame's raw parameters:
// [log_focal, root_quat(4), root_trans(3), per bone: quat(4), trans(3)]
Eigen::VectorXd flatten_frame(const SceneParams::Frame& f) {
  int b = int(f.bone_quat_raw.size());
  Eigen::VectorXd v(frame_param_dim(b));
  v[0] = f.log_focal;
  v.segment<4>(1) = f.root_quat_raw;
  v.segment<3>(5) = f.root_trans;
  for (int i = 0; i < b; ++i) {
    v.segment<4>(8 + 7 * i) = f.bone_quat_raw[i];
    v.segment<3>(8 + 7 * i + 4) = f.bone_trans[i];
  }
  return v;
}

void unflatten_frame(const Eigen::VectorXd& v, SceneParams::Frame* f) {
  int b = int(f->bone_quat_raw.size());
  f->log_focal = v[0];
  f->root_quat_raw = v.segment<4>(1);
  f->root_trans = v.segment<3>(5);
  for (int i = 0; i < b; ++i) {
    f->bone_quat_raw[i] = v.segment<4>(8 + 7 * i);
    f->bone_trans[i] = v.segment<3>(8 + 7 * i + 4);
  }
}

}  // namespace

SceneGrads SceneGrads::zeros_like(const SceneParams& p) {
  SceneGrads g;
  g.rest_vertices.assign(p.rest_vertices.size(), Vec3::Zero());
  g.colors_raw.assign(p.colors_raw.size(), Vec3::Zero());
  g.skin_centers.assign(p.skin.centers.size(), Vec3::Zero());
  g.skin_precision.assign(p.skin.precision_raw.size(),
                          Eigen::Matrix<double, 6, 1>::Zero());
  g.free_weight_logits = Eigen::MatrixXd::Zero(p.free_weight_logits.rows(),
                                               p.free_weight_logits.cols());
  g.frames.resize(p.frames.size());
  for (size_t t = 0; t < p.frames.size(); ++t) {
    g.frames[t].bone_quat_raw.assign(p.frames[t].bone_quat_raw.size(),
                                     Vec4::Zero());
    g.frames[t].bone_trans.assign(p.frames[t].bone_trans.size(),
                                  Vec3::Zero());
  }
  return g;
}

void SceneGrads::add(const SceneGrads& o) {
  for (size_t i = 0; i < rest_vertices.size(); ++i)
    rest_vertices[i] += o.rest_vertices[i];
  for (size_t i = 0; i < colors_raw.size(); ++i)
    colors_raw[i] += o.colors_raw[i];
  for (size_t i = 0; i < skin_centers.size(); ++i) {
    skin_centers[i] += o.skin_centers[i];
    skin_precision[i] += o.skin_precision[i];
  }
  if (free_weight_logits.size() > 0)
    free_weight_logits += o.free_weight_logits;
  for (size_t t = 0; t < frames.size(); ++t) {
    frames[t].log_focal += o.frames[t].log_focal;
    frames[t].root_quat_raw += o.frames[t].root_quat_raw;
    frames[t].root_trans += o.frames[t].root_trans;
    for (size_t b = 0; b < frames[t].bone_quat_raw.size(); ++b) {
      frames[t].bone_quat_raw[b] += o.frames[t].bone_quat_raw[b];
      frames[t].bone_trans[b] += o.frames[t].bone_trans[b];
    }
  }
  principal += o.principal;
  plane_normal_raw += o.plane_normal_raw;
}

void SceneGrads::scale(double s) {
  for (auto& v : rest_vertices) v *= s;
  for (auto& v : colors_raw) v *= s;
  for (auto& v : skin_centers) v *= s;
  for (auto& v : skin_precision) v *= s;
  free_weight_logits *= s;
  for (auto& f : frames) {
    f.log_focal *= s;
    f.root_quat_raw *= s;
    f.root_trans *= s;
    for (auto& q : f.bone_quat_raw) q *= s;
    for (auto& t : f.bone_trans) t *= s;
  }
  principal *= s;
  plane_normal_raw *= s;
}

DerivedFrame derive_frame(const SceneParams& p, int t) {
  const SceneParams::Frame& f = p.frames.at(t);
  DerivedFrame d;
  d.k.focal = std::exp(f.log_focal);
  d.k.principal = p.principal;
  d.root.rotation = quat_normalize(f.root_quat_raw);
  d.root.translation = f.root_trans;
  d.bones.resize(f.bone_quat_raw.size());
  for (size_t b = 0; b < f.bone_quat_raw.size(); ++b) {
    d.bones[b].rotation = quat_normalize(f.bone_quat_raw[b]);
    d.bones[b].translation = f.bone_trans[b];
  }
  return d;
}

std::vector<Vec3> derived_colors(const SceneParams& p) {
  std::vector<Vec3> c(p.colors_raw.size());
  for (size_t i = 0; i < c.size(); ++i)
    c[i] = Vec3(sigmoid(p.colors_raw[i][0]), sigmoid(p.colors_raw[i][1]),
                sigmoid(p.colors_raw[i][2]));
  return c;
}

Eigen::MatrixXd derived_weights(const SceneParams& p) {
  if (p.free_weights) {
    const Eigen::MatrixXd& l = p.free_weight_logits;
    Eigen::MatrixXd w(l.rows(), l.cols());
    for (int i = 0; i < l.cols(); ++i) {
      double m = l.col(i).maxCoeff();
      double denom = 0;
      for (int b = 0; b < l.rows(); ++b) {
        w(b, i) = std::exp(l(b, i) - m);
        denom += w(b, i);
      }
      w.col(i) /= denom;
    }
    return w;
  }
  if (p.skin.bone_count() == 0) return Eigen::MatrixXd(0, p.vertex_count());
  return skin_weights(p.skin, p.rest_vertices);
}

void materialize_frames(SceneParams* p) {
  if (!p->basis.enabled) return;
  int t_count = p->frame_count();
  for (int t = 0; t < t_count; ++t) {
    Eigen::VectorXd v = p->basis.coeffs * p->basis.features(t, t_count);
    unflatten_frame(v, &p->frames[t]);
  }
}

Eigen::MatrixXd fold_frame_grads_to_basis(const SceneParams& p,
                                          const SceneGrads& g) {
  int t_count = p.frame_count();
  Eigen::MatrixXd out =
      Eigen::MatrixXd::Zero(p.basis.coeffs.rows(), p.basis.coeffs.cols());
  for (int t = 0; t < t_count; ++t) {
    SceneParams::Frame tmp;
    tmp.bone_quat_raw.assign(g.frames[t].bone_quat_raw.begin(),
                             g.frames[t].bone_quat_raw.end());
    tmp.bone_trans = g.frames[t].bone_trans;
    tmp.log_focal = g.frames[t].log_focal;
    tmp.root_quat_raw = g.frames[t].root_quat_raw;
    tmp.root_trans = g.frames[t].root_trans;
    out += flatten_frame(tmp) * p.basis.features(t, t_count).transpose();
  }
  return out;
}

void enable_temporal_basis(SceneParams* p, int rank) {
  if (rank < 1) throw ParameterError("temporal basis rank must be >= 1");
  p->basis.enabled = true;
  p->basis.rank = rank;
  int d = frame_param_dim(p->bone_count());
  p->basis.coeffs = Eigen::MatrixXd::Zero(d, rank);
  // constant column reproduces the mean of the current table
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (int t = 0; t < p->frame_count(); ++t)
    mean += flatten_frame(p->frames[t]);
  p->basis.coeffs.col(0) = mean / std::max(1, p->frame_count());
  materialize_frames(p);
}

PairCorr capture_pair_correspondence(const SceneParams& p,
                                     const RasterConfig& cfg, int t) {
  Eigen::MatrixXd w = derived_weights(p);
  DerivedFrame dt = derive_frame(p, t);
  DerivedFrame dt1 = derive_frame(p, t + 1);
  std::vector<Vec3> cam_t =
      rigid_apply(dt.root, lbs_object(p.rest_vertices, w, dt.bones));
  std::vector<Vec3> cam_t1 =
      rigid_apply(dt1.root, lbs_object(p.rest_vertices, w, dt1.bones));
  PairCorr pc;
  FrameRenderContext ctx_t =
      render_frame(cfg, cam_t, p.faces, dt.k, nullptr, &cam_t, &cam_t1);
  finalize_flow(cfg, ctx_t, dt1.k);
  pc.fw = extract_correspondence(cfg, ctx_t, cam_t, p.faces, dt.k);
  pc.flow_valid_fw = ctx_t.out.flow_valid;
  FrameRenderContext ctx_t1 =
      render_frame(cfg, cam_t1, p.faces, dt1.k, nullptr, &cam_t1, &cam_t);
  finalize_flow(cfg, ctx_t1, dt.k);
  pc.bw = extract_correspondence(cfg, ctx_t1, cam_t1, p.faces, dt1.k);
  pc.flow_valid_bw = ctx_t1.out.flow_valid;
  return pc;
}

namespace {

Vec2 project_single(const Intrinsics& k, const Vec3& p) {
  double z = std::max(p.z(), kNearPlane);
  return Vec2(k.focal * p.x() / z + k.principal.x(),
              k.focal * p.y() / z + k.principal.y());
}

// Frozen-correspondence flow image for finite-difference probes.
ImageV2 frozen_flow(const CorrespondenceMap& corr, const ImageU8& valid,
                    const std::vector<Vec3>& cam_a,
                    const std::vector<Vec3>& cam_b,
                    const std::vector<Vec3i>& faces, const Intrinsics& ka,
                    const Intrinsics& kb) {
  ImageV3 b0 = blend_attribute(corr, cam_a, faces);
  ImageV3 b1 = blend_attribute(corr, cam_b, faces);
  ImageV2 flow(corr.height, corr.width, Vec2::Zero());
  for (int y = 0; y < corr.height; ++y)
    for (int x = 0; x < corr.width; ++x)
      if (valid.at(y, x))
        flow.at(y, x) =
            project_single(kb, b1.at(y, x)) - project_single(ka, b0.at(y, x));
  return flow;
}

double iou_threshold(const ImageD& rendered, const ImageD& measured) {
  int inter = 0, uni = 0;
  for (size_t i = 0; i < rendered.data.size(); ++i) {
    bool a = rendered.data[i] > 0.5, b = measured.data[i] > 0.5;
    inter += a && b;
    uni += a || b;
  }
  return uni > 0 ? double(inter) / uni : 1.0;
}

}  // namespace

PairEval evaluate_pair(const SceneParams& p, const MeshTopology& topo,
                       const MeasurementSet& ms, int t,
                       const RasterConfig& cfg, const LossWeights& w,
                       const LossToggles& toggles, uint64_t seed,
                       bool compute_grads, const PairCorr* frozen) {
  if (t < 0 || t + 1 >= ms.frame_count())
    throw ParameterError("evaluate_pair: pair index out of range");
  if (frozen && compute_grads)
    throw UsageError("frozen correspondence mode is forward-only");
  const FrameMeasurement& m_t = ms.frames[t];
  const FrameMeasurement& m_t1 = ms.frames[t + 1];

  std::vector<Vec3> colors = derived_colors(p);
  Eigen::MatrixXd weights = derived_weights(p);
  DerivedFrame dt = derive_frame(p, t);
  DerivedFrame dt1 = derive_frame(p, t + 1);
  std::vector<Vec3> obj_t = lbs_object(p.rest_vertices, weights, dt.bones);
  std::vector<Vec3> obj_t1 = lbs_object(p.rest_vertices, weights, dt1.bones);
  std::vector<Vec3> cam_t = rigid_apply(dt.root, obj_t);
  std::vector<Vec3> cam_t1 = rigid_apply(dt1.root, obj_t1);

  FrameRenderContext ctx_t =
      render_frame(cfg, cam_t, p.faces, dt.k, &colors, &cam_t, &cam_t1);
  finalize_flow(cfg, ctx_t, dt1.k);
  FrameRenderContext ctx_t1 =
      render_frame(cfg, cam_t1, p.faces, dt1.k, &colors, &cam_t1, &cam_t);
  finalize_flow(cfg, ctx_t1, dt.k);

  PairEval out;
  out.iou_t = iou_threshold(ctx_t.out.silhouette, m_t.silhouette);

  RenderOutput out_t = ctx_t.out;
  RenderOutput out_t1 = ctx_t1.out;
  if (frozen) {
    out_t.flow = frozen_flow(frozen->fw, frozen->flow_valid_fw, cam_t,
                             cam_t1, p.faces, dt.k, dt1.k);
    out_t.flow_valid = frozen->flow_valid_fw;
    out_t.coverage = frozen->fw.coverage;
    out_t1.flow = frozen_flow(frozen->bw, frozen->flow_valid_bw, cam_t1,
                              cam_t, p.faces, dt1.k, dt.k);
    out_t1.flow_valid = frozen->flow_valid_bw;
    out_t1.coverage = frozen->bw.coverage;
  }

  PairMeasurements pm;
  pm.sil_t = &m_t.silhouette;
  pm.sil_t1 = &m_t1.silhouette;
  pm.img_t = &m_t.image;
  pm.img_t1 = &m_t1.image;
  pm.flow_fw = m_t.has_flow_fw() ? &m_t.flow_fw : nullptr;
  pm.flow_bw = m_t1.has_flow_bw() ? &m_t1.flow_bw : nullptr;
  pm.conf_t = m_t.has_confidence() ? &m_t.confidence : nullptr;
  pm.conf_t1 = m_t1.has_confidence() ? &m_t1.confidence : nullptr;

  ReconLossResult recon;
  if (toggles.recon) {
    recon = reconstruction_loss(out_t, out_t1, pm, w);
    out.total += recon.total;
    out.terms["recon_sil"] = recon.sil_term;
    out.terms["recon_flow"] = recon.flow_term;
    out.terms["recon_tex"] = recon.tex_term;
    out.terms["recon_pyr"] = recon.pyr_term;
  }

  SceneGrads grads = SceneGrads::zeros_like(p);
  std::vector<Vec3> rest_bar(p.vertex_count(), Vec3::Zero());
  std::vector<Vec3> obj_bar_t(p.vertex_count(), Vec3::Zero());
  std::vector<Vec3> obj_bar_t1(p.vertex_count(), Vec3::Zero());

  if (toggles.shape) {
    double v = shape_smoothness(topo, p.rest_vertices, w.w_shape,
                                compute_grads ? &rest_bar : nullptr);
    out.total += v;
    out.terms["shape"] = v;
  }
  if (toggles.arap) {
    double v = arap_loss(obj_t, obj_t1, topo, w.w_arap,
                         compute_grads ? &obj_bar_t : nullptr,
                         compute_grads ? &obj_bar_t1 : nullptr);
    out.total += v;
    out.terms["arap"] = v;
  }
  if (toggles.least) {
    double v = least_motion_loss(obj_t, p.rest_vertices, 0.5 * w.w_least,
                                 compute_grads ? &obj_bar_t : nullptr,
                                 compute_grads ? &rest_bar : nullptr) +
               least_motion_loss(obj_t1, p.rest_vertices, 0.5 * w.w_least,
                                 compute_grads ? &obj_bar_t1 : nullptr,
                                 compute_grads ? &rest_bar : nullptr);
    out.total += v;
    out.terms["least"] = v;
  }
  if (toggles.symmetry) {
    double w_bone = p.free_weights ? 0.0 : w.w_symm_bone;
    SymmetryLossResult sym = symmetry_losses(
        p.rest_vertices, p.faces, p.free_weights ? std::vector<Vec3>{} :
        p.skin.centers, p.plane_normal_raw, w.symmetry_samples, seed,
        w.w_symm_shape, w_bone);
    out.total += sym.shape_term + sym.bone_term;
    out.terms["symm_shape"] = sym.shape_term;
    out.terms["symm_bone"] = sym.bone_term;
    if (compute_grads) {
      for (size_t i = 0; i < rest_bar.size(); ++i)
        rest_bar[i] += sym.rest_bar[i];
      for (size_t i = 0; i < sym.centers_bar.size(); ++i)
        grads.skin_centers[i] += sym.centers_bar[i];
      grads.plane_normal_raw += sym.normal_raw_bar;
    }
  }
  if (toggles.cano) {
    Vec3 nb = Vec3::Zero();
    double v = canonicalization_loss(p.plane_normal_raw, Vec3::UnitX(),
                                     w.w_cano, compute_grads ? &nb : nullptr);
    out.total += v;
    out.terms["cano"] = v;
    if (compute_grads) grads.plane_normal_raw += nb;
  }

  if (!compute_grads) {
    out.grads = std::move(grads);
    return out;
  }

  // ---- backward through rendering ----
  std::vector<Vec3> colors_bar(p.vertex_count(), Vec3::Zero());
  std::vector<Vec3> cam_bar_t(p.vertex_count(), Vec3::Zero());
  std::vector<Vec3> cam_bar_t1(p.vertex_count(), Vec3::Zero());
  double focal_bar_t = 0, focal_bar_t1 = 0;
  Vec2 pp_bar = Vec2::Zero();

  if (toggles.recon) {
    FrameRenderGrads rg_t = render_backward(
        cfg, ctx_t, cam_t, p.faces, dt.k, &colors, &cam_t, &cam_t1,
        &recon.sil_bar_t, &recon.color_bar_t, &recon.flow_bar_fw);
    FrameRenderGrads rg_t1 = render_backward(
        cfg, ctx_t1, cam_t1, p.faces, dt1.k, &colors, &cam_t1, &cam_t,
        &recon.sil_bar_t1, &recon.color_bar_t1, &recon.flow_bar_bw);
    for (int i = 0; i < p.vertex_count(); ++i) {
      cam_bar_t[i] = rg_t.cam_verts_bar[i] + rg_t.attr0_bar[i] +
                     rg_t1.attr1_bar[i];
      cam_bar_t1[i] = rg_t1.cam_verts_bar[i] + rg_t1.attr0_bar[i] +
                      rg_t.attr1_bar[i];
      colors_bar[i] = rg_t.colors_bar[i] + rg_t1.colors_bar[i];
    }
    focal_bar_t = rg_t.focal_bar + rg_t1.focal_next_bar;
    focal_bar_t1 = rg_t1.focal_bar + rg_t.focal_next_bar;
    pp_bar = rg_t.principal_bar + rg_t1.principal_next_bar +
             rg_t1.principal_bar + rg_t.principal_next_bar;
  }

  // root transforms
  Vec4 root_unit_bar_t = Vec4::Zero(), root_unit_bar_t1 = Vec4::Zero();
  rigid_apply_vjp(dt.root, obj_t, cam_bar_t, &obj_bar_t, &root_unit_bar_t,
                  &grads.frames[t].root_trans);
  rigid_apply_vjp(dt1.root, obj_t1, cam_bar_t1, &obj_bar_t1,
                  &root_unit_bar_t1, &grads.frames[t + 1].root_trans);
  grads.frames[t].root_quat_raw +=
      quat_normalize_vjp(p.frames[t].root_quat_raw, root_unit_bar_t);
  grads.frames[t + 1].root_quat_raw +=
      quat_normalize_vjp(p.frames[t + 1].root_quat_raw, root_unit_bar_t1);

  // articulation
  Eigen::MatrixXd weights_bar =
      Eigen::MatrixXd::Zero(weights.rows(), weights.cols());
  auto lbs_chain = [&](const std::vector<BonePose>& bones,
                       const std::vector<Vec3>& obj_bar, int frame_idx) {
    LbsObjectGrads lg =
        lbs_object_vjp(p.rest_vertices, weights, bones, obj_bar);
    for (int i = 0; i < p.vertex_count(); ++i) rest_bar[i] += lg.rest_bar[i];
    if (weights.rows() > 0) weights_bar += lg.weights_bar;
    for (int b = 0; b < int(bones.size()); ++b) {
      grads.frames[frame_idx].bone_quat_raw[b] += quat_normalize_vjp(
          p.frames[frame_idx].bone_quat_raw[b], lg.bone_rot_bar[b]);
      grads.frames[frame_idx].bone_trans[b] += lg.bone_trans_bar[b];
    }
  };
  lbs_chain(dt.bones, obj_bar_t, t);
  lbs_chain(dt1.bones, obj_bar_t1, t + 1);

  // skinning weights
  if (weights.rows() > 0) {
    if (p.free_weights) {
      for (int i = 0; i < weights.cols(); ++i) {
        double inner = weights.col(i).dot(weights_bar.col(i));
        for (int b = 0; b < weights.rows(); ++b)
          grads.free_weight_logits(b, i) +=
              weights(b, i) * (weights_bar(b, i) - inner);
      }
    } else {
      SkinWeightsGrads sg =
          skin_weights_vjp(p.skin, p.rest_vertices, weights, weights_bar);
      for (int b = 0; b < p.skin.bone_count(); ++b) {
        grads.skin_centers[b] += sg.centers_bar[b];
        grads.skin_precision[b] += sg.precision_raw_bar[b];
      }
      for (int i = 0; i < p.vertex_count(); ++i)
        rest_bar[i] += sg.rest_bar[i];
    }
  }

  // leaf parameters
  for (int i = 0; i < p.vertex_count(); ++i) {
    grads.rest_vertices[i] += rest_bar[i];
    for (int k = 0; k < 3; ++k)
      grads.colors_raw[i][k] +=
          colors_bar[i][k] * sigmoid_derivative(p.colors_raw[i][k]);
  }
  grads.frames[t].log_focal += focal_bar_t * dt.k.focal;
  grads.frames[t + 1].log_focal += focal_bar_t1 * dt1.k.focal;
  grads.principal += pp_bar;

  out.grads = std::move(grads);
  out.has_grads = true;
  return out;
}

SceneParams init_scene_params(const MeasurementSet& ms, int subdivisions,
                              double depth) {
  if (ms.frame_count() < 2)
    throw InputError("init_scene_params: need at least 2 frames");
  Mesh ico = make_icosphere(subdivisions);
  SceneParams p;
  p.rest_vertices = ico.vertices;
  p.faces = ico.faces;
  p.colors_raw.assign(ico.vertices.size(), Vec3::Zero());  // sigmoid(0)=0.5

  // focal heuristic: unit-radius object at `depth` should span the measured
  // silhouette's half extent
  const ImageD& sil = ms.frames[0].silhouette;
  int x0 = sil.width, x1 = -1, y0 = sil.height, y1 = -1;
  for (int y = 0; y < sil.height; ++y)
    for (int x = 0; x < sil.width; ++x)
      if (sil.at(y, x) > 0.5) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
  double half_extent =
      x1 >= x0 ? std::max(x1 - x0 + 1, y1 - y0 + 1) / 2.0 : ms.width / 4.0;
  double focal = half_extent * std::sqrt(std::max(depth * depth - 1.0, 1.0));

  p.frames.resize(ms.frame_count());
  for (auto& f : p.frames) {
    f.log_focal = std::log(focal);
    f.root_quat_raw = Vec4(1, 0, 0, 0);
    f.root_trans = Vec3(0, 0, depth);
  }
  p.principal = Vec2((ms.width - 1) / 2.0, (ms.height - 1) / 2.0);
  p.plane_normal_raw = Vec3::UnitX();
  return p;
}

void install_bones(SceneParams* p, const SkinningModel& model) {
  p->skin = model;
  p->free_weights = false;
  p->free_weight_logits.resize(0, 0);
  for (auto& f : p->frames) {
    f.bone_quat_raw.assign(model.bone_count(), Vec4(1, 0, 0, 0));
    f.bone_trans.assign(model.bone_count(), Vec3::Zero());
  }
  if (p->basis.enabled) enable_temporal_basis(p, p->basis.rank);
}

}  // namespace lasr
