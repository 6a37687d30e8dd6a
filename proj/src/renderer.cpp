#include "lasr/renderer.h"

#include <algorithm>
#include <cmath>

namespace lasr {

void RasterConfig::validate() const {
  if (height < 8 || width < 8)
    throw ParameterError("raster size must be at least 8x8");
  if (!(sigma > 0) || !(gamma > 0))
    throw ParameterError("sigma and gamma must be positive");
  if (!(z_far > z_near) || !(z_near > 0))
    throw ParameterError("need 0 < z_near < z_far");
  if (cull_margin < 0) throw ParameterError("cull_margin must be >= 0");
}

namespace {

constexpr int kBands = 32;

struct FacePrep {
  bool valid = false;
  Vec2 c[3];
  double z[3];
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
};

std::vector<FacePrep> prep_faces(const RasterConfig& cfg,
                                 const std::vector<Vec3i>& faces,
                                 const Projection& proj,
                                 const std::vector<Vec2>& clip) {
  std::vector<FacePrep> preps(faces.size());
  const double margin_px_x =
      cfg.cull_margin > 0 ? cfg.cull_margin * cfg.width / 2.0 : 0;
  const double margin_px_y =
      cfg.cull_margin > 0 ? cfg.cull_margin * cfg.height / 2.0 : 0;
  for (size_t f = 0; f < faces.size(); ++f) {
    FacePrep& fp = preps[f];
    const Vec3i& t = faces[f];
    fp.valid = proj.valid[t[0]] && proj.valid[t[1]] && proj.valid[t[2]];
    if (!fp.valid) continue;
    for (int k = 0; k < 3; ++k) {
      fp.c[k] = clip[t[k]];
      fp.z[k] = proj.depth[t[k]];
    }
    if (cfg.cull_margin > 0) {
      double px0 = std::min({proj.pixel[t[0]].x(), proj.pixel[t[1]].x(),
                             proj.pixel[t[2]].x()}) - margin_px_x;
      double px1 = std::max({proj.pixel[t[0]].x(), proj.pixel[t[1]].x(),
                             proj.pixel[t[2]].x()}) + margin_px_x;
      double py0 = std::min({proj.pixel[t[0]].y(), proj.pixel[t[1]].y(),
                             proj.pixel[t[2]].y()}) - margin_px_y;
      double py1 = std::max({proj.pixel[t[0]].y(), proj.pixel[t[1]].y(),
                             proj.pixel[t[2]].y()}) + margin_px_y;
      fp.x0 = std::max(0, int(std::floor(px0)));
      fp.x1 = std::min(cfg.width - 1, int(std::ceil(px1)));
      fp.y0 = std::max(0, int(std::floor(py0)));
      fp.y1 = std::min(cfg.height - 1, int(std::ceil(py1)));
    } else {
      fp.x0 = 0;
      fp.x1 = cfg.width - 1;
      fp.y0 = 0;
      fp.y1 = cfg.height - 1;
    }
  }
  return preps;
}

inline int band_count_for(int height) { return std::min(kBands, height); }

inline void band_rows(int height, int n_bands, int b, int* begin, int* end) {
  *begin = int(int64_t(height) * b / n_bands);
  *end = int(int64_t(height) * (b + 1) / n_bands);
}

// Faces overlapping each row band, in face-index order, so accumulation
// order per pixel is deterministic under any thread count. Band ranges must
// match parallel_bands exactly.
std::vector<std::vector<int>> bin_faces(const std::vector<FacePrep>& preps,
                                        int height, int n_bands) {
  std::vector<std::vector<int>> bins(n_bands);
  for (size_t f = 0; f < preps.size(); ++f) {
    const FacePrep& fp = preps[f];
    if (!fp.valid || fp.y1 < fp.y0 || fp.x1 < fp.x0) continue;
    for (int b = 0; b < n_bands; ++b) {
      int begin, end;
      band_rows(height, n_bands, b, &begin, &end);
      if (fp.y0 < end && fp.y1 >= begin) bins[b].push_back(int(f));
    }
  }
  return bins;
}

struct FacePixelEval {
  SignedDist2D sd;
  double delta = 0;
  double log_d = 0;
  Bary2D bary;
  double z_interp = 0;
  double z_norm = 0;
  double lognum = 0;
  bool culled = false;
};

inline FacePixelEval eval_face_pixel(const RasterConfig& cfg, const Vec2& pc,
                                     const FacePrep& fp) {
  FacePixelEval e;
  e.sd = signed_dist_sq_2d(pc, fp.c[0], fp.c[1], fp.c[2]);
  if (cfg.cull_margin > 0 && !e.sd.inside &&
      -e.sd.value > cfg.cull_margin * cfg.cull_margin) {
    e.culled = true;
    return e;
  }
  e.delta = e.sd.value / cfg.sigma;
  e.log_d = -softplus(-e.delta);
  e.bary = barycentric_2d(pc, fp.c[0], fp.c[1], fp.c[2]);
  e.z_interp = e.bary.lambda[0] * fp.z[0] + e.bary.lambda[1] * fp.z[1] +
               e.bary.lambda[2] * fp.z[2];
  e.z_norm = (cfg.z_far - e.z_interp) / (cfg.z_far - cfg.z_near);
  e.lognum = e.log_d + e.z_norm / cfg.gamma;
  return e;
}

inline Vec2 pixel_center_clip(const RasterConfig& cfg, int x, int y) {
  return pixel_to_clip(Vec2(x, y), cfg.width, cfg.height);
}

inline void online_softmax(double& m, double& denom, Vec3& acc, double s,
                           const Vec3& v) {
  if (s <= m) {
    double w = std::exp(s - m);
    denom += w;
    acc += w * v;
  } else {
    double scale = std::exp(m - s);
    denom = denom * scale + 1.0;
    acc = acc * scale + v;
    m = s;
  }
}

struct SinglePointProjection {
  Vec2 pixel;
  bool valid;
};

inline SinglePointProjection project_point(const Intrinsics& k, const Vec3& p) {
  SinglePointProjection r;
  r.valid = p.z() > kNearPlane;
  double z = r.valid ? p.z() : kNearPlane;
  r.pixel = Vec2(k.focal * p.x() / z + k.principal.x(),
                 k.focal * p.y() / z + k.principal.y());
  return r;
}

}  // namespace

FrameRenderContext render_frame(const RasterConfig& cfg,
                                const std::vector<Vec3>& cam_verts,
                                const std::vector<Vec3i>& faces,
                                const Intrinsics& k,
                                const std::vector<Vec3>* vertex_colors,
                                const std::vector<Vec3>* attr0,
                                const std::vector<Vec3>* attr1) {
  cfg.validate();
  for (const Vec3& v : cam_verts)
    if (!v.allFinite()) throw ParameterError("non-finite posed vertex");
  if (vertex_colors && vertex_colors->size() != cam_verts.size())
    throw ParameterError("vertex color count mismatch");
  if (attr0 && attr0->size() != cam_verts.size())
    throw ParameterError("vertex attribute count mismatch");
  if (attr1 && (!attr0 || attr1->size() != cam_verts.size()))
    throw ParameterError("attr1 requires a matching attr0");

  FrameRenderContext ctx;
  ctx.has_color = vertex_colors != nullptr;
  ctx.has_attr = attr0 != nullptr;
  ctx.has_attr1 = attr1 != nullptr;
  ctx.k_self = k;
  ctx.proj = project(k, cam_verts);
  ctx.clip.resize(cam_verts.size());
  for (size_t i = 0; i < cam_verts.size(); ++i)
    ctx.clip[i] = pixel_to_clip(ctx.proj.pixel[i], cfg.width, cfg.height);

  const int h = cfg.height, w = cfg.width;
  ctx.sil_logprod = ImageD(h, w, 0.0);
  ctx.max_delta = ImageD(h, w, -std::numeric_limits<double>::infinity());
  ctx.color_m = ImageD(h, w, 0.0);      // background logit is 0
  ctx.color_denom = ImageD(h, w, 1.0);  // background weight
  ctx.attr_m = ImageD(h, w, -std::numeric_limits<double>::infinity());
  ctx.attr_denom = ImageD(h, w, 0.0);
  ctx.attr0_out = ImageV3(h, w, Vec3::Zero());
  ctx.attr1_out = ImageV3(h, w, Vec3::Zero());
  ctx.out.silhouette = ImageD(h, w, 0.0);
  ctx.out.color = ImageV3(h, w, cfg.background_color);
  ctx.out.flow = ImageV2(h, w, Vec2::Zero());
  ctx.out.coverage = ImageU8(h, w, 0);
  ctx.out.flow_valid = ImageU8(h, w, 0);

  std::vector<FacePrep> preps = prep_faces(cfg, faces, ctx.proj, ctx.clip);
  ctx.face_valid.resize(faces.size());
  for (size_t f = 0; f < faces.size(); ++f) ctx.face_valid[f] = preps[f].valid;
  const int n_bands = band_count_for(h);
  auto bins = bin_faces(preps, h, n_bands);

  ImageV3 color_acc(h, w, cfg.background_color);  // acc at m=0, denom=1

  parallel_bands(h, n_bands, [&](int band, int64_t row_begin, int64_t row_end) {
    for (int fi : bins[band]) {
      const FacePrep& fp = preps[fi];
      const Vec3i& t = faces[fi];
      int y0 = std::max(fp.y0, int(row_begin));
      int y1 = std::min(fp.y1, int(row_end) - 1);
      for (int y = y0; y <= y1; ++y) {
        for (int x = fp.x0; x <= fp.x1; ++x) {
          FacePixelEval e = eval_face_pixel(cfg, pixel_center_clip(cfg, x, y), fp);
          if (e.culled) continue;
          ctx.sil_logprod.at(y, x) += -softplus(e.delta);
          ctx.max_delta.at(y, x) = std::max(ctx.max_delta.at(y, x), e.delta);
          if (ctx.has_color) {
            Vec3 c = e.bary.lambda[0] * (*vertex_colors)[t[0]] +
                     e.bary.lambda[1] * (*vertex_colors)[t[1]] +
                     e.bary.lambda[2] * (*vertex_colors)[t[2]];
            online_softmax(ctx.color_m.at(y, x), ctx.color_denom.at(y, x),
                           color_acc.at(y, x), e.lognum, c);
          }
          if (ctx.has_attr) {
            Vec3 a = e.bary.lambda[0] * (*attr0)[t[0]] +
                     e.bary.lambda[1] * (*attr0)[t[1]] +
                     e.bary.lambda[2] * (*attr0)[t[2]];
            // attr1 shares the softmax stats; fold its update manually so
            // both accumulators stay consistent with one (m, denom).
            double m_before = ctx.attr_m.at(y, x);
            online_softmax(ctx.attr_m.at(y, x), ctx.attr_denom.at(y, x),
                           ctx.attr0_out.at(y, x), e.lognum, a);
            if (ctx.has_attr1) {
              Vec3 b = e.bary.lambda[0] * (*attr1)[t[0]] +
                       e.bary.lambda[1] * (*attr1)[t[1]] +
                       e.bary.lambda[2] * (*attr1)[t[2]];
              double m_after = ctx.attr_m.at(y, x);
              if (e.lognum <= m_before) {
                ctx.attr1_out.at(y, x) += std::exp(e.lognum - m_before) * b;
              } else {
                ctx.attr1_out.at(y, x) =
                    ctx.attr1_out.at(y, x) * std::exp(m_before - m_after) + b;
              }
            }
          }
        }
      }
    }
    // Per-pixel finalization for this band's rows.
    for (int64_t y = row_begin; y < row_end; ++y) {
      for (int x = 0; x < w; ++x) {
        ctx.out.silhouette.at(int(y), x) =
            1.0 - std::exp(ctx.sil_logprod.at(int(y), x));
        ctx.out.coverage.at(int(y), x) = ctx.max_delta.at(int(y), x) >= 0;
        if (ctx.has_color)
          ctx.out.color.at(int(y), x) =
              color_acc.at(int(y), x) / ctx.color_denom.at(int(y), x);
        if (ctx.has_attr && ctx.attr_denom.at(int(y), x) > 0) {
          ctx.attr0_out.at(int(y), x) /= ctx.attr_denom.at(int(y), x);
          if (ctx.has_attr1)
            ctx.attr1_out.at(int(y), x) /= ctx.attr_denom.at(int(y), x);
        }
      }
    }
  });

  ctx.forward_done = true;
  return ctx;
}

void finalize_flow(const RasterConfig& cfg, FrameRenderContext& ctx,
                   const Intrinsics& k_next) {
  if (!ctx.forward_done) throw UsageError("finalize_flow before forward");
  if (!ctx.has_attr || !ctx.has_attr1)
    throw UsageError("finalize_flow requires both frame attribute renders");
  ctx.has_flow = true;
  ctx.k_next = k_next;
  for (int y = 0; y < cfg.height; ++y) {
    for (int x = 0; x < cfg.width; ++x) {
      if (!ctx.out.coverage.at(y, x) || !(ctx.attr_denom.at(y, x) > 0))
        continue;
      SinglePointProjection p0 = project_point(ctx.k_self, ctx.attr0_out.at(y, x));
      SinglePointProjection p1 = project_point(k_next, ctx.attr1_out.at(y, x));
      if (!p0.valid || !p1.valid) continue;
      ctx.out.flow_valid.at(y, x) = 1;
      ctx.out.flow.at(y, x) = p1.pixel - p0.pixel;
    }
  }
}

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
                                 const ImageV2* flow_bar) {
  if (!ctx.forward_done) throw UsageError("render_backward before forward");
  if (color_bar && !ctx.has_color)
    throw UsageError("color adjoint without a color forward");
  if (flow_bar && !ctx.has_flow)
    throw UsageError("flow adjoint without a flow forward");
  const int h = cfg.height, w = cfg.width;
  const int n = int(cam_verts.size());

  FrameRenderGrads g;
  g.cam_verts_bar.assign(n, Vec3::Zero());
  g.colors_bar.assign(n, Vec3::Zero());
  g.attr0_bar.assign(n, Vec3::Zero());
  g.attr1_bar.assign(n, Vec3::Zero());

  // Flow pixels first: adjoint on flow -> adjoints on the two blended
  // surface points and both intrinsics. Pixel-local, cheap, serial.
  ImageV3 attr0_out_bar, attr1_out_bar;
  if (flow_bar) {
    attr0_out_bar = ImageV3(h, w, Vec3::Zero());
    attr1_out_bar = ImageV3(h, w, Vec3::Zero());
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!ctx.out.flow_valid.at(y, x)) continue;
        const Vec2& fb = flow_bar->at(y, x);
        if (fb.x() == 0 && fb.y() == 0) continue;
        // flow = project(k_next, p1) - project(k_self, p0)
        const Vec3& p1 = ctx.attr1_out.at(y, x);
        double inv_z1 = 1.0 / p1.z();
        Vec3& pb1 = attr1_out_bar.at(y, x);
        pb1.x() += fb.x() * ctx.k_next.focal * inv_z1;
        pb1.y() += fb.y() * ctx.k_next.focal * inv_z1;
        pb1.z() -= ctx.k_next.focal * inv_z1 * inv_z1 *
                   (fb.x() * p1.x() + fb.y() * p1.y());
        g.focal_next_bar += inv_z1 * (fb.x() * p1.x() + fb.y() * p1.y());
        g.principal_next_bar += fb;

        const Vec3& p0 = ctx.attr0_out.at(y, x);
        double inv_z0 = 1.0 / p0.z();
        Vec3& pb0 = attr0_out_bar.at(y, x);
        pb0.x() -= fb.x() * ctx.k_self.focal * inv_z0;
        pb0.y() -= fb.y() * ctx.k_self.focal * inv_z0;
        pb0.z() += ctx.k_self.focal * inv_z0 * inv_z0 *
                   (fb.x() * p0.x() + fb.y() * p0.y());
        g.focal_bar -= inv_z0 * (fb.x() * p0.x() + fb.y() * p0.y());
        g.principal_bar -= fb;
      }
    }
  }

  std::vector<FacePrep> preps = prep_faces(cfg, faces, ctx.proj, ctx.clip);
  const int n_bands = band_count_for(h);
  auto bins = bin_faces(preps, h, n_bands);

  struct BandGrads {
    std::vector<Vec2> clip_bar;
    std::vector<double> depth_bar;
    std::vector<Vec3> colors_bar;
    std::vector<Vec3> attr0_bar;
    std::vector<Vec3> attr1_bar;
  };
  std::vector<BandGrads> bands(n_bands);

  const double z_span = cfg.z_far - cfg.z_near;

  parallel_bands(h, n_bands, [&](int band, int64_t row_begin, int64_t row_end) {
    BandGrads& bg = bands[band];
    bg.clip_bar.assign(n, Vec2::Zero());
    bg.depth_bar.assign(n, 0.0);
    bg.colors_bar.assign(n, Vec3::Zero());
    bg.attr0_bar.assign(n, Vec3::Zero());
    bg.attr1_bar.assign(n, Vec3::Zero());

    for (int fi : bins[band]) {
      const FacePrep& fp = preps[fi];
      const Vec3i& t = faces[fi];
      int y0 = std::max(fp.y0, int(row_begin));
      int y1 = std::min(fp.y1, int(row_end) - 1);
      for (int y = y0; y <= y1; ++y) {
        for (int x = fp.x0; x <= fp.x1; ++x) {
          Vec2 pc = pixel_center_clip(cfg, x, y);
          FacePixelEval e = eval_face_pixel(cfg, pc, fp);
          if (e.culled) continue;

          double delta_bar = 0;
          Vec3 bary_bar = Vec3::Zero();
          double z_interp_bar = 0;

          if (sil_bar) {
            double sb = sil_bar->at(y, x);
            if (sb != 0) {
              // dS/dD_j = prod_{k != j} (1 - D_k), computed in log space.
              double prod_others =
                  std::exp(ctx.sil_logprod.at(y, x) + softplus(e.delta));
              double dsig = sigmoid(e.delta) * sigmoid(-e.delta);
              delta_bar += sb * prod_others * dsig;
            }
          }

          if (color_bar) {
            const Vec3& ob = color_bar->at(y, x);
            if (ob != Vec3::Zero()) {
              double wj = std::exp(e.lognum - ctx.color_m.at(y, x)) /
                          ctx.color_denom.at(y, x);
              if (wj > 0) {
                Vec3 cj = e.bary.lambda[0] * (*vertex_colors)[t[0]] +
                          e.bary.lambda[1] * (*vertex_colors)[t[1]] +
                          e.bary.lambda[2] * (*vertex_colors)[t[2]];
                for (int kk = 0; kk < 3; ++kk) {
                  bg.colors_bar[t[kk]] += wj * e.bary.lambda[kk] * ob;
                  bary_bar[kk] += wj * (*vertex_colors)[t[kk]].dot(ob);
                }
                double s_bar = wj * ob.dot(cj - ctx.out.color.at(y, x));
                // s = log sigmoid(delta) + z_norm / gamma
                delta_bar += s_bar * sigmoid(-e.delta);
                double z_norm_bar = s_bar / cfg.gamma;
                z_interp_bar += -z_norm_bar / z_span;
              }
            }
          }

          if (flow_bar && ctx.attr_denom.at(y, x) > 0) {
            const Vec3& ab0 = attr0_out_bar.at(y, x);
            const Vec3& ab1 = attr1_out_bar.at(y, x);
            if (ab0 != Vec3::Zero() || ab1 != Vec3::Zero()) {
              // Weights and barycentrics detached: gradient reaches only the
              // blended per-vertex surface positions of both frames.
              double wj = std::exp(e.lognum - ctx.attr_m.at(y, x)) /
                          ctx.attr_denom.at(y, x);
              if (wj > 0) {
                for (int kk = 0; kk < 3; ++kk) {
                  bg.attr0_bar[t[kk]] += wj * e.bary.lambda[kk] * ab0;
                  bg.attr1_bar[t[kk]] += wj * e.bary.lambda[kk] * ab1;
                }
              }
            }
          }

          if (delta_bar == 0 && bary_bar == Vec3::Zero() && z_interp_bar == 0)
            continue;

          // z_interp = bary . z
          if (z_interp_bar != 0) {
            for (int kk = 0; kk < 3; ++kk) {
              bg.depth_bar[t[kk]] += z_interp_bar * e.bary.lambda[kk];
              bary_bar[kk] += z_interp_bar * fp.z[kk];
            }
          }

          Vec2 cb[3] = {Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};
          if (delta_bar != 0)
            signed_dist_sq_2d_vjp(e.sd, pc, fp.c[0], fp.c[1], fp.c[2],
                                  delta_bar / cfg.sigma, nullptr, &cb[0],
                                  &cb[1], &cb[2]);
          if (bary_bar != Vec3::Zero())
            barycentric_2d_vjp(e.bary, pc, fp.c[0], fp.c[1], fp.c[2], bary_bar,
                               nullptr, &cb[0], &cb[1], &cb[2]);
          for (int kk = 0; kk < 3; ++kk) bg.clip_bar[t[kk]] += cb[kk];
        }
      }
    }
  });

  // Deterministic reduction in band order.
  std::vector<Vec2> pixel_bar(n, Vec2::Zero());
  std::vector<double> depth_bar(n, 0.0);
  for (int b = 0; b < n_bands; ++b) {
    if (bands[b].clip_bar.empty()) continue;
    for (int i = 0; i < n; ++i) {
      pixel_bar[i] += Vec2(bands[b].clip_bar[i].x() * 2.0 / w,
                           bands[b].clip_bar[i].y() * 2.0 / h);
      depth_bar[i] += bands[b].depth_bar[i];
      g.colors_bar[i] += bands[b].colors_bar[i];
      g.attr0_bar[i] += bands[b].attr0_bar[i];
      g.attr1_bar[i] += bands[b].attr1_bar[i];
    }
  }

  ProjectionGrads pg = project_vjp(k, cam_verts, ctx.proj, pixel_bar,
                                   &depth_bar);
  g.cam_verts_bar = std::move(pg.points_bar);
  g.focal_bar += pg.focal_bar;
  g.principal_bar += pg.principal_bar;
  (void)attr0;
  (void)attr1;
  return g;
}

ImageD render_silhouette(const std::vector<Vec3>& cam_verts,
                         const std::vector<Vec3i>& faces, const Intrinsics& k,
                         const RasterConfig& cfg) {
  return render_frame(cfg, cam_verts, faces, k, nullptr, nullptr)
      .out.silhouette;
}

ImageV3 render_color(const std::vector<Vec3>& cam_verts,
                     const std::vector<Vec3i>& faces,
                     const std::vector<Vec3>& vertex_colors,
                     const Intrinsics& k, const RasterConfig& cfg) {
  return render_frame(cfg, cam_verts, faces, k, &vertex_colors, nullptr)
      .out.color;
}

ImageV2 render_flow(const std::vector<Vec3>& cam_verts_t,
                    const std::vector<Vec3>& cam_verts_t1,
                    const std::vector<Vec3i>& faces, const Intrinsics& k_t,
                    const Intrinsics& k_t1, const RasterConfig& cfg) {
  if (cam_verts_t.size() != cam_verts_t1.size())
    throw ParameterError("render_flow: meshes must share vertex identity");
  FrameRenderContext ctx = render_frame(cfg, cam_verts_t, faces, k_t, nullptr,
                                        &cam_verts_t, &cam_verts_t1);
  finalize_flow(cfg, ctx, k_t1);
  return ctx.out.flow;
}

CorrespondenceMap extract_correspondence(const RasterConfig& cfg,
                                         const FrameRenderContext& ctx,
                                         const std::vector<Vec3>& cam_verts,
                                         const std::vector<Vec3i>& faces,
                                         const Intrinsics& k) {
  if (!ctx.forward_done) throw UsageError("correspondence before forward");
  if (!ctx.has_attr)
    throw UsageError("correspondence requires an attribute render");
  (void)cam_verts;
  (void)k;
  CorrespondenceMap corr;
  corr.height = cfg.height;
  corr.width = cfg.width;
  corr.coverage = ctx.out.coverage;
  corr.offsets.assign(size_t(cfg.height) * cfg.width + 1, 0);

  std::vector<FacePrep> preps = prep_faces(cfg, faces, ctx.proj, ctx.clip);
  // Pixel-major gather; serial for simplicity (used off the hot path).
  std::vector<std::vector<int>> per_pixel_faces(size_t(cfg.height) *
                                                cfg.width);
  for (size_t f = 0; f < preps.size(); ++f) {
    const FacePrep& fp = preps[f];
    if (!fp.valid) continue;
    for (int y = fp.y0; y <= fp.y1; ++y)
      for (int x = fp.x0; x <= fp.x1; ++x)
        if (ctx.out.coverage.at(y, x))
          per_pixel_faces[size_t(y) * cfg.width + x].push_back(int(f));
  }
  for (int y = 0; y < cfg.height; ++y) {
    for (int x = 0; x < cfg.width; ++x) {
      size_t pi = size_t(y) * cfg.width + x;
      Vec2 pc = pixel_center_clip(cfg, x, y);
      for (int fi : per_pixel_faces[pi]) {
        FacePixelEval e = eval_face_pixel(cfg, pc, preps[fi]);
        if (e.culled) continue;
        double wj =
            std::exp(e.lognum - ctx.attr_m.at(y, x)) / ctx.attr_denom.at(y, x);
        if (!(wj > 0)) continue;
        corr.face.push_back(fi);
        corr.weight.push_back(wj);
        corr.bary.push_back(e.bary.lambda);
      }
      corr.offsets[pi + 1] = int(corr.face.size());
    }
  }
  return corr;
}

ImageV3 blend_attribute(const CorrespondenceMap& corr,
                        const std::vector<Vec3>& vertex_attr,
                        const std::vector<Vec3i>& faces) {
  ImageV3 out(corr.height, corr.width, Vec3::Zero());
  for (int y = 0; y < corr.height; ++y) {
    for (int x = 0; x < corr.width; ++x) {
      size_t pi = size_t(y) * corr.width + x;
      Vec3 acc = Vec3::Zero();
      for (int i = corr.offsets[pi]; i < corr.offsets[pi + 1]; ++i) {
        const Vec3i& t = faces[corr.face[i]];
        Vec3 a = corr.bary[i][0] * vertex_attr[t[0]] +
                 corr.bary[i][1] * vertex_attr[t[1]] +
                 corr.bary[i][2] * vertex_attr[t[2]];
        acc += corr.weight[i] * a;
      }
      out.at(y, x) = acc;
    }
  }
  return out;
}

}  // namespace lasr
