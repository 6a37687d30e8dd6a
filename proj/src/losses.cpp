#include "lasr/losses.h"

#include <cmath>

namespace lasr {

void LossWeights::validate() const {
  for (double v : {beta1, beta2, beta3, beta4, w_shape, w_arap, w_least,
                   w_symm_shape, w_symm_bone, w_cano})
    if (v < 0) throw ParameterError("loss weights must be non-negative");
  if (pyramid_levels < 1) throw ParameterError("pyramid_levels must be >= 1");
  if (symmetry_samples < 1)
    throw ParameterError("symmetry_samples must be >= 1");
}

namespace {

void check_shape(int h, int w, int hh, int ww) {
  if (h != hh || w != ww)
    throw ParameterError("loss input resolution mismatch");
}

template <typename T>
Image<T> box_down2(const Image<T>& in) {
  Image<T> out(in.height / 2, in.width / 2);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.at(y, x) = 0.25 * (in.at(2 * y, 2 * x) + in.at(2 * y, 2 * x + 1) +
                             in.at(2 * y + 1, 2 * x) +
                             in.at(2 * y + 1, 2 * x + 1));
  return out;
}

// Adjoint of box_down2: distribute each coarse adjoint over its 2x2 block.
template <typename T>
void box_down2_vjp(const Image<T>& coarse_bar, Image<T>* fine_bar) {
  for (int y = 0; y < coarse_bar.height; ++y)
    for (int x = 0; x < coarse_bar.width; ++x) {
      T q = 0.25 * coarse_bar.at(y, x);
      fine_bar->at(2 * y, 2 * x) += q;
      fine_bar->at(2 * y, 2 * x + 1) += q;
      fine_bar->at(2 * y + 1, 2 * x) += q;
      fine_bar->at(2 * y + 1, 2 * x + 1) += q;
    }
}

// Masked L1 with gradient on the rendered image only.
double masked_l1(const ImageV3& rendered, const ImageV3& measured,
                 const ImageD& mask, ImageV3* rendered_bar, double scale) {
  double mass = 0;
  for (double m : mask.data) mass += m;
  if (mass <= 0) return 0;
  double sum = 0;
  for (size_t i = 0; i < rendered.data.size(); ++i) {
    double m = mask.data[i];
    if (m == 0) continue;
    Vec3 d = rendered.data[i] - measured.data[i];
    sum += m * d.cwiseAbs().sum();
    if (rendered_bar) {
      Vec3 sign(d.x() > 0 ? 1 : (d.x() < 0 ? -1 : 0),
                d.y() > 0 ? 1 : (d.y() < 0 ? -1 : 0),
                d.z() > 0 ? 1 : (d.z() < 0 ? -1 : 0));
      rendered_bar->data[i] += scale * m / mass * sign;
    }
  }
  return sum / mass;
}

}  // namespace

double silhouette_loss(const ImageD& rendered, const ImageD& measured,
                       double weight, ImageD* rendered_bar) {
  check_shape(rendered.height, rendered.width, measured.height,
              measured.width);
  double n = double(rendered.data.size());
  double sum = 0;
  for (size_t i = 0; i < rendered.data.size(); ++i) {
    double d = rendered.data[i] - measured.data[i];
    sum += d * d;
    if (rendered_bar) rendered_bar->data[i] += weight * 2.0 * d / n;
  }
  return weight * sum / n;
}

double texture_l1_loss(const ImageV3& rendered, const ImageV3& measured,
                       const ImageD& mask, double weight,
                       ImageV3* rendered_bar) {
  check_shape(rendered.height, rendered.width, measured.height,
              measured.width);
  check_shape(rendered.height, rendered.width, mask.height, mask.width);
  return weight * masked_l1(rendered, measured, mask, rendered_bar, weight);
}

double pyramid_l1_loss(const ImageV3& rendered, const ImageV3& measured,
                       const ImageD& mask, int levels, double weight,
                       ImageV3* rendered_bar) {
  check_shape(rendered.height, rendered.width, measured.height,
              measured.width);
  // Build the rendered pyramid, then push level adjoints back down.
  std::vector<ImageV3> rpyr = {rendered}, mpyr = {measured};
  std::vector<ImageD> kpyr = {mask};
  double total = 0;
  std::vector<ImageV3> level_bars;
  int built = 0;
  for (int l = 0; l < levels; ++l) {
    if (rpyr.back().height < 2 || rpyr.back().width < 2) break;
    rpyr.push_back(box_down2(rpyr.back()));
    mpyr.push_back(box_down2(mpyr.back()));
    kpyr.push_back(box_down2(kpyr.back()));
    ++built;
  }
  if (built == 0) return 0;
  double per_level = weight / double(built);
  for (int l = 1; l <= built; ++l) {
    ImageV3 bar(rpyr[l].height, rpyr[l].width, Vec3::Zero());
    total += per_level * masked_l1(rpyr[l], mpyr[l], kpyr[l],
                                   rendered_bar ? &bar : nullptr, per_level);
    level_bars.push_back(std::move(bar));
  }
  if (rendered_bar) {
    // Collapse adjoints from the coarsest level back to full resolution.
    for (int l = built; l >= 1; --l) {
      if (l == 1) {
        box_down2_vjp(level_bars[0], rendered_bar);
      } else {
        box_down2_vjp(level_bars[l - 1], &level_bars[l - 2]);
      }
    }
  }
  return total;
}

double flow_loss(const ImageV2& rendered, const ImageV2& measured,
                 const ImageD& measured_sil, const ImageU8& coverage,
                 const ImageU8& flow_valid, const ImageD* conf, double weight,
                 ImageV2* rendered_bar) {
  check_shape(rendered.height, rendered.width, measured.height,
              measured.width);
  check_shape(rendered.height, rendered.width, measured_sil.height,
              measured_sil.width);
  int count = 0;
  for (size_t i = 0; i < rendered.data.size(); ++i)
    if (measured_sil.data[i] > 0.5 && coverage.data[i] && flow_valid.data[i])
      ++count;
  if (count == 0) return 0;
  double sum = 0;
  for (size_t i = 0; i < rendered.data.size(); ++i) {
    if (!(measured_sil.data[i] > 0.5 && coverage.data[i] &&
          flow_valid.data[i]))
      continue;
    double c = conf ? conf->data[i] : 1.0;
    Vec2 d = rendered.data[i] - measured.data[i];
    double norm = d.norm();
    sum += c * norm;
    if (rendered_bar && norm > 0)
      rendered_bar->data[i] += weight * c / double(count) * d / norm;
  }
  return weight * sum / double(count);
}

ReconLossResult reconstruction_loss(const RenderOutput& render_t,
                                    const RenderOutput& render_t1,
                                    const PairMeasurements& meas,
                                    const LossWeights& w) {
  if (!meas.sil_t || !meas.sil_t1 || !meas.img_t || !meas.img_t1)
    throw ParameterError("reconstruction_loss: missing measurements");
  ReconLossResult r;
  int h = render_t.silhouette.height, wd = render_t.silhouette.width;
  r.sil_bar_t = ImageD(h, wd, 0.0);
  r.sil_bar_t1 = ImageD(h, wd, 0.0);
  r.color_bar_t = ImageV3(h, wd, Vec3::Zero());
  r.color_bar_t1 = ImageV3(h, wd, Vec3::Zero());
  r.flow_bar_fw = ImageV2(h, wd, Vec2::Zero());
  r.flow_bar_bw = ImageV2(h, wd, Vec2::Zero());

  // silhouette and texture terms, averaged over the two frames
  r.sil_term =
      0.5 * (silhouette_loss(render_t.silhouette, *meas.sil_t, w.beta1,
                             &r.sil_bar_t) +
             silhouette_loss(render_t1.silhouette, *meas.sil_t1, w.beta1,
                             &r.sil_bar_t1));
  // the 0.5 frame average needs to reach the adjoints too
  for (auto& v : r.sil_bar_t.data) v *= 0.5;
  for (auto& v : r.sil_bar_t1.data) v *= 0.5;

  double tex = 0, pyr = 0;
  {
    ImageV3 bar_t(h, wd, Vec3::Zero()), bar_t1(h, wd, Vec3::Zero());
    tex = 0.5 * (texture_l1_loss(render_t.color, *meas.img_t, *meas.sil_t,
                                 w.beta3, &bar_t) +
                 texture_l1_loss(render_t1.color, *meas.img_t1, *meas.sil_t1,
                                 w.beta3, &bar_t1));
    if (w.use_pyramid && w.beta4 > 0) {
      pyr = 0.5 * (pyramid_l1_loss(render_t.color, *meas.img_t, *meas.sil_t,
                                   w.pyramid_levels, w.beta4, &bar_t) +
                   pyramid_l1_loss(render_t1.color, *meas.img_t1,
                                   *meas.sil_t1, w.pyramid_levels, w.beta4,
                                   &bar_t1));
    }
    for (size_t i = 0; i < bar_t.data.size(); ++i) {
      r.color_bar_t.data[i] = 0.5 * bar_t.data[i];
      r.color_bar_t1.data[i] = 0.5 * bar_t1.data[i];
    }
  }
  r.tex_term = tex;
  r.pyr_term = pyr;

  int n_flows = (meas.flow_fw ? 1 : 0) + (meas.flow_bw ? 1 : 0);
  if (n_flows > 0) {
    double scale = 1.0 / n_flows;
    double fl = 0;
    if (meas.flow_fw) {
      fl += scale * flow_loss(render_t.flow, *meas.flow_fw, *meas.sil_t,
                              render_t.coverage, render_t.flow_valid,
                              meas.conf_t, w.beta2, &r.flow_bar_fw);
      for (auto& v : r.flow_bar_fw.data) v *= scale;
    }
    if (meas.flow_bw) {
      fl += scale * flow_loss(render_t1.flow, *meas.flow_bw, *meas.sil_t1,
                              render_t1.coverage, render_t1.flow_valid,
                              meas.conf_t1, w.beta2, &r.flow_bar_bw);
      for (auto& v : r.flow_bar_bw.data) v *= scale;
    }
    r.flow_term = fl;
  }

  r.total = r.sil_term + r.flow_term + r.tex_term + r.pyr_term;
  return r;
}

double shape_smoothness(const MeshTopology& topo,
                        const std::vector<Vec3>& rest, double weight,
                        std::vector<Vec3>* rest_bar) {
  std::vector<Vec3> lap = uniform_laplacian(topo, rest);
  double n = double(rest.size());
  double sum = 0;
  for (const Vec3& l : lap) sum += l.squaredNorm();
  if (rest_bar) {
    std::vector<Vec3> lap_bar(lap.size());
    for (size_t i = 0; i < lap.size(); ++i)
      lap_bar[i] = weight * 2.0 / n * lap[i];
    std::vector<Vec3> back = uniform_laplacian_vjp(topo, lap_bar);
    for (size_t i = 0; i < back.size(); ++i) (*rest_bar)[i] += back[i];
  }
  return weight * sum / n;
}

double arap_loss(const std::vector<Vec3>& v_t, const std::vector<Vec3>& v_t1,
                 const MeshTopology& topo, double weight,
                 std::vector<Vec3>* v_t_bar, std::vector<Vec3>* v_t1_bar) {
  if (v_t.size() != v_t1.size())
    throw ParameterError("arap_loss: vertex count mismatch");
  // Directed pairs double each undirected edge with identical summands, so
  // the undirected mean equals the spec's normalized directed sum.
  double count = double(topo.edges.size());
  if (count == 0) return 0;
  double sum = 0;
  for (const auto& [i, j] : topo.edges) {
    Vec3 et = v_t[i] - v_t[j];
    Vec3 et1 = v_t1[i] - v_t1[j];
    double lt = et.norm(), lt1 = et1.norm();
    sum += std::abs(lt - lt1);
    double s = (lt > lt1) ? 1.0 : (lt < lt1 ? -1.0 : 0.0);
    if (v_t_bar && lt > 0) {
      Vec3 g = weight * s / count * et / lt;
      (*v_t_bar)[i] += g;
      (*v_t_bar)[j] -= g;
    }
    if (v_t1_bar && lt1 > 0) {
      Vec3 g = weight * (-s) / count * et1 / lt1;
      (*v_t1_bar)[i] += g;
      (*v_t1_bar)[j] -= g;
    }
  }
  return weight * sum / count;
}

double least_motion_loss(const std::vector<Vec3>& v_t,
                         const std::vector<Vec3>& rest, double weight,
                         std::vector<Vec3>* v_t_bar,
                         std::vector<Vec3>* rest_bar) {
  if (v_t.size() != rest.size())
    throw ParameterError("least_motion_loss: vertex count mismatch");
  double n = double(v_t.size());
  double sum = 0;
  for (size_t i = 0; i < v_t.size(); ++i) {
    Vec3 d = v_t[i] - rest[i];
    double norm = d.norm();
    sum += norm;
    if (norm > 0) {
      Vec3 g = weight / n * d / norm;
      if (v_t_bar) (*v_t_bar)[i] += g;
      if (rest_bar) (*rest_bar)[i] -= g;
    }
  }
  return weight * sum / n;
}

namespace {

// Adjoint of r = H(n) p = p - 2 (n.p) n through the reflection and the
// normalization of the raw normal.
void reflect_vjp(const Vec3& n_unit, const Vec3& p, const Vec3& r_bar,
                 Vec3* p_bar, Vec3* n_unit_bar) {
  if (p_bar) *p_bar += r_bar - 2.0 * n_unit * n_unit.dot(r_bar);
  if (n_unit_bar)
    *n_unit_bar += -2.0 * (p * n_unit.dot(r_bar) + r_bar * n_unit.dot(p));
}

Vec3 normalize_vjp3(const Vec3& raw, const Vec3& g_unit) {
  double n = raw.norm();
  Vec3 u = raw / n;
  return (g_unit - u * u.dot(g_unit)) / n;
}

}  // namespace

SymmetryLossResult symmetry_losses(const std::vector<Vec3>& rest,
                                   const std::vector<Vec3i>& faces,
                                   const std::vector<Vec3>& centers,
                                   const Vec3& normal_raw, int samples,
                                   uint64_t seed, double w_shape,
                                   double w_bone) {
  SymmetryLossResult out;
  out.rest_bar.assign(rest.size(), Vec3::Zero());
  out.centers_bar.assign(centers.size(), Vec3::Zero());
  Vec3 n = normal_raw.normalized();
  Vec3 n_unit_bar = Vec3::Zero();

  if (w_shape > 0 && !rest.empty()) {
    std::vector<Vec3> reflected(rest.size());
    for (size_t i = 0; i < rest.size(); ++i)
      reflected[i] = rest[i] - 2.0 * n.dot(rest[i]) * n;
    SurfaceChamferGrad g = point_to_surface_chamfer_grad(
        rest, faces, reflected, faces, samples, seed);
    out.shape_term = w_shape * g.value;
    for (size_t i = 0; i < rest.size(); ++i) {
      out.rest_bar[i] += w_shape * g.grad_a[i];
      reflect_vjp(n, rest[i], w_shape * g.grad_b[i], &out.rest_bar[i],
                  &n_unit_bar);
    }
  }

  if (w_bone > 0 && !centers.empty()) {
    std::vector<Vec3> reflected(centers.size());
    for (size_t i = 0; i < centers.size(); ++i)
      reflected[i] = centers[i] - 2.0 * n.dot(centers[i]) * n;
    std::vector<Vec3> ga, gb;
    double v = chamfer_distance_grad(centers, reflected, &ga, &gb);
    out.bone_term = w_bone * v;
    for (size_t i = 0; i < centers.size(); ++i) {
      out.centers_bar[i] += w_bone * ga[i];
      reflect_vjp(n, centers[i], w_bone * gb[i], &out.centers_bar[i],
                  &n_unit_bar);
    }
  }

  out.normal_raw_bar = normalize_vjp3(normal_raw, n_unit_bar);
  return out;
}

double canonicalization_loss(const Vec3& normal_raw, const Vec3& n0,
                             double weight, Vec3* normal_raw_bar) {
  Vec3 n = normal_raw.normalized();
  Vec3 d = n - n0;
  if (normal_raw_bar)
    *normal_raw_bar += normalize_vjp3(normal_raw, weight * 2.0 * d);
  return weight * d.squaredNorm();
}

}  // namespace lasr
