#include "lasr/synth.h"

#include "lasr/renderer.h"
#include "lasr/skinning.h"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

namespace fs = std::filesystem;

namespace lasr {

namespace {

// Deterministic colorful vertex paint so texture and flow losses have
// signal to lock onto.
Vec3 procedural_color(const Vec3& p) {
  return Vec3(0.5 + 0.45 * std::sin(3.1 * p.x() + 1.7 * p.z()),
              0.5 + 0.45 * std::sin(2.3 * p.y() + 0.9 * p.x() + 2.0),
              0.5 + 0.45 * std::sin(2.7 * p.z() + 1.3 * p.y() + 4.0));
}

Vec4 axis_angle_quat(const Vec3& axis, double angle) {
  double h = 0.5 * angle;
  Vec3 u = axis.normalized() * std::sin(h);
  return Vec4(std::cos(h), u.x(), u.y(), u.z());
}

RasterConfig gt_raster(int size2x) {
  RasterConfig cfg;
  cfg.height = cfg.width = size2x;
  cfg.sigma = 1e-7;
  cfg.gamma = 1e-5;
  cfg.background_color = Vec3::Zero();
  cfg.cull_margin = 0.02;
  return cfg;
}

ImageD down2(const ImageD& in) {
  ImageD out(in.height / 2, in.width / 2);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.at(y, x) = 0.25 * (in.at(2 * y, 2 * x) + in.at(2 * y, 2 * x + 1) +
                             in.at(2 * y + 1, 2 * x) +
                             in.at(2 * y + 1, 2 * x + 1));
  return out;
}

ImageV3 down2(const ImageV3& in) {
  ImageV3 out(in.height / 2, in.width / 2, Vec3::Zero());
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.at(y, x) = 0.25 * (in.at(2 * y, 2 * x) + in.at(2 * y, 2 * x + 1) +
                             in.at(2 * y + 1, 2 * x) +
                             in.at(2 * y + 1, 2 * x + 1));
  return out;
}

// Flow downsample: average vectors and halve them (pixel units shrink).
ImageV2 down2_flow(const ImageV2& in) {
  ImageV2 out(in.height / 2, in.width / 2, Vec2::Zero());
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.at(y, x) = 0.125 * (in.at(2 * y, 2 * x) + in.at(2 * y, 2 * x + 1) +
                              in.at(2 * y + 1, 2 * x) +
                              in.at(2 * y + 1, 2 * x + 1));
  return out;
}

// Renders measurements for a sequence of posed camera-frame meshes sharing
// one topology, and fills the GT bookkeeping.
void render_measurements(SyntheticScene* scene, const Mesh& rest,
                         const std::vector<std::vector<Vec3>>& cam_verts,
                         const std::vector<Intrinsics>& intrinsics2x,
                         int resolution) {
  const int t_count = int(cam_verts.size());
  RasterConfig cfg = gt_raster(2 * resolution);
  scene->measurements.height = scene->measurements.width = resolution;
  scene->measurements.frames.resize(t_count);
  scene->measurements.source_indices.resize(t_count);

  for (int t = 0; t < t_count; ++t) {
    scene->measurements.source_indices[t] = t;
    FrameMeasurement& fm = scene->measurements.frames[t];
    const std::vector<Vec3>* next = t + 1 < t_count ? &cam_verts[t + 1]
                                                    : nullptr;
    const std::vector<Vec3>* prev = t > 0 ? &cam_verts[t - 1] : nullptr;

    FrameRenderContext ctx =
        render_frame(cfg, cam_verts[t], rest.faces, intrinsics2x[t],
                     &rest.colors, next ? &cam_verts[t] : nullptr, next);
    if (next) finalize_flow(cfg, ctx, intrinsics2x[t + 1]);

    ImageD sil = down2(ctx.out.silhouette);
    fm.silhouette = ImageD(resolution, resolution, 0.0);
    for (size_t i = 0; i < sil.data.size(); ++i)
      fm.silhouette.data[i] = sil.data[i] > 0.5 ? 1.0 : 0.0;
    fm.image = down2(ctx.out.color);
    if (next) fm.flow_fw = down2_flow(ctx.out.flow);

    if (prev) {
      FrameRenderContext bw =
          render_frame(cfg, cam_verts[t], rest.faces, intrinsics2x[t],
                       nullptr, &cam_verts[t], prev);
      finalize_flow(cfg, bw, intrinsics2x[t - 1]);
      fm.flow_bw = down2_flow(bw.out.flow);
    }

    // crop metadata: the synthetic frames are already the final crops
    fm.crop_center = Vec2((resolution - 1) / 2.0, (resolution - 1) / 2.0);
    fm.crop_side = resolution;
  }
}

// Keypoint annotations: spread vertices over the mesh, project with the GT
// cameras, and mark visibility by comparing against the rendered surface.
void make_keypoints(SyntheticScene* scene, int resolution) {
  const Mesh& rest = scene->gt_rest;
  int n = rest.vertex_count();
  int k_count = std::min(16, n);
  scene->keypoint_vertices.clear();
  for (int k = 0; k < k_count; ++k)
    scene->keypoint_vertices.push_back(k * n / k_count);

  RasterConfig cfg = gt_raster(2 * resolution);
  scene->keypoints.resize(scene->gt_posed.size());
  for (size_t t = 0; t < scene->gt_posed.size(); ++t) {
    const std::vector<Vec3>& cam = scene->gt_posed[t].vertices;
    Intrinsics k2 = scene->gt_params[t].intrinsics;
    k2.focal *= 2;
    k2.principal = (k2.principal + Vec2(0.5, 0.5)) * 2.0 - Vec2(0.5, 0.5);
    FrameRenderContext ctx =
        render_frame(cfg, cam, rest.faces, k2, nullptr, &cam, nullptr);
    CorrespondenceMap corr =
        extract_correspondence(cfg, ctx, cam, rest.faces, k2);
    ImageV3 surf = blend_attribute(corr, cam, rest.faces);
    Projection proj = project(scene->gt_params[t].intrinsics, cam);
    scene->keypoints[t].resize(scene->keypoint_vertices.size());
    for (size_t k = 0; k < scene->keypoint_vertices.size(); ++k) {
      int vid = scene->keypoint_vertices[k];
      Vec2 px = proj.pixel[vid];
      bool vis = proj.valid[vid];
      if (vis) {
        int x2 = int(std::lround(px.x() * 2 + 0.5));
        int y2 = int(std::lround(px.y() * 2 + 0.5));
        if (x2 < 0 || y2 < 0 || x2 >= cfg.width || y2 >= cfg.height ||
            !corr.coverage.at(y2, x2)) {
          vis = false;
        } else {
          vis = (surf.at(y2, x2) - cam[vid]).norm() < 0.1;
        }
      }
      scene->keypoints[t][k] = Vec3(px.x(), px.y(), vis ? 1.0 : 0.0);
    }
  }
}

std::vector<Intrinsics> double_res(const std::vector<FrameParams>& params) {
  std::vector<Intrinsics> out(params.size());
  for (size_t t = 0; t < params.size(); ++t) {
    out[t].focal = params[t].intrinsics.focal * 2;
    out[t].principal =
        (params[t].intrinsics.principal + Vec2(0.5, 0.5)) * 2.0 -
        Vec2(0.5, 0.5);
  }
  return out;
}

}  // namespace

Mesh make_blob_mesh(int subdivisions, uint64_t seed, double amplitude) {
  Mesh m = make_icosphere(subdivisions);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 2.0 * M_PI);
  // a few random low-frequency waves give a smooth genus-0 blob
  struct Wave {
    Vec3 dir;
    double freq, phase, amp;
  };
  std::vector<Wave> waves(4);
  for (Wave& w : waves) {
    w.dir = Vec3(gauss(rng), gauss(rng), gauss(rng)).normalized();
    w.freq = 1.0 + 0.8 * std::abs(gauss(rng));
    w.phase = uni(rng);
    w.amp = 0.5 + 0.5 * std::abs(gauss(rng));
  }
  double norm = 0;
  for (const Wave& w : waves) norm += w.amp;
  for (Vec3& v : m.vertices) {
    double field = 0;
    for (const Wave& w : waves)
      field += w.amp * std::sin(w.freq * w.dir.dot(v) + w.phase);
    v *= 1.0 + amplitude * field / norm;
  }
  for (size_t i = 0; i < m.vertices.size(); ++i)
    m.colors[i] = procedural_color(m.vertices[i]);
  return m;
}

Mesh make_capsule(double radius, double half_length, int rings,
                  int segments) {
  if (rings < 2 || segments < 3)
    throw ParameterError("capsule needs rings >= 2 and segments >= 3");
  Mesh m;
  // top pole
  m.vertices.emplace_back(0, half_length + radius, 0);
  // top hemisphere rings (pole to equator), then bottom hemisphere rings
  // (equator to pole); the two equators double as the cylinder ends.
  for (int i = 1; i <= rings; ++i) {
    double theta = 0.5 * M_PI * i / rings;
    double y = half_length + radius * std::cos(theta);
    double rr = radius * std::sin(theta);
    for (int j = 0; j < segments; ++j) {
      double phi = 2.0 * M_PI * j / segments;
      m.vertices.emplace_back(rr * std::cos(phi), y, rr * std::sin(phi));
    }
  }
  for (int i = 0; i < rings; ++i) {
    double theta = 0.5 * M_PI * (1.0 - double(i) / rings);
    double y = -half_length - radius * std::cos(theta);
    double rr = radius * std::sin(theta);
    for (int j = 0; j < segments; ++j) {
      double phi = 2.0 * M_PI * j / segments;
      m.vertices.emplace_back(rr * std::cos(phi), y, rr * std::sin(phi));
    }
  }
  // bottom pole
  m.vertices.emplace_back(0, -half_length - radius, 0);

  auto ring_start = [&](int r) { return 1 + r * segments; };
  int n_rings = 2 * rings;
  // top fan
  for (int j = 0; j < segments; ++j)
    m.faces.push_back({0, ring_start(0) + (j + 1) % segments,
                       ring_start(0) + j});
  // strips
  for (int r = 0; r + 1 < n_rings; ++r) {
    for (int j = 0; j < segments; ++j) {
      int a = ring_start(r) + j;
      int b = ring_start(r) + (j + 1) % segments;
      int c = ring_start(r + 1) + j;
      int d = ring_start(r + 1) + (j + 1) % segments;
      m.faces.push_back({a, b, c});
      m.faces.push_back({b, d, c});
    }
  }
  // bottom fan
  int bottom = int(m.vertices.size()) - 1;
  for (int j = 0; j < segments; ++j)
    m.faces.push_back({bottom, ring_start(n_rings - 1) + j,
                       ring_start(n_rings - 1) + (j + 1) % segments});

  m.colors.resize(m.vertices.size());
  for (size_t i = 0; i < m.vertices.size(); ++i)
    m.colors[i] = procedural_color(m.vertices[i]);
  return m;
}

SyntheticScene make_rigid_scene(const Mesh& shape, int frames, uint64_t seed,
                                int resolution) {
  if (frames < 2) throw ParameterError("make_rigid_scene: frames >= 2");
  validate_mesh(shape);
  (void)seed;
  SyntheticScene scene;
  scene.gt_rest = shape;

  double depth = 3.0;
  double focal = 1.18 * resolution;
  scene.gt_params.resize(frames);
  std::vector<std::vector<Vec3>> cam_verts(frames);
  scene.gt_posed.resize(frames);
  for (int t = 0; t < frames; ++t) {
    double angle = (M_PI / 2.0) * t / (frames - 1);
    BonePose root;
    root.rotation = axis_angle_quat(Vec3::UnitY(), angle);
    root.translation = Vec3(0, 0, depth);
    scene.gt_params[t].root = root;
    scene.gt_params[t].intrinsics.focal = focal;
    scene.gt_params[t].intrinsics.principal =
        Vec2((resolution - 1) / 2.0, (resolution - 1) / 2.0);
    cam_verts[t] = rigid_apply(root, shape.vertices);
    scene.gt_posed[t].vertices = cam_verts[t];
    scene.gt_posed[t].faces = shape.faces;
    scene.gt_posed[t].colors = shape.colors;
  }
  render_measurements(&scene, shape, cam_verts, double_res(scene.gt_params),
                      resolution);
  make_keypoints(&scene, resolution);
  return scene;
}

SyntheticScene make_articulated_scene(int frames, uint64_t seed,
                                      int resolution, double hip_amplitude,
                                      double knee_amplitude) {
  if (frames < 2) throw ParameterError("make_articulated_scene: frames >= 2");
  (void)seed;
  SyntheticScene scene;

  // body along x plus four legs hanging in -y
  Mesh body = make_capsule(0.34, 0.48, 4, 12);
  {
    // rotate capsule axis from +y to +x
    Mat3 r;
    r << 0, 1, 0, -1, 0, 0, 0, 0, 1;
    for (Vec3& v : body.vertices) v = r * v;
  }
  struct Leg {
    Vec2 shoulder_xz;
    double phase;
  };
  std::vector<Leg> legs = {{{+0.40, +0.20}, 0.0},
                           {{+0.40, -0.20}, M_PI},
                           {{-0.40, +0.20}, M_PI},
                           {{-0.40, -0.20}, 0.0}};
  double leg_r = 0.11, leg_half = 0.26;
  double shoulder_y = -0.18;

  Mesh rest = body;
  scene.gt_segments.assign(9, {});
  for (int i = 0; i < body.vertex_count(); ++i)
    scene.gt_segments[0].push_back(i);

  std::vector<Vec3> hip_pivots(4), knee_pivots(4);
  for (int l = 0; l < 4; ++l) {
    Mesh leg = make_capsule(leg_r, leg_half, 3, 10);
    Vec3 offset(legs[l].shoulder_xz.x(),
                shoulder_y - (leg_half + leg_r) * 0.85,
                legs[l].shoulder_xz.y());
    int base = rest.vertex_count();
    for (int i = 0; i < leg.vertex_count(); ++i) {
      Vec3 v = leg.vertices[i] + offset;
      rest.vertices.push_back(v);
      rest.colors.push_back(leg.colors[i]);
      // upper/lower split at the capsule midline
      int seg = leg.vertices[i].y() > 0 ? 1 + 2 * l : 2 + 2 * l;
      scene.gt_segments[seg].push_back(base + i);
    }
    for (const Vec3i& f : leg.faces)
      rest.faces.push_back({f[0] + base, f[1] + base, f[2] + base});
    hip_pivots[l] = offset + Vec3(0, leg_half + leg_r * 0.5, 0);
    knee_pivots[l] = offset;
  }
  validate_mesh(rest);
  scene.gt_rest = rest;

  int n = rest.vertex_count();
  int b_count = 9;
  scene.gt_weights = Eigen::MatrixXd::Zero(b_count, n);
  for (int s = 0; s < b_count; ++s)
    for (int vid : scene.gt_segments[s]) scene.gt_weights(s, vid) = 1.0;

  double depth = 3.0;
  double focal = 1.35 * resolution;
  scene.gt_params.resize(frames);
  std::vector<std::vector<Vec3>> cam_verts(frames);
  scene.gt_posed.resize(frames);
  for (int t = 0; t < frames; ++t) {
    double angle = (M_PI / 2.0) * t / (frames - 1);
    FrameParams& fp = scene.gt_params[t];
    fp.root.rotation = axis_angle_quat(Vec3::UnitY(), angle);
    fp.root.translation = Vec3(0, 0, depth);
    fp.intrinsics.focal = focal;
    fp.intrinsics.principal =
        Vec2((resolution - 1) / 2.0, (resolution - 1) / 2.0);

    fp.bones.assign(b_count, BonePose{});
    double wphase = 2.0 * M_PI * t / (frames - 1);
    for (int l = 0; l < 4; ++l) {
      double hip = hip_amplitude * std::sin(wphase + legs[l].phase);
      double knee = knee_amplitude * std::sin(wphase + legs[l].phase + 0.8);
      Vec4 qh = axis_angle_quat(Vec3::UnitZ(), hip);
      BonePose upper;
      upper.rotation = qh;
      upper.translation = hip_pivots[l] - quat_rotate(qh, hip_pivots[l]);
      // knee bends relative to the upper segment
      Vec4 qk = axis_angle_quat(Vec3::UnitZ(), knee);
      Mat3 rh = quat_to_rotation(qh), rk = quat_to_rotation(qk);
      Mat3 rl = rh * rk;
      Vec3 knee_world = upper.apply(knee_pivots[l]);
      // G_lower = T(knee_world) R_h R_k T(-knee_pivot)
      Eigen::Quaterniond ql(rl);
      BonePose lower;
      lower.rotation = Vec4(ql.w(), ql.x(), ql.y(), ql.z());
      lower.translation = knee_world - rl * knee_pivots[l];
      fp.bones[1 + 2 * l] = upper;
      fp.bones[2 + 2 * l] = lower;
    }

    std::vector<Vec3> obj =
        lbs_object(rest.vertices, scene.gt_weights, fp.bones);
    cam_verts[t] = rigid_apply(fp.root, obj);
    scene.gt_posed[t].vertices = cam_verts[t];
    scene.gt_posed[t].faces = rest.faces;
    scene.gt_posed[t].colors = rest.colors;
  }
  render_measurements(&scene, rest, cam_verts, double_res(scene.gt_params),
                      resolution);
  make_keypoints(&scene, resolution);
  return scene;
}

void save_scene(const std::string& dir, const SyntheticScene& scene) {
  save_measurements(dir, scene.measurements);
  fs::path gt = fs::path(dir) / "gt";
  fs::create_directories(gt / "keypoints");
  write_obj((gt / "rest.obj").string(), scene.gt_rest);
  for (size_t t = 0; t < scene.gt_posed.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "posed_%05zu.obj", t);
    write_obj((gt / name).string(), scene.gt_posed[t]);
  }
  nlohmann::json cams = nlohmann::json::array();
  for (const FrameParams& fp : scene.gt_params) {
    cams.push_back({{"focal", fp.intrinsics.focal},
                    {"px", fp.intrinsics.principal.x()},
                    {"py", fp.intrinsics.principal.y()},
                    {"quat", {fp.root.rotation[0], fp.root.rotation[1],
                              fp.root.rotation[2], fp.root.rotation[3]}},
                    {"trans", {fp.root.translation[0], fp.root.translation[1],
                               fp.root.translation[2]}}});
  }
  std::ofstream cf(gt / "cameras.json");
  cf << cams.dump(2) << "\n";
  for (size_t t = 0; t < scene.keypoints.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "%05zu.txt", t);
    std::ofstream kf(gt / "keypoints" / name);
    for (size_t k = 0; k < scene.keypoints[t].size(); ++k) {
      const Vec3& kp = scene.keypoints[t][k];
      kf << k << " " << kp.x() << " " << kp.y() << " "
         << (kp.z() > 0.5 ? 1 : 0) << "\n";
    }
  }
}

}  // namespace lasr
