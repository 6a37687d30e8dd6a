#include "lasr/camera.h"

namespace lasr {

Projection project(const Intrinsics& k, const std::vector<Vec3>& points) {
  if (k.focal <= 0) throw ParameterError("focal length must be positive");
  Projection out;
  out.pixel.resize(points.size());
  out.depth.resize(points.size());
  out.valid.resize(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    const Vec3& p = points[i];
    out.depth[i] = p.z();
    out.valid[i] = p.z() > kNearPlane;
    double z = out.valid[i] ? p.z() : kNearPlane;
    out.pixel[i] = Vec2(k.focal * p.x() / z + k.principal.x(),
                        k.focal * p.y() / z + k.principal.y());
  }
  return out;
}

ProjectionGrads project_vjp(const Intrinsics& k,
                            const std::vector<Vec3>& points,
                            const Projection& proj,
                            const std::vector<Vec2>& pixel_bar,
                            const std::vector<double>* depth_bar) {
  ProjectionGrads g;
  g.points_bar.assign(points.size(), Vec3::Zero());
  for (size_t i = 0; i < points.size(); ++i) {
    if (depth_bar) g.points_bar[i].z() += (*depth_bar)[i];
    if (!proj.valid[i]) continue;
    const Vec3& p = points[i];
    const Vec2& pb = pixel_bar[i];
    double inv_z = 1.0 / p.z();
    g.points_bar[i].x() += pb.x() * k.focal * inv_z;
    g.points_bar[i].y() += pb.y() * k.focal * inv_z;
    g.points_bar[i].z() -=
        k.focal * inv_z * inv_z * (pb.x() * p.x() + pb.y() * p.y());
    g.focal_bar += inv_z * (pb.x() * p.x() + pb.y() * p.y());
    g.principal_bar += pb;
  }
  return g;
}

FlowResult correspondence_flow(const Intrinsics& k_t, const Intrinsics& k_t1,
                               const std::vector<Vec3>& points_t,
                               const std::vector<Vec3>& points_t1) {
  if (points_t.size() != points_t1.size())
    throw ParameterError("correspondence_flow: point count mismatch");
  Projection pt = project(k_t, points_t);
  Projection pt1 = project(k_t1, points_t1);
  FlowResult out;
  out.flow.resize(points_t.size());
  out.valid.resize(points_t.size());
  for (size_t i = 0; i < points_t.size(); ++i) {
    out.valid[i] = pt.valid[i] && pt1.valid[i];
    out.flow[i] = pt1.pixel[i] - pt.pixel[i];
  }
  return out;
}

FlowGrads correspondence_flow_vjp(const Intrinsics& k_t,
                                  const Intrinsics& k_t1,
                                  const std::vector<Vec3>& points_t,
                                  const std::vector<Vec3>& points_t1,
                                  const std::vector<Vec2>& flow_bar) {
  Projection pt = project(k_t, points_t);
  Projection pt1 = project(k_t1, points_t1);
  std::vector<Vec2> bar_t(points_t.size(), Vec2::Zero());
  std::vector<Vec2> bar_t1(points_t.size(), Vec2::Zero());
  for (size_t i = 0; i < points_t.size(); ++i) {
    if (!(pt.valid[i] && pt1.valid[i])) continue;
    bar_t1[i] = flow_bar[i];
    bar_t[i] = -flow_bar[i];
  }
  FlowGrads g;
  g.at_t = project_vjp(k_t, points_t, pt, bar_t);
  g.at_t1 = project_vjp(k_t1, points_t1, pt1, bar_t1);
  return g;
}

}  // namespace lasr
