#include "lasr/mesh.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace lasr {

MeshTopology build_topology(int n_vertices, const std::vector<Vec3i>& faces) {
  MeshTopology topo;
  std::vector<std::set<int>> ring(n_vertices);
  for (const Vec3i& f : faces) {
    for (int k = 0; k < 3; ++k) {
      int i = f[k], j = f[(k + 1) % 3];
      ring[i].insert(j);
      ring[j].insert(i);
    }
  }
  topo.one_ring.resize(n_vertices);
  for (int i = 0; i < n_vertices; ++i) {
    topo.one_ring[i].assign(ring[i].begin(), ring[i].end());
    for (int j : ring[i])
      if (i < j) topo.edges.emplace_back(i, j);
  }
  return topo;
}

Mesh make_icosphere(int subdivisions) {
  if (subdivisions < 0 || subdivisions > 6)
    throw ParameterError("icosphere subdivisions must be in [0,6]");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {
      {-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
      {0, -1, t}, {0, 1, t},  {0, -1, -t}, {0, 1, -t},
      {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (Vec3& v : verts) v.normalize();
  std::vector<Vec3i> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};

  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Vec3 m = (verts[a] + verts[b]).normalized();
      verts.push_back(m);
      int idx = int(verts.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<Vec3i> next;
    next.reserve(faces.size() * 4);
    for (const Vec3i& f : faces) {
      int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }

  Mesh mesh;
  mesh.vertices = std::move(verts);
  mesh.faces = std::move(faces);
  mesh.colors.assign(mesh.vertices.size(), Vec3(0.5, 0.5, 0.5));
  return mesh;
}

std::vector<Vec3> uniform_laplacian(const MeshTopology& topo,
                                    const std::vector<Vec3>& positions) {
  std::vector<Vec3> out(positions.size());
  for (size_t i = 0; i < positions.size(); ++i) {
    const auto& ring = topo.one_ring[i];
    if (ring.empty())
      throw TopologyError("uniform_laplacian: vertex with empty 1-ring");
    Vec3 mean = Vec3::Zero();
    for (int j : ring) mean += positions[j];
    mean /= double(ring.size());
    out[i] = positions[i] - mean;
  }
  return out;
}

std::vector<Vec3> uniform_laplacian_vjp(
    const MeshTopology& topo, const std::vector<Vec3>& residual_bar) {
  std::vector<Vec3> out(residual_bar.size(), Vec3::Zero());
  for (size_t i = 0; i < residual_bar.size(); ++i) {
    const auto& ring = topo.one_ring[i];
    out[i] += residual_bar[i];
    double w = -1.0 / double(ring.size());
    for (int j : ring) out[j] += w * residual_bar[i];
  }
  return out;
}

Mat3 householder_matrix(const Vec3& n) {
  return Mat3::Identity() - 2.0 * n * n.transpose();
}

std::vector<Vec3> householder_reflect(const SymmetryPlane& plane,
                                      const std::vector<Vec3>& points) {
  if (std::abs(plane.normal.norm() - 1.0) > 1e-9)
    throw ParameterError("symmetry plane normal must be unit length");
  Mat3 h = householder_matrix(plane.normal);
  std::vector<Vec3> out(points.size());
  for (size_t i = 0; i < points.size(); ++i) out[i] = h * points[i];
  return out;
}

namespace {

double directional_mean(const std::vector<Vec3>& from, const KdTree& to_tree,
                        const std::vector<Vec3>& to,
                        std::vector<Vec3>* grad_from,
                        std::vector<Vec3>* grad_to) {
  double sum = 0;
  double inv = 1.0 / double(from.size());
  for (size_t i = 0; i < from.size(); ++i) {
    double d2 = 0;
    int j = to_tree.nearest(from[i], &d2);
    double d = std::sqrt(d2);
    sum += d;
    if (d > 0 && (grad_from || grad_to)) {
      Vec3 dir = (from[i] - to[j]) / d * inv;
      if (grad_from) (*grad_from)[i] += dir;
      if (grad_to) (*grad_to)[j] -= dir;
    }
  }
  return sum * inv;
}

}  // namespace

double chamfer_distance(const std::vector<Vec3>& a,
                        const std::vector<Vec3>& b) {
  return chamfer_distance_grad(a, b, nullptr, nullptr);
}

double chamfer_distance_grad(const std::vector<Vec3>& a,
                             const std::vector<Vec3>& b,
                             std::vector<Vec3>* grad_a,
                             std::vector<Vec3>* grad_b) {
  if (a.empty() || b.empty())
    throw ParameterError("chamfer_distance on empty point set");
  if (grad_a) grad_a->assign(a.size(), Vec3::Zero());
  if (grad_b) grad_b->assign(b.size(), Vec3::Zero());
  KdTree ta(a), tb(b);
  // value = 0.5 * (mean_a NN(a->b) + mean_b NN(b->a)); each directional term
  // contributes half its gradient.
  std::vector<Vec3> ga, gb;
  if (grad_a) ga.assign(a.size(), Vec3::Zero());
  if (grad_b) gb.assign(b.size(), Vec3::Zero());
  double fwd = directional_mean(a, tb, b, grad_a ? &ga : nullptr,
                                grad_b ? &gb : nullptr);
  double bwd = directional_mean(b, ta, a, grad_b ? &gb : nullptr,
                                grad_a ? &ga : nullptr);
  if (grad_a)
    for (size_t i = 0; i < a.size(); ++i) (*grad_a)[i] = 0.5 * ga[i];
  if (grad_b)
    for (size_t i = 0; i < b.size(); ++i) (*grad_b)[i] = 0.5 * gb[i];
  return 0.5 * (fwd + bwd);
}

SurfaceSamples sample_surface_indices(const std::vector<Vec3>& vertices,
                                      const std::vector<Vec3i>& faces,
                                      int count, uint64_t seed) {
  if (count < 1) throw ParameterError("sample count must be >= 1");
  std::vector<double> cdf(faces.size());
  double total = 0;
  for (size_t f = 0; f < faces.size(); ++f) {
    const Vec3i& t = faces[f];
    double area = 0.5 * (vertices[t[1]] - vertices[t[0]])
                            .cross(vertices[t[2]] - vertices[t[0]])
                            .norm();
    total += area;
    cdf[f] = total;
  }
  if (!(total > 0)) throw GeometryError("sample_surface: zero-area mesh");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  SurfaceSamples out;
  out.face.resize(count);
  out.bary.resize(count);
  for (int i = 0; i < count; ++i) {
    double u = uni(rng) * total;
    int f = int(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    f = std::min(f, int(faces.size()) - 1);
    double r1 = std::sqrt(uni(rng));
    double r2 = uni(rng);
    out.face[i] = f;
    out.bary[i] = Vec3(1.0 - r1, r1 * (1.0 - r2), r1 * r2);
  }
  return out;
}

std::vector<Vec3> materialize_samples(const std::vector<Vec3>& vertices,
                                      const std::vector<Vec3i>& faces,
                                      const SurfaceSamples& samples) {
  std::vector<Vec3> pts(samples.face.size());
  for (size_t i = 0; i < samples.face.size(); ++i) {
    const Vec3i& t = faces[samples.face[i]];
    const Vec3& b = samples.bary[i];
    pts[i] = b[0] * vertices[t[0]] + b[1] * vertices[t[1]] +
             b[2] * vertices[t[2]];
  }
  return pts;
}

std::vector<Vec3> sample_surface(const Mesh& mesh, int count, uint64_t seed) {
  return materialize_samples(
      mesh.vertices, mesh.faces,
      sample_surface_indices(mesh.vertices, mesh.faces, count, seed));
}

double point_to_surface_chamfer(const Mesh& a, const Mesh& b, int samples,
                                uint64_t seed) {
  return point_to_surface_chamfer_grad(a.vertices, a.faces, b.vertices,
                                       b.faces, samples, seed)
      .value;
}

namespace {

// Mean distance from samples on (va,fa) to the surface (vb,fb), with
// gradients through the sample positions (fixed barycentrics) and the
// closest triangles (envelope theorem).
double surface_directional(const std::vector<Vec3>& va,
                           const std::vector<Vec3i>& fa,
                           const std::vector<Vec3>& vb,
                           const std::vector<Vec3i>& fb, int samples,
                           uint64_t seed, std::vector<Vec3>* grad_a,
                           std::vector<Vec3>* grad_b) {
  SurfaceSamples ss = sample_surface_indices(va, fa, samples, seed);
  std::vector<Vec3> pts = materialize_samples(va, fa, ss);
  TriangleBvh bvh(vb, fb);
  double sum = 0;
  double inv = 1.0 / double(pts.size());
  for (size_t i = 0; i < pts.size(); ++i) {
    TriangleBvh::SurfacePoint sp = bvh.closest_point(pts[i]);
    double d = std::sqrt(sp.dist_sq);
    sum += d;
    if (d > 0) {
      Vec3 dir = (pts[i] - sp.point) / d * inv;
      if (grad_a) {
        const Vec3i& t = fa[ss.face[i]];
        for (int k = 0; k < 3; ++k)
          (*grad_a)[t[k]] += ss.bary[i][k] * dir;
      }
      if (grad_b) {
        const Vec3i& t = fb[sp.face];
        for (int k = 0; k < 3; ++k)
          (*grad_b)[t[k]] -= sp.bary[k] * dir;
      }
    }
  }
  return sum * inv;
}

}  // namespace

SurfaceChamferGrad point_to_surface_chamfer_grad(
    const std::vector<Vec3>& va, const std::vector<Vec3i>& fa,
    const std::vector<Vec3>& vb, const std::vector<Vec3i>& fb, int samples,
    uint64_t seed) {
  SurfaceChamferGrad out;
  out.grad_a.assign(va.size(), Vec3::Zero());
  out.grad_b.assign(vb.size(), Vec3::Zero());
  double fwd = surface_directional(va, fa, vb, fb, samples, seed, &out.grad_a,
                                   &out.grad_b);
  double bwd = surface_directional(vb, fb, va, fa, samples, seed + 1,
                                   &out.grad_b, &out.grad_a);
  for (Vec3& g : out.grad_a) g *= 0.5;
  for (Vec3& g : out.grad_b) g *= 0.5;
  out.value = 0.5 * (fwd + bwd);
  return out;
}

bool is_edge_manifold(int n_vertices, const std::vector<Vec3i>& faces) {
  std::map<std::pair<int, int>, int> edge_count;
  for (const Vec3i& f : faces) {
    for (int k = 0; k < 3; ++k) {
      int i = f[k], j = f[(k + 1) % 3];
      if (i == j || i < 0 || j < 0 || i >= n_vertices || j >= n_vertices)
        return false;
      if (++edge_count[std::minmax(i, j)] > 2) return false;
    }
  }
  return true;
}

bool is_closed(int n_vertices, const std::vector<Vec3i>& faces) {
  std::map<std::pair<int, int>, int> edge_count;
  for (const Vec3i& f : faces)
    for (int k = 0; k < 3; ++k)
      ++edge_count[std::minmax(f[k], f[(k + 1) % 3])];
  for (const auto& [e, c] : edge_count)
    if (c != 2) return false;
  (void)n_vertices;
  return !faces.empty();
}

int euler_characteristic(int n_vertices, const std::vector<Vec3i>& faces) {
  std::set<std::pair<int, int>> edges;
  for (const Vec3i& f : faces)
    for (int k = 0; k < 3; ++k)
      edges.insert(std::minmax(f[k], f[(k + 1) % 3]));
  return n_vertices - int(edges.size()) + int(faces.size());
}

bool has_self_intersections(const std::vector<Vec3>& vertices,
                            const std::vector<Vec3i>& faces) {
  if (faces.empty()) return false;
  // Broad phase: uniform grid over face bounding boxes.
  Vec3 lo = vertices[0], hi = vertices[0];
  for (const Vec3& v : vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  Vec3 ext = (hi - lo).cwiseMax(1e-12);
  int res = std::max(2, int(std::cbrt(double(faces.size()))));
  auto cell_of = [&](const Vec3& p, int k) {
    int c = int((p[k] - lo[k]) / ext[k] * res);
    return std::clamp(c, 0, res - 1);
  };
  std::map<int, std::vector<int>> cells;
  for (size_t f = 0; f < faces.size(); ++f) {
    const Vec3i& t = faces[f];
    Vec3 flo = vertices[t[0]].cwiseMin(vertices[t[1]]).cwiseMin(vertices[t[2]]);
    Vec3 fhi = vertices[t[0]].cwiseMax(vertices[t[1]]).cwiseMax(vertices[t[2]]);
    int x0 = cell_of(flo, 0), x1 = cell_of(fhi, 0);
    int y0 = cell_of(flo, 1), y1 = cell_of(fhi, 1);
    int z0 = cell_of(flo, 2), z1 = cell_of(fhi, 2);
    for (int x = x0; x <= x1; ++x)
      for (int y = y0; y <= y1; ++y)
        for (int z = z0; z <= z1; ++z)
          cells[(x * res + y) * res + z].push_back(int(f));
  }
  auto share_vertex = [&](const Vec3i& a, const Vec3i& b) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (a[i] == b[j]) return true;
    return false;
  };
  std::set<std::pair<int, int>> tested;
  for (const auto& [key, fs] : cells) {
    for (size_t i = 0; i < fs.size(); ++i) {
      for (size_t j = i + 1; j < fs.size(); ++j) {
        int f0 = fs[i], f1 = fs[j];
        if (!tested.insert(std::minmax(f0, f1)).second) continue;
        const Vec3i& ta = faces[f0];
        const Vec3i& tb = faces[f1];
        if (share_vertex(ta, tb)) continue;
        if (triangles_intersect(vertices[ta[0]], vertices[ta[1]],
                                vertices[ta[2]], vertices[tb[0]],
                                vertices[tb[1]], vertices[tb[2]]))
          return true;
      }
    }
  }
  return false;
}

void validate_mesh(const Mesh& mesh) {
  int n = mesh.vertex_count();
  if (mesh.colors.size() != mesh.vertices.size())
    throw ParameterError("mesh colors/vertices size mismatch");
  for (const Vec3i& f : mesh.faces) {
    for (int k = 0; k < 3; ++k)
      if (f[k] < 0 || f[k] >= n)
        throw TopologyError("face index out of range");
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
      throw TopologyError("degenerate face");
  }
  if (!is_edge_manifold(n, mesh.faces))
    throw TopologyError("mesh is not edge-manifold");
  for (const Vec3& c : mesh.colors)
    for (int k = 0; k < 3; ++k)
      if (c[k] < -1e-12 || c[k] > 1 + 1e-12)
        throw ParameterError("vertex color outside [0,1]");
}

void write_obj(const std::string& path, const Mesh& mesh) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw InputError("cannot open for write: " + path);
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& v = mesh.vertices[i];
    const Vec3& c = i < mesh.colors.size() ? mesh.colors[i] : Vec3(0.5, 0.5, 0.5);
    std::fprintf(f, "v %.17g %.17g %.17g %.17g %.17g %.17g\n", v[0], v[1],
                 v[2], c[0], c[1], c[2]);
  }
  for (const Vec3i& t : mesh.faces)
    std::fprintf(f, "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
  std::fclose(f);
}

Mesh read_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open: " + path);
  Mesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      double x, y, z;
      if (!(ss >> x >> y >> z)) throw FormatError("bad OBJ vertex line");
      double r, g, b;
      if (ss >> r >> g >> b)
        mesh.colors.emplace_back(r, g, b);
      else
        mesh.colors.emplace_back(0.5, 0.5, 0.5);
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) {
        size_t slash = tok.find('/');
        if (slash != std::string::npos) tok = tok.substr(0, slash);
        idx.push_back(std::stoi(tok) - 1);
      }
      if (idx.size() != 3) throw FormatError("OBJ faces must be triangles");
      mesh.faces.push_back({idx[0], idx[1], idx[2]});
    }
  }
  return mesh;
}

}  // namespace lasr
