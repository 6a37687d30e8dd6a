#pragma once

#include "lasr/core.h"
#include "lasr/geom.h"

#include <string>
#include <utility>
#include <vector>

namespace lasr {

// Triangle mesh with per-vertex colors in [0,1]. Topology is fixed between
// remeshing steps; vertex positions are the optimized quantity.
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> colors;
  std::vector<Vec3i> faces;

  int vertex_count() const { return int(vertices.size()); }
  int face_count() const { return int(faces.size()); }
};

// Plane through the origin with unit normal; offset kept for clarity.
struct SymmetryPlane {
  Vec3 normal = Vec3::UnitX();
  double offset = 0.0;
};

// Cached adjacency shared by the Laplacian and ARAP terms.
struct MeshTopology {
  std::vector<std::vector<int>> one_ring;      // sorted unique neighbors
  std::vector<std::pair<int, int>> edges;      // undirected, first < second
};
MeshTopology build_topology(int n_vertices, const std::vector<Vec3i>& faces);

// Subdivided icosahedron projected onto the unit sphere. N = 10*4^s + 2.
Mesh make_icosphere(int subdivisions);

// Row i = x_i - mean of x over the 1-ring of i. Throws TopologyError if a
// vertex has an empty 1-ring.
std::vector<Vec3> uniform_laplacian(const MeshTopology& topo,
                                    const std::vector<Vec3>& positions);
// Transpose of the (linear) Laplacian operator, for backprop.
std::vector<Vec3> uniform_laplacian_vjp(const MeshTopology& topo,
                                        const std::vector<Vec3>& residual_bar);

Mat3 householder_matrix(const Vec3& unit_normal);
std::vector<Vec3> householder_reflect(const SymmetryPlane& plane,
                                      const std::vector<Vec3>& points);

// Symmetric mean of directional nearest-neighbor mean distances.
double chamfer_distance(const std::vector<Vec3>& a,
                        const std::vector<Vec3>& b);
// Same value; also accumulates d(value)/d(points) with fixed NN assignments.
double chamfer_distance_grad(const std::vector<Vec3>& a,
                             const std::vector<Vec3>& b,
                             std::vector<Vec3>* grad_a,
                             std::vector<Vec3>* grad_b);

// Area-weighted surface samples, reusable across evaluations so gradients can
// flow through the sample positions.
struct SurfaceSamples {
  std::vector<int> face;
  std::vector<Vec3> bary;
};
SurfaceSamples sample_surface_indices(const std::vector<Vec3>& vertices,
                                      const std::vector<Vec3i>& faces,
                                      int count, uint64_t seed);
std::vector<Vec3> materialize_samples(const std::vector<Vec3>& vertices,
                                      const std::vector<Vec3i>& faces,
                                      const SurfaceSamples& samples);
std::vector<Vec3> sample_surface(const Mesh& mesh, int count, uint64_t seed);

// Mean exact point-to-triangle distance in both directions over seeded
// surface samples.
double point_to_surface_chamfer(const Mesh& a, const Mesh& b, int samples,
                                uint64_t seed = 0);

struct SurfaceChamferGrad {
  double value = 0;
  std::vector<Vec3> grad_a;  // d(value)/d(vertex of a)
  std::vector<Vec3> grad_b;
};
SurfaceChamferGrad point_to_surface_chamfer_grad(
    const std::vector<Vec3>& va, const std::vector<Vec3i>& fa,
    const std::vector<Vec3>& vb, const std::vector<Vec3i>& fb, int samples,
    uint64_t seed = 0);

// Structural checks.
bool is_edge_manifold(int n_vertices, const std::vector<Vec3i>& faces);
bool is_closed(int n_vertices, const std::vector<Vec3i>& faces);
int euler_characteristic(int n_vertices, const std::vector<Vec3i>& faces);
bool has_self_intersections(const std::vector<Vec3>& vertices,
                            const std::vector<Vec3i>& faces);
// Throws ParameterError/TopologyError if the Mesh invariants are violated.
void validate_mesh(const Mesh& mesh);

// OBJ with the vertex-color extension (v x y z r g b).
void write_obj(const std::string& path, const Mesh& mesh);
Mesh read_obj(const std::string& path);

}  // namespace lasr
