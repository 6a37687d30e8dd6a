#pragma once

#include "lasr/camera.h"
#include "lasr/core.h"
#include "lasr/io.h"
#include "lasr/mesh.h"

#include <Eigen/Dense>

#include <vector>

namespace lasr {

// Ground-truth synthetic scene: measurements rendered by the engine's own
// renderer at near-hard settings and 2x resolution, then downsampled, plus
// the generating geometry and cameras.
struct SyntheticScene {
  MeasurementSet measurements;
  Mesh gt_rest;
  std::vector<Mesh> gt_posed;  // camera-frame posed mesh per frame
  std::vector<FrameParams> gt_params;
  Eigen::MatrixXd gt_weights;            // B x N (empty when rigid)
  std::vector<std::vector<int>> gt_segments;  // vertex ids per bone segment
  std::vector<int> keypoint_vertices;
  // keypoints[t][k] = (x, y, visible) for keypoint_vertices[k] at frame t
  std::vector<std::vector<Vec3>> keypoints;
};

// Icosphere with a seeded smooth radial perturbation; genus-0 blobby shape.
Mesh make_blob_mesh(int subdivisions, uint64_t seed, double amplitude = 0.18);

// Closed capsule mesh along +y: cylinder of the given half length with
// hemispherical caps.
Mesh make_capsule(double radius, double half_length, int rings, int segments);

// Rigid object under a 90-degree zero-elevation orbit over `frames` frames.
SyntheticScene make_rigid_scene(const Mesh& shape, int frames, uint64_t seed,
                                int resolution = kMeasurementSize);

// Procedurally skinned capsule quadruped: one body bone plus two bones per
// limb with sinusoidal joint angles, same orbit protocol.
SyntheticScene make_articulated_scene(int frames, uint64_t seed,
                                      int resolution = kMeasurementSize,
                                      double hip_amplitude = 0.5,
                                      double knee_amplitude = 0.4);

// Writes measurements plus a gt/ subdirectory (rest + per-frame posed OBJs,
// cameras.json, keypoints/%05d.txt).
void save_scene(const std::string& dir, const SyntheticScene& scene);

}  // namespace lasr
