#pragma once

#include "lasr/core.h"
#include "lasr/scene.h"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace lasr {

enum class BlockId {
  RestVertices = 0,
  ColorsRaw,
  SkinCenters,
  SkinPrecision,
  FreeWeightLogits,
  FrameTable,
  BasisCoeffs,
  Principal,
  PlaneNormal,
  kCount
};

struct BlockSettings {
  bool frozen = false;
  double lr = 5e-3;
};

// Flat views over the trainable storage of a SceneParams, in a fixed block
// and segment order shared by the optimizer state and the checkpoints.
// Quaternions are stored as 4 raw scalars; trainable_dof counts them as 3.
class ParamRegistry {
 public:
  explicit ParamRegistry(SceneParams* params);

  using SegmentFn = std::function<void(BlockId, double*, int64_t)>;
  void visit_params(const SegmentFn& fn) const;
  void visit_grads(SceneGrads* grads, const SegmentFn& fn) const;

  int64_t scalar_count() const;   // raw doubles in trainable storage
  int64_t trainable_dof() const;  // unit-quaternion storage counts 3 dof

  BlockSettings& settings(BlockId id) { return settings_[int(id)]; }
  const BlockSettings& settings(BlockId id) const {
    return settings_[int(id)];
  }
  void freeze(BlockId id, bool frozen = true) {
    settings_[int(id)].frozen = frozen;
  }
  void set_lr_all(double lr) {
    for (auto& s : settings_) s.lr = lr;
  }

  SceneParams* params() const { return params_; }

  // Renormalizes quaternion storage and rematerializes basis-driven frames;
  // called after each optimizer step.
  void apply_constraints();

 private:
  SceneParams* params_;
  std::array<BlockSettings, size_t(BlockId::kCount)> settings_;
};

struct AdamState {
  Eigen::VectorXd m, v;
  int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int consecutive_bad_steps = 0;

  void init(int64_t n) {
    m = Eigen::VectorXd::Zero(n);
    v = Eigen::VectorXd::Zero(n);
    step = 0;
    consecutive_bad_steps = 0;
  }
};

// One Adam update. Non-finite gradient entries are zeroed and counted; three
// consecutive steps with more than 10% bad entries raise OptimizationError.
// Returns the fraction of non-finite entries in this step.
double adam_step(ParamRegistry& registry, SceneGrads& grads, AdamState& state);

// Uniformly sampled consecutive frame-pair start indices, seeded.
std::vector<int> sample_batch(int n_frames, int batch, std::mt19937_64& rng);

// Steps per epoch: one expected pass over the T-1 consecutive pairs.
inline int steps_per_epoch(int n_frames, int batch) {
  return int((int64_t(n_frames) - 1 + batch - 1) / batch);
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned little-endian binary with all trainable blocks,
// optimizer state and RNG state, so a resumed run is bit-exact.
// ---------------------------------------------------------------------------

struct Checkpoint {
  SceneParams params;
  AdamState adam;
  std::string rng_state;
  int stage = 0;
  int epoch = 0;
  int64_t global_step = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lasr
