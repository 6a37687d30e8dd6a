#include "lasr/optim.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lasr {

ParamRegistry::ParamRegistry(SceneParams* params) : params_(params) {}

namespace {

// Shared segment enumeration over both parameter and gradient storage.
// P and G are SceneParams/SceneGrads (grads may be null for param-only
// visits). The decomposition must stay identical between the two.
template <typename ParamsT, typename GradsT, typename Fn>
void enumerate_segments(ParamsT& p, GradsT* g, const Fn& fn) {
  auto vec3_block = [&](BlockId id, auto& pv, auto* gv) {
    if (!pv.empty())
      fn(id, pv.data()->data(), gv ? gv->data()->data() : nullptr,
         int64_t(pv.size()) * 3);
  };
  vec3_block(BlockId::RestVertices, p.rest_vertices,
             g ? &g->rest_vertices : nullptr);
  vec3_block(BlockId::ColorsRaw, p.colors_raw, g ? &g->colors_raw : nullptr);
  if (!p.skin.centers.empty()) {
    fn(BlockId::SkinCenters, p.skin.centers.data()->data(),
       g ? g->skin_centers.data()->data() : nullptr,
       int64_t(p.skin.centers.size()) * 3);
    fn(BlockId::SkinPrecision, p.skin.precision_raw.data()->data(),
       g ? g->skin_precision.data()->data() : nullptr,
       int64_t(p.skin.precision_raw.size()) * 6);
  }
  if (p.free_weights && p.free_weight_logits.size() > 0)
    fn(BlockId::FreeWeightLogits, p.free_weight_logits.data(),
       g ? g->free_weight_logits.data() : nullptr,
       int64_t(p.free_weight_logits.size()));
  if (p.basis.enabled) {
    fn(BlockId::BasisCoeffs, p.basis.coeffs.data(),
       g ? nullptr : nullptr, int64_t(p.basis.coeffs.size()));
  } else {
    for (size_t t = 0; t < p.frames.size(); ++t) {
      auto& f = p.frames[t];
      auto* gf = g ? &g->frames[t] : nullptr;
      fn(BlockId::FrameTable, &f.log_focal, gf ? &gf->log_focal : nullptr, 1);
      fn(BlockId::FrameTable, f.root_quat_raw.data(),
         gf ? gf->root_quat_raw.data() : nullptr, 4);
      fn(BlockId::FrameTable, f.root_trans.data(),
         gf ? gf->root_trans.data() : nullptr, 3);
      for (size_t b = 0; b < f.bone_quat_raw.size(); ++b) {
        fn(BlockId::FrameTable, f.bone_quat_raw[b].data(),
           gf ? gf->bone_quat_raw[b].data() : nullptr, 4);
        fn(BlockId::FrameTable, f.bone_trans[b].data(),
           gf ? gf->bone_trans[b].data() : nullptr, 3);
      }
    }
  }
  fn(BlockId::Principal, p.principal.data(),
     g ? g->principal.data() : nullptr, 2);
  fn(BlockId::PlaneNormal, p.plane_normal_raw.data(),
     g ? g->plane_normal_raw.data() : nullptr, 3);
}

}  // namespace

void ParamRegistry::visit_params(const SegmentFn& fn) const {
  enumerate_segments(*params_, (SceneGrads*)nullptr,
                     [&](BlockId id, double* p, double*, int64_t n) {
                       fn(id, p, n);
                     });
}

void ParamRegistry::visit_grads(SceneGrads* grads, const SegmentFn& fn) const {
  enumerate_segments(*params_, grads,
                     [&](BlockId id, double*, double* g, int64_t n) {
                       fn(id, g, n);
                     });
}

int64_t ParamRegistry::scalar_count() const {
  int64_t n = 0;
  visit_params([&](BlockId, double*, int64_t c) { n += c; });
  return n;
}

int64_t ParamRegistry::trainable_dof() const {
  const SceneParams& p = *params_;
  int64_t n = p.basis.enabled ? int64_t(p.basis.coeffs.size()) : 0;
  if (!p.basis.enabled) {
    int64_t b = p.bone_count();
    n = int64_t(p.frame_count()) * (1 + 6 + 6 * b);
  }
  n += int64_t(p.rest_vertices.size()) * 3;
  n += int64_t(p.colors_raw.size()) * 3;
  n += int64_t(p.skin.centers.size()) * 9;
  if (p.free_weights) n += int64_t(p.free_weight_logits.size());
  n += 2;  // principal point
  n += 3;  // symmetry plane normal
  return n;
}

void ParamRegistry::apply_constraints() {
  SceneParams& p = *params_;
  if (p.basis.enabled) {
    materialize_frames(&p);
    return;
  }
  for (auto& f : p.frames) {
    f.root_quat_raw = quat_normalize(f.root_quat_raw);
    for (auto& q : f.bone_quat_raw) q = quat_normalize(q);
  }
}

double adam_step(ParamRegistry& registry, SceneGrads& grads,
                 AdamState& state) {
  // gather segments in the shared order
  struct Seg {
    BlockId id;
    double* p;
    double* g;
    int64_t n;
  };
  std::vector<Seg> segs;
  enumerate_segments(*registry.params(), &grads,
                     [&](BlockId id, double* p, double* g, int64_t n) {
                       segs.push_back({id, p, g, n});
                     });
  int64_t total = 0;
  for (const Seg& s : segs) total += s.n;
  if (state.m.size() == 0) state.init(total);
  if (state.m.size() != total)
    throw UsageError("adam state size does not match registry");

  // basis-mode gradients: fold frame grads into coefficient space first
  Eigen::MatrixXd basis_grads;
  if (registry.params()->basis.enabled)
    basis_grads = fold_frame_grads_to_basis(*registry.params(), grads);

  int64_t bad = 0;
  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
  int64_t offset = 0;
  for (const Seg& s : segs) {
    const BlockSettings& bs = registry.settings(s.id);
    double* gptr = s.g;
    if (s.id == BlockId::BasisCoeffs) gptr = basis_grads.data();
    for (int64_t i = 0; i < s.n; ++i) {
      double g = gptr ? gptr[i] : 0.0;
      if (!std::isfinite(g)) {
        g = 0.0;
        ++bad;
      }
      if (bs.frozen) continue;
      int64_t j = offset + i;
      state.m[j] = state.beta1 * state.m[j] + (1 - state.beta1) * g;
      state.v[j] = state.beta2 * state.v[j] + (1 - state.beta2) * g * g;
      double mhat = state.m[j] / bc1;
      double vhat = state.v[j] / bc2;
      s.p[i] -= bs.lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
    offset += s.n;
  }

  double bad_frac = total > 0 ? double(bad) / double(total) : 0.0;
  if (bad_frac > 0.10) {
    if (++state.consecutive_bad_steps >= 3)
      throw OptimizationError(
          "diverged: >10% non-finite gradients for 3 consecutive steps");
  } else {
    state.consecutive_bad_steps = 0;
  }
  registry.apply_constraints();
  return bad_frac;
}

std::vector<int> sample_batch(int n_frames, int batch, std::mt19937_64& rng) {
  if (n_frames < 2) throw ParameterError("sample_batch: need >= 2 frames");
  if (batch < 1) throw ParameterError("sample_batch: batch must be >= 1");
  std::uniform_int_distribution<int> dist(0, n_frames - 2);
  std::vector<int> out(batch);
  for (int& v : out) v = dist(rng);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'L', 'A', 'S', 'R', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

struct Writer {
  std::ofstream out;
  explicit Writer(const std::string& path)
      : out(path, std::ios::binary | std::ios::trunc) {
    if (!out) throw InputError("cannot open checkpoint for write: " + path);
  }
  void bytes(const void* p, size_t n) {
    out.write(reinterpret_cast<const char*>(p), std::streamsize(n));
  }
  void u32(uint32_t v) { bytes(&v, 4); }
  void i64(int64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void doubles(const double* p, size_t n) { bytes(p, 8 * n); }
  void str(const std::string& s) {
    i64(int64_t(s.size()));
    bytes(s.data(), s.size());
  }
};

struct Reader {
  std::ifstream in;
  explicit Reader(const std::string& path) : in(path, std::ios::binary) {
    if (!in) throw InputError("cannot open checkpoint: " + path);
  }
  void bytes(void* p, size_t n) {
    in.read(reinterpret_cast<char*>(p), std::streamsize(n));
    if (!in) throw FormatError("truncated checkpoint");
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
  }
  int64_t i64() {
    int64_t v;
    bytes(&v, 8);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, 8);
    return v;
  }
  void doubles(double* p, size_t n) { bytes(p, 8 * n); }
  std::string str() {
    int64_t n = i64();
    if (n < 0 || n > (1 << 26)) throw FormatError("bad checkpoint string");
    std::string s(size_t(n), '\0');
    bytes(s.data(), size_t(n));
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  Writer w(path);
  w.bytes(kMagic, 8);
  w.u32(kVersion);
  const SceneParams& p = ck.params;
  w.i64(p.vertex_count());
  w.i64(p.bone_count());
  w.i64(p.frame_count());
  w.i64(int64_t(p.faces.size()));
  w.u32(p.free_weights ? 1 : 0);
  w.u32(p.basis.enabled ? 1 : 0);
  w.u32(uint32_t(p.basis.rank));
  for (const Vec3i& f : p.faces) {
    w.u32(uint32_t(f[0]));
    w.u32(uint32_t(f[1]));
    w.u32(uint32_t(f[2]));
  }
  for (const Vec3& v : p.rest_vertices) w.doubles(v.data(), 3);
  for (const Vec3& v : p.colors_raw) w.doubles(v.data(), 3);
  for (const Vec3& v : p.skin.centers) w.doubles(v.data(), 3);
  for (const auto& r : p.skin.precision_raw) w.doubles(r.data(), 6);
  if (p.free_weights)
    w.doubles(p.free_weight_logits.data(), p.free_weight_logits.size());
  for (const auto& f : p.frames) {
    w.f64(f.log_focal);
    w.doubles(f.root_quat_raw.data(), 4);
    w.doubles(f.root_trans.data(), 3);
    for (size_t b = 0; b < f.bone_quat_raw.size(); ++b) {
      w.doubles(f.bone_quat_raw[b].data(), 4);
      w.doubles(f.bone_trans[b].data(), 3);
    }
  }
  w.doubles(p.principal.data(), 2);
  w.doubles(p.plane_normal_raw.data(), 3);
  if (p.basis.enabled) w.doubles(p.basis.coeffs.data(), p.basis.coeffs.size());

  w.i64(ck.adam.m.size());
  w.doubles(ck.adam.m.data(), ck.adam.m.size());
  w.doubles(ck.adam.v.data(), ck.adam.v.size());
  w.i64(ck.adam.step);
  w.f64(ck.adam.beta1);
  w.f64(ck.adam.beta2);
  w.f64(ck.adam.epsilon);
  w.u32(uint32_t(ck.adam.consecutive_bad_steps));
  w.str(ck.rng_state);
  w.u32(uint32_t(ck.stage));
  w.u32(uint32_t(ck.epoch));
  w.i64(ck.global_step);
  if (!w.out) throw InputError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError("bad checkpoint magic");
  if (r.u32() != kVersion) throw FormatError("unsupported checkpoint version");
  Checkpoint ck;
  SceneParams& p = ck.params;
  int64_t n = r.i64();
  int64_t b = r.i64();
  int64_t t = r.i64();
  int64_t m = r.i64();
  p.free_weights = r.u32() != 0;
  p.basis.enabled = r.u32() != 0;
  p.basis.rank = int(r.u32());
  p.faces.resize(m);
  for (auto& f : p.faces) {
    f[0] = int(r.u32());
    f[1] = int(r.u32());
    f[2] = int(r.u32());
  }
  p.rest_vertices.resize(n);
  for (auto& v : p.rest_vertices) r.doubles(v.data(), 3);
  p.colors_raw.resize(n);
  for (auto& v : p.colors_raw) r.doubles(v.data(), 3);
  if (!p.free_weights) {
    p.skin.centers.resize(b);
    for (auto& v : p.skin.centers) r.doubles(v.data(), 3);
    p.skin.precision_raw.resize(b);
    for (auto& pr : p.skin.precision_raw) r.doubles(pr.data(), 6);
  } else {
    p.free_weight_logits = Eigen::MatrixXd::Zero(b, n);
    r.doubles(p.free_weight_logits.data(), p.free_weight_logits.size());
  }
  p.frames.resize(t);
  for (auto& f : p.frames) {
    f.log_focal = r.f64();
    r.doubles(f.root_quat_raw.data(), 4);
    r.doubles(f.root_trans.data(), 3);
    f.bone_quat_raw.resize(b);
    f.bone_trans.resize(b);
    for (int64_t i = 0; i < b; ++i) {
      r.doubles(f.bone_quat_raw[i].data(), 4);
      r.doubles(f.bone_trans[i].data(), 3);
    }
  }
  r.doubles(p.principal.data(), 2);
  r.doubles(p.plane_normal_raw.data(), 3);
  if (p.basis.enabled) {
    p.basis.coeffs = Eigen::MatrixXd::Zero(8 + 7 * b, p.basis.rank);
    r.doubles(p.basis.coeffs.data(), p.basis.coeffs.size());
  }

  int64_t adam_n = r.i64();
  ck.adam.m = Eigen::VectorXd::Zero(adam_n);
  ck.adam.v = Eigen::VectorXd::Zero(adam_n);
  r.doubles(ck.adam.m.data(), adam_n);
  r.doubles(ck.adam.v.data(), adam_n);
  ck.adam.step = r.i64();
  ck.adam.beta1 = r.f64();
  ck.adam.beta2 = r.f64();
  ck.adam.epsilon = r.f64();
  ck.adam.consecutive_bad_steps = int(r.u32());
  ck.rng_state = r.str();
  ck.stage = int(r.u32());
  ck.epoch = int(r.u32());
  ck.global_step = r.i64();
  return ck;
}

}  // namespace lasr
