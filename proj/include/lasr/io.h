#pragma once

#include "lasr/core.h"

#include <optional>
#include <string>
#include <vector>

namespace lasr {

// One preprocessed frame: 256x256 crop around the object with flows
// re-expressed in cropped-frame pixels.
struct FrameMeasurement {
  ImageV3 image;       // RGB in [0,1]
  ImageD silhouette;   // binary 0/1
  ImageV2 flow_fw;     // u+_t (to the next retained frame); may be empty
  ImageV2 flow_bw;     // u-_t (to the previous retained frame); may be empty
  ImageD confidence;   // per-pixel flow confidence; may be empty
  Vec2 crop_center = Vec2::Zero();  // original-image pixel coordinates
  double crop_side = 0;             // original-image pixels

  bool has_flow_fw() const { return !flow_fw.data.empty(); }
  bool has_flow_bw() const { return !flow_bw.data.empty(); }
  bool has_confidence() const { return !confidence.data.empty(); }
};

struct MeasurementSet {
  int height = 0, width = 0;
  std::vector<FrameMeasurement> frames;
  std::vector<int> source_indices;  // raw frame index per retained frame

  int frame_count() const { return int(frames.size()); }
};

constexpr int kMeasurementSize = 256;
constexpr double kCropFactor = 1.2;
constexpr double kFlowSkipThreshold = 0.05;  // clip-space magnitude

// ---------------------------------------------------------------------------
// Image and flow file formats.
// ---------------------------------------------------------------------------

void write_png_gray(const std::string& path, const ImageD& img);
void write_png_rgb(const std::string& path, const ImageV3& img);
ImageD read_png_gray(const std::string& path);   // [0,1]
ImageV3 read_png_rgb(const std::string& path);   // [0,1]

// Middlebury .flo: float magic 202021.25, int32 width/height, row-major
// interleaved float32 (u,v), little-endian.
void write_flo(const std::string& path, const ImageV2& flow);
ImageV2 read_flo(const std::string& path);

// ---------------------------------------------------------------------------
// Preprocessing.
// ---------------------------------------------------------------------------

// Greedy frame retention: frame 0 is kept; subsequent frames are kept once
// the accumulated mean in-mask flow magnitude since the last kept frame
// reaches `threshold` in [-1,1]-normalized coordinates. flows[t] is the
// forward flow t -> t+1 (flows.size() == frames - 1).
std::vector<int> select_frames(const std::vector<ImageV2>& flows,
                               const std::vector<ImageD>& masks,
                               double threshold = kFlowSkipThreshold);

// Crop around the mask bounding box (side = 1.2 x longest edge), resize to
// 256x256, and re-express flows in cropped-frame pixels using both frames'
// crop parameters. Inputs are the already-retained frames; flow_fw[i] maps
// retained frame i to i+1 in original coordinates. Frames with an empty
// mask throw InputError (callers reject them beforehand).
MeasurementSet preprocess(const std::vector<ImageV3>& frames,
                          const std::vector<ImageD>& masks,
                          const std::vector<ImageV2>& flows_fw,
                          const std::vector<ImageV2>* flows_bw = nullptr,
                          const std::vector<ImageD>* confidences = nullptr);

// Maps a cropped-frame pixel back to original-image coordinates.
Vec2 uncrop_point(const FrameMeasurement& frame, const Vec2& cropped,
                  int out_size = kMeasurementSize);

// ---------------------------------------------------------------------------
// Measurement directory convention: frames/%05d.png, masks/%05d.png,
// flow_fw/%05d.flo, flow_bw/%05d.flo, conf/%05d.png (+ meta.json).
// ---------------------------------------------------------------------------

void save_measurements(const std::string& dir, const MeasurementSet& ms);
MeasurementSet load_measurements(const std::string& dir);

// Normalizes each frame's confidence map to mean 1 over its silhouette;
// applied by load_measurements and preprocess.
void normalize_confidence(MeasurementSet* ms);

}  // namespace lasr
