#include "lasr/io.h"

#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace lasr {

namespace {

uint8_t to_byte(double v) {
  return uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_png(const std::string& path, const std::vector<uint8_t>& bytes,
               int h, int w, int channels) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = w;
  img.height = h;
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0,
                               nullptr))
    throw InputError("png write failed: " + path + ": " + img.message);
}

std::vector<uint8_t> read_png(const std::string& path, int channels, int* h,
                              int* w) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw FormatError("png read failed: " + path + ": " + img.message);
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<uint8_t> bytes(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr))
    throw FormatError("png decode failed: " + path + ": " + img.message);
  *h = img.height;
  *w = img.width;
  return bytes;
}

}  // namespace

void write_png_gray(const std::string& path, const ImageD& img) {
  std::vector<uint8_t> bytes(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) bytes[i] = to_byte(img.data[i]);
  write_png(path, bytes, img.height, img.width, 1);
}

void write_png_rgb(const std::string& path, const ImageV3& img) {
  std::vector<uint8_t> bytes(img.data.size() * 3);
  for (size_t i = 0; i < img.data.size(); ++i) {
    bytes[3 * i + 0] = to_byte(img.data[i][0]);
    bytes[3 * i + 1] = to_byte(img.data[i][1]);
    bytes[3 * i + 2] = to_byte(img.data[i][2]);
  }
  write_png(path, bytes, img.height, img.width, 3);
}

ImageD read_png_gray(const std::string& path) {
  int h, w;
  std::vector<uint8_t> bytes = read_png(path, 1, &h, &w);
  ImageD img(h, w);
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = bytes[i] / 255.0;
  return img;
}

ImageV3 read_png_rgb(const std::string& path) {
  int h, w;
  std::vector<uint8_t> bytes = read_png(path, 3, &h, &w);
  ImageV3 img(h, w, Vec3::Zero());
  for (size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = Vec3(bytes[3 * i] / 255.0, bytes[3 * i + 1] / 255.0,
                       bytes[3 * i + 2] / 255.0);
  return img;
}

// ---------------------------------------------------------------------------
// Middlebury .flo
// ---------------------------------------------------------------------------

constexpr float kFloMagic = 202021.25f;

void write_flo(const std::string& path, const ImageV2& flow) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw InputError("cannot open for write: " + path);
  int32_t w = flow.width, h = flow.height;
  std::fwrite(&kFloMagic, sizeof(float), 1, f);
  std::fwrite(&w, sizeof(int32_t), 1, f);
  std::fwrite(&h, sizeof(int32_t), 1, f);
  std::vector<float> row(size_t(w) * 2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      row[2 * x] = float(flow.at(y, x).x());
      row[2 * x + 1] = float(flow.at(y, x).y());
    }
    std::fwrite(row.data(), sizeof(float), row.size(), f);
  }
  std::fclose(f);
}

ImageV2 read_flo(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw InputError("cannot open: " + path);
  auto fail = [&](const std::string& msg) {
    std::fclose(f);
    throw FormatError("flo: " + msg + ": " + path);
  };
  float magic;
  int32_t w, h;
  if (std::fread(&magic, sizeof(float), 1, f) != 1) fail("truncated header");
  if (magic != kFloMagic) fail("bad magic");
  if (std::fread(&w, sizeof(int32_t), 1, f) != 1 ||
      std::fread(&h, sizeof(int32_t), 1, f) != 1)
    fail("truncated header");
  if (w < 1 || h < 1 || w > 100000 || h > 100000) fail("implausible size");
  ImageV2 flow(h, w, Vec2::Zero());
  std::vector<float> row(size_t(w) * 2);
  for (int y = 0; y < h; ++y) {
    if (std::fread(row.data(), sizeof(float), row.size(), f) != row.size())
      fail("truncated payload");
    for (int x = 0; x < w; ++x)
      flow.at(y, x) = Vec2(row[2 * x], row[2 * x + 1]);
  }
  if (std::fgetc(f) != EOF) fail("trailing bytes");
  std::fclose(f);
  return flow;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

std::vector<int> select_frames(const std::vector<ImageV2>& flows,
                               const std::vector<ImageD>& masks,
                               double threshold) {
  if (masks.size() < 2) throw InputError("select_frames: need >= 2 frames");
  if (flows.size() + 1 != masks.size())
    throw ParameterError("select_frames: need one flow per transition");
  std::vector<int> kept = {0};
  double acc = 0;
  for (size_t t = 1; t < masks.size(); ++t) {
    const ImageV2& fl = flows[t - 1];
    const ImageD& mk = masks[t - 1];
    double sum = 0;
    int count = 0;
    for (int y = 0; y < fl.height; ++y)
      for (int x = 0; x < fl.width; ++x)
        if (mk.at(y, x) > 0.5) {
          const Vec2& u = fl.at(y, x);
          sum += Vec2(2.0 * u.x() / fl.width, 2.0 * u.y() / fl.height).norm();
          ++count;
        }
    acc += count > 0 ? sum / count : 0.0;
    if (acc >= threshold) {
      kept.push_back(int(t));
      acc = 0;
    }
  }
  if (kept.size() < 2)
    throw InputError("select_frames: fewer than 2 frames retained");
  return kept;
}

namespace {

struct CropParams {
  Vec2 center;
  double side;
  double scale;  // out_size / side
  Vec2 origin;   // center - side/2
};

CropParams crop_from_mask(const ImageD& mask) {
  int x0 = mask.width, x1 = -1, y0 = mask.height, y1 = -1;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x) > 0.5) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
  if (x1 < x0) throw InputError("preprocess: empty mask");
  CropParams c;
  c.center = Vec2((x0 + x1) / 2.0, (y0 + y1) / 2.0);
  c.side = kCropFactor * std::max(x1 - x0 + 1, y1 - y0 + 1);
  c.scale = kMeasurementSize / c.side;
  c.origin = c.center - Vec2(c.side / 2.0, c.side / 2.0);
  return c;
}

double sample_bilinear(const ImageD& img, double x, double y) {
  int x0 = int(std::floor(x)), y0 = int(std::floor(y));
  double fx = x - x0, fy = y - y0;
  auto px = [&](int yy, int xx) -> double {
    if (xx < 0 || yy < 0 || xx >= img.width || yy >= img.height) return 0.0;
    return img.at(yy, xx);
  };
  return (1 - fx) * (1 - fy) * px(y0, x0) + fx * (1 - fy) * px(y0, x0 + 1) +
         (1 - fx) * fy * px(y0 + 1, x0) + fx * fy * px(y0 + 1, x0 + 1);
}

Vec3 sample_bilinear(const ImageV3& img, double x, double y) {
  int x0 = int(std::floor(x)), y0 = int(std::floor(y));
  double fx = x - x0, fy = y - y0;
  auto px = [&](int yy, int xx) -> Vec3 {
    if (xx < 0 || yy < 0 || xx >= img.width || yy >= img.height)
      return Vec3::Zero();
    return img.at(yy, xx);
  };
  return (1 - fx) * (1 - fy) * px(y0, x0) + fx * (1 - fy) * px(y0, x0 + 1) +
         (1 - fx) * fy * px(y0 + 1, x0) + fx * fy * px(y0 + 1, x0 + 1);
}

Vec2 sample_bilinear(const ImageV2& img, double x, double y) {
  int x0 = int(std::floor(x)), y0 = int(std::floor(y));
  double fx = x - x0, fy = y - y0;
  auto px = [&](int yy, int xx) -> Vec2 {
    if (xx < 0 || yy < 0 || xx >= img.width || yy >= img.height)
      return Vec2::Zero();
    return img.at(yy, xx);
  };
  return (1 - fx) * (1 - fy) * px(y0, x0) + fx * (1 - fy) * px(y0, x0 + 1) +
         (1 - fx) * fy * px(y0 + 1, x0) + fx * fy * px(y0 + 1, x0 + 1);
}

}  // namespace

MeasurementSet preprocess(const std::vector<ImageV3>& frames,
                          const std::vector<ImageD>& masks,
                          const std::vector<ImageV2>& flows_fw,
                          const std::vector<ImageV2>* flows_bw,
                          const std::vector<ImageD>* confidences) {
  if (frames.size() != masks.size())
    throw ParameterError("preprocess: frames/masks count mismatch");
  if (frames.empty()) throw InputError("preprocess: no frames");
  const int n = int(frames.size());
  const int out = kMeasurementSize;

  std::vector<CropParams> crops(n);
  for (int t = 0; t < n; ++t) crops[t] = crop_from_mask(masks[t]);

  MeasurementSet ms;
  ms.height = ms.width = out;
  ms.frames.resize(n);
  ms.source_indices.resize(n);
  for (int t = 0; t < n; ++t) {
    ms.source_indices[t] = t;
    FrameMeasurement& fm = ms.frames[t];
    const CropParams& c = crops[t];
    fm.crop_center = c.center;
    fm.crop_side = c.side;
    fm.image = ImageV3(out, out, Vec3::Zero());
    fm.silhouette = ImageD(out, out, 0.0);
    for (int y = 0; y < out; ++y) {
      for (int x = 0; x < out; ++x) {
        // crop pixel center -> original image coordinates
        double ox = (x + 0.5) / c.scale + c.origin.x() - 0.5;
        double oy = (y + 0.5) / c.scale + c.origin.y() - 0.5;
        fm.image.at(y, x) = sample_bilinear(frames[t], ox, oy);
        fm.silhouette.at(y, x) =
            sample_bilinear(masks[t], ox, oy) > 0.5 ? 1.0 : 0.0;
      }
    }
    bool has_fw = t + 1 < n && t < int(flows_fw.size()) &&
                  !flows_fw[t].data.empty();
    if (has_fw) {
      fm.flow_fw = ImageV2(out, out, Vec2::Zero());
      const CropParams& cn = crops[t + 1];
      for (int y = 0; y < out; ++y) {
        for (int x = 0; x < out; ++x) {
          double ox = (x + 0.5) / c.scale + c.origin.x() - 0.5;
          double oy = (y + 0.5) / c.scale + c.origin.y() - 0.5;
          Vec2 u = sample_bilinear(flows_fw[t], ox, oy);
          // original target position, re-expressed in the next frame's crop
          Vec2 tgt(ox + u.x(), oy + u.y());
          Vec2 tgt_crop((tgt.x() + 0.5 - cn.origin.x()) * cn.scale - 0.5,
                        (tgt.y() + 0.5 - cn.origin.y()) * cn.scale - 0.5);
          fm.flow_fw.at(y, x) = tgt_crop - Vec2(x, y);
        }
      }
    }
    bool has_bw = flows_bw && t > 0 && t < int(flows_bw->size()) &&
                  !(*flows_bw)[t].data.empty();
    if (has_bw) {
      fm.flow_bw = ImageV2(out, out, Vec2::Zero());
      const CropParams& cp = crops[t - 1];
      for (int y = 0; y < out; ++y) {
        for (int x = 0; x < out; ++x) {
          double ox = (x + 0.5) / c.scale + c.origin.x() - 0.5;
          double oy = (y + 0.5) / c.scale + c.origin.y() - 0.5;
          Vec2 u = sample_bilinear((*flows_bw)[t], ox, oy);
          Vec2 tgt(ox + u.x(), oy + u.y());
          Vec2 tgt_crop((tgt.x() + 0.5 - cp.origin.x()) * cp.scale - 0.5,
                        (tgt.y() + 0.5 - cp.origin.y()) * cp.scale - 0.5);
          fm.flow_bw.at(y, x) = tgt_crop - Vec2(x, y);
        }
      }
    }
    if (confidences && t < int(confidences->size()) &&
        !(*confidences)[t].data.empty()) {
      fm.confidence = ImageD(out, out, 0.0);
      for (int y = 0; y < out; ++y)
        for (int x = 0; x < out; ++x) {
          double ox = (x + 0.5) / c.scale + c.origin.x() - 0.5;
          double oy = (y + 0.5) / c.scale + c.origin.y() - 0.5;
          fm.confidence.at(y, x) = sample_bilinear((*confidences)[t], ox, oy);
        }
    }
  }
  normalize_confidence(&ms);
  return ms;
}

Vec2 uncrop_point(const FrameMeasurement& frame, const Vec2& cropped,
                  int out_size) {
  double scale = out_size / frame.crop_side;
  Vec2 origin = frame.crop_center - Vec2(frame.crop_side / 2.0,
                                         frame.crop_side / 2.0);
  return Vec2((cropped.x() + 0.5) / scale + origin.x() - 0.5,
              (cropped.y() + 0.5) / scale + origin.y() - 0.5);
}

void normalize_confidence(MeasurementSet* ms) {
  for (FrameMeasurement& fm : ms->frames) {
    if (!fm.has_confidence()) continue;
    double sum = 0;
    int count = 0;
    for (size_t i = 0; i < fm.confidence.data.size(); ++i)
      if (fm.silhouette.data[i] > 0.5) {
        sum += fm.confidence.data[i];
        ++count;
      }
    if (count == 0 || sum <= 0) continue;
    double scale = double(count) / sum;
    for (double& v : fm.confidence.data) v *= scale;
  }
}

// ---------------------------------------------------------------------------
// Measurement directories
// ---------------------------------------------------------------------------

namespace {

std::string frame_name(int idx) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d", idx);
  return buf;
}

}  // namespace

void save_measurements(const std::string& dir, const MeasurementSet& ms) {
  fs::create_directories(fs::path(dir) / "frames");
  fs::create_directories(fs::path(dir) / "masks");
  fs::create_directories(fs::path(dir) / "flow_fw");
  fs::create_directories(fs::path(dir) / "flow_bw");
  fs::create_directories(fs::path(dir) / "conf");
  nlohmann::json meta;
  meta["height"] = ms.height;
  meta["width"] = ms.width;
  meta["source_indices"] = ms.source_indices;
  meta["crops"] = nlohmann::json::array();
  for (int t = 0; t < ms.frame_count(); ++t) {
    const FrameMeasurement& fm = ms.frames[t];
    std::string name = frame_name(t);
    write_png_rgb((fs::path(dir) / "frames" / (name + ".png")).string(),
                  fm.image);
    write_png_gray((fs::path(dir) / "masks" / (name + ".png")).string(),
                   fm.silhouette);
    if (fm.has_flow_fw())
      write_flo((fs::path(dir) / "flow_fw" / (name + ".flo")).string(),
                fm.flow_fw);
    if (fm.has_flow_bw())
      write_flo((fs::path(dir) / "flow_bw" / (name + ".flo")).string(),
                fm.flow_bw);
    if (fm.has_confidence())
      write_png_gray((fs::path(dir) / "conf" / (name + ".png")).string(),
                     fm.confidence);
    meta["crops"].push_back({{"cx", fm.crop_center.x()},
                             {"cy", fm.crop_center.y()},
                             {"side", fm.crop_side}});
  }
  std::ofstream mf(fs::path(dir) / "meta.json");
  mf << meta.dump(2) << "\n";
}

MeasurementSet load_measurements(const std::string& dir) {
  fs::path root(dir);
  if (!fs::is_directory(root / "frames"))
    throw InputError("measurement directory missing frames/: " + dir);
  MeasurementSet ms;
  for (int t = 0;; ++t) {
    fs::path img = root / "frames" / (frame_name(t) + ".png");
    if (!fs::exists(img)) break;
    FrameMeasurement fm;
    fm.image = read_png_rgb(img.string());
    fs::path mask = root / "masks" / (frame_name(t) + ".png");
    if (!fs::exists(mask))
      throw InputError("missing mask for frame " + frame_name(t));
    ImageD raw_mask = read_png_gray(mask.string());
    fm.silhouette = ImageD(raw_mask.height, raw_mask.width, 0.0);
    bool any = false;
    for (size_t i = 0; i < raw_mask.data.size(); ++i) {
      fm.silhouette.data[i] = raw_mask.data[i] > (127.0 / 255.0) ? 1.0 : 0.0;
      any = any || fm.silhouette.data[i] > 0;
    }
    if (!any) throw InputError("empty silhouette in frame " + frame_name(t));
    fs::path fw = root / "flow_fw" / (frame_name(t) + ".flo");
    if (fs::exists(fw)) fm.flow_fw = read_flo(fw.string());
    fs::path bw = root / "flow_bw" / (frame_name(t) + ".flo");
    if (fs::exists(bw)) fm.flow_bw = read_flo(bw.string());
    fs::path cf = root / "conf" / (frame_name(t) + ".png");
    if (fs::exists(cf)) fm.confidence = read_png_gray(cf.string());
    if (fm.image.height != fm.silhouette.height ||
        fm.image.width != fm.silhouette.width)
      throw FormatError("frame/mask size mismatch at " + frame_name(t));
    ms.frames.push_back(std::move(fm));
  }
  if (ms.frames.size() < 2)
    throw InputError("need at least 2 frames in " + dir);
  ms.height = ms.frames[0].image.height;
  ms.width = ms.frames[0].image.width;
  for (const FrameMeasurement& fm : ms.frames)
    if (fm.image.height != ms.height || fm.image.width != ms.width)
      throw FormatError("inconsistent frame sizes in " + dir);

  fs::path meta_path = root / "meta.json";
  ms.source_indices.resize(ms.frames.size());
  for (size_t i = 0; i < ms.frames.size(); ++i)
    ms.source_indices[i] = int(i);
  if (fs::exists(meta_path)) {
    std::ifstream mf(meta_path);
    nlohmann::json meta;
    try {
      mf >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("bad meta.json: " + std::string(e.what()));
    }
    if (meta.contains("source_indices"))
      ms.source_indices = meta["source_indices"].get<std::vector<int>>();
    if (meta.contains("crops")) {
      auto crops = meta["crops"];
      for (size_t i = 0; i < ms.frames.size() && i < crops.size(); ++i) {
        ms.frames[i].crop_center = Vec2(crops[i]["cx"].get<double>(),
                                        crops[i]["cy"].get<double>());
        ms.frames[i].crop_side = crops[i]["side"].get<double>();
      }
    }
  }
  normalize_confidence(&ms);
  return ms;
}

}  // namespace lasr
