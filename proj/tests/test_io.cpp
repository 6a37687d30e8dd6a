#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lasr/io.h"
#include "test_util.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace lasr;
using testutil::Rng;

namespace fs = std::filesystem;

TEST_CASE("flo: byte-level layout of a 2x1 field") {
  ImageV2 flow(1, 2, Vec2::Zero());
  flow.at(0, 0) = Vec2(1, 2);
  flow.at(0, 1) = Vec2(3, 4);
  std::string path = "t_layout.flo";
  write_flo(path, flow);

  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> got((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  // magic "PIEH" (little-endian float 202021.25), width 2, height 1,
  // interleaved (u,v) float32
  std::vector<unsigned char> want = {
      'P',  'I',  'E',  'H',  0x02, 0,    0,    0,    0x01, 0,
      0,    0,    0,    0,    0x80, 0x3F, 0,    0,    0,    0x40,
      0,    0,    0x40, 0x40, 0,    0,    0x80, 0x40};
  REQUIRE(got.size() == 28);
  CHECK(got == want);
  std::remove(path.c_str());
}

TEST_CASE("flo: roundtrip and malformed files") {
  Rng rng(1);
  ImageV2 flow(7, 5, Vec2::Zero());
  for (auto& v : flow.data)
    v = Vec2(float(rng.uniform(-30, 30)), float(rng.uniform(-30, 30)));
  write_flo("t_rt.flo", flow);
  ImageV2 back = read_flo("t_rt.flo");
  REQUIRE(back.height == 7);
  REQUIRE(back.width == 5);
  for (size_t i = 0; i < flow.data.size(); ++i)
    CHECK((back.data[i] - Vec2(float(flow.data[i].x()),
                               float(flow.data[i].y()))).norm() == 0.0);

  {
    std::ofstream bad("t_bad.flo", std::ios::binary);
    float wrong = 123.0f;
    bad.write(reinterpret_cast<char*>(&wrong), 4);
    int32_t wh[2] = {1, 1};
    bad.write(reinterpret_cast<char*>(wh), 8);
    float data[2] = {0, 0};
    bad.write(reinterpret_cast<char*>(data), 8);
  }
  CHECK_THROWS_AS(read_flo("t_bad.flo"), FormatError);
  {
    std::ofstream trunc("t_trunc.flo", std::ios::binary);
    float magic = 202021.25f;
    trunc.write(reinterpret_cast<char*>(&magic), 4);
    int32_t wh[2] = {4, 4};
    trunc.write(reinterpret_cast<char*>(wh), 8);
    float one = 1;
    trunc.write(reinterpret_cast<char*>(&one), 4);
  }
  CHECK_THROWS_AS(read_flo("t_trunc.flo"), FormatError);
  CHECK_THROWS_AS(read_flo("t_missing.flo"), InputError);
  std::remove("t_rt.flo");
  std::remove("t_bad.flo");
  std::remove("t_trunc.flo");
}

TEST_CASE("png roundtrip quantizes to 8 bits") {
  Rng rng(2);
  ImageD gray(9, 13, 0.0);
  for (auto& v : gray.data) v = rng.uniform(0, 1);
  write_png_gray("t_gray.png", gray);
  ImageD gback = read_png_gray("t_gray.png");
  REQUIRE(gback.height == 9);
  for (size_t i = 0; i < gray.data.size(); ++i)
    CHECK(gback.data[i] ==
          doctest::Approx(std::round(gray.data[i] * 255) / 255.0)
              .epsilon(1e-12));

  ImageV3 rgb(6, 4, Vec3::Zero());
  for (auto& v : rgb.data)
    v = Vec3(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1));
  write_png_rgb("t_rgb.png", rgb);
  ImageV3 cback = read_png_rgb("t_rgb.png");
  for (size_t i = 0; i < rgb.data.size(); ++i)
    for (int c = 0; c < 3; ++c)
      CHECK(cback.data[i][c] ==
            doctest::Approx(std::round(rgb.data[i][c] * 255) / 255.0)
                .epsilon(1e-12));
  std::remove("t_gray.png");
  std::remove("t_rgb.png");
}

namespace {

// Constant-magnitude flow field with the given clip-space mean magnitude.
ImageV2 flow_with_clip_mag(int n, double clip_mag) {
  double px = clip_mag * n / 2.0;
  return ImageV2(n, n, Vec2(px, 0));
}

}  // namespace

TEST_CASE("select_frames: threshold rule and the worked example") {
  int n = 64;
  std::vector<ImageD> masks(4, ImageD(n, n, 1.0));
  // inbound magnitudes per frame: (0.01, 0.2, 0.01, 0.2) -> keep 0, 1, 3
  std::vector<ImageV2> flows = {flow_with_clip_mag(n, 0.2),
                                flow_with_clip_mag(n, 0.01),
                                flow_with_clip_mag(n, 0.2)};
  std::vector<int> kept = select_frames(flows, masks);
  CHECK(kept == std::vector<int>{0, 1, 3});

  // static video: nothing retained beyond frame 0 -> input error
  std::vector<ImageV2> still(3, flow_with_clip_mag(n, 0.001));
  CHECK_THROWS_AS(select_frames(still, masks), InputError);

  // idempotence: accumulated magnitudes between retained frames re-pass
  std::vector<ImageV2> reduced = {flow_with_clip_mag(n, 0.2),
                                  flow_with_clip_mag(n, 0.21)};
  std::vector<ImageD> masks3(3, ImageD(n, n, 1.0));
  std::vector<int> again = select_frames(reduced, masks3);
  CHECK(again == std::vector<int>{0, 1, 2});

  CHECK_THROWS_AS(select_frames({}, {masks[0]}), InputError);
}

TEST_CASE("preprocess: crop, flow rescaling, uncrop consistency") {
  Rng rng(3);
  int h = 300, w = 400;
  ImageV3 frame(h, w, Vec3::Zero());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      frame.at(y, x) = Vec3(0.5 + 0.4 * std::sin(0.05 * x),
                            0.5 + 0.4 * std::sin(0.07 * y), 0.5);
  ImageD mask(h, w, 0.0);
  // blob of radius 60 at (150, 180)
  Vec2 c0(180, 150);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if ((Vec2(x, y) - c0).norm() < 60) mask.at(y, x) = 1.0;

  std::vector<ImageV2> flows = {ImageV2(h, w, Vec2(10, 0))};
  MeasurementSet ms =
      preprocess({frame, frame}, {mask, mask}, flows);
  REQUIRE(ms.frame_count() == 2);
  CHECK(ms.height == 256);
  CHECK(ms.width == 256);
  // crop side = 1.2 x bbox edge (119 or 121 px depending on rasterized blob)
  CHECK(ms.frames[0].crop_side == doctest::Approx(1.2 * 121).epsilon(0.03));

  // identical crops in both frames: stored flow = 10 * scale exactly
  double scale = 256.0 / ms.frames[0].crop_side;
  int inside = 0;
  for (int y = 100; y < 150; ++y)
    for (int x = 100; x < 150; ++x) {
      CHECK((ms.frames[0].flow_fw.at(y, x) - Vec2(10 * scale, 0)).norm() <
            1e-9);
      ++inside;
    }
  CHECK(inside > 0);

  // silhouette centroid maps back to the original centroid within 1 px
  Vec2 centroid = Vec2::Zero();
  double count = 0;
  for (int y = 0; y < 256; ++y)
    for (int x = 0; x < 256; ++x)
      if (ms.frames[0].silhouette.at(y, x) > 0.5) {
        centroid += Vec2(x, y);
        count += 1;
      }
  centroid /= count;
  Vec2 orig = uncrop_point(ms.frames[0], centroid);
  CHECK((orig - c0).norm() < 1.0);

  // empty mask rejected
  ImageD empty(h, w, 0.0);
  CHECK_THROWS_AS(preprocess({frame}, {empty}, {}), InputError);
}

TEST_CASE("measurement directory roundtrip") {
  Rng rng(4);
  MeasurementSet ms;
  ms.height = ms.width = 32;
  ms.frames.resize(3);
  ms.source_indices = {0, 2, 5};
  for (int t = 0; t < 3; ++t) {
    FrameMeasurement& fm = ms.frames[t];
    fm.image = ImageV3(32, 32, Vec3(0.25, 0.5, 0.75));
    fm.silhouette = ImageD(32, 32, 0.0);
    for (int y = 8; y < 24; ++y)
      for (int x = 8; x < 24; ++x) fm.silhouette.at(y, x) = 1.0;
    if (t < 2) {
      fm.flow_fw = ImageV2(32, 32, Vec2::Zero());
      for (auto& v : fm.flow_fw.data)
        v = Vec2(float(rng.uniform(-5, 5)), float(rng.uniform(-5, 5)));
    }
    if (t > 0) fm.flow_bw = ImageV2(32, 32, Vec2(1.5, -2.5));
    fm.crop_center = Vec2(100 + t, 50);
    fm.crop_side = 64;
  }
  std::string dir = "t_measurements";
  save_measurements(dir, ms);
  MeasurementSet back = load_measurements(dir);
  REQUIRE(back.frame_count() == 3);
  CHECK(back.source_indices == ms.source_indices);
  for (int t = 0; t < 3; ++t) {
    CHECK(back.frames[t].crop_center.x() == ms.frames[t].crop_center.x());
    CHECK(back.frames[t].crop_side == ms.frames[t].crop_side);
    CHECK(back.frames[t].has_flow_fw() == ms.frames[t].has_flow_fw());
    CHECK(back.frames[t].has_flow_bw() == ms.frames[t].has_flow_bw());
    for (size_t i = 0; i < back.frames[t].silhouette.data.size(); ++i)
      CHECK(back.frames[t].silhouette.data[i] ==
            ms.frames[t].silhouette.data[i]);
    if (ms.frames[t].has_flow_fw())
      for (size_t i = 0; i < back.frames[t].flow_fw.data.size(); ++i)
        CHECK((back.frames[t].flow_fw.data[i] -
               ms.frames[t].flow_fw.data[i]).norm() == 0.0);
  }
  fs::remove_all(dir);

  CHECK_THROWS_AS(load_measurements("t_nonexistent_dir"), InputError);
}

TEST_CASE("confidence normalization") {
  MeasurementSet ms;
  ms.height = ms.width = 8;
  ms.frames.resize(1);
  FrameMeasurement& fm = ms.frames[0];
  fm.image = ImageV3(8, 8, Vec3::Zero());
  fm.silhouette = ImageD(8, 8, 0.0);
  fm.confidence = ImageD(8, 8, 0.0);
  for (int i = 0; i < 32; ++i) {
    fm.silhouette.data[i] = 1.0;
    fm.confidence.data[i] = 4.0;  // uniform over the silhouette
  }
  normalize_confidence(&ms);
  double mean = 0;
  for (int i = 0; i < 32; ++i) mean += ms.frames[0].confidence.data[i];
  CHECK(mean / 32 == doctest::Approx(1.0));
}
