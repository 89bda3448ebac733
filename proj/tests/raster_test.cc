#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "resflow/raster.h"
#include "resflow/status.h"
#include "test_util.h"

namespace resflow {
namespace {

using ::testing::HasSubstr;
using testing::TempDir;

void WriteBytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

SceneRef Ramp4x4(const TempDir& dir) {
  std::vector<float> s(16);
  for (int i = 0; i < 16; ++i) s[i] = static_cast<float>(i);
  WriteRaster(dir / "ramp.rsr", 4, 4, 1, SampleType::kU8, 0.5, s);
  return LoadSceneHeader(dir / "ramp.rsr");
}

TEST(SceneHeader, EchoesFields) {
  TempDir dir;
  std::vector<float> s(100 * 80 * 3, 7.0f);
  WriteRaster(dir / "a.rsr", 100, 80, 3, SampleType::kU8, 0.5, s);
  const SceneRef ref = LoadSceneHeader(dir / "a.rsr");
  EXPECT_EQ(ref.scene_id, "a");
  EXPECT_EQ(ref.width_px, 100);
  EXPECT_EQ(ref.height_px, 80);
  EXPECT_EQ(ref.bands, 3);
  EXPECT_EQ(ref.dtype, SampleType::kU8);
  EXPECT_DOUBLE_EQ(ref.gsd_m, 0.5);
}

TEST(SceneHeader, TruncatedHeaderIsMalformed) {
  TempDir dir;
  WriteBytes(dir / "t.rsr", "RSR1\n100 80");
  try {
    LoadSceneHeader(dir / "t.rsr");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMalformed);
    EXPECT_THAT(e.what(), HasSubstr("malformed header"));
  }
}

TEST(SceneHeader, ZeroDimension) {
  TempDir dir;
  WriteBytes(dir / "z.rsr", "RSR1\n0 80 3 u8 0.5\n");
  try {
    LoadSceneHeader(dir / "z.rsr");
    FAIL();
  } catch (const Error& e) {
    EXPECT_THAT(e.what(), HasSubstr("zero dimension"));
  }
}

TEST(SceneHeader, MissingFileAndBadMagic) {
  TempDir dir;
  EXPECT_THROW(LoadSceneHeader(dir / "nope.rsr"), Error);
  WriteBytes(dir / "m.rsr", "TIFF\n1 1 1 u8 1\n");
  EXPECT_THROW(LoadSceneHeader(dir / "m.rsr"), Error);
  WriteBytes(dir / "d.rsr", "RSR1\n1 1 1 u7 1\n");
  EXPECT_THROW(LoadSceneHeader(dir / "d.rsr"), Error);
}

TEST(ReadWindow, FullExtentIsWholeRaster) {
  TempDir dir;
  const SceneRef ref = Ramp4x4(dir);
  const Tile t = ReadWindow(ref, {ref.scene_id, 0, 0, 4, 4}, nullptr, ReadStage::kOther);
  ASSERT_EQ(t.pixels.size(), 16u);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(t.pixels[i], i);
}

TEST(ReadWindow, BottomRightQuadrant) {
  TempDir dir;
  const SceneRef ref = Ramp4x4(dir);
  const Tile t = ReadWindow(ref, {ref.scene_id, 2, 2, 2, 2}, nullptr, ReadStage::kOther);
  EXPECT_EQ(t.pixels, (std::vector<float>{10, 11, 14, 15}));
}

TEST(ReadWindow, OutOfBounds) {
  TempDir dir;
  const SceneRef ref = Ramp4x4(dir);
  EXPECT_THROW(ReadWindow(ref, {ref.scene_id, 3, 0, 2, 1}, nullptr, ReadStage::kOther), Error);
  EXPECT_THROW(ReadWindow(ref, {ref.scene_id, -1, 0, 1, 1}, nullptr, ReadStage::kOther), Error);
}

TEST(ReadWindow, MultiBandTypes) {
  TempDir dir;
  for (SampleType t : {SampleType::kU8, SampleType::kU16, SampleType::kF32}) {
    std::vector<float> s(5 * 3 * 2);
    for (size_t i = 0; i < s.size(); ++i) s[i] = static_cast<float>(i * 3);
    const auto p = dir / (std::string("b_") + SampleTypeName(t) + ".rsr");
    WriteRaster(p, 5, 3, 2, t, 0.3, s);
    const SceneRef ref = LoadSceneHeader(p);
    EXPECT_EQ(ref.bytes(), static_cast<uint64_t>(30 * SampleBytes(t)));
    const Tile tile = ReadWindow(ref, {ref.scene_id, 1, 1, 3, 2}, nullptr, ReadStage::kOther);
    ASSERT_EQ(tile.bands, 2);
    EXPECT_EQ(tile.at(0, 0, 0), s[(1 * 5 + 1) * 2]);
    EXPECT_EQ(tile.at(2, 1, 1), s[(2 * 5 + 3) * 2 + 1]);
  }
}

TEST(ReadLedger, OneCellPerCall) {
  TempDir dir;
  const SceneRef ref = Ramp4x4(dir);
  ReadLedger ledger;
  ReadWindow(ref, {ref.scene_id, 0, 0, 2, 2}, &ledger, ReadStage::kEmbed);
  ReadWindow(ref, {ref.scene_id, 2, 0, 2, 2}, &ledger, ReadStage::kEmbed);
  ReadWindow(ref, {ref.scene_id, 0, 0, 4, 4}, &ledger, ReadStage::kInfer);
  const auto embed = ledger.Get(ref.scene_id, ReadStage::kEmbed);
  EXPECT_EQ(embed.windows, 2);
  EXPECT_EQ(embed.pixels, 8);
  EXPECT_EQ(ledger.Get(ref.scene_id, ReadStage::kInfer).windows, 1);
  EXPECT_DOUBLE_EQ(ledger.Passes(ref.scene_id, ReadStage::kEmbed, 16), 0.5);
  EXPECT_DOUBLE_EQ(ledger.Passes(ref.scene_id, ReadStage::kInfer, 16), 1.0);
  EXPECT_EQ(ledger.TotalBytes(), 24);
  EXPECT_EQ(ledger.Get("other", ReadStage::kEmbed).windows, 0);
}

SceneRef Virtual(int64_t w, int64_t h) {
  SceneRef s;
  s.scene_id = "v";
  s.width_px = w;
  s.height_px = h;
  s.bands = 1;
  s.gsd_m = 0.5;
  return s;
}

TEST(TileExtents, ExactDivision) {
  EXPECT_EQ(TileExtents(Virtual(100, 100), 50, 0).size(), 4u);
}

TEST(TileExtents, ClampedEdges) {
  const auto plan = TileExtents(Virtual(100, 100), 40, 0);
  ASSERT_EQ(plan.size(), 9u);
  EXPECT_EQ(plan[2].x0, 80);
  EXPECT_EQ(plan[2].w, 20);
  EXPECT_EQ(plan[8].h, 20);
  EXPECT_EQ(plan[8].w, 20);
  // Row-major.
  EXPECT_EQ(plan[3].y0, 40);
  EXPECT_EQ(plan[3].x0, 0);
}

TEST(TileExtents, FullScaleSceneCount) {
  EXPECT_EQ(TileExtents(Virtual(40000, 35000), 500, 0).size(), 5600u);
}

TEST(TileExtents, CoverageProperty) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int64_t> dim(1, 130), tile(1, 70);
  for (int trial = 0; trial < 200; ++trial) {
    const SceneRef s = Virtual(dim(rng), dim(rng));
    const int64_t t = tile(rng);
    const int64_t overlap = trial % 3 == 0 ? 0 : std::uniform_int_distribution<int64_t>(0, t - 1)(rng);
    const auto plan = TileExtents(s, t, overlap);
    std::vector<int> hits(static_cast<size_t>(s.width_px * s.height_px), 0);
    for (const auto& e : plan) {
      ASSERT_GE(e.w, 1);
      ASSERT_LE(e.x0 + e.w, s.width_px);
      ASSERT_LE(e.y0 + e.h, s.height_px);
      for (int64_t y = e.y0; y < e.y0 + e.h; ++y) {
        for (int64_t x = e.x0; x < e.x0 + e.w; ++x) ++hits[y * s.width_px + x];
      }
    }
    for (int h : hits) ASSERT_GE(h, 1);
    if (overlap == 0) EXPECT_EQ(PlanPixels(plan), s.width_px * s.height_px);
  }
}

TEST(TileExtents, RejectsBadSizes) {
  EXPECT_THROW(TileExtents(Virtual(10, 10), 0, 0), Error);
  EXPECT_THROW(TileExtents(Virtual(10, 10), 5, 5), Error);
  EXPECT_THROW(TileExtents(Virtual(10, 10), 5, -1), Error);
}

TEST(MergeTiles, RoundTripRandomMasks) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int64_t> dim(1, 90);
  for (int trial = 0; trial < 60; ++trial) {
    SceneRef s = Virtual(dim(rng), dim(rng));
    const Mask m = testing::RandomMask(s.width_px, s.height_px, rng);
    const int64_t t = std::uniform_int_distribution<int64_t>(1, std::max(s.width_px, s.height_px))(rng);
    const auto tiles = SplitMask(m, TileExtents(s, t, 0), 3);
    const Mask back = MergeTiles(s, tiles);
    ASSERT_EQ(back.labels, m.labels) << "tile " << t;
    EXPECT_EQ(back.provenance.size(), tiles.size());
  }
}

TEST(MergeTiles, OverlapSmallestOriginWins) {
  const SceneRef s = Virtual(6, 4);
  LabeledTile a{{"v", 0, 0, 4, 4}, Mask(4, 4, 1), 0};
  LabeledTile b{{"v", 2, 0, 4, 4}, Mask(4, 4, 2), 1};
  // Arrival order must not matter.
  for (const auto& tiles : {std::vector<LabeledTile>{a, b}, std::vector<LabeledTile>{b, a}}) {
    const Mask m = MergeTiles(s, tiles);
    EXPECT_EQ(m.at(3, 1), 1);
    EXPECT_EQ(m.at(4, 1), 2);
    EXPECT_EQ(m.provenance.at(b.extent), 1);
  }
}

TEST(MergeTiles, MissingTileNamesRectangle) {
  const SceneRef s = Virtual(100, 100);
  auto tiles = SplitMask(Mask(100, 100), TileExtents(s, 50, 0));
  tiles.erase(tiles.begin() + 1);
  try {
    MergeTiles(s, tiles);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCoverageGap);
    EXPECT_THAT(e.what(), HasSubstr("missing tile"));
    EXPECT_THAT(e.what(), HasSubstr("[50 0 50 50]"));
  }
}

TEST(MergeTiles, ForeignScene) {
  const SceneRef s = Virtual(2, 2);
  std::vector<LabeledTile> tiles{{{"other", 0, 0, 2, 2}, Mask(2, 2), 0}};
  EXPECT_THROW(MergeTiles(s, tiles), Error);
}

TEST(SceneArea, Arithmetic) {
  SceneRef s = Virtual(1000, 1000);
  EXPECT_DOUBLE_EQ(SceneAreaSqKm(s), 0.25);
  s.width_px = 40000;
  s.height_px = 35000;
  EXPECT_DOUBLE_EQ(SceneAreaSqKm(s), 350.0);
  s.width_px = 0;
  EXPECT_THROW(SceneAreaSqKm(s), Error);
}

TEST(MaskFiles, MaskAndSidecarRoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(5);
  SceneRef s = Virtual(37, 23);
  Mask m = MergeTiles(s, SplitMask(testing::RandomMask(37, 23, rng), TileExtents(s, 10, 0), 0));
  int b = 0;
  for (auto& [e, bucket] : m.provenance) bucket = (b++ * 7) % 20;
  WriteMask(dir / "m.rsr", m, 0.5);
  WriteMaskSidecar(dir / "m.txt", m);
  const Mask back = ReadMask(dir / "m.rsr");
  EXPECT_EQ(back.labels, m.labels);
  EXPECT_EQ(back.w, 37);
  EXPECT_EQ(ReadMaskSidecar(dir / "m.txt", "v"), m.provenance);
}

TEST(RasterWriter, RowsMustMatch) {
  TempDir dir;
  RasterWriter w(dir / "w.rsr", 3, 2, 1, SampleType::kU8, 1.0);
  const std::vector<float> row{1, 2, 3};
  EXPECT_THROW(w.WriteRow(std::vector<float>{1, 2}), Error);
  w.WriteRow(row);
  EXPECT_THROW(w.Close(), Error);
}

}  // namespace
}  // namespace resflow
