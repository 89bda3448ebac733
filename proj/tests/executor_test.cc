#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <numeric>
#include <set>
#include <thread>

#include "pipeline_fixture.h"
#include "resflow/executor.h"
#include "resflow/status.h"
#include "test_util.h"

namespace resflow {
namespace {

using ::testing::HasSubstr;

// Sequential reference: each tile is embedded, assigned and labelled on its
// own, then painted with first-cover precedence.
Mask OracleMask(const testing::PipelineFixture& fx, const SceneRef& scene, int64_t tile_px,
                int64_t overlap_px, std::map<TileExtent, BucketId, ExtentOrder>* buckets) {
  Mask out(scene.width_px, scene.height_px);
  std::vector<uint8_t> painted(out.labels.size(), 0);
  for (const auto& e : TileExtents(scene, tile_px, overlap_px)) {
    const Tile tile = ReadWindow(scene, e, nullptr, ReadStage::kOther);
    const BucketId b = AssignBucket(Encode(fx.hash, fx.extractor.Extract(tile)), fx.centroids);
    (*buckets)[e] = b;
    const Mask m = testing::ThresholdModel(b, 128.0f).Infer(tile);
    for (int64_t y = 0; y < e.h; ++y) {
      for (int64_t x = 0; x < e.w; ++x) {
        const size_t i = static_cast<size_t>((e.y0 + y) * out.w + e.x0 + x);
        if (painted[i]) continue;
        painted[i] = 1;
        out.labels[i] = m.at(x, y);
      }
    }
  }
  return out;
}

TEST(RunPipeline, MatchesSequentialOracle) {
  testing::TempDir dir;
  testing::PipelineFixture fx(dir.path(), 2, 230, 170, 1);
  for (int64_t overlap : {0, 10}) {
    ExecutorConfig config;
    config.workers = 3;
    config.devices = 2;
    config.tickets_per_device = 1;
    config.tile_px = 50;
    config.overlap_px = overlap;
    config.batch = 4;
    const RunResult r = RunPipeline(fx.scenes, fx.Context(), config);
    ASSERT_EQ(r.scenes.size(), 2u);
    std::set<BucketId> seen;
    for (size_t s = 0; s < 2; ++s) {
      std::map<TileExtent, BucketId, ExtentOrder> buckets;
      const Mask expect = OracleMask(fx, fx.scenes[s], 50, overlap, &buckets);
      EXPECT_EQ(r.scenes[s].mask.labels, expect.labels) << "overlap " << overlap;
      EXPECT_EQ(r.scenes[s].provenance, buckets);
      EXPECT_TRUE(r.scenes[s].failed_tiles.empty());
      for (const auto& [e, b] : buckets) seen.insert(b);
    }
    EXPECT_GE(seen.size(), 3u);
  }
}

TEST(RunPipeline, EachStageReadsEachSceneOnce) {
  testing::TempDir dir;
  testing::PipelineFixture fx(dir.path(), 3, 200, 120, 2);
  ExecutorConfig config;
  config.workers = 4;
  config.devices = 2;
  config.tickets_per_device = 2;
  config.tile_px = 64;
  config.batch = 3;
  ReadLedger ledger;
  const RunResult r = RunPipeline(fx.scenes, fx.Context(), config, &ledger);
  for (const auto& s : fx.scenes) {
    EXPECT_DOUBLE_EQ(r.passes.at(s.scene_id).first, 1.0);
    EXPECT_DOUBLE_EQ(r.passes.at(s.scene_id).second, 1.0);
    EXPECT_DOUBLE_EQ(r.metrics.reads_per_scene.at(s.scene_id), 2.0);
    // 4 x 2 tiles per stage.
    EXPECT_EQ(ledger.Get(s.scene_id, ReadStage::kEmbed).windows, 8);
    EXPECT_EQ(ledger.Get(s.scene_id, ReadStage::kInfer).windows, 8);
    EXPECT_EQ(ledger.Get(s.scene_id, ReadStage::kOther).windows, 0);
  }
  EXPECT_EQ(r.metrics.bytes_read, 2 * 3 * 200 * 120 * 3);
}

TEST(RunPipeline, OutputIndependentOfSchedule) {
  testing::TempDir dir;
  testing::PipelineFixture fx(dir.path(), 2, 180, 140, 3);
  ExecutorConfig base;
  base.tile_px = 40;
  base.batch = 2;
  base.devices = 2;
  base.tickets_per_device = 2;
  base.workers = 1;
  ImageGallery g0(2);
  const RunResult ref = RunPipeline(fx.scenes, fx.Context(&g0), base);
  for (int workers : {2, 5, 9}) {
    for (uint64_t seed : {0u, 11u, 12345u}) {
      ExecutorConfig c = base;
      c.workers = workers;
      c.scheduler_seed = seed;
      ImageGallery g(2);
      const RunResult r = RunPipeline(fx.scenes, fx.Context(&g), c);
      for (size_t s = 0; s < 2; ++s) {
        EXPECT_EQ(r.scenes[s].mask.labels, ref.scenes[s].mask.labels);
        EXPECT_EQ(r.scenes[s].provenance, ref.scenes[s].provenance);
      }
      EXPECT_EQ(g.All(), g0.All());
    }
  }
}

TEST(RunPipeline, GalleryInCanonicalOrder) {
  testing::TempDir dir;
  testing::PipelineFixture fx(dir.path(), 2, 100, 100, 4);
  ExecutorConfig config;
  config.workers = 4;
  config.tile_px = 50;
  config.batch = 1;
  config.scheduler_seed = 99;
  ImageGallery g(2);
  const RunResult r = RunPipeline(fx.scenes, fx.Context(&g), config);
  const auto all = g.All();
  ASSERT_EQ(all.size(), 8u);
  for (size_t i = 0; i < all.size(); ++i) {
    EXPECT_EQ(all[i].extent, r.assignments[i].extent);
    EXPECT_EQ(all[i].bucket_id, r.assignments[i].bucket);
  }
  EXPECT_EQ(all[0].extent.scene_id, "scene_0");
  EXPECT_EQ(all[1].extent.x0, 50);
  EXPECT_EQ(all[4].extent.scene_id, "scene_1");
}

TEST(RunPipeline, ModelGapFailsOnlyThatBucket) {
  testing::TempDir dir;
  testing::PipelineFixture fx(dir.path(), 1, 300, 300, 5);
  ExecutorConfig config;
  config.workers = 2;
  config.tile_px = 50;
  const RunResult full = RunPipeline(fx.scenes, fx.Context(), config);
  const auto& prov = full.scenes[0].provenance;
  std::map<BucketId, int> counts;
  for (const auto& [e, b] : prov) ++counts[b];
  ASSERT_GE(counts.size(), 2u);
  const BucketId gap = counts.begin()->first;

  const RunResult r = RunPipeline(fx.scenes, fx.Context(nullptr, gap), config);
  const SceneOutput& out = r.scenes[0];
  EXPECT_EQ(out.failed_tiles.size(), static_cast<size_t>(counts[gap]));
  ASSERT_EQ(out.errors.size(), 1u);
  EXPECT_THAT(out.errors[0], HasSubstr("bucket " + std::to_string(gap)));
  for (const auto& [e, b] : prov) {
    const bool failed =
        std::find(out.failed_tiles.begin(), out.failed_tiles.end(), e) != out.failed_tiles.end();
    EXPECT_EQ(failed, b == gap);
    for (int64_t y = e.y0; y < e.y0 + e.h; ++y) {
      for (int64_t x = e.x0; x < e.x0 + e.w; ++x) {
        ASSERT_EQ(out.mask.at(x, y), b == gap ? 0 : full.scenes[0].mask.at(x, y));
      }
    }
  }
}

TEST(RunPipeline, RejectsBadInput) {
  testing::TempDir dir;
  testing::PipelineFixture fx(dir.path(), 1, 60, 60, 6);
  ExecutorConfig config;
  config.tile_px = 30;
  std::vector<SceneRef> twice{fx.scenes[0], fx.scenes[0]};
  EXPECT_THROW(RunPipeline(twice, fx.Context(), config), Error);
  config.workers = 0;
  EXPECT_THROW(RunPipeline(fx.scenes, fx.Context(), config), Error);
  config.workers = 1;
  EXPECT_THROW(RunPipeline(fx.scenes, PipelineContext{}, config), Error);
}

TEST(RunPipeline, StarvationAborts) {
  testing::TempDir dir;
  testing::PipelineFixture fx(dir.path(), 1, 60, 60, 6);
  ExecutorConfig config;
  config.tile_px = 30;
  config.workers = 2;
  config.devices = 1;
  config.tickets_per_device = 1;
  config.ticket_timeout = std::chrono::milliseconds(1);
  PipelineContext ctx = fx.Context();
  ctx.models = [](BucketId b) -> std::shared_ptr<const BucketModel> {
    struct Slow : testing::ThresholdModel {
      using ThresholdModel::ThresholdModel;
      Mask Infer(const Tile& t) const override {
        std::this_thread::sleep_for(std::chrono::milliseconds(30));
        return ThresholdModel::Infer(t);
      }
    };
    return std::make_shared<Slow>(b, 1.0f);
  };
  config.batch = 1;
  try {
    RunPipeline(fx.scenes, ctx, config);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kStarvation);
  }
}

TEST(RunPipeline, SimulateSkipsPixels) {
  SceneRef virt;
  virt.scene_id = "v";
  virt.path = "/nonexistent.rsr";
  virt.width_px = 1000;
  virt.height_px = 1000;
  virt.bands = 3;
  virt.gsd_m = 0.5;
  ExecutorConfig config;
  config.simulate = true;
  config.workers = 2;
  config.devices = 1;
  config.tickets_per_device = 2;
  config.tile_px = 500;
  config.batch = 1;
  config.cost.base_ms = 10.0;
  config.cost.ms_per_megapixel = 0.0;
  const RunResult r = RunPipeline(std::vector<SceneRef>{virt}, PipelineContext{}, config);
  EXPECT_TRUE(r.scenes[0].mask.labels.empty());
  EXPECT_DOUBLE_EQ(r.passes.at("v").first, 1.0);
  EXPECT_DOUBLE_EQ(r.passes.at("v").second, 1.0);
  // Four tiles per stage on two tickets: at least 2 x 2 x 10 ms.
  EXPECT_GE(r.metrics.wall_s, 0.040);
  EXPECT_NEAR(r.metrics.area_sqkm, 0.25, 1e-12);
  EXPECT_EQ(r.ticket_log.size(), 16u);
}

TEST(CostModel, TileAndMerge) {
  DeviceCostModel c{5.0, 1.0, 1.0, 2.0};
  const TileExtent e{"s", 0, 0, 500, 500};
  EXPECT_DOUBLE_EQ(c.TileMs(e, 3, SampleType::kU8), 5.0 + 0.25 + 0.75);
  EXPECT_DOUBLE_EQ(c.TileMs(e, 3, SampleType::kU16), 5.0 + 0.25 + 1.5);
  SceneRef s;
  s.width_px = 2000;
  s.height_px = 2000;
  EXPECT_DOUBLE_EQ(c.MergeMs(s), 8.0);
}

TEST(Speedup, Examples) {
  RunMetrics m;
  m.scenes = 1;
  m.wall_s = 3.81;
  EXPECT_NEAR(ComputeSpeedup(m, 35.0), 9.19, 0.005);
  m.wall_s = 7.73;
  EXPECT_NEAR(ComputeSpeedup(m, 420.0), 54.3, 0.05);
  m.wall_s = 2100.0;
  EXPECT_DOUBLE_EQ(ComputeSpeedup(m, 2100.0), 1.0);
  m.scenes = 12;
  EXPECT_DOUBLE_EQ(ComputeSpeedup(m, 2100.0), 12.0);
  m.scenes = 0;
  EXPECT_THROW(ComputeSpeedup(m, 2100.0), Error);
  m.scenes = 1;
  m.wall_s = 0.0;
  EXPECT_THROW(ComputeSpeedup(m, 2100.0), Error);
}

TEST(AreaRate, Identity) {
  const AreaRate r = ComputeAreaRate(5.245, 1.0);
  EXPECT_NEAR(r.per_day, 453168.0, 1e-6);
  const AreaRate q = ComputeAreaRate(12.5, 4.0);
  EXPECT_DOUBLE_EQ(q.sqkm_per_s, 3.125);
  EXPECT_DOUBLE_EQ(q.per_day, 3.125 * 86400.0);
  EXPECT_THROW(ComputeAreaRate(0.0, 1.0), Error);
  EXPECT_THROW(ComputeAreaRate(1.0, 0.0), Error);
}

TEST(RunMetrics, DeriveAndJsonRoundTrip) {
  RunMetrics m;
  m.wall_s = 2.0;
  m.stage_a_s = 0.5;
  m.stage_b_s = 1.0;
  m.stage_c_s = 0.5;
  m.scenes = 3;
  m.tiles = 48;
  m.bytes_read = 3'000'000'000;
  m.reads_per_scene = {{"a", 2.0}, {"b", 2.0}};
  m.area_sqkm = 0.3;
  m.Derive(2100.0);
  EXPECT_DOUBLE_EQ(m.speedup, 3150.0);
  EXPECT_DOUBLE_EQ(m.gb_per_s, 1.5);
  EXPECT_DOUBLE_EQ(m.images_per_s, 24.0);
  EXPECT_DOUBLE_EQ(m.sqkm_per_s, 0.15);
  const RunMetrics back = MetricsFromJson(MetricsToJson(m));
  EXPECT_EQ(back.wall_s, m.wall_s);
  EXPECT_EQ(back.bytes_read, m.bytes_read);
  EXPECT_EQ(back.reads_per_scene, m.reads_per_scene);
  EXPECT_EQ(back.speedup, m.speedup);
  EXPECT_EQ(back.sqkm_per_s, m.sqkm_per_s);
  try {
    MetricsFromJson("{\"wall_s\": 1}");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMalformed);
  }
  EXPECT_THROW(MetricsFromJson("not json"), Error);
}

TEST(GroupByScene, PartitionsAndSorts) {
  std::vector<LabeledTile> tiles{{{"b", 0, 10, 5, 5}, Mask(5, 5), 0},
                                 {{"a", 5, 0, 5, 5}, Mask(5, 5), 1},
                                 {{"a", 0, 5, 5, 5}, Mask(5, 5), 0},
                                 {{"a", 0, 0, 5, 5}, Mask(5, 5), 2}};
  const auto g = GroupByScene(tiles);
  ASSERT_EQ(g.size(), 2u);
  ASSERT_EQ(g.at("a").size(), 3u);
  EXPECT_EQ(g.at("a")[0].bucket, 2);
  EXPECT_EQ(g.at("a")[1].extent.x0, 5);
  EXPECT_EQ(g.at("a")[2].extent.y0, 5);
  EXPECT_EQ(g.at("b").size(), 1u);
}

TEST(RunOnWorkers, EveryTaskOnceAndErrorsPropagate) {
  std::vector<size_t> order(500);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::atomic<int>> hits(500);
  RunOnWorkers(7, order, [&](int worker, size_t i) {
    EXPECT_LT(worker, 7);
    ++hits[i];
  });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);

  std::atomic<int> ran{0};
  EXPECT_THROW(RunOnWorkers(3, order,
                            [&](int, size_t i) {
                              ++ran;
                              if (i == 10) throw Error(ErrorCode::kIo, "boom");
                            }),
               Error);
  EXPECT_LT(ran.load(), 500);
  EXPECT_THROW(RunOnWorkers(0, order, [](int, size_t) {}), Error);
}

}  // namespace
}  // namespace resflow
