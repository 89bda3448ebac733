#include "resflow/executor.h"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include "json.hpp"
#include "resflow/status.h"

namespace resflow {
namespace {

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point from, Clock::time_point to) {
  return std::chrono::duration<double>(to - from).count();
}

void SleepMs(double ms) {
  if (ms > 0.0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
}

std::vector<size_t> TaskOrder(size_t n, uint64_t seed) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (seed != 0) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  return order;
}

struct TileSlot {
  size_t scene = 0;
  TileExtent extent;
};

// Chunks consecutive indices into groups of at most `batch`.
void AppendBatches(const std::vector<size_t>& indices, int batch,
                   std::vector<std::vector<size_t>>* out) {
  for (size_t i = 0; i < indices.size(); i += batch) {
    const size_t end = std::min(indices.size(), i + static_cast<size_t>(batch));
    out->emplace_back(indices.begin() + i, indices.begin() + end);
  }
}

}  // namespace

double DeviceCostModel::TileMs(const TileExtent& extent, int bands,
                               SampleType dtype) const {
  const double mp = static_cast<double>(extent.area()) / 1e6;
  const double mb = static_cast<double>(extent.area()) * bands * SampleBytes(dtype) / 1e6;
  return base_ms + ms_per_megapixel * mp + ms_per_megabyte * mb;
}

double DeviceCostModel::MergeMs(const SceneRef& scene) const {
  return merge_ms_per_megapixel * static_cast<double>(scene.width_px * scene.height_px) / 1e6;
}

ModelProvider GalleryModelProvider(const ModelGallery& models,
                                   const CentroidTable& centroids,
                                   const std::string& task) {
  return [&models, &centroids, task](BucketId bucket) -> std::shared_ptr<const BucketModel> {
    const ModelRecord rec = models.Lookup(centroids.code(bucket), task);
    return std::make_shared<LinearPixelModel>(LinearPixelModel::Load(rec.artifact_path));
  };
}

void RunMetrics::Derive(double baseline_s_per_scene) {
  if (wall_s <= 0.0) return;
  speedup = scenes > 0 ? baseline_s_per_scene * static_cast<double>(scenes) / wall_s : 0.0;
  sqkm_per_s = area_sqkm / wall_s;
  gb_per_s = static_cast<double>(bytes_read) / 1e9 / wall_s;
  images_per_s = static_cast<double>(tiles) / wall_s;
}

std::string MetricsToJson(const RunMetrics& m) {
  nlohmann::ordered_json j;
  j["wall_s"] = m.wall_s;
  j["stage_a_s"] = m.stage_a_s;
  j["stage_b_s"] = m.stage_b_s;
  j["stage_c_s"] = m.stage_c_s;
  j["scenes"] = m.scenes;
  j["tiles"] = m.tiles;
  j["bytes_read"] = m.bytes_read;
  j["reads_per_scene"] = m.reads_per_scene;
  j["area_sqkm"] = m.area_sqkm;
  j["speedup"] = m.speedup;
  j["sqkm_per_s"] = m.sqkm_per_s;
  j["gb_per_s"] = m.gb_per_s;
  j["images_per_s"] = m.images_per_s;
  return j.dump(2);
}

RunMetrics MetricsFromJson(const std::string& json) {
  RunMetrics m;
  try {
    const auto j = nlohmann::json::parse(json);
    m.wall_s = j.at("wall_s").get<double>();
    m.stage_a_s = j.at("stage_a_s").get<double>();
    m.stage_b_s = j.at("stage_b_s").get<double>();
    m.stage_c_s = j.at("stage_c_s").get<double>();
    m.scenes = j.at("scenes").get<int64_t>();
    m.tiles = j.at("tiles").get<int64_t>();
    m.bytes_read = j.at("bytes_read").get<int64_t>();
    m.reads_per_scene = j.at("reads_per_scene").get<std::map<std::string, double>>();
    m.area_sqkm = j.at("area_sqkm").get<double>();
    m.speedup = j.at("speedup").get<double>();
    m.sqkm_per_s = j.at("sqkm_per_s").get<double>();
    m.gb_per_s = j.at("gb_per_s").get<double>();
    m.images_per_s = j.at("images_per_s").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformed, std::string("bad metrics json: ") + e.what());
  }
  return m;
}

void RunOnWorkers(int workers, std::span<const size_t> order,
                  const std::function<void(int, size_t)>& fn) {
  if (workers <= 0) throw Error(ErrorCode::kInvalidArgument, "workers must be positive");
  std::atomic<size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto body = [&](int worker) {
    while (!stop.load()) {
      const size_t i = next.fetch_add(1);
      if (i >= order.size()) break;
      try {
        fn(worker, order[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        stop.store(true);
      }
    }
  };
  const int n = static_cast<int>(std::min<size_t>(workers, std::max<size_t>(order.size(), 1)));
  {
    std::vector<std::jthread> threads;
    threads.reserve(n);
    for (int w = 0; w < n; ++w) threads.emplace_back(body, w);
  }
  if (first_error) std::rethrow_exception(first_error);
}

std::map<std::string, std::vector<LabeledTile>> GroupByScene(
    std::vector<LabeledTile> results) {
  std::map<std::string, std::vector<LabeledTile>> groups;
  for (auto& r : results) groups[r.extent.scene_id].push_back(std::move(r));
  for (auto& [id, tiles] : groups) {
    std::sort(tiles.begin(), tiles.end(), [](const LabeledTile& a, const LabeledTile& b) {
      return std::tie(a.extent.y0, a.extent.x0, a.extent.h, a.extent.w, a.bucket) <
             std::tie(b.extent.y0, b.extent.x0, b.extent.h, b.extent.w, b.bucket);
    });
  }
  return groups;
}

double ComputeSpeedup(const RunMetrics& metrics, double baseline_s_per_scene) {
  if (metrics.scenes < 1) throw Error(ErrorCode::kInvalidArgument, "speedup needs at least one scene");
  if (!(metrics.wall_s > 0.0)) throw Error(ErrorCode::kInvalidArgument, "zero wall time");
  return baseline_s_per_scene * static_cast<double>(metrics.scenes) / metrics.wall_s;
}

AreaRate ComputeAreaRate(double area_sqkm, double wall_s) {
  if (!(area_sqkm > 0.0) || !(wall_s > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "area and wall time must be positive");
  }
  AreaRate r;
  r.sqkm_per_s = area_sqkm / wall_s;
  r.per_day = r.sqkm_per_s * 86400.0;
  return r;
}

AreaRate ComputeAreaRate(const RunMetrics& metrics) {
  return ComputeAreaRate(metrics.area_sqkm, metrics.wall_s);
}

RunResult RunPipeline(std::span<const SceneRef> scenes,
                      const PipelineContext& context,
                      const ExecutorConfig& config, ReadLedger* ledger) {
  if (config.workers <= 0 || config.batch <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "workers and batch must be positive");
  }
  if (!config.simulate &&
      (context.extractor == nullptr || context.hash == nullptr ||
       context.centroids == nullptr || context.centroids->empty() || !context.models)) {
    throw Error(ErrorCode::kInvalidArgument,
                "pipeline needs an extractor, hash function, centroids and model provider");
  }
  {
    std::set<std::string> ids;
    for (const auto& s : scenes) {
      s.Validate();
      if (!ids.insert(s.scene_id).second) {
        throw Error(ErrorCode::kInvalidArgument, "duplicate scene_id '" + s.scene_id + "'");
      }
    }
  }

  ReadLedger local_ledger;
  ReadLedger* reads = ledger != nullptr ? ledger : &local_ledger;
  const int64_t bytes_before = reads->TotalBytes();
  TicketPool pool(config.devices, config.tickets_per_device);
  const auto t_start = Clock::now();

  // Canonical tile list.
  std::vector<TileSlot> tiles;
  std::vector<int64_t> plan_pixels(scenes.size(), 0);
  std::vector<std::vector<size_t>> scene_tiles(scenes.size());
  for (size_t s = 0; s < scenes.size(); ++s) {
    const auto plan = TileExtents(scenes[s], config.tile_px, config.overlap_px);
    plan_pixels[s] = PlanPixels(plan);
    for (const auto& e : plan) {
      scene_tiles[s].push_back(tiles.size());
      tiles.push_back({s, e});
    }
  }

  RunResult result;
  result.assignments.resize(tiles.size());

  // Stage A: embed, hash and assign.
  std::vector<std::vector<size_t>> batches_a;
  for (const auto& idx : scene_tiles) AppendBatches(idx, config.batch, &batches_a);
  const auto order_a = TaskOrder(batches_a.size(), config.scheduler_seed);
  RunOnWorkers(config.workers, order_a, [&](int worker, size_t task) {
    TicketLease lease(pool, worker, config.ticket_timeout);
    double sim_ms = 0.0;
    for (size_t i : batches_a[task]) {
      const SceneRef& scene = scenes[tiles[i].scene];
      const TileExtent& extent = tiles[i].extent;
      TileAssignment& out = result.assignments[i];
      out.extent = extent;
      if (config.simulate) {
        sim_ms += config.cost.TileMs(extent, scene.bands, scene.dtype);
        reads->Record(scene.scene_id, ReadStage::kEmbed, extent.area(),
                      extent.area() * scene.bands * SampleBytes(scene.dtype));
        out.bucket = 0;
        continue;
      }
      const Tile tile = ReadWindow(scene, extent, reads, ReadStage::kEmbed);
      const Embedding e = context.extractor->Extract(tile);
      out.code = Encode(*context.hash, e);
      out.bucket = AssignBucket(out.code, *context.centroids);
    }
    SleepMs(sim_ms);
  });
  if (context.gallery != nullptr && !config.simulate) {
    for (size_t i = 0; i < tiles.size(); ++i) {
      const auto& a = result.assignments[i];
      GalleryRecord rec;
      rec.code = a.code;
      rec.bucket_id = a.bucket;
      rec.extent = a.extent;
      rec.storage_path = scenes[tiles[i].scene].path.string();
      context.gallery->Insert(std::move(rec), *context.centroids, &scenes[tiles[i].scene]);
    }
  }
  const auto t_a = Clock::now();

  // Stage B: per-bucket inference.
  std::map<BucketId, std::shared_ptr<const BucketModel>> models;
  std::map<BucketId, std::string> gaps;
  if (!config.simulate) {
    std::set<BucketId> used;
    for (const auto& a : result.assignments) used.insert(a.bucket);
    for (BucketId b : used) {
      try {
        auto m = context.models(b);
        if (!m) throw Error(ErrorCode::kModelGap, "model gap: bucket " + std::to_string(b));
        models[b] = std::move(m);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kModelGap) throw;
        gaps[b] = e.what();
      }
    }
  }
  std::vector<Mask> masks(tiles.size());
  std::vector<std::vector<size_t>> batches_b;
  for (size_t s = 0; s < scenes.size(); ++s) {
    std::map<BucketId, std::vector<size_t>> by_bucket;
    for (size_t i : scene_tiles[s]) by_bucket[result.assignments[i].bucket].push_back(i);
    for (const auto& [bucket, idx] : by_bucket) {
      if (gaps.count(bucket)) continue;
      AppendBatches(idx, config.batch, &batches_b);
    }
  }
  const auto order_b = TaskOrder(batches_b.size(), config.scheduler_seed);
  RunOnWorkers(config.workers, order_b, [&](int worker, size_t task) {
    TicketLease lease(pool, worker, config.ticket_timeout);
    double sim_ms = 0.0;
    for (size_t i : batches_b[task]) {
      const SceneRef& scene = scenes[tiles[i].scene];
      const TileExtent& extent = tiles[i].extent;
      if (config.simulate) {
        sim_ms += config.cost.TileMs(extent, scene.bands, scene.dtype);
        reads->Record(scene.scene_id, ReadStage::kInfer, extent.area(),
                      extent.area() * scene.bands * SampleBytes(scene.dtype));
        continue;
      }
      const Tile tile = ReadWindow(scene, extent, reads, ReadStage::kInfer);
      Mask m = models.at(result.assignments[i].bucket)->Infer(tile);
      if (m.w != extent.w || m.h != extent.h) {
        throw Error(ErrorCode::kInvalidArgument, "model returned a mask of the wrong shape");
      }
      masks[i] = std::move(m);
    }
    SleepMs(sim_ms);
  });
  const auto t_b = Clock::now();

  // Stage C: one merge per scene.
  result.scenes.resize(scenes.size());
  std::vector<LabeledTile> labeled;
  labeled.reserve(tiles.size());
  for (size_t i = 0; i < tiles.size(); ++i) {
    const auto& a = result.assignments[i];
    SceneOutput& out = result.scenes[tiles[i].scene];
    out.provenance.emplace(a.extent, a.bucket);
    if (gaps.count(a.bucket)) {
      out.failed_tiles.push_back(a.extent);
      masks[i] = Mask(a.extent.w, a.extent.h);
    }
    if (!config.simulate) labeled.push_back({a.extent, std::move(masks[i]), a.bucket});
  }
  for (size_t s = 0; s < scenes.size(); ++s) {
    SceneOutput& out = result.scenes[s];
    out.scene_id = scenes[s].scene_id;
    std::set<BucketId> failed;
    for (const auto& e : out.failed_tiles) failed.insert(out.provenance.at(e));
    for (BucketId b : failed) out.errors.push_back(gaps.at(b));
  }
  auto groups = GroupByScene(std::move(labeled));
  const auto order_c = TaskOrder(scenes.size(), config.scheduler_seed);
  RunOnWorkers(config.workers, order_c, [&](int, size_t s) {
    if (config.simulate) {
      SleepMs(config.cost.MergeMs(scenes[s]));
      return;
    }
    result.scenes[s].mask = MergeTiles(scenes[s], groups[scenes[s].scene_id]);
  });
  const auto t_end = Clock::now();

  RunMetrics& m = result.metrics;
  m.stage_a_s = Seconds(t_start, t_a);
  m.stage_b_s = Seconds(t_a, t_b);
  m.stage_c_s = Seconds(t_b, t_end);
  m.wall_s = Seconds(t_start, t_end);
  m.scenes = static_cast<int64_t>(scenes.size());
  m.tiles = static_cast<int64_t>(tiles.size());
  m.bytes_read = reads->TotalBytes() - bytes_before;
  for (size_t s = 0; s < scenes.size(); ++s) {
    const auto& id = scenes[s].scene_id;
    const double pa = reads->Passes(id, ReadStage::kEmbed, plan_pixels[s]);
    const double pb = reads->Passes(id, ReadStage::kInfer, plan_pixels[s]);
    result.passes[id] = {pa, pb};
    m.reads_per_scene[id] = pa + pb;
    m.area_sqkm += SceneAreaSqKm(scenes[s]);
  }
  m.Derive(config.baseline_s_per_scene);
  result.ticket_log = pool.EventLog();
  return result;
}

}  // namespace resflow
