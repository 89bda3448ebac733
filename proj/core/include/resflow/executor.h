#ifndef RESFLOW_EXECUTOR_H_
#define RESFLOW_EXECUTOR_H_

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "resflow/bucket_model.h"
#include "resflow/embedding.h"
#include "resflow/gallery.h"
#include "resflow/hashing.h"
#include "resflow/raster.h"
#include "resflow/ticket_pool.h"

namespace resflow {

// Service times used instead of real work when simulating.
struct DeviceCostModel {
  double base_ms = 5.0;
  double ms_per_megapixel = 1.0;
  double ms_per_megabyte = 0.0;
  // Serial reconstruction cost of one scene.
  double merge_ms_per_megapixel = 0.0;

  // Device time for one tile in one stage (service plus window I/O).
  double TileMs(const TileExtent& extent, int bands, SampleType dtype) const;
  double MergeMs(const SceneRef& scene) const;
};

struct ExecutorConfig {
  int workers = 1;
  int devices = 1;
  int tickets_per_device = 1;
  bool simulate = false;
  DeviceCostModel cost;
  // Tiles per ticket checkout.
  int batch = 12;
  int64_t tile_px = 500;
  int64_t overlap_px = 0;
  // 0 keeps the canonical task order; other values shuffle it.
  uint64_t scheduler_seed = 0;
  std::chrono::milliseconds ticket_timeout{60000};
  double baseline_s_per_scene = 2100.0;
};

// Resolves a bucket to its model; throws kModelGap when none is registered.
using ModelProvider = std::function<std::shared_ptr<const BucketModel>(BucketId)>;

ModelProvider GalleryModelProvider(const ModelGallery& models,
                                   const CentroidTable& centroids,
                                   const std::string& task);

struct PipelineContext {
  const FeatureExtractor* extractor = nullptr;
  const HashFunction* hash = nullptr;
  const CentroidTable* centroids = nullptr;
  // Optional; receives one record per tile in canonical order.
  ImageGallery* gallery = nullptr;
  ModelProvider models;
};

struct TileAssignment {
  TileExtent extent;
  BinaryCode code;
  BucketId bucket = -1;
};

struct SceneOutput {
  std::string scene_id;
  // Empty in simulate mode.
  Mask mask;
  std::map<TileExtent, BucketId, ExtentOrder> provenance;
  // Tiles whose bucket has no model; their labels are left 0.
  std::vector<TileExtent> failed_tiles;
  std::vector<std::string> errors;
};

struct RunMetrics {
  double wall_s = 0.0;
  double stage_a_s = 0.0;
  double stage_b_s = 0.0;
  double stage_c_s = 0.0;
  int64_t scenes = 0;
  int64_t tiles = 0;
  int64_t bytes_read = 0;
  // Full-scene read passes summed over stages.
  std::map<std::string, double> reads_per_scene;
  double area_sqkm = 0.0;
  double speedup = 0.0;
  double sqkm_per_s = 0.0;
  double gb_per_s = 0.0;
  double images_per_s = 0.0;

  // Recomputes the derived rates from the primitives.
  void Derive(double baseline_s_per_scene);
};

std::string MetricsToJson(const RunMetrics& m);
RunMetrics MetricsFromJson(const std::string& json);

struct RunResult {
  std::vector<SceneOutput> scenes;
  // Canonical order: scene order, then row-major tile order.
  std::vector<TileAssignment> assignments;
  RunMetrics metrics;
  std::map<std::string, std::pair<double, double>> passes;  // embed, infer
  std::vector<TicketEvent> ticket_log;
};

// Stage A (embed, hash, assign) over every tile, stage B (per-bucket
// inference) in batches per (scene, bucket), stage C (merge) once per scene.
// Each stage waits for the previous one. Outputs do not depend on worker
// count or scheduler seed. Starvation aborts with kStarvation.
RunResult RunPipeline(std::span<const SceneRef> scenes,
                      const PipelineContext& context,
                      const ExecutorConfig& config,
                      ReadLedger* ledger = nullptr);

// Partitions by scene; each list sorted by (y0, x0).
std::map<std::string, std::vector<LabeledTile>> GroupByScene(
    std::vector<LabeledTile> results);

// baseline_s_per_scene * scenes / wall_s.
double ComputeSpeedup(const RunMetrics& metrics, double baseline_s_per_scene);

struct AreaRate {
  double sqkm_per_s = 0.0;
  double per_day = 0.0;
};

AreaRate ComputeAreaRate(double area_sqkm, double wall_s);
AreaRate ComputeAreaRate(const RunMetrics& metrics);

// Runs fn(worker, task) for every index of `order` on a fixed pool of
// `workers` threads. The first exception stops further dispatch and is
// rethrown after all workers join.
void RunOnWorkers(int workers, std::span<const size_t> order,
                  const std::function<void(int, size_t)>& fn);

}  // namespace resflow

#endif  // RESFLOW_EXECUTOR_H_
