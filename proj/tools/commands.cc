#include "commands.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>

#include "json.hpp"
#include "resflow/bucket_model.h"
#include "resflow/gallery.h"
#include "resflow/hashing.h"
#include "resflow/synth.h"

namespace resflow::cli {
namespace fs = std::filesystem;

namespace {

void EnsureDir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw Error(ErrorCode::kIo, "cannot write " + path.string());
}

std::string ReadText(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kNotFound, "missing file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<SceneRef> RequireScenes(const RunConfig& config) {
  auto scenes = LoadManifest(config.ManifestPath());
  if (scenes.empty()) throw Error(ErrorCode::kInvalidArgument, "manifest lists no scenes");
  for (const auto& s : scenes) {
    if (s.dtype != scenes[0].dtype) {
      throw Error(ErrorCode::kInvalidArgument, "scenes mix sample types");
    }
  }
  return scenes;
}

Mask CutMask(const Mask& mask, const TileExtent& e) {
  if (e.x0 < 0 || e.y0 < 0 || e.x0 + e.w > mask.w || e.y0 + e.h > mask.h) {
    throw Error(ErrorCode::kOutOfRange, "truth mask smaller than scene");
  }
  Mask out(e.w, e.h);
  for (int64_t y = 0; y < e.h; ++y) {
    for (int64_t x = 0; x < e.w; ++x) out.at(x, y) = mask.at(e.x0 + x, e.y0 + y);
  }
  return out;
}

class TruthCache {
 public:
  const Mask& For(const SceneRef& scene) {
    auto it = masks_.find(scene.scene_id);
    if (it == masks_.end()) {
      const fs::path p = TruthPathFor(scene.path);
      if (!fs::exists(p)) throw Error(ErrorCode::kNotFound, "missing truth mask: " + p.string());
      it = masks_.emplace(scene.scene_id, ReadMask(p)).first;
    }
    return it->second;
  }

 private:
  std::map<std::string, Mask> masks_;
};

// Everything stage A and B need, loaded from work_dir.
struct LoadedModels {
  std::unique_ptr<SpectralTextureExtractor> extractor;
  HashFunction hash;
  CentroidTable centroids;
  std::optional<ModelGallery> models;
  std::shared_ptr<const BucketModel> mono;

  PipelineContext Context(const RunConfig& config) const {
    PipelineContext ctx;
    ctx.extractor = extractor.get();
    ctx.hash = &hash;
    ctx.centroids = &centroids;
    if (config.mono) {
      auto m = mono;
      ctx.models = [m](BucketId) { return m; };
    } else {
      ctx.models = GalleryModelProvider(*models, centroids, config.task);
    }
    return ctx;
  }
};

LoadedModels LoadModels(const RunConfig& config, SampleType dtype) {
  const WorkLayout layout{config.work_dir};
  LoadedModels m;
  m.extractor = std::make_unique<SpectralTextureExtractor>(FeatureConfigFor(dtype, config.feature_dim));
  m.hash = LoadHashFunction(layout.hash());
  m.centroids = LoadCentroidTable(layout.centroids(), config.n_bits);
  if (config.mono) {
    m.mono = std::make_shared<LinearPixelModel>(LinearPixelModel::Load(layout.mono_model(config.task)));
  } else {
    m.models.emplace(ModelGallery::Open(layout.model_gallery(), config.n_bits));
  }
  return m;
}

std::string Fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

ExitCode ExitCodeFor(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kNotFound:
    case ErrorCode::kMalformed:
    case ErrorCode::kOutOfRange:
    case ErrorCode::kIo:
      return kExitData;
    default:
      return kExitPipeline;
  }
}

std::vector<SceneRef> LoadManifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kNotFound, "missing manifest: " + path.string());
  std::vector<SceneRef> scenes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string id, file, extra;
    if (!(fields >> id >> file) || (fields >> extra)) {
      throw Error(ErrorCode::kMalformed, "malformed manifest line: " + line);
    }
    fs::path p(file);
    if (p.is_relative()) p = path.parent_path() / p;
    SceneRef ref = LoadSceneHeader(p);
    ref.scene_id = id;
    scenes.push_back(std::move(ref));
  }
  return scenes;
}

void WriteManifest(const fs::path& path, std::span<const SceneRef> scenes) {
  std::string text;
  for (const auto& s : scenes) {
    text += s.scene_id + " " + fs::proximate(s.path, path.parent_path()).generic_string() + "\n";
  }
  if (path.has_parent_path()) EnsureDir(path.parent_path());
  WriteText(path, text);
}

ExecutorConfig ExecutorConfigFrom(const RunConfig& c) {
  ExecutorConfig e;
  e.workers = c.workers;
  e.devices = c.devices;
  e.tickets_per_device = c.tickets_per_device;
  e.simulate = c.simulate;
  e.cost.base_ms = c.cost_base_ms;
  e.cost.ms_per_megapixel = c.cost_ms_per_megapixel;
  e.cost.ms_per_megabyte = c.cost_ms_per_megabyte;
  e.cost.merge_ms_per_megapixel = c.cost_merge_ms_per_megapixel;
  e.batch = c.batch;
  e.tile_px = c.tile_px;
  e.overlap_px = c.overlap_px;
  e.scheduler_seed = c.scheduler_seed;
  e.ticket_timeout = std::chrono::milliseconds(c.ticket_timeout_ms);
  e.baseline_s_per_scene = c.baseline_s_per_scene;
  return e;
}

SynthOutput CmdSynth(const RunConfig& config, std::ostream& log) {
  const WorkLayout layout{config.work_dir};
  SynthConfig sc;
  sc.scenes = config.synth_scenes;
  sc.distributions = config.synth_distributions;
  sc.tile_px = config.tile_px;
  sc.tiles_x = config.synth_tiles_x;
  sc.tiles_y = config.synth_tiles_y;
  sc.bands = config.synth_bands;
  sc.dtype = ParseSampleType(config.synth_dtype);
  sc.gsd_m = config.synth_gsd_m;
  sc.buildings_per_tile = config.synth_buildings;
  sc.seed = config.seed;
  const SynthFiles files = WriteSynthScenes(sc, layout.scenes());
  WriteManifest(config.ManifestPath(), files.scenes);

  std::string labels;
  for (size_t s = 0; s < files.scenes.size(); ++s) {
    for (int cy = 0; cy < sc.tiles_y; ++cy) {
      for (int cx = 0; cx < sc.tiles_x; ++cx) {
        labels += files.scenes[s].scene_id + " " + std::to_string(cx) + " " + std::to_string(cy) +
                  " " + std::to_string(files.cell_labels[s][cy * sc.tiles_x + cx]) + "\n";
      }
    }
  }
  WriteText(layout.scenes() / "cell_labels.txt", labels);
  log << "synth: wrote " << files.scenes.size() << " scenes (" << sc.distributions
      << " distributions) to " << layout.scenes().string() << "\n";
  return {files.scenes, files.cell_labels};
}

PartitionOutput CmdPartition(const RunConfig& config, std::ostream& log) {
  const WorkLayout layout{config.work_dir};
  const auto scenes = RequireScenes(config);
  const SpectralTextureExtractor extractor(FeatureConfigFor(scenes[0].dtype, config.feature_dim));
  const ClusterMethod method = ParseClusterMethod(config.cluster_method);

  PartitionOutput out;
  std::vector<Embedding> points;
  std::vector<const SceneRef*> owner;
  for (const auto& scene : scenes) {
    for (const auto& e : TileExtents(scene, config.tile_px, config.overlap_px)) {
      points.push_back(extractor.Extract(ReadWindow(scene, e, nullptr, ReadStage::kEmbed)));
      out.extents.push_back(e);
      owner.push_back(&scene);
    }
  }
  const int n = static_cast<int>(points.size());

  if (config.k > 0) {
    out.k = config.k;
  } else {
    BucketCountOptions opts;
    opts.threshold = config.knee_threshold;
    opts.method = method;
    opts.seed = config.seed;
    out.selection = SelectBucketCount(points, std::min(config.k_min, n), std::min(config.k_max, n), opts);
    out.weak_separation = !out.selection.knee_found || out.selection.separation < 0.5;
    // Without cluster structure any knee is noise; use the smallest k.
    out.k = out.weak_separation ? out.selection.ks.front() : out.selection.k;
    log << "partition: selected k = " << out.k << " (separation " << Fixed(out.selection.separation, 4)
        << ")\n";
    log << "  variance by k:";
    for (size_t i = 0; i < out.selection.ks.size(); ++i) {
      log << ' ' << out.selection.ks[i] << '=' << Fixed(out.selection.variances[i], 4);
    }
    log << "\n";
    if (out.weak_separation) {
      log << "warning: weak separation; tiles barely cluster, using k = " << out.k << "\n";
    }
  }
  const ClusterModel clusters = FitClusters(points, out.k, method, config.seed);
  out.cluster_labels = clusters.labels;

  HashFitOptions hopts;
  hopts.candidates = config.hash_candidates;
  const HashFunction hash = FitHash(points, clusters.labels, config.n_bits, config.seed, hopts);
  std::vector<BinaryCode> codes;
  codes.reserve(points.size());
  for (const auto& p : points) codes.push_back(Encode(hash, p));
  const CentroidTable table = BucketCentroids(codes, clusters.labels);
  try {
    out.map = EvaluateMap(codes, clusters.labels).map;
  } catch (const Error& e) {
    log << "warning: mAP undefined: " << e.what() << "\n";
  }

  EnsureDir(layout.root);
  SaveHashFunction(layout.hash(), hash);
  SaveCentroidTable(layout.centroids(), table);
  ImageGallery gallery = ImageGallery::Open(layout.image_gallery(), config.n_bits, true);
  for (int b = 0; b < table.size(); ++b) out.bucket_tiles[b] = 0;
  for (size_t i = 0; i < codes.size(); ++i) {
    const BucketId bucket = AssignBucket(codes[i], table);
    GalleryRecord rec;
    rec.code = codes[i];
    rec.bucket_id = bucket;
    rec.extent = out.extents[i];
    rec.storage_path = owner[i]->path.generic_string();
    gallery.Insert(std::move(rec), table, owner[i]);
    out.buckets.push_back(bucket);
    ++out.bucket_tiles[bucket];
  }
  gallery.Flush();

  log << "partition: " << n << " tiles, " << table.size() << " buckets, mAP "
      << Fixed(out.map, 4) << "\n";
  for (const auto& [bucket, count] : out.bucket_tiles) {
    log << "  bucket " << bucket << " [" << table.code(bucket).ToHex() << "]: " << count
        << " tiles\n";
  }
  return out;
}

TrainOutput CmdTrain(const RunConfig& config, std::ostream& log) {
  const WorkLayout layout{config.work_dir};
  const auto scenes = RequireScenes(config);
  std::map<std::string, const SceneRef*> by_id;
  for (const auto& s : scenes) by_id[s.scene_id] = &s;
  const CentroidTable table = LoadCentroidTable(layout.centroids(), config.n_bits);
  const ImageGallery gallery = ImageGallery::Open(layout.image_gallery(), config.n_bits);
  ModelGallery registry = ModelGallery::Open(layout.model_gallery(), config.n_bits);
  TruthCache truth;

  // Evenly spaced validation picks in record-id order, at least one per bucket.
  auto split = [&](const std::vector<GalleryRecord>& recs, std::vector<TrainingSample>* train,
                   std::vector<TrainingSample>* val) {
    size_t n_val = 0;
    if (recs.size() >= 2 && config.val_fraction > 0.0) {
      n_val = std::max<size_t>(1, static_cast<size_t>(std::lround(recs.size() * config.val_fraction)));
    }
    const size_t stride = n_val > 0 ? recs.size() / n_val : 0;
    for (size_t i = 0; i < recs.size(); ++i) {
      const auto it = by_id.find(recs[i].extent.scene_id);
      if (it == by_id.end()) {
        throw Error(ErrorCode::kNotFound, "gallery scene '" + recs[i].extent.scene_id +
                                              "' is not in the manifest");
      }
      TrainingSample s{ReadWindow(*it->second, recs[i].extent, nullptr, ReadStage::kOther),
                       CutMask(truth.For(*it->second), recs[i].extent)};
      const bool is_val = stride > 0 && i % stride == stride - 1 && i / stride < n_val;
      (is_val ? val : train)->push_back(std::move(s));
    }
  };
  auto validate = [](const BucketModel& m, const std::vector<TrainingSample>& val) {
    std::vector<SegMetrics> parts;
    for (const auto& s : val) parts.push_back(ComputeSegMetrics(m.Infer(s.tile), s.truth));
    return AccumulateSegMetrics(parts).f1;
  };

  LinearModelHyper hyper;
  hyper.epochs = config.epochs;
  hyper.learning_rate = config.learning_rate;
  hyper.max_pixels = config.max_pixels;
  hyper.seed = config.seed;

  struct Job {
    std::vector<TrainingSample> train, val;
    std::optional<LinearPixelModel> model;
    double f1 = 0.0;
    std::string skip_reason;
  };
  std::vector<Job> jobs(table.size());
  std::vector<TrainingSample> all_train, all_val;
  for (int b = 0; b < table.size(); ++b) {
    split(gallery.QueryByBucket(b), &jobs[b].train, &jobs[b].val);
  }

  std::vector<size_t> order(jobs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  RunOnWorkers(config.workers, order, [&](int, size_t b) {
    Job& job = jobs[b];
    if (job.train.empty()) {
      job.skip_reason = "no training tiles";
      return;
    }
    LinearPixelModel m(hyper);
    try {
      m.Train(job.train);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerate) throw;
      job.skip_reason = e.what();
      return;
    }
    job.f1 = validate(m, job.val.empty() ? job.train : job.val);
    job.model = std::move(m);
  });

  TrainOutput out;
  EnsureDir(layout.models());
  for (int b = 0; b < table.size(); ++b) {
    Job& job = jobs[b];
    if (!job.model) {
      log << "warning: bucket " << b << " skipped: " << job.skip_reason << "\n";
      out.skipped.push_back(b);
      continue;
    }
    const BinaryCode& code = table.code(b);
    const int version = registry.NextVersion(code, config.task);
    const fs::path artifact =
        layout.models() / (config.task + "_" + code.ToHex() + "_v" + std::to_string(version) + ".lpm");
    job.model->Save(artifact);
    ModelRecord rec;
    rec.bucket_code = code;
    rec.task = config.task;
    rec.artifact_path = artifact.generic_string();
    rec.train_stats.samples = static_cast<int64_t>(job.train.size());
    rec.train_stats.f1 = job.f1;
    registry.Register(std::move(rec), table);
    out.registered.push_back({b, version, static_cast<int>(job.train.size()),
                              static_cast<int>(job.val.size()), job.f1});
    log << "train: bucket " << b << " v" << version << " (" << job.train.size() << " train, "
        << job.val.size() << " val) F1 " << Fixed(job.f1, 4) << "\n";
  }

  if (config.train_mono) {
    for (auto& job : jobs) {
      for (auto& s : job.train) all_train.push_back(std::move(s));
      for (auto& s : job.val) all_val.push_back(std::move(s));
    }
    LinearPixelModel mono(hyper);
    mono.Train(all_train);
    out.mono_val_f1 = validate(mono, all_val.empty() ? all_train : all_val);
    mono.Save(layout.mono_model(config.task));
    log << "train: mono model F1 " << Fixed(out.mono_val_f1, 4) << "\n";
  }
  return out;
}

fs::path MaskPathFor(const fs::path& dir, const std::string& scene_id) {
  return dir / (scene_id + ".mask.rsr");
}

InferOutput CmdInfer(const RunConfig& config, std::ostream& log) {
  const auto scenes = RequireScenes(config);
  const fs::path out_dir = config.OutputDir();
  EnsureDir(out_dir);
  const ExecutorConfig ec = ExecutorConfigFrom(config);

  InferOutput out;
  ReadLedger ledger;
  if (config.simulate) {
    out.run = RunPipeline(scenes, PipelineContext{}, ec, &ledger);
  } else {
    const LoadedModels models = LoadModels(config, scenes[0].dtype);
    ImageGallery gallery = ImageGallery::Open(out_dir / "gallery.log", config.n_bits, true);
    PipelineContext ctx = models.Context(config);
    ctx.gallery = &gallery;
    out.run = RunPipeline(scenes, ctx, ec, &ledger);
    gallery.Flush();
    for (size_t s = 0; s < scenes.size(); ++s) {
      const SceneOutput& so = out.run.scenes[s];
      const fs::path p = MaskPathFor(out_dir, so.scene_id);
      WriteMask(p, so.mask, scenes[s].gsd_m);
      WriteMaskSidecar(out_dir / (so.scene_id + ".buckets.txt"), so.mask);
      out.mask_paths.push_back(p);
      for (const auto& err : so.errors) log << "warning: " << so.scene_id << ": " << err << "\n";
    }
  }
  WriteText(out_dir / "metrics.json", MetricsToJson(out.run.metrics) + "\n");
  WriteTicketLog(out_dir / "tickets.log", out.run.ticket_log);
  log << "infer: " << scenes.size() << " scenes, " << out.run.metrics.tiles << " tiles in "
      << Fixed(out.run.metrics.wall_s, 3) << " s\n";
  for (const auto& [id, passes] : out.run.metrics.reads_per_scene) {
    log << "  " << id << ": " << Fixed(passes, 3) << " read passes\n";
  }
  return out;
}

std::string BenchCsv(const std::vector<BenchRow>& rows) {
  std::string csv = "workers,scenes,gb,sqkm,wall_s,speedup,sqkm_per_s,gb_per_s,images_per_s,per_day\n";
  for (const auto& r : rows) {
    csv += std::to_string(r.workers) + "," + std::to_string(r.scenes) + "," + Fixed(r.gb, 6) + "," +
           Fixed(r.sqkm, 6) + "," + Fixed(r.wall_s, 6) + "," + Fixed(r.speedup, 4) + "," +
           Fixed(r.sqkm_per_s, 6) + "," + Fixed(r.gb_per_s, 6) + "," + Fixed(r.images_per_s, 4) +
           "," + Fixed(r.per_day, 3) + "\n";
  }
  return csv;
}

std::vector<BenchRow> CmdBench(const RunConfig& config, std::ostream& log) {
  if (config.bench_workers.empty() || config.bench_scenes.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "empty sweep");
  }
  int max_scenes = 0;
  for (int s : config.bench_scenes) max_scenes = std::max(max_scenes, s);

  // Simulate mode never touches pixels, so scenes are virtual.
  std::vector<SceneRef> pool;
  std::optional<LoadedModels> models;
  if (config.simulate) {
    for (int i = 0; i < max_scenes; ++i) {
      char id[32];
      std::snprintf(id, sizeof(id), "bench_%03d", i);
      SceneRef s;
      s.scene_id = id;
      s.width_px = s.height_px = config.bench_scene_px;
      s.bands = config.synth_bands;
      s.dtype = ParseSampleType(config.synth_dtype);
      s.gsd_m = config.synth_gsd_m;
      pool.push_back(s);
    }
  } else {
    const auto base = RequireScenes(config);
    for (int i = 0; i < max_scenes; ++i) {
      SceneRef s = base[i % base.size()];
      if (i >= static_cast<int>(base.size())) s.scene_id += "_r" + std::to_string(i);
      pool.push_back(s);
    }
    models.emplace(LoadModels(config, base[0].dtype));
  }
  const PipelineContext ctx = models ? models->Context(config) : PipelineContext{};

  auto run = [&](int workers, int n) {
    ExecutorConfig ec = ExecutorConfigFrom(config);
    ec.workers = workers;
    return RunPipeline(std::span<const SceneRef>(pool.data(), n), ctx, ec).metrics;
  };

  double baseline = config.baseline_s_per_scene;
  if (config.bench_baseline == "measured") {
    baseline = run(1, 1).wall_s;
    log << "bench: measured baseline " << Fixed(baseline, 4) << " s per scene\n";
  }

  std::vector<BenchRow> rows;
  for (int n : config.bench_scenes) {
    for (int w : config.bench_workers) {
      RunMetrics m = run(w, n);
      m.Derive(baseline);
      BenchRow r;
      r.workers = w;
      r.scenes = n;
      r.gb = static_cast<double>(m.bytes_read) / 1e9;
      r.sqkm = m.area_sqkm;
      r.wall_s = m.wall_s;
      r.speedup = m.speedup;
      r.sqkm_per_s = m.sqkm_per_s;
      r.gb_per_s = m.gb_per_s;
      r.images_per_s = m.images_per_s;
      r.per_day = ComputeAreaRate(m).per_day;
      r.stage_a_s = m.stage_a_s;
      r.stage_b_s = m.stage_b_s;
      r.stage_c_s = m.stage_c_s;
      rows.push_back(r);
      log << "bench: workers " << w << " scenes " << n << " wall " << Fixed(m.wall_s, 4)
          << " s speedup " << Fixed(m.speedup, 3) << "\n";
    }
  }
  const fs::path out_dir = config.OutputDir();
  EnsureDir(out_dir);
  WriteText(out_dir / "bench.csv", BenchCsv(rows));
  return rows;
}

std::map<std::string, SegMetrics> ScoreMasks(std::span<const SceneRef> scenes,
                                             const fs::path& mask_dir) {
  std::map<std::string, SegMetrics> out;
  for (const auto& s : scenes) {
    const fs::path truth = TruthPathFor(s.path);
    if (!fs::exists(truth)) continue;
    out[s.scene_id] = ComputeSegMetrics(ReadMask(MaskPathFor(mask_dir, s.scene_id)), ReadMask(truth));
  }
  return out;
}

ReportOutput CmdReport(const RunConfig& config, std::ostream& log) {
  const auto scenes = RequireScenes(config);
  const fs::path out_dir = config.OutputDir();
  ReportOutput out;
  out.metrics = MetricsFromJson(ReadText(out_dir / "metrics.json"));
  out.per_scene = ScoreMasks(scenes, out_dir);
  std::vector<SegMetrics> parts;
  for (const auto& [id, m] : out.per_scene) parts.push_back(m);
  if (!parts.empty()) out.overall = AccumulateSegMetrics(parts);

  nlohmann::ordered_json j;
  j["task"] = config.task;
  j["metrics"] = nlohmann::json::parse(MetricsToJson(out.metrics));
  if (out.metrics.wall_s > 0 && out.metrics.area_sqkm > 0) {
    j["sqkm_per_day"] = ComputeAreaRate(out.metrics).per_day;
  }
  for (const auto& [id, m] : out.per_scene) {
    j["scenes"][id] = {{"iou", m.iou}, {"f1", m.f1}, {"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}};
  }
  if (!parts.empty()) j["overall"] = {{"iou", out.overall.iou}, {"f1", out.overall.f1}};
  WriteText(out_dir / "report.json", j.dump(2) + "\n");

  log << "report: " << out.metrics.scenes << " scenes, " << out.metrics.tiles << " tiles, wall "
      << Fixed(out.metrics.wall_s, 3) << " s\n";
  for (const auto& [id, m] : out.per_scene) {
    log << "  " << id << ": IoU " << Fixed(m.iou, 4) << " F1 " << Fixed(m.f1, 4) << "\n";
  }
  if (!parts.empty()) {
    log << "  overall: IoU " << Fixed(out.overall.iou, 4) << " F1 " << Fixed(out.overall.f1, 4) << "\n";
  }
  return out;
}

}  // namespace resflow::cli
