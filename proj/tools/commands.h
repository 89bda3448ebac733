#ifndef RESFLOW_TOOLS_COMMANDS_H_
#define RESFLOW_TOOLS_COMMANDS_H_

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "config.h"
#include "resflow/embedding.h"
#include "resflow/executor.h"
#include "resflow/raster.h"
#include "resflow/status.h"

namespace resflow::cli {

enum ExitCode { kExitOk = 0, kExitConfig = 2, kExitData = 3, kExitPipeline = 4 };

ExitCode ExitCodeFor(ErrorCode code);

// "scene_id path" lines; relative paths resolve against the manifest.
std::vector<SceneRef> LoadManifest(const std::filesystem::path& path);
void WriteManifest(const std::filesystem::path& path, std::span<const SceneRef> scenes);

// Files under work_dir.
struct WorkLayout {
  std::filesystem::path root;

  std::filesystem::path scenes() const { return root / "scenes"; }
  std::filesystem::path hash() const { return root / "hash.hsh"; }
  std::filesystem::path centroids() const { return root / "centroids.txt"; }
  std::filesystem::path image_gallery() const { return root / "image_gallery.log"; }
  std::filesystem::path model_gallery() const { return root / "model_gallery.log"; }
  std::filesystem::path models() const { return root / "models"; }
  std::filesystem::path mono_model(const std::string& task) const {
    return models() / (task + "_mono.lpm");
  }
};

struct SynthOutput {
  std::vector<SceneRef> scenes;
  std::vector<std::vector<int>> cell_labels;
};

struct PartitionOutput {
  int k = 0;
  BucketCountSelection selection;  // empty when k was fixed
  std::map<BucketId, int> bucket_tiles;
  bool weak_separation = false;
  double map = 0.0;
  // Canonical tile order over the manifest.
  std::vector<TileExtent> extents;
  std::vector<int> cluster_labels;
  std::vector<BucketId> buckets;
};

struct TrainOutput {
  struct Entry {
    BucketId bucket = -1;
    int version = 0;
    int train_tiles = 0;
    int val_tiles = 0;
    double val_f1 = 0.0;
  };
  std::vector<Entry> registered;
  std::vector<BucketId> skipped;
  double mono_val_f1 = 0.0;
};

struct InferOutput {
  RunResult run;
  std::vector<std::filesystem::path> mask_paths;
};

struct BenchRow {
  int workers = 0;
  int scenes = 0;
  double gb = 0.0;
  double sqkm = 0.0;
  double wall_s = 0.0;
  double speedup = 0.0;
  double sqkm_per_s = 0.0;
  double gb_per_s = 0.0;
  double images_per_s = 0.0;
  double per_day = 0.0;
  double stage_a_s = 0.0;
  double stage_b_s = 0.0;
  double stage_c_s = 0.0;
};

struct ReportOutput {
  std::map<std::string, SegMetrics> per_scene;
  SegMetrics overall;
  RunMetrics metrics;
};

// Every command logs progress to `log`.
SynthOutput CmdSynth(const RunConfig& config, std::ostream& log);
PartitionOutput CmdPartition(const RunConfig& config, std::ostream& log);
TrainOutput CmdTrain(const RunConfig& config, std::ostream& log);
InferOutput CmdInfer(const RunConfig& config, std::ostream& log);
std::vector<BenchRow> CmdBench(const RunConfig& config, std::ostream& log);
ReportOutput CmdReport(const RunConfig& config, std::ostream& log);

ExecutorConfig ExecutorConfigFrom(const RunConfig& config);
std::string BenchCsv(const std::vector<BenchRow>& rows);

// Scores masks under output_dir against the truth masks.
std::map<std::string, SegMetrics> ScoreMasks(std::span<const SceneRef> scenes,
                                             const std::filesystem::path& mask_dir);
std::filesystem::path MaskPathFor(const std::filesystem::path& dir, const std::string& scene_id);

}  // namespace resflow::cli

#endif  // RESFLOW_TOOLS_COMMANDS_H_
