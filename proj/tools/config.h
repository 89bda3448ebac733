#ifndef RESFLOW_TOOLS_CONFIG_H_
#define RESFLOW_TOOLS_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace resflow::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  // Layout.
  std::string work_dir = "resflow_work";
  std::string manifest;  // empty: <work_dir>/manifest.txt
  std::string output_dir;  // empty: <work_dir>/out

  // Tiling and partitioning.
  int64_t tile_px = 500;
  int64_t overlap_px = 0;
  int feature_dim = 48;
  int n_bits = 32;
  int k = 0;  // 0 selects k over [k_min, k_max]
  int k_min = 2;
  int k_max = 10;
  double knee_threshold = 0.1;
  std::string cluster_method = "kmeans";
  int hash_candidates = 64;

  // Execution.
  int workers = 4;
  int devices = 1;
  int tickets_per_device = 2;
  bool simulate = false;
  double cost_base_ms = 5.0;
  double cost_ms_per_megapixel = 1.0;
  double cost_ms_per_megabyte = 1.0;
  double cost_merge_ms_per_megapixel = 2.0;
  int batch = 12;
  double baseline_s_per_scene = 2100.0;
  uint64_t scheduler_seed = 0;
  int64_t ticket_timeout_ms = 60000;

  uint64_t seed = 7;
  std::string task = "building";

  // Training.
  int epochs = 200;
  double learning_rate = 0.1;
  int64_t max_pixels = 60000;
  double val_fraction = 0.1;
  bool train_mono = true;
  bool mono = false;  // infer with the all-data model

  // Synthetic data.
  int synth_scenes = 3;
  int synth_distributions = 6;
  int synth_tiles_x = 4;
  int synth_tiles_y = 4;
  int synth_bands = 3;
  std::string synth_dtype = "u8";
  double synth_gsd_m = 0.5;
  int synth_buildings = 4;

  // Benchmark sweep.
  std::vector<int> bench_workers = {1, 2, 4, 8, 16};
  std::vector<int> bench_scenes = {1, 12};
  int64_t bench_scene_px = 2000;
  // "measured" uses the 1-scene, 1-worker wall time; "config" uses
  // baseline_s_per_scene.
  std::string bench_baseline = "measured";

  bool operator==(const RunConfig&) const = default;

  std::filesystem::path ManifestPath() const;
  std::filesystem::path OutputDir() const;
};

// Flat "key = value" lines; '#' starts a comment. Unknown keys, bad values
// and duplicates throw ConfigError.
RunConfig ParseConfig(const std::string& text, RunConfig base = {});
RunConfig LoadConfig(const std::filesystem::path& path);
std::string EmitConfig(const RunConfig& config);

// Sets one key from its text form.
void SetConfigValue(RunConfig* config, const std::string& key,
                    const std::string& value);
std::vector<std::string> ConfigKeys();

// RESFLOW_SEED, when set, replaces config.seed.
void ApplyEnvironment(RunConfig* config);

// Range and consistency checks.
void ValidateConfig(const RunConfig& config);

}  // namespace resflow::cli

#endif  // RESFLOW_TOOLS_CONFIG_H_
