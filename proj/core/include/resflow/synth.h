#ifndef RESFLOW_SYNTH_H_
#define RESFLOW_SYNTH_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "resflow/embedding.h"
#include "resflow/raster.h"

namespace resflow {

// Scenes are grids of tile-sized cells. Each cell draws its background from
// one texture distribution and carries a fixed number of rectangular
// buildings.
struct SynthConfig {
  int scenes = 3;
  int distributions = 6;
  int64_t tile_px = 500;
  int tiles_x = 4;
  int tiles_y = 4;
  int bands = 3;
  SampleType dtype = SampleType::kU8;
  double gsd_m = 0.5;
  int buildings_per_tile = 4;
  uint64_t seed = 7;
  std::string prefix = "scene";
};

struct TextureDistribution {
  std::vector<double> mean;
  double noise = 0.0;
  // 0 flat, 1 vertical stripes, 2 checkerboard.
  int pattern = 0;
  double amplitude = 0.0;
  int period = 1;
  std::vector<double> roof;
};

// Preset i for i < 8; later ids reuse presets with shifted means.
TextureDistribution SynthDistribution(int id, int bands);

struct SynthBuilding {
  int64_t x0 = 0;
  int64_t y0 = 0;
  int64_t w = 0;
  int64_t h = 0;
};

struct SynthScene {
  std::string scene_id;
  int64_t width = 0;
  int64_t height = 0;
  int bands = 0;
  // Band-interleaved, in the dtype's value range.
  std::vector<float> samples;
  Mask truth;
  // Distribution id per cell, row-major.
  std::vector<int> cell_labels;
  std::vector<SynthBuilding> buildings;
};

// Deterministic in config. Cell labels are balanced over distributions
// across all scenes.
std::vector<SynthScene> GenerateSynthScenes(const SynthConfig& config);

struct SynthFiles {
  std::vector<SceneRef> scenes;
  std::vector<std::filesystem::path> truth_paths;
  std::vector<std::vector<int>> cell_labels;
};

// Truth mask path convention: <stem>.truth.rsr beside the scene.
std::filesystem::path TruthPathFor(const std::filesystem::path& scene_path);

// Writes <dir>/<prefix>_NNN.rsr plus truth masks.
SynthFiles WriteSynthScenes(const SynthConfig& config,
                            const std::filesystem::path& dir);

// Isotropic Gaussian blobs with centers spaced `spacing` apart along
// distinct axes. labels receives the generating blob id.
std::vector<Embedding> GaussianBlobs(int blobs, int per_blob, int dim,
                                     double sigma, double spacing,
                                     uint64_t seed, std::vector<int>* labels);

}  // namespace resflow

#endif  // RESFLOW_SYNTH_H_
