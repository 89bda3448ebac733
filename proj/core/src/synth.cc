#include "resflow/synth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "resflow/status.h"

namespace resflow {
namespace {

struct Preset {
  double r, g, b;
  double noise;
  int pattern;
  double amplitude;
  int period;
};

constexpr Preset kPresets[] = {
    {40, 60, 40, 4, 0, 0, 1},     {95, 90, 70, 14, 0, 0, 1},
    {60, 100, 140, 4, 1, 25, 8},  {150, 125, 95, 8, 0, 0, 1},
    {110, 50, 80, 5, 2, 18, 6},   {70, 140, 70, 6, 1, 12, 3},
    {30, 30, 90, 3, 0, 0, 1},     {130, 130, 130, 10, 2, 30, 12},
};
constexpr int kPresetCount = sizeof(kPresets) / sizeof(kPresets[0]);
constexpr double kRoofContrast = 85.0;
constexpr double kRoofNoise = 3.0;

double DtypeScale(SampleType t) {
  switch (t) {
    case SampleType::kU8: return 1.0;
    case SampleType::kU16: return 257.0;
    case SampleType::kF32: return 1.0 / 255.0;
  }
  return 1.0;
}

}  // namespace

TextureDistribution SynthDistribution(int id, int bands) {
  if (id < 0 || bands <= 0) throw Error(ErrorCode::kInvalidArgument, "bad distribution id");
  const Preset& p = kPresets[id % kPresetCount];
  const double shift = 20.0 * (id / kPresetCount);
  const double base[3] = {p.r, p.g, p.b};
  TextureDistribution d;
  d.noise = p.noise;
  d.pattern = p.pattern;
  d.amplitude = p.amplitude;
  d.period = p.period;
  for (int b = 0; b < bands; ++b) {
    const double m = std::fmod(base[b % 3] + shift + 15.0 * (b / 3), 200.0);
    d.mean.push_back(m);
    d.roof.push_back(m + kRoofContrast <= 255.0 ? m + kRoofContrast : m - kRoofContrast);
  }
  return d;
}

std::vector<SynthScene> GenerateSynthScenes(const SynthConfig& c) {
  if (c.scenes <= 0 || c.distributions <= 0 || c.tile_px < 8 || c.tiles_x <= 0 ||
      c.tiles_y <= 0 || c.bands <= 0 || c.buildings_per_tile < 0 || !(c.gsd_m > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "invalid synth config");
  }
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int cells = c.tiles_x * c.tiles_y;
  std::vector<int> labels(static_cast<size_t>(cells) * c.scenes);
  for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % c.distributions);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<TextureDistribution> dists;
  for (int d = 0; d < c.distributions; ++d) dists.push_back(SynthDistribution(d, c.bands));

  const int64_t bw = std::max<int64_t>(2, c.tile_px / 6);
  const int64_t bh = std::max<int64_t>(2, c.tile_px / 8);
  const double scale = DtypeScale(c.dtype);

  std::vector<SynthScene> out;
  for (int s = 0; s < c.scenes; ++s) {
    SynthScene sc;
    char id[64];
    std::snprintf(id, sizeof(id), "%s_%03d", c.prefix.c_str(), s);
    sc.scene_id = id;
    sc.width = c.tile_px * c.tiles_x;
    sc.height = c.tile_px * c.tiles_y;
    sc.bands = c.bands;
    sc.samples.assign(static_cast<size_t>(sc.width * sc.height * c.bands), 0.0f);
    sc.truth = Mask(sc.width, sc.height);
    sc.cell_labels.assign(labels.begin() + static_cast<ptrdiff_t>(s) * cells,
                          labels.begin() + static_cast<ptrdiff_t>(s + 1) * cells);

    for (int cy = 0; cy < c.tiles_y; ++cy) {
      for (int cx = 0; cx < c.tiles_x; ++cx) {
        const TextureDistribution& d = dists[sc.cell_labels[cy * c.tiles_x + cx]];
        const int64_t ox = cx * c.tile_px, oy = cy * c.tile_px;
        for (int64_t y = 0; y < c.tile_px; ++y) {
          for (int64_t x = 0; x < c.tile_px; ++x) {
            double tex = 0.0;
            if (d.pattern == 1) {
              tex = d.amplitude * std::sin(2.0 * std::numbers::pi * x / d.period);
            } else if (d.pattern == 2) {
              tex = ((x / d.period + y / d.period) % 2 == 0) ? d.amplitude : -d.amplitude;
            }
            float* px = &sc.samples[static_cast<size_t>(((oy + y) * sc.width + ox + x) * c.bands)];
            for (int b = 0; b < c.bands; ++b) {
              px[b] = static_cast<float>(std::clamp(d.mean[b] + tex + d.noise * gauss(rng), 0.0, 255.0));
            }
          }
        }

        // Non-overlapping rectangles with a one-pixel gap, inside the cell.
        std::vector<SynthBuilding> placed;
        std::uniform_int_distribution<int64_t> ux(1, c.tile_px - bw - 1);
        std::uniform_int_distribution<int64_t> uy(1, c.tile_px - bh - 1);
        for (int attempt = 0;
             static_cast<int>(placed.size()) < c.buildings_per_tile && attempt < 10000; ++attempt) {
          SynthBuilding r{ox + ux(rng), oy + uy(rng), bw, bh};
          const bool clash = std::any_of(placed.begin(), placed.end(), [&](const SynthBuilding& o) {
            return r.x0 <= o.x0 + o.w && o.x0 <= r.x0 + r.w && r.y0 <= o.y0 + o.h &&
                   o.y0 <= r.y0 + r.h;
          });
          if (!clash) placed.push_back(r);
        }
        for (const auto& r : placed) {
          for (int64_t y = r.y0; y < r.y0 + r.h; ++y) {
            for (int64_t x = r.x0; x < r.x0 + r.w; ++x) {
              float* px = &sc.samples[static_cast<size_t>((y * sc.width + x) * c.bands)];
              for (int b = 0; b < c.bands; ++b) {
                px[b] = static_cast<float>(std::clamp(d.roof[b] + kRoofNoise * gauss(rng), 0.0, 255.0));
              }
              sc.truth.at(x, y) = 1;
            }
          }
          sc.buildings.push_back(r);
        }
      }
    }
    if (scale != 1.0) {
      for (float& v : sc.samples) v = static_cast<float>(v * scale);
    }
    out.push_back(std::move(sc));
  }
  return out;
}

std::filesystem::path TruthPathFor(const std::filesystem::path& scene_path) {
  auto p = scene_path;
  p.replace_filename(scene_path.stem().string() + ".truth.rsr");
  return p;
}

SynthFiles WriteSynthScenes(const SynthConfig& config, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  SynthFiles files;
  for (const auto& sc : GenerateSynthScenes(config)) {
    const auto path = dir / (sc.scene_id + ".rsr");
    WriteRaster(path, sc.width, sc.height, sc.bands, config.dtype, config.gsd_m, sc.samples);
    const auto truth = TruthPathFor(path);
    WriteMask(truth, sc.truth, config.gsd_m);
    files.scenes.push_back(LoadSceneHeader(path));
    files.truth_paths.push_back(truth);
    files.cell_labels.push_back(sc.cell_labels);
  }
  return files;
}

std::vector<Embedding> GaussianBlobs(int blobs, int per_blob, int dim, double sigma,
                                     double spacing, uint64_t seed, std::vector<int>* labels) {
  if (blobs <= 0 || per_blob <= 0 || dim <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "invalid blob spec");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, sigma);
  std::vector<Embedding> points;
  if (labels != nullptr) labels->clear();
  for (int k = 0; k < blobs; ++k) {
    Embedding center(dim, 0.0);
    center[k % dim] = spacing * (1 + k / dim);
    for (int i = 0; i < per_blob; ++i) {
      Embedding p = center;
      for (double& v : p) v += gauss(rng);
      points.push_back(std::move(p));
      if (labels != nullptr) labels->push_back(k);
    }
  }
  return points;
}

}  // namespace resflow
