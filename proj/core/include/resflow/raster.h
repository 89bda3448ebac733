#ifndef RESFLOW_RASTER_H_
#define RESFLOW_RASTER_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace resflow {

using BucketId = int;

enum class SampleType { kU8, kU16, kF32 };

const char* SampleTypeName(SampleType type);
SampleType ParseSampleType(const std::string& name);
int SampleBytes(SampleType type);

// Path-based reference to a large raster. Pixel data is never held here;
// it is pulled through ReadWindow one tile at a time.
struct SceneRef {
  std::string scene_id;
  std::filesystem::path path;
  int64_t width_px = 0;
  int64_t height_px = 0;
  int bands = 0;
  SampleType dtype = SampleType::kU8;
  double gsd_m = 0.0;
  // Byte offset of the first sample in the container.
  uint64_t data_offset = 0;

  // Throws kInvalidArgument when the invariants do not hold.
  void Validate() const;
  uint64_t bytes() const;
};

struct TileExtent {
  std::string scene_id;
  int64_t x0 = 0;
  int64_t y0 = 0;
  int64_t w = 0;
  int64_t h = 0;

  int64_t area() const { return w * h; }
  auto key() const { return std::tie(y0, x0, h, w); }
  bool operator==(const TileExtent&) const = default;
};

// Orders by (y0, x0), the merge precedence.
struct ExtentOrder {
  bool operator()(const TileExtent& a, const TileExtent& b) const {
    return std::tie(a.scene_id, a.y0, a.x0, a.h, a.w) <
           std::tie(b.scene_id, b.y0, b.x0, b.h, b.w);
  }
};

// Materialized window. Samples are band-interleaved by pixel, row-major.
struct Tile {
  TileExtent extent;
  int bands = 0;
  std::vector<float> pixels;

  float at(int64_t x, int64_t y, int band) const {
    return pixels[static_cast<size_t>((y * extent.w + x) * bands + band)];
  }
};

struct Mask {
  int64_t w = 0;
  int64_t h = 0;
  std::vector<uint8_t> labels;
  // Which bucket produced each merged tile.
  std::map<TileExtent, BucketId, ExtentOrder> provenance;

  Mask() = default;
  Mask(int64_t width, int64_t height, uint8_t fill = 0)
      : w(width), h(height), labels(static_cast<size_t>(width * height), fill) {}

  uint8_t at(int64_t x, int64_t y) const {
    return labels[static_cast<size_t>(y * w + x)];
  }
  uint8_t& at(int64_t x, int64_t y) {
    return labels[static_cast<size_t>(y * w + x)];
  }
};

enum class ReadStage { kEmbed, kInfer, kOther };

const char* ReadStageName(ReadStage stage);

// Thread-safe window-read accounting. Every ReadWindow call records exactly
// one cell. A "pass" is one sweep over the scene's planned tile area.
class ReadLedger {
 public:
  struct Cell {
    int64_t windows = 0;
    int64_t pixels = 0;
    int64_t bytes = 0;
  };

  void Record(const std::string& scene_id, ReadStage stage, int64_t pixels,
              int64_t bytes);

  Cell Get(const std::string& scene_id, ReadStage stage) const;
  // pixels read in `stage` divided by the pixel area of one full tile plan.
  double Passes(const std::string& scene_id, ReadStage stage,
                int64_t plan_pixels) const;
  int64_t TotalBytes() const;
  std::map<std::pair<std::string, ReadStage>, Cell> Snapshot() const;

 private:
  mutable std::mutex mu_;
  std::map<std::pair<std::string, ReadStage>, Cell> cells_;
};

// Reads the "RSR1" header. The scene id defaults to the file stem.
SceneRef LoadSceneHeader(const std::filesystem::path& path);

// Reads only the rows and columns covered by `extent`.
Tile ReadWindow(const SceneRef& scene, const TileExtent& extent,
                ReadLedger* ledger, ReadStage stage);

// Row-major grid with stride tile_px - overlap_px; edge tiles are clamped.
std::vector<TileExtent> TileExtents(const SceneRef& scene, int64_t tile_px,
                                    int64_t overlap_px);

int64_t PlanPixels(const std::vector<TileExtent>& plan);

struct LabeledTile {
  TileExtent extent;
  Mask mask;
  BucketId bucket = -1;
};

// Paints tiles in (y0, x0) order; a pixel keeps the first tile that covers it.
Mask MergeTiles(const SceneRef& scene, std::span<const LabeledTile> tiles);

// Cuts `mask` along `plan`. Inverse of MergeTiles for disjoint plans.
std::vector<LabeledTile> SplitMask(const Mask& mask,
                                   const std::vector<TileExtent>& plan,
                                   BucketId bucket = 0);

double SceneAreaSqKm(const SceneRef& scene);

// Writes a complete container. `samples` is band-interleaved by pixel.
void WriteRaster(const std::filesystem::path& path, int64_t width,
                 int64_t height, int bands, SampleType dtype, double gsd_m,
                 std::span<const float> samples);

// Incremental writer used for scenes too large to hold in memory.
class RasterWriter {
 public:
  RasterWriter(const std::filesystem::path& path, int64_t width,
               int64_t height, int bands, SampleType dtype, double gsd_m);
  ~RasterWriter();
  RasterWriter(const RasterWriter&) = delete;
  RasterWriter& operator=(const RasterWriter&) = delete;

  // Appends one full row of width * bands samples.
  void WriteRow(std::span<const float> row);
  void Close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

void WriteMask(const std::filesystem::path& path, const Mask& mask,
               double gsd_m);
Mask ReadMask(const std::filesystem::path& path);

// Sidecar lines "x0 y0 w h bucket_hex".
void WriteMaskSidecar(const std::filesystem::path& path, const Mask& mask);
std::map<TileExtent, BucketId, ExtentOrder> ReadMaskSidecar(
    const std::filesystem::path& path, const std::string& scene_id);

}  // namespace resflow

#endif  // RESFLOW_RASTER_H_
