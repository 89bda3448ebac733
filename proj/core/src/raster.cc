#include "resflow/raster.h"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "resflow/status.h"

namespace resflow {
namespace {

constexpr char kMagic[] = "RSR1\n";
constexpr size_t kMagicLen = 5;
constexpr size_t kMaxHeaderLine = 256;

static_assert(std::endian::native == std::endian::little,
              "raster containers are little-endian; add byte swapping");

std::string FormatDouble(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void EncodeSamples(std::span<const float> in, SampleType dtype,
                   std::vector<char>* out) {
  const int nb = SampleBytes(dtype);
  out->resize(in.size() * nb);
  char* dst = out->data();
  for (float v : in) {
    switch (dtype) {
      case SampleType::kU8: {
        const auto s = static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        std::memcpy(dst, &s, 1);
        break;
      }
      case SampleType::kU16: {
        const auto s =
            static_cast<uint16_t>(std::clamp(std::lround(v), 0L, 65535L));
        std::memcpy(dst, &s, 2);
        break;
      }
      case SampleType::kF32:
        std::memcpy(dst, &v, 4);
        break;
    }
    dst += nb;
  }
}

void DecodeSamples(const char* src, size_t count, SampleType dtype,
                   float* out) {
  for (size_t i = 0; i < count; ++i) {
    switch (dtype) {
      case SampleType::kU8:
        out[i] = static_cast<uint8_t>(src[i]);
        break;
      case SampleType::kU16: {
        uint16_t s;
        std::memcpy(&s, src + 2 * i, 2);
        out[i] = s;
        break;
      }
      case SampleType::kF32:
        std::memcpy(&out[i], src + 4 * i, 4);
        break;
    }
  }
}

std::string HeaderLine(int64_t width, int64_t height, int bands,
                       SampleType dtype, double gsd_m) {
  std::ostringstream os;
  os << width << ' ' << height << ' ' << bands << ' ' << SampleTypeName(dtype)
     << ' ' << FormatDouble(gsd_m) << '\n';
  return os.str();
}

std::string Rect(int64_t x0, int64_t y0, int64_t w, int64_t h) {
  std::ostringstream os;
  os << '[' << x0 << ' ' << y0 << ' ' << w << ' ' << h << ']';
  return os.str();
}

// Groups uncovered pixels into rectangles by extending identical row runs.
std::vector<std::array<int64_t, 4>> UncoveredRects(
    const std::vector<uint8_t>& covered, int64_t width, int64_t height) {
  struct Open {
    int64_t x0, x1, y0;
  };
  std::vector<std::array<int64_t, 4>> out;
  std::vector<Open> open;
  for (int64_t y = 0; y <= height; ++y) {
    std::vector<std::pair<int64_t, int64_t>> runs;
    if (y < height) {
      int64_t x = 0;
      while (x < width) {
        if (covered[y * width + x]) {
          ++x;
          continue;
        }
        int64_t s = x;
        while (x < width && !covered[y * width + x]) ++x;
        runs.emplace_back(s, x);
      }
    }
    std::vector<Open> next;
    for (const auto& o : open) {
      auto it = std::find(runs.begin(), runs.end(), std::make_pair(o.x0, o.x1));
      if (it != runs.end()) {
        next.push_back(o);
        runs.erase(it);
      } else {
        out.push_back({o.x0, o.y0, o.x1 - o.x0, y - o.y0});
      }
    }
    for (const auto& r : runs) next.push_back({r.first, r.second, y});
    open = std::move(next);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tie(a[1], a[0]) < std::tie(b[1], b[0]);
  });
  return out;
}

}  // namespace

const char* SampleTypeName(SampleType type) {
  switch (type) {
    case SampleType::kU8:
      return "u8";
    case SampleType::kU16:
      return "u16";
    case SampleType::kF32:
      return "f32";
  }
  return "?";
}

SampleType ParseSampleType(const std::string& name) {
  if (name == "u8") return SampleType::kU8;
  if (name == "u16") return SampleType::kU16;
  if (name == "f32") return SampleType::kF32;
  throw Error(ErrorCode::kMalformed, "malformed header: unknown dtype '" + name + "'");
}

int SampleBytes(SampleType type) {
  switch (type) {
    case SampleType::kU8:
      return 1;
    case SampleType::kU16:
      return 2;
    case SampleType::kF32:
      return 4;
  }
  return 0;
}

void SceneRef::Validate() const {
  if (width_px <= 0 || height_px <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "zero dimension");
  }
  if (bands <= 0) throw Error(ErrorCode::kInvalidArgument, "bands must be positive");
  if (!(gsd_m > 0.0) || !std::isfinite(gsd_m)) {
    throw Error(ErrorCode::kInvalidArgument, "gsd must be positive");
  }
}

uint64_t SceneRef::bytes() const {
  return static_cast<uint64_t>(width_px) * height_px * bands * SampleBytes(dtype);
}

const char* ReadStageName(ReadStage stage) {
  switch (stage) {
    case ReadStage::kEmbed:
      return "embed";
    case ReadStage::kInfer:
      return "infer";
    case ReadStage::kOther:
      return "other";
  }
  return "?";
}

void ReadLedger::Record(const std::string& scene_id, ReadStage stage,
                        int64_t pixels, int64_t bytes) {
  std::lock_guard<std::mutex> lock(mu_);
  Cell& c = cells_[{scene_id, stage}];
  ++c.windows;
  c.pixels += pixels;
  c.bytes += bytes;
}

ReadLedger::Cell ReadLedger::Get(const std::string& scene_id,
                                 ReadStage stage) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = cells_.find({scene_id, stage});
  return it == cells_.end() ? Cell{} : it->second;
}

double ReadLedger::Passes(const std::string& scene_id, ReadStage stage,
                          int64_t plan_pixels) const {
  if (plan_pixels <= 0) return 0.0;
  return static_cast<double>(Get(scene_id, stage).pixels) / plan_pixels;
}

int64_t ReadLedger::TotalBytes() const {
  std::lock_guard<std::mutex> lock(mu_);
  int64_t total = 0;
  for (const auto& [key, cell] : cells_) total += cell.bytes;
  return total;
}

std::map<std::pair<std::string, ReadStage>, ReadLedger::Cell>
ReadLedger::Snapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  return cells_;
}

SceneRef LoadSceneHeader(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kNotFound, "missing file: " + path.string());
  char magic[kMagicLen];
  if (!in.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw Error(ErrorCode::kMalformed, "malformed header: bad magic in " + path.string());
  }
  std::string line;
  char c;
  bool terminated = false;
  while (line.size() < kMaxHeaderLine && in.get(c)) {
    if (c == '\n') {
      terminated = true;
      break;
    }
    line.push_back(c);
  }
  if (!terminated) {
    throw Error(ErrorCode::kMalformed, "malformed header: " + path.string());
  }
  std::istringstream fields(line);
  SceneRef ref;
  std::string dtype;
  if (!(fields >> ref.width_px >> ref.height_px >> ref.bands >> dtype >> ref.gsd_m)) {
    throw Error(ErrorCode::kMalformed, "malformed header: " + path.string());
  }
  std::string extra;
  if (fields >> extra) {
    throw Error(ErrorCode::kMalformed, "malformed header: trailing fields");
  }
  ref.dtype = ParseSampleType(dtype);
  ref.path = path;
  ref.scene_id = path.stem().string();
  ref.data_offset = kMagicLen + line.size() + 1;
  ref.Validate();
  return ref;
}

Tile ReadWindow(const SceneRef& scene, const TileExtent& extent,
                ReadLedger* ledger, ReadStage stage) {
  if (extent.scene_id != scene.scene_id) {
    throw Error(ErrorCode::kInvalidArgument,
                "extent belongs to scene '" + extent.scene_id + "'");
  }
  if (extent.x0 < 0 || extent.y0 < 0 || extent.w <= 0 || extent.h <= 0 ||
      extent.x0 + extent.w > scene.width_px ||
      extent.y0 + extent.h > scene.height_px) {
    throw Error(ErrorCode::kOutOfRange,
                "extent out of bounds: " +
                    Rect(extent.x0, extent.y0, extent.w, extent.h));
  }
  std::ifstream in(scene.path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + scene.path.string());

  const int nb = SampleBytes(scene.dtype);
  const size_t row_samples = static_cast<size_t>(extent.w) * scene.bands;
  Tile tile;
  tile.extent = extent;
  tile.bands = scene.bands;
  tile.pixels.resize(row_samples * extent.h);
  std::vector<char> buf(row_samples * nb);
  for (int64_t r = 0; r < extent.h; ++r) {
    const uint64_t offset =
        scene.data_offset +
        (static_cast<uint64_t>(extent.y0 + r) * scene.width_px + extent.x0) *
            scene.bands * nb;
    in.seekg(static_cast<std::streamoff>(offset));
    if (!in.read(buf.data(), static_cast<std::streamsize>(buf.size()))) {
      throw Error(ErrorCode::kIo, "short read in " + scene.path.string());
    }
    DecodeSamples(buf.data(), row_samples, scene.dtype,
                  tile.pixels.data() + r * row_samples);
  }
  if (ledger != nullptr) {
    ledger->Record(scene.scene_id, stage, extent.area(),
                   static_cast<int64_t>(buf.size()) * extent.h);
  }
  return tile;
}

std::vector<TileExtent> TileExtents(const SceneRef& scene, int64_t tile_px,
                                    int64_t overlap_px) {
  if (tile_px <= 0) throw Error(ErrorCode::kInvalidArgument, "tile_px must be positive");
  if (overlap_px < 0 || overlap_px >= tile_px) {
    throw Error(ErrorCode::kInvalidArgument, "overlap_px must be in [0, tile_px)");
  }
  const int64_t stride = tile_px - overlap_px;
  auto starts = [&](int64_t extent) {
    std::vector<std::pair<int64_t, int64_t>> out;
    for (int64_t s = 0;; s += stride) {
      const int64_t len = std::min(tile_px, extent - s);
      out.emplace_back(s, len);
      if (s + len >= extent) break;
    }
    return out;
  };
  const auto xs = starts(scene.width_px);
  const auto ys = starts(scene.height_px);
  std::vector<TileExtent> plan;
  plan.reserve(xs.size() * ys.size());
  for (const auto& [y0, h] : ys) {
    for (const auto& [x0, w] : xs) {
      plan.push_back({scene.scene_id, x0, y0, w, h});
    }
  }
  return plan;
}

int64_t PlanPixels(const std::vector<TileExtent>& plan) {
  int64_t total = 0;
  for (const auto& e : plan) total += e.area();
  return total;
}

Mask MergeTiles(const SceneRef& scene, std::span<const LabeledTile> tiles) {
  std::vector<const LabeledTile*> order;
  order.reserve(tiles.size());
  for (const auto& t : tiles) {
    if (t.extent.scene_id != scene.scene_id) {
      throw Error(ErrorCode::kInvalidArgument,
                  "foreign scene_id '" + t.extent.scene_id + "' in merge of '" +
                      scene.scene_id + "'");
    }
    const auto& e = t.extent;
    if (e.x0 < 0 || e.y0 < 0 || e.x0 + e.w > scene.width_px ||
        e.y0 + e.h > scene.height_px || t.mask.w != e.w || t.mask.h != e.h) {
      throw Error(ErrorCode::kOutOfRange,
                  "tile does not fit scene: " + Rect(e.x0, e.y0, e.w, e.h));
    }
    order.push_back(&t);
  }
  std::stable_sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
    return std::tie(a->extent.y0, a->extent.x0) < std::tie(b->extent.y0, b->extent.x0);
  });

  Mask out(scene.width_px, scene.height_px);
  std::vector<uint8_t> covered(out.labels.size(), 0);
  for (const LabeledTile* t : order) {
    const auto& e = t->extent;
    for (int64_t r = 0; r < e.h; ++r) {
      const size_t row = static_cast<size_t>((e.y0 + r) * out.w + e.x0);
      for (int64_t c = 0; c < e.w; ++c) {
        if (covered[row + c]) continue;
        covered[row + c] = 1;
        out.labels[row + c] = t->mask.at(c, r);
      }
    }
    out.provenance.emplace(e, t->bucket);
  }

  if (std::find(covered.begin(), covered.end(), 0) != covered.end()) {
    std::string msg = "missing tile in scene '" + scene.scene_id + "':";
    for (const auto& r : UncoveredRects(covered, out.w, out.h)) {
      msg += ' ' + Rect(r[0], r[1], r[2], r[3]);
    }
    throw Error(ErrorCode::kCoverageGap, msg);
  }
  return out;
}

std::vector<LabeledTile> SplitMask(const Mask& mask,
                                   const std::vector<TileExtent>& plan,
                                   BucketId bucket) {
  std::vector<LabeledTile> out;
  out.reserve(plan.size());
  for (const auto& e : plan) {
    LabeledTile t{e, Mask(e.w, e.h), bucket};
    for (int64_t r = 0; r < e.h; ++r) {
      for (int64_t c = 0; c < e.w; ++c) t.mask.at(c, r) = mask.at(e.x0 + c, e.y0 + r);
    }
    out.push_back(std::move(t));
  }
  return out;
}

double SceneAreaSqKm(const SceneRef& scene) {
  scene.Validate();
  return static_cast<double>(scene.width_px) * static_cast<double>(scene.height_px) *
         scene.gsd_m * scene.gsd_m / 1e6;
}

struct RasterWriter::Impl {
  std::ofstream out;
  std::filesystem::path path;
  int64_t width;
  int64_t height;
  int bands;
  SampleType dtype;
  int64_t rows_written = 0;
  std::vector<char> buf;
};

RasterWriter::RasterWriter(const std::filesystem::path& path, int64_t width,
                           int64_t height, int bands, SampleType dtype,
                           double gsd_m)
    : impl_(std::make_unique<Impl>()) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::kInvalidArgument, "zero dimension");
  impl_->out.open(path, std::ios::binary | std::ios::trunc);
  if (!impl_->out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  impl_->path = path;
  impl_->width = width;
  impl_->height = height;
  impl_->bands = bands;
  impl_->dtype = dtype;
  const std::string header = HeaderLine(width, height, bands, dtype, gsd_m);
  impl_->out.write(kMagic, kMagicLen);
  impl_->out.write(header.data(), static_cast<std::streamsize>(header.size()));
}

RasterWriter::~RasterWriter() = default;

void RasterWriter::WriteRow(std::span<const float> row) {
  if (row.size() != static_cast<size_t>(impl_->width * impl_->bands)) {
    throw Error(ErrorCode::kInvalidArgument, "row length mismatch");
  }
  if (impl_->rows_written >= impl_->height) {
    throw Error(ErrorCode::kOutOfRange, "too many rows");
  }
  EncodeSamples(row, impl_->dtype, &impl_->buf);
  impl_->out.write(impl_->buf.data(), static_cast<std::streamsize>(impl_->buf.size()));
  ++impl_->rows_written;
}

void RasterWriter::Close() {
  if (impl_->rows_written != impl_->height) {
    throw Error(ErrorCode::kInvalidArgument, "raster closed with missing rows");
  }
  impl_->out.close();
  if (!impl_->out) throw Error(ErrorCode::kIo, "write failed: " + impl_->path.string());
}

void WriteRaster(const std::filesystem::path& path, int64_t width,
                 int64_t height, int bands, SampleType dtype, double gsd_m,
                 std::span<const float> samples) {
  if (samples.size() != static_cast<size_t>(width * height * bands)) {
    throw Error(ErrorCode::kInvalidArgument, "sample count does not match dimensions");
  }
  RasterWriter writer(path, width, height, bands, dtype, gsd_m);
  const size_t row = static_cast<size_t>(width * bands);
  for (int64_t y = 0; y < height; ++y) writer.WriteRow(samples.subspan(y * row, row));
  writer.Close();
}

void WriteMask(const std::filesystem::path& path, const Mask& mask,
               double gsd_m) {
  std::vector<float> samples(mask.labels.begin(), mask.labels.end());
  WriteRaster(path, mask.w, mask.h, 1, SampleType::kU8, gsd_m, samples);
}

Mask ReadMask(const std::filesystem::path& path) {
  SceneRef ref = LoadSceneHeader(path);
  if (ref.bands != 1 || ref.dtype != SampleType::kU8) {
    throw Error(ErrorCode::kMalformed, "mask must be single-band u8: " + path.string());
  }
  Tile t = ReadWindow(ref, {ref.scene_id, 0, 0, ref.width_px, ref.height_px},
                      nullptr, ReadStage::kOther);
  Mask m(ref.width_px, ref.height_px);
  for (size_t i = 0; i < m.labels.size(); ++i) {
    m.labels[i] = static_cast<uint8_t>(t.pixels[i]);
  }
  return m;
}

void WriteMaskSidecar(const std::filesystem::path& path, const Mask& mask) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& [e, bucket] : mask.provenance) {
    out << e.x0 << ' ' << e.y0 << ' ' << e.w << ' ' << e.h << ' ' << std::hex
        << bucket << std::dec << '\n';
  }
}

std::map<TileExtent, BucketId, ExtentOrder> ReadMaskSidecar(
    const std::filesystem::path& path, const std::string& scene_id) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kNotFound, "missing file: " + path.string());
  std::map<TileExtent, BucketId, ExtentOrder> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    TileExtent e{scene_id};
    BucketId bucket;
    if (!(fields >> e.x0 >> e.y0 >> e.w >> e.h >> std::hex >> bucket)) {
      throw Error(ErrorCode::kMalformed, "malformed sidecar line: " + line);
    }
    out.emplace(e, bucket);
  }
  return out;
}

}  // namespace resflow
