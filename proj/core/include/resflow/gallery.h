#ifndef RESFLOW_GALLERY_H_
#define RESFLOW_GALLERY_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "resflow/hashing.h"
#include "resflow/raster.h"

namespace resflow {

using RecordId = int64_t;

struct GalleryRecord {
  RecordId record_id = -1;
  BinaryCode code;
  BucketId bucket_id = -1;
  TileExtent extent;
  std::string storage_path;
  // lon_min, lat_min, lon_max, lat_max in degrees.
  std::optional<std::array<double, 4>> geo_bbox;
  // ISO-8601 UTC, e.g. "2019-07-01T10:30:00Z".
  std::optional<std::string> acquired_at;

  bool operator==(const GalleryRecord&) const = default;
};

std::string FormatGalleryRecord(const GalleryRecord& r);
GalleryRecord ParseGalleryRecord(const std::string& line, int n_bits);

// Append-only image gallery. With a path, every insert is appended to a
// newline-delimited log ("IGAL1 n_bits=<n>" header) and the indexes are
// rebuilt from it on open. Readers may run concurrently; writers serialize.
class ImageGallery {
 public:
  // In-memory gallery.
  explicit ImageGallery(int n_bits);

  // Opens (or creates) a persistent gallery. `truncate` discards the log.
  static ImageGallery Open(const std::filesystem::path& path, int n_bits,
                           bool truncate = false);

  ImageGallery(ImageGallery&& other) noexcept;
  ImageGallery& operator=(ImageGallery&& other) noexcept;

  // Rejects records whose bucket_id disagrees with AssignBucket against
  // `table`, and extents that do not fit `scene` when given.
  RecordId Insert(GalleryRecord record, const CentroidTable& table,
                  const SceneRef* scene = nullptr);

  std::vector<GalleryRecord> QueryByBucket(BucketId bucket) const;
  std::vector<GalleryRecord> QueryByScene(const std::string& scene_id) const;
  // Records within hamming distance r, ordered by (distance, record_id).
  std::vector<GalleryRecord> QueryRadius(const BinaryCode& code, int r) const;

  std::vector<GalleryRecord> All() const;
  size_t size() const;
  int n_bits() const { return n_bits_; }
  // Ids of inserts whose content duplicated an earlier record.
  std::vector<RecordId> duplicates() const;
  void Flush();

 private:
  ImageGallery(int n_bits, std::filesystem::path path);
  void IndexLocked(const GalleryRecord& r);

  int n_bits_;
  std::filesystem::path path_;
  std::ofstream log_;
  mutable std::shared_mutex mu_;
  std::vector<GalleryRecord> records_;
  std::map<BucketId, std::vector<RecordId>> by_bucket_;
  std::map<std::string, std::vector<RecordId>> by_scene_;
  std::set<std::string> content_keys_;
  std::vector<RecordId> duplicates_;
};

struct TrainStats {
  int64_t samples = 0;
  double f1 = 0.0;
};

struct ModelRecord {
  BinaryCode bucket_code;
  std::string task;
  int version = 0;
  std::string artifact_path;
  TrainStats train_stats;
};

// Model registry keyed by (bucket centroid, task); versions start at 1.
// File form: "MGAL1" header then "centroid_hex task version artifact_path f1".
class ModelGallery {
 public:
  explicit ModelGallery(int n_bits);
  static ModelGallery Open(const std::filesystem::path& path, int n_bits,
                           bool truncate = false);

  ModelGallery(ModelGallery&& other) noexcept;
  ModelGallery& operator=(ModelGallery&& other) noexcept;

  // Assigns and returns the next version for (bucket_code, task).
  int Register(ModelRecord record, const CentroidTable& table);
  // Highest version; throws kModelGap naming the bucket when absent.
  ModelRecord Lookup(const BinaryCode& bucket_code, const std::string& task) const;
  int NextVersion(const BinaryCode& bucket_code, const std::string& task) const;
  std::vector<ModelRecord> All() const;

 private:
  ModelGallery(int n_bits, std::filesystem::path path);

  int n_bits_;
  std::filesystem::path path_;
  std::ofstream log_;
  mutable std::shared_mutex mu_;
  std::vector<ModelRecord> records_;
  std::map<std::pair<BinaryCode, std::string>, size_t> latest_;
};

}  // namespace resflow

#endif  // RESFLOW_GALLERY_H_
