#include "resflow/gallery.h"

#include <algorithm>
#include <charconv>
#include <mutex>
#include <sstream>

#include "resflow/status.h"

namespace resflow {
namespace {

constexpr char kImageHeader[] = "IGAL1";
constexpr char kModelHeader[] = "MGAL1";

std::string Shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double ParseDouble(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kMalformed, "bad number '" + s + "'");
  }
  return v;
}

bool IsToken(const std::string& s) {
  return !s.empty() && s != "-" &&
         std::none_of(s.begin(), s.end(), [](char c) { return c == ' ' || c == '\n' || c == '\t'; });
}

std::ofstream OpenLog(const std::filesystem::path& path, const std::string& header,
                      bool fresh) {
  std::ofstream out;
  if (fresh) {
    out.open(path, std::ios::trunc);
    out << header << '\n';
  } else {
    out.open(path, std::ios::app);
  }
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  out.flush();
  return out;
}

}  // namespace

std::string FormatGalleryRecord(const GalleryRecord& r) {
  std::ostringstream os;
  os << r.record_id << ' ' << r.code.ToHex() << ' ' << r.bucket_id << ' '
     << r.extent.scene_id << ' ' << r.extent.x0 << ' ' << r.extent.y0 << ' '
     << r.extent.w << ' ' << r.extent.h << ' ' << r.storage_path << ' ';
  if (r.geo_bbox) {
    const auto& g = *r.geo_bbox;
    os << Shortest(g[0]) << ',' << Shortest(g[1]) << ',' << Shortest(g[2]) << ','
       << Shortest(g[3]);
  } else {
    os << '-';
  }
  os << ' ' << (r.acquired_at ? *r.acquired_at : "-");
  return os.str();
}

GalleryRecord ParseGalleryRecord(const std::string& line, int n_bits) {
  std::istringstream fields(line);
  std::vector<std::string> tok;
  std::string t;
  while (fields >> t) tok.push_back(t);
  if (tok.size() < 9 || tok.size() > 11) {
    throw Error(ErrorCode::kMalformed, "malformed gallery line: " + line);
  }
  GalleryRecord r;
  try {
    r.record_id = std::stoll(tok[0]);
    r.code = BinaryCode::FromHex(tok[1], n_bits);
    r.bucket_id = std::stoi(tok[2]);
    r.extent.scene_id = tok[3];
    r.extent.x0 = std::stoll(tok[4]);
    r.extent.y0 = std::stoll(tok[5]);
    r.extent.w = std::stoll(tok[6]);
    r.extent.h = std::stoll(tok[7]);
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::kMalformed, "malformed gallery line: " + line);
  }
  r.storage_path = tok[8];
  if (tok.size() > 9 && tok[9] != "-") {
    std::array<double, 4> g{};
    std::istringstream parts(tok[9]);
    std::string p;
    int i = 0;
    while (std::getline(parts, p, ',')) {
      if (i >= 4) throw Error(ErrorCode::kMalformed, "bad geo_bbox '" + tok[9] + "'");
      g[i++] = ParseDouble(p);
    }
    if (i != 4) throw Error(ErrorCode::kMalformed, "bad geo_bbox '" + tok[9] + "'");
    r.geo_bbox = g;
  }
  if (tok.size() > 10 && tok[10] != "-") r.acquired_at = tok[10];
  return r;
}

ImageGallery::ImageGallery(int n_bits) : n_bits_(n_bits) {
  if (n_bits <= 0) throw Error(ErrorCode::kInvalidArgument, "n_bits must be positive");
}

ImageGallery::ImageGallery(int n_bits, std::filesystem::path path)
    : n_bits_(n_bits), path_(std::move(path)) {}

ImageGallery::ImageGallery(ImageGallery&& other) noexcept {
  std::unique_lock lock(other.mu_);
  n_bits_ = other.n_bits_;
  path_ = std::move(other.path_);
  log_ = std::move(other.log_);
  records_ = std::move(other.records_);
  by_bucket_ = std::move(other.by_bucket_);
  by_scene_ = std::move(other.by_scene_);
  content_keys_ = std::move(other.content_keys_);
  duplicates_ = std::move(other.duplicates_);
}

ImageGallery& ImageGallery::operator=(ImageGallery&& other) noexcept {
  if (this == &other) return *this;
  std::scoped_lock lock(mu_, other.mu_);
  n_bits_ = other.n_bits_;
  path_ = std::move(other.path_);
  log_ = std::move(other.log_);
  records_ = std::move(other.records_);
  by_bucket_ = std::move(other.by_bucket_);
  by_scene_ = std::move(other.by_scene_);
  content_keys_ = std::move(other.content_keys_);
  duplicates_ = std::move(other.duplicates_);
  return *this;
}

ImageGallery ImageGallery::Open(const std::filesystem::path& path, int n_bits,
                                bool truncate) {
  if (n_bits <= 0) throw Error(ErrorCode::kInvalidArgument, "n_bits must be positive");
  ImageGallery g(n_bits, path);
  const std::string header = std::string(kImageHeader) + " n_bits=" + std::to_string(n_bits);
  const bool fresh = truncate || !std::filesystem::exists(path);
  if (!fresh) {
    std::ifstream in(path);
    std::string line;
    if (!std::getline(in, line) || line != header) {
      throw Error(ErrorCode::kMalformed,
                  "image gallery header mismatch in " + path.string() + ": '" + line + "'");
    }
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      GalleryRecord r = ParseGalleryRecord(line, n_bits);
      if (r.record_id != static_cast<RecordId>(g.records_.size())) {
        throw Error(ErrorCode::kMalformed, "non-sequential record id in " + path.string());
      }
      g.IndexLocked(r);
      g.records_.push_back(std::move(r));
    }
  }
  g.log_ = OpenLog(path, header, fresh);
  return g;
}

void ImageGallery::IndexLocked(const GalleryRecord& r) {
  by_bucket_[r.bucket_id].push_back(r.record_id);
  by_scene_[r.extent.scene_id].push_back(r.record_id);
  GalleryRecord key = r;
  key.record_id = -1;
  if (!content_keys_.insert(FormatGalleryRecord(key)).second) {
    duplicates_.push_back(r.record_id);
  }
}

RecordId ImageGallery::Insert(GalleryRecord record, const CentroidTable& table,
                              const SceneRef* scene) {
  if (record.code.width() != n_bits_) {
    throw Error(ErrorCode::kInvalidArgument, "code width does not match gallery");
  }
  const BucketId expected = AssignBucket(record.code, table);
  if (record.bucket_id != expected) {
    throw Error(ErrorCode::kInvalidArgument,
                "bucket_id " + std::to_string(record.bucket_id) + " disagrees with assignment " +
                    std::to_string(expected) + " for code " + record.code.ToHex());
  }
  const auto& e = record.extent;
  if (e.x0 < 0 || e.y0 < 0 || e.w <= 0 || e.h <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "invalid extent");
  }
  if (scene != nullptr &&
      (e.scene_id != scene->scene_id || e.x0 + e.w > scene->width_px ||
       e.y0 + e.h > scene->height_px)) {
    throw Error(ErrorCode::kInvalidArgument, "extent not valid for scene " + scene->scene_id);
  }
  if (!IsToken(e.scene_id) || !IsToken(record.storage_path)) {
    throw Error(ErrorCode::kInvalidArgument, "scene_id and storage_path must be non-empty tokens");
  }
  if (record.acquired_at && !IsToken(*record.acquired_at)) {
    throw Error(ErrorCode::kInvalidArgument, "acquired_at must be a single token");
  }

  std::unique_lock lock(mu_);
  record.record_id = static_cast<RecordId>(records_.size());
  if (log_.is_open()) {
    log_ << FormatGalleryRecord(record) << '\n';
    if (!log_) throw Error(ErrorCode::kIo, "gallery append failed: " + path_.string());
  }
  IndexLocked(record);
  records_.push_back(std::move(record));
  return records_.back().record_id;
}

std::vector<GalleryRecord> ImageGallery::QueryByBucket(BucketId bucket) const {
  std::shared_lock lock(mu_);
  std::vector<GalleryRecord> out;
  auto it = by_bucket_.find(bucket);
  if (it == by_bucket_.end()) return out;
  out.reserve(it->second.size());
  for (RecordId id : it->second) out.push_back(records_[id]);
  return out;
}

std::vector<GalleryRecord> ImageGallery::QueryByScene(const std::string& scene_id) const {
  std::shared_lock lock(mu_);
  std::vector<GalleryRecord> out;
  auto it = by_scene_.find(scene_id);
  if (it == by_scene_.end()) return out;
  for (RecordId id : it->second) out.push_back(records_[id]);
  return out;
}

std::vector<GalleryRecord> ImageGallery::QueryRadius(const BinaryCode& code, int r) const {
  if (code.width() != n_bits_) throw Error(ErrorCode::kInvalidArgument, "width mismatch");
  if (r < 0 || r > n_bits_) throw Error(ErrorCode::kInvalidArgument, "radius out of range");
  std::shared_lock lock(mu_);
  std::vector<std::pair<int, RecordId>> hits;
  for (const auto& rec : records_) {
    const int d = Hamming(code, rec.code);
    if (d <= r) hits.emplace_back(d, rec.record_id);
  }
  std::sort(hits.begin(), hits.end());
  std::vector<GalleryRecord> out;
  out.reserve(hits.size());
  for (const auto& [d, id] : hits) out.push_back(records_[id]);
  return out;
}

std::vector<GalleryRecord> ImageGallery::All() const {
  std::shared_lock lock(mu_);
  return records_;
}

size_t ImageGallery::size() const {
  std::shared_lock lock(mu_);
  return records_.size();
}

std::vector<RecordId> ImageGallery::duplicates() const {
  std::shared_lock lock(mu_);
  return duplicates_;
}

void ImageGallery::Flush() {
  std::unique_lock lock(mu_);
  if (log_.is_open()) log_.flush();
}

ModelGallery::ModelGallery(int n_bits) : n_bits_(n_bits) {}

ModelGallery::ModelGallery(int n_bits, std::filesystem::path path)
    : n_bits_(n_bits), path_(std::move(path)) {}

ModelGallery::ModelGallery(ModelGallery&& other) noexcept {
  std::unique_lock lock(other.mu_);
  n_bits_ = other.n_bits_;
  path_ = std::move(other.path_);
  log_ = std::move(other.log_);
  records_ = std::move(other.records_);
  latest_ = std::move(other.latest_);
}

ModelGallery& ModelGallery::operator=(ModelGallery&& other) noexcept {
  if (this == &other) return *this;
  std::scoped_lock lock(mu_, other.mu_);
  n_bits_ = other.n_bits_;
  path_ = std::move(other.path_);
  log_ = std::move(other.log_);
  records_ = std::move(other.records_);
  latest_ = std::move(other.latest_);
  return *this;
}

ModelGallery ModelGallery::Open(const std::filesystem::path& path, int n_bits,
                                bool truncate) {
  ModelGallery g(n_bits, path);
  const bool fresh = truncate || !std::filesystem::exists(path);
  if (!fresh) {
    std::ifstream in(path);
    std::string line;
    if (!std::getline(in, line) || line != kModelHeader) {
      throw Error(ErrorCode::kMalformed, "model gallery header mismatch in " + path.string());
    }
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream fields(line);
      std::string hex, f1;
      ModelRecord r;
      if (!(fields >> hex >> r.task >> r.version >> r.artifact_path >> f1)) {
        throw Error(ErrorCode::kMalformed, "malformed model gallery line: " + line);
      }
      r.bucket_code = BinaryCode::FromHex(hex, n_bits);
      r.train_stats.f1 = ParseDouble(f1);
      const auto key = std::make_pair(r.bucket_code, r.task);
      auto it = g.latest_.find(key);
      const int expected = it == g.latest_.end() ? 1 : g.records_[it->second].version + 1;
      if (r.version != expected) {
        throw Error(ErrorCode::kMalformed, "non-monotone model version in " + path.string());
      }
      g.latest_[key] = g.records_.size();
      g.records_.push_back(std::move(r));
    }
  }
  g.log_ = OpenLog(path, kModelHeader, fresh);
  return g;
}

int ModelGallery::Register(ModelRecord record, const CentroidTable& table) {
  if (table.Find(record.bucket_code) < 0) {
    throw Error(ErrorCode::kNotFound,
                "unknown bucket code " + record.bucket_code.ToHex());
  }
  if (!IsToken(record.task) || !IsToken(record.artifact_path)) {
    throw Error(ErrorCode::kInvalidArgument, "task and artifact_path must be non-empty tokens");
  }
  std::unique_lock lock(mu_);
  const auto key = std::make_pair(record.bucket_code, record.task);
  auto it = latest_.find(key);
  record.version = it == latest_.end() ? 1 : records_[it->second].version + 1;
  if (log_.is_open()) {
    log_ << record.bucket_code.ToHex() << ' ' << record.task << ' ' << record.version << ' '
         << record.artifact_path << ' ' << Shortest(record.train_stats.f1) << '\n';
    log_.flush();
    if (!log_) throw Error(ErrorCode::kIo, "model gallery append failed");
  }
  latest_[key] = records_.size();
  records_.push_back(std::move(record));
  return records_.back().version;
}

ModelRecord ModelGallery::Lookup(const BinaryCode& bucket_code,
                                 const std::string& task) const {
  std::shared_lock lock(mu_);
  auto it = latest_.find({bucket_code, task});
  if (it == latest_.end()) {
    throw Error(ErrorCode::kModelGap,
                "model gap: no '" + task + "' model for bucket " + bucket_code.ToHex());
  }
  return records_[it->second];
}

int ModelGallery::NextVersion(const BinaryCode& bucket_code, const std::string& task) const {
  std::shared_lock lock(mu_);
  auto it = latest_.find({bucket_code, task});
  return it == latest_.end() ? 1 : records_[it->second].version + 1;
}

std::vector<ModelRecord> ModelGallery::All() const {
  std::shared_lock lock(mu_);
  return records_;
}

}  // namespace resflow
