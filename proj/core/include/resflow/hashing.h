#ifndef RESFLOW_HASHING_H_
#define RESFLOW_HASHING_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "resflow/embedding.h"
#include "resflow/raster.h"

namespace resflow {

// Fixed-width bitstring. Bit i is bit (i % 64) of word i / 64; the hex
// rendering prints the value most-significant nibble first, zero-padded to
// ceil(width / 4) lowercase digits.
class BinaryCode {
 public:
  BinaryCode() = default;
  explicit BinaryCode(int width);
  // Low `width` bits of `value`; width must be <= 64.
  static BinaryCode FromUint(uint64_t value, int width);
  static BinaryCode FromHex(const std::string& hex, int width);

  int width() const { return width_; }
  bool bit(int i) const { return (words_[i / 64] >> (i % 64)) & 1u; }
  void set_bit(int i, bool v);
  std::span<const uint64_t> words() const { return words_; }

  std::string ToHex() const;
  BinaryCode operator~() const;

  auto operator<=>(const BinaryCode&) const = default;

 private:
  int width_ = 0;
  std::vector<uint64_t> words_;
};

// popcount(a xor b). Throws on width mismatch.
int Hamming(const BinaryCode& a, const BinaryCode& b);

struct HashFunction {
  int n_bits = 0;
  int dim = 0;
  // n_bits rows of dim unit-norm entries.
  std::vector<std::vector<double>> projections;
  std::vector<double> thresholds;
  uint64_t seed = 0;
};

struct HashFitOptions {
  int candidates = 64;
  double max_agreement = 0.95;
  // Batches of fresh candidates drawn when every candidate is rejected
  // as redundant; after that the best-scoring one is kept regardless.
  int max_batches = 8;
};

HashFunction FitHash(std::span<const Embedding> embeddings,
                     std::span<const int> labels, int n_bits, uint64_t seed,
                     const HashFitOptions& options = {});

// Bit b is set iff projection_b . e > threshold_b (strict).
BinaryCode Encode(const HashFunction& h, std::span<const double> e);

class CentroidTable {
 public:
  CentroidTable() = default;
  explicit CentroidTable(std::vector<BinaryCode> codes);

  int size() const { return static_cast<int>(codes_.size()); }
  bool empty() const { return codes_.empty(); }
  int width() const { return codes_.empty() ? 0 : codes_[0].width(); }
  const BinaryCode& code(BucketId id) const { return codes_.at(id); }
  const std::vector<BinaryCode>& codes() const { return codes_; }
  // -1 when `code` is not a centroid.
  BucketId Find(const BinaryCode& code) const;

 private:
  std::vector<BinaryCode> codes_;
};

// Per-bucket, per-bit majority vote; exact ties give 0.
CentroidTable BucketCentroids(std::span<const BinaryCode> codes,
                              std::span<const int> labels);

// Nearest centroid by hamming distance; ties go to the smallest id.
BucketId AssignBucket(const BinaryCode& code, const CentroidTable& table);

struct MapResult {
  double map = 0.0;
  int queries = 0;
  // Queries whose label has no other member.
  int skipped = 0;
};

MapResult EvaluateMap(std::span<const BinaryCode> codes,
                      std::span<const int> labels);

// "HSH1", u32 n_bits, u32 dim, projections then thresholds as f64 (LE).
void SaveHashFunction(const std::filesystem::path& path, const HashFunction& h);
HashFunction LoadHashFunction(const std::filesystem::path& path);

// "bucket_id centroid_hex" lines.
void SaveCentroidTable(const std::filesystem::path& path,
                       const CentroidTable& table);
CentroidTable LoadCentroidTable(const std::filesystem::path& path, int n_bits);

}  // namespace resflow

#endif  // RESFLOW_HASHING_H_
