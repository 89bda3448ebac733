#ifndef RESFLOW_EMBEDDING_H_
#define RESFLOW_EMBEDDING_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "resflow/raster.h"

namespace resflow {

using Embedding = std::vector<double>;

struct FeatureConfig {
  int dim = 48;
  int bins = 8;
  // Histogram range. Samples outside are clamped into the end bins.
  double range_min = 0.0;
  double range_max = 255.0;
};

// Range covering every representable value of `dtype` (f32 uses [0, 1]).
FeatureConfig FeatureConfigFor(SampleType dtype, int dim = 48);

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual Embedding Extract(const Tile& tile) const = 0;
  virtual int dim() const = 0;
};

// Per band: mean, population std, normalized histogram, and gradient energy
// (mean |difference| over all horizontal and vertical neighbour pairs).
// Unused trailing slots are zero.
class SpectralTextureExtractor : public FeatureExtractor {
 public:
  explicit SpectralTextureExtractor(FeatureConfig config = {});

  Embedding Extract(const Tile& tile) const override;
  int dim() const override { return config_.dim; }
  const FeatureConfig& config() const { return config_; }

  static int FeaturesPerBand(int bins) { return bins + 3; }

 private:
  FeatureConfig config_;
};

Embedding ExtractFeatures(const Tile& tile, const FeatureConfig& config);

enum class ClusterMethod { kKMeans, kAgglomerative };

ClusterMethod ParseClusterMethod(const std::string& name);
const char* ClusterMethodName(ClusterMethod method);

struct ClusterModel {
  int k = 0;
  std::vector<Embedding> centroids;
  std::vector<int> labels;
  uint64_t seed = 0;
  int iterations = 0;
};

struct KMeansOptions {
  int max_iterations = 300;
  double tolerance = 1e-6;
  // Independent k-means++ restarts; the lowest within-cluster sum wins.
  int restarts = 8;
};

// Cluster ids are canonical: numbered by first appearance in input order.
ClusterModel FitClusters(std::span<const Embedding> points, int k,
                         ClusterMethod method, uint64_t seed,
                         const KMeansOptions& options = {});

// Lloyd iterations from given starting centroids.
ClusterModel FitKMeansFrom(std::span<const Embedding> points,
                           std::vector<Embedding> centroids, uint64_t seed,
                           const KMeansOptions& options = {});

// Fits k = 1..k_max. Each k + 1 starts from the k solution with its
// worst-fit point split into a new cluster; the Lloyd-refined partition is
// kept only when it does not raise IntraClusterVariance, so the variance
// curve is non-increasing in k.
std::vector<ClusterModel> NestedKMeans(std::span<const Embedding> points,
                                       int k_max, uint64_t seed,
                                       const KMeansOptions& options = {});

struct VarianceReport {
  double value = 0.0;
  std::vector<int> empty_clusters;
};

// Mean over clusters of the members' mean squared distance to the centroid.
VarianceReport IntraClusterVariance(const ClusterModel& model,
                                    std::span<const Embedding> points);

struct BucketCountSelection {
  int k = 0;
  std::vector<int> ks;
  std::vector<double> variances;
  // False when no k in range met the threshold; k is then the range minimum.
  bool knee_found = false;
  // 1 - V(k) / V(1). Small values mean the data barely separates.
  double separation = 0.0;
};

struct BucketCountOptions {
  double threshold = 0.1;
  ClusterMethod method = ClusterMethod::kKMeans;
  uint64_t seed = 0;
};

// Smallest k whose relative variance reduction to k + 1 falls below the
// threshold.
BucketCountSelection SelectBucketCount(std::span<const Embedding> points,
                                       int k_min, int k_max,
                                       const BucketCountOptions& options = {});

double SquaredDistance(std::span<const double> a, std::span<const double> b);

// "scene_id,x0,y0,v1..vD" rows.
void WriteEmbeddingsCsv(const std::filesystem::path& path,
                        std::span<const TileExtent> extents,
                        std::span<const Embedding> embeddings);

}  // namespace resflow

#endif  // RESFLOW_EMBEDDING_H_
