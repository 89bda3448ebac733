#include "resflow/embedding.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "resflow/status.h"

namespace resflow {
namespace {

void CheckPoints(std::span<const Embedding> points) {
  if (points.empty()) throw Error(ErrorCode::kInvalidArgument, "no embeddings");
  const size_t dim = points[0].size();
  for (const auto& p : points) {
    if (p.size() != dim) {
      throw Error(ErrorCode::kInvalidArgument, "embedding dimension mismatch");
    }
    for (double v : p) {
      if (!std::isfinite(v)) throw Error(ErrorCode::kInvalidArgument, "non-finite embedding");
    }
  }
}

// Nearest centroid, ties to the lower index.
int Nearest(std::span<const double> p, const std::vector<Embedding>& centroids,
            double* dist = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t c = 0; c < centroids.size(); ++c) {
    const double d = SquaredDistance(p, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist != nullptr) *dist = best_d;
  return best;
}

std::vector<Embedding> MeansOf(std::span<const Embedding> points,
                               const std::vector<int>& labels, int k,
                               std::vector<int>* counts) {
  const size_t dim = points[0].size();
  std::vector<Embedding> sums(k, Embedding(dim, 0.0));
  counts->assign(k, 0);
  for (size_t i = 0; i < points.size(); ++i) {
    auto& s = sums[labels[i]];
    for (size_t d = 0; d < dim; ++d) s[d] += points[i][d];
    ++(*counts)[labels[i]];
  }
  for (int c = 0; c < k; ++c) {
    if ((*counts)[c] == 0) continue;
    for (double& v : sums[c]) v /= (*counts)[c];
  }
  return sums;
}

double WithinSum(std::span<const Embedding> points, const ClusterModel& m) {
  double total = 0.0;
  for (size_t i = 0; i < points.size(); ++i) {
    total += SquaredDistance(points[i], m.centroids[m.labels[i]]);
  }
  return total;
}

// Renumbers clusters by first appearance so ids do not depend on seeding.
void Canonicalize(ClusterModel* m) {
  std::vector<int> remap(m->k, -1);
  int next = 0;
  for (int label : m->labels) {
    if (remap[label] < 0) remap[label] = next++;
  }
  for (int c = 0; c < m->k; ++c) {
    if (remap[c] < 0) remap[c] = next++;
  }
  std::vector<Embedding> centroids(m->k);
  for (int c = 0; c < m->k; ++c) centroids[remap[c]] = std::move(m->centroids[c]);
  m->centroids = std::move(centroids);
  for (int& label : m->labels) label = remap[label];
}

std::vector<Embedding> SeedPlusPlus(std::span<const Embedding> points, int k,
                                    std::mt19937_64& rng) {
  const size_t n = points.size();
  std::vector<Embedding> centroids;
  std::vector<char> chosen(n, 0);
  std::uniform_int_distribution<size_t> first(0, n - 1);
  size_t idx = first(rng);
  centroids.push_back(points[idx]);
  chosen[idx] = 1;
  std::vector<double> d2(n);
  for (size_t i = 0; i < n; ++i) d2[i] = SquaredDistance(points[i], centroids[0]);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (static_cast<int>(centroids.size()) < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    if (total <= 0.0) {
      // Remaining points coincide with chosen ones.
      idx = static_cast<size_t>(std::find(chosen.begin(), chosen.end(), 0) - chosen.begin());
    } else {
      double target = unit(rng) * total;
      idx = n - 1;
      for (size_t i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0 && d2[i] > 0.0) {
          idx = i;
          break;
        }
      }
      while (d2[idx] <= 0.0 && idx > 0) --idx;
    }
    centroids.push_back(points[idx]);
    chosen[idx] = 1;
    for (size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], SquaredDistance(points[i], centroids.back()));
    }
  }
  return centroids;
}

ClusterModel Lloyd(std::span<const Embedding> points,
                   std::vector<Embedding> centroids,
                   const KMeansOptions& options) {
  const int k = static_cast<int>(centroids.size());
  ClusterModel m;
  m.k = k;
  m.labels.assign(points.size(), 0);
  std::vector<int> counts;
  for (int it = 0; it < options.max_iterations; ++it) {
    for (size_t i = 0; i < points.size(); ++i) m.labels[i] = Nearest(points[i], centroids);
    auto next = MeansOf(points, m.labels, k, &counts);
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      // Empty cluster: take the point worst served by its current centroid.
      size_t worst = 0;
      double worst_d = -1.0;
      for (size_t i = 0; i < points.size(); ++i) {
        if (counts[m.labels[i]] <= 1) continue;
        const double d = SquaredDistance(points[i], next[m.labels[i]]);
        if (d > worst_d) {
          worst_d = d;
          worst = i;
        }
      }
      if (worst_d < 0.0) continue;
      --counts[m.labels[worst]];
      m.labels[worst] = c;
      counts[c] = 1;
      next = MeansOf(points, m.labels, k, &counts);
    }
    double shift = 0.0;
    for (int c = 0; c < k; ++c) {
      shift = std::max(shift, std::sqrt(SquaredDistance(centroids[c], next[c])));
    }
    centroids = std::move(next);
    m.iterations = it + 1;
    if (shift < options.tolerance) break;
  }
  m.centroids = std::move(centroids);
  return m;
}

ClusterModel FitAgglomerative(std::span<const Embedding> points, int k) {
  const size_t n = points.size();
  std::vector<Embedding> centroid(points.begin(), points.end());
  std::vector<double> size(n, 1.0);
  std::vector<char> active(n, 1);

  auto ward = [&](size_t a, size_t b) {
    return size[a] * size[b] / (size[a] + size[b]) *
           SquaredDistance(centroid[a], centroid[b]);
  };

  struct Merge {
    size_t a, b;
    double cost;
  };
  std::vector<Merge> merges;
  merges.reserve(n);
  std::vector<size_t> chain;
  size_t remaining = n;
  while (remaining > 1) {
    if (chain.empty()) {
      chain.push_back(static_cast<size_t>(std::find(active.begin(), active.end(), 1) - active.begin()));
    }
    const size_t a = chain.back();
    const bool has_prev = chain.size() >= 2;
    size_t best = has_prev ? chain[chain.size() - 2] : n;
    double best_d = has_prev ? ward(a, best) : std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < n; ++j) {
      if (!active[j] || j == a) continue;
      const double d = ward(a, j);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    if (has_prev && best == chain[chain.size() - 2]) {
      chain.pop_back();
      chain.pop_back();
      const size_t keep = std::min(a, best);
      const size_t drop = std::max(a, best);
      merges.push_back({keep, drop, best_d});
      const double total = size[keep] + size[drop];
      for (size_t d = 0; d < centroid[keep].size(); ++d) {
        centroid[keep][d] =
            (centroid[keep][d] * size[keep] + centroid[drop][d] * size[drop]) / total;
      }
      size[keep] = total;
      active[drop] = 0;
      --remaining;
    } else {
      chain.push_back(best);
    }
  }

  std::stable_sort(merges.begin(), merges.end(),
                   [](const Merge& x, const Merge& y) { return x.cost < y.cost; });
  std::vector<size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (size_t i = 0; i + k < n; ++i) {
    const size_t ra = find(merges[i].a);
    const size_t rb = find(merges[i].b);
    parent[std::max(ra, rb)] = std::min(ra, rb);
  }

  ClusterModel m;
  m.k = k;
  m.labels.resize(n);
  std::vector<int> id(n, -1);
  int next = 0;
  for (size_t i = 0; i < n; ++i) {
    const size_t r = find(i);
    if (id[r] < 0) id[r] = next++;
    m.labels[i] = id[r];
  }
  std::vector<int> counts;
  m.centroids = MeansOf(points, m.labels, k, &counts);
  return m;
}

}  // namespace

double SquaredDistance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

FeatureConfig FeatureConfigFor(SampleType dtype, int dim) {
  FeatureConfig c;
  c.dim = dim;
  switch (dtype) {
    case SampleType::kU8:
      c.range_max = 255.0;
      break;
    case SampleType::kU16:
      c.range_max = 65535.0;
      break;
    case SampleType::kF32:
      c.range_max = 1.0;
      break;
  }
  return c;
}

SpectralTextureExtractor::SpectralTextureExtractor(FeatureConfig config)
    : config_(config) {
  if (config_.bins <= 0 || config_.dim <= 0 || !(config_.range_max > config_.range_min)) {
    throw Error(ErrorCode::kInvalidArgument, "invalid feature config");
  }
}

Embedding SpectralTextureExtractor::Extract(const Tile& tile) const {
  return ExtractFeatures(tile, config_);
}

Embedding ExtractFeatures(const Tile& tile, const FeatureConfig& config) {
  const int64_t w = tile.extent.w;
  const int64_t h = tile.extent.h;
  if (w <= 0 || h <= 0 || tile.bands <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "empty tile");
  }
  if (tile.pixels.size() != static_cast<size_t>(w * h * tile.bands)) {
    throw Error(ErrorCode::kInvalidArgument, "tile buffer size mismatch");
  }
  const int per_band = SpectralTextureExtractor::FeaturesPerBand(config.bins);
  if (tile.bands * per_band > config.dim) {
    throw Error(ErrorCode::kInvalidArgument,
                "embedding dimension too small for " + std::to_string(tile.bands) + " bands");
  }
  const double n = static_cast<double>(w * h);
  const double span = config.range_max - config.range_min;
  Embedding out(config.dim, 0.0);
  for (int b = 0; b < tile.bands; ++b) {
    double* f = out.data() + b * per_band;
    double sum = 0.0;
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) sum += tile.at(x, y, b);
    }
    const double mean = sum / n;
    double ss = 0.0;
    double* hist = f + 2;
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        const double v = tile.at(x, y, b);
        ss += (v - mean) * (v - mean);
        auto bin = static_cast<int64_t>(std::floor((v - config.range_min) / span * config.bins));
        bin = std::clamp<int64_t>(bin, 0, config.bins - 1);
        hist[bin] += 1.0;
      }
    }
    for (int i = 0; i < config.bins; ++i) hist[i] /= n;
    f[0] = mean;
    f[1] = std::sqrt(ss / n);

    double grad = 0.0;
    int64_t pairs = 0;
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        const double v = tile.at(x, y, b);
        if (x + 1 < w) {
          grad += std::abs(tile.at(x + 1, y, b) - v);
          ++pairs;
        }
        if (y + 1 < h) {
          grad += std::abs(tile.at(x, y + 1, b) - v);
          ++pairs;
        }
      }
    }
    f[2 + config.bins] = pairs > 0 ? grad / static_cast<double>(pairs) : 0.0;
  }
  return out;
}

ClusterMethod ParseClusterMethod(const std::string& name) {
  if (name == "kmeans") return ClusterMethod::kKMeans;
  if (name == "agglomerative") return ClusterMethod::kAgglomerative;
  throw Error(ErrorCode::kInvalidArgument, "unknown cluster method '" + name + "'");
}

const char* ClusterMethodName(ClusterMethod method) {
  return method == ClusterMethod::kKMeans ? "kmeans" : "agglomerative";
}

ClusterModel FitClusters(std::span<const Embedding> points, int k,
                         ClusterMethod method, uint64_t seed,
                         const KMeansOptions& options) {
  CheckPoints(points);
  if (k <= 0) throw Error(ErrorCode::kInvalidArgument, "k must be positive");
  if (static_cast<size_t>(k) > points.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "k = " + std::to_string(k) + " exceeds number of points " +
                    std::to_string(points.size()));
  }
  ClusterModel best;
  if (method == ClusterMethod::kAgglomerative) {
    best = FitAgglomerative(points, k);
  } else {
    std::mt19937_64 rng(seed);
    double best_sse = std::numeric_limits<double>::infinity();
    const int restarts = std::max(1, options.restarts);
    for (int r = 0; r < restarts; ++r) {
      ClusterModel m = Lloyd(points, SeedPlusPlus(points, k, rng), options);
      const double sse = WithinSum(points, m);
      if (sse < best_sse) {
        best_sse = sse;
        best = std::move(m);
      }
    }
  }
  best.seed = seed;
  Canonicalize(&best);
  return best;
}

ClusterModel FitKMeansFrom(std::span<const Embedding> points,
                           std::vector<Embedding> centroids, uint64_t seed,
                           const KMeansOptions& options) {
  CheckPoints(points);
  if (centroids.empty() || centroids.size() > points.size()) {
    throw Error(ErrorCode::kInvalidArgument, "invalid number of starting centroids");
  }
  ClusterModel m = Lloyd(points, std::move(centroids), options);
  m.seed = seed;
  return m;
}

VarianceReport IntraClusterVariance(const ClusterModel& model,
                                    std::span<const Embedding> points) {
  if (model.labels.size() != points.size()) {
    throw Error(ErrorCode::kInvalidArgument, "model was fitted on different points");
  }
  std::vector<double> sums(model.k, 0.0);
  std::vector<int> counts(model.k, 0);
  for (size_t i = 0; i < points.size(); ++i) {
    const int c = model.labels[i];
    sums[c] += SquaredDistance(points[i], model.centroids[c]);
    ++counts[c];
  }
  VarianceReport report;
  double total = 0.0;
  for (int c = 0; c < model.k; ++c) {
    if (counts[c] == 0) {
      report.empty_clusters.push_back(c);
      continue;
    }
    total += sums[c] / counts[c];
  }
  report.value = total / model.k;
  return report;
}

std::vector<ClusterModel> NestedKMeans(std::span<const Embedding> points,
                                       int k_max, uint64_t seed,
                                       const KMeansOptions& options) {
  CheckPoints(points);
  if (k_max < 1 || static_cast<size_t>(k_max) > points.size()) {
    throw Error(ErrorCode::kInvalidArgument, "k_max out of range");
  }
  std::vector<ClusterModel> runs;
  runs.push_back(FitClusters(points, 1, ClusterMethod::kKMeans, seed, options));
  while (static_cast<int>(runs.size()) < k_max) {
    const ClusterModel& prev = runs.back();
    std::vector<int> counts(prev.k, 0);
    for (int label : prev.labels) ++counts[label];
    size_t worst = points.size();
    double worst_d = -1.0;
    for (size_t i = 0; i < points.size(); ++i) {
      if (counts[prev.labels[i]] < 2) continue;
      const double d = SquaredDistance(points[i], prev.centroids[prev.labels[i]]);
      if (d > worst_d) {
        worst_d = d;
        worst = i;
      }
    }
    ClusterModel split = prev;
    split.k = prev.k + 1;
    split.labels[worst] = prev.k;
    split.centroids = MeansOf(points, split.labels, split.k, &counts);
    split.iterations = 0;

    ClusterModel refined = Lloyd(points, split.centroids, options);
    refined.seed = seed;
    const VarianceReport rv = IntraClusterVariance(refined, points);
    const bool keep_refined = rv.empty_clusters.empty() &&
                              rv.value <= IntraClusterVariance(split, points).value;
    ClusterModel next = keep_refined ? std::move(refined) : std::move(split);
    Canonicalize(&next);
    runs.push_back(std::move(next));
  }
  return runs;
}

BucketCountSelection SelectBucketCount(std::span<const Embedding> points,
                                       int k_min, int k_max,
                                       const BucketCountOptions& options) {
  if (k_min < 1 || k_max < k_min) {
    throw Error(ErrorCode::kInvalidArgument, "empty k range");
  }
  if (static_cast<size_t>(k_max) > points.size()) {
    throw Error(ErrorCode::kInvalidArgument, "k range exceeds number of points");
  }
  BucketCountSelection sel;
  for (int k = k_min; k <= k_max; ++k) {
    const ClusterModel m = FitClusters(points, k, options.method, options.seed);
    sel.ks.push_back(k);
    sel.variances.push_back(IntraClusterVariance(m, points).value);
  }
  sel.k = k_min;
  for (size_t i = 0; i + 1 < sel.variances.size(); ++i) {
    const double v = sel.variances[i];
    const double reduction = v > 0.0 ? (v - sel.variances[i + 1]) / v : 0.0;
    if (reduction < options.threshold) {
      sel.k = sel.ks[i];
      sel.knee_found = true;
      break;
    }
  }
  const double v1 =
      IntraClusterVariance(FitClusters(points, 1, options.method, options.seed), points).value;
  const double vk = sel.variances[sel.k - k_min];
  sel.separation = v1 > 0.0 ? 1.0 - vk / v1 : 0.0;
  return sel;
}

void WriteEmbeddingsCsv(const std::filesystem::path& path,
                        std::span<const TileExtent> extents,
                        std::span<const Embedding> embeddings) {
  if (extents.size() != embeddings.size()) {
    throw Error(ErrorCode::kInvalidArgument, "extent/embedding count mismatch");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.precision(17);
  for (size_t i = 0; i < extents.size(); ++i) {
    out << extents[i].scene_id << ',' << extents[i].x0 << ',' << extents[i].y0;
    for (double v : embeddings[i]) out << ',' << v;
    out << '\n';
  }
}

}  // namespace resflow
