#ifndef RESFLOW_BUCKET_MODEL_H_
#define RESFLOW_BUCKET_MODEL_H_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "resflow/raster.h"

namespace resflow {

struct TrainingSample {
  Tile tile;
  Mask truth;
};

// Per-bucket inference model. Infer must return a mask with the tile's
// width and height and be deterministic once trained.
class BucketModel {
 public:
  virtual ~BucketModel() = default;
  virtual void Train(std::span<const TrainingSample> samples) = 0;
  virtual Mask Infer(const Tile& tile) const = 0;
  virtual std::string name() const = 0;
};

struct LinearModelHyper {
  int epochs = 200;
  double learning_rate = 0.1;
  // Training pixels are subsampled (seeded) above this count.
  int64_t max_pixels = 60000;
  uint64_t seed = 0;
};

// Logistic pixel classifier over each band value plus the 3x3 local mean of
// each band. Features are standardized with training statistics; a pixel is
// labelled 1 iff w.x + b > 0.
class LinearPixelModel : public BucketModel {
 public:
  LinearPixelModel() = default;
  explicit LinearPixelModel(LinearModelHyper hyper) : hyper_(hyper) {}

  void Train(std::span<const TrainingSample> samples) override;
  Mask Infer(const Tile& tile) const override;
  std::string name() const override { return "linear-pixel"; }

  int bands() const { return bands_; }
  const std::vector<double>& weights() const { return weights_; }
  double bias() const { return bias_; }
  const std::vector<double>& feature_mean() const { return mean_; }
  const std::vector<double>& feature_std() const { return std_; }
  int64_t trained_pixels() const { return trained_pixels_; }

  // "LPM1", u32 bands, u32 window, u32 features, f64 weights, f64 bias,
  // f64 means, f64 stds (little-endian).
  void Save(const std::filesystem::path& path) const;
  static LinearPixelModel Load(const std::filesystem::path& path);

 private:
  LinearModelHyper hyper_;
  int bands_ = 0;
  std::vector<double> weights_;
  double bias_ = 0.0;
  std::vector<double> mean_;
  std::vector<double> std_;
  int64_t trained_pixels_ = 0;
};

// Raw per-pixel features: bands values, then the 3x3 mean of each band
// (window clipped at the tile border). Row-major, 2 * bands per pixel.
std::vector<double> PixelFeatures(const Tile& tile);

namespace logistic {

// Mean logistic loss over rows of `x` (n x f, row-major) with labels y.
double Loss(std::span<const double> w, double b, std::span<const double> x,
            std::span<const uint8_t> y);
// Writes d(loss)/dw into grad_w and returns d(loss)/db.
double Gradient(std::span<const double> w, double b, std::span<const double> x,
                std::span<const uint8_t> y, std::span<double> grad_w);

}  // namespace logistic

struct SegMetrics {
  double iou = 0.0;
  double f1 = 0.0;
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t fn = 0;
};

// Label 1 (any non-zero) is the positive class. Both scores are 1 when
// tp = fp = fn = 0.
SegMetrics ComputeSegMetrics(const Mask& pred, const Mask& truth);
SegMetrics AccumulateSegMetrics(std::span<const SegMetrics> parts);

double IouToF1(double iou);

}  // namespace resflow

#endif  // RESFLOW_BUCKET_MODEL_H_
