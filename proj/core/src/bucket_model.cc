#include "resflow/bucket_model.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "resflow/status.h"

namespace resflow {
namespace {

constexpr char kModelMagic[4] = {'L', 'P', 'M', '1'};
constexpr uint32_t kWindow = 3;

double Sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

template <typename T>
void Put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T Take(std::istream& in) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw Error(ErrorCode::kMalformed, "truncated model artifact");
  }
  return v;
}

}  // namespace

std::vector<double> PixelFeatures(const Tile& tile) {
  const int64_t w = tile.extent.w;
  const int64_t h = tile.extent.h;
  const int bands = tile.bands;
  const int f = 2 * bands;
  std::vector<double> out(static_cast<size_t>(w * h * f));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      double* row = out.data() + (y * w + x) * f;
      for (int b = 0; b < bands; ++b) {
        row[b] = tile.at(x, y, b);
        double sum = 0.0;
        int n = 0;
        for (int64_t dy = -1; dy <= 1; ++dy) {
          for (int64_t dx = -1; dx <= 1; ++dx) {
            const int64_t xx = x + dx, yy = y + dy;
            if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
            sum += tile.at(xx, yy, b);
            ++n;
          }
        }
        row[bands + b] = sum / n;
      }
    }
  }
  return out;
}

namespace logistic {

double Loss(std::span<const double> w, double b, std::span<const double> x,
            std::span<const uint8_t> y) {
  const size_t f = w.size();
  double total = 0.0;
  for (size_t i = 0; i < y.size(); ++i) {
    double z = b;
    for (size_t j = 0; j < f; ++j) z += w[j] * x[i * f + j];
    // log(1 + e^z) - y z, computed stably.
    const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    total += softplus - (y[i] ? z : 0.0);
  }
  return total / static_cast<double>(y.size());
}

double Gradient(std::span<const double> w, double b, std::span<const double> x,
                std::span<const uint8_t> y, std::span<double> grad_w) {
  const size_t f = w.size();
  std::fill(grad_w.begin(), grad_w.end(), 0.0);
  double grad_b = 0.0;
  for (size_t i = 0; i < y.size(); ++i) {
    double z = b;
    for (size_t j = 0; j < f; ++j) z += w[j] * x[i * f + j];
    const double r = Sigmoid(z) - (y[i] ? 1.0 : 0.0);
    for (size_t j = 0; j < f; ++j) grad_w[j] += r * x[i * f + j];
    grad_b += r;
  }
  const double n = static_cast<double>(y.size());
  for (double& g : grad_w) g /= n;
  return grad_b / n;
}

}  // namespace logistic

void LinearPixelModel::Train(std::span<const TrainingSample> samples) {
  if (samples.empty()) throw Error(ErrorCode::kInvalidArgument, "no training samples");
  const int bands = samples[0].tile.bands;
  int64_t total = 0;
  for (const auto& s : samples) {
    if (s.tile.bands != bands) throw Error(ErrorCode::kInvalidArgument, "band count mismatch");
    if (s.truth.w != s.tile.extent.w || s.truth.h != s.tile.extent.h) {
      throw Error(ErrorCode::kInvalidArgument, "truth mask does not match tile");
    }
    total += s.tile.extent.area();
  }
  const int f = 2 * bands;

  // Selection sampling keeps the chosen pixels in input order.
  const int64_t keep = std::min(total, hyper_.max_pixels);
  std::mt19937_64 rng(hyper_.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> x;
  std::vector<uint8_t> y;
  x.reserve(static_cast<size_t>(keep * f));
  y.reserve(static_cast<size_t>(keep));
  int64_t seen = 0, taken = 0;
  for (const auto& s : samples) {
    const std::vector<double> feats = PixelFeatures(s.tile);
    const int64_t n = s.tile.extent.area();
    for (int64_t i = 0; i < n; ++i, ++seen) {
      if (keep < total) {
        const double p = static_cast<double>(keep - taken) / static_cast<double>(total - seen);
        if (unit(rng) >= p) continue;
      }
      x.insert(x.end(), feats.begin() + i * f, feats.begin() + (i + 1) * f);
      y.push_back(s.truth.labels[i] != 0);
      ++taken;
    }
  }
  const size_t rows = y.size();
  size_t positives = 0;
  for (uint8_t v : y) positives += v;
  if (positives == 0 || positives == rows) {
    throw Error(ErrorCode::kDegenerate, "degenerate labels: training set has a single class");
  }

  mean_.assign(f, 0.0);
  std_.assign(f, 0.0);
  for (size_t i = 0; i < rows; ++i) {
    for (int j = 0; j < f; ++j) mean_[j] += x[i * f + j];
  }
  for (double& m : mean_) m /= static_cast<double>(rows);
  for (size_t i = 0; i < rows; ++i) {
    for (int j = 0; j < f; ++j) {
      const double d = x[i * f + j] - mean_[j];
      std_[j] += d * d;
    }
  }
  for (double& s : std_) {
    s = std::sqrt(s / static_cast<double>(rows));
    if (s < 1e-12) s = 1.0;
  }
  for (size_t i = 0; i < rows; ++i) {
    for (int j = 0; j < f; ++j) x[i * f + j] = (x[i * f + j] - mean_[j]) / std_[j];
  }

  weights_.assign(f, 0.0);
  bias_ = 0.0;
  std::vector<double> grad(f);
  for (int epoch = 0; epoch < hyper_.epochs; ++epoch) {
    const double gb = logistic::Gradient(weights_, bias_, x, y, grad);
    for (int j = 0; j < f; ++j) weights_[j] -= hyper_.learning_rate * grad[j];
    bias_ -= hyper_.learning_rate * gb;
  }
  bands_ = bands;
  trained_pixels_ = static_cast<int64_t>(rows);
}

Mask LinearPixelModel::Infer(const Tile& tile) const {
  if (weights_.empty()) throw Error(ErrorCode::kInvalidArgument, "model is not trained");
  if (tile.bands != bands_) {
    throw Error(ErrorCode::kInvalidArgument,
                "band mismatch: model has " + std::to_string(bands_) + ", tile has " +
                    std::to_string(tile.bands));
  }
  const std::vector<double> feats = PixelFeatures(tile);
  const size_t f = weights_.size();
  Mask mask(tile.extent.w, tile.extent.h);
  for (size_t i = 0; i < mask.labels.size(); ++i) {
    double z = bias_;
    for (size_t j = 0; j < f; ++j) z += weights_[j] * (feats[i * f + j] - mean_[j]) / std_[j];
    mask.labels[i] = z > 0.0 ? 1 : 0;
  }
  return mask;
}

void LinearPixelModel::Save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(kModelMagic, 4);
  Put<uint32_t>(out, static_cast<uint32_t>(bands_));
  Put<uint32_t>(out, kWindow);
  Put<uint32_t>(out, static_cast<uint32_t>(weights_.size()));
  for (double v : weights_) Put<double>(out, v);
  Put<double>(out, bias_);
  for (double v : mean_) Put<double>(out, v);
  for (double v : std_) Put<double>(out, v);
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

LinearPixelModel LinearPixelModel::Load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kNotFound, "missing model artifact: " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kModelMagic, 4) != 0) {
    throw Error(ErrorCode::kMalformed, "not a model artifact: " + path.string());
  }
  LinearPixelModel m;
  m.bands_ = static_cast<int>(Take<uint32_t>(in));
  const uint32_t window = Take<uint32_t>(in);
  const uint32_t features = Take<uint32_t>(in);
  if (window != kWindow || features != 2u * static_cast<uint32_t>(m.bands_) || m.bands_ <= 0) {
    throw Error(ErrorCode::kMalformed, "unsupported feature spec in " + path.string());
  }
  m.weights_.resize(features);
  for (double& v : m.weights_) v = Take<double>(in);
  m.bias_ = Take<double>(in);
  m.mean_.resize(features);
  for (double& v : m.mean_) v = Take<double>(in);
  m.std_.resize(features);
  for (double& v : m.std_) v = Take<double>(in);
  return m;
}

SegMetrics ComputeSegMetrics(const Mask& pred, const Mask& truth) {
  if (pred.w != truth.w || pred.h != truth.h) {
    throw Error(ErrorCode::kInvalidArgument, "mask dimensions differ");
  }
  SegMetrics m;
  for (size_t i = 0; i < pred.labels.size(); ++i) {
    const bool p = pred.labels[i] != 0;
    const bool t = truth.labels[i] != 0;
    m.tp += p && t;
    m.fp += p && !t;
    m.fn += !p && t;
  }
  return AccumulateSegMetrics(std::span<const SegMetrics>(&m, 1));
}

SegMetrics AccumulateSegMetrics(std::span<const SegMetrics> parts) {
  SegMetrics m;
  for (const auto& p : parts) {
    m.tp += p.tp;
    m.fp += p.fp;
    m.fn += p.fn;
  }
  const int64_t union_px = m.tp + m.fp + m.fn;
  if (union_px == 0) {
    m.iou = 1.0;
    m.f1 = 1.0;
  } else {
    m.iou = static_cast<double>(m.tp) / static_cast<double>(union_px);
    m.f1 = 2.0 * m.tp / static_cast<double>(2 * m.tp + m.fp + m.fn);
  }
  return m;
}

double IouToF1(double iou) {
  if (!(iou >= 0.0 && iou <= 1.0)) {
    throw Error(ErrorCode::kOutOfRange, "iou must lie in [0, 1]");
  }
  return 2.0 * iou / (1.0 + iou);
}

}  // namespace resflow
