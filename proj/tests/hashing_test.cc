#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "resflow/hashing.h"
#include "resflow/status.h"
#include "resflow/synth.h"
#include "test_util.h"

namespace resflow {
namespace {

BinaryCode RandomCode(int width, std::mt19937_64& rng) {
  BinaryCode c(width);
  for (int i = 0; i < width; ++i) c.set_bit(i, rng() & 1);
  return c;
}

int NaiveHamming(const BinaryCode& a, const BinaryCode& b) {
  int d = 0;
  for (int i = 0; i < a.width(); ++i) d += a.bit(i) != b.bit(i);
  return d;
}

double NaiveMap(const std::vector<BinaryCode>& codes, const std::vector<int>& labels) {
  double sum = 0.0;
  int queries = 0;
  for (size_t q = 0; q < codes.size(); ++q) {
    std::vector<size_t> others;
    for (size_t i = 0; i < codes.size(); ++i) {
      if (i != q) others.push_back(i);
    }
    std::stable_sort(others.begin(), others.end(), [&](size_t a, size_t b) {
      return NaiveHamming(codes[q], codes[a]) < NaiveHamming(codes[q], codes[b]);
    });
    double ap = 0.0;
    int hits = 0;
    for (size_t r = 0; r < others.size(); ++r) {
      if (labels[others[r]] == labels[q]) ap += static_cast<double>(++hits) / (r + 1);
    }
    if (hits == 0) continue;
    sum += ap / hits;
    ++queries;
  }
  return sum / queries;
}

TEST(Hamming, Examples) {
  std::mt19937_64 rng(1);
  const BinaryCode a = RandomCode(32, rng);
  EXPECT_EQ(Hamming(a, a), 0);
  EXPECT_EQ(Hamming(BinaryCode::FromUint(0b1010, 4), BinaryCode::FromUint(0b0010, 4)), 1);
  EXPECT_EQ(Hamming(a, ~a), 32);
  EXPECT_THROW(Hamming(BinaryCode(4), BinaryCode(5)), Error);
}

TEST(Hamming, MetricAxioms) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    const int width = 1 + static_cast<int>(rng() % 150);
    const BinaryCode a = RandomCode(width, rng), b = RandomCode(width, rng), c = RandomCode(width, rng);
    const int ab = Hamming(a, b);
    EXPECT_EQ(ab, NaiveHamming(a, b));
    EXPECT_GE(ab, 0);
    EXPECT_EQ(ab == 0, a == b);
    EXPECT_EQ(ab, Hamming(b, a));
    EXPECT_LE(Hamming(a, c), ab + Hamming(b, c));
  }
}

TEST(BinaryCode, HexRoundTrip) {
  std::mt19937_64 rng(3);
  EXPECT_EQ(BinaryCode::FromUint(0xab, 12).ToHex(), "0ab");
  for (int width : {1, 4, 7, 32, 64, 65, 100}) {
    const BinaryCode c = RandomCode(width, rng);
    EXPECT_EQ(BinaryCode::FromHex(c.ToHex(), width), c);
  }
  EXPECT_THROW(BinaryCode::FromHex("AB", 8), Error);
  EXPECT_THROW(BinaryCode::FromHex("1f", 4), Error);
  EXPECT_THROW(BinaryCode::FromHex("f", 3), Error);
}

TEST(FitHash, TwoBlobsOneBit) {
  std::vector<Embedding> pts;
  std::vector<int> labels;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 0.5);
  for (int i = 0; i < 40; ++i) {
    pts.push_back({(i % 2 ? 10.0 : 0.0) + g(rng)});
    labels.push_back(i % 2);
  }
  const HashFunction h = FitHash(pts, labels, 1, 7);
  int correct = 0;
  const bool one_is_high = Encode(h, pts[1]).bit(0);
  for (size_t i = 0; i < pts.size(); ++i) correct += Encode(h, pts[i]).bit(0) == (labels[i] == 1 ? one_is_high : !one_is_high);
  EXPECT_EQ(correct, 40);
}

TEST(FitHash, SixBlobsDistinctCentroids) {
  std::vector<int> labels;
  const auto pts = GaussianBlobs(6, 100, 16, 0.5, 10.0, 5, &labels);
  const HashFunction h = FitHash(pts, labels, 32, 9);
  EXPECT_EQ(h.projections.size(), 32u);
  for (const auto& p : h.projections) {
    double norm = 0.0;
    for (double v : p) norm += v * v;
    EXPECT_NEAR(norm, 1.0, 1e-12);
  }
  std::vector<BinaryCode> codes;
  for (const auto& p : pts) codes.push_back(Encode(h, p));
  const CentroidTable table = BucketCentroids(codes, labels);
  for (int a = 0; a < 6; ++a) {
    for (int b = a + 1; b < 6; ++b) EXPECT_GE(Hamming(table.code(a), table.code(b)), 1);
  }
  EXPECT_GE(EvaluateMap(codes, labels).map, 0.95);
}

TEST(FitHash, OddClusterCountsDoNotCollide) {
  // Balanced odd k: a median cut always halves one cluster.
  for (int k : {3, 5, 7}) {
    for (uint64_t seed = 0; seed < 5; ++seed) {
      std::vector<int> labels;
      const auto pts = GaussianBlobs(k, 40, 8, 1.0, 6.0, seed, &labels);
      const HashFunction h = FitHash(pts, labels, 16, seed);
      std::vector<BinaryCode> codes;
      for (const auto& p : pts) codes.push_back(Encode(h, p));
      EXPECT_NO_THROW(BucketCentroids(codes, labels)) << "k=" << k << " seed=" << seed;
    }
  }
}

TEST(FitHash, Errors) {
  const std::vector<Embedding> same(5, Embedding{1.0, 2.0});
  const std::vector<int> two{0, 1, 0, 1, 0};
  try {
    FitHash(same, two, 8, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerate);
    EXPECT_NE(std::string(e.what()).find("no separating direction"), std::string::npos);
  }
  std::vector<int> labels;
  const auto pts = GaussianBlobs(5, 4, 3, 1.0, 5.0, 1, &labels);
  EXPECT_THROW(FitHash(pts, labels, 2, 1), Error);  // 5 buckets need 3 bits
  EXPECT_THROW(FitHash(pts, std::vector<int>(pts.size(), 0), 8, 1), Error);
}

TEST(FitHash, DeterministicAndScaleInvariantAssignments) {
  std::vector<int> labels;
  const auto pts = GaussianBlobs(4, 30, 8, 1.0, 6.0, 6, &labels);
  const HashFunction a = FitHash(pts, labels, 16, 3);
  const HashFunction b = FitHash(pts, labels, 16, 3);
  EXPECT_EQ(a.projections, b.projections);
  EXPECT_EQ(a.thresholds, b.thresholds);

  auto assignments = [&](const std::vector<Embedding>& p) {
    const HashFunction h = FitHash(p, labels, 16, 3);
    std::vector<BinaryCode> codes;
    for (const auto& e : p) codes.push_back(Encode(h, e));
    const CentroidTable t = BucketCentroids(codes, labels);
    std::vector<BucketId> out;
    for (const auto& c : codes) out.push_back(AssignBucket(c, t));
    return out;
  };
  for (double c : {0.25, 3.0, 1000.0}) {
    std::vector<Embedding> scaled = pts;
    for (auto& p : scaled) {
      for (double& v : p) v *= c;
    }
    EXPECT_EQ(assignments(scaled), assignments(pts)) << "scale " << c;
  }
}

TEST(Encode, StrictThresholdAndStability) {
  HashFunction h;
  h.n_bits = 2;
  h.dim = 2;
  h.projections = {{1.0, 0.0}, {0.0, 1.0}};
  h.thresholds = {0.5, -0.25};
  const Embedding on_boundary{0.5, -0.25};
  EXPECT_EQ(Encode(h, on_boundary), BinaryCode(2));
  const Embedding e{0.7, 0.3};
  const Embedding nudged{0.7 + 1e-12, 0.3 - 1e-12};
  EXPECT_EQ(Encode(h, e), Encode(h, nudged));
  EXPECT_EQ(Encode(h, e).ToHex(), "3");
  EXPECT_THROW(Encode(h, Embedding{1.0}), Error);
}

TEST(BucketCentroids, MajorityVote) {
  const std::vector<BinaryCode> codes{BinaryCode::FromUint(0b00, 2), BinaryCode::FromUint(0b01, 2),
                                      BinaryCode::FromUint(0b11, 2), BinaryCode::FromUint(0b10, 2)};
  const CentroidTable t = BucketCentroids(codes, std::vector<int>{0, 0, 0, 1});
  EXPECT_EQ(t.code(0), BinaryCode::FromUint(0b01, 2));
  EXPECT_EQ(t.code(1), BinaryCode::FromUint(0b10, 2));
  // Exact tie on a bit gives 0.
  const CentroidTable tie = BucketCentroids(
      std::vector<BinaryCode>{BinaryCode::FromUint(0b1, 1), BinaryCode::FromUint(0b0, 1)},
      std::vector<int>{0, 0});
  EXPECT_EQ(tie.code(0), BinaryCode::FromUint(0, 1));
}

TEST(BucketCentroids, Collision) {
  const std::vector<BinaryCode> codes{BinaryCode::FromUint(5, 4), BinaryCode::FromUint(5, 4)};
  try {
    BucketCentroids(codes, std::vector<int>{0, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCollision);
    EXPECT_NE(std::string(e.what()).find("bucket collision; increase n_bits"), std::string::npos);
  }
}

TEST(AssignBucket, ZeroDistanceAndTies) {
  const CentroidTable t({BinaryCode::FromUint(0b0000, 4), BinaryCode::FromUint(0b0011, 4),
                         BinaryCode::FromUint(0b1100, 4), BinaryCode::FromUint(0b1110, 4),
                         BinaryCode::FromUint(0b0110, 4)});
  EXPECT_EQ(AssignBucket(BinaryCode::FromUint(0b1110, 4), t), 3);
  // 0b0010 is 1 from bucket 0, 1 from bucket 1 and 1 from bucket 4.
  EXPECT_EQ(AssignBucket(BinaryCode::FromUint(0b0010, 4), t), 0);
  EXPECT_THROW(AssignBucket(BinaryCode(5), t), Error);
}

TEST(AssignBucket, ExhaustiveSmallWidths) {
  std::mt19937_64 rng(12);
  for (int width = 1; width <= 8; ++width) {
    for (int k = 1; k <= 4 && k <= (1 << width); ++k) {
      std::vector<uint64_t> values(1u << width);
      std::iota(values.begin(), values.end(), 0);
      std::shuffle(values.begin(), values.end(), rng);
      std::vector<BinaryCode> cs;
      for (int i = 0; i < k; ++i) cs.push_back(BinaryCode::FromUint(values[i], width));
      const CentroidTable t(cs);
      for (uint64_t v = 0; v < (1u << width); ++v) {
        const BinaryCode c = BinaryCode::FromUint(v, width);
        int best = 0;
        for (int i = 1; i < k; ++i) {
          if (NaiveHamming(c, cs[i]) < NaiveHamming(c, cs[best])) best = i;
        }
        ASSERT_EQ(AssignBucket(c, t), best);
      }
    }
  }
}

TEST(EvaluateMap, Examples) {
  std::mt19937_64 rng(4);
  std::vector<BinaryCode> codes;
  for (int i = 0; i < 6; ++i) codes.push_back(RandomCode(8, rng));
  EXPECT_DOUBLE_EQ(EvaluateMap(codes, std::vector<int>(6, 3)).map, 1.0);

  const std::vector<BinaryCode> split{BinaryCode::FromUint(0, 4), BinaryCode::FromUint(0, 4),
                                      BinaryCode::FromUint(15, 4), BinaryCode::FromUint(15, 4)};
  EXPECT_DOUBLE_EQ(EvaluateMap(split, std::vector<int>{0, 0, 1, 1}).map, 1.0);

  const std::vector<BinaryCode> same(6, BinaryCode::FromUint(9, 4));
  const std::vector<int> labels{0, 1, 0, 1, 1, 0};
  EXPECT_DOUBLE_EQ(EvaluateMap(same, labels).map, NaiveMap(same, labels));
}

TEST(EvaluateMap, SingletonQueriesSkipped) {
  const std::vector<BinaryCode> codes{BinaryCode::FromUint(0, 2), BinaryCode::FromUint(0, 2),
                                      BinaryCode::FromUint(3, 2)};
  const MapResult r = EvaluateMap(codes, std::vector<int>{0, 0, 1});
  EXPECT_EQ(r.queries, 2);
  EXPECT_EQ(r.skipped, 1);
  EXPECT_THROW(EvaluateMap(codes, std::vector<int>{0, 1, 2}), Error);
}

TEST(EvaluateMap, MatchesBruteForce) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 7);
    std::vector<BinaryCode> codes;
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
      codes.push_back(RandomCode(3, rng));
      labels.push_back(static_cast<int>(rng() % 2));
    }
    if (std::count(labels.begin(), labels.end(), 0) < 2 || std::count(labels.begin(), labels.end(), 1) < 2) {
      continue;
    }
    EXPECT_NEAR(EvaluateMap(codes, labels).map, NaiveMap(codes, labels), 1e-12);
  }
}

TEST(HashFiles, RoundTrip) {
  testing::TempDir dir;
  std::vector<int> labels;
  const auto pts = GaussianBlobs(3, 10, 5, 1.0, 8.0, 2, &labels);
  const HashFunction h = FitHash(pts, labels, 12, 4);
  SaveHashFunction(dir / "h.hsh", h);
  const HashFunction back = LoadHashFunction(dir / "h.hsh");
  EXPECT_EQ(back.projections, h.projections);
  EXPECT_EQ(back.thresholds, h.thresholds);

  const CentroidTable t({BinaryCode::FromUint(1, 12), BinaryCode::FromUint(2050, 12)});
  SaveCentroidTable(dir / "c.txt", t);
  EXPECT_EQ(LoadCentroidTable(dir / "c.txt", 12).codes(), t.codes());
  EXPECT_THROW(LoadHashFunction(dir / "c.txt"), Error);
}

}  // namespace
}  // namespace resflow
