#include "resflow/hashing.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "resflow/status.h"

namespace resflow {
namespace {

constexpr char kHashMagic[4] = {'H', 'S', 'H', '1'};
constexpr int kExhaustiveBipartitionLimit = 12;

int WordCount(int width) { return (width + 63) / 64; }

// Best balanced accuracy of `bits` against any split of the labels into two
// non-empty groups.
double BestBipartitionScore(const std::vector<char>& bits,
                            std::span<const int> labels, int k) {
  std::vector<double> ones(k, 0.0), total(k, 0.0);
  for (size_t i = 0; i < bits.size(); ++i) {
    total[labels[i]] += 1.0;
    ones[labels[i]] += bits[i];
  }
  auto score = [&](auto in_positive) {
    double tp = 0, p = 0, tn = 0, n = 0;
    for (int l = 0; l < k; ++l) {
      if (in_positive(l)) {
        tp += ones[l];
        p += total[l];
      } else {
        tn += total[l] - ones[l];
        n += total[l];
      }
    }
    if (p == 0 || n == 0) return 0.0;
    return 0.5 * (tp / p + tn / n);
  };
  double best = 0.0;
  if (k <= kExhaustiveBipartitionLimit) {
    const uint32_t full = (1u << k) - 1;
    for (uint32_t s = 1; s < full; ++s) {
      best = std::max(best, score([s](int l) { return (s >> l) & 1u; }));
    }
    return best;
  }
  std::vector<int> order(k);
  for (int l = 0; l < k; ++l) order[l] = l;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return ones[a] / total[a] > ones[b] / total[b];
  });
  std::vector<char> positive(k, 0);
  for (int cut = 0; cut + 1 < k; ++cut) {
    positive[order[cut]] = 1;
    best = std::max(best, score([&](int l) { return positive[l] != 0; }));
  }
  return best;
}

// Prefix sweep over labels ordered by their fraction of ones.
double SweepScore(const std::vector<double>& ones, const std::vector<double>& total,
                  std::vector<int>& order) {
  const int k = static_cast<int>(ones.size());
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double fa = ones[a] / total[a], fb = ones[b] / total[b];
    return fa != fb ? fa > fb : a < b;
  });
  double all_ones = 0, all = 0;
  for (int l = 0; l < k; ++l) {
    all_ones += ones[l];
    all += total[l];
  }
  double tp = 0, p = 0, best = 0.0;
  for (int cut = 0; cut + 1 < k; ++cut) {
    tp += ones[order[cut]];
    p += total[order[cut]];
    const double n = all - p;
    const double tn = n - (all_ones - tp);
    best = std::max(best, 0.5 * (tp / p + tn / n));
  }
  return best;
}

struct Cut {
  double threshold = 0.0;
  double score = -1.0;
};

// Best cut along `proj` overall and among cuts whose per-label majority bits
// split some pair in `unresolved`. Ties go to the cut nearest the median.
std::pair<Cut, Cut> BestCuts(const std::vector<double>& proj, const std::vector<int>& lab, int k,
                             const std::vector<std::pair<int, int>>& unresolved) {
  const size_t n = proj.size();
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return proj[a] < proj[b]; });
  std::vector<double> ones(k, 0.0), total(k, 0.0);
  for (size_t i = 0; i < n; ++i) {
    total[lab[i]] += 1.0;
    ones[lab[i]] += 1.0;
  }
  std::vector<int> order(k);
  for (int l = 0; l < k; ++l) order[l] = l;
  Cut any, splitting;
  size_t any_off = n, split_off = n;
  auto offer = [](Cut* c, size_t* best_off, double sc, size_t off, double t) {
    if (sc > c->score + 1e-12 || (sc > c->score - 1e-12 && off < *best_off)) {
      *c = {t, sc};
      *best_off = off;
    }
  };
  for (size_t i = 1; i < n; ++i) {
    ones[lab[idx[i - 1]]] -= 1.0;
    const double lo = proj[idx[i - 1]], hi = proj[idx[i]];
    if (!(lo < hi)) continue;
    const double sc = SweepScore(ones, total, order);
    const size_t off = i > n / 2 ? i - n / 2 : n / 2 - i;
    const double t = 0.5 * (lo + hi);
    offer(&any, &any_off, sc, off, t);
    for (const auto& [x, y] : unresolved) {
      if ((2 * ones[x] > total[x]) != (2 * ones[y] > total[y])) {
        offer(&splitting, &split_off, sc, off, t);
        break;
      }
    }
  }
  return {any, splitting};
}

// Label pairs whose majority codes over `bits` coincide.
std::vector<std::pair<int, int>> UnresolvedPairs(const std::vector<std::vector<char>>& bits,
                                                 const std::vector<int>& lab, int k) {
  std::vector<std::vector<char>> code(k);
  std::vector<double> total(k, 0.0);
  for (int l : lab) total[l] += 1.0;
  for (const auto& column : bits) {
    std::vector<double> ones(k, 0.0);
    for (size_t i = 0; i < lab.size(); ++i) ones[lab[i]] += column[i];
    for (int l = 0; l < k; ++l) code[l].push_back(2 * ones[l] > total[l]);
  }
  std::vector<std::pair<int, int>> out;
  for (int x = 0; x < k; ++x) {
    for (int y = x + 1; y < k; ++y) {
      if (code[x] == code[y]) out.emplace_back(x, y);
    }
  }
  return out;
}

double Agreement(const std::vector<char>& a, const std::vector<char>& b) {
  size_t same = 0;
  for (size_t i = 0; i < a.size(); ++i) same += (a[i] == b[i]);
  return static_cast<double>(same) / static_cast<double>(a.size());
}

template <typename T>
void WriteLe(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T ReadLe(std::istream& in) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw Error(ErrorCode::kMalformed, "truncated hash function file");
  }
  return v;
}

}  // namespace

BinaryCode::BinaryCode(int width) : width_(width), words_(WordCount(width), 0) {
  if (width <= 0) throw Error(ErrorCode::kInvalidArgument, "code width must be positive");
}

BinaryCode BinaryCode::FromUint(uint64_t value, int width) {
  if (width > 64) throw Error(ErrorCode::kInvalidArgument, "FromUint supports width <= 64");
  BinaryCode c(width);
  c.words_[0] = width == 64 ? value : value & ((uint64_t{1} << width) - 1);
  return c;
}

BinaryCode BinaryCode::FromHex(const std::string& hex, int width) {
  BinaryCode c(width);
  if (hex.size() != static_cast<size_t>((width + 3) / 4)) {
    throw Error(ErrorCode::kMalformed, "hex code '" + hex + "' has wrong length for width " +
                                           std::to_string(width));
  }
  for (size_t i = 0; i < hex.size(); ++i) {
    const char ch = hex[hex.size() - 1 - i];
    int nibble;
    if (ch >= '0' && ch <= '9') {
      nibble = ch - '0';
    } else if (ch >= 'a' && ch <= 'f') {
      nibble = ch - 'a' + 10;
    } else {
      throw Error(ErrorCode::kMalformed, "non-canonical hex code '" + hex + "'");
    }
    for (int j = 0; j < 4; ++j) {
      const int b = static_cast<int>(i) * 4 + j;
      const bool v = (nibble >> j) & 1;
      if (b >= width) {
        if (v) throw Error(ErrorCode::kMalformed, "hex code '" + hex + "' exceeds width");
        continue;
      }
      c.set_bit(b, v);
    }
  }
  return c;
}

void BinaryCode::set_bit(int i, bool v) {
  const uint64_t m = uint64_t{1} << (i % 64);
  if (v) {
    words_[i / 64] |= m;
  } else {
    words_[i / 64] &= ~m;
  }
}

std::string BinaryCode::ToHex() const {
  static constexpr char kDigits[] = "0123456789abcdef";
  const int digits = (width_ + 3) / 4;
  std::string out(digits, '0');
  for (int d = 0; d < digits; ++d) {
    int nibble = 0;
    for (int j = 0; j < 4; ++j) {
      const int b = d * 4 + j;
      if (b < width_ && bit(b)) nibble |= 1 << j;
    }
    out[digits - 1 - d] = kDigits[nibble];
  }
  return out;
}

BinaryCode BinaryCode::operator~() const {
  BinaryCode c(width_);
  for (int i = 0; i < width_; ++i) c.set_bit(i, !bit(i));
  return c;
}

int Hamming(const BinaryCode& a, const BinaryCode& b) {
  if (a.width() != b.width()) {
    throw Error(ErrorCode::kInvalidArgument,
                "width mismatch: " + std::to_string(a.width()) + " vs " +
                    std::to_string(b.width()));
  }
  int d = 0;
  const auto wa = a.words();
  const auto wb = b.words();
  for (size_t i = 0; i < wa.size(); ++i) d += std::popcount(wa[i] ^ wb[i]);
  return d;
}

HashFunction FitHash(std::span<const Embedding> embeddings,
                     std::span<const int> labels, int n_bits, uint64_t seed,
                     const HashFitOptions& options) {
  if (embeddings.empty() || embeddings.size() != labels.size()) {
    throw Error(ErrorCode::kInvalidArgument, "embeddings and labels must be non-empty and aligned");
  }
  // Dense relabelling; label values themselves are arbitrary.
  std::map<int, int> dense;
  for (int l : labels) dense.emplace(l, 0);
  if (dense.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "need at least 2 distinct labels");
  }
  int next = 0;
  for (auto& [l, id] : dense) id = next++;
  const int k = next;
  std::vector<int> lab(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) lab[i] = dense[labels[i]];

  const int needed = static_cast<int>(std::ceil(std::log2(static_cast<double>(k))));
  if (n_bits < std::max(1, needed)) {
    throw Error(ErrorCode::kInvalidArgument,
                "n_bits = " + std::to_string(n_bits) + " cannot separate " +
                    std::to_string(k) + " buckets");
  }
  const size_t dim = embeddings[0].size();
  for (const auto& e : embeddings) {
    if (e.size() != dim) throw Error(ErrorCode::kInvalidArgument, "embedding dimension mismatch");
  }
  if (std::all_of(embeddings.begin(), embeddings.end(),
                  [&](const Embedding& e) { return e == embeddings[0]; })) {
    throw Error(ErrorCode::kDegenerate, "no separating direction: embeddings are identical");
  }

  HashFunction h;
  h.n_bits = n_bits;
  h.dim = static_cast<int>(dim);
  h.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<char>> accepted_bits;
  const size_t n = embeddings.size();

  struct Candidate {
    std::vector<double> dir;
    double threshold = 0.0;
    std::vector<char> bits;
    double score = -1.0;
    bool splits = false;
  };
  // Splitting an unresolved pair outranks score.
  auto better = [](const Candidate& a, const Candidate& b) {
    return a.splits != b.splits ? a.splits : a.score > b.score;
  };

  for (int b = 0; b < n_bits; ++b) {
    const auto unresolved = UnresolvedPairs(accepted_bits, lab, k);
    Candidate best_free, best_any;
    for (int batch = 0; batch < options.max_batches &&
                        (best_free.score < 0 || (!unresolved.empty() && !best_free.splits));
         ++batch) {
      for (int c = 0; c < options.candidates; ++c) {
        Candidate cand;
        cand.dir.resize(dim);
        double norm = 0.0;
        for (double& v : cand.dir) {
          v = gauss(rng);
          norm += v * v;
        }
        norm = std::sqrt(norm);
        for (double& v : cand.dir) v /= norm;
        std::vector<double> proj(n);
        for (size_t i = 0; i < n; ++i) {
          double s = 0.0;
          for (size_t d = 0; d < dim; ++d) s += cand.dir[d] * embeddings[i][d];
          proj[i] = s;
        }
        const auto [any, splitting] = BestCuts(proj, lab, k, unresolved);
        cand.splits = splitting.score >= 0.0;
        cand.threshold = cand.splits ? splitting.threshold : any.threshold;
        cand.bits.resize(n);
        bool any_one = false, any_zero = false;
        for (size_t i = 0; i < n; ++i) {
          cand.bits[i] = proj[i] > cand.threshold;
          any_one |= cand.bits[i] != 0;
          any_zero |= cand.bits[i] == 0;
        }
        cand.score = (any_one && any_zero) ? BestBipartitionScore(cand.bits, lab, k) : 0.0;
        bool redundant = false;
        for (const auto& prev : accepted_bits) {
          if (Agreement(prev, cand.bits) > options.max_agreement) {
            redundant = true;
            break;
          }
        }
        if (better(cand, best_any)) best_any = cand;
        if (!redundant && better(cand, best_free)) best_free = std::move(cand);
      }
    }
    Candidate& chosen = best_free.score >= 0 ? best_free : best_any;
    if (chosen.score <= 0.0) {
      throw Error(ErrorCode::kDegenerate, "no separating direction for bit " + std::to_string(b));
    }
    h.projections.push_back(std::move(chosen.dir));
    h.thresholds.push_back(chosen.threshold);
    accepted_bits.push_back(std::move(chosen.bits));
  }
  return h;
}

BinaryCode Encode(const HashFunction& h, std::span<const double> e) {
  if (e.size() != static_cast<size_t>(h.dim)) {
    throw Error(ErrorCode::kInvalidArgument,
                "dimension mismatch: expected " + std::to_string(h.dim) + ", got " +
                    std::to_string(e.size()));
  }
  BinaryCode code(h.n_bits);
  for (int b = 0; b < h.n_bits; ++b) {
    double s = 0.0;
    const auto& p = h.projections[b];
    for (size_t d = 0; d < e.size(); ++d) s += p[d] * e[d];
    code.set_bit(b, s > h.thresholds[b]);
  }
  return code;
}

CentroidTable::CentroidTable(std::vector<BinaryCode> codes) : codes_(std::move(codes)) {
  for (size_t i = 0; i < codes_.size(); ++i) {
    if (codes_[i].width() != codes_[0].width()) {
      throw Error(ErrorCode::kInvalidArgument, "centroid width mismatch");
    }
    for (size_t j = 0; j < i; ++j) {
      if (codes_[i] == codes_[j]) {
        throw Error(ErrorCode::kCollision,
                    "bucket collision; increase n_bits (buckets " + std::to_string(j) +
                        " and " + std::to_string(i) + " share " + codes_[i].ToHex() + ")");
      }
    }
  }
}

BucketId CentroidTable::Find(const BinaryCode& code) const {
  for (size_t i = 0; i < codes_.size(); ++i) {
    if (codes_[i] == code) return static_cast<BucketId>(i);
  }
  return -1;
}

CentroidTable BucketCentroids(std::span<const BinaryCode> codes,
                              std::span<const int> labels) {
  if (codes.empty() || codes.size() != labels.size()) {
    throw Error(ErrorCode::kInvalidArgument, "codes and labels must be non-empty and aligned");
  }
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  const int width = codes[0].width();
  std::vector<int> members(k, 0);
  std::vector<std::vector<int>> ones(k, std::vector<int>(width, 0));
  for (size_t i = 0; i < codes.size(); ++i) {
    if (labels[i] < 0) throw Error(ErrorCode::kInvalidArgument, "negative bucket label");
    if (codes[i].width() != width) throw Error(ErrorCode::kInvalidArgument, "width mismatch");
    ++members[labels[i]];
    for (int b = 0; b < width; ++b) ones[labels[i]][b] += codes[i].bit(b);
  }
  std::vector<BinaryCode> centroids;
  for (int l = 0; l < k; ++l) {
    if (members[l] == 0) {
      throw Error(ErrorCode::kInvalidArgument, "bucket " + std::to_string(l) + " has no codes");
    }
    BinaryCode c(width);
    for (int b = 0; b < width; ++b) c.set_bit(b, 2 * ones[l][b] > members[l]);
    centroids.push_back(std::move(c));
  }
  return CentroidTable(std::move(centroids));
}

BucketId AssignBucket(const BinaryCode& code, const CentroidTable& table) {
  if (table.empty()) throw Error(ErrorCode::kInvalidArgument, "empty centroid table");
  BucketId best = 0;
  int best_d = std::numeric_limits<int>::max();
  for (int i = 0; i < table.size(); ++i) {
    const int d = Hamming(code, table.code(i));
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

MapResult EvaluateMap(std::span<const BinaryCode> codes,
                      std::span<const int> labels) {
  if (codes.size() < 2 || codes.size() != labels.size()) {
    throw Error(ErrorCode::kInvalidArgument, "need at least 2 aligned items");
  }
  const size_t n = codes.size();
  const int width = codes[0].width();
  std::map<int, int> label_count;
  for (int l : labels) ++label_count[l];

  MapResult result;
  double sum_ap = 0.0;
  // Counting sort by distance keeps insertion order within a distance.
  std::vector<std::vector<size_t>> by_distance(width + 1);
  for (size_t q = 0; q < n; ++q) {
    if (label_count[labels[q]] < 2) {
      ++result.skipped;
      continue;
    }
    for (auto& bucket : by_distance) bucket.clear();
    for (size_t i = 0; i < n; ++i) {
      if (i != q) by_distance[Hamming(codes[q], codes[i])].push_back(i);
    }
    size_t rank = 0, hits = 0;
    double ap = 0.0;
    for (const auto& bucket : by_distance) {
      for (size_t i : bucket) {
        ++rank;
        if (labels[i] == labels[q]) {
          ++hits;
          ap += static_cast<double>(hits) / static_cast<double>(rank);
        }
      }
    }
    sum_ap += ap / static_cast<double>(hits);
    ++result.queries;
  }
  if (result.queries == 0) {
    throw Error(ErrorCode::kDegenerate, "no query has a same-label neighbour");
  }
  result.map = sum_ap / result.queries;
  return result;
}

void SaveHashFunction(const std::filesystem::path& path, const HashFunction& h) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(kHashMagic, 4);
  WriteLe<uint32_t>(out, static_cast<uint32_t>(h.n_bits));
  WriteLe<uint32_t>(out, static_cast<uint32_t>(h.dim));
  for (const auto& p : h.projections) {
    for (double v : p) WriteLe<double>(out, v);
  }
  for (double t : h.thresholds) WriteLe<double>(out, t);
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

HashFunction LoadHashFunction(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kNotFound, "missing file: " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kHashMagic, 4) != 0) {
    throw Error(ErrorCode::kMalformed, "not a hash function file: " + path.string());
  }
  HashFunction h;
  h.n_bits = static_cast<int>(ReadLe<uint32_t>(in));
  h.dim = static_cast<int>(ReadLe<uint32_t>(in));
  if (h.n_bits <= 0 || h.dim <= 0) throw Error(ErrorCode::kMalformed, "zero-sized hash function");
  h.projections.assign(h.n_bits, std::vector<double>(h.dim));
  for (auto& p : h.projections) {
    for (double& v : p) v = ReadLe<double>(in);
  }
  h.thresholds.resize(h.n_bits);
  for (double& t : h.thresholds) t = ReadLe<double>(in);
  return h;
}

void SaveCentroidTable(const std::filesystem::path& path,
                       const CentroidTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (int i = 0; i < table.size(); ++i) out << i << ' ' << table.code(i).ToHex() << '\n';
}

CentroidTable LoadCentroidTable(const std::filesystem::path& path, int n_bits) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kNotFound, "missing file: " + path.string());
  std::vector<BinaryCode> codes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    int id;
    std::string hex;
    if (!(fields >> id >> hex) || id != static_cast<int>(codes.size())) {
      throw Error(ErrorCode::kMalformed, "malformed centroid line: " + line);
    }
    codes.push_back(BinaryCode::FromHex(hex, n_bits));
  }
  return CentroidTable(std::move(codes));
}

}  // namespace resflow
